//! Patch-embedding containers, the synthetic video generator, clip pair
//! sampling, and the binary corpus format.
//!
//! # Corpus file layout
//!
//! Little-endian throughout.
//!
//! | offset | size | field                  |
//! |--------|------|------------------------|
//! | 0      | 4    | magic `"CSEB"`         |
//! | 4      | 4    | format version, u32 = 1|
//! | 8      | 4    | feature dim, u32       |
//! | 12     | 4    | patch rows, u32        |
//! | 16     | 4    | patch cols, u32        |
//! | 20     | 4    | frames per video, u32  |
//! | 24     | 4    | video count, u32       |
//!
//! Then per video: a u64 id followed by `frames * patches * dim` f32 values
//! in frame-major, patch-row-major, feature-minor order. Values are stored as
//! f32 and widened to f64 in memory; the generator quantizes through f32 so a
//! generated corpus survives a round trip bit for bit.

use crate::bytesio::ByteCursor;
use crate::error::{Error, Result};
use crate::numerics::{CovarianceSampler, DenseMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::{Read, Write};
use std::path::Path;

pub const CORPUS_MAGIC: [u8; 4] = *b"CSEB";
pub const CORPUS_VERSION: u32 = 1;

/// One frame's patch embeddings on an `n_h` by `n_w` grid. Row `i` of
/// `values` is the feature vector of patch `i` in row-major grid order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingGrid {
    n_h: usize,
    n_w: usize,
    values: DenseMatrix,
}

impl EmbeddingGrid {
    pub fn new(n_h: usize, n_w: usize, values: DenseMatrix) -> Result<Self> {
        if n_h == 0 || n_w == 0 {
            return Err(Error::Shape(format!(
                "patch grid must be non-empty, got {n_h}x{n_w}"
            )));
        }
        if values.rows() != n_h * n_w {
            return Err(Error::Shape(format!(
                "a {n_h}x{n_w} grid needs {} patch rows, got {}",
                n_h * n_w,
                values.rows()
            )));
        }
        Ok(EmbeddingGrid { n_h, n_w, values })
    }

    pub fn n_h(&self) -> usize {
        self.n_h
    }

    pub fn n_w(&self) -> usize {
        self.n_w
    }

    pub fn n_patches(&self) -> usize {
        self.n_h * self.n_w
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn patch(&self, i: usize) -> &[f64] {
        self.values.row(i)
    }

    pub fn values(&self) -> &DenseMatrix {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut DenseMatrix {
        &mut self.values
    }

    /// Elementwise sum with another grid of the same shape.
    pub fn add(&self, other: &EmbeddingGrid) -> Result<EmbeddingGrid> {
        if self.n_h != other.n_h || self.n_w != other.n_w || self.dim() != other.dim() {
            return Err(Error::Shape(format!(
                "cannot add a {}x{}x{} grid to a {}x{}x{} grid",
                other.n_h,
                other.n_w,
                other.dim(),
                self.n_h,
                self.n_w,
                self.dim()
            )));
        }
        Ok(EmbeddingGrid {
            n_h: self.n_h,
            n_w: self.n_w,
            values: self.values.add(&other.values)?,
        })
    }
}

/// All frames of one video, in temporal order.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoEmbeddingSequence {
    pub video_id: u64,
    frames: Vec<EmbeddingGrid>,
}

impl VideoEmbeddingSequence {
    pub fn new(video_id: u64, frames: Vec<EmbeddingGrid>) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::Shape(format!(
                "a video needs at least two frames, got {}",
                frames.len()
            )));
        }
        let (n_h, n_w, dim) = (frames[0].n_h(), frames[0].n_w(), frames[0].dim());
        for (t, f) in frames.iter().enumerate() {
            if f.n_h() != n_h || f.n_w() != n_w || f.dim() != dim {
                return Err(Error::Shape(format!(
                    "frame {t} has shape {}x{}x{}, expected {n_h}x{n_w}x{dim}",
                    f.n_h(),
                    f.n_w(),
                    f.dim()
                )));
            }
        }
        Ok(VideoEmbeddingSequence { video_id, frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn frame(&self, t: usize) -> &EmbeddingGrid {
        &self.frames[t]
    }

    pub fn frames(&self) -> &[EmbeddingGrid] {
        &self.frames
    }
}

/// Shape summary of a homogeneous corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusShape {
    pub n_h: usize,
    pub n_w: usize,
    pub dim: usize,
    pub frames_per_video: usize,
    pub videos: usize,
}

/// Checks that every video shares one grid shape, feature dimension, and
/// frame count, and returns that shape.
pub fn corpus_shape(corpus: &[VideoEmbeddingSequence]) -> Result<CorpusShape> {
    let first = corpus
        .first()
        .ok_or_else(|| Error::Parameter("corpus contains no videos".into()))?;
    let shape = CorpusShape {
        n_h: first.frame(0).n_h(),
        n_w: first.frame(0).n_w(),
        dim: first.frame(0).dim(),
        frames_per_video: first.len(),
        videos: corpus.len(),
    };
    for (m, video) in corpus.iter().enumerate() {
        let f = video.frame(0);
        if f.n_h() != shape.n_h
            || f.n_w() != shape.n_w
            || f.dim() != shape.dim
            || video.len() != shape.frames_per_video
        {
            return Err(Error::Shape(format!(
                "video {m} has shape {}x{}x{} with {} frames, expected {}x{}x{} with {}",
                f.n_h(),
                f.n_w(),
                f.dim(),
                video.len(),
                shape.n_h,
                shape.n_w,
                shape.dim,
                shape.frames_per_video
            )));
        }
    }
    Ok(shape)
}

/// Parameters of the synthetic corpus generator.
///
/// Each video draws a mean from `N(0, inter_cov)`, each patch of the video a
/// persistent basis from `N(0, inter_cov)`, and every frame adds fresh patch
/// noise from `N(0, intra_cov / 2)`. With that split, the difference between
/// the same patch in two distinct frames has covariance exactly `intra_cov`.
#[derive(Debug, Clone)]
pub struct SyntheticModelSpec {
    pub dim: usize,
    pub n_h: usize,
    pub n_w: usize,
    pub frames_per_video: usize,
    pub videos: usize,
    /// Covariance of same-patch, cross-frame differences.
    pub intra_cov: DenseMatrix,
    /// Covariance of video means and of per-patch bases.
    pub inter_cov: DenseMatrix,
    pub seed: u64,
}

impl SyntheticModelSpec {
    fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.n_h == 0 || self.n_w == 0 {
            return Err(Error::Parameter(format!(
                "generator dimensions must be positive, got dim={} grid={}x{}",
                self.dim, self.n_h, self.n_w
            )));
        }
        if self.frames_per_video < 2 {
            return Err(Error::Parameter(format!(
                "generator needs at least two frames per video, got {}",
                self.frames_per_video
            )));
        }
        if self.videos == 0 {
            return Err(Error::Parameter("generator needs at least one video".into()));
        }
        for (name, cov) in [("intra_cov", &self.intra_cov), ("inter_cov", &self.inter_cov)] {
            if cov.rows() != self.dim || cov.cols() != self.dim {
                return Err(Error::Shape(format!(
                    "{name} is {}x{}, expected {}x{}",
                    cov.rows(),
                    cov.cols(),
                    self.dim,
                    self.dim
                )));
            }
        }
        Ok(())
    }
}

/// Draws a synthetic corpus. Deterministic in `spec.seed`; every value is
/// quantized through f32 so the in-memory corpus equals its on-disk round
/// trip exactly.
pub fn generate_corpus(spec: &SyntheticModelSpec) -> Result<Vec<VideoEmbeddingSequence>> {
    spec.validate()?;
    let inter = CovarianceSampler::new(&spec.inter_cov)?;
    let noise = CovarianceSampler::new(&spec.intra_cov.scaled(0.5))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_h * spec.n_w;
    let mut corpus = Vec::with_capacity(spec.videos);
    for m in 0..spec.videos {
        let center = inter.sample(&mut rng);
        let bases: Vec<Vec<f64>> = (0..n).map(|_| inter.sample(&mut rng)).collect();
        let mut frames = Vec::with_capacity(spec.frames_per_video);
        for _t in 0..spec.frames_per_video {
            let mut values = DenseMatrix::zeros(n, spec.dim);
            for (i, basis) in bases.iter().enumerate() {
                let eps = noise.sample(&mut rng);
                let row = values.row_mut(i);
                for j in 0..spec.dim {
                    row[j] = ((center[j] + basis[j] + eps[j]) as f32) as f64;
                }
            }
            frames.push(EmbeddingGrid::new(spec.n_h, spec.n_w, values)?);
        }
        corpus.push(VideoEmbeddingSequence::new(m as u64, frames)?);
    }
    Ok(corpus)
}

/// Closed-form covariance of the difference between two independent videos'
/// mean embeddings under the generator model:
/// `2 * (1 + 1/N) * inter_cov + intra_cov / (N * T)`.
pub fn video_mean_difference_covariance(spec: &SyntheticModelSpec) -> Result<DenseMatrix> {
    spec.validate()?;
    let n = (spec.n_h * spec.n_w) as f64;
    let t = spec.frames_per_video as f64;
    let mut out = spec.inter_cov.scaled(2.0 * (1.0 + 1.0 / n));
    out.add_assign_scaled(&spec.intra_cov, 1.0 / (n * t))?;
    Ok(out)
}

/// A sampled palindrome clip: the forward and backward endpoints are the same
/// frame `t1`, the intermediate frame is `t2 = t1 + k`.
#[derive(Debug, Clone, Copy)]
pub struct ClipSample<'a> {
    pub forward: &'a EmbeddingGrid,
    pub intermediate: &'a EmbeddingGrid,
    pub backward: &'a EmbeddingGrid,
    pub t1: usize,
    pub t2: usize,
}

/// Temporal gap for a `frames`-long video at gap fraction `delta`:
/// `clamp(max(1, round(delta * frames)), 1, frames - 1)`.
pub fn temporal_gap(frames: usize, delta: f64) -> Result<usize> {
    if !(delta.is_finite() && delta > 0.0 && delta < 1.0) {
        return Err(Error::Parameter(format!(
            "clip gap fraction must lie in (0, 1), got {delta}"
        )));
    }
    if frames < 2 {
        return Err(Error::Parameter(format!(
            "temporal gap needs at least two frames, got {frames}"
        )));
    }
    Ok(((delta * frames as f64).round() as usize).max(1).min(frames - 1))
}

/// Picks a frame pair with the [`temporal_gap`] of the video and `t1` uniform
/// over the valid starts `0..T-k`.
pub fn sample_pair<'a, R: Rng + ?Sized>(
    video: &'a VideoEmbeddingSequence,
    delta: f64,
    rng: &mut R,
) -> Result<ClipSample<'a>> {
    let t = video.len();
    let k = temporal_gap(t, delta)?;
    let t1 = rng.random_range(0..t - k);
    let t2 = t1 + k;
    Ok(ClipSample {
        forward: video.frame(t1),
        intermediate: video.frame(t2),
        backward: video.frame(t1),
        t1,
        t2,
    })
}

// ---------------------------------------------------------------------------
// Binary corpus format
// ---------------------------------------------------------------------------

fn header_field(cursor: &mut ByteCursor, what: &str, minimum: u32) -> Result<u32> {
    let offset = cursor.offset();
    let v = cursor.u32(what)?;
    if v < minimum {
        return Err(Error::format_at(
            offset,
            format!("{what} must be at least {minimum}, got {v}"),
        ));
    }
    Ok(v)
}

/// Serializes a corpus into the documented byte layout.
pub fn encode_corpus(corpus: &[VideoEmbeddingSequence]) -> Result<Vec<u8>> {
    let shape = corpus_shape(corpus)?;
    for field in [shape.dim, shape.n_h, shape.n_w, shape.frames_per_video, shape.videos] {
        if field > u32::MAX as usize {
            return Err(Error::Parameter(format!(
                "corpus dimension {field} does not fit the file format"
            )));
        }
    }
    let n = shape.n_h * shape.n_w;
    let payload = shape.videos * (8 + shape.frames_per_video * n * shape.dim * 4);
    let mut out = Vec::with_capacity(28 + payload);
    out.extend_from_slice(&CORPUS_MAGIC);
    out.extend_from_slice(&CORPUS_VERSION.to_le_bytes());
    for field in [shape.dim, shape.n_h, shape.n_w, shape.frames_per_video, shape.videos] {
        out.extend_from_slice(&(field as u32).to_le_bytes());
    }
    for video in corpus {
        out.extend_from_slice(&video.video_id.to_le_bytes());
        for frame in video.frames() {
            for v in frame.values().data() {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

/// Parses the documented byte layout back into a corpus. Strict: bad magic,
/// version, shape fields, non-finite values, truncation, and trailing bytes
/// are all format errors carrying the byte offset of the problem.
pub fn decode_corpus(bytes: &[u8]) -> Result<Vec<VideoEmbeddingSequence>> {
    let mut cursor = ByteCursor::new(bytes);
    let magic = cursor.take(4, "magic")?;
    if magic != CORPUS_MAGIC {
        return Err(Error::format_at(
            0,
            format!("bad magic {magic:?}, expected {CORPUS_MAGIC:?}"),
        ));
    }
    let version_offset = cursor.offset();
    let version = cursor.u32("format version")?;
    if version != CORPUS_VERSION {
        return Err(Error::format_at(
            version_offset,
            format!("unsupported format version {version}, expected {CORPUS_VERSION}"),
        ));
    }
    let dim = header_field(&mut cursor, "feature dim", 1)? as usize;
    let n_h = header_field(&mut cursor, "patch rows", 1)? as usize;
    let n_w = header_field(&mut cursor, "patch cols", 1)? as usize;
    let frames = header_field(&mut cursor, "frames per video", 2)? as usize;
    let videos = header_field(&mut cursor, "video count", 1)? as usize;

    let n = n_h
        .checked_mul(n_w)
        .ok_or_else(|| Error::format_at(12, "patch grid size overflows".to_string()))?;
    let mut corpus = Vec::with_capacity(videos);
    for _m in 0..videos {
        let video_id = cursor.u64("video id")?;
        let mut grids = Vec::with_capacity(frames);
        for _t in 0..frames {
            let mut values = DenseMatrix::zeros(n, dim);
            for i in 0..n {
                let row = values.row_mut(i);
                for j in 0..dim {
                    let offset = cursor.offset();
                    let v = cursor.f32("embedding value")?;
                    if !v.is_finite() {
                        return Err(Error::format_at(
                            offset,
                            format!("non-finite embedding value {v}"),
                        ));
                    }
                    row[j] = v as f64;
                }
            }
            grids.push(EmbeddingGrid::new(n_h, n_w, values)?);
        }
        corpus.push(VideoEmbeddingSequence::new(video_id, grids)?);
    }
    cursor.expect_end()?;
    Ok(corpus)
}

pub fn write_corpus<P: AsRef<Path>>(path: P, corpus: &[VideoEmbeddingSequence]) -> Result<()> {
    let bytes = encode_corpus(corpus)?;
    let mut file = std::fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

pub fn read_corpus<P: AsRef<Path>>(path: P) -> Result<Vec<VideoEmbeddingSequence>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_corpus(&bytes)
}
