//! Trade-off metrics: normalized inter- and intra-video distances, the
//! distance margin, and cycle-consistency accuracy.
//!
//! All metrics run on representations, meaning the head's output under
//! LayerNorm when a head is supplied, or the raw embeddings when not.
//! Positional encodings are a training-time device and are never added at
//! evaluation time.

use crate::data::{corpus_shape, temporal_gap, VideoEmbeddingSequence};
use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;
use crate::objective::CorrelationPair;
use crate::projection::{project_rows, NormMode, ProjectionParams};
use serde::Serialize;

/// Default scale factor balancing intra- against inter-video distance in the
/// margin. The rounded mean of [`REFERENCE_GAMMA_VALUES`].
pub const DEFAULT_GAMMA: f64 = 0.3;

/// The full metric set of one evaluation pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TradeoffMetrics {
    /// Mean pairwise distance between video representatives, unnormalized.
    pub d_inter_ori: f64,
    /// Largest distance of any representative from the global center.
    pub r_inter: f64,
    /// `d_inter_ori / (2 r_inter)`.
    pub d_inter: f64,
    /// Mean over videos of the per-video mean frame-pair distance.
    pub d_intra_ori: f64,
    /// Mean over videos of the radius-normalized frame-pair distance.
    pub d_intra: f64,
    /// Scale factor used in the margin.
    pub gamma: f64,
    /// `d_inter - gamma * d_intra`.
    pub margin: f64,
    /// Fraction of patches returning to their own index after a round trip.
    pub cyc_acc: f64,
}

/// Collapsed-geometry indicators. A degenerate radius makes the
/// corresponding normalized distance zero by convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DegenerateFlags {
    /// All video representatives coincide with the global center.
    pub inter_degenerate: bool,
    /// Number of videos whose frames all coincide with their mean.
    pub intra_degenerate_videos: usize,
}

/// Evaluation-time knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    /// Temporal gap fraction selecting the frame-pair set.
    pub delta: f64,
    /// Softmax temperature of the correlation matrices behind `cyc_acc`.
    pub temperature: f64,
    /// Margin scale factor.
    pub gamma: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { delta: 0.15, temperature: 0.03, gamma: DEFAULT_GAMMA }
    }
}

impl EvalOptions {
    fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::Parameter(format!(
                "margin scale factor must be non-negative and finite, got {}",
                self.gamma
            )));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::Parameter(format!(
                "correlation temperature must be positive and finite, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// One reference measurement: normalized distances and the published margin.
#[derive(Debug, Clone, Copy)]
pub struct MarginFixture {
    pub name: &'static str,
    pub d_inter: f64,
    pub d_intra: f64,
    pub margin: f64,
}

/// Reference trade-off measurements of frozen encoders on a thousand-video
/// evaluation set: three video-pretrained baselines followed by eight
/// image-pretrained models, each before and after cycle-consistency
/// transfer. Fixtures for the margin identity at the default scale factor.
pub const REFERENCE_MARGIN_TABLE: [MarginFixture; 19] = [
    MarginFixture { name: "siammae", d_inter: 0.5067, d_intra: 0.1330, margin: 0.4668 },
    MarginFixture { name: "cropmae", d_inter: 0.5216, d_intra: 0.1736, margin: 0.4695 },
    MarginFixture { name: "rsp", d_inter: 0.4662, d_intra: 0.2130, margin: 0.4023 },
    MarginFixture { name: "mae", d_inter: 0.3122, d_intra: 0.1131, margin: 0.2783 },
    MarginFixture { name: "mae_transferred", d_inter: 0.5073, d_intra: 0.1834, margin: 0.4523 },
    MarginFixture { name: "ijepa", d_inter: 0.2572, d_intra: 0.1425, margin: 0.2145 },
    MarginFixture { name: "ijepa_transferred", d_inter: 0.5904, d_intra: 0.1745, margin: 0.5380 },
    MarginFixture { name: "clip", d_inter: 0.5603, d_intra: 0.2186, margin: 0.4947 },
    MarginFixture { name: "clip_transferred", d_inter: 0.6162, d_intra: 0.2626, margin: 0.5374 },
    MarginFixture { name: "blip", d_inter: 0.5858, d_intra: 0.1598, margin: 0.5378 },
    MarginFixture { name: "blip_transferred", d_inter: 0.6102, d_intra: 0.2457, margin: 0.5365 },
    MarginFixture { name: "mocov3", d_inter: 0.5547, d_intra: 0.2164, margin: 0.4898 },
    MarginFixture { name: "mocov3_transferred", d_inter: 0.5503, d_intra: 0.1909, margin: 0.4930 },
    MarginFixture { name: "ibot", d_inter: 0.6143, d_intra: 0.1862, margin: 0.5584 },
    MarginFixture { name: "ibot_transferred", d_inter: 0.6399, d_intra: 0.2092, margin: 0.5772 },
    MarginFixture { name: "dino", d_inter: 0.5756, d_intra: 0.2144, margin: 0.5112 },
    MarginFixture { name: "dino_transferred", d_inter: 0.6246, d_intra: 0.2316, margin: 0.5551 },
    MarginFixture { name: "dinov2", d_inter: 0.5926, d_intra: 0.1808, margin: 0.5384 },
    MarginFixture { name: "dinov2_transferred", d_inter: 0.6373, d_intra: 0.1976, margin: 0.5780 },
];

/// Per-encoder ratios of unnormalized intra- to inter-video distance, in the
/// row order of the image-pretrained half of [`REFERENCE_MARGIN_TABLE`].
/// Their mean, 0.3021, motivates [`DEFAULT_GAMMA`].
pub const REFERENCE_GAMMA_VALUES: [f64; 16] = [
    0.1855, 0.3289, 0.2283, 0.2645, 0.3365, 0.3876, 0.2489, 0.3737,
    0.3321, 0.3053, 0.2817, 0.3084, 0.3378, 0.3505, 0.2730, 0.2916,
];

/// Frame distance: the mean over patches of the per-patch Euclidean
/// distance, `(1/N) sum_i ||a(i) - b(i)||`.
fn frame_distance(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    let n = a.rows();
    let mut acc = 0.0;
    for i in 0..n {
        let mut sq = 0.0;
        for (x, y) in a.row(i).iter().zip(b.row(i).iter()) {
            let diff = x - y;
            sq += diff * diff;
        }
        acc += sq.sqrt();
    }
    acc / n as f64
}

/// Applies the representation convention: head output under LayerNorm when a
/// head is given, raw embeddings otherwise.
fn representations(
    corpus: &[VideoEmbeddingSequence],
    projection: Option<&ProjectionParams>,
) -> Result<Vec<Vec<DenseMatrix>>> {
    corpus
        .iter()
        .map(|video| {
            video
                .frames()
                .iter()
                .map(|frame| match projection {
                    None => Ok(frame.values().clone()),
                    Some(p) => Ok(project_rows(p, frame.values(), NormMode::LayerNorm)?.0),
                })
                .collect()
        })
        .collect()
}

/// Inter-video distance statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterVideoDistance {
    pub ori: f64,
    pub radius: f64,
    pub normalized: f64,
    pub degenerate: bool,
}

fn inter_from_reps(reps: &[Vec<DenseMatrix>]) -> Result<InterVideoDistance> {
    let m = reps.len();
    if m < 2 {
        return Err(Error::Parameter(format!(
            "inter-video distance needs at least two videos, got {m}"
        )));
    }
    let mid = reps[0].len() / 2;
    let mids: Vec<&DenseMatrix> = reps.iter().map(|v| &v[mid]).collect();

    let mut ori = 0.0;
    for u in 0..m {
        for v in (u + 1)..m {
            ori += frame_distance(mids[u], mids[v]);
        }
    }
    ori /= (m * (m - 1) / 2) as f64;

    let mut center = DenseMatrix::zeros(mids[0].rows(), mids[0].cols());
    for rep in &mids {
        center.add_assign_scaled(rep, 1.0 / m as f64)?;
    }
    let radius = mids
        .iter()
        .map(|rep| frame_distance(rep, &center))
        .fold(0.0_f64, f64::max);

    let degenerate = radius == 0.0;
    let normalized = if degenerate { 0.0 } else { ori / (2.0 * radius) };
    Ok(InterVideoDistance { ori, radius, normalized, degenerate })
}

/// Unnormalized and normalized inter-video distance of a corpus. Each
/// video is represented by its middle frame.
pub fn inter_video_distance(
    corpus: &[VideoEmbeddingSequence],
    projection: Option<&ProjectionParams>,
) -> Result<InterVideoDistance> {
    corpus_shape(corpus)?;
    inter_from_reps(&representations(corpus, projection)?)
}

/// Intra-video distance statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntraVideoDistance {
    pub ori: f64,
    pub normalized: f64,
    pub degenerate_videos: usize,
}

/// Frames that participate in the gap-`k` pair set of a `t`-frame video.
fn used_frames(t: usize, k: usize) -> impl Iterator<Item = usize> {
    (0..t).filter(move |&f| f < t - k || f >= k)
}

fn intra_from_reps(reps: &[Vec<DenseMatrix>], k: usize) -> Result<IntraVideoDistance> {
    let mut ori_sum = 0.0;
    let mut norm_sum = 0.0;
    let mut degenerate_videos = 0;
    for video in reps {
        let t = video.len();
        let pairs = t - k;
        let mut ori = 0.0;
        for a in 0..pairs {
            ori += frame_distance(&video[a], &video[a + k]);
        }
        ori /= pairs as f64;

        let used: Vec<usize> = used_frames(t, k).collect();
        let mut mean = DenseMatrix::zeros(video[0].rows(), video[0].cols());
        for &f in &used {
            mean.add_assign_scaled(&video[f], 1.0 / used.len() as f64)?;
        }
        let radius = used
            .iter()
            .map(|&f| frame_distance(&video[f], &mean))
            .fold(0.0_f64, f64::max);

        ori_sum += ori;
        if radius == 0.0 {
            degenerate_videos += 1;
        } else {
            norm_sum += ori / (2.0 * radius);
        }
    }
    let m = reps.len() as f64;
    Ok(IntraVideoDistance {
        ori: ori_sum / m,
        normalized: norm_sum / m,
        degenerate_videos,
    })
}

/// Unnormalized and radius-normalized intra-video distance over the
/// deterministic gap-pair set `(t, t + k)` for all valid starts.
pub fn intra_video_distance(
    corpus: &[VideoEmbeddingSequence],
    delta: f64,
    projection: Option<&ProjectionParams>,
) -> Result<IntraVideoDistance> {
    let shape = corpus_shape(corpus)?;
    let k = temporal_gap(shape.frames_per_video, delta)?;
    intra_from_reps(&representations(corpus, projection)?, k)
}

/// Ratio of mean unnormalized intra-video distance to mean unnormalized
/// inter-video distance across encoders.
pub fn scale_factor_gamma(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Parameter("scale factor needs at least one distance pair".into()));
    }
    let intra: f64 = pairs.iter().map(|p| p.0).sum();
    let inter: f64 = pairs.iter().map(|p| p.1).sum();
    if inter == 0.0 {
        return Err(Error::Parameter(
            "scale factor is undefined for zero mean inter-video distance".into(),
        ));
    }
    Ok(intra / inter)
}

/// Distance margin `d_inter - gamma * d_intra`.
pub fn margin(d_inter: f64, d_intra: f64, gamma: f64) -> f64 {
    d_inter - gamma * d_intra
}

/// Fraction of patches whose round trip lands back on their own index:
/// rows of `forward * backward` whose largest entry sits on the diagonal.
/// Ties resolve to the smallest index.
pub fn cycle_accuracy(pair: &CorrelationPair) -> Result<f64> {
    let product = pair.forward.matmul(&pair.backward)?;
    let n = product.rows();
    let mut hits = 0;
    for i in 0..n {
        let row = product.row(i);
        let mut best = 0;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        if best == i {
            hits += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}

fn cyc_acc_from_reps(reps: &[Vec<DenseMatrix>], k: usize, temperature: f64) -> Result<f64> {
    let mut total = 0.0;
    for video in reps {
        let t = video.len();
        let pairs = t - k;
        let mut acc = 0.0;
        for a in 0..pairs {
            let pair =
                CorrelationPair::from_projections(&video[a], &video[a + k], &video[a], temperature)?;
            acc += cycle_accuracy(&pair)?;
        }
        total += acc / pairs as f64;
    }
    Ok(total / reps.len() as f64)
}

/// Computes every trade-off metric in one pass over the corpus, projecting
/// each frame exactly once.
pub fn evaluate_tradeoff(
    corpus: &[VideoEmbeddingSequence],
    projection: Option<&ProjectionParams>,
    opts: &EvalOptions,
) -> Result<(TradeoffMetrics, DegenerateFlags)> {
    opts.validate()?;
    let shape = corpus_shape(corpus)?;
    if shape.videos < 2 {
        return Err(Error::Parameter(format!(
            "trade-off evaluation needs at least two videos, got {}",
            shape.videos
        )));
    }
    let k = temporal_gap(shape.frames_per_video, opts.delta)?;
    let reps = representations(corpus, projection)?;
    let inter = inter_from_reps(&reps)?;
    let intra = intra_from_reps(&reps, k)?;
    let cyc_acc = cyc_acc_from_reps(&reps, k, opts.temperature)?;
    let metrics = TradeoffMetrics {
        d_inter_ori: inter.ori,
        r_inter: inter.radius,
        d_inter: inter.normalized,
        d_intra_ori: intra.ori,
        d_intra: intra.normalized,
        gamma: opts.gamma,
        margin: margin(inter.normalized, intra.normalized, opts.gamma),
        cyc_acc,
    };
    let flags = DegenerateFlags {
        inter_degenerate: inter.degenerate,
        intra_degenerate_videos: intra.degenerate_videos,
    };
    Ok((metrics, flags))
}
