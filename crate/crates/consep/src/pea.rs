//! Positional-encoding augmentation (PEA) and the shortcut probe.
//!
//! The cycle objective can be satisfied without looking at content: when the
//! forward and backward frames carry identical positional encodings, matching
//! position to position closes every cycle. PEA breaks that shortcut by
//! handing the backward frame a resampled-and-cropped encoding grid, so the
//! only signal that survives the round trip is content.
//!
//! # Encoding grid file layout
//!
//! Little-endian throughout.
//!
//! | offset | size | field            |
//! |--------|------|------------------|
//! | 0      | 4    | magic `"CSPG"`   |
//! | 4      | 4    | patch rows, u32  |
//! | 8      | 4    | patch cols, u32  |
//! | 12     | 4    | feature dim, u32 |
//! | 16     | ...  | f32 values       |
//!
//! Values follow in patch-row-major, feature-minor order.

use crate::bytesio::ByteCursor;
use crate::data::EmbeddingGrid;
use crate::error::{Error, Result};
use crate::metrics::cycle_accuracy;
use crate::numerics::DenseMatrix;
use crate::objective::{cycle_loss, correlation_backward, CorrelationPair};
use crate::projection::{init_linear, project_backward, project_rows, NormMode};
use crate::trainer::{adamw_step, AdamHyper, OptimizerState};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

pub const GRID_MAGIC: [u8; 4] = *b"CSPG";

/// A positional-encoding table over an `n_h` by `n_w` patch grid. Same
/// layout as an embedding grid; kept distinct because it is added to
/// embeddings, not projected itself.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionalGrid {
    n_h: usize,
    n_w: usize,
    values: DenseMatrix,
}

impl PositionalGrid {
    pub fn new(n_h: usize, n_w: usize, values: DenseMatrix) -> Result<Self> {
        if n_h == 0 || n_w == 0 {
            return Err(Error::Shape(format!(
                "encoding grid must be non-empty, got {n_h}x{n_w}"
            )));
        }
        if values.rows() != n_h * n_w {
            return Err(Error::Shape(format!(
                "a {n_h}x{n_w} encoding grid needs {} rows, got {}",
                n_h * n_w,
                values.rows()
            )));
        }
        Ok(PositionalGrid { n_h, n_w, values })
    }

    pub fn n_h(&self) -> usize {
        self.n_h
    }

    pub fn n_w(&self) -> usize {
        self.n_w
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &DenseMatrix {
        &self.values
    }

    #[inline]
    fn at(&self, r: usize, c: usize) -> &[f64] {
        self.values.row(r * self.n_w + c)
    }

    /// Adds the encoding to an embedding grid of the same shape.
    pub fn apply_to(&self, grid: &EmbeddingGrid) -> Result<EmbeddingGrid> {
        if grid.n_h() != self.n_h || grid.n_w() != self.n_w || grid.dim() != self.dim() {
            return Err(Error::Shape(format!(
                "encoding grid {}x{}x{} cannot be applied to embeddings {}x{}x{}",
                self.n_h,
                self.n_w,
                self.dim(),
                grid.n_h(),
                grid.n_w(),
                grid.dim()
            )));
        }
        EmbeddingGrid::new(self.n_h, self.n_w, grid.values().add(&self.values)?)
    }
}

/// Standard two-dimensional sinusoidal encoding.
///
/// The first half of each feature vector encodes the patch row, the second
/// half the patch column. Within a half of size `h`, feature `2k` is
/// `sin(pos * w_k)` and feature `2k+1` is `cos(pos * w_k)` with
/// `w_k = 10000^(-2k/h)`. Requires an even dimension of at least four so both
/// halves hold at least one sine and cosine pair.
pub fn sinusoidal_grid(n_h: usize, n_w: usize, dim: usize) -> Result<PositionalGrid> {
    if n_h == 0 || n_w == 0 {
        return Err(Error::Parameter(format!(
            "encoding grid must be non-empty, got {n_h}x{n_w}"
        )));
    }
    if dim < 4 || dim % 2 != 0 {
        return Err(Error::Parameter(format!(
            "sinusoidal encoding needs an even dimension of at least 4, got {dim}"
        )));
    }
    let half = dim / 2;
    let mut values = DenseMatrix::zeros(n_h * n_w, dim);
    for r in 0..n_h {
        for c in 0..n_w {
            let row = values.row_mut(r * n_w + c);
            for (offset, pos) in [(0, r as f64), (half, c as f64)] {
                for j in 0..half {
                    let k = (j / 2) as f64;
                    let omega = 10000.0_f64.powf(-2.0 * k / half as f64);
                    row[offset + j] = if j % 2 == 0 {
                        (pos * omega).sin()
                    } else {
                        (pos * omega).cos()
                    };
                }
            }
        }
    }
    PositionalGrid::new(n_h, n_w, values)
}

/// Resample-and-crop augmentation of an encoding grid.
///
/// The grid is bilinearly resampled (corner-aligned) to
/// `ceil((1 + alpha) * side)` per side and a window of the original shape is
/// cropped at a uniformly random offset, vertical drawn before horizontal.
/// With `alpha = 0` the input is returned unchanged.
pub fn pea_augment<R: Rng + ?Sized>(
    grid: &PositionalGrid,
    alpha: f64,
    rng: &mut R,
) -> Result<PositionalGrid> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::Parameter(format!(
            "augmentation strength must be non-negative and finite, got {alpha}"
        )));
    }
    let (n_h, n_w, dim) = (grid.n_h, grid.n_w, grid.dim());
    let th = ((1.0 + alpha) * n_h as f64).ceil() as usize;
    let tw = ((1.0 + alpha) * n_w as f64).ceil() as usize;
    if th == n_h && tw == n_w {
        return Ok(grid.clone());
    }

    // Corner-aligned source coordinates per target index, factored into
    // (floor index, ceil index, fractional weight).
    let axis_weights = |target: usize, source: usize| -> Vec<(usize, usize, f64)> {
        (0..target)
            .map(|i| {
                if target == 1 || source == 1 {
                    return (0, 0, 0.0);
                }
                let src = i as f64 * (source - 1) as f64 / (target - 1) as f64;
                let lo = (src.floor() as usize).min(source - 1);
                let hi = (lo + 1).min(source - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let rows = axis_weights(th, n_h);
    let cols = axis_weights(tw, n_w);

    let oy = rng.random_range(0..=th - n_h);
    let ox = rng.random_range(0..=tw - n_w);

    let mut values = DenseMatrix::zeros(n_h * n_w, dim);
    for i in 0..n_h {
        let (r0, r1, wy) = rows[oy + i];
        for j in 0..n_w {
            let (c0, c1, wx) = cols[ox + j];
            let p00 = grid.at(r0, c0);
            let p01 = grid.at(r0, c1);
            let p10 = grid.at(r1, c0);
            let p11 = grid.at(r1, c1);
            let out = values.row_mut(i * n_w + j);
            for f in 0..dim {
                let top = (1.0 - wx) * p00[f] + wx * p01[f];
                let bottom = (1.0 - wx) * p10[f] + wx * p11[f];
                out[f] = (1.0 - wy) * top + wy * bottom;
            }
        }
    }
    PositionalGrid::new(n_h, n_w, values)
}

// ---------------------------------------------------------------------------
// Encoding grid file format
// ---------------------------------------------------------------------------

pub fn encode_grid(grid: &PositionalGrid) -> Result<Vec<u8>> {
    for field in [grid.n_h, grid.n_w, grid.dim()] {
        if field > u32::MAX as usize {
            return Err(Error::Parameter(format!(
                "grid dimension {field} does not fit the file format"
            )));
        }
    }
    let mut out = Vec::with_capacity(16 + grid.values.data().len() * 4);
    out.extend_from_slice(&GRID_MAGIC);
    for field in [grid.n_h, grid.n_w, grid.dim()] {
        out.extend_from_slice(&(field as u32).to_le_bytes());
    }
    for v in grid.values.data() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_grid(bytes: &[u8]) -> Result<PositionalGrid> {
    let mut cursor = ByteCursor::new(bytes);
    let magic = cursor.take(4, "magic")?;
    if magic != GRID_MAGIC {
        return Err(Error::format_at(
            0,
            format!("bad magic {magic:?}, expected {GRID_MAGIC:?}"),
        ));
    }
    let mut fields = [0usize; 3];
    for (field, name) in fields.iter_mut().zip(["patch rows", "patch cols", "feature dim"]) {
        let offset = cursor.offset();
        let v = cursor.u32(name)?;
        if v == 0 {
            return Err(Error::format_at(offset, format!("{name} must be positive")));
        }
        *field = v as usize;
    }
    let [n_h, n_w, dim] = fields;
    let n = n_h
        .checked_mul(n_w)
        .ok_or_else(|| Error::format_at(4, "patch grid size overflows".to_string()))?;
    let mut values = DenseMatrix::zeros(n, dim);
    for v in values.data_mut() {
        let offset = cursor.offset();
        let x = cursor.f32("encoding value")?;
        if !x.is_finite() {
            return Err(Error::format_at(offset, format!("non-finite encoding value {x}")));
        }
        *v = x as f64;
    }
    cursor.expect_end()?;
    PositionalGrid::new(n_h, n_w, values)
}

pub fn write_grid<P: AsRef<Path>>(path: P, grid: &PositionalGrid) -> Result<()> {
    let bytes = encode_grid(grid)?;
    let mut file = std::fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

pub fn read_grid<P: AsRef<Path>>(path: P) -> Result<PositionalGrid> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_grid(&bytes)
}

// ---------------------------------------------------------------------------
// Shortcut probe
// ---------------------------------------------------------------------------

/// Temporal relationship between the probe's two content frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeSetting {
    /// The intermediate frame's content is independent of the start frame.
    Irrelevant,
    /// Correlated content, but spatially permuted each step.
    Shuffled,
    /// Correlated content in place.
    Normal,
}

impl ProbeSetting {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProbeSetting::Irrelevant => "irrelevant",
            ProbeSetting::Shuffled => "shuffled",
            ProbeSetting::Normal => "normal",
        }
    }
}

impl std::fmt::Display for ProbeSetting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProbeSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "irrelevant" => Ok(ProbeSetting::Irrelevant),
            "shuffled" => Ok(ProbeSetting::Shuffled),
            "normal" => Ok(ProbeSetting::Normal),
            other => Err(Error::Parameter(format!(
                "unknown probe setting {other:?}, expected irrelevant, shuffled, or normal"
            ))),
        }
    }
}

/// Configuration of the shortcut probe.
#[derive(Debug, Clone)]
pub struct ProbeConfig {
    /// Augmentation strength applied to the backward frame's encoding.
    pub alpha: f64,
    pub temperature: f64,
    pub steps: usize,
    pub learning_rate: f64,
    pub n_h: usize,
    pub n_w: usize,
    pub dim: usize,
    /// Standard deviation of each synthetic content feature.
    pub content_scale: f64,
    /// Correlation between the two frames' content in the normal and
    /// shuffled settings.
    pub temporal_mix: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            alpha: 0.0,
            temperature: 0.03,
            steps: 500,
            learning_rate: 1e-3,
            n_h: 7,
            n_w: 7,
            dim: 64,
            content_scale: 0.35,
            temporal_mix: 0.25,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Parameter("probe needs at least one step".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Parameter(format!(
                "probe learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::Parameter(format!(
                "probe temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::Parameter(format!(
                "probe augmentation strength must be non-negative, got {}",
                self.alpha
            )));
        }
        if !(self.content_scale.is_finite() && self.content_scale >= 0.0) {
            return Err(Error::Parameter(format!(
                "probe content scale must be non-negative, got {}",
                self.content_scale
            )));
        }
        if !(self.temporal_mix.is_finite() && (0.0..=1.0).contains(&self.temporal_mix)) {
            return Err(Error::Parameter(format!(
                "probe temporal mix must lie in [0, 1], got {}",
                self.temporal_mix
            )));
        }
        Ok(())
    }
}

/// Step-by-step record of one probe run. `loss` and `identity_accuracy` hold
/// one entry per step, measured before that step's update, so the first entry
/// reflects the freshly initialized head.
#[derive(Debug, Clone, Serialize)]
pub struct ShortcutProbeReport {
    pub setting: String,
    pub steps: usize,
    pub loss: Vec<f64>,
    pub identity_accuracy: Vec<f64>,
}

/// Trains a linear head on fully synthetic frames with the cycle loss alone
/// and records whether cycles close through patch identity.
///
/// Content is redrawn every step so nothing can be memorized; in the shuffled
/// setting the permutation is also fresh per step. High identity accuracy
/// with uninformative content therefore indicates the positional shortcut,
/// which augmentation is meant to remove.
pub fn shortcut_probe(config: &ProbeConfig, setting: ProbeSetting) -> Result<ShortcutProbeReport> {
    config.validate()?;
    let encoding = sinusoidal_grid(config.n_h, config.n_w, config.dim)?;
    let n = config.n_h * config.n_w;
    let d = config.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut head = init_linear(d, &mut rng);
    let mut opt = OptimizerState::new(head.n_trainable());
    let hyper = AdamHyper {
        lr: config.learning_rate,
        weight_decay: 0.0,
        beta1: 0.9,
        beta2: 0.95,
    };

    let mut loss_curve = Vec::with_capacity(config.steps);
    let mut acc_curve = Vec::with_capacity(config.steps);

    let draw_content = |rng: &mut ChaCha8Rng, scale: f64| -> DenseMatrix {
        DenseMatrix::from_fn(n, d, |_, _| {
            let g: f64 = StandardNormal.sample(rng);
            scale * g
        })
    };

    for step in 0..config.steps {
        let c1 = draw_content(&mut rng, config.content_scale);
        let rho = config.temporal_mix;
        let mut c2 = match setting {
            ProbeSetting::Irrelevant => draw_content(&mut rng, config.content_scale),
            ProbeSetting::Normal | ProbeSetting::Shuffled => {
                let fresh = draw_content(&mut rng, config.content_scale);
                let mut mixed = c1.scaled(rho);
                mixed.add_assign_scaled(&fresh, (1.0 - rho * rho).sqrt())?;
                mixed
            }
        };
        if setting == ProbeSetting::Shuffled {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let mut shuffled = DenseMatrix::zeros(n, d);
            for (dst, &src) in perm.iter().enumerate() {
                shuffled.row_mut(dst).copy_from_slice(c2.row(src));
            }
            c2 = shuffled;
        }
        let augmented = if config.alpha > 0.0 {
            pea_augment(&encoding, config.alpha, &mut rng)?
        } else {
            encoding.clone()
        };

        let x_f = c1.add(encoding.values())?;
        let x_m = c2.add(encoding.values())?;
        let x_b = c1.add(augmented.values())?;

        let (p_f, cache_f) = project_rows(&head, &x_f, NormMode::LayerNorm)?;
        let (p_m, cache_m) = project_rows(&head, &x_m, NormMode::LayerNorm)?;
        let (p_b, cache_b) = project_rows(&head, &x_b, NormMode::LayerNorm)?;

        let pair = CorrelationPair::from_projections(&p_f, &p_m, &p_b, config.temperature)?;
        let cyc = cycle_loss(&pair)?;
        loss_curve.push(cyc.value);
        acc_curve.push(cycle_accuracy(&pair)?);

        let (d_f, d_m1) =
            correlation_backward(&p_f, &p_m, &pair.forward, &cyc.d_forward, config.temperature)?;
        let (mut d_m, d_b) =
            correlation_backward(&p_m, &p_b, &pair.backward, &cyc.d_backward, config.temperature)?;
        d_m.add_assign_scaled(&d_m1, 1.0)?;

        let g_f = project_backward(&head, &cache_f, &d_f)?;
        let g_m = project_backward(&head, &cache_m, &d_m)?;
        let g_b = project_backward(&head, &cache_b, &d_b)?;

        let mut grad = g_f.params;
        grad.add_assign(&g_m.params)?;
        grad.add_assign(&g_b.params)?;
        let flat_grad = grad.to_flat();
        if flat_grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "probe step {step}: gradient became non-finite"
            )));
        }

        let mut flat = head.trainable_flat();
        adamw_step(&mut flat, &flat_grad, &mut opt, &hyper)?;
        head.set_trainable_flat(&flat)?;
    }

    Ok(ShortcutProbeReport {
        setting: setting.as_str().to_string(),
        steps: config.steps,
        loss: loss_curve,
        identity_accuracy: acc_curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn sinusoidal_origin_token_is_alternating_zero_one() {
        let grid = sinusoidal_grid(3, 3, 8).unwrap();
        let origin = grid.at(0, 0);
        assert_eq!(origin, &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn sinusoidal_token_norm_is_half_dimension() {
        let grid = sinusoidal_grid(7, 7, 64).unwrap();
        for r in 0..7 {
            for c in 0..7 {
                let norm_sq: f64 = grid.at(r, c).iter().map(|v| v * v).sum();
                assert_relative_eq!(norm_sq, 32.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn sinusoidal_first_half_row_second_half_column() {
        let grid = sinusoidal_grid(4, 5, 8).unwrap();
        // Same row, different column: first half identical.
        assert_eq!(grid.at(2, 0)[..4], grid.at(2, 3)[..4]);
        // Same column, different row: second half identical.
        assert_eq!(grid.at(0, 2)[4..], grid.at(3, 2)[4..]);
        // Frequencies follow w_k = 10000^(-2k/half).
        let pos = 3.0_f64;
        assert_relative_eq!(grid.at(3, 0)[0], pos.sin(), epsilon = 1e-15);
        assert_relative_eq!(grid.at(3, 0)[1], pos.cos(), epsilon = 1e-15);
        let w1 = 10000.0_f64.powf(-2.0 / 4.0);
        assert_relative_eq!(grid.at(3, 0)[2], (pos * w1).sin(), epsilon = 1e-15);
        assert_relative_eq!(grid.at(3, 0)[3], (pos * w1).cos(), epsilon = 1e-15);
    }

    #[test]
    fn sinusoidal_rejects_odd_or_tiny_dimension() {
        assert!(matches!(sinusoidal_grid(2, 2, 7), Err(Error::Parameter(_))));
        assert!(matches!(sinusoidal_grid(2, 2, 2), Err(Error::Parameter(_))));
        assert!(matches!(sinusoidal_grid(0, 2, 8), Err(Error::Parameter(_))));
    }

    #[test]
    fn augment_with_zero_alpha_is_bit_exact_identity() {
        let grid = sinusoidal_grid(5, 5, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = pea_augment(&grid, 0.0, &mut rng).unwrap();
        assert_eq!(out, grid);
    }

    #[test]
    fn augment_preserves_shape_and_constants() {
        let constant = PositionalGrid::new(4, 6, DenseMatrix::from_fn(24, 8, |_, _| 3.25)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for alpha in [0.1, 0.25, 0.7, 1.5] {
            let out = pea_augment(&constant, alpha, &mut rng).unwrap();
            assert_eq!((out.n_h(), out.n_w(), out.dim()), (4, 6, 8));
            for v in out.values().data() {
                assert_relative_eq!(*v, 3.25, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn augment_of_linear_ramp_matches_coordinate_mapping() {
        // Feature 0 stores the row coordinate, feature 1 the column
        // coordinate. Bilinear resampling reproduces affine functions
        // exactly, so the output must be the corner-aligned source
        // coordinates of the cropped window.
        let (n_h, n_w) = (5, 4);
        let ramp = PositionalGrid::new(
            n_h,
            n_w,
            DenseMatrix::from_fn(n_h * n_w, 2, |t, f| {
                if f == 0 {
                    (t / n_w) as f64
                } else {
                    (t % n_w) as f64
                }
            }),
        )
        .unwrap();
        let alpha = 0.3;
        let th = ((1.0 + alpha) * n_h as f64).ceil() as usize;
        let tw = ((1.0 + alpha) * n_w as f64).ceil() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let out = pea_augment(&ramp, alpha, &mut rng).unwrap();

        // Recover the crop offsets from the first output token; they must be
        // integers in range, and then every token must match the mapping.
        let oy = out.at(0, 0)[0] * (th - 1) as f64 / (n_h - 1) as f64;
        let ox = out.at(0, 0)[1] * (tw - 1) as f64 / (n_w - 1) as f64;
        assert!((oy - oy.round()).abs() < 1e-9, "vertical offset {oy} is not integral");
        assert!((ox - ox.round()).abs() < 1e-9, "horizontal offset {ox} is not integral");
        let oy = oy.round() as usize;
        let ox = ox.round() as usize;
        assert!(oy <= th - n_h);
        assert!(ox <= tw - n_w);
        for i in 0..n_h {
            for j in 0..n_w {
                let want_r = (oy + i) as f64 * (n_h - 1) as f64 / (th - 1) as f64;
                let want_c = (ox + j) as f64 * (n_w - 1) as f64 / (tw - 1) as f64;
                assert_relative_eq!(out.at(i, j)[0], want_r, epsilon = 1e-12);
                assert_relative_eq!(out.at(i, j)[1], want_c, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn augment_preserves_neighborhood_structure() {
        // Distances from the origin token should keep roughly the same
        // ordering after resample-and-crop: rank correlation stays high.
        let grid = sinusoidal_grid(7, 7, 64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = pea_augment(&grid, 0.25, &mut rng).unwrap();
        let dist = |g: &PositionalGrid| -> Vec<f64> {
            let base = g.values().row(0).to_vec();
            (1..49)
                .map(|t| {
                    g.values()
                        .row(t)
                        .iter()
                        .zip(base.iter())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect()
        };
        let rho = spearman(&dist(&grid), &dist(&out));
        assert!(rho >= 0.9, "rank correlation {rho} below 0.9");
    }

    fn spearman(a: &[f64], b: &[f64]) -> f64 {
        let rank = |v: &[f64]| -> Vec<f64> {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&i, &j| v[i].partial_cmp(&v[j]).unwrap());
            let mut r = vec![0.0; v.len()];
            for (rank_pos, &i) in idx.iter().enumerate() {
                r[i] = rank_pos as f64;
            }
            r
        };
        let ra = rank(a);
        let rb = rank(b);
        let n = ra.len() as f64;
        let mean = (n - 1.0) / 2.0;
        let mut num = 0.0;
        let mut da = 0.0;
        let mut db = 0.0;
        for (x, y) in ra.iter().zip(rb.iter()) {
            num += (x - mean) * (y - mean);
            da += (x - mean) * (x - mean);
            db += (y - mean) * (y - mean);
        }
        num / (da.sqrt() * db.sqrt())
    }

    #[test]
    fn augment_rejects_bad_alpha() {
        let grid = sinusoidal_grid(3, 3, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for bad in [-0.1, f64::NAN, f64::INFINITY] {
            assert!(matches!(
                pea_augment(&grid, bad, &mut rng),
                Err(Error::Parameter(_))
            ));
        }
    }

    #[test]
    fn grid_file_round_trip_after_quantization() {
        // Values are stored as f32; quantize first so the round trip is exact.
        let grid = sinusoidal_grid(3, 4, 8).unwrap();
        let mut quantized = grid.values().clone();
        for v in quantized.data_mut() {
            *v = (*v as f32) as f64;
        }
        let grid = PositionalGrid::new(3, 4, quantized).unwrap();
        let bytes = encode_grid(&grid).unwrap();
        assert_eq!(bytes.len(), 16 + 12 * 8 * 4);
        assert_eq!(decode_grid(&bytes).unwrap(), grid);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.bin");
        write_grid(&path, &grid).unwrap();
        assert_eq!(read_grid(&path).unwrap(), grid);
    }

    #[test]
    fn grid_decode_rejects_corruption_with_offsets() {
        let grid = sinusoidal_grid(2, 2, 4).unwrap();
        let good = encode_grid(&grid).unwrap();

        let mut bytes = good.clone();
        bytes[0] = b'!';
        match decode_grid(&bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected a format error, got {other:?}"),
        }

        let mut bytes = good.clone();
        bytes[8..12].copy_from_slice(&0u32.to_le_bytes());
        match decode_grid(&bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 8),
            other => panic!("expected a format error, got {other:?}"),
        }

        match decode_grid(&good[..good.len() - 2]) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, good.len() as u64 - 4),
            other => panic!("expected a format error, got {other:?}"),
        }
    }

    #[test]
    fn probe_is_deterministic_and_well_shaped() {
        let config = ProbeConfig {
            steps: 3,
            n_h: 3,
            n_w: 3,
            dim: 8,
            ..ProbeConfig::default()
        };
        let a = shortcut_probe(&config, ProbeSetting::Shuffled).unwrap();
        let b = shortcut_probe(&config, ProbeSetting::Shuffled).unwrap();
        assert_eq!(a.loss, b.loss);
        assert_eq!(a.identity_accuracy, b.identity_accuracy);
        assert_eq!(a.steps, 3);
        assert_eq!(a.loss.len(), 3);
        assert_eq!(a.identity_accuracy.len(), 3);
        assert_eq!(a.setting, "shuffled");
        assert!(a.identity_accuracy.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn probe_settings_differ() {
        let config = ProbeConfig {
            steps: 2,
            n_h: 3,
            n_w: 3,
            dim: 8,
            ..ProbeConfig::default()
        };
        let normal = shortcut_probe(&config, ProbeSetting::Normal).unwrap();
        let irrelevant = shortcut_probe(&config, ProbeSetting::Irrelevant).unwrap();
        assert_ne!(normal.loss, irrelevant.loss);
    }

    #[test]
    fn probe_setting_parses_round_trip() {
        for setting in [ProbeSetting::Irrelevant, ProbeSetting::Shuffled, ProbeSetting::Normal] {
            assert_eq!(setting.as_str().parse::<ProbeSetting>().unwrap(), setting);
        }
        assert!(matches!(
            "sideways".parse::<ProbeSetting>(),
            Err(Error::Parameter(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn augment_keeps_values_in_convex_hull(
            alpha in 0.05f64..1.5,
            seed in 0u64..500,
        ) {
            // Bilinear interpolation never leaves the range of the inputs.
            let grid = sinusoidal_grid(5, 5, 8).unwrap();
            let lo = grid.values().data().iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = grid.values().data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = pea_augment(&grid, alpha, &mut rng).unwrap();
            for &v in out.values().data() {
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }
}
