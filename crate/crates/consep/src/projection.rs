//! The trainable projection head: a linear map or a one-hidden-layer tanh
//! MLP, each followed by an optional LayerNorm. Includes exact reverse-mode
//! gradients, a flat parameter view for the optimizer, and the checkpoint
//! format.
//!
//! # Checkpoint file layout
//!
//! Little-endian throughout.
//!
//! | offset | size | field                            |
//! |--------|------|----------------------------------|
//! | 0      | 4    | magic `"CSPW"`                   |
//! | 4      | 4    | format version, u32 = 1          |
//! | 8      | 1    | variant: 0 linear, 1 MLP         |
//! | 9      | 4    | feature dim, u32                 |
//! | 13     | ...  | f64 payload                      |
//!
//! The payload is `eps_ln`, then the weight matrix row-major (first then
//! second for the MLP), then the LayerNorm gain, then the LayerNorm bias.

use crate::bytesio::ByteCursor;
use crate::error::{Error, Result};
use crate::data::EmbeddingGrid;
use crate::numerics::DenseMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use std::io::{Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CSPW";
pub const CHECKPOINT_VERSION: u32 = 1;
/// LayerNorm variance floor used by the initializers.
pub const DEFAULT_EPS_LN: f64 = 1e-6;
/// Scale of the Gaussian perturbation around identity at initialization.
pub const INIT_NOISE_SCALE: f64 = 0.02;

/// Whether the head applies its final LayerNorm or passes the map's output
/// through unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    LayerNorm,
    Bypass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionVariant {
    Linear,
    Mlp,
}

/// Linear head: `g(z) = LN(W z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProjection {
    pub weight: DenseMatrix,
    pub ln_gain: Vec<f64>,
    pub ln_bias: Vec<f64>,
    pub eps_ln: f64,
}

/// MLP head: `g(z) = LN(W2 tanh(W1 z))`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpProjection {
    pub weight1: DenseMatrix,
    pub weight2: DenseMatrix,
    pub ln_gain: Vec<f64>,
    pub ln_bias: Vec<f64>,
    pub eps_ln: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProjectionParams {
    Linear(LinearProjection),
    Mlp(MlpProjection),
}

impl LinearProjection {
    pub fn new(weight: DenseMatrix, ln_gain: Vec<f64>, ln_bias: Vec<f64>, eps_ln: f64) -> Result<Self> {
        let head = LinearProjection { weight, ln_gain, ln_bias, eps_ln };
        head.validate()?;
        Ok(head)
    }

    fn validate(&self) -> Result<()> {
        let d = self.weight.rows();
        if !self.weight.is_square() {
            return Err(Error::Shape(format!(
                "projection weight must be square, got {}x{}",
                self.weight.rows(),
                self.weight.cols()
            )));
        }
        validate_ln(d, &self.ln_gain, &self.ln_bias, self.eps_ln)
    }
}

impl MlpProjection {
    pub fn new(
        weight1: DenseMatrix,
        weight2: DenseMatrix,
        ln_gain: Vec<f64>,
        ln_bias: Vec<f64>,
        eps_ln: f64,
    ) -> Result<Self> {
        let head = MlpProjection { weight1, weight2, ln_gain, ln_bias, eps_ln };
        head.validate()?;
        Ok(head)
    }

    fn validate(&self) -> Result<()> {
        let d = self.weight1.cols();
        if self.weight1.rows() != d || !self.weight2.is_square() || self.weight2.rows() != d {
            return Err(Error::Shape(format!(
                "MLP weights must both be {d}x{d}, got {}x{} and {}x{}",
                self.weight1.rows(),
                self.weight1.cols(),
                self.weight2.rows(),
                self.weight2.cols()
            )));
        }
        validate_ln(d, &self.ln_gain, &self.ln_bias, self.eps_ln)
    }
}

fn validate_ln(d: usize, gain: &[f64], bias: &[f64], eps: f64) -> Result<()> {
    if gain.len() != d || bias.len() != d {
        return Err(Error::Shape(format!(
            "LayerNorm gain and bias must have length {d}, got {} and {}",
            gain.len(),
            bias.len()
        )));
    }
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::Parameter(format!(
            "LayerNorm epsilon must be positive and finite, got {eps}"
        )));
    }
    Ok(())
}

fn identity_plus_noise<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DenseMatrix {
    DenseMatrix::from_fn(d, d, |i, j| {
        let noise: f64 = StandardNormal.sample(rng);
        let base = if i == j { 1.0 } else { 0.0 };
        base + INIT_NOISE_SCALE * noise
    })
}

/// Fresh linear head: weight near identity, unit gain, zero bias.
pub fn init_linear<R: Rng + ?Sized>(d: usize, rng: &mut R) -> ProjectionParams {
    assert!(d > 0, "feature dimension must be positive");
    ProjectionParams::Linear(LinearProjection {
        weight: identity_plus_noise(d, rng),
        ln_gain: vec![1.0; d],
        ln_bias: vec![0.0; d],
        eps_ln: DEFAULT_EPS_LN,
    })
}

/// Fresh MLP head: both weights near identity, unit gain, zero bias.
pub fn init_mlp<R: Rng + ?Sized>(d: usize, rng: &mut R) -> ProjectionParams {
    assert!(d > 0, "feature dimension must be positive");
    ProjectionParams::Mlp(MlpProjection {
        weight1: identity_plus_noise(d, rng),
        weight2: identity_plus_noise(d, rng),
        ln_gain: vec![1.0; d],
        ln_bias: vec![0.0; d],
        eps_ln: DEFAULT_EPS_LN,
    })
}

impl ProjectionParams {
    pub fn dim(&self) -> usize {
        match self {
            ProjectionParams::Linear(h) => h.weight.rows(),
            ProjectionParams::Mlp(h) => h.weight1.cols(),
        }
    }

    pub fn variant(&self) -> ProjectionVariant {
        match self {
            ProjectionParams::Linear(_) => ProjectionVariant::Linear,
            ProjectionParams::Mlp(_) => ProjectionVariant::Mlp,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            ProjectionParams::Linear(h) => h.validate(),
            ProjectionParams::Mlp(h) => h.validate(),
        }
    }

    /// Number of trainable scalars; `eps_ln` is a constant, not a parameter.
    pub fn n_trainable(&self) -> usize {
        let d = self.dim();
        match self {
            ProjectionParams::Linear(_) => d * d + 2 * d,
            ProjectionParams::Mlp(_) => 2 * d * d + 2 * d,
        }
    }

    /// Trainable parameters as one vector: weights row-major (first then
    /// second for the MLP), then gain, then bias.
    pub fn trainable_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_trainable());
        match self {
            ProjectionParams::Linear(h) => {
                out.extend_from_slice(h.weight.data());
                out.extend_from_slice(&h.ln_gain);
                out.extend_from_slice(&h.ln_bias);
            }
            ProjectionParams::Mlp(h) => {
                out.extend_from_slice(h.weight1.data());
                out.extend_from_slice(h.weight2.data());
                out.extend_from_slice(&h.ln_gain);
                out.extend_from_slice(&h.ln_bias);
            }
        }
        out
    }

    /// Writes a flat vector produced in [`trainable_flat`] order back into
    /// the parameters.
    pub fn set_trainable_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_trainable() {
            return Err(Error::Contract(format!(
                "flat parameter vector has length {}, expected {}",
                flat.len(),
                self.n_trainable()
            )));
        }
        match self {
            ProjectionParams::Linear(h) => {
                let d = h.weight.rows();
                h.weight.data_mut().copy_from_slice(&flat[..d * d]);
                h.ln_gain.copy_from_slice(&flat[d * d..d * d + d]);
                h.ln_bias.copy_from_slice(&flat[d * d + d..]);
            }
            ProjectionParams::Mlp(h) => {
                let d = h.weight1.rows();
                h.weight1.data_mut().copy_from_slice(&flat[..d * d]);
                h.weight2.data_mut().copy_from_slice(&flat[d * d..2 * d * d]);
                h.ln_gain.copy_from_slice(&flat[2 * d * d..2 * d * d + d]);
                h.ln_bias.copy_from_slice(&flat[2 * d * d + d..]);
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        match self {
            ProjectionParams::Linear(h) => {
                h.weight.is_finite()
                    && h.ln_gain.iter().chain(&h.ln_bias).all(|v| v.is_finite())
            }
            ProjectionParams::Mlp(h) => {
                h.weight1.is_finite()
                    && h.weight2.is_finite()
                    && h.ln_gain.iter().chain(&h.ln_bias).all(|v| v.is_finite())
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct LnCache {
    xhat: DenseMatrix,
    inv_std: Vec<f64>,
}

/// Intermediate activations retained by [`project_rows`] for the backward
/// pass. A cache is only valid with the exact parameters and mode that
/// produced it.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    variant: ProjectionVariant,
    mode: NormMode,
    input: DenseMatrix,
    /// tanh activations, MLP only.
    hidden: Option<DenseMatrix>,
    ln: Option<LnCache>,
}

/// Applies the head to each row of `input`. Returns the projected rows and
/// the activation cache for [`project_backward`].
pub fn project_rows(
    params: &ProjectionParams,
    input: &DenseMatrix,
    mode: NormMode,
) -> Result<(DenseMatrix, ForwardCache)> {
    params.validate()?;
    let d = params.dim();
    if input.cols() != d {
        return Err(Error::Shape(format!(
            "input rows have dimension {}, head expects {d}",
            input.cols()
        )));
    }
    if !input.is_finite() {
        return Err(Error::InvalidInput(
            "projection input contains non-finite entries".into(),
        ));
    }

    let (mut pre, hidden, gain, bias, eps) = match params {
        ProjectionParams::Linear(h) => {
            let pre = input.matmul_transpose(&h.weight)?;
            (pre, None, &h.ln_gain, &h.ln_bias, h.eps_ln)
        }
        ProjectionParams::Mlp(h) => {
            let mut a = input.matmul_transpose(&h.weight1)?;
            for v in a.data_mut() {
                *v = v.tanh();
            }
            let pre = a.matmul_transpose(&h.weight2)?;
            (pre, Some(a), &h.ln_gain, &h.ln_bias, h.eps_ln)
        }
    };

    let ln = match mode {
        NormMode::Bypass => None,
        NormMode::LayerNorm => {
            let n = pre.rows();
            let mut xhat = DenseMatrix::zeros(n, d);
            let mut inv_std = vec![0.0; n];
            for r in 0..n {
                let row = pre.row_mut(r);
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                let s = 1.0 / (var + eps).sqrt();
                inv_std[r] = s;
                let xrow = xhat.row_mut(r);
                for j in 0..d {
                    let x = (row[j] - mean) * s;
                    xrow[j] = x;
                    row[j] = gain[j] * x + bias[j];
                }
            }
            Some(LnCache { xhat, inv_std })
        }
    };

    let cache = ForwardCache {
        variant: params.variant(),
        mode,
        input: input.clone(),
        hidden,
        ln,
    };
    Ok((pre, cache))
}

/// Grid-level wrapper around [`project_rows`].
pub fn project_forward(
    params: &ProjectionParams,
    grid: &EmbeddingGrid,
    mode: NormMode,
) -> Result<(EmbeddingGrid, ForwardCache)> {
    let (out, cache) = project_rows(params, grid.values(), mode)?;
    Ok((EmbeddingGrid::new(grid.n_h(), grid.n_w(), out)?, cache))
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

/// Parameter gradients, shaped like the parameters themselves.
#[derive(Debug, Clone, PartialEq)]
pub enum ProjectionGrads {
    Linear {
        weight: DenseMatrix,
        ln_gain: Vec<f64>,
        ln_bias: Vec<f64>,
    },
    Mlp {
        weight1: DenseMatrix,
        weight2: DenseMatrix,
        ln_gain: Vec<f64>,
        ln_bias: Vec<f64>,
    },
}

impl ProjectionGrads {
    pub fn zeros_like(params: &ProjectionParams) -> Self {
        let d = params.dim();
        match params {
            ProjectionParams::Linear(_) => ProjectionGrads::Linear {
                weight: DenseMatrix::zeros(d, d),
                ln_gain: vec![0.0; d],
                ln_bias: vec![0.0; d],
            },
            ProjectionParams::Mlp(_) => ProjectionGrads::Mlp {
                weight1: DenseMatrix::zeros(d, d),
                weight2: DenseMatrix::zeros(d, d),
                ln_gain: vec![0.0; d],
                ln_bias: vec![0.0; d],
            },
        }
    }

    pub fn add_assign(&mut self, other: &ProjectionGrads) -> Result<()> {
        match (self, other) {
            (
                ProjectionGrads::Linear { weight, ln_gain, ln_bias },
                ProjectionGrads::Linear { weight: ow, ln_gain: og, ln_bias: ob },
            ) => {
                weight.add_assign_scaled(ow, 1.0)?;
                add_slices(ln_gain, og)?;
                add_slices(ln_bias, ob)?;
                Ok(())
            }
            (
                ProjectionGrads::Mlp { weight1, weight2, ln_gain, ln_bias },
                ProjectionGrads::Mlp { weight1: o1, weight2: o2, ln_gain: og, ln_bias: ob },
            ) => {
                weight1.add_assign_scaled(o1, 1.0)?;
                weight2.add_assign_scaled(o2, 1.0)?;
                add_slices(ln_gain, og)?;
                add_slices(ln_bias, ob)?;
                Ok(())
            }
            _ => Err(Error::Contract(
                "cannot accumulate gradients across head variants".into(),
            )),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        match self {
            ProjectionGrads::Linear { weight, ln_gain, ln_bias } => {
                weight.scale(factor);
                for v in ln_gain.iter_mut().chain(ln_bias.iter_mut()) {
                    *v *= factor;
                }
            }
            ProjectionGrads::Mlp { weight1, weight2, ln_gain, ln_bias } => {
                weight1.scale(factor);
                weight2.scale(factor);
                for v in ln_gain.iter_mut().chain(ln_bias.iter_mut()) {
                    *v *= factor;
                }
            }
        }
    }

    /// Flattens in the same order as [`ProjectionParams::trainable_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        match self {
            ProjectionGrads::Linear { weight, ln_gain, ln_bias } => {
                let mut out = Vec::with_capacity(weight.data().len() + ln_gain.len() + ln_bias.len());
                out.extend_from_slice(weight.data());
                out.extend_from_slice(ln_gain);
                out.extend_from_slice(ln_bias);
                out
            }
            ProjectionGrads::Mlp { weight1, weight2, ln_gain, ln_bias } => {
                let mut out = Vec::with_capacity(
                    weight1.data().len() + weight2.data().len() + ln_gain.len() + ln_bias.len(),
                );
                out.extend_from_slice(weight1.data());
                out.extend_from_slice(weight2.data());
                out.extend_from_slice(ln_gain);
                out.extend_from_slice(ln_bias);
                out
            }
        }
    }
}

fn add_slices(into: &mut [f64], from: &[f64]) -> Result<()> {
    if into.len() != from.len() {
        return Err(Error::Contract(format!(
            "gradient length mismatch: {} vs {}",
            into.len(),
            from.len()
        )));
    }
    for (a, b) in into.iter_mut().zip(from.iter()) {
        *a += b;
    }
    Ok(())
}

/// Gradients from one backward pass: with respect to the parameters and to
/// the head's input rows.
#[derive(Debug, Clone)]
pub struct GradBundle {
    pub params: ProjectionGrads,
    pub input: DenseMatrix,
}

/// Reverse-mode pass through the head. `upstream` holds the loss gradient
/// with respect to each output row of the forward call that produced `cache`.
pub fn project_backward(
    params: &ProjectionParams,
    cache: &ForwardCache,
    upstream: &DenseMatrix,
) -> Result<GradBundle> {
    if cache.variant != params.variant() {
        return Err(Error::Contract(
            "forward cache was produced by a different head variant".into(),
        ));
    }
    let d = params.dim();
    let n = cache.input.rows();
    if cache.input.cols() != d {
        return Err(Error::Contract(format!(
            "forward cache input dimension {} does not match head dimension {d}",
            cache.input.cols()
        )));
    }
    if upstream.rows() != n || upstream.cols() != d {
        return Err(Error::Contract(format!(
            "upstream gradient is {}x{}, cache expects {n}x{d}",
            upstream.rows(),
            upstream.cols()
        )));
    }

    let (gain, bias_len) = match params {
        ProjectionParams::Linear(h) => (&h.ln_gain, h.ln_bias.len()),
        ProjectionParams::Mlp(h) => (&h.ln_gain, h.ln_bias.len()),
    };
    debug_assert_eq!(bias_len, d);

    // Through the LayerNorm, if it was applied.
    let mut d_gain = vec![0.0; d];
    let mut d_bias = vec![0.0; d];
    let d_pre = match (&cache.mode, &cache.ln) {
        (NormMode::Bypass, None) => upstream.clone(),
        (NormMode::LayerNorm, Some(ln)) => {
            let mut d_pre = DenseMatrix::zeros(n, d);
            for r in 0..n {
                let u = upstream.row(r);
                let xhat = ln.xhat.row(r);
                let s = ln.inv_std[r];
                let mut mean_dx = 0.0;
                let mut mean_dx_x = 0.0;
                let out = d_pre.row_mut(r);
                for j in 0..d {
                    d_gain[j] += u[j] * xhat[j];
                    d_bias[j] += u[j];
                    let dx = u[j] * gain[j];
                    out[j] = dx;
                    mean_dx += dx;
                    mean_dx_x += dx * xhat[j];
                }
                mean_dx /= d as f64;
                mean_dx_x /= d as f64;
                for j in 0..d {
                    out[j] = s * (out[j] - mean_dx - xhat[j] * mean_dx_x);
                }
            }
            d_pre
        }
        _ => {
            return Err(Error::Contract(
                "forward cache norm mode does not match its contents".into(),
            ))
        }
    };

    // Through the map itself.
    match params {
        ProjectionParams::Linear(h) => {
            let d_weight = d_pre.transpose_matmul(&cache.input)?;
            let d_input = d_pre.matmul(&h.weight)?;
            Ok(GradBundle {
                params: ProjectionGrads::Linear {
                    weight: d_weight,
                    ln_gain: d_gain,
                    ln_bias: d_bias,
                },
                input: d_input,
            })
        }
        ProjectionParams::Mlp(h) => {
            let a = cache.hidden.as_ref().ok_or_else(|| {
                Error::Contract("forward cache is missing MLP activations".into())
            })?;
            let d_weight2 = d_pre.transpose_matmul(a)?;
            let mut d_hidden = d_pre.matmul(&h.weight2)?;
            for (dh, &av) in d_hidden.data_mut().iter_mut().zip(a.data().iter()) {
                *dh *= 1.0 - av * av;
            }
            let d_weight1 = d_hidden.transpose_matmul(&cache.input)?;
            let d_input = d_hidden.matmul(&h.weight1)?;
            Ok(GradBundle {
                params: ProjectionGrads::Mlp {
                    weight1: d_weight1,
                    weight2: d_weight2,
                    ln_gain: d_gain,
                    ln_bias: d_bias,
                },
                input: d_input,
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Checkpoint format
// ---------------------------------------------------------------------------

/// Serializes head parameters into the documented checkpoint layout.
pub fn encode_checkpoint(params: &ProjectionParams) -> Result<Vec<u8>> {
    params.validate()?;
    if !params.is_finite() {
        return Err(Error::InvalidInput(
            "cannot serialize non-finite parameters".into(),
        ));
    }
    let d = params.dim();
    if d > u32::MAX as usize {
        return Err(Error::Parameter(format!(
            "feature dimension {d} does not fit the checkpoint format"
        )));
    }
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    match params {
        ProjectionParams::Linear(h) => {
            out.push(0);
            out.extend_from_slice(&(d as u32).to_le_bytes());
            out.extend_from_slice(&h.eps_ln.to_le_bytes());
            for v in h.weight.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for v in h.ln_gain.iter().chain(&h.ln_bias) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        ProjectionParams::Mlp(h) => {
            out.push(1);
            out.extend_from_slice(&(d as u32).to_le_bytes());
            out.extend_from_slice(&h.eps_ln.to_le_bytes());
            for v in h.weight1.data().iter().chain(h.weight2.data()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for v in h.ln_gain.iter().chain(&h.ln_bias) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

fn read_f64_finite(cursor: &mut ByteCursor, what: &str) -> Result<f64> {
    let offset = cursor.offset();
    let v = cursor.f64(what)?;
    if !v.is_finite() {
        return Err(Error::format_at(offset, format!("non-finite {what}: {v}")));
    }
    Ok(v)
}

fn read_matrix(cursor: &mut ByteCursor, rows: usize, cols: usize, what: &str) -> Result<DenseMatrix> {
    let mut m = DenseMatrix::zeros(rows, cols);
    for v in m.data_mut() {
        *v = read_f64_finite(cursor, what)?;
    }
    Ok(m)
}

fn read_vector(cursor: &mut ByteCursor, len: usize, what: &str) -> Result<Vec<f64>> {
    let mut out = vec![0.0; len];
    for v in out.iter_mut() {
        *v = read_f64_finite(cursor, what)?;
    }
    Ok(out)
}

/// Parses the documented checkpoint layout. Strict about magic, version,
/// variant, dimension, value finiteness, truncation, and trailing bytes.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<ProjectionParams> {
    let mut cursor = ByteCursor::new(bytes);
    let magic = cursor.take(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::format_at(
            0,
            format!("bad magic {magic:?}, expected {CHECKPOINT_MAGIC:?}"),
        ));
    }
    let version_offset = cursor.offset();
    let version = cursor.u32("format version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format_at(
            version_offset,
            format!("unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"),
        ));
    }
    let variant_offset = cursor.offset();
    let variant = cursor.u8("head variant")?;
    let dim_offset = cursor.offset();
    let d = cursor.u32("feature dim")? as usize;
    if d == 0 {
        return Err(Error::format_at(dim_offset, "feature dim must be positive".to_string()));
    }
    let eps_offset = cursor.offset();
    let eps_ln = read_f64_finite(&mut cursor, "LayerNorm epsilon")?;
    if eps_ln <= 0.0 {
        return Err(Error::format_at(
            eps_offset,
            format!("LayerNorm epsilon must be positive, got {eps_ln}"),
        ));
    }
    let params = match variant {
        0 => {
            let weight = read_matrix(&mut cursor, d, d, "weight entry")?;
            let ln_gain = read_vector(&mut cursor, d, "LayerNorm gain entry")?;
            let ln_bias = read_vector(&mut cursor, d, "LayerNorm bias entry")?;
            ProjectionParams::Linear(LinearProjection { weight, ln_gain, ln_bias, eps_ln })
        }
        1 => {
            let weight1 = read_matrix(&mut cursor, d, d, "first weight entry")?;
            let weight2 = read_matrix(&mut cursor, d, d, "second weight entry")?;
            let ln_gain = read_vector(&mut cursor, d, "LayerNorm gain entry")?;
            let ln_bias = read_vector(&mut cursor, d, "LayerNorm bias entry")?;
            ProjectionParams::Mlp(MlpProjection { weight1, weight2, ln_gain, ln_bias, eps_ln })
        }
        other => {
            return Err(Error::format_at(
                variant_offset,
                format!("unknown head variant {other}, expected 0 or 1"),
            ))
        }
    };
    cursor.expect_end()?;
    Ok(params)
}

pub fn write_checkpoint<P: AsRef<Path>>(path: P, params: &ProjectionParams) -> Result<()> {
    let bytes = encode_checkpoint(params)?;
    let mut file = std::fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

pub fn read_checkpoint<P: AsRef<Path>>(path: P) -> Result<ProjectionParams> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_input(n: usize, d: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn identity_head_in_bypass_mode_is_identity() {
        let d = 4;
        let params = ProjectionParams::Linear(LinearProjection {
            weight: DenseMatrix::identity(d),
            ln_gain: vec![1.0; d],
            ln_bias: vec![0.0; d],
            eps_ln: DEFAULT_EPS_LN,
        });
        let input = sample_input(3, d, 0);
        let (out, _) = project_rows(&params, &input, NormMode::Bypass).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn layernorm_matches_scalar_formula() {
        let d = 3;
        let params = ProjectionParams::Linear(LinearProjection {
            weight: DenseMatrix::identity(d),
            ln_gain: vec![2.0, 2.0, 2.0],
            ln_bias: vec![0.5, 0.5, 0.5],
            eps_ln: 1e-6,
        });
        let input = DenseMatrix::from_vec(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let (out, _) = project_rows(&params, &input, NormMode::LayerNorm).unwrap();
        let var: f64 = 2.0 / 3.0;
        let s = 1.0 / (var + 1e-6).sqrt();
        for (j, z) in [-1.0, 0.0, 1.0].iter().enumerate() {
            assert_relative_eq!(out.get(0, j), 2.0 * z * s + 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn mlp_forward_matches_composed_formula() {
        let d = 2;
        let h = MlpProjection {
            weight1: DenseMatrix::from_vec(2, 2, vec![0.5, -0.2, 0.1, 0.9]).unwrap(),
            weight2: DenseMatrix::from_vec(2, 2, vec![1.0, 0.3, -0.4, 0.8]).unwrap(),
            ln_gain: vec![1.0; 2],
            ln_bias: vec![0.0; 2],
            eps_ln: DEFAULT_EPS_LN,
        };
        let z = [0.7_f64, -1.1];
        let a0 = (0.5 * z[0] - 0.2 * z[1]).tanh();
        let a1 = (0.1 * z[0] + 0.9 * z[1]).tanh();
        let y0 = 1.0 * a0 + 0.3 * a1;
        let y1 = -0.4 * a0 + 0.8 * a1;
        let params = ProjectionParams::Mlp(h);
        let input = DenseMatrix::from_vec(1, d, z.to_vec()).unwrap();
        let (out, _) = project_rows(&params, &input, NormMode::Bypass).unwrap();
        assert_relative_eq!(out.get(0, 0), y0, epsilon = 1e-14);
        assert_relative_eq!(out.get(0, 1), y1, epsilon = 1e-14);
    }

    #[test]
    fn project_rows_rejects_dimension_mismatch_and_nan() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = init_linear(3, &mut rng);
        let input = DenseMatrix::zeros(2, 4);
        assert!(matches!(
            project_rows(&params, &input, NormMode::Bypass),
            Err(Error::Shape(_))
        ));
        let bad = DenseMatrix::from_vec(1, 3, vec![f64::NAN, 0.0, 0.0]).unwrap();
        assert!(matches!(
            project_rows(&params, &bad, NormMode::Bypass),
            Err(Error::InvalidInput(_))
        ));
    }

    /// Central-difference gradient check of the full head on a random linear
    /// functional of the outputs. The heavyweight loss-level checks live in
    /// the gradient verification module; this is an early tripwire.
    fn finite_difference_check(params: ProjectionParams, mode: NormMode) {
        let d = params.dim();
        let n = 3;
        let input = sample_input(n, d, 7);
        let probe = sample_input(n, d, 8);
        let loss = |p: &ProjectionParams, z: &DenseMatrix| -> f64 {
            let (out, _) = project_rows(p, z, mode).unwrap();
            out.data()
                .iter()
                .zip(probe.data().iter())
                .map(|(a, b)| a * b)
                .sum()
        };

        let (out, cache) = project_rows(&params, &input, mode).unwrap();
        assert_eq!(out.rows(), n);
        let bundle = project_backward(&params, &cache, &probe).unwrap();

        // Parameter gradients.
        let analytic = bundle.params.to_flat();
        let base_flat = params.trainable_flat();
        let h = 1e-5;
        for k in 0..base_flat.len() {
            let mut plus = params.clone();
            let mut minus = params.clone();
            let mut fp = base_flat.clone();
            fp[k] += h;
            plus.set_trainable_flat(&fp).unwrap();
            fp[k] -= 2.0 * h;
            minus.set_trainable_flat(&fp).unwrap();
            let numeric = (loss(&plus, &input) - loss(&minus, &input)) / (2.0 * h);
            assert_relative_eq!(analytic[k], numeric, max_relative = 1e-5, epsilon = 1e-7);
        }

        // Input gradients.
        for r in 0..n {
            for c in 0..d {
                let mut plus = input.clone();
                let mut minus = input.clone();
                plus.set(r, c, input.get(r, c) + h);
                minus.set(r, c, input.get(r, c) - h);
                let numeric = (loss(&params, &plus) - loss(&params, &minus)) / (2.0 * h);
                assert_relative_eq!(
                    bundle.input.get(r, c),
                    numeric,
                    max_relative = 1e-5,
                    epsilon = 1e-7
                );
            }
        }
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        finite_difference_check(init_linear(3, &mut rng), NormMode::Bypass);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        finite_difference_check(init_linear(3, &mut rng), NormMode::LayerNorm);
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        finite_difference_check(init_mlp(3, &mut rng), NormMode::Bypass);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        finite_difference_check(init_mlp(3, &mut rng), NormMode::LayerNorm);
    }

    #[test]
    fn backward_rejects_mismatched_cache() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let linear = init_linear(3, &mut rng);
        let mlp = init_mlp(3, &mut rng);
        let input = sample_input(2, 3, 9);
        let (_, cache) = project_rows(&linear, &input, NormMode::Bypass).unwrap();
        let upstream = DenseMatrix::zeros(2, 3);
        assert!(matches!(
            project_backward(&mlp, &cache, &upstream),
            Err(Error::Contract(_))
        ));
        let bad_upstream = DenseMatrix::zeros(4, 3);
        assert!(matches!(
            project_backward(&linear, &cache, &bad_upstream),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn flat_round_trip_preserves_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for params in [init_linear(4, &mut rng), init_mlp(4, &mut rng)] {
            let flat = params.trainable_flat();
            assert_eq!(flat.len(), params.n_trainable());
            let mut rng2 = ChaCha8Rng::seed_from_u64(11);
            let mut other = match params {
                ProjectionParams::Linear(_) => init_linear(4, &mut rng2),
                ProjectionParams::Mlp(_) => init_mlp(4, &mut rng2),
            };
            other.set_trainable_flat(&flat).unwrap();
            assert_eq!(other, params);
            assert!(matches!(
                other.set_trainable_flat(&flat[1..]),
                Err(Error::Contract(_))
            ));
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for params in [init_linear(5, &mut rng), init_mlp(5, &mut rng)] {
            let bytes = encode_checkpoint(&params).unwrap();
            let back = decode_checkpoint(&bytes).unwrap();
            assert_eq!(params, back);
        }
    }

    #[test]
    fn checkpoint_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("head.ckpt");
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let params = init_linear(4, &mut rng);
        write_checkpoint(&path, &params).unwrap();
        assert_eq!(read_checkpoint(&path).unwrap(), params);
    }

    #[test]
    fn checkpoint_decode_rejects_corruption_with_offsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let params = init_mlp(3, &mut rng);
        let good = encode_checkpoint(&params).unwrap();

        let mut bytes = good.clone();
        bytes[0] = b'Z';
        match decode_checkpoint(&bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected a format error, got {other:?}"),
        }

        let mut bytes = good.clone();
        bytes[8] = 7;
        match decode_checkpoint(&bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 8),
            other => panic!("expected a format error, got {other:?}"),
        }

        let truncated = &good[..good.len() - 1];
        match decode_checkpoint(truncated) {
            Err(Error::Format { offset, .. }) => {
                assert_eq!(offset, good.len() as u64 - 8);
            }
            other => panic!("expected a format error, got {other:?}"),
        }

        let mut padded = good.clone();
        padded.extend_from_slice(&[0, 0]);
        match decode_checkpoint(&padded) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, good.len() as u64),
            other => panic!("expected a format error, got {other:?}"),
        }

        // NaN in the payload.
        let mut bytes = good.clone();
        bytes[13..21].copy_from_slice(&f64::NAN.to_le_bytes());
        match decode_checkpoint(&bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 13),
            other => panic!("expected a format error, got {other:?}"),
        }
    }
}
