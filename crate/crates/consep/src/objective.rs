//! The training objective: palindrome cycle-consistency loss plus a
//! KL-to-reference separability regularizer, with exact reverse-mode
//! gradients for both.
//!
//! A clip contributes three projected frames: forward and backward are the
//! same start frame, the intermediate sits a temporal gap away. Row-stochastic
//! correlation matrices link forward to intermediate and intermediate to
//! backward; the loss asks the round trip to land back on the starting patch.

use crate::error::{Error, Result};
use crate::numerics::{softmax_rows, DenseMatrix};
use crate::projection::{project_rows, NormMode, ProjectionParams};
use serde::Serialize;

/// Diagonal entries of the round-trip matrix below this floor are clamped
/// before the logarithm. A clamped entry contributes a constant to the loss,
/// so its gradient is exactly zero; the count of clamps is surfaced so
/// callers can notice a collapsing head.
pub const PRODUCT_DIAGONAL_FLOOR: f64 = 1e-30;

/// Tolerance on row sums when validating an externally supplied
/// row-stochastic matrix.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

/// Tempered correlation matrix between two sets of projected patch rows:
/// `softmax over rows of (a b^T / temperature)`. Row `i` is a distribution
/// over the rows of `b`.
pub fn correlation_matrix(
    a: &DenseMatrix,
    b: &DenseMatrix,
    temperature: f64,
) -> Result<DenseMatrix> {
    if a.cols() != b.cols() {
        return Err(Error::Shape(format!(
            "correlation operands have feature dimensions {} and {}",
            a.cols(),
            b.cols()
        )));
    }
    let scores = a.matmul_transpose(b)?;
    softmax_rows(&scores, temperature)
}

/// Gradient of a scalar loss through [`correlation_matrix`].
///
/// `correlation` must be the matrix produced from `(a, b, temperature)` and
/// `upstream` the loss gradient with respect to it. Returns gradients with
/// respect to `a` and `b`.
pub fn correlation_backward(
    a: &DenseMatrix,
    b: &DenseMatrix,
    correlation: &DenseMatrix,
    upstream: &DenseMatrix,
    temperature: f64,
) -> Result<(DenseMatrix, DenseMatrix)> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::Parameter(format!(
            "softmax temperature must be positive and finite, got {temperature}"
        )));
    }
    let (n_a, n_b) = (a.rows(), b.rows());
    if correlation.rows() != n_a
        || correlation.cols() != n_b
        || upstream.rows() != n_a
        || upstream.cols() != n_b
        || a.cols() != b.cols()
    {
        return Err(Error::Contract(
            "correlation_backward operands do not match the forward call".into(),
        ));
    }
    // d_score = (A .* (U - rowdot(U, A) 1^T)) / temperature
    let mut d_score = DenseMatrix::zeros(n_a, n_b);
    for i in 0..n_a {
        let arow = correlation.row(i);
        let urow = upstream.row(i);
        let dot: f64 = arow.iter().zip(urow.iter()).map(|(x, y)| x * y).sum();
        let out = d_score.row_mut(i);
        for j in 0..n_b {
            out[j] = arow[j] * (urow[j] - dot) / temperature;
        }
    }
    let d_a = d_score.matmul(b)?;
    let d_b = d_score.transpose_matmul(a)?;
    Ok((d_a, d_b))
}

/// The two row-stochastic correlation matrices of one palindrome clip:
/// `forward` maps start-frame patches to intermediate-frame patches,
/// `backward` maps them back.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationPair {
    pub forward: DenseMatrix,
    pub backward: DenseMatrix,
}

impl CorrelationPair {
    /// Validates externally supplied matrices: square, matching sizes,
    /// non-negative entries, rows summing to one.
    pub fn new(forward: DenseMatrix, backward: DenseMatrix) -> Result<Self> {
        for (name, m) in [("forward", &forward), ("backward", &backward)] {
            if !m.is_square() || m.rows() != forward.rows() {
                return Err(Error::Shape(format!(
                    "{name} correlation must be {0}x{0}, got {1}x{2}",
                    forward.rows(),
                    m.rows(),
                    m.cols()
                )));
            }
            for i in 0..m.rows() {
                let row = m.row(i);
                if row.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                    return Err(Error::InvalidInput(format!(
                        "{name} correlation row {i} has a negative or non-finite entry"
                    )));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                    return Err(Error::InvalidInput(format!(
                        "{name} correlation row {i} sums to {sum}, expected 1"
                    )));
                }
            }
        }
        Ok(CorrelationPair { forward, backward })
    }

    /// Builds the pair from three projected frames of equal shape.
    pub fn from_projections(
        forward: &DenseMatrix,
        intermediate: &DenseMatrix,
        backward: &DenseMatrix,
        temperature: f64,
    ) -> Result<Self> {
        if forward.rows() != intermediate.rows() || intermediate.rows() != backward.rows() {
            return Err(Error::Shape(format!(
                "palindrome frames must share a patch count, got {}, {}, {}",
                forward.rows(),
                intermediate.rows(),
                backward.rows()
            )));
        }
        let f = correlation_matrix(forward, intermediate, temperature)?;
        let b = correlation_matrix(intermediate, backward, temperature)?;
        Ok(CorrelationPair { forward: f, backward: b })
    }

    pub fn n(&self) -> usize {
        self.forward.rows()
    }
}

/// Value and gradients of the cycle-consistency loss.
#[derive(Debug, Clone)]
pub struct CycleLossResult {
    pub value: f64,
    /// Gradient with respect to the forward correlation matrix.
    pub d_forward: DenseMatrix,
    /// Gradient with respect to the backward correlation matrix.
    pub d_backward: DenseMatrix,
    /// Diagonal entries that hit [`PRODUCT_DIAGONAL_FLOOR`].
    pub clamped_entries: usize,
}

/// Cycle-consistency loss: the mean negative log of the round-trip matrix
/// diagonal, `-(1/N) sum_i log((F B)_ii)`.
pub fn cycle_loss(pair: &CorrelationPair) -> Result<CycleLossResult> {
    let n = pair.n();
    let product = pair.forward.matmul(&pair.backward)?;
    let mut value = 0.0;
    let mut diag_grad = vec![0.0; n];
    let mut clamped_entries = 0;
    for i in 0..n {
        let p = product.get(i, i);
        if p > PRODUCT_DIAGONAL_FLOOR {
            value -= p.ln();
            diag_grad[i] = -1.0 / (n as f64 * p);
        } else {
            value -= PRODUCT_DIAGONAL_FLOOR.ln();
            clamped_entries += 1;
        }
    }
    value /= n as f64;

    // d(FB)_ii/dF_ik = B_ki and d(FB)_ii/dB_ki = F_ik.
    let mut d_forward = DenseMatrix::zeros(n, n);
    let mut d_backward = DenseMatrix::zeros(n, n);
    for i in 0..n {
        let g = diag_grad[i];
        if g == 0.0 {
            continue;
        }
        let frow = pair.forward.row(i);
        let dfrow = d_forward.row_mut(i);
        for k in 0..n {
            dfrow[k] = g * pair.backward.get(k, i);
            d_backward.set(k, i, g * frow[k]);
        }
    }
    Ok(CycleLossResult { value, d_forward, d_backward, clamped_entries })
}

/// Value and per-input gradients of the separability regularizer.
#[derive(Debug, Clone)]
pub struct KlResult {
    pub value: f64,
    /// One gradient matrix per `(projected, reference)` pair, with respect to
    /// the projected entries.
    pub grads: Vec<DenseMatrix>,
}

/// KL separability regularizer.
///
/// Each pair holds projected rows `p` and constant reference rows `z` of the
/// same shape. Both are read as per-row logits; the term is the KL divergence
/// from the reference distribution, `KL(softmax(p) || softmax(z))`, averaged
/// over rows and then over pairs. It is exactly zero when every `p` equals
/// its `z`.
pub fn kl_regularizer(pairs: &[(&DenseMatrix, &DenseMatrix)]) -> Result<KlResult> {
    if pairs.is_empty() {
        return Err(Error::Parameter("KL regularizer needs at least one pair".into()));
    }
    let n_pairs = pairs.len() as f64;
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(pairs.len());
    for (idx, (p, z)) in pairs.iter().enumerate() {
        if p.rows() != z.rows() || p.cols() != z.cols() {
            return Err(Error::Shape(format!(
                "KL pair {idx} has shapes {}x{} and {}x{}",
                p.rows(),
                p.cols(),
                z.rows(),
                z.cols()
            )));
        }
        if !p.is_finite() || !z.is_finite() {
            return Err(Error::InvalidInput(format!(
                "KL pair {idx} contains non-finite entries"
            )));
        }
        let n = p.rows();
        let d = p.cols();
        let mut grad = DenseMatrix::zeros(n, d);
        let mut pair_value = 0.0;
        let mut log_p = vec![0.0; d];
        let mut log_z = vec![0.0; d];
        for i in 0..n {
            log_softmax(p.row(i), &mut log_p);
            log_softmax(z.row(i), &mut log_z);
            let mut kl = 0.0;
            for j in 0..d {
                kl += log_p[j].exp() * (log_p[j] - log_z[j]);
            }
            pair_value += kl;
            let grow = grad.row_mut(i);
            let scale = 1.0 / (n as f64 * n_pairs);
            for j in 0..d {
                let prob = log_p[j].exp();
                grow[j] = prob * ((log_p[j] - log_z[j]) - kl) * scale;
            }
        }
        value += pair_value / (n as f64 * n_pairs);
        grads.push(grad);
    }
    Ok(KlResult { value, grads })
}

fn log_softmax(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut sum = 0.0;
    for (&l, o) in logits.iter().zip(out.iter_mut()) {
        *o = l - max;
        sum += o.exp();
    }
    let log_sum = sum.ln();
    for o in out.iter_mut() {
        *o -= log_sum;
    }
}

/// Loss values of one optimization step, in reporting order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossReport {
    pub cyc: f64,
    pub reg: f64,
    pub total: f64,
    pub lambda: f64,
}

/// Full loss of one palindrome clip with gradients for each projected frame.
#[derive(Debug, Clone)]
pub struct PalindromeLoss {
    pub report: LossReport,
    pub d_forward: DenseMatrix,
    pub d_intermediate: DenseMatrix,
    pub d_backward: DenseMatrix,
    pub clamped_entries: usize,
}

/// Combined objective `L_cyc + lambda * L_reg` for one clip.
///
/// `projected` holds the head outputs for the forward, intermediate, and
/// backward frames; `references` holds the corresponding head inputs, which
/// anchor the KL regularizer. The returned gradients are with respect to the
/// projected rows.
pub fn total_loss(
    projected: [&DenseMatrix; 3],
    references: [&DenseMatrix; 3],
    lambda: f64,
    temperature: f64,
) -> Result<PalindromeLoss> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::Parameter(format!(
            "regularizer weight must be non-negative and finite, got {lambda}"
        )));
    }
    let [p_f, p_m, p_b] = projected;
    let [x_f, x_m, x_b] = references;
    for (p, x) in [(p_f, x_f), (p_m, x_m), (p_b, x_b)] {
        if p.rows() != x.rows() || p.cols() != x.cols() {
            return Err(Error::Shape(format!(
                "projected frame is {}x{}, its reference is {}x{}",
                p.rows(),
                p.cols(),
                x.rows(),
                x.cols()
            )));
        }
    }

    let pair = CorrelationPair::from_projections(p_f, p_m, p_b, temperature)?;
    let cyc = cycle_loss(&pair)?;
    let (mut d_f, d_m1) = correlation_backward(p_f, p_m, &pair.forward, &cyc.d_forward, temperature)?;
    let (mut d_m, mut d_b) =
        correlation_backward(p_m, p_b, &pair.backward, &cyc.d_backward, temperature)?;
    d_m.add_assign_scaled(&d_m1, 1.0)?;

    let kl = kl_regularizer(&[(p_f, x_f), (p_m, x_m), (p_b, x_b)])?;
    d_f.add_assign_scaled(&kl.grads[0], lambda)?;
    d_m.add_assign_scaled(&kl.grads[1], lambda)?;
    d_b.add_assign_scaled(&kl.grads[2], lambda)?;

    let total = cyc.value + lambda * kl.value;
    Ok(PalindromeLoss {
        report: LossReport { cyc: cyc.value, reg: kl.value, total, lambda },
        d_forward: d_f,
        d_intermediate: d_m,
        d_backward: d_b,
        clamped_entries: cyc.clamped_entries,
    })
}

/// Empirical consistency surrogate: the mean of `0.5 * ||g(z1) - g(z2)||^2`
/// over difference pairs, with the head applied in bypass mode.
pub fn surrogate_m_cyc(
    params: &ProjectionParams,
    pairs: &[(Vec<f64>, Vec<f64>)],
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Parameter("consistency surrogate needs at least one pair".into()));
    }
    let d = params.dim();
    let mut first = DenseMatrix::zeros(pairs.len(), d);
    let mut second = DenseMatrix::zeros(pairs.len(), d);
    for (k, (a, b)) in pairs.iter().enumerate() {
        if a.len() != d || b.len() != d {
            return Err(Error::Shape(format!(
                "pair {k} has lengths {} and {}, head expects {d}",
                a.len(),
                b.len()
            )));
        }
        first.row_mut(k).copy_from_slice(a);
        second.row_mut(k).copy_from_slice(b);
    }
    let (ga, _) = project_rows(params, &first, NormMode::Bypass)?;
    let (gb, _) = project_rows(params, &second, NormMode::Bypass)?;
    let mut acc = 0.0;
    for (a, b) in ga.data().iter().zip(gb.data().iter()) {
        let diff = a - b;
        acc += diff * diff;
    }
    Ok(0.5 * acc / pairs.len() as f64)
}

/// Separability surrogate: deviation of the head's Jacobian from a
/// co-isometry, `0.5 * ||J J^T - I||_F^2`.
///
/// For the linear head the Jacobian is the weight matrix everywhere, so the
/// value is exact and `points` may be empty. For the MLP head the Jacobian
/// varies with the input and the value is averaged over the supplied points.
pub fn surrogate_m_reg(params: &ProjectionParams, points: &[Vec<f64>]) -> Result<f64> {
    let d = params.dim();
    match params {
        ProjectionParams::Linear(h) => {
            let gram = h.weight.matmul_transpose(&h.weight)?;
            Ok(0.5 * gram.sub(&DenseMatrix::identity(d))?.frobenius_norm().powi(2))
        }
        ProjectionParams::Mlp(h) => {
            if points.is_empty() {
                return Err(Error::Parameter(
                    "the MLP separability surrogate needs evaluation points".into(),
                ));
            }
            let identity = DenseMatrix::identity(d);
            let mut acc = 0.0;
            for (k, z) in points.iter().enumerate() {
                if z.len() != d {
                    return Err(Error::Shape(format!(
                        "point {k} has length {}, head expects {d}",
                        z.len()
                    )));
                }
                let pre = h.weight1.matvec(z)?;
                // J = W2 diag(1 - tanh^2(W1 z)) W1, assembled by scaling the
                // rows of W1.
                let mut scaled = h.weight1.clone();
                for (row_idx, &p) in pre.iter().enumerate() {
                    let s = 1.0 - p.tanh().powi(2);
                    for v in scaled.row_mut(row_idx) {
                        *v *= s;
                    }
                }
                let jac = h.weight2.matmul(&scaled)?;
                let gram = jac.matmul_transpose(&jac)?;
                acc += 0.5 * gram.sub(&identity)?.frobenius_norm().powi(2);
            }
            Ok(acc / points.len() as f64)
        }
    }
}
