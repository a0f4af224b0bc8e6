//! Dense 64-bit float kernels: matrices, row softmax, a cyclic Jacobi
//! eigensolver for symmetric matrices, and Gaussian sampling from a
//! covariance.
//!
//! Everything here is deterministic. The eigensolver orders eigenvalues
//! ascending and fixes eigenvector signs so downstream spectra are
//! reproducible bit for bit.

use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// All-zero matrix. Panics on a zero dimension; empty matrices are not a
    /// thing this crate traffics in.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "expected {} values for a {rows}x{cols} matrix, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = DenseMatrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.data[r * cols + c] = f(r, c);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// `self * other`
    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let arow = self.row(r);
            let orow = &mut out.data[r * other.cols..(r + 1) * other.cols];
            for (k, &a) in arow.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in orow.iter_mut().zip(brow.iter()) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self * other^T`
    pub fn matmul_transpose(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.cols {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by transpose of {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = DenseMatrix::zeros(self.rows, other.rows);
        for r in 0..self.rows {
            let arow = self.row(r);
            for q in 0..other.rows {
                let brow = other.row(q);
                let mut acc = 0.0;
                for (a, b) in arow.iter().zip(brow.iter()) {
                    acc += a * b;
                }
                out.data[r * other.rows + q] = acc;
            }
        }
        Ok(out)
    }

    /// `self^T * other`
    pub fn transpose_matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != other.rows {
            return Err(Error::Shape(format!(
                "cannot multiply transpose of {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = DenseMatrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let arow = self.row(k);
            let brow = other.row(k);
            for (i, &a) in arow.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in orow.iter_mut().zip(brow.iter()) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::Shape(format!(
                "matvec expects length {}, got {}",
                self.cols,
                v.len()
            )));
        }
        let mut out = vec![0.0; self.rows];
        for r in 0..self.rows {
            let row = self.row(r);
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(v.iter()) {
                acc += a * b;
            }
            out[r] = acc;
        }
        Ok(out)
    }

    pub fn add(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &DenseMatrix, f: impl Fn(f64, f64) -> f64) -> Result<DenseMatrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Shape(format!(
                "elementwise op on {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    /// `self += factor * other`
    pub fn add_assign_scaled(&mut self, other: &DenseMatrix, factor: f64) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Shape(format!(
                "accumulate {}x{} into {}x{}",
                other.rows, other.cols, self.rows, self.cols
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += factor * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    pub fn scaled(&self, factor: f64) -> DenseMatrix {
        let mut out = self.clone();
        out.scale(factor);
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// `(self + self^T) / 2`. Requires a square matrix.
    pub fn symmetrized(&self) -> Result<DenseMatrix> {
        if !self.is_square() {
            return Err(Error::Shape(format!(
                "cannot symmetrize a {}x{} matrix",
                self.rows, self.cols
            )));
        }
        let n = self.rows;
        let mut out = self.clone();
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (self.data[i * n + j] + self.data[j * n + i]);
                out.data[i * n + j] = avg;
                out.data[j * n + i] = avg;
            }
        }
        Ok(out)
    }
}

/// Result of [`sym_eig`]: eigenvalues ascending, eigenvectors as the columns
/// of `basis` in matching order.
#[derive(Debug, Clone)]
pub struct SymEigResult {
    pub eigenvalues: Vec<f64>,
    pub basis: DenseMatrix,
}

/// Sweep cap for the cyclic Jacobi iteration. Symmetric matrices of the sizes
/// this crate handles converge in well under ten sweeps; hitting the cap is
/// reported as a numeric error rather than silently returning garbage.
pub const JACOBI_MAX_SWEEPS: usize = 100;
/// Convergence threshold on the off-diagonal Frobenius norm, relative to the
/// input norm.
pub const JACOBI_OFF_TOLERANCE: f64 = 1e-12;
/// Largest tolerated relative asymmetry of the input, which is then
/// symmetrized internally.
pub const SYM_EIG_ASYMMETRY_TOLERANCE: f64 = 1e-9;

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Eigenvalues are returned ascending. Each eigenvector column is scaled so
/// its largest-magnitude entry is positive (first such entry on ties), which
/// pins the sign freedom and keeps results reproducible.
pub fn sym_eig(s: &DenseMatrix) -> Result<SymEigResult> {
    if !s.is_square() {
        return Err(Error::Shape(format!(
            "sym_eig needs a square matrix, got {}x{}",
            s.rows(),
            s.cols()
        )));
    }
    if !s.is_finite() {
        return Err(Error::InvalidInput(
            "sym_eig input contains non-finite entries".into(),
        ));
    }
    let n = s.rows();
    let norm = s.frobenius_norm();
    let mut asym: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            asym = asym.max((s.get(i, j) - s.get(j, i)).abs());
        }
    }
    if asym > SYM_EIG_ASYMMETRY_TOLERANCE * norm.max(1.0) {
        return Err(Error::InvalidInput(format!(
            "sym_eig input asymmetry {asym:.3e} exceeds tolerance"
        )));
    }

    let mut a = s.symmetrized()?;
    let mut v = DenseMatrix::identity(n);

    if norm > 0.0 {
        let threshold = JACOBI_OFF_TOLERANCE * norm;
        let mut converged = false;
        for _sweep in 0..JACOBI_MAX_SWEEPS {
            let mut off = 0.0;
            for p in 0..n {
                for q in (p + 1)..n {
                    let x = a.get(p, q);
                    off += 2.0 * x * x;
                }
            }
            if off.sqrt() <= threshold {
                converged = true;
                break;
            }
            for p in 0..n - 1 {
                for q in (p + 1)..n {
                    let apq = a.get(p, q);
                    if apq == 0.0 {
                        continue;
                    }
                    let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let sn = t * c;
                    // A <- A * J, rotating columns p and q.
                    for k in 0..n {
                        let akp = a.get(k, p);
                        let akq = a.get(k, q);
                        a.set(k, p, c * akp - sn * akq);
                        a.set(k, q, sn * akp + c * akq);
                    }
                    // A <- J^T * A, rotating rows p and q.
                    for k in 0..n {
                        let apk = a.get(p, k);
                        let aqk = a.get(q, k);
                        a.set(p, k, c * apk - sn * aqk);
                        a.set(q, k, sn * apk + c * aqk);
                    }
                    a.set(p, q, 0.0);
                    a.set(q, p, 0.0);
                    // V <- V * J accumulates eigenvectors in the columns.
                    for k in 0..n {
                        let vkp = v.get(k, p);
                        let vkq = v.get(k, q);
                        v.set(k, p, c * vkp - sn * vkq);
                        v.set(k, q, sn * vkp + c * vkq);
                    }
                }
            }
        }
        if !converged {
            // One more check after the final sweep before giving up.
            let mut off = 0.0;
            for p in 0..n {
                for q in (p + 1)..n {
                    let x = a.get(p, q);
                    off += 2.0 * x * x;
                }
            }
            if off.sqrt() > threshold {
                return Err(Error::Numeric(format!(
                    "Jacobi eigensolver did not converge in {JACOBI_MAX_SWEEPS} sweeps \
                     (off-diagonal norm {:.3e}, threshold {:.3e})",
                    off.sqrt(),
                    threshold
                )));
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(i, i).partial_cmp(&a.get(j, j)).unwrap());

    let eigenvalues: Vec<f64> = order.iter().map(|&i| a.get(i, i)).collect();
    let mut basis = DenseMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        // Sign convention: largest-magnitude entry positive, scanning from
        // the top on ties.
        let mut lead = 0;
        let mut best = 0.0;
        for k in 0..n {
            let mag = v.get(k, src).abs();
            if mag > best {
                best = mag;
                lead = k;
            }
        }
        let flip = if v.get(lead, src) < 0.0 { -1.0 } else { 1.0 };
        for k in 0..n {
            basis.set(k, dst, flip * v.get(k, src));
        }
    }

    Ok(SymEigResult { eigenvalues, basis })
}

/// Mean outer product of pair differences: `(1/K) * sum (a-b)(a-b)^T`.
///
/// The result is exactly symmetric; only the upper triangle is accumulated
/// and then mirrored.
pub fn covariance_of_differences(pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<DenseMatrix> {
    if pairs.is_empty() {
        return Err(Error::Parameter(
            "covariance_of_differences needs at least one pair".into(),
        ));
    }
    let dim = pairs[0].0.len();
    if dim == 0 {
        return Err(Error::Shape("pair vectors must be non-empty".into()));
    }
    let mut acc = DenseMatrix::zeros(dim, dim);
    let mut diff = vec![0.0; dim];
    for (idx, (a, b)) in pairs.iter().enumerate() {
        if a.len() != dim || b.len() != dim {
            return Err(Error::Shape(format!(
                "pair {idx} has lengths {} and {}, expected {dim}",
                a.len(),
                b.len()
            )));
        }
        for i in 0..dim {
            let d = a[i] - b[i];
            if !d.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "pair {idx} has a non-finite difference at component {i}"
                )));
            }
            diff[i] = d;
        }
        for i in 0..dim {
            let di = diff[i];
            for j in i..dim {
                let v = acc.get(i, j) + di * diff[j];
                acc.set(i, j, v);
            }
        }
    }
    let scale = 1.0 / pairs.len() as f64;
    for i in 0..dim {
        for j in i..dim {
            let v = acc.get(i, j) * scale;
            acc.set(i, j, v);
            acc.set(j, i, v);
        }
    }
    Ok(acc)
}

/// Row-wise tempered softmax: `out[i][j] = exp(m[i][j]/t) / sum_k exp(m[i][k]/t)`,
/// computed with max subtraction so large scores cannot overflow.
pub fn softmax_rows(m: &DenseMatrix, temperature: f64) -> Result<DenseMatrix> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::Parameter(format!(
            "softmax temperature must be positive and finite, got {temperature}"
        )));
    }
    if !m.is_finite() {
        return Err(Error::InvalidInput(
            "softmax input contains non-finite entries".into(),
        ));
    }
    let mut out = m.clone();
    for r in 0..m.rows() {
        let row = out.row_mut(r);
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = ((*v - max) / temperature).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(out)
}

/// Tolerated relative negativity of covariance eigenvalues before the matrix
/// is rejected as not positive semidefinite.
pub const PSD_TOLERANCE: f64 = 1e-9;

/// Draws from `N(0, cov)` through the symmetric square root of `cov`.
#[derive(Debug, Clone)]
pub struct CovarianceSampler {
    factor: DenseMatrix,
}

impl CovarianceSampler {
    pub fn new(cov: &DenseMatrix) -> Result<Self> {
        let eig = sym_eig(cov)?;
        let max = eig
            .eigenvalues
            .iter()
            .fold(0.0_f64, |m, &v| m.max(v.abs()));
        let floor = -PSD_TOLERANCE * max.max(1.0);
        if eig.eigenvalues.iter().any(|&v| v < floor) {
            return Err(Error::Parameter(format!(
                "covariance is not positive semidefinite (eigenvalue {:.6e})",
                eig.eigenvalues[0]
            )));
        }
        let n = cov.rows();
        // factor = U * sqrt(max(lambda, 0)) * U^T
        let mut scaled = eig.basis.clone();
        for j in 0..n {
            let root = eig.eigenvalues[j].max(0.0).sqrt();
            for i in 0..n {
                scaled.set(i, j, scaled.get(i, j) * root);
            }
        }
        let factor = scaled.matmul_transpose(&eig.basis)?;
        Ok(CovarianceSampler { factor })
    }

    pub fn dim(&self) -> usize {
        self.factor.rows()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.dim();
        let mut z = vec![0.0; n];
        for v in &mut z {
            *v = StandardNormal.sample(rng);
        }
        self.factor.matvec(&z).expect("factor is square")
    }
}

/// Random orthogonal matrix from Gram-Schmidt on a Gaussian draw, with one
/// re-orthogonalization pass for numerical hygiene.
pub fn random_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DenseMatrix {
    assert!(n > 0);
    loop {
        let g = DenseMatrix::from_fn(n, n, |_, _| StandardNormal.sample(rng));
        if let Some(q) = gram_schmidt(&g) {
            return q;
        }
    }
}

fn gram_schmidt(g: &DenseMatrix) -> Option<DenseMatrix> {
    let n = g.rows();
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| (0..n).map(|i| g.get(i, j)).collect()).collect();
    for j in 0..n {
        for _pass in 0..2 {
            for k in 0..j {
                let dot: f64 = cols[j].iter().zip(cols[k].iter()).map(|(a, b)| a * b).sum();
                let prev = cols[k].clone();
                for (v, p) in cols[j].iter_mut().zip(prev.iter()) {
                    *v -= dot * p;
                }
            }
        }
        let norm: f64 = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-8 {
            return None;
        }
        for v in cols[j].iter_mut() {
            *v /= norm;
        }
    }
    Some(DenseMatrix::from_fn(n, n, |i, j| cols[j][i]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Closed-form eigenvalues of a symmetric 2x2 matrix, the oracle for the
    /// iterative solver.
    fn eig2_oracle(a: f64, b: f64, d: f64) -> (f64, f64) {
        let tr = a + d;
        let det = a * d - b * b;
        let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
        (tr / 2.0 - disc, tr / 2.0 + disc)
    }

    /// Trigonometric closed form for the eigenvalues of a symmetric 3x3
    /// matrix, ascending.
    fn eig3_oracle(m: &DenseMatrix) -> [f64; 3] {
        let p1 = m.get(0, 1).powi(2) + m.get(0, 2).powi(2) + m.get(1, 2).powi(2);
        let q = (m.get(0, 0) + m.get(1, 1) + m.get(2, 2)) / 3.0;
        let p2 = (m.get(0, 0) - q).powi(2)
            + (m.get(1, 1) - q).powi(2)
            + (m.get(2, 2) - q).powi(2)
            + 2.0 * p1;
        if p2 <= f64::EPSILON {
            return [q, q, q];
        }
        let p = (p2 / 6.0).sqrt();
        let mut bmat = m.clone();
        for i in 0..3 {
            bmat.set(i, i, bmat.get(i, i) - q);
        }
        bmat.scale(1.0 / p);
        let det = bmat.get(0, 0)
            * (bmat.get(1, 1) * bmat.get(2, 2) - bmat.get(1, 2) * bmat.get(2, 1))
            - bmat.get(0, 1) * (bmat.get(1, 0) * bmat.get(2, 2) - bmat.get(1, 2) * bmat.get(2, 0))
            + bmat.get(0, 2) * (bmat.get(1, 0) * bmat.get(2, 1) - bmat.get(1, 1) * bmat.get(2, 0));
        let r = (det / 2.0).clamp(-1.0, 1.0);
        let phi = r.acos() / 3.0;
        let e1 = q + 2.0 * p * phi.cos();
        let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
        let e2 = 3.0 * q - e1 - e3;
        let mut eigs = [e1, e2, e3];
        eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        eigs
    }

    #[test]
    fn matmul_against_hand_computed_product() {
        let a = DenseMatrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = DenseMatrix::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
        let ct = a.matmul_transpose(&b.transpose()).unwrap();
        assert_eq!(c, ct);
        let tm = a.transpose().transpose_matmul(&b.transpose().transpose()).unwrap();
        assert_eq!(c, tm);
    }

    #[test]
    fn matmul_shape_mismatch_is_rejected() {
        let a = DenseMatrix::zeros(2, 3);
        let b = DenseMatrix::zeros(2, 3);
        assert!(matches!(a.matmul(&b), Err(Error::Shape(_))));
        assert!(matches!(a.transpose_matmul(&b.transpose()), Err(Error::Shape(_))));
    }

    #[test]
    fn sym_eig_matches_quadratic_oracle_on_2x2() {
        let m = DenseMatrix::from_vec(2, 2, vec![2.0, 1.0, 1.0, 3.0]).unwrap();
        let eig = sym_eig(&m).unwrap();
        let (lo, hi) = eig2_oracle(2.0, 1.0, 3.0);
        assert_relative_eq!(eig.eigenvalues[0], lo, max_relative = 1e-12);
        assert_relative_eq!(eig.eigenvalues[1], hi, max_relative = 1e-12);
    }

    #[test]
    fn sym_eig_matches_cubic_oracle_on_3x3() {
        let m = DenseMatrix::from_vec(
            3,
            3,
            vec![4.0, -2.0, 0.5, -2.0, 1.0, 1.5, 0.5, 1.5, 3.0],
        )
        .unwrap();
        let eig = sym_eig(&m).unwrap();
        let oracle = eig3_oracle(&m);
        for i in 0..3 {
            assert_relative_eq!(eig.eigenvalues[i], oracle[i], epsilon = 1e-10);
        }
    }

    #[test]
    fn sym_eig_diagonal_matrix_is_exact() {
        let m = DenseMatrix::from_vec(3, 3, vec![3.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0])
            .unwrap();
        let eig = sym_eig(&m).unwrap();
        assert_eq!(eig.eigenvalues, vec![1.0, 2.0, 3.0]);
        // Permuted identity basis with positive signs.
        for (col, expect_row) in [(0, 1), (1, 2), (2, 0)] {
            for r in 0..3 {
                let want = if r == expect_row { 1.0 } else { 0.0 };
                assert_eq!(eig.basis.get(r, col), want);
            }
        }
    }

    #[test]
    fn sym_eig_reconstructs_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [1usize, 2, 5, 16] {
            let g = DenseMatrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
            let s = g.add(&g.transpose()).unwrap().scaled(0.5);
            let eig = sym_eig(&s).unwrap();
            // U * diag(lambda) * U^T
            let mut ul = eig.basis.clone();
            for j in 0..n {
                for i in 0..n {
                    ul.set(i, j, ul.get(i, j) * eig.eigenvalues[j]);
                }
            }
            let rec = ul.matmul_transpose(&eig.basis).unwrap();
            let err = rec.sub(&s).unwrap().frobenius_norm();
            assert!(
                err <= 1e-8 * s.frobenius_norm().max(1.0),
                "reconstruction error {err} for n={n}"
            );
            // Orthonormal basis.
            let gram = eig.basis.transpose_matmul(&eig.basis).unwrap();
            let id_err = gram.sub(&DenseMatrix::identity(n)).unwrap().frobenius_norm();
            assert!(id_err < 1e-10);
        }
    }

    #[test]
    fn sym_eig_sign_convention_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = DenseMatrix::from_fn(6, 6, |_, _| StandardNormal.sample(&mut rng));
        let s = g.add(&g.transpose()).unwrap().scaled(0.5);
        let a = sym_eig(&s).unwrap();
        let b = sym_eig(&s).unwrap();
        assert_eq!(a.basis, b.basis);
        for j in 0..6 {
            let mut lead = 0;
            let mut best = 0.0;
            for k in 0..6 {
                if a.basis.get(k, j).abs() > best {
                    best = a.basis.get(k, j).abs();
                    lead = k;
                }
            }
            assert!(a.basis.get(lead, j) > 0.0);
        }
    }

    #[test]
    fn sym_eig_rejects_non_square_and_asymmetric() {
        let m = DenseMatrix::zeros(2, 3);
        assert!(matches!(sym_eig(&m), Err(Error::Shape(_))));
        let m = DenseMatrix::from_vec(2, 2, vec![1.0, 5.0, -5.0, 1.0]).unwrap();
        assert!(matches!(sym_eig(&m), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn sym_eig_zero_matrix() {
        let m = DenseMatrix::zeros(4, 4);
        let eig = sym_eig(&m).unwrap();
        assert_eq!(eig.eigenvalues, vec![0.0; 4]);
        assert_eq!(eig.basis, DenseMatrix::identity(4));
    }

    #[test]
    fn softmax_rows_matches_scalar_formula() {
        let m = DenseMatrix::from_vec(1, 2, vec![1.0, 0.0]).unwrap();
        let tau = 0.03;
        let out = softmax_rows(&m, tau).unwrap();
        let expect0 = 1.0 / (1.0 + (-1.0 / tau).exp());
        let expect1 = (-1.0 / tau).exp() / (1.0 + (-1.0 / tau).exp());
        assert_relative_eq!(out.get(0, 0), expect0, max_relative = 1e-14);
        assert_relative_eq!(out.get(0, 1), expect1, max_relative = 1e-10);
        assert!(out.get(0, 1) < 1e-14, "tail mass should be about 3e-15");
    }

    #[test]
    fn softmax_rows_survives_huge_scores() {
        let m = DenseMatrix::from_vec(1, 3, vec![1e6, 0.0, -1e6]).unwrap();
        let out = softmax_rows(&m, 1.0).unwrap();
        assert!(out.is_finite());
        assert_relative_eq!(out.row(0).iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(out.get(0, 0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn softmax_rows_rejects_bad_temperature_and_nan() {
        let m = DenseMatrix::zeros(1, 2);
        assert!(matches!(softmax_rows(&m, 0.0), Err(Error::Parameter(_))));
        assert!(matches!(softmax_rows(&m, -1.0), Err(Error::Parameter(_))));
        assert!(matches!(softmax_rows(&m, f64::NAN), Err(Error::Parameter(_))));
        let bad = DenseMatrix::from_vec(1, 2, vec![f64::NAN, 0.0]).unwrap();
        assert!(matches!(softmax_rows(&bad, 1.0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn covariance_of_differences_single_pair() {
        let pairs = vec![(vec![1.0, 2.0], vec![0.0, 0.0])];
        let cov = covariance_of_differences(&pairs).unwrap();
        assert_eq!(cov.data(), &[1.0, 2.0, 2.0, 4.0]);
    }

    #[test]
    fn covariance_of_differences_monte_carlo_matches_known_covariance() {
        // Differences drawn from N(0, diag(1, 4)); the estimate should land
        // within a few percent at this sample count.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..200_000)
            .map(|_| {
                let d0: f64 = StandardNormal.sample(&mut rng);
                let d1: f64 = StandardNormal.sample(&mut rng);
                (vec![d0, 2.0 * d1], vec![0.0, 0.0])
            })
            .collect();
        let cov = covariance_of_differences(&pairs).unwrap();
        assert_relative_eq!(cov.get(0, 0), 1.0, max_relative = 0.03);
        assert_relative_eq!(cov.get(1, 1), 4.0, max_relative = 0.03);
        assert!(cov.get(0, 1).abs() < 0.05);
    }

    #[test]
    fn covariance_of_differences_rejects_empty_and_mismatched() {
        assert!(matches!(
            covariance_of_differences(&[]),
            Err(Error::Parameter(_))
        ));
        let pairs = vec![(vec![1.0, 2.0], vec![0.0])];
        assert!(matches!(
            covariance_of_differences(&pairs),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn covariance_sampler_rejects_indefinite_matrix() {
        let m = DenseMatrix::from_vec(2, 2, vec![1.0, 2.0, 2.0, 1.0]).unwrap();
        assert!(matches!(CovarianceSampler::new(&m), Err(Error::Parameter(_))));
    }

    #[test]
    fn covariance_sampler_reproduces_target_covariance() {
        let cov = DenseMatrix::from_vec(2, 2, vec![2.0, 0.8, 0.8, 1.0]).unwrap();
        let sampler = CovarianceSampler::new(&cov).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..200_000)
            .map(|_| (sampler.sample(&mut rng), vec![0.0, 0.0]))
            .collect();
        let est = covariance_of_differences(&pairs).unwrap();
        assert_relative_eq!(est.get(0, 0), 2.0, max_relative = 0.03);
        assert_relative_eq!(est.get(1, 1), 1.0, max_relative = 0.03);
        assert_relative_eq!(est.get(0, 1), 0.8, max_relative = 0.06);
    }

    #[test]
    fn random_orthogonal_has_orthonormal_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = random_orthogonal(8, &mut rng);
        let gram = q.transpose_matmul(&q).unwrap();
        let err = gram.sub(&DenseMatrix::identity(8)).unwrap().frobenius_norm();
        assert!(err < 1e-12, "gram deviation {err}");
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(
            vals in proptest::collection::vec(-50.0f64..50.0, 2..24),
            tau in 0.01f64..10.0,
        ) {
            let cols = vals.len();
            let m = DenseMatrix::from_vec(1, cols, vals).unwrap();
            let out = softmax_rows(&m, tau).unwrap();
            let sum: f64 = out.row(0).iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            prop_assert!(out.row(0).iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn softmax_rows_shift_invariant(
            vals in proptest::collection::vec(-20.0f64..20.0, 3..12),
            shift in -100.0f64..100.0,
            tau in 0.05f64..5.0,
        ) {
            let cols = vals.len();
            let m = DenseMatrix::from_vec(1, cols, vals.clone()).unwrap();
            let shifted = DenseMatrix::from_vec(
                1, cols, vals.iter().map(|v| v + shift).collect(),
            ).unwrap();
            let a = softmax_rows(&m, tau).unwrap();
            let b = softmax_rows(&shifted, tau).unwrap();
            for j in 0..cols {
                prop_assert!((a.get(0, j) - b.get(0, j)).abs() <= 1e-12);
            }
        }

        #[test]
        fn covariance_of_differences_is_symmetric_psd(
            raw in proptest::collection::vec(-5.0f64..5.0, 24..60),
        ) {
            let dim = 3;
            let count = raw.len() / (2 * dim);
            prop_assume!(count >= 1);
            let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..count).map(|k| {
                let base = 2 * dim * k;
                (raw[base..base + dim].to_vec(), raw[base + dim..base + 2 * dim].to_vec())
            }).collect();
            let cov = covariance_of_differences(&pairs).unwrap();
            for i in 0..dim {
                for j in 0..dim {
                    prop_assert_eq!(cov.get(i, j), cov.get(j, i));
                }
            }
            let eig = sym_eig(&cov).unwrap();
            let scale = cov.max_abs().max(1.0);
            prop_assert!(eig.eigenvalues.iter().all(|&l| l >= -1e-10 * scale));
        }

        #[test]
        fn sym_eig_eigenvalues_ascending_and_reconstructing(
            raw in proptest::collection::vec(-3.0f64..3.0, 16),
        ) {
            let g = DenseMatrix::from_vec(4, 4, raw).unwrap();
            let s = g.add(&g.transpose()).unwrap().scaled(0.5);
            let eig = sym_eig(&s).unwrap();
            for w in eig.eigenvalues.windows(2) {
                prop_assert!(w[0] <= w[1]);
            }
            let mut ul = eig.basis.clone();
            for j in 0..4 {
                for i in 0..4 {
                    ul.set(i, j, ul.get(i, j) * eig.eigenvalues[j]);
                }
            }
            let rec = ul.matmul_transpose(&eig.basis).unwrap();
            let err = rec.sub(&s).unwrap().frobenius_norm();
            prop_assert!(err <= 1e-8 * s.frobenius_norm().max(1.0));
        }
    }
}
