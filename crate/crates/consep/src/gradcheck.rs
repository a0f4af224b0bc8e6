//! Randomized finite-difference validation of the analytic gradients.
//!
//! Every loss the trainer differentiates — the cycle loss, the KL
//! separability term, and their weighted total — is checked end-to-end
//! through both head variants: random inputs and jittered parameters, then
//! every single trainable parameter compared against a Richardson-
//! extrapolated central difference. A check fails only when the relative
//! and the absolute error are both out of tolerance, so nearly-flat
//! coordinates do not produce false alarms.
//!
//! The suite builds its heads with a larger normalization epsilon than the
//! production default. The backward formulas treat the epsilon as an
//! opaque constant — the same code path runs at any value — but a tiny
//! epsilon makes the normalization nearly non-differentiable at rows with
//! near-tied entries, where no finite-difference stencil is trustworthy;
//! a moderate epsilon keeps the comparison meaningful everywhere.

use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;
use crate::objective::{kl_regularizer, total_loss};
use crate::projection::{
    init_linear, init_mlp, project_backward, project_rows, NormMode, ProjectionParams,
    ProjectionVariant,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

/// Absolute-error floor of the pass criterion: a check with absolute error
/// at or below this passes regardless of relative error.
pub const GRADCHECK_ABS_FLOOR: f64 = 1e-8;

/// Normalization epsilon used for the heads built by the suite (see the
/// module docs for why it is larger than the production default).
pub const GRADCHECK_EPS_LN: f64 = 1e-3;

/// Configuration of the finite-difference suite.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    /// Random problem instances; each runs every loss/head combination.
    pub instances: usize,
    pub seed: u64,
    /// Base step of the central-difference stencil.
    pub step: f64,
    /// Relative-error threshold of the pass criterion.
    pub tolerance: f64,
    /// Softmax temperature for the checks. Moderate values keep the
    /// finite-difference stencil well-conditioned; the gradient code paths
    /// are the same at any temperature.
    pub temperature: f64,
    /// Regularization weight used by the total-loss checks.
    pub lambda: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            instances: 100,
            seed: 0,
            step: 1e-5,
            tolerance: 1e-6,
            temperature: 0.5,
            lambda: 0.7,
        }
    }
}

impl GradCheckConfig {
    pub fn validate(&self) -> Result<()> {
        if self.instances == 0 {
            return Err(Error::Parameter("gradient suite needs at least one instance".into()));
        }
        for (name, value) in [
            ("step", self.step),
            ("tolerance", self.tolerance),
            ("temperature", self.temperature),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Parameter(format!(
                    "{name} must be positive and finite, got {value}"
                )));
            }
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Parameter(format!(
                "lambda must be non-negative and finite, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Aggregate over one loss/head combination.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckCase {
    pub label: String,
    pub checks: usize,
    pub failures: usize,
    /// Largest relative error among checks whose absolute error exceeded
    /// the floor; zero when every deviation was absolutely negligible.
    pub worst_rel_err: f64,
}

/// Outcome of the whole suite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub total_checks: usize,
    pub failures: usize,
    pub worst_rel_err: f64,
    pub worst_abs_err: f64,
    pub cases: Vec<GradCheckCase>,
}

impl GradCheckReport {
    pub fn all_passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Debug, Clone, Copy)]
enum LossKind {
    Cycle,
    Kl,
    Total,
}

impl LossKind {
    fn name(self) -> &'static str {
        match self {
            LossKind::Cycle => "cycle",
            LossKind::Kl => "kl",
            LossKind::Total => "total",
        }
    }
}

fn variant_name(variant: ProjectionVariant) -> &'static str {
    match variant {
        ProjectionVariant::Linear => "linear",
        ProjectionVariant::Mlp => "mlp",
    }
}

/// Scalar loss value for the given head parameters.
fn loss_value(
    kind: LossKind,
    head: &ProjectionParams,
    inputs: &[DenseMatrix; 3],
    temperature: f64,
    lambda: f64,
) -> Result<f64> {
    let mut projected = Vec::with_capacity(3);
    for x in inputs {
        let (p, _) = project_rows(head, x, NormMode::LayerNorm)?;
        projected.push(p);
    }
    match kind {
        LossKind::Cycle => {
            let loss = total_loss(
                [&projected[0], &projected[1], &projected[2]],
                [&inputs[0], &inputs[1], &inputs[2]],
                0.0,
                temperature,
            )?;
            Ok(loss.report.cyc)
        }
        LossKind::Kl => {
            let pairs = [
                (&projected[0], &inputs[0]),
                (&projected[1], &inputs[1]),
                (&projected[2], &inputs[2]),
            ];
            Ok(kl_regularizer(&pairs)?.value)
        }
        LossKind::Total => {
            let loss = total_loss(
                [&projected[0], &projected[1], &projected[2]],
                [&inputs[0], &inputs[1], &inputs[2]],
                lambda,
                temperature,
            )?;
            Ok(loss.report.total)
        }
    }
}

/// Scalar loss and its analytic gradient with respect to the flattened
/// trainable parameters, chained through the projection backward pass.
fn loss_and_gradient(
    kind: LossKind,
    head: &ProjectionParams,
    inputs: &[DenseMatrix; 3],
    temperature: f64,
    lambda: f64,
) -> Result<(f64, Vec<f64>)> {
    let mut projected = Vec::with_capacity(3);
    let mut caches = Vec::with_capacity(3);
    for x in inputs {
        let (p, cache) = project_rows(head, x, NormMode::LayerNorm)?;
        projected.push(p);
        caches.push(cache);
    }
    let (value, upstream) = match kind {
        LossKind::Cycle | LossKind::Total => {
            let weight = match kind {
                LossKind::Cycle => 0.0,
                _ => lambda,
            };
            let loss = total_loss(
                [&projected[0], &projected[1], &projected[2]],
                [&inputs[0], &inputs[1], &inputs[2]],
                weight,
                temperature,
            )?;
            let value = match kind {
                LossKind::Cycle => loss.report.cyc,
                _ => loss.report.total,
            };
            (value, vec![loss.d_forward, loss.d_intermediate, loss.d_backward])
        }
        LossKind::Kl => {
            let pairs = [
                (&projected[0], &inputs[0]),
                (&projected[1], &inputs[1]),
                (&projected[2], &inputs[2]),
            ];
            let kl = kl_regularizer(&pairs)?;
            (kl.value, kl.grads)
        }
    };
    let mut flat: Option<crate::projection::ProjectionGrads> = None;
    for (cache, up) in caches.iter().zip(&upstream) {
        let bundle = project_backward(head, cache, up)?;
        match &mut flat {
            None => flat = Some(bundle.params),
            Some(acc) => acc.add_assign(&bundle.params)?,
        }
    }
    let grads = flat.expect("three frames were processed").to_flat();
    Ok((value, grads))
}

struct CheckOutcome {
    rel_err: f64,
    abs_err: f64,
    passed: bool,
}

/// The dual pass criterion: out of tolerance only when both the relative
/// and the absolute deviation are.
fn judge(numeric: f64, analytic: f64, tolerance: f64) -> CheckOutcome {
    let abs_err = (numeric - analytic).abs();
    let scale = numeric.abs().max(analytic.abs()).max(f64::MIN_POSITIVE);
    let rel_err = abs_err / scale;
    let passed = rel_err <= tolerance || abs_err <= GRADCHECK_ABS_FLOOR;
    CheckOutcome { rel_err, abs_err, passed }
}

/// Checks every parameter coordinate of one loss/head combination against
/// a Richardson-extrapolated central difference: `(4 D(h/2) − D(h)) / 3`
/// cancels the leading second-order stencil error.
fn check_all_coordinates(
    kind: LossKind,
    head: &ProjectionParams,
    inputs: &[DenseMatrix; 3],
    config: &GradCheckConfig,
) -> Result<Vec<CheckOutcome>> {
    let (_, grads) = loss_and_gradient(kind, head, inputs, config.temperature, config.lambda)?;
    let base = head.trainable_flat();
    let mut scratch = head.clone();
    let mut flat = base.clone();
    let mut eval = |i: usize, h: f64| -> Result<f64> {
        flat[i] = base[i] + h;
        scratch.set_trainable_flat(&flat)?;
        let value = loss_value(kind, &scratch, inputs, config.temperature, config.lambda)?;
        flat[i] = base[i];
        Ok(value)
    };
    let h = config.step;
    let mut outcomes = Vec::with_capacity(grads.len());
    for (i, &analytic) in grads.iter().enumerate() {
        let d_full = (eval(i, h)? - eval(i, -h)?) / (2.0 * h);
        let d_half = (eval(i, h / 2.0)? - eval(i, -h / 2.0)?) / h;
        let numeric = (4.0 * d_half - d_full) / 3.0;
        outcomes.push(judge(numeric, analytic, config.tolerance));
    }
    Ok(outcomes)
}

/// Runs the full finite-difference suite and aggregates per-combination
/// statistics.
pub fn run_gradient_suite(config: &GradCheckConfig) -> Result<GradCheckReport> {
    config.validate()?;
    let combos: Vec<(LossKind, ProjectionVariant)> = [
        LossKind::Cycle,
        LossKind::Kl,
        LossKind::Total,
    ]
    .iter()
    .flat_map(|&kind| {
        [ProjectionVariant::Linear, ProjectionVariant::Mlp]
            .iter()
            .map(move |&variant| (kind, variant))
            .collect::<Vec<_>>()
    })
    .collect();

    let mut cases: Vec<GradCheckCase> = combos
        .iter()
        .map(|&(kind, variant)| GradCheckCase {
            label: format!("{}/{}", kind.name(), variant_name(variant)),
            checks: 0,
            failures: 0,
            worst_rel_err: 0.0,
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut total_checks = 0;
    let mut failures = 0;
    let mut worst_rel_err = 0.0_f64;
    let mut worst_abs_err = 0.0_f64;

    for _ in 0..config.instances {
        let d = rng.random_range(2..=8usize);
        let n = rng.random_range(2..=8usize);
        let inputs: [DenseMatrix; 3] = std::array::from_fn(|_| {
            DenseMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng))
        });

        for (case_idx, &(kind, variant)) in combos.iter().enumerate() {
            let mut head = match variant {
                ProjectionVariant::Linear => init_linear(d, &mut rng),
                ProjectionVariant::Mlp => init_mlp(d, &mut rng),
            };
            match &mut head {
                ProjectionParams::Linear(p) => p.eps_ln = GRADCHECK_EPS_LN,
                ProjectionParams::Mlp(p) => p.eps_ln = GRADCHECK_EPS_LN,
            }
            // Jitter every trainable entry so the gain/bias branches of the
            // normalization backward pass carry signal too.
            let mut flat = head.trainable_flat();
            for v in &mut flat {
                let g: f64 = StandardNormal.sample(&mut rng);
                *v += 0.2 * g;
            }
            head.set_trainable_flat(&flat)?;

            let outcomes = check_all_coordinates(kind, &head, &inputs, config)?;
            let case = &mut cases[case_idx];
            for outcome in outcomes {
                total_checks += 1;
                case.checks += 1;
                if outcome.abs_err > GRADCHECK_ABS_FLOOR {
                    case.worst_rel_err = case.worst_rel_err.max(outcome.rel_err);
                    worst_rel_err = worst_rel_err.max(outcome.rel_err);
                }
                worst_abs_err = worst_abs_err.max(outcome.abs_err);
                if !outcome.passed {
                    case.failures += 1;
                    failures += 1;
                }
            }
        }
    }

    Ok(GradCheckReport { total_checks, failures, worst_rel_err, worst_abs_err, cases })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_on_the_analytic_gradients() {
        let config = GradCheckConfig { instances: 25, ..GradCheckConfig::default() };
        let report = run_gradient_suite(&config).unwrap();
        assert_eq!(report.failures, 0, "worst relative error {}", report.worst_rel_err);
        assert!(report.all_passed());
        assert_eq!(report.cases.len(), 6);
        let total: usize = report.cases.iter().map(|c| c.checks).sum();
        assert_eq!(report.total_checks, total);
        for case in &report.cases {
            // Every combination checks every trainable coordinate of every
            // instance, so there are far more checks than instances.
            assert!(case.checks >= 25 * (2 * 2 + 2 * 2));
            assert_eq!(case.failures, 0, "{} failed", case.label);
        }
        let labels: Vec<&str> = report.cases.iter().map(|c| c.label.as_str()).collect();
        assert!(labels.contains(&"cycle/linear"));
        assert!(labels.contains(&"total/mlp"));
        // The three loss kinds see identical head shapes per variant.
        let checks_of = |label: &str| {
            report.cases.iter().find(|c| c.label == label).map(|c| c.checks).unwrap()
        };
        assert_eq!(checks_of("cycle/linear"), checks_of("kl/linear"));
        assert_eq!(checks_of("cycle/mlp"), checks_of("total/mlp"));
    }

    #[test]
    fn suite_is_deterministic() {
        let config = GradCheckConfig { instances: 5, ..GradCheckConfig::default() };
        let a = run_gradient_suite(&config).unwrap();
        let b = run_gradient_suite(&config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn criterion_flags_corrupted_derivatives_only() {
        // A scaled-up analytic derivative is both relatively and absolutely
        // wrong and must fail.
        assert!(!judge(1.0, 1.5, 1e-6).passed);
        // A deviation below the absolute floor passes even at huge relative
        // error (flat directions).
        assert!(judge(1e-10, 5e-10, 1e-6).passed);
        // A deviation below the relative tolerance passes even when large
        // in absolute terms.
        assert!(judge(1e4, 1e4 * (1.0 + 1e-8), 1e-6).passed);
        // Exact agreement is a clean pass.
        let exact = judge(0.25, 0.25, 1e-6);
        assert!(exact.passed && exact.abs_err == 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(GradCheckConfig::default().validate().is_ok());
        assert!(GradCheckConfig { instances: 0, ..Default::default() }.validate().is_err());
        assert!(GradCheckConfig { step: 0.0, ..Default::default() }.validate().is_err());
        assert!(GradCheckConfig { lambda: -1.0, ..Default::default() }.validate().is_err());
    }
}
