//! Invariant suites run by `fbl verify`: gradient checks, the penalty-form
//! identity, probability normalization, loss monotonicity in the feature
//! norm, schedule bounds and the λ = 0 / α = 0 reductions.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::gradcheck::{check_gradients, GradCheckConfig};
use crate::loss::{
    constraint_form_per_sample, fbl_logits, fbl_loss_at, prob_row_sums, schedule_alpha, softmax_ce, ScheduleKind,
};
use crate::model::{forward, ForwardTrace, Model};

pub const GRADIENT_TOLERANCE: f64 = 1e-4;
pub const IDENTITY_TOLERANCE: f64 = 1e-10;
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub name: String,
    pub passed: bool,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub suites: Vec<SuiteReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Flip the sign of the feature-norm gradient inside the gradient checks.
    pub inject_sign_flip: bool,
}

/// A tiny network and batch whose features all have `‖f‖ >= 0.1` and whose
/// pre-activations all sit at least `1e-3` from the ReLU kink, keeping
/// finite differences away from the `1/‖f‖` singularity and from
/// non-differentiable points.
pub fn tiny_problem(rng: &mut ChaCha8Rng) -> (Model, Array2<f64>, Vec<usize>) {
    let (d_in, h, d, c, b) = (3, 4, 3, 3, 2);
    loop {
        let mut m = Model::init(d_in, h, d, c, rng.random());
        m.hidden_b = Array1::from_shape_simple_fn(h, || rng.random_range(-0.5..0.5));
        m.embed_b = Array1::from_shape_simple_fn(d, || rng.random_range(0.0..0.5));
        let x = Array2::from_shape_simple_fn((b, d_in), || rng.random_range(-2.0..2.0));
        let y: Vec<usize> = (0..b).map(|_| rng.random_range(0..c)).collect();
        let tr = forward(&m, x.view()).expect("shapes agree");
        let clear_of_kink = tr.hidden_pre.iter().chain(tr.feature_pre.iter()).all(|v| v.abs() >= 1e-3);
        if clear_of_kink && tr.feature_norms.iter().all(|&n| n >= 0.1) {
            return (m, x, y);
        }
    }
}

pub fn gradient_suite(name: &str, fbl: bool, opts: &VerifyOptions) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ if fbl { 0xfb1 } else { 0xce });
    let cfg = GradCheckConfig { flip_feature_gradient: opts.inject_sign_flip, ..Default::default() };
    let cases = 24;
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    for _ in 0..cases {
        let (m, x, y) = tiny_problem(&mut rng);
        let report = if fbl {
            let lambdas = [0.0, rng.random_range(0.2..2.0), rng.random_range(2.0..4.6)];
            let alpha = rng.random_range(0.5..2.0);
            check_gradients(&m, x.view(), |tr| fbl_loss_at(tr, &y, &lambdas, alpha, 1e-8, false), &cfg)?
        } else {
            check_gradients(&m, x.view(), |tr| softmax_ce(tr.logits.view(), &y), &cfg)?
        };
        worst = worst.max(report.max_rel_error);
        if report.max_rel_error.is_nan() {
            worst = f64::NAN;
        }
        compared += report.compared;
    }
    Ok(SuiteReport {
        name: name.into(),
        passed: worst < GRADIENT_TOLERANCE,
        cases,
        max_error: worst,
        tolerance: GRADIENT_TOLERANCE,
        detail: format!("{compared} coordinates compared by central differences (step 1e-5)"),
    })
}

fn random_trace(rng: &mut ChaCha8Rng, b: usize, c: usize, d: usize) -> ForwardTrace {
    let features: Array2<f64> = Array2::from_shape_simple_fn((b, d), || rng.random_range(0.0..3.0));
    let classifier = Array2::from_shape_simple_fn((d, c), || rng.random_range(-1.5..1.5));
    let logits = features.dot(&classifier);
    let feature_norms = features.rows().into_iter().map(|f| f.dot(&f).sqrt()).collect();
    ForwardTrace {
        input: features.clone(),
        hidden_pre: features.clone(),
        hidden: features.clone(),
        feature_pre: features.clone(),
        features,
        feature_norms,
        logits,
    }
}

/// `−log(e^{z_y − a} / Σ_j e^{z_j})`, evaluated directly.
pub fn single_log_form(z: &[f64], y: usize, shift: f64) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    -((z[y] - shift) - lse)
}

pub fn identity_suite(seed: u64, cases: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1d);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let c = rng.random_range(2..12);
        let d = rng.random_range(2..8);
        let tr = random_trace(&mut rng, 1, c, d);
        let y = vec![rng.random_range(0..c)];
        let lambdas: Vec<f64> = (0..c).map(|j| if j == 0 { 0.0 } else { rng.random_range(0.0..5.0) }).collect();
        let alpha = rng.random_range(0.0..3.0);
        let got = constraint_form_per_sample(&tr, &y, &lambdas, alpha, 1e-8)?[0];
        let shift = alpha * lambdas[y[0]] / tr.feature_norms[0].max(1e-8);
        let expected = single_log_form(tr.logits.row(0).as_slice().unwrap(), y[0], shift);
        worst = worst.max((got - expected).abs());
    }
    Ok(SuiteReport {
        name: "constraint_form_identity".into(),
        passed: worst <= IDENTITY_TOLERANCE,
        cases,
        max_error: worst,
        tolerance: IDENTITY_TOLERANCE,
        detail: "additive penalty form vs single-log rewrite, per sample".into(),
    })
}

pub fn normalization_suite(seed: u64, cases: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x50);
    let mut worst: f64 = 0.0;
    let mut finite = true;
    for _ in 0..cases {
        let c = rng.random_range(2..12);
        let b = rng.random_range(1..6);
        let d = rng.random_range(2..8);
        let tr = random_trace(&mut rng, b, c, d);
        let y: Vec<usize> = (0..b).map(|_| rng.random_range(0..c)).collect();
        let lambdas: Vec<f64> = (0..c).map(|j| j as f64 * rng.random_range(0.0..1.0)).collect();
        let out = fbl_loss_at(&tr, &y, &lambdas, rng.random_range(0.0..5.0), 1e-8, false)?;
        finite &= out.loss.is_finite();
        for s in prob_row_sums(&out.probs) {
            worst = worst.max((s - 1.0).abs());
        }
    }
    Ok(SuiteReport {
        name: "probability_normalization".into(),
        passed: finite && worst <= NORMALIZATION_TOLERANCE,
        cases,
        max_error: worst,
        tolerance: NORMALIZATION_TOLERANCE,
        detail: "feature-balanced softmax rows sum to one".into(),
    })
}

/// Scales used when probing loss monotonicity in the feature norm.
pub const NORM_SCALES: [f64; 5] = [0.5, 1.0, 2.0, 4.0, 8.0];

/// Softmax-CE of a correctly classified sample at each feature scale in
/// [`NORM_SCALES`], with the classifier and feature direction held fixed.
pub fn loss_along_norm(classifier: &Array2<f64>, direction: &Array1<f64>) -> (usize, Vec<f64>) {
    let base = direction.dot(classifier);
    let y = crate::metrics::argmax(base.iter().copied());
    let losses = NORM_SCALES
        .iter()
        .map(|&c| {
            let z = (&base * c).insert_axis(ndarray::Axis(0));
            softmax_ce(z.view(), &[y]).expect("label in range").loss
        })
        .collect();
    (y, losses)
}

pub fn monotonicity_suite(seed: u64, cases: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x2);
    let mut failures = 0;
    let mut worst_step = f64::NEG_INFINITY;
    for _ in 0..cases {
        let (d, c) = (rng.random_range(2..10), rng.random_range(2..10));
        let w = Array2::from_shape_simple_fn((d, c), || rng.random_range(-1.0..1.0));
        let mut f: Array1<f64> = Array1::from_shape_simple_fn(d, || rng.random_range(-1.0..1.0));
        let norm = f.dot(&f).sqrt();
        f /= norm;
        let (_, losses) = loss_along_norm(&w, &f);
        for pair in losses.windows(2) {
            worst_step = worst_step.max(pair[1] - pair[0]);
        }
        if losses.windows(2).any(|p| p[1] >= p[0]) {
            failures += 1;
        }
    }
    Ok(SuiteReport {
        name: "feature_norm_monotonicity".into(),
        passed: failures == 0,
        cases,
        max_error: worst_step,
        tolerance: 0.0,
        detail: format!("{failures} configurations where CE did not strictly decrease with ‖f‖"),
    })
}

pub fn schedule_suite() -> Result<SuiteReport> {
    let mut violations = 0;
    let mut cases = 0;
    for total in [1usize, 2, 7, 50, 200] {
        for kind in ScheduleKind::ALL {
            cases += 1;
            let v: Vec<f64> = (1..=total).map(|t| schedule_alpha(kind, t, total, 2.5)).collect::<Result<_>>()?;
            let bounded = v.iter().all(|a| (0.0..=2.5).contains(a));
            let monotone = match kind {
                ScheduleKind::LinearDecrease => v.windows(2).all(|w| w[1] <= w[0]),
                _ => v.windows(2).all(|w| w[1] >= w[0]),
            };
            if !(bounded && monotone) {
                violations += 1;
            }
        }
    }
    Ok(SuiteReport {
        name: "schedule_bounds".into(),
        passed: violations == 0,
        cases,
        max_error: violations as f64,
        tolerance: 0.0,
        detail: "α(t) within [0, alpha_max] and monotone in the stated direction".into(),
    })
}

pub fn reduction_suite(seed: u64, cases: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7);
    let mut mismatches = 0;
    for _ in 0..cases {
        let c = rng.random_range(2..8);
        let b = rng.random_range(1..5);
        let tr = random_trace(&mut rng, b, c, 4);
        let y: Vec<usize> = (0..b).map(|_| rng.random_range(0..c)).collect();
        let ce = softmax_ce(tr.logits.view(), &y)?;
        let zero = vec![0.0; c];
        let some: Vec<f64> = (0..c).map(|j| j as f64).collect();
        let by_lambda = fbl_loss_at(&tr, &y, &zero, rng.random_range(0.1..3.0), 1e-8, false)?;
        let by_alpha = fbl_loss_at(&tr, &y, &some, 0.0, 1e-8, false)?;
        let logits_same = fbl_logits(tr.logits.view(), &tr.feature_norms, &some, 0.0, 1e-8)? == tr.logits;
        if by_lambda != ce || by_alpha != ce || !logits_same {
            mismatches += 1;
        }
    }
    Ok(SuiteReport {
        name: "ce_reduction".into(),
        passed: mismatches == 0,
        cases,
        max_error: mismatches as f64,
        tolerance: 0.0,
        detail: "λ = 0 or α = 0 reproduces softmax-CE bit for bit".into(),
    })
}

pub fn run_all(opts: &VerifyOptions) -> Result<VerifyReport> {
    let suites = vec![
        gradient_suite("gradient_check_ce", false, opts)?,
        gradient_suite("gradient_check_fbl", true, opts)?,
        identity_suite(opts.seed, 1000)?,
        normalization_suite(opts.seed, 1000)?,
        monotonicity_suite(opts.seed, 100)?,
        schedule_suite()?,
        reduction_suite(opts.seed, 200)?,
    ];
    Ok(VerifyReport { passed: suites.iter().all(|s| s.passed), suites })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_suites_pass() {
        let report = run_all(&VerifyOptions::default()).unwrap();
        for s in &report.suites {
            assert!(s.passed, "{s:?}");
        }
        assert!(report.suites.len() >= 5);
    }

    #[test]
    fn sign_flip_is_caught() {
        let opts = VerifyOptions { inject_sign_flip: true, ..Default::default() };
        let s = gradient_suite("gradient_check_fbl", true, &opts).unwrap();
        assert!(!s.passed, "{s:?}");
        // CE has no feature-norm pathway to flip.
        assert!(gradient_suite("gradient_check_ce", false, &opts).unwrap().passed);
    }
}
