//! Softmax cross-entropy, the feature-balanced loss and its curriculum
//! schedules, plus two simplified logit-adjustment baselines.
//!
//! Every loss returns gradients of the *batch mean* with respect to the raw
//! logits `z` and, where the loss depends on `‖f‖`, with respect to the
//! embedding features `f`.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::ClassCounts;
use crate::error::{shape_err, FblError, Result};
use crate::model::ForwardTrace;

/// How the stimulus strength `α(t)` evolves over epochs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    LinearDecrease,
    LinearIncrease,
    SineIncrease,
    CosineIncrease,
    ParabolicIncrease,
}

impl ScheduleKind {
    pub const ALL: [ScheduleKind; 5] = [
        ScheduleKind::LinearDecrease,
        ScheduleKind::LinearIncrease,
        ScheduleKind::SineIncrease,
        ScheduleKind::CosineIncrease,
        ScheduleKind::ParabolicIncrease,
    ];

    /// Multiplier in `[0, 1]` at training progress `p = t/T`.
    pub fn multiplier(self, p: f64) -> f64 {
        match self {
            ScheduleKind::LinearDecrease => 1.0 - p,
            ScheduleKind::LinearIncrease => p,
            ScheduleKind::SineIncrease => (p * FRAC_PI_2).sin(),
            ScheduleKind::CosineIncrease => 1.0 - (p * FRAC_PI_2).cos(),
            ScheduleKind::ParabolicIncrease => p * p,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScheduleKind::LinearDecrease => "linear_decrease",
            ScheduleKind::LinearIncrease => "linear_increase",
            ScheduleKind::SineIncrease => "sine_increase",
            ScheduleKind::CosineIncrease => "cosine_increase",
            ScheduleKind::ParabolicIncrease => "parabolic_increase",
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScheduleKind {
    type Err = FblError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| FblError::InvalidConfig(format!("unknown schedule `{s}`")))
    }
}

/// `alpha_max · m(t/T)` for the 1-based epoch `t`.
pub fn schedule_alpha(kind: ScheduleKind, t: usize, total: usize, alpha_max: f64) -> Result<f64> {
    if t == 0 || t > total {
        return Err(FblError::ScheduleRange { t, total });
    }
    Ok(alpha_max * kind.multiplier(t as f64 / total as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Ce,
    Fbl,
    ConstraintForm,
    #[serde(alias = "logit_adjust")]
    LogitAdjustBaseline,
    #[serde(alias = "margin")]
    MarginBaseline,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Ce => "ce",
            LossKind::Fbl => "fbl",
            LossKind::ConstraintForm => "constraint_form",
            LossKind::LogitAdjustBaseline => "logit_adjust_baseline",
            LossKind::MarginBaseline => "margin_baseline",
        }
    }

    /// Whether the loss is driven by the curriculum schedule.
    pub fn uses_schedule(self) -> bool {
        matches!(self, LossKind::Fbl | LossKind::ConstraintForm)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = FblError;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| FblError::InvalidConfig(format!("unknown loss `{s}`")))
    }
}

fn default_alpha_max() -> f64 {
    1.0
}

fn default_norm_eps() -> f64 {
    1e-8
}

fn default_tau() -> f64 {
    1.0
}

fn default_margin_scale() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub kind: LossKind,
    #[serde(default = "LossConfig::default_schedule")]
    pub schedule: ScheduleKind,
    #[serde(default = "default_alpha_max")]
    pub alpha_max: f64,
    #[serde(default = "default_norm_eps")]
    pub norm_eps: f64,
    /// Per-class stimulus intensities. Empty means "derive from the
    /// training class counts".
    #[serde(default)]
    pub lambdas: Vec<f64>,
    #[serde(default = "default_tau")]
    pub baseline_tau: f64,
    #[serde(default = "default_margin_scale")]
    pub baseline_margin_scale: f64,
    /// Treat `‖f‖` as a constant in the adjustment term.
    #[serde(default)]
    pub detach_norm: bool,
}

impl LossConfig {
    fn default_schedule() -> ScheduleKind {
        ScheduleKind::ParabolicIncrease
    }

    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            schedule: Self::default_schedule(),
            alpha_max: default_alpha_max(),
            norm_eps: default_norm_eps(),
            lambdas: Vec::new(),
            baseline_tau: default_tau(),
            baseline_margin_scale: default_margin_scale(),
            detach_norm: false,
        }
    }

    pub fn ce() -> Self {
        Self::new(LossKind::Ce)
    }

    pub fn fbl(schedule: ScheduleKind) -> Self {
        Self { schedule, ..Self::new(LossKind::Fbl) }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FblError::InvalidConfig(m));
        if !(self.alpha_max >= 0.0 && self.alpha_max.is_finite()) {
            return bad(format!("alpha_max must be finite and >= 0, got {}", self.alpha_max));
        }
        if !(self.norm_eps > 0.0 && self.norm_eps <= 1e-3) {
            return bad(format!("norm_eps must be in (0, 1e-3], got {}", self.norm_eps));
        }
        if self.lambdas.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
            return bad("lambdas must be finite and >= 0".into());
        }
        if !self.baseline_tau.is_finite() || !self.baseline_margin_scale.is_finite() {
            return bad("baseline parameters must be finite".into());
        }
        Ok(())
    }
}

/// Batch-mean loss with its gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    /// `∂L/∂z`, already divided by the batch size.
    pub dl_dz: Array2<f64>,
    /// `∂L/∂f` through the feature-norm pathway; `None` when that pathway is
    /// absent or identically zero.
    pub dl_df_extra: Option<Array2<f64>>,
    pub probs: Array2<f64>,
}

fn check_labels(logits: ArrayView2<'_, f64>, labels: &[usize]) -> Result<()> {
    if labels.len() != logits.nrows() {
        return Err(shape_err(format!("{} labels", logits.nrows()), labels.len()));
    }
    let c = logits.ncols();
    if let Some(&y) = labels.iter().find(|&&y| y >= c) {
        return Err(FblError::InvalidConfig(format!("label {y} outside [0, {c})")));
    }
    Ok(())
}

/// Per-sample `−log softmax(z)_y` and the softmax probabilities.
///
/// Uses `ln(Σ e^{z−m}) = ln_1p(Σ_{i≠argmax} e^{z_i−m})` so that tiny losses of
/// confidently classified samples do not collapse to zero.
fn xent_rows(logits: ArrayView2<'_, f64>, labels: &[usize]) -> (Vec<f64>, Array2<f64>) {
    let mut probs = Array2::zeros(logits.raw_dim());
    let mut losses = Vec::with_capacity(labels.len());
    for ((row, mut p), &y) in logits.rows().into_iter().zip(probs.rows_mut()).zip(labels) {
        let (arg, m) = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(ai, am), (i, &v)| if v > am { (i, v) } else { (ai, am) });
        let mut rest = 0.0;
        for (i, (&z, p)) in row.iter().zip(p.iter_mut()).enumerate() {
            let e = if i == arg { 1.0 } else { (z - m).exp() };
            *p = e;
            if i != arg {
                rest += e;
            }
        }
        let sum = 1.0 + rest;
        p.mapv_inplace(|e| e / sum);
        losses.push((m - row[y]) + rest.ln_1p());
    }
    (losses, probs)
}

/// `(p − onehot(y)) / b`.
fn xent_grad(probs: &Array2<f64>, labels: &[usize]) -> Array2<f64> {
    let b = labels.len() as f64;
    let mut g = probs.clone();
    for (mut row, &y) in g.rows_mut().into_iter().zip(labels) {
        row[y] -= 1.0;
        row.mapv_inplace(|v| v / b);
    }
    g
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Softmax cross-entropy over raw logits.
pub fn softmax_ce(logits: ArrayView2<'_, f64>, labels: &[usize]) -> Result<LossOutput> {
    check_labels(logits, labels)?;
    let (losses, probs) = xent_rows(logits, labels);
    Ok(LossOutput {
        loss: mean(&losses),
        dl_dz: xent_grad(&probs, labels),
        dl_df_extra: None,
        probs,
    })
}

/// Feature-balanced logits: `z_j − alpha·λ_j / max(‖f‖, norm_eps)`.
pub fn fbl_logits(
    logits: ArrayView2<'_, f64>,
    feature_norms: &[f64],
    lambdas: &[f64],
    alpha: f64,
    norm_eps: f64,
) -> Result<Array2<f64>> {
    if feature_norms.len() != logits.nrows() {
        return Err(shape_err(format!("{} feature norms", logits.nrows()), feature_norms.len()));
    }
    if lambdas.len() != logits.ncols() {
        return Err(shape_err(format!("{} lambdas", logits.ncols()), lambdas.len()));
    }
    let mut out = logits.to_owned();
    for (mut row, &n) in out.rows_mut().into_iter().zip(feature_norms) {
        let n = n.max(norm_eps);
        for (z, &l) in row.iter_mut().zip(lambdas) {
            *z -= alpha * l / n;
        }
    }
    Ok(out)
}

/// Feature-balanced loss on precomputed activations with an explicit `alpha`.
///
/// The feature gradient differentiates `−αλ_j/‖f‖`, giving
/// `Σ_j ∂L/∂z^b_j · αλ_j · f / ‖f‖³` per sample; it is zero where
/// `‖f‖ <= norm_eps` (the adjustment is constant there) or when
/// `detach_norm` is set.
pub fn fbl_loss_at(
    trace: &ForwardTrace,
    labels: &[usize],
    lambdas: &[f64],
    alpha: f64,
    norm_eps: f64,
    detach_norm: bool,
) -> Result<LossOutput> {
    check_labels(trace.logits.view(), labels)?;
    let adjusted = fbl_logits(trace.logits.view(), &trace.feature_norms, lambdas, alpha, norm_eps)?;
    let mut out = softmax_ce(adjusted.view(), labels)?;

    let active = !detach_norm && alpha != 0.0 && lambdas.iter().any(|&l| l != 0.0);
    if active {
        let mut extra = Array2::zeros(trace.features.raw_dim());
        for (s, mut row) in extra.rows_mut().into_iter().enumerate() {
            let n = trace.feature_norms[s];
            if n <= norm_eps {
                continue;
            }
            let weighted: f64 = out.dl_dz.row(s).iter().zip(lambdas).map(|(g, l)| g * alpha * l).sum();
            let coef = weighted / (n * n * n);
            row.assign(&trace.features.row(s).mapv(|f| coef * f));
        }
        out.dl_df_extra = Some(extra);
    }
    Ok(out)
}

fn resolve_lambdas(cfg: &LossConfig, classes: usize) -> Result<&[f64]> {
    if cfg.lambdas.len() != classes {
        return Err(shape_err(format!("{classes} lambdas"), cfg.lambdas.len()));
    }
    Ok(&cfg.lambdas)
}

/// Feature-balanced loss at epoch `t` of `total`, with `α = schedule_alpha(t)`.
pub fn fbl_loss(
    trace: &ForwardTrace,
    labels: &[usize],
    cfg: &LossConfig,
    t: usize,
    total: usize,
) -> Result<LossOutput> {
    let lambdas = resolve_lambdas(cfg, trace.logits.ncols())?;
    let alpha = schedule_alpha(cfg.schedule, t, total, cfg.alpha_max)?;
    fbl_loss_at(trace, labels, lambdas, alpha, cfg.norm_eps, cfg.detach_norm)
}

/// Per-sample `−log softmax(z)_y + alpha·λ_y/‖f‖` (additive-penalty form).
pub fn constraint_form_per_sample(
    trace: &ForwardTrace,
    labels: &[usize],
    lambdas: &[f64],
    alpha: f64,
    norm_eps: f64,
) -> Result<Vec<f64>> {
    check_labels(trace.logits.view(), labels)?;
    if lambdas.len() != trace.logits.ncols() {
        return Err(shape_err(format!("{} lambdas", trace.logits.ncols()), lambdas.len()));
    }
    let (ce, _) = xent_rows(trace.logits.view(), labels);
    Ok(ce
        .into_iter()
        .zip(labels)
        .zip(&trace.feature_norms)
        .map(|((l, &y), &n)| l + alpha * lambdas[y] / n.max(norm_eps))
        .collect())
}

/// Batch mean of the additive-penalty form at epoch `t` of `total`.
pub fn constraint_form_loss(
    trace: &ForwardTrace,
    labels: &[usize],
    cfg: &LossConfig,
    t: usize,
    total: usize,
) -> Result<f64> {
    let lambdas = resolve_lambdas(cfg, trace.logits.ncols())?;
    let alpha = schedule_alpha(cfg.schedule, t, total, cfg.alpha_max)?;
    Ok(mean(&constraint_form_per_sample(trace, labels, lambdas, alpha, cfg.norm_eps)?))
}

/// Additive-penalty form with gradients, for training with it directly.
/// Probabilities are the plain softmax of `z` and do not include the penalty.
fn constraint_form_output(
    trace: &ForwardTrace,
    labels: &[usize],
    lambdas: &[f64],
    alpha: f64,
    norm_eps: f64,
    detach_norm: bool,
) -> Result<LossOutput> {
    let per_sample = constraint_form_per_sample(trace, labels, lambdas, alpha, norm_eps)?;
    let mut out = softmax_ce(trace.logits.view(), labels)?;
    out.loss = mean(&per_sample);
    if !detach_norm && alpha != 0.0 && labels.iter().any(|&y| lambdas[y] != 0.0) {
        let b = labels.len() as f64;
        let mut extra = Array2::zeros(trace.features.raw_dim());
        for (s, mut row) in extra.rows_mut().into_iter().enumerate() {
            let n = trace.feature_norms[s];
            if n <= norm_eps {
                continue;
            }
            let coef = -alpha * lambdas[labels[s]] / (n * n * n) / b;
            row.assign(&trace.features.row(s).mapv(|f| coef * f));
        }
        out.dl_df_extra = Some(extra);
    }
    Ok(out)
}

/// Simplified logit adjustment: softmax-CE over `z_j + τ·log(n_j/N)`.
pub fn baseline_logit_adjust(
    logits: ArrayView2<'_, f64>,
    labels: &[usize],
    counts: &ClassCounts,
    tau: f64,
) -> Result<LossOutput> {
    if counts.num_classes() != logits.ncols() {
        return Err(shape_err(format!("{} classes", logits.ncols()), counts.num_classes()));
    }
    let total = counts.total() as f64;
    let shift: Vec<f64> = counts.as_slice().iter().map(|&n| tau * (n as f64 / total).ln()).collect();
    let mut adjusted = logits.to_owned();
    for mut row in adjusted.rows_mut() {
        row.iter_mut().zip(&shift).for_each(|(z, s)| *z += s);
    }
    softmax_ce(adjusted.view(), labels)
}

/// Simplified label-distribution-aware margin: the target logit is lowered
/// by `scale / n_y^{1/4}`.
pub fn baseline_margin(
    logits: ArrayView2<'_, f64>,
    labels: &[usize],
    counts: &ClassCounts,
    scale: f64,
) -> Result<LossOutput> {
    if counts.num_classes() != logits.ncols() {
        return Err(shape_err(format!("{} classes", logits.ncols()), counts.num_classes()));
    }
    check_labels(logits, labels)?;
    let mut adjusted = logits.to_owned();
    for (mut row, &y) in adjusted.rows_mut().into_iter().zip(labels) {
        row[y] -= scale / (counts.as_slice()[y] as f64).powf(0.25);
    }
    softmax_ce(adjusted.view(), labels)
}

/// Dispatches on `cfg.kind` with an already-evaluated `alpha`.
///
/// `lambdas` must have one entry per class; baselines read `counts`.
pub fn compute_loss(
    trace: &ForwardTrace,
    labels: &[usize],
    cfg: &LossConfig,
    alpha: f64,
    lambdas: &[f64],
    counts: &ClassCounts,
) -> Result<LossOutput> {
    match cfg.kind {
        LossKind::Ce => softmax_ce(trace.logits.view(), labels),
        LossKind::Fbl => fbl_loss_at(trace, labels, lambdas, alpha, cfg.norm_eps, cfg.detach_norm),
        LossKind::ConstraintForm => {
            constraint_form_output(trace, labels, lambdas, alpha, cfg.norm_eps, cfg.detach_norm)
        }
        LossKind::LogitAdjustBaseline => {
            baseline_logit_adjust(trace.logits.view(), labels, counts, cfg.baseline_tau)
        }
        LossKind::MarginBaseline => {
            baseline_margin(trace.logits.view(), labels, counts, cfg.baseline_margin_scale)
        }
    }
}

/// Row sums of `probs`, for normalization checks.
pub fn prob_row_sums(probs: &Array2<f64>) -> Vec<f64> {
    probs.sum_axis(Axis(1)).to_vec()
}
