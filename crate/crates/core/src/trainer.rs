//! Epoch loop: seeded shuffling, per-epoch `α(t)`, loss dispatch, momentum
//! SGD with step-wise learning-rate annealing, and per-epoch metrics.

use std::time::Instant;

use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{lambda_vector, stream, Dataset};
use crate::error::{shape_err, FblError, Result};
use crate::loss::{compute_loss, schedule_alpha, LossConfig};
use crate::metrics::{accuracy_from_logits, adjusted_logits, collect, EpochMetrics};
use crate::model::{backward, forward, sgd_step, Model, OptimState};

/// Divide the learning rate by `divisor` from `epoch` on (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Milestone {
    pub epoch: usize,
    pub divisor: f64,
}

/// Layer widths used when the CLI builds a fresh model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub hidden: usize,
    pub embed: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self { hidden: 64, embed: 32 }
    }
}

fn default_momentum() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub lr_milestones: Vec<Milestone>,
    #[serde(default)]
    pub seed: u64,
    pub loss: LossConfig,
    #[serde(default)]
    pub model: ModelSpec,
    /// Evaluate with feature-balanced logits at the epoch's `α` instead of raw logits.
    #[serde(default)]
    pub adjust_at_eval: bool,
}

impl Default for TrainConfig {
    /// Desk-scale version of the CIFAR-LT recipe: 200 epochs, batch 64,
    /// lr divided by 100 at epochs 160 and 180.
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            lr: 0.05,
            momentum: default_momentum(),
            weight_decay: 0.0,
            lr_milestones: vec![Milestone { epoch: 160, divisor: 100.0 }, Milestone { epoch: 180, divisor: 100.0 }],
            seed: 0,
            loss: LossConfig::ce(),
            model: ModelSpec::default(),
            adjust_at_eval: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FblError::InvalidConfig(m));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be finite and >= 0, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be finite and >= 0, got {}", self.weight_decay));
        }
        if self.lr_milestones.windows(2).any(|w| w[1].epoch <= w[0].epoch) {
            return bad("lr_milestones must be strictly ascending".into());
        }
        if self.lr_milestones.iter().any(|m| !(m.divisor > 0.0 && m.divisor.is_finite())) {
            return bad("milestone divisors must be finite and > 0".into());
        }
        if self.model.hidden == 0 || self.model.embed == 0 {
            return bad("model widths must be >= 1".into());
        }
        self.loss.validate()
    }

    /// Learning rate in effect during epoch `t` (1-based).
    pub fn lr_at_epoch(&self, t: usize) -> f64 {
        self.lr_milestones
            .iter()
            .filter(|m| m.epoch <= t)
            .fold(self.lr, |lr, m| lr / m.divisor)
    }

    /// `α` used during epoch `t`; zero for losses without a schedule.
    pub fn alpha_at_epoch(&self, t: usize) -> Result<f64> {
        if self.loss.kind.uses_schedule() {
            schedule_alpha(self.loss.schedule, t, self.epochs, self.loss.alpha_max)
        } else {
            Ok(0.0)
        }
    }

    pub fn init_model(&self, dataset: &Dataset) -> Model {
        Model::init(dataset.input_dim(), self.model.hidden, self.model.embed, dataset.num_classes(), self.seed)
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub model: Model,
    pub metrics: Vec<EpochMetrics>,
    /// The stimulus intensities the run trained with.
    pub lambdas: Vec<f64>,
    pub wall_time_secs: f64,
}

/// Per-class and overall top-1 accuracy on raw logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub per_class: Vec<f64>,
    pub overall: f64,
}

pub fn evaluate(model: &Model, test_x: ArrayView2<'_, f64>, test_y: &[usize]) -> Result<Evaluation> {
    let trace = forward(model, test_x)?;
    let (per_class, overall) = accuracy_from_logits(trace.logits.view(), test_y, model.num_classes());
    Ok(Evaluation { per_class, overall })
}

pub fn train(dataset: &Dataset, model_init: Model, cfg: &TrainConfig) -> Result<RunResult> {
    train_with(dataset, model_init, cfg, |_| Ok(()))
}

/// [`train`] that hands each epoch's metrics to `on_epoch` as soon as they exist.
pub fn train_with<F>(dataset: &Dataset, model_init: Model, cfg: &TrainConfig, mut on_epoch: F) -> Result<RunResult>
where
    F: FnMut(&EpochMetrics) -> Result<()>,
{
    cfg.validate()?;
    let start = Instant::now();
    let c = dataset.num_classes();
    if model_init.input_dim() != dataset.input_dim() {
        return Err(shape_err(format!("model input dim {}", model_init.input_dim()), dataset.input_dim()));
    }
    if model_init.num_classes() != c {
        return Err(shape_err(format!("model with {} classes", model_init.num_classes()), c));
    }
    let lambdas = if cfg.loss.lambdas.is_empty() {
        lambda_vector(&dataset.counts)
    } else if cfg.loss.lambdas.len() == c {
        cfg.loss.lambdas.clone()
    } else {
        return Err(shape_err(format!("{c} lambdas"), cfg.loss.lambdas.len()));
    };

    let mut model = model_init;
    let mut state = OptimState::new(&model, cfg.lr, cfg.momentum)?;
    let mut rng = stream(cfg.seed, 4);
    let n = dataset.train_y.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut metrics = Vec::with_capacity(cfg.epochs);

    for t in 1..=cfg.epochs {
        state.lr = cfg.lr_at_epoch(t);
        let alpha = cfg.alpha_at_epoch(t)?;
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for (batch_idx, idx) in order.chunks(cfg.batch_size).enumerate() {
            let x = dataset.train_x.select(Axis(0), idx);
            let y: Vec<usize> = idx.iter().map(|&i| dataset.train_y[i]).collect();
            let trace = forward(&model, x.view())?;
            let out = compute_loss(&trace, &y, &cfg.loss, alpha, &lambdas, &dataset.counts)?;
            if !out.loss.is_finite() {
                return Err(FblError::NonFiniteLoss { epoch: t, batch: batch_idx });
            }
            loss_sum += out.loss * idx.len() as f64;
            let mut grads = backward(&model, &trace, &out.dl_dz, out.dl_df_extra.as_ref())?;
            if cfg.weight_decay > 0.0 {
                for (g, p) in grads.params_mut().into_iter().zip(model.params()) {
                    g.iter_mut().zip(p).for_each(|(g, p)| *g += cfg.weight_decay * p);
                }
            }
            sgd_step(&mut model, &grads, &mut state);
        }
        if !model.is_finite() {
            return Err(FblError::NonFiniteLoss { epoch: t, batch: n.div_ceil(cfg.batch_size) - 1 });
        }

        let mut m = collect(&model, dataset, t, alpha, loss_sum / n as f64)?;
        if cfg.adjust_at_eval {
            let z = adjusted_logits(&model, dataset.test_x.view(), &lambdas, alpha, cfg.loss.norm_eps)?;
            let (per_class, overall) = accuracy_from_logits(z.view(), &dataset.test_y, c);
            m.per_class_acc = per_class;
            m.overall_acc = overall;
        }
        on_epoch(&m)?;
        metrics.push(m);
    }

    Ok(RunResult { model, metrics, lambdas, wall_time_secs: start.elapsed().as_secs_f64() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_dataset, SynthSpec};
    use crate::loss::{LossKind, ScheduleKind};

    fn small_spec() -> SynthSpec {
        SynthSpec {
            num_classes: 4,
            n_max: 80,
            imbalance_factor: 8.0,
            feature_dim: 5,
            cluster_spread: 0.8,
            class_center_scale: 2.0,
            seed: 3,
            test_per_class: 20,
        }
    }

    fn quick_cfg(loss: LossConfig) -> TrainConfig {
        TrainConfig {
            epochs: 6,
            batch_size: 16,
            lr: 0.05,
            lr_milestones: vec![Milestone { epoch: 5, divisor: 10.0 }],
            loss,
            model: ModelSpec { hidden: 12, embed: 6 },
            ..Default::default()
        }
    }

    #[test]
    fn zero_lr_single_epoch_leaves_model_unchanged() {
        let ds = synth_dataset(&small_spec()).unwrap();
        let cfg = TrainConfig { epochs: 1, batch_size: ds.train_y.len(), lr: 0.0, lr_milestones: vec![], ..quick_cfg(LossConfig::ce()) };
        let init = cfg.init_model(&ds);
        let run = train(&ds, init.clone(), &cfg).unwrap();
        assert_eq!(run.model, init);
        assert_eq!(run.metrics.len(), 1);
    }

    #[test]
    fn ce_separates_well_spread_binary_data() {
        let ds = synth_dataset(&SynthSpec {
            num_classes: 2,
            n_max: 100,
            imbalance_factor: 1.0,
            cluster_spread: 1e-3,
            class_center_scale: 1.0,
            ..small_spec()
        })
        .unwrap();
        let cfg = TrainConfig { epochs: 20, lr_milestones: vec![], ..quick_cfg(LossConfig::ce()) };
        let run = train(&ds, cfg.init_model(&ds), &cfg).unwrap();
        assert_eq!(run.metrics.len(), 20);
        assert_eq!(run.metrics.last().unwrap().overall_acc, 1.0);
    }

    #[test]
    fn near_zero_spread_is_perfectly_classified() {
        let ds = synth_dataset(&SynthSpec { cluster_spread: 1e-6, ..small_spec() }).unwrap();
        let cfg = TrainConfig { epochs: 40, lr_milestones: vec![], model: ModelSpec::default(), ..quick_cfg(LossConfig::ce()) };
        let run = train(&ds, cfg.init_model(&ds), &cfg).unwrap();
        let eval = evaluate(&run.model, ds.test_x.view(), &ds.test_y).unwrap();
        assert_eq!(eval.overall, 1.0);
    }

    #[test]
    fn balanced_fbl_run_is_bitwise_ce_run() {
        let ds = synth_dataset(&SynthSpec { imbalance_factor: 1.0, ..small_spec() }).unwrap();
        let ce_cfg = quick_cfg(LossConfig::ce());
        let fbl_cfg = quick_cfg(LossConfig::fbl(ScheduleKind::ParabolicIncrease));
        let ce = train(&ds, ce_cfg.init_model(&ds), &ce_cfg).unwrap();
        let fbl = train(&ds, fbl_cfg.init_model(&ds), &fbl_cfg).unwrap();
        assert_eq!(ce.model, fbl.model);
        for (a, b) in ce.metrics.iter().zip(&fbl.metrics) {
            assert_eq!(a.mean_loss.to_bits(), b.mean_loss.to_bits());
            assert_eq!(a.per_class_acc, b.per_class_acc);
            assert_eq!(a.per_class_feat_norm_mean, b.per_class_feat_norm_mean);
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let ds = synth_dataset(&small_spec()).unwrap();
        let cfg = quick_cfg(LossConfig::fbl(ScheduleKind::SineIncrease));
        let a = train(&ds, cfg.init_model(&ds), &cfg).unwrap();
        let b = train(&ds, cfg.init_model(&ds), &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.metrics, b.metrics);
        assert!(a.metrics.iter().all(|m| m.per_class_acc.len() == 4));
    }

    #[test]
    fn lambdas_come_from_counts_and_stay_fixed() {
        let ds = synth_dataset(&small_spec()).unwrap();
        let cfg = quick_cfg(LossConfig::fbl(ScheduleKind::ParabolicIncrease));
        let run = train(&ds, cfg.init_model(&ds), &cfg).unwrap();
        assert_eq!(run.lambdas, lambda_vector(&ds.counts));
        let alphas: Vec<f64> = run.metrics.iter().map(|m| m.alpha).collect();
        assert_eq!(alphas.last(), Some(&1.0));
        assert!(alphas.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn milestones_divide_exactly() {
        let cfg = TrainConfig {
            lr: 0.3,
            lr_milestones: vec![Milestone { epoch: 3, divisor: 7.0 }, Milestone { epoch: 5, divisor: 100.0 }],
            ..TrainConfig::default()
        };
        assert_eq!(cfg.lr_at_epoch(2), 0.3);
        assert_eq!(cfg.lr_at_epoch(3), 0.3 / 7.0);
        assert_eq!(cfg.lr_at_epoch(4), 0.3 / 7.0);
        assert_eq!(cfg.lr_at_epoch(5), cfg.lr_at_epoch(4) / 100.0);
        let unsorted = TrainConfig { lr_milestones: vec![cfg.lr_milestones[1], cfg.lr_milestones[0]], ..cfg };
        assert!(unsorted.validate().is_err());
    }

    #[test]
    fn constant_predictor_scores_one_over_c() {
        let ds = synth_dataset(&small_spec()).unwrap();
        let mut m = Model::zeros(5, 3, 2, 4);
        m.embed_b.fill(1.0);
        m.classifier.column_mut(0).fill(1.0);
        let e = evaluate(&m, ds.test_x.view(), &ds.test_y).unwrap();
        assert_eq!(e.overall, 0.25);
        assert_eq!(e.per_class, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn per_class_accuracy_averages_to_overall() {
        let ds = synth_dataset(&small_spec()).unwrap();
        let cfg = quick_cfg(LossConfig::ce());
        let m = cfg.init_model(&ds);
        let e = evaluate(&m, ds.test_x.view(), &ds.test_y).unwrap();
        let weighted: f64 = e.per_class.iter().sum::<f64>() / 4.0;
        assert!((weighted - e.overall).abs() < 1e-12);
        let em = collect(&m, &ds, 1, 0.0, 0.0).unwrap();
        assert_eq!(em.per_class_acc, e.per_class);
    }

    #[test]
    fn all_loss_kinds_train() {
        let ds = synth_dataset(&small_spec()).unwrap();
        for kind in [LossKind::Ce, LossKind::Fbl, LossKind::ConstraintForm, LossKind::LogitAdjustBaseline, LossKind::MarginBaseline] {
            let cfg = quick_cfg(LossConfig::new(kind));
            let run = train(&ds, cfg.init_model(&ds), &cfg).unwrap();
            assert!(run.metrics.iter().all(|m| m.mean_loss.is_finite()), "{kind}");
        }
        let cfg = TrainConfig { adjust_at_eval: true, ..quick_cfg(LossConfig::new(LossKind::Fbl)) };
        train(&ds, cfg.init_model(&ds), &cfg).unwrap();
    }

    #[test]
    fn divergence_is_reported_with_location() {
        let mut ds = synth_dataset(&small_spec()).unwrap();
        let row = ds.train_y.len() - 1;
        ds.train_x[[row, 0]] = f64::NAN;
        let cfg = TrainConfig { batch_size: ds.train_y.len(), ..quick_cfg(LossConfig::ce()) };
        let err = train(&ds, cfg.init_model(&ds), &cfg).unwrap_err();
        assert!(matches!(err, FblError::NonFiniteLoss { epoch: 1, batch: 0 }), "{err}");
    }

    #[test]
    fn incompatible_model_is_rejected() {
        let ds = synth_dataset(&small_spec()).unwrap();
        let cfg = quick_cfg(LossConfig::ce());
        assert!(train(&ds, Model::zeros(4, 3, 2, 4), &cfg).is_err());
        assert!(train(&ds, Model::zeros(5, 3, 2, 3), &cfg).is_err());
        let bad = TrainConfig { loss: LossConfig { lambdas: vec![0.0; 2], ..LossConfig::ce() }, ..cfg };
        assert!(train(&ds, bad.init_model(&ds), &bad).is_err());
    }
}
