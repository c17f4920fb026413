//! Seeded paired runs, schedule sweeps and the desk-scale benchmark preset.

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::data::{SynthSpec, Dataset};
use crate::error::Result;
use crate::loss::{LossConfig, LossKind, ScheduleKind};
use crate::metrics::tail_mean;
use crate::trainer::{train, Milestone, ModelSpec, RunResult, TrainConfig};

/// Number of trailing classes averaged into the tail accuracy.
pub const TAIL_CLASSES: usize = 3;

/// Child seed for member `index` of a sweep.
pub fn child_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add(index as u64)
}

/// IF=100, C=10, D_in=16 Gaussian clusters; ~12.4k train samples.
pub fn benchmark_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        num_classes: 10,
        n_max: 5000,
        imbalance_factor: 100.0,
        feature_dim: 16,
        cluster_spread: 1.0,
        class_center_scale: 3.0,
        seed,
        test_per_class: 300,
    }
}

/// 30-epoch recipe sized for [`benchmark_spec`]: lr 0.05 divided by 100 at
/// epochs 24 and 27, weight decay 2e-3, `α_max = 2`.
pub fn benchmark_config(seed: u64, loss: LossKind) -> TrainConfig {
    let loss = LossConfig { alpha_max: 2.0, ..LossConfig::new(loss) };
    TrainConfig {
        epochs: 30,
        batch_size: 64,
        lr: 0.05,
        momentum: 0.9,
        weight_decay: 2e-3,
        lr_milestones: vec![Milestone { epoch: 24, divisor: 100.0 }, Milestone { epoch: 27, divisor: 100.0 }],
        seed,
        loss,
        model: ModelSpec { hidden: 64, embed: 32 },
        adjust_at_eval: false,
    }
}

/// Runs `cfg` from its own seeded initialization.
pub fn run(dataset: &Dataset, cfg: &TrainConfig) -> Result<RunResult> {
    train(dataset, cfg.init_model(dataset), cfg)
}

/// CE and FBL trained from the same initialization and shuffling seed.
#[derive(Debug, Clone)]
pub struct PairedRun {
    pub ce: RunResult,
    pub fbl: RunResult,
}

impl PairedRun {
    pub fn overall_gain(&self) -> f64 {
        final_overall(&self.fbl) - final_overall(&self.ce)
    }

    pub fn tail_gain(&self) -> f64 {
        final_tail(&self.fbl) - final_tail(&self.ce)
    }
}

/// `base` is cloned twice; only `loss.kind` differs between the members.
pub fn paired_run(dataset: &Dataset, base: &TrainConfig) -> Result<PairedRun> {
    let with = |kind| TrainConfig { loss: LossConfig { kind, ..base.loss.clone() }, ..base.clone() };
    let (ce, fbl) = rayon::join(|| run(dataset, &with(LossKind::Ce)), || run(dataset, &with(LossKind::Fbl)));
    Ok(PairedRun { ce: ce?, fbl: fbl? })
}

/// One FBL run per schedule, all sharing `base.seed`, in [`ScheduleKind::ALL`] order.
pub fn schedule_sweep(dataset: &Dataset, base: &TrainConfig) -> Result<Vec<(ScheduleKind, RunResult)>> {
    ScheduleKind::ALL
        .par_iter()
        .map(|&schedule| {
            let loss = LossConfig { kind: LossKind::Fbl, schedule, ..base.loss.clone() };
            let cfg = TrainConfig { loss, ..base.clone() };
            Ok((schedule, run(dataset, &cfg)?))
        })
        .collect()
}

pub fn final_overall(run: &RunResult) -> f64 {
    run.metrics.last().map_or(0.0, |m| m.overall_acc)
}

pub fn final_tail(run: &RunResult) -> f64 {
    run.metrics.last().map_or(0.0, |m| tail_mean(&m.per_class_acc, TAIL_CLASSES))
}

/// `schedule,overall_acc,tail_acc` rows sorted by schedule name.
pub fn ablation_csv(sweep: &[(ScheduleKind, RunResult)]) -> String {
    let mut rows: Vec<_> = sweep.iter().collect();
    rows.sort_by_key(|(s, _)| s.name());
    let mut out = String::from("schedule,overall_acc,tail_acc\n");
    for (s, r) in rows {
        out.push_str(&format!("{},{},{}\n", s.name(), final_overall(r), final_tail(r)));
    }
    out
}

/// The schedule with the lowest final overall accuracy; ties go to the earlier entry.
pub fn worst_schedule(sweep: &[(ScheduleKind, RunResult)]) -> Option<ScheduleKind> {
    sweep
        .iter()
        .fold(None::<(ScheduleKind, f64)>, |worst, (s, r)| {
            let acc = final_overall(r);
            match worst {
                Some((_, w)) if w <= acc => worst,
                _ => Some((*s, acc)),
            }
        })
        .map(|(s, _)| s)
}

/// JSON with object keys sorted, so field order never changes the text.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    // serde_json's Map is a BTreeMap without the preserve_order feature.
    Ok(serde_json::to_string(&serde_json::to_value(value)?)?)
}

/// Hex SHA-256 of [`canonical_json`].
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    Ok(hex::encode(Sha256::digest(canonical_json(value)?.as_bytes())))
}
