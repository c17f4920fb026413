// Train with the feature-balanced loss and watch the curriculum ramp up.
//
// cargo run --release --example train_fbl

use fbl::data::{synth_dataset, SynthSpec};
use fbl::loss::{LossConfig, ScheduleKind};
use fbl::metrics::tail_mean;
use fbl::model::Model;
use fbl::trainer::{train_with, Milestone, TrainConfig};

pub fn main() -> fbl::Result<()> {
    let ds = synth_dataset(&SynthSpec { n_max: 1000, imbalance_factor: 50.0, class_center_scale: 3.0, ..Default::default() })?;

    let cfg = TrainConfig {
        epochs: 12,
        weight_decay: 2e-3,
        lr_milestones: vec![Milestone { epoch: 10, divisor: 10.0 }],
        loss: LossConfig { alpha_max: 2.0, ..LossConfig::fbl(ScheduleKind::ParabolicIncrease) },
        ..Default::default()
    };

    println!("epoch  alpha   loss    acc    tail");
    let run = train_with(&ds, cfg.init_model(&ds), &cfg, |m| {
        println!(
            "{:>5}  {:.3}  {:.4}  {:.3}  {:.3}",
            m.epoch,
            m.alpha,
            m.mean_loss,
            m.overall_acc,
            tail_mean(&m.per_class_acc, 3)
        );
        Ok(())
    })?;

    let path = std::env::temp_dir().join(format!("fbl-model-{}.json", std::process::id()));
    run.model.save(&path)?;
    let restored = Model::load(&path)?;
    assert_eq!(restored, run.model);
    println!("checkpoint round-trips through {}", path.display());
    std::fs::remove_file(path)?;
    Ok(())
}
