// Every loss the trainer knows, side by side on one small problem.
//
// cargo run --release --example loss_zoo

use fbl::data::{synth_dataset, SynthSpec};
use fbl::experiment::{final_overall, final_tail, run};
use fbl::loss::{LossConfig, LossKind, ScheduleKind};
use fbl::trainer::TrainConfig;

pub fn main() -> fbl::Result<()> {
    let ds = synth_dataset(&SynthSpec { n_max: 800, imbalance_factor: 100.0, class_center_scale: 3.0, ..Default::default() })?;
    let kinds = [
        LossKind::Ce,
        LossKind::Fbl,
        LossKind::ConstraintForm,
        LossKind::LogitAdjustBaseline,
        LossKind::MarginBaseline,
    ];
    println!("{:<22} {:>8} {:>8}", "loss", "overall", "tail");
    for kind in kinds {
        let cfg = TrainConfig {
            epochs: 15,
            lr_milestones: vec![],
            weight_decay: 2e-3,
            loss: LossConfig { kind, schedule: ScheduleKind::ParabolicIncrease, alpha_max: 2.0, ..LossConfig::new(kind) },
            ..Default::default()
        };
        let r = run(&ds, &cfg)?;
        println!("{:<22} {:>8.4} {:>8.4}", kind.name(), final_overall(&r), final_tail(&r));
    }
    Ok(())
}
