// All five curriculum schedules on the same data and seed.
//
// cargo run --release --example schedule_ablation [seed]

use fbl::data::synth_dataset;
use fbl::experiment::{ablation_csv, benchmark_config, benchmark_spec, schedule_sweep, worst_schedule};
use fbl::loss::LossKind;

pub fn main() -> fbl::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let ds = synth_dataset(&benchmark_spec(seed))?;
    let sweep = schedule_sweep(&ds, &benchmark_config(seed, LossKind::Fbl))?;
    print!("{}", ablation_csv(&sweep));
    if let Some(w) = worst_schedule(&sweep) {
        println!("worst: {w}");
    }
    Ok(())
}
