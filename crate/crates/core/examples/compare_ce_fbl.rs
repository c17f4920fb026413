// Paired CE and FBL runs on the desk benchmark, per-class breakdown included.
//
// cargo run --release --example compare_ce_fbl [seed]

use fbl::data::synth_dataset;
use fbl::experiment::{benchmark_config, benchmark_spec, final_overall, final_tail, paired_run};
use fbl::loss::LossKind;
use fbl::metrics::{norm_gap_area, per_class_table};

pub fn main() -> fbl::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let ds = synth_dataset(&benchmark_spec(seed))?;
    let pair = paired_run(&ds, &benchmark_config(seed, LossKind::Fbl))?;

    let ce = pair.ce.metrics.last().unwrap();
    let fbl = pair.fbl.metrics.last().unwrap();
    print!("{}", per_class_table(&[("ce", &ce.per_class_acc), ("fbl", &fbl.per_class_acc)]));

    println!("\noverall  ce {:.4}  fbl {:.4}", final_overall(&pair.ce), final_overall(&pair.fbl));
    println!("tail(3)  ce {:.4}  fbl {:.4}", final_tail(&pair.ce), final_tail(&pair.fbl));

    let tail = ds.num_classes() - 1;
    println!(
        "tail feature norm  ce {:.3}  fbl {:.3}",
        ce.per_class_feat_norm_mean[tail], fbl.per_class_feat_norm_mean[tail]
    );
    println!(
        "norm gap area  head {:.3}  tail {:.3}",
        norm_gap_area(&pair.fbl, &pair.ce, 0)?,
        norm_gap_area(&pair.fbl, &pair.ce, tail)?
    );
    Ok(())
}
