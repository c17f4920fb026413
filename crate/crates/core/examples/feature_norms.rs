// Two observations behind the loss:
// classifier weight norms track class size under CE, and CE keeps
// falling as a correctly classified feature grows longer.
//
// cargo run --release --example feature_norms

use fbl::data::synth_dataset;
use fbl::experiment::{benchmark_config, benchmark_spec, run};
use fbl::loss::LossKind;
use fbl::metrics::spearman;
use fbl::verify::{loss_along_norm, NORM_SCALES};
use ndarray::{array, Array2};

pub fn main() -> fbl::Result<()> {
    let ds = synth_dataset(&benchmark_spec(0))?;
    let cfg = benchmark_config(0, LossKind::Ce);
    let ce = run(&ds, &cfg)?;

    let last = ce.metrics.last().unwrap();
    let sizes: Vec<f64> = ds.counts.as_slice().iter().map(|&n| n as f64).collect();
    println!("class  n_j   |w_j|   mean |f|");
    for j in 0..ds.num_classes() {
        println!(
            "{j:>5}  {:<5} {:.3}   {:.3}",
            ds.counts.as_slice()[j],
            last.per_class_weight_norm[j],
            last.per_class_feat_norm_mean[j]
        );
    }
    println!("spearman(n_j, |w_j|) = {:.3}", spearman(&sizes, &last.per_class_weight_norm));

    let w: Array2<f64> = array![[2.0, 0.5, -1.0], [0.0, 1.0, 0.5]];
    let direction = array![1.0, 0.2];
    let (pred, losses) = loss_along_norm(&w, &direction);
    println!("\npredicted class {pred}; CE as |f| grows:");
    for (s, l) in NORM_SCALES.iter().zip(&losses) {
        println!("  |f| x{s:<3} -> {l:.6}");
    }
    Ok(())
}
