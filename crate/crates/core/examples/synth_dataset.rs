// Long-tailed class profiles and a synthetic Gaussian-cluster dataset.
//
// cargo run --example synth_dataset

use fbl::data::{lambda_vector, make_class_counts, synth_dataset, Dataset, SynthSpec};

pub fn main() -> fbl::Result<()> {
    for imb in [1.0, 10.0, 50.0, 100.0] {
        let counts = make_class_counts(10, 5000, imb)?;
        println!("IF={imb:<5} total={:<6} {:?}", counts.total(), counts.as_slice());
    }

    let spec = SynthSpec { n_max: 500, imbalance_factor: 100.0, ..Default::default() };
    let ds = synth_dataset(&spec)?;
    println!("\ntrain {:?}  test {:?}", ds.train_x.dim(), ds.test_x.dim());

    // stimulus intensity: zero for the head class, ln(IF) for the tail
    let lambdas = lambda_vector(&ds.counts);
    println!("lambda = {:.3?}", lambdas);

    let dir = std::env::temp_dir().join(format!("fbl-synth-example-{}", std::process::id()));
    ds.save(&dir)?;
    let back = Dataset::load(&dir)?;
    assert_eq!(back.counts, ds.counts);
    println!("saved and reloaded {}", dir.display());
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
