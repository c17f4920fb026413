// Analytic gradients against central differences, then the full
// invariant suite that `fbl verify` runs.
//
// cargo run --release --example gradient_check

use fbl::gradcheck::{check_gradients, GradCheckConfig};
use fbl::loss::fbl_loss_at;
use fbl::verify::{run_all, tiny_problem, VerifyOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn main() -> fbl::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (model, x, y) = tiny_problem(&mut rng);
    let lambdas = [0.0, 1.2, 3.4];

    for flip in [false, true] {
        let cfg = GradCheckConfig { flip_feature_gradient: flip, ..Default::default() };
        let r = check_gradients(&model, x.view(), |tr| fbl_loss_at(tr, &y, &lambdas, 1.5, 1e-8, false), &cfg)?;
        println!(
            "sign flip {flip:<5}: max rel error {:.2e} over {} coordinates ({} skipped)",
            r.max_rel_error, r.compared, r.skipped
        );
    }

    println!();
    let report = run_all(&VerifyOptions::default())?;
    for s in &report.suites {
        println!("{} {:<26} {:.2e}", if s.passed { "PASS" } else { "FAIL" }, s.name, s.max_error);
    }
    Ok(())
}
