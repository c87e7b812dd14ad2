//! Empirical-null local false discovery rates on a mixture of null and
//! shifted z-values.

use corrscan::fdr::{FdrConfig, FdrModel};
use corrscan::seed;
use rand::Rng;
use rand_distr::StandardNormal;

fn main() -> corrscan::Result<()> {
    let mut rng = seed::rng(4);
    let mut z: Vec<f64> = (0..1900).map(|_| 0.1 + 1.1 * rng.sample::<f64, _>(StandardNormal)).collect();
    z.extend((0..100).map(|_| 4.0 + rng.sample::<f64, _>(StandardNormal)));

    let model = FdrModel::fit_z(z, &FdrConfig::default())?;
    println!(
        "empirical null: delta0 = {:.3}, sigma0 = {:.3} ({} bins, {} IRLS iterations)",
        model.null.delta0,
        model.null.sigma0,
        model.fit.histogram.counts.len(),
        model.fit.irls_iterations
    );
    for v in [-2.0, 0.0, 2.0, 3.0, 4.0, 5.0] {
        println!("fdr({v:4.1}) = {:.3}", model.fdr_at(v).0);
    }
    let flagged = model.flagged();
    let true_hits = flagged.iter().filter(|&&i| i >= 1900).count();
    println!("{} flagged below {}, {} of them from the shifted group", flagged.len(), model.threshold, true_hits);
    Ok(())
}
