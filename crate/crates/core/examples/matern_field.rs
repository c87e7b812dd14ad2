//! Matérn covariance, its Cholesky factor, and a check that simulated
//! fields have the intended covariance.

use corrscan::harness::{synth_geometry, SynthSpec};
use corrscan::matern::{build_cov, matern_corr, simulate_grf, CovFactor, MaternParams};
use corrscan::region::distance_matrix;

fn main() -> corrscan::Result<()> {
    for nu in [0.5, 1.0, 2.5] {
        let row: Vec<String> = [0.0, 10.0, 25.0, 50.0, 100.0]
            .iter()
            .map(|&d| format!("{:.4}", matern_corr(d, 50.0, nu)))
            .collect();
        println!("nu = {nu}: corr at d = 0, 10, 25, 50, 100 -> {}", row.join(" "));
    }

    let sr = synth_geometry(&SynthSpec { m: 12, ..Default::default() })?;
    let dm = distance_matrix(&sr);
    let p = MaternParams::new(0.3, 40.0, 1.0)?;
    let sigma = build_cov(&dm, &p);
    let f = CovFactor::new(&sigma, 1.0)?;
    println!("jitter {:e}, log|Sigma| = {:.3}, max |LL' - Sigma| = {:e}", f.jitter(), f.log_det(), f.reconstruction_error(&sigma));

    let n = 20_000;
    let m = dm.len();
    let mut acc = vec![0.0; m * m];
    for s in 0..n {
        let z = simulate_grf(&f, s);
        for i in 0..m {
            for j in 0..m {
                acc[i * m + j] += z[i] * z[j];
            }
        }
    }
    let worst = (0..m * m)
        .map(|k| (acc[k] / n as f64 - sigma[(k / m, k % m)]).abs())
        .fold(0.0, f64::max);
    println!("largest deviation of the empirical covariance over {n} fields: {worst:.4}");
    Ok(())
}
