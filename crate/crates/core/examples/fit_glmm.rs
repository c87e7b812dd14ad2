//! Simulate counts from the spatial Poisson model and recover its
//! parameters by MCMC.

use corrscan::adjusted::Model2Simulator;
use corrscan::glmm::{fit_model2, FitData, McmcConfig, ModelIIFit, PriorSpec};
use corrscan::harness::{synth_geometry, SynthSpec};
use corrscan::region::distance_matrix;
use corrscan::seed;

fn main() -> corrscan::Result<()> {
    let sr = synth_geometry(&SynthSpec::default())?;
    let dm = distance_matrix(&sr);
    let pops = sr.populations(0).to_vec();
    let (beta, sigma, rho) = (-0.8, 0.15, 50.0);
    let truth = Model2Simulator::matern(pops.clone(), beta, sigma, rho, 1.0, &dm)?;
    let counts = truth.sample(&mut seed::rng(3))?;

    let data = FitData::new(counts, pops, dm)?;
    let cfg = McmcConfig::default();
    let fit = fit_model2(&data, &PriorSpec::new(150)?, 1.0, &cfg, 1)?;

    println!("{} draws retained", fit.draws.len());
    for (name, t, trace) in [("beta", beta, fit.betas()), ("sigma", sigma, fit.sigmas()), ("rho", rho, fit.rhos())] {
        let (lo, hi) = ModelIIFit::interval(&trace, 0.9);
        let mean = trace.iter().sum::<f64>() / trace.len() as f64;
        println!("{name:>5}: truth {t:7.3}  mean {mean:7.3}  90% [{lo:.3}, {hi:.3}]");
    }
    println!("acceptance {:?}", fit.acceptance);
    println!("ess {:?}", fit.ess);
    for w in &fit.warnings {
        println!("warning: {w}");
    }
    Ok(())
}
