use corrscan::adjusted::Model2Simulator;
use corrscan::glmm::{fit_model2, FitData, McmcConfig, PriorSpec};
use corrscan::harness::{densify, synth_geometry, SynthSpec};
use corrscan::region::distance_matrix;
use corrscan::scan::Model1Simulator;
use corrscan::seed;
use corrscan::stats;

fn short() -> McmcConfig {
    McmcConfig { n_iter: 11_000, burn_in: 1_000, thin: 5, ..Default::default() }
}

fn synthetic(beta: f64, sigma: f64, rho: f64, data_seed: u64) -> FitData {
    let sr = synth_geometry(&SynthSpec::default()).unwrap();
    let dm = distance_matrix(&sr);
    let pops = sr.populations(0).to_vec();
    let sim = Model2Simulator::matern(pops.clone(), beta, sigma, rho, 1.0, &dm).unwrap();
    FitData::new(sim.sample(&mut seed::rng(data_seed)).unwrap(), pops, dm).unwrap()
}

#[test]
fn chain_is_reproducible() {
    let data = synthetic(-0.8, 0.15, 50.0, 1);
    let cfg = McmcConfig { n_iter: 2_000, burn_in: 500, thin: 5, ..Default::default() };
    let prior = PriorSpec::new(150).unwrap();
    let a = fit_model2(&data, &prior, 1.0, &cfg, 9).unwrap();
    let b = fit_model2(&data, &prior, 1.0, &cfg, 9).unwrap();
    assert_eq!(a.betas(), b.betas());
    assert_eq!(a.sigmas(), b.sigmas());
    assert_eq!(a.rhos(), b.rhos());
}

#[test]
fn adapted_acceptance_rates_are_moderate() {
    for (k, sigma) in [0.15, 0.4].into_iter().enumerate() {
        let fit = fit_model2(&synthetic(-0.8, sigma, 50.0, 10 + k as u64), &PriorSpec::new(150).unwrap(), 1.0, &short(), 3).unwrap();
        let a = fit.acceptance;
        for (name, r) in [("z", a.z), ("beta", a.beta), ("sigma", a.sigma)] {
            assert!((0.2..=0.6).contains(&r), "sigma {sigma}: {name} acceptance {r}");
        }
    }
}

#[test]
fn overdispersion_keeps_sigma_away_from_zero() {
    let fit = fit_model2(&synthetic(-0.8, 0.4, 30.0, 4), &PriorSpec::new(150).unwrap(), 1.0, &short(), 5).unwrap();
    let s = fit.sigmas();
    let above = s.iter().filter(|&&v| v > 0.10).count() as f64 / s.len() as f64;
    assert!(above > 0.95, "only {above} of sigma draws above 0.10");
}

#[test]
fn intercept_on_independent_poisson_data() {
    let sr = synth_geometry(&SynthSpec::default()).unwrap();
    let dm = distance_matrix(&sr);
    let pops = sr.populations(0).to_vec();
    let total = 900;
    let counts = Model1Simulator::new(&pops, total).sample(&mut seed::rng(6));
    let n_g: f64 = pops.iter().sum();
    let data = FitData::new(counts, pops, dm).unwrap();
    let fit = fit_model2(&data, &PriorSpec::new(150).unwrap(), 1.0, &short(), 7).unwrap();
    let b = fit.betas();
    let target = (total as f64 / n_g).ln();
    assert!((stats::mean(&b) - target).abs() < 3.0 * stats::sd(&b), "{} vs {target}", stats::mean(&b));
}

#[test]
fn densified_geometry_narrows_rho_posterior() {
    let base = synth_geometry(&SynthSpec::default()).unwrap();
    let extra = SynthSpec { seed: 4242, ..Default::default() };
    let dense = densify(&base, &extra).unwrap();
    let beta = -0.8;
    let prior = PriorSpec::new(150).unwrap();
    let rho_sd = |sr: &corrscan::region::StudyRegion, beta: f64, s: u64| {
        let dm = distance_matrix(sr);
        let pops = sr.populations(0).to_vec();
        let sim = Model2Simulator::matern(pops.clone(), beta, 0.14, 50.0, 1.0, &dm).unwrap();
        let data = FitData::new(sim.sample(&mut seed::rng(s)).unwrap(), pops, dm).unwrap();
        stats::sd(&fit_model2(&data, &prior, 1.0, &McmcConfig::default(), s).unwrap().rhos())
    };
    let seeds = [1, 2, 3];
    let a: f64 = seeds.iter().map(|&s| rho_sd(&base, beta, s)).sum::<f64>() / 3.0;
    // twice the sites and five times the incidence
    let b: f64 = seeds.iter().map(|&s| rho_sd(&dense, beta + 5f64.ln(), s)).sum::<f64>() / 3.0;
    println!("posterior sd of rho: baseline {a:.1}, densified {b:.1} ({:.0}% lower)", 100.0 * (1.0 - b / a));
    assert!(b < a);
}
