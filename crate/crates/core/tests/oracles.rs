mod common;

use corrscan::adjusted::{recentered_beta, Model2Simulator};
use corrscan::matern::{build_cov, simulate_grf, CovFactor, MaternParams};
use common::{brute_force, random_region};
use corrscan::region::{distance_matrix, enumerate_windows, DistanceMatrix};
use corrscan::scan::{self, mc_pvalue, multinomial, Model1Simulator, NullSimulator, ScanContext};
use corrscan::seed;
use corrscan::stats;
use corrscan::theory::{mixture_tail, poisson_tail, MixtureSetup, TailMethod};
use nalgebra::DMatrix;
use rand::Rng;

#[test]
fn scan_matches_exhaustive_enumeration() {
    let mut rng = seed::rng(2024);
    for inst in 0..50 {
        let m = rng.random_range(2..=8);
        let total = rng.random_range(5..300);
        let sr = random_region(&mut rng, m, total);
        let dm = distance_matrix(&sr);
        let ws = enumerate_windows(&sr, &dm, 0.5).unwrap();
        let (llr, members) = brute_force(&sr, &dm, 0.5);
        if ws.is_empty() {
            assert!(members.is_empty());
            continue;
        }
        let res = scan::scan(&sr, &ws, 0).unwrap();
        assert_eq!(res.llr_star, llr, "instance {inst}");
        match res.primary {
            Some(p) => assert_eq!(p.cluster.members, members, "instance {inst}"),
            None => assert!(members.is_empty(), "instance {inst}"),
        }
    }
}

#[test]
fn mixture_at_zero_covariance_is_poisson() {
    let setup = MixtureSetup::new(-0.3, vec![4.0, 9.0, 2.5], DMatrix::zeros(3, 3)).unwrap();
    let lam = setup.mean_rate();
    for k in [0, 1, 5, 12, 30] {
        let p2 = mixture_tail(k, &setup, TailMethod::Quadrature { nodes: 40 }).unwrap().value;
        assert!((p2 - poisson_tail(k, lam)).abs() <= 1e-12, "k = {k}");
    }
}

#[test]
fn poisson_tail_against_reference_values() {
    // 1 - ppois(k - 1, lambda), computed with mpmath at 30 digits
    let cases = [
        (9, 5.0, 0.068093634721848559),
        (1, 0.5, 0.39346934028736658),
        (20, 10.0, 0.0034543419758568077),
        (3, 12.0, 0.9994777419499671),
    ];
    for (k, lam, want) in cases {
        let got = poisson_tail(k, lam);
        assert!((got - want).abs() / want < 1e-12, "k = {k}, lambda = {lam}: {got}");
    }
}

#[test]
fn multinomial_moments() {
    let probs = [0.1, 0.25, 0.05, 0.6];
    let n = 40u64;
    let reps = 100_000;
    let mut rng = seed::rng(31);
    let mut s1 = [0.0f64; 4];
    let mut s2 = [[0.0f64; 4]; 4];
    for _ in 0..reps {
        let y = multinomial(&mut rng, n, &probs);
        assert_eq!(y.iter().sum::<u64>(), n);
        for i in 0..4 {
            s1[i] += y[i] as f64;
            for j in 0..4 {
                s2[i][j] += (y[i] * y[j]) as f64;
            }
        }
    }
    let r = reps as f64;
    for i in 0..4 {
        let mean = s1[i] / r;
        let want = n as f64 * probs[i];
        let var = n as f64 * probs[i] * (1.0 - probs[i]);
        assert!((mean - want).abs() < 5.0 * (var / r).sqrt(), "mean {i}");
        for j in 0..4 {
            let cov = s2[i][j] / r - mean * s1[j] / r;
            let want = if i == j { var } else { -(n as f64) * probs[i] * probs[j] };
            assert!((cov - want).abs() < 0.05 * var.max(1.0), "cov {i},{j}: {cov} vs {want}");
        }
    }
}

#[test]
fn null_pvalues_are_rank_uniform() {
    let mut rng = seed::rng(5);
    let sr = random_region(&mut rng, 9, 60);
    let dm = distance_matrix(&sr);
    let ws = enumerate_windows(&sr, &dm, 0.5).unwrap();
    let ctx = ScanContext::for_period(&ws, &sr, 0);
    let sim = Model1Simulator::for_period(&sr, 0);
    let m = 99;
    let mut counts = vec![0u64; 10];
    for rep in 0..2000u64 {
        let observed = ctx.max_llr(&sim.simulate(seed::derive(77, &[rep])).unwrap());
        let rank = mc_pvalue(observed, &ctx, m, &sim, seed::derive(78, &[rep])).unwrap().rank;
        counts[(rank - 1) / 10] += 1;
    }
    let (_, pval) = stats::chi_square_uniform(&counts);
    assert!(pval > 0.01, "counts {counts:?}, p = {pval}");
}

#[test]
fn extreme_observation_gets_smallest_pvalue() {
    let reference: Vec<f64> = (0..999).map(|i| i as f64 / 1000.0).collect();
    assert_eq!(scan::rank_pvalue(5.0, &reference), 0.001);
}

#[test]
fn grf_covariance_and_mean() {
    let mut rng = seed::rng(8);
    let pts: Vec<(f64, f64)> = (0..6).map(|_| (rng.random_range(0.0..50.0), rng.random_range(0.0..50.0))).collect();
    let dm = DistanceMatrix::from_points(&pts);
    let sigma = build_cov(&dm, &MaternParams::new(0.7, 15.0, 1.5).unwrap());
    let f = CovFactor::new(&sigma, 1.0).unwrap();
    let n = 40_000;
    let mut sum = [0.0f64; 6];
    let mut acc = [[0.0f64; 6]; 6];
    for s in 0..n {
        let z = simulate_grf(&f, s);
        for i in 0..6 {
            sum[i] += z[i];
            for j in 0..6 {
                acc[i][j] += z[i] * z[j];
            }
        }
    }
    for i in 0..6 {
        let se = (sigma[(i, i)] / n as f64).sqrt();
        assert!((sum[i] / n as f64).abs() < 5.0 * se);
        for j in 0..6 {
            // sd of a product moment is at most sqrt(2) sigma_ii sigma_jj / sqrt(n)
            let tol = 5.0 * (2.0 * sigma[(i, i)] * sigma[(j, j)] / n as f64).sqrt();
            assert!((acc[i][j] / n as f64 - sigma[(i, j)]).abs() < tol, "({i}, {j})");
        }
    }
}

#[test]
fn recentered_total_matches_lognormal_mean() {
    let mut rng = seed::rng(12);
    let sr = random_region(&mut rng, 16, 400);
    let dm = distance_matrix(&sr);
    let pops = sr.populations(0).to_vec();
    let t = sr.totals(0);
    let beta = (t.cases as f64 / t.population).ln();
    let sim = Model2Simulator::matern(pops.clone(), beta, 0.176, 20.94, 1.0, &dm).unwrap();
    let n = 10_000;
    let mean = (0..n).map(|s| sim.simulate(s).unwrap().iter().sum::<u64>() as f64).sum::<f64>() / n as f64;
    let want = t.cases as f64 * (0.176f64 * 0.176 / 2.0).exp();
    assert!((mean / want - 1.0).abs() < 0.05, "{mean} vs {want}");

    let b = recentered_beta(t.cases, &pops, &sim.variances()).unwrap();
    let sim = Model2Simulator::matern(pops, b, 0.176, 20.94, 1.0, &dm).unwrap();
    let mean = (0..n).map(|s| sim.simulate(s).unwrap().iter().sum::<u64>() as f64).sum::<f64>() / n as f64;
    assert!((mean / t.cases as f64 - 1.0).abs() < 0.05);
}

#[test]
fn zero_sigma_reference_equals_model1_in_distribution() {
    let mut rng = seed::rng(40);
    let sr = random_region(&mut rng, 12, 300);
    let dm = distance_matrix(&sr);
    let ws = enumerate_windows(&sr, &dm, 0.5).unwrap();
    let ctx = ScanContext::for_period(&ws, &sr, 0);
    let m1 = Model1Simulator::for_period(&sr, 0);
    let m2 = Model2Simulator::new(sr.populations(0).to_vec(), 0.0, 0.0, None)
        .unwrap()
        .recentered(sr.totals(0).cases)
        .unwrap();
    let a = scan::reference_distribution(&ctx, 2000, &m1, 1).unwrap();
    let b = scan::reference_distribution(&ctx, 2000, &m2, 2).unwrap();
    let (_, p) = stats::ks_two_sample(&a, &b);
    assert!(p > 0.01, "KS p = {p}");
}
