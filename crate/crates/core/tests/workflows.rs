use corrscan::adjusted::{adjusted_scan, train_test_adjusted_scan, AdjustedConfig, Model2Simulator};
use corrscan::fdr::{FdrConfig, FdrModel};
use corrscan::glmm::McmcConfig;
use corrscan::harness::{run_study, surveillance_run, synth_geometry, ExperimentConfig, Mode, SynthSpec};
use corrscan::region::{distance_matrix, enumerate_windows, StudyRegion};
use corrscan::seed;
use rand::Rng;

fn quick_cfg() -> AdjustedConfig {
    AdjustedConfig {
        mc_size: 99,
        u: 150,
        mcmc: McmcConfig { n_iter: 6_000, burn_in: 1_000, thin: 5, ..Default::default() },
        ..Default::default()
    }
}

fn repeated(skeleton: &StudyRegion, cases: Vec<Vec<u64>>) -> StudyRegion {
    let n = cases.len();
    let labels = (0..n).map(|t| format!("t{t}")).collect();
    let pops = skeleton.populations(0).to_vec();
    StudyRegion::new(skeleton.regions().to_vec(), labels, vec![pops; n], cases).unwrap()
}

#[test]
fn planted_outbreak_stands_out_in_surveillance() {
    let skeleton = synth_geometry(&SynthSpec::default()).unwrap();
    let dm = distance_matrix(&skeleton);
    let pops = skeleton.populations(0).to_vec();
    let model = Model2Simulator::matern(pops.clone(), -2.0, 0.1, 30.0, 1.0, &dm).unwrap();
    let outbreak = 17;
    let mut by_pop: Vec<usize> = (0..pops.len()).collect();
    by_pop.sort_by(|&a, &b| pops[a].total_cmp(&pops[b]));
    let centre = by_pop[pops.len() / 2];
    let mut near: Vec<usize> = (0..pops.len()).collect();
    near.sort_by(|&a, &b| dm.get(centre, a).total_cmp(&dm.get(centre, b)));
    let cases = (0..41u64)
        .map(|t| {
            let mut y = model.sample(&mut seed::rng_for(2, &[t])).unwrap();
            if t == outbreak {
                for &i in &near[..3] {
                    y[i] *= 3;
                }
            }
            y
        })
        .collect();
    let sr = repeated(&skeleton, cases);
    let cfg = AdjustedConfig { mc_size: 199, ..quick_cfg() };
    let rep = surveillance_run(&sr, &[0], &cfg, &FdrConfig::default(), 0.5).unwrap();
    assert_eq!(rep.rows.len(), 40);
    let hit = &rep.rows[outbreak as usize - 1];
    assert_eq!(hit.period, "t17");
    let fdr_hit = hit.fdr.expect("enough periods for fdr");
    for r in &rep.rows {
        assert!(hit.adjusted_p <= r.adjusted_p, "{} has p {}", r.period, r.adjusted_p);
        assert!(fdr_hit <= r.fdr.unwrap(), "{} has fdr {:?}", r.period, r.fdr);
    }
}

#[test]
fn uniform_pvalues_yield_no_discoveries() {
    // 129 test periods, each assessed with the default Monte Carlo size
    let mc = AdjustedConfig::default().mc_size;
    let mut clean = 0;
    let runs = 400;
    for run in 0..runs {
        let mut rng = seed::rng_for(55, &[run]);
        let p: Vec<f64> = (0..129).map(|_| rng.random_range(1..=mc + 1) as f64 / (mc + 1) as f64).collect();
        let model = FdrModel::fit_p(&p, Some(mc), &FdrConfig::default()).unwrap();
        if model.fdr.iter().all(|&f| f >= 0.1) {
            clean += 1;
        }
    }
    assert!(clean as f64 >= 0.95 * runs as f64, "{clean} of {runs} runs without discoveries");
}

#[test]
fn train_test_pvalues_lie_on_the_grid() {
    let skeleton = synth_geometry(&SynthSpec::default()).unwrap();
    let dm = distance_matrix(&skeleton);
    let model = Model2Simulator::matern(skeleton.populations(0).to_vec(), -0.8, 0.1, 50.0, 1.0, &dm).unwrap();
    let cases = (0..2u64).map(|t| model.sample(&mut seed::rng_for(3, &[t])).unwrap()).collect();
    let sr = repeated(&skeleton, cases);
    let ws = enumerate_windows(&sr, &dm, 0.5).unwrap();
    let cfg = quick_cfg();
    let res = train_test_adjusted_scan(&sr, &dm, &ws, &[0], &[1], &cfg).unwrap();
    let p = &res.periods[0];
    for v in [p.classical_p, p.adjusted_p] {
        let k = v * (cfg.mc_size + 1) as f64;
        assert!((k - k.round()).abs() < 1e-9 && (1.0..=100.0).contains(&k.round()), "{v}");
    }
}

#[test]
fn identical_training_and_test_data_is_unremarkable() {
    let skeleton = synth_geometry(&SynthSpec::default()).unwrap();
    let dm = distance_matrix(&skeleton);
    let model = Model2Simulator::matern(skeleton.populations(0).to_vec(), -0.8, 0.3, 50.0, 1.0, &dm).unwrap();
    let y = model.sample(&mut seed::rng(21)).unwrap();
    let sr = repeated(&skeleton, vec![y.clone(), y]);
    let ws = enumerate_windows(&sr, &dm, 0.5).unwrap();
    let res = train_test_adjusted_scan(&sr, &dm, &ws, &[0], &[1], &quick_cfg()).unwrap();
    assert!(res.periods[0].adjusted_p > 0.05, "adjusted p {}", res.periods[0].adjusted_p);
}

#[test]
fn adjusted_scan_without_clusters_stops_after_one_fit() {
    let skeleton = synth_geometry(&SynthSpec::default()).unwrap();
    let dm = distance_matrix(&skeleton);
    // counts proportional to population: nothing to screen
    let y: Vec<u64> = skeleton.populations(0).iter().map(|p| (p * 0.45).round() as u64).collect();
    let sr = skeleton.with_cases(0, y).unwrap();
    let ws = enumerate_windows(&sr, &dm, 0.5).unwrap();
    let res = adjusted_scan(&sr, &dm, &ws, 0, &quick_cfg()).unwrap();
    assert!(res.classical.significant_sets(0.1).is_empty());
    assert_eq!(res.iterations.len(), 1);
    assert!(res.converged);
    assert!(res.iterations[0].excluded.is_empty());
}

#[test]
fn study_tables_do_not_depend_on_thread_count() {
    let cfg = ExperimentConfig {
        sigmas: vec![0.0, 0.2],
        rhos: vec![20.0],
        replicates: 12,
        mc_size: 99,
        modes: vec![Mode::Classical, Mode::AdjustedTrueParams],
        ..Default::default()
    };
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let out = pool.install(|| run_study(&cfg)).unwrap();
        (serde_json::to_string(&out.archive).unwrap(), out.table.to_csv_rows())
    };
    assert_eq!(run(1), run(3));
}
