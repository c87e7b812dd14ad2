use corrscan::region::{DistanceMatrix, Region, StudyRegion};
use corrscan::scan::{log_lr, Model1Simulator};
use rand::Rng;

pub fn random_region(rng: &mut impl Rng, m: usize, total: u64) -> StudyRegion {
    let regions = (0..m)
        .map(|i| Region {
            id: format!("r{i}"),
            x: rng.random_range(0.0..100.0),
            y: rng.random_range(0.0..100.0),
        })
        .collect();
    let pops: Vec<f64> = (0..m).map(|_| rng.random_range(5.0..200.0)).collect();
    let cases = Model1Simulator::new(&pops, total).sample(rng);
    StudyRegion::single_period(regions, pops, cases).unwrap()
}

/// Every ball {j : d(c, j) <= d(c, k)} within the population cap.
pub fn brute_force(sr: &StudyRegion, dm: &DistanceMatrix, max_fraction: f64) -> (f64, Vec<usize>) {
    let m = sr.len();
    let pops = sr.populations(0);
    let cases = sr.cases(0);
    let pop_total: f64 = pops.iter().sum();
    let case_total: u64 = cases.iter().sum();
    let mut best = (0.0, Vec::new());
    for c in 0..m {
        for k in 0..m {
            let r = dm.get(c, k);
            let members: Vec<usize> = (0..m).filter(|&j| dm.get(c, j) <= r).collect();
            let pop: f64 = members.iter().map(|&j| pops[j]).sum();
            if pop > max_fraction * pop_total {
                continue;
            }
            let yc: u64 = members.iter().map(|&j| cases[j]).sum();
            let llr = log_lr(yc, pop, case_total, pop_total);
            if llr > best.0 {
                best = (llr, members);
            }
        }
    }
    best
}
