//! Poisson likelihood-ratio scan statistic and Monte Carlo inference.

use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::region::{CandidateCluster, StudyRegion, WindowSet};
use crate::seed;

#[inline]
fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// Log likelihood ratio of a window with `cases_in` cases and population
/// `pop_in`, against a study total of `cases_total` and `pop_total`.
///
/// Normalised so that equal inside/outside rates give zero, and gated to
/// elevated windows: returns 0 unless the inside rate strictly exceeds the
/// outside rate.
///
/// # Panics
/// If `pop_in >= pop_total` or `pop_in <= 0` or `cases_in > cases_total`.
pub fn log_lr(cases_in: u64, pop_in: f64, cases_total: u64, pop_total: f64) -> f64 {
    assert!(
        pop_in > 0.0 && pop_in < pop_total,
        "window population {pop_in} must lie strictly inside (0, {pop_total})"
    );
    assert!(cases_in <= cases_total, "window cases exceed the total");
    let (yc, yg) = (cases_in as f64, cases_total as f64);
    let yo = yg - yc;
    let pop_out = pop_total - pop_in;
    if yc / pop_in <= yo / pop_out {
        return 0.0;
    }
    let overall = yg / pop_total;
    let v = xlogy(yc, yc / pop_in / overall) + xlogy(yo, yo / pop_out / overall);
    v.max(0.0)
}

/// Windows paired with one period's population aggregates. Evaluating the
/// statistic on a count vector only needs integer sums, so one context
/// serves every simulated dataset for that period.
#[derive(Debug, Clone)]
pub struct ScanContext<'a> {
    windows: &'a WindowSet,
    populations: Vec<f64>,
    pop_total: f64,
    /// population of each window, indexed like `windows.windows()`
    window_pop: Vec<f64>,
    /// prefix entries usable for this period (window strictly smaller than the study region)
    usable: Vec<(usize, usize, usize)>,
}

impl<'a> ScanContext<'a> {
    pub fn new(windows: &'a WindowSet, populations: &[f64]) -> Self {
        assert_eq!(windows.n_regions(), populations.len());
        let pop_total: f64 = populations.iter().sum();
        let window_pop: Vec<f64> = windows
            .windows()
            .iter()
            .map(|w| w.members.iter().map(|&i| populations[i]).sum())
            .collect();
        let usable = windows
            .prefixes()
            .iter()
            .copied()
            .filter(|&(_, len, w)| len < populations.len() && window_pop[w] < pop_total)
            .collect();
        ScanContext {
            windows,
            populations: populations.to_vec(),
            pop_total,
            window_pop,
            usable,
        }
    }

    pub fn for_period(windows: &'a WindowSet, sr: &StudyRegion, period: usize) -> Self {
        Self::new(windows, sr.populations(period))
    }

    pub fn windows(&self) -> &WindowSet {
        self.windows
    }

    pub fn populations(&self) -> &[f64] {
        &self.populations
    }

    pub fn pop_total(&self) -> f64 {
        self.pop_total
    }

    /// Maximum log likelihood ratio over all windows for a count vector.
    pub fn max_llr(&self, counts: &[u64]) -> f64 {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return 0.0;
        }
        let orders = self.windows.orders();
        let mut best = 0.0f64;
        let mut center = usize::MAX;
        let mut cum: Vec<u64> = Vec::new();
        for &(c, len, w) in &self.usable {
            if c != center {
                center = c;
                cum.clear();
                let mut acc = 0;
                for &r in &orders[c] {
                    acc += counts[r];
                    cum.push(acc);
                }
            }
            let v = log_lr(cum[len - 1], self.window_pop[w], total, self.pop_total);
            if v > best {
                best = v;
            }
        }
        best
    }

    /// Log likelihood ratio of every window (duplicates appear once; windows
    /// covering the whole population get 0).
    pub fn window_llrs(&self, counts: &[u64]) -> Vec<f64> {
        let total: u64 = counts.iter().sum();
        self.windows
            .windows()
            .iter()
            .enumerate()
            .map(|(w, win)| {
                if total == 0 || self.window_pop[w] >= self.pop_total {
                    0.0
                } else {
                    let yc = win.members.iter().map(|&i| counts[i]).sum();
                    log_lr(yc, self.window_pop[w], total, self.pop_total)
                }
            })
            .collect()
    }
}

/// A reported cluster with its statistic and, once assessed, a p-value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCluster {
    pub cluster: CandidateCluster,
    pub llr: f64,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanResult {
    pub llr_star: f64,
    pub primary: Option<ScoredCluster>,
    pub secondaries: Vec<ScoredCluster>,
    pub p_value: Option<f64>,
    pub mc_size: Option<usize>,
}

impl ScanResult {
    /// Primary followed by secondaries.
    pub fn clusters(&self) -> impl Iterator<Item = &ScoredCluster> {
        self.primary.iter().chain(self.secondaries.iter())
    }

    /// Attach Monte Carlo p-values computed from a reference sample of
    /// maximised statistics.
    pub fn assess(&mut self, reference: &[f64]) {
        let m = reference.len();
        self.mc_size = Some(m);
        self.p_value = Some(rank_pvalue(self.llr_star, reference));
        if let Some(p) = self.primary.as_mut() {
            p.p_value = self.p_value;
        }
        for s in &mut self.secondaries {
            s.p_value = Some(rank_pvalue(s.llr, reference));
        }
    }

    /// Member sets of clusters with p-value at or below `alpha`.
    pub fn significant_sets(&self, alpha: f64) -> Vec<Vec<usize>> {
        let mut v: Vec<Vec<usize>> = self
            .clusters()
            .filter(|c| c.llr > 0.0 && c.p_value.is_some_and(|p| p <= alpha))
            .map(|c| c.cluster.members.clone())
            .collect();
        v.sort();
        v
    }
}

/// `(1 + #{reference >= observed}) / (M + 1)`.
pub fn rank_pvalue(observed: f64, reference: &[f64]) -> f64 {
    let r = 1 + reference.iter().filter(|&&v| v >= observed).count();
    r as f64 / (reference.len() + 1) as f64
}

/// Find the most likely cluster and greedy non-overlapping secondaries.
pub fn scan_counts(ctx: &ScanContext<'_>, counts: &[u64]) -> ScanResult {
    let llrs = ctx.window_llrs(counts);
    let windows = ctx.windows.windows();
    let mut order: Vec<usize> = (0..windows.len()).filter(|&w| llrs[w] > 0.0).collect();
    // descending llr, then fewer members, then lexicographic member indices
    order.sort_by(|&a, &b| {
        llrs[b]
            .total_cmp(&llrs[a])
            .then(windows[a].members.len().cmp(&windows[b].members.len()))
            .then(windows[a].members.cmp(&windows[b].members))
    });
    let mut chosen: Vec<usize> = Vec::new();
    for w in order {
        if chosen.iter().all(|&c| !windows[c].overlaps(&windows[w])) {
            chosen.push(w);
        }
    }
    let mk = |w: usize| ScoredCluster {
        cluster: CandidateCluster::from_window(&windows[w], counts, ctx.populations()),
        llr: llrs[w],
        p_value: None,
    };
    let primary = chosen.first().map(|&w| mk(w));
    ScanResult {
        llr_star: primary.as_ref().map_or(0.0, |p| p.llr),
        secondaries: chosen.iter().skip(1).map(|&w| mk(w)).collect(),
        primary,
        p_value: None,
        mc_size: None,
    }
}

/// Scan one period of a study region.
pub fn scan(sr: &StudyRegion, windows: &WindowSet, period: usize) -> Result<ScanResult> {
    if windows.is_empty() {
        return Err(Error::InvalidInput("no candidate windows".into()));
    }
    if windows.n_regions() != sr.len() {
        return Err(Error::InvalidInput("windows were built for a different geometry".into()));
    }
    let ctx = ScanContext::for_period(windows, sr, period);
    Ok(scan_counts(&ctx, sr.cases(period)))
}

/// Source of null datasets for Monte Carlo inference.
pub trait NullSimulator: Sync {
    fn simulate(&self, seed: u64) -> Result<Vec<u64>>;
}

/// Independent Poisson counts conditioned on the observed total: a
/// multinomial allocation with probabilities proportional to population.
#[derive(Debug, Clone)]
pub struct Model1Simulator {
    probs: Vec<f64>,
    total: u64,
}

impl Model1Simulator {
    pub fn new(populations: &[f64], total: u64) -> Self {
        let s: f64 = populations.iter().sum();
        Model1Simulator {
            probs: populations.iter().map(|p| p / s).collect(),
            total,
        }
    }

    pub fn for_period(sr: &StudyRegion, period: usize) -> Self {
        Self::new(sr.populations(period), sr.totals(period).cases)
    }

    pub fn sample<R: rand::Rng>(&self, rng: &mut R) -> Vec<u64> {
        multinomial(rng, self.total, &self.probs)
    }
}

impl NullSimulator for Model1Simulator {
    fn simulate(&self, seed: u64) -> Result<Vec<u64>> {
        Ok(self.sample(&mut seed::rng(seed)))
    }
}

/// Multinomial draw by sequential conditional binomials.
pub fn multinomial<R: rand::Rng>(rng: &mut R, n: u64, probs: &[f64]) -> Vec<u64> {
    let mut out = vec![0u64; probs.len()];
    let mut left = n;
    let mut mass = 1.0f64;
    for (i, &p) in probs.iter().enumerate() {
        if left == 0 {
            break;
        }
        if i == probs.len() - 1 || mass <= 0.0 {
            out[i] = left;
            break;
        }
        let q = (p / mass).clamp(0.0, 1.0);
        let k = if q >= 1.0 {
            left
        } else {
            Binomial::new(left, q).expect("valid binomial").sample(rng)
        };
        out[i] = k;
        left -= k;
        mass -= p;
    }
    out
}

/// Result of a Monte Carlo test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McTest {
    pub p_value: f64,
    pub rank: usize,
    pub mc_size: usize,
    /// maximised statistic of each simulated dataset, in replicate order
    pub reference: Vec<f64>,
}

/// Simulate `m` null datasets and return their maximised statistics.
/// Replicate `j` uses the seed derived from `(seed, j)`.
pub fn reference_distribution(
    ctx: &ScanContext<'_>,
    m: usize,
    sim: &dyn NullSimulator,
    seed: u64,
) -> Result<Vec<f64>> {
    (0..m)
        .into_par_iter()
        .map(|j| {
            let counts = sim.simulate(seed::derive(seed, &[j as u64]))?;
            Ok(ctx.max_llr(&counts))
        })
        .collect()
}

/// Monte Carlo p-value of an observed maximised statistic.
pub fn mc_pvalue(
    observed_llr: f64,
    ctx: &ScanContext<'_>,
    m: usize,
    sim: &dyn NullSimulator,
    seed: u64,
) -> Result<McTest> {
    if m == 0 {
        return Err(Error::InvalidInput("Monte Carlo size must be at least 1".into()));
    }
    let reference = reference_distribution(ctx, m, sim, seed)?;
    let rank = 1 + reference.iter().filter(|&&v| v >= observed_llr).count();
    Ok(McTest {
        p_value: rank as f64 / (m + 1) as f64,
        rank,
        mc_size: m,
        reference,
    })
}

/// Classical scan of one period with Model I Monte Carlo p-values.
pub fn classical_scan(
    sr: &StudyRegion,
    windows: &WindowSet,
    period: usize,
    m: usize,
    seed: u64,
) -> Result<(ScanResult, McTest)> {
    let mut res = scan(sr, windows, period)?;
    let ctx = ScanContext::for_period(windows, sr, period);
    let sim = Model1Simulator::for_period(sr, period);
    let test = mc_pvalue(res.llr_star, &ctx, m, &sim, seed)?;
    res.assess(&test.reference);
    Ok((res, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::region::{distance_matrix, enumerate_windows, Region};
    use approx::assert_abs_diff_eq;

    fn region(pops: &[f64], cases: &[u64], xs: &[(f64, f64)]) -> StudyRegion {
        let regions = xs
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| Region {
                id: format!("r{i:02}"),
                x,
                y,
            })
            .collect();
        StudyRegion::single_period(regions, pops.to_vec(), cases.to_vec()).unwrap()
    }

    #[test]
    fn llr_values() {
        assert_eq!(log_lr(2, 20.0, 10, 100.0), 0.0);
        assert_abs_diff_eq!(log_lr(5, 20.0, 10, 100.0), 2.231435513142098, epsilon = 1e-12);
        assert_abs_diff_eq!(log_lr(10, 50.0, 10, 100.0), 10.0 * 2f64.ln(), epsilon = 1e-12);
        assert_eq!(log_lr(0, 50.0, 10, 100.0), 0.0);
    }

    #[test]
    #[should_panic]
    fn llr_whole_region_is_a_contract_violation() {
        log_lr(3, 100.0, 3, 100.0);
    }

    #[test]
    fn proportional_counts_have_no_cluster() {
        let xs: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 0.0)).collect();
        let sr = region(&[10.0; 5], &[3; 5], &xs);
        let ws = enumerate_windows(&sr, &distance_matrix(&sr), 0.5).unwrap();
        let r = scan(&sr, &ws, 0).unwrap();
        assert_eq!(r.llr_star, 0.0);
        assert!(r.primary.is_none());
        assert!(r.secondaries.is_empty());
    }

    #[test]
    fn dominant_cell_is_primary() {
        let xs: Vec<(f64, f64)> = (0..6).map(|i| (i as f64, (i * i) as f64)).collect();
        let sr = region(&[10.0; 6], &[0, 0, 12, 0, 0, 0], &xs);
        let ws = enumerate_windows(&sr, &distance_matrix(&sr), 0.5).unwrap();
        let r = scan(&sr, &ws, 0).unwrap();
        assert_eq!(r.primary.unwrap().cluster.members, vec![2]);
    }

    #[test]
    fn zero_total_is_defined() {
        let xs: Vec<(f64, f64)> = (0..3).map(|i| (i as f64, 0.0)).collect();
        let sr = region(&[1.0; 3], &[0; 3], &xs);
        let ws = enumerate_windows(&sr, &distance_matrix(&sr), 0.5).unwrap();
        let r = scan(&sr, &ws, 0).unwrap();
        assert_eq!(r.llr_star, 0.0);
        assert!(r.primary.is_none());
    }

    #[test]
    fn secondaries_are_disjoint() {
        let xs: Vec<(f64, f64)> = (0..8).map(|i| (i as f64 * 10.0, 0.0)).collect();
        let sr = region(&[10.0; 8], &[9, 1, 1, 1, 1, 1, 1, 7], &xs);
        let ws = enumerate_windows(&sr, &distance_matrix(&sr), 0.5).unwrap();
        let r = scan(&sr, &ws, 0).unwrap();
        let all: Vec<&ScoredCluster> = r.clusters().collect();
        assert!(all.len() >= 2);
        for (i, a) in all.iter().enumerate() {
            assert!(a.llr > 0.0);
            for b in &all[i + 1..] {
                assert!(a.cluster.members.iter().all(|m| !b.cluster.members.contains(m)));
                assert!(a.llr >= b.llr);
            }
        }
    }

    #[test]
    fn pvalue_bounds() {
        assert_abs_diff_eq!(rank_pvalue(5.0, &vec![1.0; 999]), 0.001);
        assert_eq!(rank_pvalue(0.0, &[0.0, 0.3, 1.0]), 1.0);
    }

    #[test]
    fn multinomial_single_cell() {
        let mut rng = seed::rng(3);
        assert_eq!(multinomial(&mut rng, 17, &[1.0]), vec![17]);
    }

    #[test]
    fn multinomial_conserves_total() {
        let mut rng = seed::rng(9);
        for _ in 0..100 {
            let v = multinomial(&mut rng, 1000, &[0.1, 0.2, 0.3, 0.4]);
            assert_eq!(v.iter().sum::<u64>(), 1000);
        }
    }
}
