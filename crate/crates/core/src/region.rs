//! Study-region geometry, populations and case counts, plus circular
//! candidate-window enumeration.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A subregion with its centroid in map units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: String,
    pub x: f64,
    pub y: f64,
}

/// Case and population totals for one period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodTotals {
    pub cases: u64,
    pub population: f64,
}

/// Validated study region. Regions are stored sorted by id so that every
/// downstream computation is independent of input row order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyRegion {
    regions: Vec<Region>,
    periods: Vec<String>,
    /// `populations[t][i]`
    populations: Vec<Vec<f64>>,
    /// `cases[t][i]`
    cases: Vec<Vec<u64>>,
    totals: Vec<PeriodTotals>,
}

impl StudyRegion {
    /// Build and validate a study region. `populations` and `cases` are
    /// indexed `[period][region]` in the order of `regions` as given.
    pub fn new(
        regions: Vec<Region>,
        periods: Vec<String>,
        populations: Vec<Vec<f64>>,
        cases: Vec<Vec<u64>>,
    ) -> Result<Self> {
        let m = regions.len();
        if m == 0 {
            return Err(Error::InvalidInput("study region has no regions".into()));
        }
        if periods.is_empty() {
            return Err(Error::InvalidInput("study region has no periods".into()));
        }
        if populations.len() != periods.len() || cases.len() != periods.len() {
            return Err(Error::InvalidInput(
                "populations and cases must have one row per period".into(),
            ));
        }
        let mut seen = HashSet::new();
        for r in &regions {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate region id `{}`", r.id)));
            }
            if !r.x.is_finite() || !r.y.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "region `{}` has a non-finite centroid",
                    r.id
                )));
            }
        }
        for (t, (pop, cas)) in populations.iter().zip(&cases).enumerate() {
            if pop.len() != m || cas.len() != m {
                return Err(Error::InvalidInput(format!(
                    "period `{}` has {} populations and {} counts for {m} regions",
                    periods[t],
                    pop.len(),
                    cas.len()
                )));
            }
            if let Some(i) = pop.iter().position(|&p| !(p > 0.0 && p.is_finite())) {
                return Err(Error::InvalidInput(format!(
                    "population of region `{}` in period `{}` must be strictly positive, got {}",
                    regions[i].id, periods[t], pop[i]
                )));
            }
        }

        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| regions[a].id.cmp(&regions[b].id));
        let permute = |row: &Vec<f64>| order.iter().map(|&i| row[i]).collect::<Vec<_>>();
        let populations: Vec<Vec<f64>> = populations.iter().map(permute).collect();
        let cases: Vec<Vec<u64>> = cases
            .iter()
            .map(|row| order.iter().map(|&i| row[i]).collect())
            .collect();
        let regions: Vec<Region> = order.iter().map(|&i| regions[i].clone()).collect();
        let totals = populations
            .iter()
            .zip(&cases)
            .map(|(p, c)| PeriodTotals {
                cases: c.iter().sum(),
                population: p.iter().sum(),
            })
            .collect();

        let sr = StudyRegion {
            regions,
            periods,
            populations,
            cases,
            totals,
        };
        sr.check_totals();
        Ok(sr)
    }

    fn check_totals(&self) {
        for t in 0..self.periods.len() {
            let c: u64 = self.cases[t].iter().sum();
            let p: f64 = self.populations[t].iter().sum();
            assert_eq!(c, self.totals[t].cases);
            assert!((p - self.totals[t].population).abs() <= 1e-9 * p.abs().max(1.0));
        }
    }

    /// Single-period study region.
    pub fn single_period(regions: Vec<Region>, populations: Vec<f64>, cases: Vec<u64>) -> Result<Self> {
        Self::new(regions, vec!["all".into()], vec![populations], vec![cases])
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn ids(&self) -> Vec<&str> {
        self.regions.iter().map(|r| r.id.as_str()).collect()
    }

    pub fn periods(&self) -> &[String] {
        &self.periods
    }

    pub fn n_periods(&self) -> usize {
        self.periods.len()
    }

    pub fn period_index(&self, label: &str) -> Option<usize> {
        self.periods.iter().position(|p| p == label)
    }

    pub fn populations(&self, period: usize) -> &[f64] {
        &self.populations[period]
    }

    pub fn cases(&self, period: usize) -> &[u64] {
        &self.cases[period]
    }

    pub fn totals(&self, period: usize) -> PeriodTotals {
        self.totals[period]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.regions.binary_search_by(|r| r.id.as_str().cmp(id)).ok()
    }

    /// Copy of this study region with the case counts of `period` replaced.
    pub fn with_cases(&self, period: usize, cases: Vec<u64>) -> Result<Self> {
        if cases.len() != self.len() {
            return Err(Error::InvalidInput(format!(
                "expected {} counts, got {}",
                self.len(),
                cases.len()
            )));
        }
        let mut out = self.clone();
        out.totals[period].cases = cases.iter().sum();
        out.cases[period] = cases;
        Ok(out)
    }

    /// Collapse a set of periods into one, summing counts and populations
    /// (populations become person-periods).
    pub fn aggregate(&self, periods: &[usize], label: &str) -> Result<Self> {
        if periods.is_empty() {
            return Err(Error::InvalidInput("no periods to aggregate".into()));
        }
        let m = self.len();
        let mut pop = vec![0.0; m];
        let mut cas = vec![0u64; m];
        for &t in periods {
            for i in 0..m {
                pop[i] += self.populations[t][i];
                cas[i] += self.cases[t][i];
            }
        }
        Self::new(self.regions.clone(), vec![label.to_string()], vec![pop], vec![cas])
    }

    /// Keep only the listed periods.
    pub fn select_periods(&self, periods: &[usize]) -> Result<Self> {
        Self::new(
            self.regions.clone(),
            periods.iter().map(|&t| self.periods[t].clone()).collect(),
            periods.iter().map(|&t| self.populations[t].clone()).collect(),
            periods.iter().map(|&t| self.cases[t].clone()).collect(),
        )
    }

    /// Keep only the listed regions (indices into this study region).
    pub fn subset(&self, keep: &[usize]) -> Result<Self> {
        Self::new(
            keep.iter().map(|&i| self.regions[i].clone()).collect(),
            self.periods.clone(),
            self.populations
                .iter()
                .map(|row| keep.iter().map(|&i| row[i]).collect())
                .collect(),
            self.cases
                .iter()
                .map(|row| keep.iter().map(|&i| row[i]).collect())
                .collect(),
        )
    }

    /// Mean population of each region across periods; the reference used to
    /// cap window sizes.
    pub fn mean_populations(&self) -> Vec<f64> {
        let t = self.periods.len() as f64;
        (0..self.len())
            .map(|i| self.populations.iter().map(|p| p[i]).sum::<f64>() / t)
            .collect()
    }
}

/// Symmetric matrix of Euclidean centroid distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    m: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_points(points: &[(f64, f64)]) -> Self {
        let m = points.len();
        let mut d = vec![0.0; m * m];
        for i in 0..m {
            for j in (i + 1)..m {
                let (dx, dy) = (points[i].0 - points[j].0, points[i].1 - points[j].1);
                let v = dx.hypot(dy);
                d[i * m + j] = v;
                d[j * m + i] = v;
            }
        }
        DistanceMatrix { m, d }
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.m + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.d[i * self.m..(i + 1) * self.m]
    }

    pub fn submatrix(&self, keep: &[usize]) -> Self {
        let m = keep.len();
        let mut d = Vec::with_capacity(m * m);
        for &i in keep {
            for &j in keep {
                d.push(self.get(i, j));
            }
        }
        DistanceMatrix { m, d }
    }

    pub fn max_distance(&self) -> f64 {
        self.d.iter().cloned().fold(0.0, f64::max)
    }
}

pub fn distance_matrix(sr: &StudyRegion) -> DistanceMatrix {
    let pts: Vec<(f64, f64)> = sr.regions().iter().map(|r| (r.x, r.y)).collect();
    DistanceMatrix::from_points(&pts)
}

/// A circular candidate window: the regions nearest to `center`, up to and
/// including the farthest member at distance `radius`. `members` is sorted
/// by region index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub center: usize,
    pub members: Vec<usize>,
    pub radius: f64,
}

impl Window {
    pub fn contains(&self, region: usize) -> bool {
        self.members.binary_search(&region).is_ok()
    }

    pub fn overlaps(&self, other: &Window) -> bool {
        let (mut a, mut b) = (0, 0);
        while a < self.members.len() && b < other.members.len() {
            match self.members[a].cmp(&other.members[b]) {
                std::cmp::Ordering::Less => a += 1,
                std::cmp::Ordering::Greater => b += 1,
                std::cmp::Ordering::Equal => return true,
            }
        }
        false
    }
}

/// A candidate window aggregated for one period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateCluster {
    pub center: usize,
    pub members: Vec<usize>,
    pub radius: f64,
    pub cases: u64,
    pub population: f64,
}

impl CandidateCluster {
    pub fn from_window(w: &Window, cases: &[u64], populations: &[f64]) -> Self {
        CandidateCluster {
            center: w.center,
            members: w.members.clone(),
            radius: w.radius,
            cases: w.members.iter().map(|&i| cases[i]).sum(),
            population: w.members.iter().map(|&i| populations[i]).sum(),
        }
    }
}

/// Deduplicated circular windows plus the per-center neighbour orderings
/// they were built from. Each window is also addressable as a prefix
/// `(center, len)` of its center's ordering, which the fast scan uses.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowSet {
    windows: Vec<Window>,
    /// `orders[c]` lists all regions sorted by (distance from c, index).
    orders: Vec<Vec<usize>>,
    /// `(center, prefix length, window index)` for every emitted window.
    prefixes: Vec<(usize, usize, usize)>,
    max_fraction: f64,
}

impl WindowSet {
    pub fn windows(&self) -> &[Window] {
        &self.windows
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn orders(&self) -> &[Vec<usize>] {
        &self.orders
    }

    pub fn prefixes(&self) -> &[(usize, usize, usize)] {
        &self.prefixes
    }

    pub fn max_fraction(&self) -> f64 {
        self.max_fraction
    }

    /// Number of regions in the geometry these windows were built on.
    pub fn n_regions(&self) -> usize {
        self.orders.len()
    }
}

/// Enumerate circular windows using explicit reference populations for the
/// size cap.
pub fn enumerate_windows_with(dm: &DistanceMatrix, populations: &[f64], max_fraction: f64) -> Result<WindowSet> {
    let m = dm.len();
    if !(max_fraction > 0.0 && max_fraction <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "max_fraction must be in (0, 1], got {max_fraction}"
        )));
    }
    if populations.len() != m {
        return Err(Error::InvalidInput("population vector length mismatch".into()));
    }
    let total: f64 = populations.iter().sum();
    let cap = max_fraction * total;
    // relative slack so that max_fraction = 1 admits the whole region despite rounding
    let cap = cap * (1.0 + 1e-12);

    let mut orders = Vec::with_capacity(m);
    let mut windows = Vec::new();
    let mut prefixes = Vec::new();
    let mut index: HashMap<Vec<usize>, usize> = HashMap::new();
    for c in 0..m {
        let row = dm.row(c);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
        let mut pop = 0.0;
        let mut members: Vec<usize> = Vec::new();
        for (k, &r) in order.iter().enumerate() {
            pop += populations[r];
            if pop > cap {
                break;
            }
            let pos = members.binary_search(&r).unwrap_err();
            members.insert(pos, r);
            let w_idx = match index.get(&members) {
                Some(&w) => w,
                None => {
                    let w = windows.len();
                    windows.push(Window {
                        center: c,
                        members: members.clone(),
                        radius: row[r],
                    });
                    index.insert(members.clone(), w);
                    w
                }
            };
            prefixes.push((c, k + 1, w_idx));
        }
        orders.push(order);
    }
    Ok(WindowSet {
        windows,
        orders,
        prefixes,
        max_fraction,
    })
}

/// Enumerate circular windows, capping by the mean population across periods.
pub fn enumerate_windows(sr: &StudyRegion, dm: &DistanceMatrix, max_fraction: f64) -> Result<WindowSet> {
    enumerate_windows_with(dm, &sr.mean_populations(), max_fraction)
}

// ---------------------------------------------------------------------------
// Text loaders

fn split_fields(line: &str) -> Vec<&str> {
    if line.contains(',') {
        line.split(',').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

struct Record<'a> {
    line: usize,
    fields: Vec<&'a str>,
}

fn records(text: &str) -> impl Iterator<Item = Record<'_>> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let l = raw.trim();
        if l.is_empty() || l.starts_with('#') {
            None
        } else {
            Some(Record {
                line: i + 1,
                fields: split_fields(l),
            })
        }
    })
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(file: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_f64(file: &Path, line: usize, s: &str, what: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| parse_err(file, line, format!("cannot parse {what} `{s}`")))
}

/// Parse a geometry file of `id x y` lines.
pub fn parse_geo(path: &Path, text: &str) -> Result<Vec<Region>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for rec in records(text) {
        if rec.fields.len() < 3 {
            return Err(parse_err(path, rec.line, "expected `id x y`"));
        }
        let id = rec.fields[0].to_string();
        let x = parse_f64(path, rec.line, rec.fields[1], "x coordinate")?;
        let y = parse_f64(path, rec.line, rec.fields[2], "y coordinate")?;
        if !x.is_finite() || !y.is_finite() {
            return Err(parse_err(path, rec.line, "non-finite coordinate"));
        }
        if !seen.insert(id.clone()) {
            return Err(parse_err(path, rec.line, format!("duplicate region id `{id}`")));
        }
        out.push(Region { id, x, y });
    }
    if out.is_empty() {
        return Err(parse_err(path, 0, "geometry file has no regions"));
    }
    Ok(out)
}

/// `(id, optional period, value, line)` rows of a pop/cas file.
type Row = (String, Option<String>, String, usize);

fn parse_rows(path: &Path, text: &str, known: &HashSet<&str>) -> Result<Vec<Row>> {
    let mut out = Vec::new();
    let mut width = None;
    for rec in records(text) {
        let n = rec.fields.len();
        if n < 2 {
            return Err(parse_err(path, rec.line, "expected `id [period] value`"));
        }
        let w = if n == 2 { 2 } else { 3 };
        if *width.get_or_insert(w) != w {
            return Err(parse_err(path, rec.line, "inconsistent number of columns"));
        }
        let id = rec.fields[0];
        if !known.contains(id) {
            return Err(Error::UnknownRegion {
                file: path.to_path_buf(),
                line: rec.line,
                id: id.to_string(),
            });
        }
        let (period, value) = if n == 2 {
            (None, rec.fields[1])
        } else {
            (Some(rec.fields[1].to_string()), rec.fields[2])
        };
        out.push((id.to_string(), period, value.to_string(), rec.line));
    }
    Ok(out)
}

fn sort_periods(periods: &mut Vec<String>) {
    if periods.iter().all(|p| p.parse::<f64>().is_ok()) {
        periods.sort_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap()));
    } else {
        periods.sort();
    }
}

/// Population of a region at `period`, interpolating linearly between
/// numeric census periods and holding the nearest value outside them.
fn population_at(series: &BTreeMap<String, f64>, period: &str) -> Option<f64> {
    if let Some(&v) = series.get(period) {
        return Some(v);
    }
    let t: f64 = period.parse().ok()?;
    let mut pts: Vec<(f64, f64)> = series
        .iter()
        .map(|(k, &v)| k.parse::<f64>().ok().map(|k| (k, v)))
        .collect::<Option<Vec<_>>>()?;
    if pts.is_empty() {
        return None;
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    if t <= pts[0].0 {
        return Some(pts[0].1);
    }
    if t >= pts[pts.len() - 1].0 {
        return Some(pts[pts.len() - 1].1);
    }
    let k = pts.iter().position(|p| p.0 > t).unwrap();
    let (a, b) = (pts[k - 1], pts[k]);
    Some(a.1 + (b.1 - a.1) * (t - a.0) / (b.0 - a.0))
}

/// Load a study region from geometry, population and case files.
///
/// Periods are taken from the case file (a single period `all` when it has
/// no period column). Populations are matched by period, with linear
/// interpolation between numeric census periods; a population file without a
/// period column applies to every period. Regions missing from the case file
/// get zero counts.
pub fn load_study_region(geo_file: &Path, pop_file: &Path, cas_file: &Path) -> Result<StudyRegion> {
    let regions = parse_geo(geo_file, &read(geo_file)?)?;
    let known: HashSet<&str> = regions.iter().map(|r| r.id.as_str()).collect();
    let pop_rows = parse_rows(pop_file, &read(pop_file)?, &known)?;
    let cas_rows = parse_rows(cas_file, &read(cas_file)?, &known)?;

    let mut periods: Vec<String> = cas_rows
        .iter()
        .filter_map(|r| r.1.clone())
        .collect::<HashSet<_>>()
        .into_iter()
        .collect();
    sort_periods(&mut periods);
    let single = periods.is_empty();
    if single {
        periods.push("all".into());
    }
    let pidx: HashMap<&str, usize> = periods.iter().enumerate().map(|(i, p)| (p.as_str(), i)).collect();
    let ridx: HashMap<&str, usize> = regions.iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect();
    let m = regions.len();

    let mut cases = vec![vec![0u64; m]; periods.len()];
    for (id, period, value, line) in &cas_rows {
        let count: u64 = value
            .parse::<u64>()
            .or_else(|_| {
                value
                    .parse::<f64>()
                    .ok()
                    .filter(|v| *v >= 0.0 && v.fract() == 0.0)
                    .map(|v| v as u64)
                    .ok_or(())
            })
            .map_err(|_| parse_err(cas_file, *line, format!("cannot parse case count `{value}`")))?;
        let t = period.as_deref().map(|p| pidx[p]).unwrap_or(0);
        cases[t][ridx[id.as_str()]] += count;
    }

    let mut series: Vec<BTreeMap<String, f64>> = vec![BTreeMap::new(); m];
    let mut flat: Vec<Option<f64>> = vec![None; m];
    for (id, period, value, line) in &pop_rows {
        let v = parse_f64(pop_file, *line, value, "population")?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::NonPositivePopulation {
                file: pop_file.to_path_buf(),
                line: *line,
                id: id.clone(),
                value: v,
            });
        }
        let i = ridx[id.as_str()];
        match period {
            Some(p) => {
                *series[i].entry(p.clone()).or_insert(0.0) += v;
            }
            None => *flat[i].get_or_insert(0.0) += v,
        }
    }
    let mut populations = vec![vec![0.0; m]; periods.len()];
    for i in 0..m {
        for (t, label) in periods.iter().enumerate() {
            let v = if let Some(v) = flat[i] {
                Some(v)
            } else if single {
                // single-period cases with per-period populations: average them
                (!series[i].is_empty()).then(|| series[i].values().sum::<f64>() / series[i].len() as f64)
            } else {
                population_at(&series[i], label)
            };
            populations[t][i] = v.ok_or_else(|| {
                parse_err(
                    pop_file,
                    0,
                    format!("no population for region `{}` in period `{label}`", regions[i].id),
                )
            })?;
        }
    }
    StudyRegion::new(regions, periods, populations, cases)
}

/// Paths of the three input files, as handed around by the front ends.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputFiles {
    pub geo: PathBuf,
    pub pop: PathBuf,
    pub cas: PathBuf,
}

impl InputFiles {
    pub fn load(&self) -> Result<StudyRegion> {
        load_study_region(&self.geo, &self.pop, &self.cas)
    }
}

/// Write a study region back out in the three-file text format.
pub fn write_study_region(sr: &StudyRegion, dir: &Path, stem: &str) -> Result<InputFiles> {
    use std::fmt::Write as _;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut geo = String::new();
    let mut pop = String::new();
    let mut cas = String::new();
    for r in sr.regions() {
        writeln!(geo, "{} {} {}", r.id, r.x, r.y).unwrap();
    }
    let single = sr.n_periods() == 1;
    for t in 0..sr.n_periods() {
        for (i, r) in sr.regions().iter().enumerate() {
            if single {
                writeln!(pop, "{} {}", r.id, sr.populations(t)[i]).unwrap();
                writeln!(cas, "{} {}", r.id, sr.cases(t)[i]).unwrap();
            } else {
                let p = &sr.periods()[t];
                writeln!(pop, "{} {} {}", r.id, p, sr.populations(t)[i]).unwrap();
                writeln!(cas, "{} {} {}", r.id, p, sr.cases(t)[i]).unwrap();
            }
        }
    }
    let files = InputFiles {
        geo: dir.join(format!("{stem}.geo")),
        pop: dir.join(format!("{stem}.pop")),
        cas: dir.join(format!("{stem}.cas")),
    };
    for (path, text) in [(&files.geo, geo), (&files.pop, pop), (&files.cas, cas)] {
        crate::output::write_atomic(path, text.as_bytes())?;
    }
    Ok(files)
}
