//! Micro-data ingestion and the per-cell index every estimator reads.
//!
//! A cell is a (d, g, t) triple. Samples inside each cell are stored sorted,
//! and all means are computed from the sorted samples, so the table (and
//! everything computed from it) does not depend on input row order.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Observation {
    pub y: f64,
    /// Treatment level, 0..=d̄.
    pub d: u32,
    pub g: i64,
    pub t: i64,
    pub cluster: Option<i64>,
}

impl Observation {
    pub fn new(y: f64, d: u32, g: i64, t: i64) -> Self {
        Self {
            y,
            d,
            g,
            t,
            cluster: None,
        }
    }
}

/// Column names used when reading a delimited file.
#[derive(Debug, Clone, Serialize)]
pub struct Schema {
    pub y: String,
    pub d: String,
    pub g: String,
    pub t: String,
    pub cluster: Option<String>,
    pub delimiter: u8,
    /// Field values treated as missing. A row containing one is rejected.
    pub na: Vec<String>,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            y: "y".into(),
            d: "d".into(),
            g: "g".into(),
            t: "t".into(),
            cluster: None,
            delimiter: b',',
            na: vec!["".into(), "NA".into(), "NaN".into(), ".".into()],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    obs: Vec<Observation>,
}

impl Dataset {
    pub fn new(obs: Vec<Observation>) -> Result<Self> {
        if obs.is_empty() {
            return Err(Error::EmptyInput);
        }
        for (i, o) in obs.iter().enumerate() {
            if !o.y.is_finite() {
                return Err(Error::Parse {
                    row: i + 1,
                    column: "y".into(),
                    value: o.y.to_string(),
                });
            }
        }
        Ok(Self { obs })
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.obs
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Observation> {
        self.obs.iter()
    }

    pub fn has_clusters(&self) -> bool {
        self.obs.iter().all(|o| o.cluster.is_some())
    }

    pub fn groups(&self) -> Vec<i64> {
        distinct(self.obs.iter().map(|o| o.g))
    }

    pub fn periods(&self) -> Vec<i64> {
        distinct(self.obs.iter().map(|o| o.t))
    }

    pub fn max_level(&self) -> u32 {
        self.obs.iter().map(|o| o.d).max().unwrap_or(0)
    }

    /// Keeps rows for which `keep` is true. Errors if nothing survives.
    pub fn filter(&self, keep: impl Fn(&Observation) -> bool) -> Result<Self> {
        Self::new(self.obs.iter().filter(|o| keep(o)).copied().collect())
    }

    /// Rewrites group and period labels; rows mapped to `None` are dropped.
    pub fn relabel(&self, f: impl Fn(&Observation) -> Option<(i64, i64)>) -> Result<Self> {
        let obs = self
            .obs
            .iter()
            .filter_map(|o| f(o).map(|(g, t)| Observation { g, t, ..*o }))
            .collect();
        Self::new(obs)
    }

    /// Restricts to periods `t0 < t1`-style pair `(before, after)` and
    /// recodes them to 0 and 1.
    pub fn period_pair(&self, before: i64, after: i64) -> Result<Self> {
        let periods = self.periods();
        for p in [before, after] {
            if !periods.contains(&p) {
                return Err(Error::MissingPeriod(p));
            }
        }
        self.relabel(|o| {
            if o.t == before {
                Some((o.g, 0))
            } else if o.t == after {
                Some((o.g, 1))
            } else {
                None
            }
        })
    }

    /// Maps the data onto the two-group, two-period layout. Group and period
    /// labels are ranked, so exactly two distinct values of each are needed;
    /// the smaller group label becomes the control group.
    pub fn two_by_two(&self) -> Result<Self> {
        let groups = self.groups();
        let periods = self.periods();
        if groups.len() != 2 || periods.len() != 2 {
            return Err(Error::TwoGroupLabels { groups, periods });
        }
        if groups == [0, 1] && periods == [0, 1] {
            return Ok(self.clone());
        }
        self.relabel(|o| Some(((o.g == groups[1]) as i64, (o.t == periods[1]) as i64)))
    }

    pub fn resample(&self, idx: &[usize]) -> Self {
        Self {
            obs: idx.iter().map(|&i| self.obs[i]).collect(),
        }
    }
}

fn distinct(it: impl Iterator<Item = i64>) -> Vec<i64> {
    let mut v: Vec<i64> = it.collect();
    v.sort_unstable();
    v.dedup();
    v
}

pub fn load_table(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_table(file, schema)
}

/// Parses delimited text with a header row. Row numbers in errors count data
/// rows from 1.
pub fn read_table<R: Read>(reader: R, schema: &Schema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let (iy, id, ig, it) = (col(&schema.y)?, col(&schema.d)?, col(&schema.g)?, col(&schema.t)?);
    let ic = schema.cluster.as_deref().map(col).transpose()?;

    let mut obs = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let field = |idx: usize, name: &str| -> Result<&str> {
            let v = rec.get(idx).unwrap_or("");
            if schema.na.iter().any(|na| na == v) {
                return Err(Error::MissingValue {
                    row,
                    column: name.to_string(),
                });
            }
            Ok(v)
        };
        let bad = |name: &str, v: &str| Error::Parse {
            row,
            column: name.to_string(),
            value: v.to_string(),
        };
        let ys = field(iy, &schema.y)?;
        let y: f64 = ys
            .parse()
            .ok()
            .filter(|y: &f64| y.is_finite())
            .ok_or_else(|| bad(&schema.y, ys))?;
        let ds = field(id, &schema.d)?;
        let d = parse_level(ds).ok_or_else(|| bad(&schema.d, ds))?;
        let gs = field(ig, &schema.g)?;
        let g = parse_int(gs).ok_or_else(|| bad(&schema.g, gs))?;
        let ts = field(it, &schema.t)?;
        let t = parse_int(ts).ok_or_else(|| bad(&schema.t, ts))?;
        let cluster = match (ic, &schema.cluster) {
            (Some(idx), Some(name)) => {
                let cs = field(idx, name)?;
                Some(parse_int(cs).ok_or_else(|| bad(name, cs))?)
            }
            _ => None,
        };
        obs.push(Observation { y, d, g, t, cluster });
    }
    Dataset::new(obs)
}

// Accepts "3" and "3.0" but not "3.5" or "-1".
fn parse_level(s: &str) -> Option<u32> {
    if let Ok(v) = s.parse::<u32>() {
        return Some(v);
    }
    let f: f64 = s.parse().ok()?;
    (f >= 0.0 && f.fract() == 0.0 && f <= u32::MAX as f64).then_some(f as u32)
}

fn parse_int(s: &str) -> Option<i64> {
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    let f: f64 = s.parse().ok()?;
    (f.is_finite() && f.fract() == 0.0 && f.abs() < 9.0e15).then_some(f as i64)
}

/// Outcomes of one (d, g, t) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub n: usize,
    pub mean: f64,
    /// Sorted ascending.
    pub sample: Vec<f64>,
}

impl Cell {
    fn from_sample(mut sample: Vec<f64>) -> Self {
        sample.sort_by(f64::total_cmp);
        let n = sample.len();
        let mean = sample.iter().sum::<f64>() / n as f64;
        Self { n, mean, sample }
    }
}

/// All observations of one (g, t) pair, split by treatment level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupPeriod {
    pub n: usize,
    pub mean_y: f64,
    pub mean_d: f64,
    pub by_d: BTreeMap<u32, Cell>,
}

impl GroupPeriod {
    /// p_{d|gt}
    pub fn share(&self, d: u32) -> f64 {
        self.count(d) as f64 / self.n as f64
    }

    pub fn count(&self, d: u32) -> usize {
        self.by_d.get(&d).map_or(0, |c| c.n)
    }

    /// P(D ≥ d | g, t)
    pub fn share_at_least(&self, d: u32) -> f64 {
        self.by_d.range(d..).map(|(_, c)| c.n).sum::<usize>() as f64 / self.n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellTable {
    pub n: usize,
    pub cells: BTreeMap<(i64, i64), GroupPeriod>,
    /// Treatment levels observed anywhere, ascending.
    pub levels: Vec<u32>,
}

impl CellTable {
    pub fn build(ds: &Dataset) -> Self {
        let mut raw: BTreeMap<(i64, i64), BTreeMap<u32, Vec<f64>>> = BTreeMap::new();
        for o in ds.iter() {
            raw.entry((o.g, o.t)).or_default().entry(o.d).or_default().push(o.y);
        }
        let mut levels = Vec::new();
        let cells = raw
            .into_iter()
            .map(|(key, by_d)| {
                let by_d: BTreeMap<u32, Cell> =
                    by_d.into_iter().map(|(d, s)| (d, Cell::from_sample(s))).collect();
                levels.extend(by_d.keys().copied());
                let n: usize = by_d.values().map(|c| c.n).sum();
                let sum_y: f64 = by_d.values().map(|c| c.n as f64 * c.mean).sum();
                let sum_d: f64 = by_d.iter().map(|(d, c)| *d as f64 * c.n as f64).sum();
                let gp = GroupPeriod {
                    n,
                    mean_y: sum_y / n as f64,
                    mean_d: sum_d / n as f64,
                    by_d,
                };
                (key, gp)
            })
            .collect();
        levels.sort_unstable();
        levels.dedup();
        Self {
            n: ds.len(),
            cells,
            levels,
        }
    }

    pub fn gt(&self, g: i64, t: i64) -> Result<&GroupPeriod> {
        self.cells.get(&(g, t)).ok_or(Error::MissingGroupPeriod { g, t })
    }

    pub fn cell(&self, d: u32, g: i64, t: i64) -> Result<&Cell> {
        self.cells
            .get(&(g, t))
            .and_then(|gp| gp.by_d.get(&d))
            .ok_or(Error::MissingCell { d, g, t })
    }

    pub fn try_cell(&self, d: u32, g: i64, t: i64) -> Option<&Cell> {
        self.cells.get(&(g, t)).and_then(|gp| gp.by_d.get(&d))
    }

    /// p_{d|gt}; zero when the (g,t) pair is absent.
    pub fn share(&self, d: u32, g: i64, t: i64) -> f64 {
        self.cells.get(&(g, t)).map_or(0.0, |gp| gp.share(d))
    }

    /// P(G=g, T=t)
    pub fn p_gt(&self, g: i64, t: i64) -> f64 {
        self.cells.get(&(g, t)).map_or(0.0, |gp| gp.n as f64 / self.n as f64)
    }

    /// P(D=d, G=g, T=t)
    pub fn p_dgt(&self, d: u32, g: i64, t: i64) -> f64 {
        self.try_cell(d, g, t).map_or(0.0, |c| c.n as f64 / self.n as f64)
    }

    /// Checks that (g,t) ∈ {0,1}² are the only pairs and all are populated.
    pub fn require_two_by_two(&self) -> Result<()> {
        let keys: Vec<(i64, i64)> = self.cells.keys().copied().collect();
        if keys != [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let mut groups: Vec<i64> = keys.iter().map(|k| k.0).collect();
            let mut periods: Vec<i64> = keys.iter().map(|k| k.1).collect();
            groups.dedup();
            periods.sort_unstable();
            periods.dedup();
            return Err(Error::TwoGroupLabels { groups, periods });
        }
        Ok(())
    }

    pub fn is_binary(&self) -> bool {
        self.levels.iter().all(|&d| d <= 1)
    }

    /// Inverse of `build` up to row order: one observation per sample point.
    pub fn reassemble(&self) -> Vec<Observation> {
        let mut out = Vec::with_capacity(self.n);
        for (&(g, t), gp) in &self.cells {
            for (&d, c) in &gp.by_d {
                out.extend(c.sample.iter().map(|&y| Observation::new(y, d, g, t)));
            }
        }
        out
    }
}

/// First-stage and stability diagnostics for the two-group design.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignInfo {
    /// λ_{gd} = p_{d|g1}/p_{d|g0}, keyed by (g, d); `None` when p_{d|g0} = 0.
    #[serde(serialize_with = "lambda_entries")]
    pub lambda: BTreeMap<(i64, u32), Option<f64>>,
    /// E(D_11) − E(D_10)
    pub first_stage_gap: f64,
    /// E(D_01) − E(D_00)
    pub control_gap: f64,
    /// DID_D
    pub did_d: f64,
    /// Per level: |p_{d|01} − p_{d|00}| ≤ tol.
    pub stable_by_level: BTreeMap<u32, bool>,
    pub stable_control: bool,
    pub max_control_change: f64,
    pub tol: f64,
}

// JSON object keys must be strings, so write (g, d, λ) records instead.
fn lambda_entries<S: serde::Serializer>(
    m: &BTreeMap<(i64, u32), Option<f64>>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    #[derive(Serialize)]
    struct Entry {
        g: i64,
        d: u32,
        lambda: Option<f64>,
    }
    s.collect_seq(m.iter().map(|(&(g, d), &lambda)| Entry { g, d, lambda }))
}

impl DesignInfo {
    pub fn lambda(&self, g: i64, d: u32) -> Option<f64> {
        self.lambda.get(&(g, d)).copied().flatten()
    }
}

/// Evaluates the design without failing on instability; the first-stage
/// conditions are enforced by [`check_design`].
pub fn describe_design(ct: &CellTable, tol: f64) -> Result<DesignInfo> {
    ct.require_two_by_two()?;
    let (c0, c1) = (ct.gt(0, 0)?, ct.gt(0, 1)?);
    let (t0, t1) = (ct.gt(1, 0)?, ct.gt(1, 1)?);
    let mut lambda = BTreeMap::new();
    for g in [0, 1] {
        let (a, b) = (ct.gt(g, 0)?, ct.gt(g, 1)?);
        for &d in &ct.levels {
            let p0 = a.share(d);
            lambda.insert((g, d), (p0 > 0.0).then(|| b.share(d) / p0));
        }
    }
    let mut stable_by_level = BTreeMap::new();
    let mut max_change = 0.0f64;
    for &d in &ct.levels {
        let change = (c1.share(d) - c0.share(d)).abs();
        max_change = max_change.max(change);
        // At zero tolerance compare counts exactly, free of rounding.
        let stable = if tol == 0.0 {
            c1.count(d) * c0.n == c0.count(d) * c1.n
        } else {
            change <= tol
        };
        stable_by_level.insert(d, stable);
    }
    let first_stage_gap = t1.mean_d - t0.mean_d;
    let control_gap = c1.mean_d - c0.mean_d;
    Ok(DesignInfo {
        lambda,
        first_stage_gap,
        control_gap,
        did_d: first_stage_gap - control_gap,
        stable_control: stable_by_level.values().all(|&s| s),
        stable_by_level,
        max_control_change: max_change,
        tol,
    })
}

/// Like [`describe_design`] but errors unless E(D_11) > E(D_10) and the
/// treatment group's rise exceeds the control group's.
pub fn check_design(ct: &CellTable, tol: f64) -> Result<DesignInfo> {
    let info = describe_design(ct, tol)?;
    if info.first_stage_gap <= 0.0 {
        return Err(Error::FirstStage(format!(
            "E(D_11) - E(D_10) = {} is not positive",
            info.first_stage_gap
        )));
    }
    if info.did_d <= 0.0 {
        return Err(Error::FirstStage(format!(
            "treatment rises less in the treatment group than in the control group (DID_D = {})",
            info.did_d
        )));
    }
    Ok(info)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub const TOY16: [(i64, i64, u32, f64); 16] = [
        (0, 0, 0, 0.0),
        (0, 0, 0, 2.0),
        (0, 0, 1, 10.0),
        (0, 0, 1, 12.0),
        (0, 1, 0, 1.0),
        (0, 1, 0, 3.0),
        (0, 1, 1, 13.0),
        (0, 1, 1, 15.0),
        (1, 0, 0, 0.0),
        (1, 0, 0, 1.0),
        (1, 0, 0, 2.0),
        (1, 0, 1, 11.0),
        (1, 1, 0, 2.0),
        (1, 1, 1, 22.0),
        (1, 1, 1, 24.0),
        (1, 1, 1, 30.0),
    ];

    pub fn toy16() -> Dataset {
        Dataset::new(TOY16.iter().map(|&(g, t, d, y)| Observation::new(y, d, g, t)).collect())
            .unwrap()
    }

    /// TOY16 with the control group's period-1 treatments set to (0,0,0,1).
    pub fn toy16_unstable() -> Dataset {
        let mut obs: Vec<Observation> =
            TOY16.iter().map(|&(g, t, d, y)| Observation::new(y, d, g, t)).collect();
        for (o, d) in obs[4..8].iter_mut().zip([0, 0, 0, 1]) {
            o.d = d;
        }
        Dataset::new(obs).unwrap()
    }
}
