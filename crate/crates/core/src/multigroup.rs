//! Many-group designs: stability classification into supergroups, pooled
//! Wald ratios combined across increasing and decreasing arms, and the
//! weights behind the average causal response for ordered treatments.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::dataset::{describe_design, CellTable, Dataset};
use crate::error::{Error, Result};
use crate::estimators::{did_d, estimate, Estimate, EstimateKind};
use crate::inference::{bootstrap, BootstrapConfig, BootstrapResult};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Pearson test of independence on a contingency table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Chi2Test {
    pub statistic: f64,
    pub df: usize,
    pub pvalue: f64,
    /// Smallest expected count among retained cells; below 5 the
    /// chi-squared approximation is shaky.
    pub min_expected: f64,
}

/// `table[r][c]` are counts. Rows and columns with a zero margin are
/// dropped before computing degrees of freedom.
pub fn chi2_independence(table: &[Vec<usize>]) -> Chi2Test {
    let ncol = table.iter().map(Vec::len).max().unwrap_or(0);
    let col_tot: Vec<usize> = (0..ncol)
        .map(|c| table.iter().map(|r| r.get(c).copied().unwrap_or(0)).sum())
        .collect();
    let cols: Vec<usize> = (0..ncol).filter(|&c| col_tot[c] > 0).collect();
    let rows: Vec<&Vec<usize>> = table.iter().filter(|r| r.iter().sum::<usize>() > 0).collect();
    let total: usize = col_tot.iter().sum();
    let df = rows.len().saturating_sub(1) * cols.len().saturating_sub(1);
    if df == 0 {
        return Chi2Test {
            statistic: 0.0,
            df: 0,
            pvalue: 1.0,
            min_expected: f64::INFINITY,
        };
    }
    let mut stat = 0.0;
    let mut min_expected = f64::INFINITY;
    for r in &rows {
        let rt: usize = r.iter().sum();
        for &c in &cols {
            let e = rt as f64 * col_tot[c] as f64 / total as f64;
            let o = r.get(c).copied().unwrap_or(0) as f64;
            stat += (o - e).powi(2) / e;
            min_expected = min_expected.min(e);
        }
    }
    let pvalue = ChiSquared::new(df as f64).map_or(f64::NAN, |c| c.sf(stat));
    Chi2Test {
        statistic: stat,
        df,
        pvalue,
        min_expected,
    }
}

/// Tests whether the treatment distribution of one group is the same in
/// both periods: a levels × 2 table, `levels − 1` degrees of freedom.
pub fn chi2_stability(before: &BTreeMap<u32, usize>, after: &BTreeMap<u32, usize>) -> Chi2Test {
    let levels: BTreeSet<u32> = before.keys().chain(after.keys()).copied().collect();
    let table: Vec<Vec<usize>> = levels
        .iter()
        .map(|d| vec![before.get(d).copied().unwrap_or(0), after.get(d).copied().unwrap_or(0)])
        .collect();
    chi2_independence(&table)
}

/// The two periods of a many-group dataset, ascending.
fn two_periods(ds: &Dataset) -> Result<(i64, i64)> {
    match ds.periods()[..] {
        [a, b] => Ok((a, b)),
        _ => Err(Error::TwoGroupLabels {
            groups: ds.groups(),
            periods: ds.periods(),
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroupLabel {
    /// +1 increasing, 0 stable, −1 decreasing.
    pub label: i8,
    pub pvalue: Option<f64>,
    /// Mean treatment after minus before.
    pub change: Option<f64>,
    pub min_expected: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupergroupMap {
    pub groups: BTreeMap<i64, GroupLabel>,
    pub threshold: Option<f64>,
}

impl SupergroupMap {
    pub fn from_labels(labels: impl IntoIterator<Item = (i64, i8)>) -> Result<Self> {
        let mut groups = BTreeMap::new();
        for (g, label) in labels {
            if !(-1..=1).contains(&label) {
                return Err(Error::InvalidConfig(format!("group {g}: label {label} not in {{-1,0,1}}")));
            }
            let entry = GroupLabel {
                label,
                pvalue: None,
                change: None,
                min_expected: None,
            };
            if groups.insert(g, entry).is_some() {
                return Err(Error::InvalidConfig(format!("group {g} labeled twice")));
            }
        }
        Ok(Self {
            groups,
            threshold: None,
        })
    }

    pub fn label(&self, g: i64) -> Option<i8> {
        self.groups.get(&g).map(|l| l.label)
    }

    pub fn members(&self, label: i8) -> Vec<i64> {
        self.groups.iter().filter(|(_, l)| l.label == label).map(|(&g, _)| g).collect()
    }

    /// Two columns `group,label`, header optional.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)?;
        let mut labels = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let field = |k: usize, name: &str| {
                rec.get(k).ok_or_else(|| Error::MissingValue {
                    row: i + 1,
                    column: name.into(),
                })
            };
            let (g, l) = (field(0, "group")?, field(1, "label")?);
            if i == 0 && g.parse::<i64>().is_err() {
                continue;
            }
            let parse = |s: &str, column: &str| {
                s.parse::<i64>().map_err(|_| Error::Parse {
                    row: i + 1,
                    column: column.into(),
                    value: s.into(),
                })
            };
            labels.push((parse(g, "group")?, parse(l, "label")?.clamp(-2, 2) as i8));
        }
        Self::from_labels(labels)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "group,label")?;
        for (g, l) in &self.groups {
            writeln!(f, "{g},{}", l.label)?;
        }
        f.flush()?;
        Ok(())
    }
}

/// Labels each group by a chi-squared test of its treatment distribution
/// across the two periods: stable (0) when the p-value exceeds `threshold`,
/// otherwise the sign of the change in mean treatment.
pub fn classify_supergroups(ds: &Dataset, threshold: f64) -> Result<SupergroupMap> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidConfig(format!("threshold {threshold} not in [0,1]")));
    }
    let (t0, t1) = two_periods(ds)?;
    let groups = ds.groups();
    if groups.len() < 2 {
        return Err(Error::TwoGroupLabels {
            groups,
            periods: ds.periods(),
        });
    }
    let ct = CellTable::build(ds);
    let labeled: Vec<(i64, GroupLabel)> = groups
        .par_iter()
        .map(|&g| {
            let (a, b) = (ct.gt(g, t0)?, ct.gt(g, t1)?);
            let counts = |gp: &crate::dataset::GroupPeriod| -> BTreeMap<u32, usize> {
                gp.by_d.iter().map(|(&d, c)| (d, c.n)).collect()
            };
            let test = chi2_stability(&counts(a), &counts(b));
            let change = b.mean_d - a.mean_d;
            let label = if test.pvalue > threshold {
                0
            } else if change > 0.0 {
                1
            } else if change < 0.0 {
                -1
            } else {
                log::warn!(
                    "group {g}: treatment distribution changed (p = {:.4}) but its mean did not; labeled stable",
                    test.pvalue
                );
                0
            };
            if test.min_expected < 5.0 {
                log::warn!("group {g}: expected count {:.2} below 5 in stability test", test.min_expected);
            }
            Ok((
                g,
                GroupLabel {
                    label,
                    pvalue: Some(test.pvalue),
                    change: Some(change),
                    min_expected: Some(test.min_expected),
                },
            ))
        })
        .collect::<Result<_>>()?;
    let map = SupergroupMap {
        groups: labeled.into_iter().collect(),
        threshold: Some(threshold),
    };
    if map.members(0).is_empty() {
        return Err(Error::EmptyStableSet);
    }
    Ok(map)
}

/// Groups whose label differs between two classifications, as
/// `(group, label in a, label in b)`.
pub fn compare_classifications(a: &SupergroupMap, b: &SupergroupMap) -> Vec<(i64, Option<i8>, Option<i8>)> {
    let keys: BTreeSet<i64> = a.groups.keys().chain(b.groups.keys()).copied().collect();
    keys.into_iter()
        .map(|g| (g, a.label(g), b.label(g)))
        .filter(|(_, x, y)| x != y)
        .collect()
}

/// Splits rows by position: odd 0-based indices classify, even ones estimate.
pub fn split_sample(ds: &Dataset) -> Result<(Dataset, Dataset)> {
    let obs = ds.observations();
    let pick = |parity: usize| {
        Dataset::new(obs.iter().enumerate().filter(|(i, _)| i % 2 == parity).map(|(_, o)| *o).collect())
    };
    Ok((pick(1)?, pick(0)?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateEstimate {
    pub kind: EstimateKind,
    /// W*(1,0): increasing supergroup against the stable one.
    pub increasing: Option<Estimate>,
    /// W*(−1,0), computed with the original treatment coding, so its
    /// first stage is negative.
    pub decreasing: Option<Estimate>,
    pub w10: f64,
    pub point: f64,
    /// DID*_D(1,0) and DID*_D(0,−1); both should be positive.
    pub did_d_increasing: Option<f64>,
    pub did_d_decreasing: Option<f64>,
    pub share_increasing: f64,
    pub share_decreasing: f64,
    /// Independence of group and period.
    pub group_period_test: Chi2Test,
    pub max_control_change: f64,
    pub warnings: Vec<String>,
    pub se: Option<f64>,
    pub ci: Option<crate::estimators::Ci>,
}

/// Pools the data into supergroups and returns one two-group dataset per
/// arm (`+1` then `−1`), with the stable supergroup as control (g=0) and
/// the arm as treatment (g=1). Empty arms are `None`.
pub fn pooled_arms(ds: &Dataset, map: &SupergroupMap) -> Result<[Option<Dataset>; 2]> {
    let (t0, _) = two_periods(ds)?;
    for g in ds.groups() {
        if map.label(g).is_none() {
            return Err(Error::InvalidConfig(format!("group {g} missing from supergroup map")));
        }
    }
    if map.members(0).is_empty() {
        return Err(Error::EmptyStableSet);
    }
    let arm = |sign: i8| -> Result<Option<Dataset>> {
        if !ds.iter().any(|o| map.label(o.g) == Some(sign)) {
            return Ok(None);
        }
        ds.relabel(|o| {
            let t = (o.t != t0) as i64;
            match map.label(o.g) {
                Some(0) => Some((0, t)),
                Some(l) if l == sign => Some((1, t)),
                _ => None,
            }
        })
        .map(Some)
    };
    let arms = [arm(1)?, arm(-1)?];
    if arms.iter().all(Option::is_none) {
        return Err(Error::NoTreatmentSupergroup);
    }
    Ok(arms)
}

fn aggregate_point(ds: &Dataset, map: &SupergroupMap, kind: EstimateKind) -> Result<f64> {
    let arms = pooled_arms(ds, map)?;
    let mut parts = [None, None];
    for (i, arm) in arms.iter().enumerate() {
        if let Some(a) = arm {
            let ct = CellTable::build(a);
            parts[i] = Some(arm_part(ds, a, &ct, i, estimate(&ct, kind, f64::INFINITY)?.point)?);
        }
    }
    Ok(combine(parts).0)
}

// (W*, DID*_D oriented to be positive, P(G* = arm)).
fn arm_part(ds: &Dataset, arm: &Dataset, ct: &CellTable, i: usize, w: f64) -> Result<(f64, f64, f64)> {
    let dd = did_d(ct)?;
    let share = arm.iter().filter(|o| o.g == 1).count() as f64 / ds.len() as f64;
    Ok((w, if i == 0 { dd } else { -dd }, share))
}

// Returns (point, w10).
fn combine(parts: [Option<(f64, f64, f64)>; 2]) -> (f64, f64) {
    match parts {
        [Some((w1, dd1, p1)), Some((w2, dd2, p2))] => {
            let w10 = dd1 * p1 / (dd1 * p1 + dd2 * p2);
            (w10 * w1 + (1.0 - w10) * w2, w10)
        }
        [Some((w1, ..)), None] => (w1, 1.0),
        [None, Some((w2, ..))] => (w2, 0.0),
        [None, None] => (f64::NAN, f64::NAN),
    }
}

/// Combines the increasing and decreasing arms with weight
/// w_10 = DID*_D(1,0)P(G*=1) / [DID*_D(1,0)P(G*=1) + DID*_D(0,−1)P(G*=−1)].
///
/// The exact stable-control gate is not applied to the pooled control:
/// classification only establishes approximate stability. Its largest
/// share change is reported instead.
pub fn aggregate(ds: &Dataset, map: &SupergroupMap, kind: EstimateKind) -> Result<AggregateEstimate> {
    if matches!(kind, EstimateKind::Lqte(_)) {
        return Err(Error::InvalidConfig("aggregation supports did, tc and cic".into()));
    }
    let arms = pooled_arms(ds, map)?;
    let mut warnings = Vec::new();
    let mut ests: [Option<Estimate>; 2] = [None, None];
    let mut dds = [None, None];
    let mut parts = [None, None];
    let mut max_change = 0.0f64;
    for (i, arm) in arms.iter().enumerate() {
        let Some(a) = arm else { continue };
        let ct = CellTable::build(a);
        let info = describe_design(&ct, 0.0)?;
        max_change = max_change.max(info.max_control_change);
        let e = estimate(&ct, kind, f64::INFINITY)?;
        let part = arm_part(ds, a, &ct, i, e.point)?;
        dds[i] = Some(part.1);
        parts[i] = Some(part);
        ests[i] = Some(e);
    }
    if max_change > 0.0 && !matches!(kind, EstimateKind::Did) {
        warnings.push(format!("pooled stable supergroup's treatment shares move by up to {max_change:.4}"));
    }
    for (i, name) in ["DID*_D(1,0)", "DID*_D(0,-1)"].iter().enumerate() {
        if let Some(v) = dds[i] {
            if v <= 0.0 {
                warnings.push(format!("{name} = {v} is not positive; w_10 may leave [0,1]"));
            }
        }
    }
    let (point, w10) = combine(parts);
    let (t0, _) = two_periods(ds)?;
    let mut table: BTreeMap<i64, [usize; 2]> = BTreeMap::new();
    for o in ds.iter() {
        table.entry(o.g).or_default()[(o.t != t0) as usize] += 1;
    }
    let gt_test = chi2_independence(&table.values().map(|r| r.to_vec()).collect::<Vec<_>>());
    if gt_test.pvalue <= 0.05 {
        warnings.push(format!(
            "group composition differs across periods (chi-squared p = {:.4})",
            gt_test.pvalue
        ));
    }
    for w in &warnings {
        log::debug!("{w}");
    }
    let [increasing, decreasing] = ests;
    Ok(AggregateEstimate {
        kind,
        increasing,
        decreasing,
        w10,
        point,
        did_d_increasing: dds[0],
        did_d_decreasing: dds[1],
        share_increasing: parts[0].map_or(0.0, |p| p.2),
        share_decreasing: parts[1].map_or(0.0, |p| p.2),
        group_period_test: gt_test,
        max_control_change: max_change,
        warnings,
        se: None,
        ci: None,
    })
}

/// Bootstraps the aggregate with the supergroup map held fixed.
pub fn bootstrap_aggregate(
    ds: &Dataset,
    map: &SupergroupMap,
    agg: &mut AggregateEstimate,
    cfg: &BootstrapConfig,
) -> Result<BootstrapResult> {
    let kind = agg.kind;
    let res = bootstrap(ds, agg.point, cfg, |d| aggregate_point(d, map, kind))?;
    agg.se = Some(res.se);
    agg.ci = Some(res.ci);
    Ok(res)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AcrWeights {
    /// (d, w_d) for d = 1..=max level.
    pub weights: Vec<(u32, f64)>,
    /// E(D_11) − E(D_10)
    pub denominator: f64,
    /// P(D_11 ≥ d) ≥ P(D_10 ≥ d) for every d.
    pub dominance: bool,
    pub negative: Vec<u32>,
    pub control_stable_by_level: BTreeMap<u32, bool>,
    pub interpretation: String,
}

/// w_d = [P(D_11 ≥ d) − P(D_10 ≥ d)] / [E(D_11) − E(D_10)].
pub fn acr_weights(ct: &CellTable, stable_tol: f64) -> Result<AcrWeights> {
    let info = describe_design(ct, stable_tol)?;
    let (a, b) = (ct.gt(1, 0)?, ct.gt(1, 1)?);
    let den = b.mean_d - a.mean_d;
    if den.abs() <= crate::estimators::EPS_DENOM {
        return Err(Error::WeakDesign {
            what: "E(D_11) - E(D_10)",
            value: den,
        });
    }
    let top = ct.levels.last().copied().unwrap_or(0);
    let weights: Vec<(u32, f64)> = (1..=top)
        .map(|d| (d, (b.share_at_least(d) - a.share_at_least(d)) / den))
        .collect();
    let negative: Vec<u32> = weights.iter().filter(|(_, w)| *w < 0.0).map(|(d, _)| *d).collect();
    let dominance = (1..=top).all(|d| b.share_at_least(d) >= a.share_at_least(d));
    let interpretation = if negative.is_empty() {
        "weighted average of unit-step effects with non-negative weights".to_string()
    } else {
        format!("first-order dominance fails; levels {negative:?} carry negative weight, so the ratio is not a convex average")
    };
    Ok(AcrWeights {
        weights,
        denominator: den,
        dominance,
        negative,
        control_stable_by_level: info.stable_by_level,
        interpretation,
    })
}
