//! Pre-period diagnostics: the Wald numerators re-estimated on two periods
//! before treatment, where they should vanish, plus per-level trend checks.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::dataset::{CellTable, Dataset};
use crate::error::{Error, Result};
use crate::estimators::{control_trends, did_y, transformed_sample, Ci};
use crate::inference::{bootstrap, BootstrapConfig};
use crate::multigroup::{chi2_stability, Chi2Test};

/// Stability p-values at or below this make the placebo uninformative.
pub const FIRST_STAGE_ALPHA: f64 = 0.05;

/// Two-group data restricted to `(before, after)` and recoded to 0/1.
pub fn placebo_pair(ds: &Dataset, before: i64, after: i64) -> Result<CellTable> {
    let pair = ds.period_pair(before, after)?.two_by_two()?;
    let ct = CellTable::build(&pair);
    ct.require_two_by_two()?;
    Ok(ct)
}

/// The two latest periods before the last one.
pub fn default_pair(ds: &Dataset) -> Result<(i64, i64)> {
    let p = ds.periods();
    if p.len() < 3 {
        return Err(Error::InvalidConfig(format!(
            "placebo tests need at least three periods, found {p:?}"
        )));
    }
    Ok((p[p.len() - 3], p[p.len() - 2]))
}

/// E(Y_10) − E(Y_1,−1) − [E(Y_00) − E(Y_0,−1)] on a recoded pair.
pub fn placebo_did(ct: &CellTable) -> Result<f64> {
    did_y(ct)
}

/// E(Y_10) − E(Y_1,−1 + δ_{D_1,−1}), δ_d taken over the pair.
pub fn placebo_tc(ct: &CellTable) -> Result<f64> {
    let deltas = control_trends(ct)?;
    let (a, b) = (ct.gt(1, 0)?, ct.gt(1, 1)?);
    let corr: f64 = deltas.iter().map(|(&d, &dl)| a.share(d) * dl).sum();
    Ok(b.mean_y - a.mean_y - corr)
}

/// E(Y_10) − E(Q_{D_1,−1}(Y_1,−1)), Q_d taken over the pair.
pub fn placebo_cic(ct: &CellTable) -> Result<f64> {
    let (a, b) = (ct.gt(1, 0)?, ct.gt(1, 1)?);
    let mut sum = 0.0;
    for &d in a.by_d.keys() {
        sum += transformed_sample(ct, d)?.0.iter().sum::<f64>();
    }
    Ok(b.mean_y - sum / a.n as f64)
}

/// Within-level DID of Y; `None` when a cell at that level is empty.
pub fn conditional_trend(ct: &CellTable, d: u32) -> Option<f64> {
    let m = |g, t| ct.try_cell(d, g, t).map(|c| c.mean);
    Some(m(1, 1)? - m(1, 0)? - (m(0, 1)? - m(0, 0)?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlaceboStat {
    pub name: String,
    pub statistic: f64,
    pub se: Option<f64>,
    pub t_stat: Option<f64>,
    pub ci: Option<Ci>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlaceboReport {
    /// Original period labels of the pair.
    pub pair: (i64, i64),
    pub tests: Vec<PlaceboStat>,
    /// One entry per treatment level, named `trend_d{d}`.
    pub conditional: Vec<PlaceboStat>,
    /// Stability of each group's treatment distribution over the pair.
    pub first_stage: BTreeMap<i64, Chi2Test>,
    pub informative: bool,
    pub notes: Vec<String>,
}

fn stat_with_se(
    name: String,
    ds: &Dataset,
    point: f64,
    cfg: Option<&BootstrapConfig>,
    f: impl Fn(&CellTable) -> Result<f64> + Sync,
    notes: &mut Vec<String>,
) -> PlaceboStat {
    let mut s = PlaceboStat {
        name,
        statistic: point,
        se: None,
        t_stat: None,
        ci: None,
    };
    if let Some(cfg) = cfg {
        match bootstrap(ds, point, cfg, |d| f(&CellTable::build(d))) {
            Ok(r) => {
                s.se = Some(r.se);
                s.t_stat = (r.se > 0.0).then(|| point / r.se);
                s.ci = Some(r.ci);
            }
            Err(e) => notes.push(format!("{}: bootstrap failed: {e}", s.name)),
        }
    }
    s
}

/// Runs every placebo on the pair (default: [`default_pair`]) of a
/// two-group dataset. Statistics whose cells are missing are skipped with
/// a note; SEs come from `cfg` when given.
pub fn placebo_report(ds: &Dataset, pair: Option<(i64, i64)>, cfg: Option<&BootstrapConfig>) -> Result<PlaceboReport> {
    let (before, after) = match pair {
        Some(p) => p,
        None => default_pair(ds)?,
    };
    let pds = ds.period_pair(before, after)?.two_by_two()?;
    let ct = CellTable::build(&pds);
    ct.require_two_by_two()?;
    let mut notes = Vec::new();

    let groups = ds.groups();
    let mut first_stage = BTreeMap::new();
    for (g, label) in [0, 1].into_iter().zip(&groups) {
        let counts = |t| -> Result<BTreeMap<u32, usize>> {
            Ok(ct.gt(g, t)?.by_d.iter().map(|(&d, c)| (d, c.n)).collect())
        };
        first_stage.insert(*label, chi2_stability(&counts(0)?, &counts(1)?));
    }
    let informative = first_stage.values().all(|t| t.pvalue > FIRST_STAGE_ALPHA);
    if !informative {
        notes.push("treatment distribution moves over the placebo pair; placebo statistics are uninformative".into());
    }

    type Stat = fn(&CellTable) -> Result<f64>;
    let all: [(&str, Stat); 3] = [("did", placebo_did), ("tc", placebo_tc), ("cic", placebo_cic)];
    let mut tests = Vec::new();
    for (name, f) in all {
        match f(&ct) {
            Ok(v) => tests.push(stat_with_se(name.into(), &pds, v, cfg, f, &mut notes)),
            Err(e) => notes.push(format!("{name}: skipped: {e}")),
        }
    }

    let mut conditional = Vec::new();
    for &d in &ct.levels {
        match conditional_trend(&ct, d) {
            Some(v) => {
                let f = move |c: &CellTable| {
                    conditional_trend(c, d).ok_or(Error::MissingCell { d, g: 0, t: 0 })
                };
                conditional.push(stat_with_se(format!("trend_d{d}"), &pds, v, cfg, f, &mut notes));
            }
            None => notes.push(format!("trend_d{d}: skipped, a cell at d={d} is empty")),
        }
    }
    Ok(PlaceboReport {
        pair: (before, after),
        tests,
        conditional,
        first_stage,
        informative,
        notes,
    })
}
