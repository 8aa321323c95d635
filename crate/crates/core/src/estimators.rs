//! Two-group, two-period point estimators.
//!
//! Group 1 is the treatment group, group 0 the control group, period 0 is
//! before and period 1 after. All estimators read only the [`CellTable`].

use std::collections::BTreeMap;
use std::fmt;

use serde::{Serialize, Serializer};

use crate::dataset::{describe_design, CellTable};
use crate::empirical::{Envelope, QqTransform, StepCdf};
use crate::error::{Error, Result};

/// Wald ratios with a denominator this small are refused.
pub const EPS_DENOM: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EstimateKind {
    Did,
    Tc,
    Cic,
    Lqte(f64),
}

impl fmt::Display for EstimateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Did => write!(f, "did"),
            Self::Tc => write!(f, "tc"),
            Self::Cic => write!(f, "cic"),
            Self::Lqte(q) => write!(f, "lqte({q})"),
        }
    }
}

impl Serialize for EstimateKind {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CiMethod {
    Percentile,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Ci {
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    pub method: CiMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Estimate {
    pub kind: EstimateKind,
    pub point: f64,
    pub se: Option<f64>,
    pub ci: Option<Ci>,
    /// Where `se` came from: "influence" or "bootstrap".
    pub se_source: Option<String>,
    #[serde(skip)]
    pub influence: Option<Vec<f64>>,
    pub diagnostics: BTreeMap<String, f64>,
}

impl Estimate {
    pub fn new(kind: EstimateKind, point: f64) -> Self {
        Self {
            kind,
            point,
            se: None,
            ci: None,
            se_source: None,
            influence: None,
            diagnostics: BTreeMap::new(),
        }
    }

    pub(crate) fn note(mut self, key: &str, v: f64) -> Self {
        self.diagnostics.insert(key.to_string(), v);
        self
    }
}

fn check_denom(what: &'static str, value: f64) -> Result<()> {
    if value.abs() <= EPS_DENOM || !value.is_finite() {
        return Err(Error::WeakDesign { what, value });
    }
    Ok(())
}

/// The four (g,t) means of Y and D, indexed `[g][t]`.
struct Means {
    y: [[f64; 2]; 2],
    d: [[f64; 2]; 2],
}

fn means(ct: &CellTable) -> Result<Means> {
    ct.require_two_by_two()?;
    let mut m = Means {
        y: [[0.0; 2]; 2],
        d: [[0.0; 2]; 2],
    };
    for g in 0..2 {
        for t in 0..2 {
            let gp = ct.gt(g, t)?;
            m.y[g as usize][t as usize] = gp.mean_y;
            m.d[g as usize][t as usize] = gp.mean_d;
        }
    }
    Ok(m)
}

pub fn did_y(ct: &CellTable) -> Result<f64> {
    let m = means(ct)?;
    Ok(m.y[1][1] - m.y[1][0] - m.y[0][1] + m.y[0][0])
}

pub fn did_d(ct: &CellTable) -> Result<f64> {
    let m = means(ct)?;
    Ok(m.d[1][1] - m.d[1][0] - m.d[0][1] + m.d[0][0])
}

/// DID_Y / DID_D.
pub fn wald_did(ct: &CellTable) -> Result<Estimate> {
    let (num, den) = (did_y(ct)?, did_d(ct)?);
    check_denom("DID_D", den)?;
    Ok(Estimate::new(EstimateKind::Did, num / den)
        .note("did_y", num)
        .note("did_d", den))
}

fn require_stable(ct: &CellTable, tol: f64) -> Result<()> {
    let info = describe_design(ct, tol)?;
    if !info.stable_control {
        return Err(Error::UnstableControl {
            max_change: info.max_control_change,
        });
    }
    Ok(())
}

/// E(D_11) − E(D_10), checked against [`EPS_DENOM`].
pub fn first_stage(ct: &CellTable) -> Result<f64> {
    let m = means(ct)?;
    let den = m.d[1][1] - m.d[1][0];
    check_denom("E(D_11) - E(D_10)", den)?;
    Ok(den)
}

/// δ_d = E(Y_d01) − E(Y_d00) for every level present in cell (g=1, t=0).
pub fn control_trends(ct: &CellTable) -> Result<BTreeMap<u32, f64>> {
    ct.gt(1, 0)?
        .by_d
        .keys()
        .map(|&d| Ok((d, ct.cell(d, 0, 1)?.mean - ct.cell(d, 0, 0)?.mean)))
        .collect()
}

/// Time-corrected Wald ratio. `stable_tol = f64::INFINITY` skips the
/// stable-control check.
pub fn wald_tc(ct: &CellTable, stable_tol: f64) -> Result<Estimate> {
    let den = first_stage(ct)?;
    require_stable(ct, stable_tol)?;
    let deltas = control_trends(ct)?;
    let (t0, t1) = (ct.gt(1, 0)?, ct.gt(1, 1)?);
    let correction: f64 = deltas.iter().map(|(&d, &dl)| t0.share(d) * dl).sum();
    let mut est = Estimate::new(EstimateKind::Tc, (t1.mean_y - t0.mean_y - correction) / den)
        .note("first_stage", den);
    for (d, dl) in deltas {
        est = est.note(&format!("delta_{d}"), dl);
    }
    Ok(est)
}

/// Q_d built from control cells (d,0,0) → (d,0,1).
pub fn qq_transform(ct: &CellTable, d: u32) -> Result<QqTransform> {
    QqTransform::new(&ct.cell(d, 0, 0)?.sample, &ct.cell(d, 0, 1)?.sample)
}

/// Q_d applied to the treatment group's period-0 sample at level d, with a
/// count of points outside the control period-0 support.
pub(crate) fn transformed_sample(ct: &CellTable, d: u32) -> Result<(Vec<f64>, usize)> {
    let qq = qq_transform(ct, d)?;
    let src = &ct.cell(d, 1, 0)?.sample;
    let outside = src.iter().filter(|&&y| qq.out_of_support(y)).count();
    // Q_d is non-decreasing, so the image of a sorted sample stays sorted.
    Ok((src.iter().map(|&y| qq.eval(y)).collect(), outside))
}

/// Changes-in-changes Wald ratio.
pub fn wald_cic(ct: &CellTable, stable_tol: f64) -> Result<Estimate> {
    let den = first_stage(ct)?;
    require_stable(ct, stable_tol)?;
    let (t0, t1) = (ct.gt(1, 0)?, ct.gt(1, 1)?);
    let mut sum_q = 0.0;
    let mut outside = 0;
    for (&d, c) in &t0.by_d {
        let (qs, out) = transformed_sample(ct, d)?;
        sum_q += c.n as f64 * (qs.iter().sum::<f64>() / qs.len() as f64);
        outside += out;
    }
    let mean_q = sum_q / t0.n as f64;
    if outside > 0 {
        log::debug!("{outside} treatment-group period-0 outcomes fall outside the control support");
    }
    Ok(Estimate::new(EstimateKind::Cic, (t1.mean_y - mean_q) / den)
        .note("first_stage", den)
        .note("mean_q_y10", mean_q)
        .note("out_of_support", outside as f64))
}

/// Estimated CDF of Y(d) among switchers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwitcherCdf {
    pub d: u32,
    /// Signed, possibly non-monotone.
    pub raw: StepCdf,
    /// Monotone repair of `raw` used for quantiles.
    pub cdf: StepCdf,
    pub violation: f64,
    pub rearranged: bool,
}

pub fn switcher_cdf(ct: &CellTable, d: u32) -> Result<SwitcherCdf> {
    ct.require_two_by_two()?;
    let (p11, p10) = (ct.share(d, 1, 1), ct.share(d, 1, 0));
    if p11 == p10 {
        return Err(Error::ZeroSwitcherShare { d });
    }
    let f11 = if p11 > 0.0 {
        Some(StepCdf::ecdf(&ct.cell(d, 1, 1)?.sample)?)
    } else {
        None
    };
    let fq = if p10 > 0.0 {
        Some(StepCdf::ecdf(&transformed_sample(ct, d)?.0)?)
    } else {
        None
    };
    let mut grid: Vec<f64> = f11
        .iter()
        .chain(fq.iter())
        .flat_map(|f| f.grid().iter().copied())
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let den = p11 - p10;
    let mut values: Vec<f64> = grid
        .iter()
        .map(|&y| {
            let a = f11.as_ref().map_or(0.0, |f| p11 * f.eval(y));
            let b = fq.as_ref().map_or(0.0, |f| p10 * f.eval(y));
            (a - b) / den
        })
        .collect();
    // Both components are 1 at the top of the grid.
    *values.last_mut().unwrap() = 1.0;
    let raw = StepCdf::from_parts(grid, values);
    let violation = raw.monotonicity_violation();
    let mut cdf = raw.envelope(Envelope::SupBelow).clip01();
    let rearranged = cdf != raw;
    if rearranged {
        cdf = StepCdf::from_parts(cdf.grid().to_vec(), cdf.values().to_vec());
    }
    Ok(SwitcherCdf {
        d,
        raw,
        cdf,
        violation,
        rearranged,
    })
}

fn require_binary(ct: &CellTable) -> Result<()> {
    match ct.levels.iter().find(|&&d| d > 1) {
        Some(&d) => Err(Error::NotBinary(d)),
        None => Ok(()),
    }
}

/// τ_q = F⁻¹_{Y11(1)|S}(q) − F⁻¹_{Y11(0)|S}(q) from the rearranged CDFs.
pub fn lqte(ct: &CellTable, q: f64, stable_tol: f64) -> Result<Estimate> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidConfig(format!("quantile {q} not in (0,1)")));
    }
    require_binary(ct)?;
    require_stable(ct, stable_tol)?;
    let (s0, s1) = (switcher_cdf(ct, 0)?, switcher_cdf(ct, 1)?);
    let (y1, y0) = (s1.cdf.gen_inverse(q), s0.cdf.gen_inverse(q));
    Ok(Estimate::new(EstimateKind::Lqte(q), y1 - y0)
        .note("quantile_y1", y1)
        .note("quantile_y0", y0)
        .note("violation_d0", s0.violation)
        .note("violation_d1", s1.violation))
}

/// Dispatches on `kind`.
pub fn estimate(ct: &CellTable, kind: EstimateKind, stable_tol: f64) -> Result<Estimate> {
    match kind {
        EstimateKind::Did => wald_did(ct),
        EstimateKind::Tc => wald_tc(ct, stable_tol),
        EstimateKind::Cic => wald_cic(ct, stable_tol),
        EstimateKind::Lqte(q) => lqte(ct, q, stable_tol),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decomposition {
    pub alpha: f64,
    pub did_d: f64,
    pub first_stage_gap: f64,
    pub control_gap: f64,
    pub interpretation: String,
}

/// W_DID = αΔ + (1−α)Δ′ with α = (E(D_11) − E(D_10))/DID_D.
pub fn did_decomposition(ct: &CellTable) -> Result<Decomposition> {
    let m = means(ct)?;
    let fs = m.d[1][1] - m.d[1][0];
    let cg = m.d[0][1] - m.d[0][0];
    let dd = fs - cg;
    check_denom("DID_D", dd)?;
    let alpha = fs / dd;
    let interpretation = if cg == 0.0 {
        "alpha = 1: control treatment rate is stable, Wald-DID targets the switchers' effect"
    } else if alpha > 1.0 {
        "alpha > 1: Wald-DID is a weighted difference of treatment- and control-group effects and can have the wrong sign"
    } else {
        "alpha < 1: Wald-DID is a weighted average of treatment- and control-group effects"
    };
    Ok(Decomposition {
        alpha,
        did_d: dd,
        first_stage_gap: fs,
        control_gap: cg,
        interpretation: interpretation.to_string(),
    })
}
