//! Bounds on the switchers' effects when the control group's treatment
//! shares move between periods.
//!
//! Every bound CDF is a step function evaluated on the pooled outcome grid
//! plus the support endpoints; endpoint atoms are ordinary grid points, so
//! the Stieltjes means are exact.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::dataset::{describe_design, CellTable, Dataset};
use crate::empirical::{clip01, Envelope, StepCdf, Q_EPS};
use crate::error::{Error, Result};
use crate::estimators::{first_stage, lqte, wald_cic, wald_tc, Ci};
use crate::inference::{bootstrap_multi, BootstrapConfig};
use crate::num::f64_or_str;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundsMethod {
    Tc,
    Cic,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantileBounds {
    pub q: f64,
    #[serde(serialize_with = "f64_or_str")]
    pub lower: f64,
    #[serde(serialize_with = "f64_or_str")]
    pub upper: f64,
}

/// Endpoint mass carried by the bound CDFs of one treatment level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DefectiveMass {
    pub d: u32,
    pub lambda: f64,
    /// Mass the lower CDF of Y_d01 puts at the upper support endpoint.
    pub mass_at_upper: f64,
    /// Mass the upper CDF of Y_d01 puts at the lower support endpoint.
    pub mass_at_lower: f64,
    /// True when both bound CDFs are proper without endpoint atoms.
    pub proper: bool,
}

/// Whether the ingredients that make the CIC bounds sharp are increasing on
/// the grid. Finite samples often fail this; it is reported, not enforced.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SharpnessCheck {
    pub d: u32,
    pub t_lower_increasing: bool,
    pub t_upper_increasing: bool,
    pub g_lower_increasing: bool,
    pub g_upper_increasing: bool,
    pub c_lower_increasing: bool,
    pub c_upper_increasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsResult {
    pub method: BoundsMethod,
    #[serde(serialize_with = "f64_or_str")]
    pub lower: f64,
    #[serde(serialize_with = "f64_or_str")]
    pub upper: f64,
    pub quantiles: Vec<QuantileBounds>,
    pub support: (f64, f64),
    /// λ_{0d} per level.
    pub lambda0: BTreeMap<u32, f64>,
    /// Stable control: the bounds are the point estimate.
    pub collapsed: bool,
    pub defective: Vec<DefectiveMass>,
    /// Grid points where the lower switcher-CDF bound exceeded the upper and
    /// the two were swapped.
    pub crossings: usize,
    pub sharpness: Vec<SharpnessCheck>,
    pub lower_ci: Option<Ci>,
    pub upper_ci: Option<Ci>,
}

impl BoundsResult {
    fn collapsed(method: BoundsMethod, point: f64, support: (f64, f64)) -> Self {
        Self {
            method,
            lower: point,
            upper: point,
            quantiles: Vec::new(),
            support,
            lambda0: BTreeMap::new(),
            collapsed: true,
            defective: Vec::new(),
            crossings: 0,
            sharpness: Vec::new(),
            lower_ci: None,
            upper_ci: None,
        }
    }
}

/// Resolves the outcome support: `None` means the pooled sample range.
/// Every outcome must lie inside it.
pub fn resolve_support(ct: &CellTable, support: Option<(f64, f64)>) -> Result<(f64, f64)> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for gp in ct.cells.values() {
        for c in gp.by_d.values() {
            lo = lo.min(c.sample[0]);
            hi = hi.max(*c.sample.last().unwrap());
        }
    }
    let Some((slo, shi)) = support else {
        return Ok((lo, hi));
    };
    if slo.is_nan() || shi.is_nan() || slo >= shi {
        return Err(Error::InvalidConfig(format!("support [{slo}, {shi}] is empty")));
    }
    if lo < slo {
        return Err(Error::OutsideSupport { y: lo, lo: slo, hi: shi });
    }
    if hi > shi {
        return Err(Error::OutsideSupport { y: hi, lo: slo, hi: shi });
    }
    Ok((slo, shi))
}

fn require_binary(ct: &CellTable) -> Result<()> {
    match ct.levels.iter().find(|&&d| d > 1) {
        Some(&d) => Err(Error::NotBinary(d)),
        None => Ok(()),
    }
}

fn lambda0(ct: &CellTable) -> Result<BTreeMap<u32, f64>> {
    let (c0, c1) = (ct.gt(0, 0)?, ct.gt(0, 1)?);
    [0u32, 1]
        .into_iter()
        .map(|d| {
            let p0 = c0.share(d);
            if p0 == 0.0 {
                return Err(Error::MissingCell { d, g: 0, t: 0 });
            }
            Ok((d, c1.share(d) / p0))
        })
        .collect()
}

/// Σ y·jump allowing atoms at ±∞, which make the mean infinite.
fn extended_mean(f: &StepCdf) -> f64 {
    f.grid()
        .iter()
        .zip(f.jumps())
        .filter(|(_, j)| *j != 0.0)
        .map(|(&y, j)| y * j)
        .sum()
}

fn ecdf_or_zero(ct: &CellTable, d: u32, g: i64, t: i64) -> Result<Option<StepCdf>> {
    ct.try_cell(d, g, t).map(|c| StepCdf::ecdf(&c.sample)).transpose()
}

fn eval_opt(f: &Option<StepCdf>, y: f64) -> f64 {
    f.as_ref().map_or(0.0, |f| f.eval(y))
}

/// Grid {y̲} ∪ points ∪ {ȳ}, ascending, deduplicated.
fn grid_with_endpoints(points: impl Iterator<Item = f64>, (lo, hi): (f64, f64)) -> Vec<f64> {
    let mut g: Vec<f64> = points.chain([lo, hi]).collect();
    g.sort_by(f64::total_cmp);
    g.dedup();
    g
}

/// Lower and upper bound CDFs of Y_d01 (the "F̲_d01", "F̄_d01" pair).
pub fn tc_bound_cdfs(
    f01: &Option<StepCdf>,
    lambda: f64,
    (lo, hi): (f64, f64),
) -> (StepCdf, StepCdf) {
    let pts = f01.iter().flat_map(|f| f.grid().iter().copied());
    let grid = grid_with_endpoints(pts, (lo, hi));
    let low: Vec<f64> = grid
        .iter()
        .map(|&y| {
            let f = eval_opt(f01, y);
            clip01(1.0 - lambda * (1.0 - f)) - clip01(1.0 - lambda) * ((y < hi) as u8 as f64)
        })
        .collect();
    let up: Vec<f64> = grid
        .iter()
        .map(|&y| {
            let f = eval_opt(f01, y);
            clip01(lambda * f) + (1.0 - clip01(lambda)) * ((y >= lo) as u8 as f64)
        })
        .collect();
    (
        StepCdf::from_parts(grid.clone(), low).with_support(lo, hi),
        StepCdf::from_parts(grid, up).with_support(lo, hi),
    )
}

/// Endpoint masses of the TC bound CDFs for each level.
pub fn defective_mass_report(ct: &CellTable) -> Result<Vec<DefectiveMass>> {
    ct.require_two_by_two()?;
    require_binary(ct)?;
    Ok(lambda0(ct)?
        .into_iter()
        .map(|(d, lambda)| {
            let mass_at_upper = clip01(1.0 - lambda);
            let mass_at_lower = 1.0 - clip01(lambda);
            DefectiveMass {
                d,
                lambda,
                mass_at_upper,
                mass_at_lower,
                proper: mass_at_upper == 0.0 && mass_at_lower == 0.0,
            }
        })
        .collect())
}

/// Time-corrected bounds. `support = None` uses the sample range; a stable
/// control group (within `stable_tol`) returns the Wald-TC point twice.
pub fn tc_bounds(
    ct: &CellTable,
    support: Option<(f64, f64)>,
    stable_tol: f64,
) -> Result<BoundsResult> {
    ct.require_two_by_two()?;
    require_binary(ct)?;
    let sup = resolve_support(ct, support)?;
    if describe_design(ct, stable_tol)?.stable_control {
        let w = wald_tc(ct, f64::INFINITY)?;
        return Ok(BoundsResult::collapsed(BoundsMethod::Tc, w.point, sup));
    }
    let den = first_stage(ct)?;
    let lam = lambda0(ct)?;
    let (t0, t1) = (ct.gt(1, 0)?, ct.gt(1, 1)?);

    // Numerator pieces: E(Y11) − E(Y10) − Σ_d p_{d|10} δ_d
    let base = t1.mean_y - t0.mean_y;
    let (mut corr_hi_delta, mut corr_lo_delta) = (0.0, 0.0);
    for (&d, c10) in &t0.by_d {
        let p = c10.n as f64 / t0.n as f64;
        let e00 = ct.cell(d, 0, 0)?.mean;
        let f01 = ecdf_or_zero(ct, d, 0, 1)?;
        let (low, up) = tc_bound_cdfs(&f01, lam[&d], sup);
        let delta_lo = extended_mean(&up) - e00;
        let delta_hi = extended_mean(&low) - e00;
        corr_hi_delta += p * delta_hi;
        corr_lo_delta += p * delta_lo;
    }
    let a = (base - corr_hi_delta) / den;
    let b = (base - corr_lo_delta) / den;
    let (lower, upper) = order(a, b);
    Ok(BoundsResult {
        method: BoundsMethod::Tc,
        lower,
        upper,
        quantiles: Vec::new(),
        support: sup,
        lambda0: lam,
        collapsed: false,
        defective: defective_mass_report(ct)?,
        crossings: 0,
        sharpness: Vec::new(),
        lower_ci: None,
        upper_ci: None,
    })
}

// NaN comes from ∞ − ∞; it widens to the whole line.
fn order(a: f64, b: f64) -> (f64, f64) {
    let lo = if a.is_nan() || b.is_nan() { f64::NEG_INFINITY } else { a.min(b) };
    let hi = if a.is_nan() || b.is_nan() { f64::INFINITY } else { a.max(b) };
    (lo, hi)
}

/// H_d = F_{d10} ∘ F⁻¹_{d00} and its generalized inverse on [0,1].
struct HMap<'a> {
    x00: &'a [f64],
    f10: StepCdf,
    lo: f64,
}

impl HMap<'_> {
    fn eval(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return self.f10.eval(self.lo);
        }
        if u > 1.0 {
            return 1.0;
        }
        let n = self.x00.len();
        let k = ((u * n as f64) - Q_EPS).ceil().max(1.0) as usize;
        self.f10.eval(self.x00[k.min(n) - 1])
    }

    /// inf{u ∈ [0,1] : H(u) ≥ q}; 0 below the range and 1 above it.
    fn inverse(&self, q: f64) -> f64 {
        if q <= 0.0 || self.eval(0.0) >= q - Q_EPS {
            return 0.0;
        }
        if q > 1.0 {
            return 1.0;
        }
        let n = self.x00.len();
        // F10 is non-decreasing along the sorted x00, so bisect on it.
        let k = self.x00.partition_point(|&x| self.f10.eval(x) < q - Q_EPS);
        if k == n {
            1.0
        } else {
            k as f64 / n as f64
        }
    }
}

fn increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] <= w[1] + Q_EPS)
}

/// Lower and upper bounds on the switchers' CDF of Y(d), evaluated on `grid`,
/// plus the sharpness diagnostic.
fn cic_level(
    ct: &CellTable,
    d: u32,
    lambda0: f64,
    grid: &[f64],
    sup: (f64, f64),
) -> Result<(Vec<f64>, Vec<f64>, SharpnessCheck)> {
    let (p11, p10) = (ct.share(d, 1, 1), ct.share(d, 1, 0));
    if p11 == p10 {
        return Err(Error::ZeroSwitcherShare { d });
    }
    let f11 = ecdf_or_zero(ct, d, 1, 1)?;
    let mut check = SharpnessCheck {
        d,
        t_lower_increasing: true,
        t_upper_increasing: true,
        g_lower_increasing: true,
        g_upper_increasing: true,
        c_lower_increasing: true,
        c_upper_increasing: true,
    };
    if p10 == 0.0 {
        // No treatment-group units at level d before: C_d(T) = F_{d11}.
        let v: Vec<f64> = grid.iter().map(|&y| eval_opt(&f11, y)).collect();
        return Ok((v.clone(), v, check));
    }
    let lambda1 = p11 / p10;
    let h = HMap {
        x00: &ct.cell(d, 0, 0)?.sample,
        f10: StepCdf::ecdf(&ct.cell(d, 1, 0)?.sample)?,
        lo: sup.0,
    };
    let f01 = ecdf_or_zero(ct, d, 0, 1)?;
    let n = grid.len();
    let (mut tl, mut tu) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let (mut gl, mut gu) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let (mut cl, mut cu) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for &y in grid {
        let (a, b) = (eval_opt(&f01, y), eval_opt(&f11, y));
        let t_low = clip01((lambda0 * a - h.inverse(lambda1 * b)) / (lambda0 - 1.0));
        let t_up = clip01((lambda0 * a - h.inverse(lambda1 * b + 1.0 - lambda1)) / (lambda0 - 1.0));
        let g_low = lambda0 * a + (1.0 - lambda0) * t_low;
        let g_up = lambda0 * a + (1.0 - lambda0) * t_up;
        let c = |g: f64| (p11 * b - p10 * h.eval(g)) / (p11 - p10);
        tl.push(t_low);
        tu.push(t_up);
        gl.push(g_low);
        gu.push(g_up);
        cl.push(c(g_low));
        cu.push(c(g_up));
    }
    check.t_lower_increasing = increasing(&tl);
    check.t_upper_increasing = increasing(&tu);
    check.g_lower_increasing = increasing(&gl);
    check.g_upper_increasing = increasing(&gu);
    check.c_lower_increasing = increasing(&cl);
    check.c_upper_increasing = increasing(&cu);
    Ok((cl, cu, check))
}

/// The pair of proper CDFs bracketing the switchers' CDF of Y(d).
#[derive(Debug, Clone, PartialEq)]
pub struct CdfBand {
    pub lower: StepCdf,
    pub upper: StepCdf,
    pub crossings: usize,
}

fn band(cl: Vec<f64>, cu: Vec<f64>, grid: &[f64], sup: (f64, f64)) -> CdfBand {
    let mk = |v: Vec<f64>| StepCdf::from_parts(grid.to_vec(), v).with_support(sup.0, sup.1);
    let mut lower = mk(cl).clip01().values().to_vec();
    let mut upper = mk(cu).clip01().values().to_vec();
    *lower.last_mut().unwrap() = 1.0;
    *upper.last_mut().unwrap() = 1.0;
    let lower = mk(lower).envelope(Envelope::SupBelow);
    let upper = mk(upper).envelope(Envelope::InfAbove);
    let mut crossings = 0;
    let (mut lo, mut hi) = (lower.values().to_vec(), upper.values().to_vec());
    for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
        if *a > *b {
            crossings += 1;
            std::mem::swap(a, b);
        }
    }
    CdfBand {
        lower: mk(lo),
        upper: mk(hi),
        crossings,
    }
}

/// Bands for d = 0 and d = 1 on the pooled grid; errors if control is stable.
pub fn cic_bands(ct: &CellTable, support: Option<(f64, f64)>) -> Result<[CdfBand; 2]> {
    ct.require_two_by_two()?;
    require_binary(ct)?;
    let sup = resolve_support(ct, support)?;
    let lam = lambda0(ct)?;
    if lam.values().any(|&l| l == 1.0) {
        return Err(Error::InvalidConfig("control shares are stable; use the point estimator".into()));
    }
    let grid = pooled_grid(ct, sup);
    let mut out = Vec::with_capacity(2);
    for d in [0u32, 1] {
        let (cl, cu, _) = cic_level(ct, d, lam[&d], &grid, sup)?;
        out.push(band(cl, cu, &grid, sup));
    }
    Ok([out.remove(0), out.remove(0)])
}

fn pooled_grid(ct: &CellTable, sup: (f64, f64)) -> Vec<f64> {
    let pts = ct
        .cells
        .values()
        .flat_map(|gp| gp.by_d.values())
        .flat_map(|c| c.sample.iter().copied());
    grid_with_endpoints(pts, sup)
}

/// Changes-in-changes bounds on Δ and on τ_q for each requested q.
pub fn cic_bounds(
    ct: &CellTable,
    quantiles: &[f64],
    support: Option<(f64, f64)>,
    stable_tol: f64,
) -> Result<BoundsResult> {
    ct.require_two_by_two()?;
    require_binary(ct)?;
    for &q in quantiles {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::InvalidConfig(format!("quantile {q} not in (0,1)")));
        }
    }
    let sup = resolve_support(ct, support)?;
    if describe_design(ct, stable_tol)?.stable_control {
        let w = wald_cic(ct, f64::INFINITY)?;
        let mut res = BoundsResult::collapsed(BoundsMethod::Cic, w.point, sup);
        for &q in quantiles {
            let t = lqte(ct, q, f64::INFINITY)?.point;
            res.quantiles.push(QuantileBounds { q, lower: t, upper: t });
        }
        return Ok(res);
    }
    first_stage(ct)?;
    let lam = lambda0(ct)?;
    let grid = pooled_grid(ct, sup);
    let mut bands = Vec::with_capacity(2);
    let mut sharpness = Vec::with_capacity(2);
    for d in [0u32, 1] {
        let (cl, cu, check) = cic_level(ct, d, lam[&d], &grid, sup)?;
        bands.push(band(cl, cu, &grid, sup));
        sharpness.push(check);
    }
    let (b0, b1) = (&bands[0], &bands[1]);
    let (lower, upper) = order(
        extended_mean(&b1.upper) - extended_mean(&b0.lower),
        extended_mean(&b1.lower) - extended_mean(&b0.upper),
    );
    let quantiles = quantiles
        .iter()
        .map(|&q| QuantileBounds {
            q,
            lower: b1.upper.gen_inverse(q).max(sup.0) - b0.lower.gen_inverse(q).min(sup.1),
            upper: b1.lower.gen_inverse(q).min(sup.1) - b0.upper.gen_inverse(q).max(sup.0),
        })
        .collect();
    Ok(BoundsResult {
        method: BoundsMethod::Cic,
        lower,
        upper,
        quantiles,
        support: sup,
        lambda0: lam,
        collapsed: false,
        defective: defective_mass_report(ct)?,
        crossings: b0.crossings + b1.crossings,
        sharpness,
        lower_ci: None,
        upper_ci: None,
    })
}

/// Bootstrap intervals for each endpoint of `res`, recomputed on resamples
/// of the two-group data `ds` with the support held at `res.support`.
/// Infinite endpoints are left without an interval.
pub fn bootstrap_bounds(ds: &Dataset, res: &mut BoundsResult, cfg: &BootstrapConfig) -> Result<()> {
    if !(res.lower.is_finite() && res.upper.is_finite()) {
        return Ok(());
    }
    let (method, sup) = (res.method, res.support);
    let out = bootstrap_multi(ds, &[res.lower, res.upper], cfg, |d| {
        let ct = CellTable::build(d);
        let b = match method {
            BoundsMethod::Tc => tc_bounds(&ct, Some(sup), 0.0)?,
            BoundsMethod::Cic => cic_bounds(&ct, &[], Some(sup), 0.0)?,
        };
        Ok(vec![b.lower, b.upper])
    })?;
    res.lower_ci = Some(out[0].ci);
    res.upper_ci = Some(out[1].ci);
    Ok(())
}
