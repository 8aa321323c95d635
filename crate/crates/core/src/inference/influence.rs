//! Plug-in influence functions. For an estimator with influence values ψ_i,
//! the standard error is sqrt(Σ ψ_i²)/n.
//!
//! The dataset passed in must already be in two-group layout (g, t ∈ {0,1})
//! and `ct` must be built from it.

use std::collections::BTreeMap;

use crate::dataset::{CellTable, Dataset};
use crate::empirical::StepCdf;
use crate::error::{Error, Result};
use crate::estimators::{first_stage, qq_transform, switcher_cdf, EPS_DENOM};
use crate::inference::kde::Kde;

pub fn se_from_influence(psi: &[f64]) -> f64 {
    let n = psi.len() as f64;
    psi.iter().map(|p| p * p).sum::<f64>().sqrt() / n
}

fn p_gt(ct: &CellTable) -> [[f64; 2]; 2] {
    let mut p = [[0.0; 2]; 2];
    for (g, row) in p.iter_mut().enumerate() {
        for (t, v) in row.iter_mut().enumerate() {
            *v = ct.p_gt(g as i64, t as i64);
        }
    }
    p
}

fn idx(g: i64, t: i64) -> (usize, usize) {
    (g as usize, t as usize)
}

/// ψ_DID with ε = Y − Δ·D.
pub fn influence_did(ds: &Dataset, ct: &CellTable, delta: f64) -> Result<Vec<f64>> {
    ct.require_two_by_two()?;
    let did_d = crate::estimators::did_d(ct)?;
    if did_d.abs() <= EPS_DENOM {
        return Err(Error::WeakDesign {
            what: "DID_D",
            value: did_d,
        });
    }
    let p = p_gt(ct);
    let mut eps_bar = [[0.0; 2]; 2];
    for g in 0..2 {
        for t in 0..2 {
            let gp = ct.gt(g, t)?;
            eps_bar[g as usize][t as usize] = gp.mean_y - delta * gp.mean_d;
        }
    }
    Ok(ds
        .iter()
        .map(|o| {
            let (g, t) = idx(o.g, o.t);
            let sign = if g == t { 1.0 } else { -1.0 };
            let eps = o.y - delta * o.d as f64;
            sign * (eps - eps_bar[g][t]) / p[g][t] / did_d
        })
        .collect())
}

/// ψ_TC; general ordered treatment with one trend δ_d per level.
pub fn influence_tc(ds: &Dataset, ct: &CellTable, delta: f64) -> Result<Vec<f64>> {
    let den = first_stage(ct)?;
    let p = p_gt(ct);
    let t0 = ct.gt(1, 0)?;
    let t1 = ct.gt(1, 1)?;
    let mut trend = BTreeMap::new();
    let mut ctrl = BTreeMap::new();
    for (&d, c) in &t0.by_d {
        let (c00, c01) = (ct.cell(d, 0, 0)?, ct.cell(d, 0, 1)?);
        trend.insert(d, c01.mean - c00.mean);
        ctrl.insert(d, (c00.mean, c01.mean, ct.p_dgt(d, 0, 0), ct.p_dgt(d, 0, 1), c.n as f64 / t0.n as f64));
    }
    let eps11 = t1.mean_y - delta * t1.mean_d;
    let corrected10 = t0.mean_y - delta * t0.mean_d
        + t0.by_d.iter().map(|(d, c)| c.n as f64 * trend[d]).sum::<f64>() / t0.n as f64;
    Ok(ds
        .iter()
        .map(|o| {
            let eps = o.y - delta * o.d as f64;
            let v = match (o.g, o.t) {
                (1, 1) => (eps - eps11) / p[1][1],
                (1, 0) => -(eps + trend[&o.d] - corrected10) / p[1][0],
                (0, t) => match ctrl.get(&o.d) {
                    Some(&(m00, m01, p00, p01, share10)) => {
                        if t == 1 {
                            -share10 * (o.y - m01) / p01
                        } else {
                            share10 * (o.y - m00) / p00
                        }
                    }
                    None => 0.0,
                },
                _ => unreachable!("two-group layout"),
            };
            v / den
        })
        .collect())
}

/// Density floor for a sample spread over `range`.
pub fn density_floor(range: f64) -> f64 {
    1e-6 / range.max(f64::MIN_POSITIVE)
}

fn outcome_range(ct: &CellTable) -> f64 {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for c in ct.cells.values().flat_map(|gp| gp.by_d.values()) {
        lo = lo.min(c.sample[0]);
        hi = hi.max(*c.sample.last().unwrap());
    }
    (hi - lo).max(f64::MIN_POSITIVE)
}

/// Per level d: the treatment group's period-0 sample X (sorted), its image
/// Q_d(X), and weights 1/f_{d01}(Q_d(X)).
struct LevelTerms {
    x: Vec<f64>,
    qx: Vec<f64>,
    w: Vec<f64>,
    share10: f64,
    p00: f64,
    p01: f64,
}

impl LevelTerms {
    /// `keys` sorted, and suffix sums of `w` taken in that order.
    fn suffix_weight(keys: &[f64], w: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut order: Vec<usize> = (0..keys.len()).collect();
        order.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]));
        let sorted: Vec<f64> = order.iter().map(|&i| keys[i]).collect();
        let mut suffix = vec![0.0; keys.len() + 1];
        for k in (0..keys.len()).rev() {
            suffix[k] = suffix[k + 1] + w[order[k]];
        }
        (sorted, suffix)
    }
}

fn centered(vals: Vec<f64>) -> Vec<f64> {
    let m = vals.iter().sum::<f64>() / vals.len() as f64;
    vals.into_iter().map(|v| v - m).collect()
}

/// ψ_CIC for W_CIC = [E(Y_11) − E(Q_{D_10}(Y_10))]/[E(D_11) − E(D_10)].
///
/// The Q_d correction terms are written in the variable x = Q_d⁻¹(y), where
/// the density ratio H_d′∘F_{d01} turns into 1/f_{d01}∘Q_d, so only f_{d01}
/// needs a kernel estimate.
pub fn influence_cic(ds: &Dataset, ct: &CellTable, delta: f64) -> Result<Vec<f64>> {
    let den = first_stage(ct)?;
    let p = p_gt(ct);
    let (t0, t1) = (ct.gt(1, 0)?, ct.gt(1, 1)?);
    let floor = density_floor(outcome_range(ct));
    let mut levels = BTreeMap::new();
    let mut mean_q = 0.0;
    for (&d, c10) in &t0.by_d {
        let qq = qq_transform(ct, d)?;
        let c01 = ct.cell(d, 0, 1)?;
        let kde = Kde::new(&c01.sample);
        let qx: Vec<f64> = c10.sample.iter().map(|&x| qq.eval(x)).collect();
        let w: Vec<f64> = qx.iter().map(|&q| 1.0 / kde.density(q).max(floor)).collect();
        mean_q += qx.iter().sum::<f64>() / t0.n as f64;
        levels.insert(
            d,
            LevelTerms {
                x: c10.sample.clone(),
                qx,
                w,
                share10: c10.n as f64 / t0.n as f64,
                p00: ct.p_dgt(d, 0, 0),
                p01: ct.p_dgt(d, 0, 1),
            },
        );
    }

    // For every control observation at level d, A(y) = Σ_{X_j ≥ y} w_j / n_{d10}
    // in period 0 and B(y) = Σ_{Q(X_j) ≥ y} w_j / n_{d10} in period 1.
    let mut ctrl_vals: BTreeMap<(u32, i64), Vec<(usize, f64)>> = BTreeMap::new();
    for (d, lt) in &levels {
        let (sx, sufx) = LevelTerms::suffix_weight(&lt.x, &lt.w);
        let (sq, sufq) = LevelTerms::suffix_weight(&lt.qx, &lt.w);
        let m = lt.x.len() as f64;
        for (i, o) in ds.iter().enumerate() {
            if o.g != 0 || o.d != *d {
                continue;
            }
            let v = if o.t == 0 {
                sufx[sx.partition_point(|&x| x < o.y)] / m
            } else {
                sufq[sq.partition_point(|&x| x < o.y)] / m
            };
            ctrl_vals.entry((*d, o.t)).or_default().push((i, v));
        }
    }

    let y11c = t1.mean_y - delta * t1.mean_d;
    let y10c = mean_q - delta * t0.mean_d;
    let mut psi: Vec<f64> = ds
        .iter()
        .map(|o| match (o.g, o.t) {
            (1, 1) => (o.y - delta * o.d as f64 - y11c) / p[1][1],
            (1, 0) => {
                let lt = &levels[&o.d];
                let k = lt.x.partition_point(|&x| x < o.y);
                -(lt.qx[k] - delta * o.d as f64 - y10c) / p[1][0]
            }
            _ => 0.0,
        })
        .collect();
    for ((d, t), vals) in ctrl_vals {
        let lt = &levels[&d];
        let (ids, v): (Vec<usize>, Vec<f64>) = vals.into_iter().unzip();
        for (i, v) in ids.into_iter().zip(centered(v)) {
            psi[i] = if t == 0 {
                -lt.share10 * v / lt.p00
            } else {
                lt.share10 * v / lt.p01
            };
        }
    }
    Ok(psi.into_iter().map(|v| v / den).collect())
}

/// Ψ_d(y) for every observation: the influence of the switchers' CDF of Y(d)
/// at a single point y.
fn switcher_cdf_influence(ds: &Dataset, ct: &CellTable, d: u32, y: f64, fs: f64) -> Result<Vec<f64>> {
    let (p11d, p10d) = (ct.share(d, 1, 1), ct.share(d, 1, 0));
    let p = p_gt(ct);
    let den = p11d - p10d;
    let f11 = ct.try_cell(d, 1, 1).map(|c| StepCdf::ecdf(&c.sample)).transpose()?;
    let f11y = f11.as_ref().map_or(0.0, |f| f.eval(y));
    // Pieces that only exist when the level is present before treatment.
    struct Pre {
        qq: crate::empirical::QqTransform,
        hf: f64,
        fq00: f64,
        f01: f64,
        hprime: f64,
        p00: f64,
        p01: f64,
    }
    let pre = if p10d > 0.0 {
        let qq = qq_transform(ct, d)?;
        let c00 = ct.cell(d, 0, 0)?;
        let c10 = ct.cell(d, 1, 0)?;
        let c01 = ct.cell(d, 0, 1)?;
        let frac = |s: &[f64], f: &dyn Fn(f64) -> bool| s.iter().filter(|&&v| f(v)).count() as f64 / s.len() as f64;
        let hf = frac(&c10.sample, &|x| qq.eval(x) <= y);
        let fq00 = frac(&c00.sample, &|x| qq.eval(x) <= y);
        let f01 = frac(&c01.sample, &|x| x <= y);
        let x_star = StepCdf::ecdf(&c00.sample)?.gen_inverse(f01);
        let floor = density_floor(outcome_range(ct));
        let hprime = Kde::new(&c10.sample).density(x_star) / Kde::new(&c00.sample).density(x_star).max(floor);
        Some(Pre {
            qq,
            hf,
            fq00,
            f01,
            hprime,
            p00: ct.p_dgt(d, 0, 0),
            p01: ct.p_dgt(d, 0, 1),
        })
    } else {
        None
    };
    let ind = |b: bool| b as u8 as f64;
    Ok(ds
        .iter()
        .map(|o| {
            let is_d = ind(o.d == d);
            let v = match (o.g, o.t, &pre) {
                (1, 1, _) => {
                    (is_d * ind(o.y <= y) - p11d * f11y - fs * (is_d - p11d)) / p[1][1]
                }
                (1, 0, Some(pr)) => {
                    let qy = if o.d == d { pr.qq.eval(o.y) } else { f64::NAN };
                    (-is_d * (ind(qy <= y) - pr.hf) + (is_d - p10d) * (fs - pr.hf)) / p[1][0]
                }
                (1, 0, None) => (is_d - p10d) * fs / p[1][0],
                (0, t, Some(pr)) if o.d == d => {
                    let term = if t == 0 {
                        (ind(pr.qq.eval(o.y) <= y) - pr.fq00) / pr.p00
                    } else {
                        -(ind(o.y <= y) - pr.f01) / pr.p01
                    };
                    p10d * pr.hprime * term
                }
                _ => 0.0,
            };
            v / den
        })
        .collect())
}

/// ψ_q for τ_q = F⁻¹_{Y11(1)|S}(q) − F⁻¹_{Y11(0)|S}(q).
pub fn influence_lqte(ds: &Dataset, ct: &CellTable, q: f64) -> Result<Vec<f64>> {
    let floor = density_floor(outcome_range(ct));
    let mut parts = Vec::with_capacity(2);
    for d in [0u32, 1] {
        let s = switcher_cdf(ct, d)?;
        let y = s.cdf.gen_inverse(q);
        let fs = s.cdf.eval(y);
        let (p11d, p10d) = (ct.share(d, 1, 1), ct.share(d, 1, 0));
        let mut dens = 0.0;
        if let Some(c) = ct.try_cell(d, 1, 1) {
            dens += p11d * Kde::new(&c.sample).density(y);
        }
        if p10d > 0.0 {
            let (qs, _) = crate::estimators::transformed_sample(ct, d)?;
            dens -= p10d * Kde::new(&qs).density(y);
        }
        let dens = dens / (p11d - p10d);
        if dens.is_nan() || dens <= floor {
            return Err(Error::DensityFloor {
                value: dens,
                floor,
                at: y,
            });
        }
        let psi = switcher_cdf_influence(ds, ct, d, y, fs)?;
        parts.push(psi.into_iter().map(|v| v / dens).collect::<Vec<f64>>());
    }
    // A quantile moves by −dF/f, hence Ψ_0/f_0 − Ψ_1/f_1.
    Ok(parts[0].iter().zip(&parts[1]).map(|(a, b)| a - b).collect())
}
