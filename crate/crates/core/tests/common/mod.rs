//! Brute-force reference implementations written straight from the
//! estimator definitions, sharing no code with the library.

#![allow(dead_code)]

use fuzzydid::{Dataset, Observation};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

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

pub fn dataset(rows: &[(i64, i64, u32, f64)]) -> Dataset {
    Dataset::new(rows.iter().map(|&(g, t, d, y)| Observation::new(y, d, g, t)).collect()).unwrap()
}

pub fn toy16() -> Dataset {
    dataset(&TOY16)
}

fn ys(rows: &[(i64, i64, u32, f64)], g: i64, t: i64, d: Option<u32>) -> Vec<f64> {
    rows.iter()
        .filter(|r| r.0 == g && r.1 == t && d.is_none_or(|d| r.2 == d))
        .map(|r| r.3)
        .collect()
}

fn ds_of(rows: &[(i64, i64, u32, f64)], g: i64, t: i64) -> Vec<f64> {
    rows.iter().filter(|r| r.0 == g && r.1 == t).map(|r| r.2 as f64).collect()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn share(rows: &[(i64, i64, u32, f64)], d: u32, g: i64, t: i64) -> f64 {
    ys(rows, g, t, Some(d)).len() as f64 / ys(rows, g, t, None).len() as f64
}

pub fn wald_did(rows: &[(i64, i64, u32, f64)]) -> f64 {
    let y = |g, t| mean(&ys(rows, g, t, None));
    let d = |g, t| mean(&ds_of(rows, g, t));
    (y(1, 1) - y(1, 0) - y(0, 1) + y(0, 0)) / (d(1, 1) - d(1, 0) - d(0, 1) + d(0, 0))
}

pub fn did_y(rows: &[(i64, i64, u32, f64)]) -> f64 {
    let y = |g, t| mean(&ys(rows, g, t, None));
    y(1, 1) - y(1, 0) - y(0, 1) + y(0, 0)
}

pub fn levels(rows: &[(i64, i64, u32, f64)], g: i64, t: i64) -> Vec<u32> {
    let mut l: Vec<u32> = rows.iter().filter(|r| r.0 == g && r.1 == t).map(|r| r.2).collect();
    l.sort_unstable();
    l.dedup();
    l
}

pub fn wald_tc(rows: &[(i64, i64, u32, f64)]) -> f64 {
    let mut corr = 0.0;
    for d in levels(rows, 1, 0) {
        let delta = mean(&ys(rows, 0, 1, Some(d))) - mean(&ys(rows, 0, 0, Some(d)));
        corr += share(rows, d, 1, 0) * delta;
    }
    let num = mean(&ys(rows, 1, 1, None)) - mean(&ys(rows, 1, 0, None)) - corr;
    num / (mean(&ds_of(rows, 1, 1)) - mean(&ds_of(rows, 1, 0)))
}

/// Q(y) = min{x in after : #{after ≤ x}/|after| ≥ #{before ≤ y}/|before|},
/// comparing counts by cross-multiplication.
pub fn qq(before: &[f64], after: &[f64], y: f64) -> f64 {
    let c = before.iter().filter(|&&b| b <= y).count();
    let mut cands: Vec<f64> = after
        .iter()
        .copied()
        .filter(|&x| after.iter().filter(|&&a| a <= x).count() * before.len() >= c * after.len())
        .collect();
    cands.sort_by(f64::total_cmp);
    cands[0]
}

pub fn mean_q(rows: &[(i64, i64, u32, f64)], d: u32) -> f64 {
    let (b, a) = (ys(rows, 0, 0, Some(d)), ys(rows, 0, 1, Some(d)));
    mean(&ys(rows, 1, 0, Some(d)).iter().map(|&y| qq(&b, &a, y)).collect::<Vec<_>>())
}

pub fn wald_cic(rows: &[(i64, i64, u32, f64)]) -> f64 {
    let mut cf = 0.0;
    for d in levels(rows, 1, 0) {
        cf += share(rows, d, 1, 0) * mean_q(rows, d);
    }
    (mean(&ys(rows, 1, 1, None)) - cf) / (mean(&ds_of(rows, 1, 1)) - mean(&ds_of(rows, 1, 0)))
}

/// Delta-method variance of DID_Y/DID_D treating the eight cell means
/// (Y and D in each g,t) as independent across cells.
pub fn did_delta_method_se(rows: &[(i64, i64, u32, f64)]) -> f64 {
    let num = did_y(rows);
    let den = {
        let d = |g, t| mean(&ds_of(rows, g, t));
        d(1, 1) - d(1, 0) - d(0, 1) + d(0, 0)
    };
    let w = num / den;
    let mut var = 0.0;
    for (g, t) in [(1, 1), (1, 0), (0, 1), (0, 0)] {
        let y = ys(rows, g, t, None);
        let d = ds_of(rows, g, t);
        let m = y.len() as f64;
        // gradient of num/den w.r.t. this cell's (mean y, mean d) is ±(1, −w)/den
        let (my, md) = (mean(&y), mean(&d));
        let (mut vyy, mut vdd, mut vyd) = (0.0, 0.0, 0.0);
        for (yi, di) in y.iter().zip(&d) {
            vyy += (yi - my).powi(2) / m;
            vdd += (di - md).powi(2) / m;
            vyd += (yi - my) * (di - md) / m;
        }
        let lin = (vyy - 2.0 * w * vyd + w * w * vdd) / (den * den);
        var += lin / m;
    }
    var.sqrt()
}

/// A random binary-treatment dataset with every (d,g,t) cell populated and
/// unequal treated shares in the treatment group.
pub fn random_binary(rng: &mut ChaCha8Rng) -> Vec<(i64, i64, u32, f64)> {
    loop {
        let mut rows = Vec::new();
        for g in 0..2 {
            for t in 0..2 {
                for d in 0..2u32 {
                    for _ in 0..rng.random_range(1..6) {
                        let y = (rng.random_range(0..40) as f64) * 0.5 + 3.0 * d as f64 + g as f64;
                        rows.push((g, t, d, y));
                    }
                }
            }
        }
        let s = |t| share(&rows, 1, 1, t);
        if (s(1) - s(0)).abs() > 1e-9 && s(1) > s(0) {
            return rows;
        }
    }
}

/// Piecewise-constant integral of f − g over the union of their jump
/// points, where both are right-continuous steps equal to 0 below the
/// first point and 1 from the last point on.
pub fn integrate_difference(
    grid: &[f64],
    f: impl Fn(f64) -> f64,
    g: impl Fn(f64) -> f64,
) -> f64 {
    grid.windows(2).map(|w| (f(w[0]) - g(w[0])) * (w[1] - w[0])).sum()
}
