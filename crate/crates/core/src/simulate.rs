//! Simulated repeated cross-sections with known effects.
//!
//! Each unit draws a group and a period, then a latent pair (V, U₀) from a
//! Gaussian copula with correlation ρ; V is uniform. Treatment is
//! D = 1{V ≥ v_gt}, Y(0) = U₀ + γ_g + b_t + shift_gt and
//! Y(1) = σ_t·U₀ + γ_g + b_t + shift_gt + τ₀ + τ₁·V + wedge_gt.
//! Because V is uniform every effect below is an interval average with a
//! closed form.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::dataset::{CellTable, Dataset, Observation};
use crate::error::{Error, Result};
use crate::estimators::{estimate, Ci, EstimateKind};
use crate::inference::bootstrap::mix;
use crate::inference::{attach_analytic, bootstrap, BootstrapConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DgpConfig {
    pub n: usize,
    pub group_shares: Vec<f64>,
    pub period_shares: Vec<f64>,
    /// `thresholds[g][t]`; the treated share is `1 − v_gt`.
    pub thresholds: Vec<Vec<f64>>,
    pub gamma: Vec<f64>,
    pub trend: Vec<f64>,
    pub tau0: f64,
    pub tau1: f64,
    pub rho: f64,
    /// Scale of U₀ inside Y(1), per period.
    pub sigma1: Vec<f64>,
    /// Added to both potential outcomes, `[g][t]`.
    pub shift: Vec<Vec<f64>>,
    /// Added to treated outcomes only, `[g][t]`.
    pub wedge: Vec<Vec<f64>>,
    /// U₀ = Φ(Z) ∈ (0,1) instead of Z, giving bounded outcomes.
    pub bounded: bool,
    pub seed: u64,
}

impl Default for DgpConfig {
    /// Two groups, two periods, stable control, constant effect 1.
    fn default() -> Self {
        Self {
            n: 10_000,
            group_shares: vec![0.5, 0.5],
            period_shares: vec![0.5, 0.5],
            thresholds: vec![vec![0.5, 0.5], vec![0.8, 0.4]],
            gamma: vec![0.0, 0.5],
            trend: vec![0.0, 1.0],
            tau0: 1.0,
            tau1: 0.0,
            rho: 0.0,
            sigma1: vec![1.0, 1.0],
            shift: vec![vec![0.0; 2]; 2],
            wedge: vec![vec![0.0; 2]; 2],
            bounded: false,
            seed: 0,
        }
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse `{}`", s.trim())))
        })
        .collect()
}

fn parse_matrix(key: &str, v: &str) -> Result<Vec<Vec<f64>>> {
    v.split(';').map(|row| parse_list(key, row)).collect()
}

fn parse_scalar<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse `{v}`")))
}

impl DgpConfig {
    /// `key = value` lines; `#` starts a comment. Lists are comma separated
    /// and matrix rows (one per group) are separated by `;`. Keys left out
    /// keep their defaults, except that `shift`, `wedge` and `sigma1` are
    /// resized to the group and period counts.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        let (mut shift_set, mut wedge_set, mut sigma_set) = (false, false, false);
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key = value", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "n" => c.n = parse_scalar(k, v)?,
                "group_shares" => c.group_shares = parse_list(k, v)?,
                "period_shares" => c.period_shares = parse_list(k, v)?,
                "thresholds" => c.thresholds = parse_matrix(k, v)?,
                "gamma" => c.gamma = parse_list(k, v)?,
                "trend" => c.trend = parse_list(k, v)?,
                "tau0" => c.tau0 = parse_scalar(k, v)?,
                "tau1" => c.tau1 = parse_scalar(k, v)?,
                "rho" => c.rho = parse_scalar(k, v)?,
                "sigma1" => {
                    c.sigma1 = parse_list(k, v)?;
                    sigma_set = true;
                }
                "shift" => {
                    c.shift = parse_matrix(k, v)?;
                    shift_set = true;
                }
                "wedge" => {
                    c.wedge = parse_matrix(k, v)?;
                    wedge_set = true;
                }
                "bounded" => c.bounded = parse_scalar(k, v)?,
                "seed" => c.seed = parse_scalar(k, v)?,
                _ => return Err(Error::InvalidConfig(format!("unknown key `{k}`"))),
            }
        }
        let (g, t) = (c.group_shares.len(), c.period_shares.len());
        if !shift_set {
            c.shift = vec![vec![0.0; t]; g];
        }
        if !wedge_set {
            c.wedge = vec![vec![0.0; t]; g];
        }
        if !sigma_set {
            c.sigma1 = vec![1.0; t];
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn groups(&self) -> usize {
        self.group_shares.len()
    }

    pub fn periods(&self) -> usize {
        self.period_shares.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let (g, t) = (self.groups(), self.periods());
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if g < 2 || t < 2 {
            return bad("need at least two groups and two periods".into());
        }
        for (name, s) in [("group_shares", &self.group_shares), ("period_shares", &self.period_shares)] {
            if s.iter().any(|&x| !(x >= 0.0 && x.is_finite())) || s.iter().sum::<f64>() <= 0.0 {
                return bad(format!("{name} must be non-negative with a positive sum"));
            }
        }
        for (name, m) in [("thresholds", &self.thresholds), ("shift", &self.shift), ("wedge", &self.wedge)] {
            if m.len() != g || m.iter().any(|r| r.len() != t) {
                return bad(format!("{name} must be {g} rows of {t} values"));
            }
        }
        if self.thresholds.iter().flatten().any(|&v| !(0.0..=1.0).contains(&v)) {
            return bad("thresholds must lie in [0,1]".into());
        }
        if self.gamma.len() != g {
            return bad(format!("gamma needs {g} values"));
        }
        if self.trend.len() != t || self.sigma1.len() != t {
            return bad(format!("trend and sigma1 need {t} values"));
        }
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return bad("rho must lie in (-1,1)".into());
        }
        Ok(())
    }

    /// Outcome range when `bounded`; `None` otherwise.
    pub fn support(&self) -> Option<(f64, f64)> {
        if !self.bounded {
            return None;
        }
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for g in 0..self.groups() {
            for t in 0..self.periods() {
                let base = self.gamma[g] + self.trend[t] + self.shift[g][t];
                let s = self.sigma1[t];
                let treated = base + self.tau0 + self.wedge[g][t];
                let cands = [
                    base,
                    base + 1.0,
                    treated + s.min(0.0) + self.tau1.min(0.0),
                    treated + s.max(0.0) + self.tau1.max(0.0),
                ];
                lo = cands.iter().fold(lo, |a, &b| a.min(b));
                hi = cands.iter().fold(hi, |a, &b| a.max(b));
            }
        }
        Some((lo, hi))
    }

    /// Supergroup labels from the last two periods' thresholds.
    pub fn labels(&self) -> Vec<i8> {
        let (a, b) = (self.periods() - 2, self.periods() - 1);
        self.thresholds
            .iter()
            .map(|v| match v[a].partial_cmp(&v[b]) {
                Some(std::cmp::Ordering::Greater) => 1,
                Some(std::cmp::Ordering::Less) => -1,
                _ => 0,
            })
            .collect()
    }

    /// Average effect among group `g`'s switchers between the last two
    /// periods, measured in the last period.
    fn interval_effect(&self, g: usize) -> Result<f64> {
        let (a, b) = (self.periods() - 2, self.periods() - 1);
        let (lo, hi) = {
            let (x, y) = (self.thresholds[g][a], self.thresholds[g][b]);
            (x.min(y), x.max(y))
        };
        if hi <= lo {
            return Err(Error::UndefinedTruth(format!("group {g} has no switchers")));
        }
        let s = self.sigma1[b];
        let u0_mean = if s == 1.0 {
            0.0
        } else if !self.bounded {
            // E(Z₂ | Φ(Z₁) ∈ [lo,hi)) = ρ[φ(z_lo) − φ(z_hi)]/(hi − lo)
            let nrm = Normal::standard();
            let phi = |p: f64| if p <= 0.0 || p >= 1.0 { 0.0 } else { nrm.pdf(nrm.inverse_cdf(p)) };
            self.rho * (phi(lo) - phi(hi)) / (hi - lo)
        } else if self.rho == 0.0 {
            0.5
        } else {
            return Err(Error::UndefinedTruth(
                "bounded outcomes with rho != 0 and sigma1 != 1 have no closed form".into(),
            ));
        };
        Ok(self.tau0 + self.tau1 * (lo + hi) / 2.0 + (s - 1.0) * u0_mean + self.wedge[g][b])
    }

    pub fn truth(&self) -> Result<Truth> {
        self.validate()?;
        let (a, b) = (self.periods() - 2, self.periods() - 1);
        let v = &self.thresholds;
        let labels = self.labels();
        let two = self.groups() == 2;
        let delta = if two { Some(self.interval_effect(1)?) } else { None };
        let delta_prime = if two { self.interval_effect(0).ok() } else { None };
        let (fs, cg) = (v[1][a] - v[1][b], v[0][a] - v[0][b]);
        let alpha = (two && fs - cg != 0.0).then(|| fs / (fs - cg));
        let wald_did_limit = match (delta, alpha) {
            (Some(d), Some(al)) if cg == 0.0 => Some(al * d),
            (Some(d), Some(al)) => delta_prime.map(|dp| al * d + (1.0 - al) * dp),
            _ => None,
        };
        let tau_q = delta.filter(|_| self.tau1 == 0.0 && self.sigma1[b] == 1.0);
        let gs: f64 = self.group_shares.iter().sum();
        let (mut num, mut den) = (0.0, 0.0);
        for (g, &l) in labels.iter().enumerate() {
            if l != 0 {
                let w = self.group_shares[g] / gs * (v[g][a] - v[g][b]).abs();
                num += w * self.interval_effect(g)?;
                den += w;
            }
        }
        let delta_star = (den > 0.0).then(|| num / den);
        if delta.is_none() && delta_star.is_none() {
            return Err(Error::UndefinedTruth("no group has switchers".into()));
        }
        Ok(Truth {
            delta,
            delta_prime,
            alpha,
            wald_did_limit,
            tau_q,
            delta_star,
            labels,
            support: self.support(),
        })
    }
}

/// Population values implied by a [`DgpConfig`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Truth {
    /// LATE among treatment-group switchers (two-group configs).
    pub delta: Option<f64>,
    /// Same among control-group switchers, when there are any.
    pub delta_prime: Option<f64>,
    /// Weight on Δ in the Wald-DID limit.
    pub alpha: Option<f64>,
    /// αΔ + (1−α)Δ′
    pub wald_did_limit: Option<f64>,
    /// Common value of every quantile effect when the effect is constant.
    pub tau_q: Option<f64>,
    /// Effect among switchers of all non-stable groups, weighted by their
    /// share of switchers.
    pub delta_star: Option<f64>,
    pub labels: Vec<i8>,
    pub support: Option<(f64, f64)>,
}

/// Draws a dataset and its truth record. Group and period labels are
/// 0-based indices.
pub fn generate(cfg: &DgpConfig) -> Result<(Dataset, Truth)> {
    let truth = cfg.truth()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gi = WeightedIndex::new(&cfg.group_shares).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let ti = WeightedIndex::new(&cfg.period_shares).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let nrm = Normal::standard();
    let r2 = (1.0 - cfg.rho * cfg.rho).sqrt();
    let obs = (0..cfg.n)
        .map(|_| {
            let (g, t) = (gi.sample(&mut rng), ti.sample(&mut rng));
            let z1: f64 = rng.sample(StandardNormal);
            let e: f64 = rng.sample(StandardNormal);
            let z2 = cfg.rho * z1 + r2 * e;
            let v = nrm.cdf(z1);
            let u0 = if cfg.bounded { nrm.cdf(z2) } else { z2 };
            let d = v >= cfg.thresholds[g][t];
            let base = cfg.gamma[g] + cfg.trend[t] + cfg.shift[g][t];
            let y = if d {
                cfg.sigma1[t] * u0 + base + cfg.tau0 + cfg.tau1 * v + cfg.wedge[g][t]
            } else {
                u0 + base
            };
            Observation::new(y, d as u32, g as i64, t as i64)
        })
        .collect();
    Ok((Dataset::new(obs)?, truth))
}

/// Last two periods of a simulated two-group dataset, recoded to 0/1.
pub fn last_pair(ds: &Dataset, cfg: &DgpConfig) -> Result<Dataset> {
    let t = cfg.periods() as i64;
    ds.period_pair(t - 2, t - 1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum McInference {
    None,
    /// Influence-function SEs with normal intervals at this level.
    Analytic(f64),
    Bootstrap(BootstrapConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McStats {
    pub estimator: EstimateKind,
    pub truth: Option<f64>,
    pub successes: usize,
    pub failures: BTreeMap<String, usize>,
    pub mean: f64,
    pub bias: Option<f64>,
    pub sd: f64,
    /// sd/√R, the Monte Carlo error of `mean`.
    pub mc_se: f64,
    pub rmse: Option<f64>,
    pub coverage: Option<f64>,
    pub mean_ci_length: Option<f64>,
    pub mean_se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McReport {
    pub reps: usize,
    pub config: DgpConfig,
    pub truth: Truth,
    pub estimators: Vec<McStats>,
}

/// One replication's outcome for one estimator: point, SE, interval.
pub type McDraw = std::result::Result<(f64, Option<f64>, Option<Ci>), Error>;

/// Summarizes draws against `truth`.
pub fn summarize(kind: EstimateKind, truth: Option<f64>, draws: &[McDraw]) -> McStats {
    let mut failures = BTreeMap::new();
    let mut ok = Vec::new();
    for d in draws {
        match d {
            Ok(v) => ok.push(*v),
            Err(e) => *failures.entry(e.code().to_string()).or_insert(0) += 1,
        }
    }
    let m = ok.len() as f64;
    let mean = ok.iter().map(|v| v.0).sum::<f64>() / m;
    let sd = if ok.len() > 1 {
        (ok.iter().map(|v| (v.0 - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
    } else {
        f64::NAN
    };
    let cis: Vec<Ci> = ok.iter().filter_map(|v| v.2).collect();
    let ses: Vec<f64> = ok.iter().filter_map(|v| v.1).collect();
    let avg = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    McStats {
        estimator: kind,
        truth,
        successes: ok.len(),
        failures,
        mean,
        bias: truth.map(|t| mean - t),
        sd,
        mc_se: sd / m.sqrt(),
        rmse: truth.map(|t| (ok.iter().map(|v| (v.0 - t).powi(2)).sum::<f64>() / m).sqrt()),
        coverage: truth.and_then(|t| {
            avg(&cis.iter().map(|c| (c.lo <= t && t <= c.hi) as u8 as f64).collect::<Vec<_>>())
        }),
        mean_ci_length: avg(&cis.iter().map(|c| c.hi - c.lo).collect::<Vec<_>>()),
        mean_se: avg(&ses),
    }
}

fn truth_for(kind: EstimateKind, truth: &Truth) -> Option<f64> {
    match kind {
        EstimateKind::Lqte(_) => truth.tau_q,
        _ => truth.delta,
    }
}

/// Runs `reps` generate → estimate cycles on a two-group configuration.
/// Replication `r` uses seed `mix(cfg.seed, r)`; the stable-control gate
/// is off because sampled shares never match exactly.
pub fn monte_carlo(cfg: &DgpConfig, reps: usize, kinds: &[EstimateKind], inference: McInference) -> Result<McReport> {
    if reps < 2 {
        return Err(Error::InvalidConfig("monte carlo needs at least two replications".into()));
    }
    if cfg.groups() != 2 {
        return Err(Error::InvalidConfig("monte carlo runs on two-group configurations".into()));
    }
    let truth = cfg.truth()?;
    let draws: Vec<Vec<McDraw>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let seed = mix(cfg.seed, r as u64);
            let data = generate(&cfg.with_seed(seed)).and_then(|(ds, _)| last_pair(&ds, cfg));
            let ds = match data {
                Ok(ds) => ds,
                Err(e) => return kinds.iter().map(|_| Err(clone_err(&e))).collect(),
            };
            let ct = CellTable::build(&ds);
            kinds
                .iter()
                .map(|&k| {
                    let mut est = estimate(&ct, k, f64::INFINITY)?;
                    match inference {
                        McInference::None => Ok((est.point, None, None)),
                        McInference::Analytic(level) => {
                            attach_analytic(&ds, &ct, &mut est, level)?;
                            Ok((est.point, est.se, est.ci))
                        }
                        McInference::Bootstrap(bc) => {
                            let bc = BootstrapConfig { seed: mix(seed, 1), ..bc };
                            let res = bootstrap(&ds, est.point, &bc, |d| {
                                estimate(&CellTable::build(d), k, f64::INFINITY).map(|e| e.point)
                            })?;
                            Ok((est.point, Some(res.se), Some(res.ci)))
                        }
                    }
                })
                .collect()
        })
        .collect();
    let estimators = kinds
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let col: Vec<McDraw> = draws.iter().map(|row| clone_draw(&row[i])).collect();
            summarize(k, truth_for(k, &truth), &col)
        })
        .collect();
    Ok(McReport {
        reps,
        config: cfg.clone(),
        truth,
        estimators,
    })
}

// Errors hold io/csv sources that are not Clone; replications never raise
// those, so a message-preserving copy is enough for tallying.
fn clone_err(e: &Error) -> Error {
    match e {
        Error::UndefinedTruth(s) => Error::UndefinedTruth(s.clone()),
        Error::InvalidConfig(s) => Error::InvalidConfig(s.clone()),
        Error::MissingPeriod(p) => Error::MissingPeriod(*p),
        Error::MissingCell { d, g, t } => Error::MissingCell { d: *d, g: *g, t: *t },
        Error::MissingGroupPeriod { g, t } => Error::MissingGroupPeriod { g: *g, t: *t },
        Error::WeakDesign { what, value } => Error::WeakDesign { what, value: *value },
        Error::DensityFloor { value, floor, at } => Error::DensityFloor {
            value: *value,
            floor: *floor,
            at: *at,
        },
        Error::ZeroSwitcherShare { d } => Error::ZeroSwitcherShare { d: *d },
        other => Error::InvalidConfig(format!("{}: {other}", other.code())),
    }
}

fn clone_draw(d: &McDraw) -> McDraw {
    match d {
        Ok(v) => Ok(*v),
        Err(e) => Err(clone_err(e)),
    }
}
