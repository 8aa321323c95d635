//! Nonparametric bootstrap over rows or over clusters.
//!
//! Replicate b draws from its own ChaCha stream seeded by mixing the master
//! seed with b, so results do not depend on how replicates are scheduled.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{Ci, CiMethod};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Iid,
    Cluster,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BootstrapConfig {
    pub reps: usize,
    pub seed: u64,
    pub scheme: Scheme,
    pub ci: CiMethod,
    pub level: f64,
    /// Largest tolerated share of failed replicates.
    pub max_fail_share: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            reps: 999,
            seed: 0,
            scheme: Scheme::Iid,
            ci: CiMethod::Percentile,
            level: 0.95,
            max_fail_share: 0.10,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self, ds: &Dataset) -> Result<()> {
        if self.reps < 2 {
            return Err(Error::InvalidConfig("bootstrap needs at least 2 replicates".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidConfig(format!("level {} not in (0,1)", self.level)));
        }
        if self.scheme == Scheme::Cluster && !ds.has_clusters() {
            return Err(Error::InvalidConfig("cluster bootstrap needs a cluster column".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapResult {
    pub se: f64,
    pub ci: Ci,
    /// One entry per replicate; `None` where the statistic failed.
    #[serde(skip)]
    pub replicates: Vec<Option<f64>>,
    pub failed: usize,
    pub census: BTreeMap<String, usize>,
}

impl BootstrapResult {
    pub fn successful(&self) -> Vec<f64> {
        self.replicates.iter().flatten().copied().collect()
    }
}

/// SplitMix64 finalizer over (seed, index).
pub fn mix(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Row indices grouped by cluster, clusters in order of first appearance.
fn cluster_rows(ds: &Dataset) -> Vec<Vec<usize>> {
    let mut pos: BTreeMap<i64, usize> = BTreeMap::new();
    let mut rows: Vec<Vec<usize>> = Vec::new();
    for (i, o) in ds.iter().enumerate() {
        let c = o.cluster.expect("validated");
        let k = *pos.entry(c).or_insert_with(|| {
            rows.push(Vec::new());
            rows.len() - 1
        });
        rows[k].push(i);
    }
    rows
}

/// Resample indices for replicate `b`.
pub fn draw(n: usize, clusters: Option<&[Vec<usize>]>, seed: u64, b: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, b as u64));
    match clusters {
        None => (0..n).map(|_| rng.random_range(0..n)).collect(),
        Some(cl) => {
            let k = cl.len();
            let mut idx = Vec::with_capacity(n);
            for _ in 0..k {
                idx.extend_from_slice(&cl[rng.random_range(0..k)]);
            }
            idx
        }
    }
}

/// Runs a vector-valued statistic on every replicate. The outer Vec is
/// indexed by replicate.
pub fn replicate_multi<F>(ds: &Dataset, cfg: &BootstrapConfig, stat: F) -> Result<Vec<Result<Vec<f64>>>>
where
    F: Fn(&Dataset) -> Result<Vec<f64>> + Sync,
{
    cfg.validate(ds)?;
    let clusters = (cfg.scheme == Scheme::Cluster).then(|| cluster_rows(ds));
    let n = ds.len();
    Ok((0..cfg.reps)
        .into_par_iter()
        .map(|b| {
            let idx = draw(n, clusters.as_deref(), cfg.seed, b);
            stat(&ds.resample(&idx))
        })
        .collect())
}

/// Bootstrap for statistics returning one value per component, summarised
/// against the full-sample `points`.
pub fn bootstrap_multi<F>(
    ds: &Dataset,
    points: &[f64],
    cfg: &BootstrapConfig,
    stat: F,
) -> Result<Vec<BootstrapResult>>
where
    F: Fn(&Dataset) -> Result<Vec<f64>> + Sync,
{
    let reps = replicate_multi(ds, cfg, stat)?;
    let mut census: BTreeMap<String, usize> = BTreeMap::new();
    for r in &reps {
        if let Err(e) = r {
            *census.entry(e.code().to_string()).or_default() += 1;
        }
    }
    let failed: usize = census.values().sum();
    if failed as f64 > cfg.max_fail_share * cfg.reps as f64 {
        let census_str = census.iter().map(|(k, v)| format!("{k}: {v}")).collect::<Vec<_>>().join(", ");
        return Err(Error::BootstrapFailures {
            failed,
            total: cfg.reps,
            census: census_str,
        });
    }
    points
        .iter()
        .enumerate()
        .map(|(k, &point)| {
            let replicates: Vec<Option<f64>> = reps
                .iter()
                .map(|r| r.as_ref().ok().map(|v| v[k]))
                .collect();
            summarize(point, replicates, failed, census.clone(), cfg)
        })
        .collect()
}

pub fn bootstrap<F>(ds: &Dataset, point: f64, cfg: &BootstrapConfig, stat: F) -> Result<BootstrapResult>
where
    F: Fn(&Dataset) -> Result<f64> + Sync,
{
    let mut out = bootstrap_multi(ds, &[point], cfg, |d| stat(d).map(|v| vec![v]))?;
    Ok(out.remove(0))
}

fn summarize(
    point: f64,
    replicates: Vec<Option<f64>>,
    failed: usize,
    census: BTreeMap<String, usize>,
    cfg: &BootstrapConfig,
) -> Result<BootstrapResult> {
    let mut ok: Vec<f64> = replicates.iter().flatten().copied().collect();
    if ok.len() < 2 {
        return Err(Error::BootstrapFailures {
            failed,
            total: cfg.reps,
            census: "fewer than two successful replicates".into(),
        });
    }
    let se = sd(&ok);
    let alpha = 1.0 - cfg.level;
    let ci = match cfg.ci {
        CiMethod::Percentile => {
            ok.sort_by(f64::total_cmp);
            let (lo, hi) = (percentile(&ok, alpha / 2.0), percentile(&ok, 1.0 - alpha / 2.0));
            Ci {
                lo,
                hi,
                level: cfg.level,
                method: CiMethod::Percentile,
            }
        }
        CiMethod::Normal => normal_ci(point, se, cfg.level),
    };
    Ok(BootstrapResult {
        se,
        ci,
        replicates,
        failed,
        census,
    })
}

pub fn sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Order statistic at position (m+1)p, interpolated, clamped to the sample.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let m = sorted.len();
    let pos = (m as f64 + 1.0) * p;
    if pos <= 1.0 {
        return sorted[0];
    }
    if pos >= m as f64 {
        return sorted[m - 1];
    }
    let k = pos.floor() as usize;
    let frac = pos - k as f64;
    sorted[k - 1] + frac * (sorted[k] - sorted[k - 1])
}

pub fn z_value(level: f64) -> f64 {
    Normal::standard().inverse_cdf(0.5 + level / 2.0)
}

pub fn normal_ci(point: f64, se: f64, level: f64) -> Ci {
    let z = z_value(level);
    Ci {
        lo: point - z * se,
        hi: point + z * se,
        level,
        method: CiMethod::Normal,
    }
}

/// One value per line; failed replicates are written as `NA`.
pub fn write_replicates(path: impl AsRef<Path>, reps: &[Option<f64>]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in reps {
        match r {
            Some(v) => writeln!(f, "{v}")?,
            None => writeln!(f, "NA")?,
        }
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Observation;

    fn data(n: usize) -> Dataset {
        Dataset::new(
            (0..n)
                .map(|i| Observation {
                    cluster: Some(i as i64),
                    ..Observation::new((i as f64 * 1.7).sin(), 0, 0, 0)
                })
                .collect(),
        )
        .unwrap()
    }

    fn mean(ds: &Dataset) -> Result<f64> {
        Ok(ds.iter().map(|o| o.y).sum::<f64>() / ds.len() as f64)
    }

    #[test]
    fn constant_statistic() {
        let cfg = BootstrapConfig {
            reps: 50,
            ..Default::default()
        };
        let r = bootstrap(&data(20), 3.0, &cfg, |_| Ok(3.0)).unwrap();
        assert_eq!(r.se, 0.0);
        assert_eq!((r.ci.lo, r.ci.hi), (3.0, 3.0));
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = BootstrapConfig {
            reps: 999,
            seed: 42,
            ..Default::default()
        };
        let ds = data(30);
        let a = bootstrap(&ds, 0.0, &cfg, mean).unwrap();
        let b = bootstrap(&ds, 0.0, &cfg, mean).unwrap();
        assert_eq!(a.replicates, b.replicates);
    }

    #[test]
    fn parallel_matches_serial() {
        let cfg = BootstrapConfig {
            reps: 64,
            seed: 7,
            ..Default::default()
        };
        let ds = data(25);
        let par = bootstrap(&ds, 0.0, &cfg, mean).unwrap();
        let serial: Vec<Option<f64>> = (0..cfg.reps)
            .map(|b| mean(&ds.resample(&draw(ds.len(), None, cfg.seed, b))).ok())
            .collect();
        assert_eq!(par.replicates, serial);
    }

    #[test]
    fn singleton_clusters_reproduce_iid() {
        let ds = data(40);
        let iid = BootstrapConfig {
            reps: 30,
            seed: 9,
            ..Default::default()
        };
        let cl = BootstrapConfig {
            scheme: Scheme::Cluster,
            ..iid
        };
        let a = bootstrap(&ds, 0.0, &iid, mean).unwrap();
        let b = bootstrap(&ds, 0.0, &cl, mean).unwrap();
        assert_eq!(a.replicates, b.replicates);
    }

    #[test]
    fn failure_census() {
        let cfg = BootstrapConfig {
            reps: 20,
            ..Default::default()
        };
        let ds = data(10);
        let err = bootstrap(&ds, 0.0, &cfg, |d| {
            if d.observations()[0].y > 0.0 {
                Err(Error::EmptySample)
            } else {
                Ok(1.0)
            }
        })
        .unwrap_err();
        assert!(matches!(err, Error::BootstrapFailures { ref census, .. } if census.contains("empty_sample")));
    }

    #[test]
    fn percentile_positions() {
        let v: Vec<f64> = (1..=999).map(|i| i as f64).collect();
        assert_eq!(percentile(&v, 0.025), 25.0);
        assert_eq!(percentile(&v, 0.975), 975.0);
        assert!((z_value(0.95) - 1.959963984540054).abs() < 1e-12);
    }
}
