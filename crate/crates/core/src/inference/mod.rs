//! Standard errors and confidence intervals.

pub mod bootstrap;
pub mod influence;
pub mod kde;

pub use bootstrap::{
    bootstrap, bootstrap_multi, normal_ci, write_replicates, BootstrapConfig, BootstrapResult,
    Scheme,
};
pub use influence::{
    influence_cic, influence_did, influence_lqte, influence_tc, se_from_influence,
};

use crate::dataset::{CellTable, Dataset};
use crate::error::Result;
use crate::estimators::{estimate, Estimate, EstimateKind};

/// Influence values for `est` on two-group data `ds`.
pub fn influence(ds: &Dataset, ct: &CellTable, est: &Estimate) -> Result<Vec<f64>> {
    match est.kind {
        EstimateKind::Did => influence_did(ds, ct, est.point),
        EstimateKind::Tc => influence_tc(ds, ct, est.point),
        EstimateKind::Cic => influence_cic(ds, ct, est.point),
        EstimateKind::Lqte(q) => influence_lqte(ds, ct, q),
    }
}

/// Fills `se`, a normal CI and the influence vector.
pub fn attach_analytic(ds: &Dataset, ct: &CellTable, est: &mut Estimate, level: f64) -> Result<()> {
    let psi = influence(ds, ct, est)?;
    let se = se_from_influence(&psi);
    est.se = Some(se);
    est.ci = Some(normal_ci(est.point, se, level));
    est.se_source = Some("influence".into());
    est.influence = Some(psi);
    Ok(())
}

pub fn attach_bootstrap(est: &mut Estimate, res: &BootstrapResult) {
    est.se = Some(res.se);
    est.ci = Some(res.ci);
    est.se_source = Some("bootstrap".into());
    est.diagnostics.insert("bootstrap_failed".into(), res.failed as f64);
}

/// Bootstraps several estimators at once on two-group data; each replicate
/// rebuilds the cell table once. Resampling never reproduces exact control
/// stability, so the stable-control gate is off inside replicates; it is the
/// caller's job to apply it to the full sample.
pub fn bootstrap_estimates(
    ds: &Dataset,
    ests: &mut [Estimate],
    cfg: &BootstrapConfig,
) -> Result<Vec<BootstrapResult>> {
    let kinds: Vec<EstimateKind> = ests.iter().map(|e| e.kind).collect();
    let points: Vec<f64> = ests.iter().map(|e| e.point).collect();
    let res = bootstrap_multi(ds, &points, cfg, |d| {
        let ct = CellTable::build(d);
        kinds.iter().map(|&k| estimate(&ct, k, f64::INFINITY).map(|e| e.point)).collect()
    })?;
    for (e, r) in ests.iter_mut().zip(&res) {
        attach_bootstrap(e, r);
    }
    Ok(res)
}
