//! One pipeline per subcommand. Each returns the report it built; failures
//! of individual estimators are recorded in the report, anything else
//! aborts the run.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use fuzzydid::inference::{attach_analytic, bootstrap_estimates};
use fuzzydid::multigroup::{bootstrap_aggregate, compare_classifications, split_sample};
use fuzzydid::placebo::placebo_report;
use fuzzydid::simulate::{generate, monte_carlo, DgpConfig, McInference};
use fuzzydid::{
    acr_weights, aggregate, bootstrap_bounds, check_design, cic_bounds, classify_supergroups,
    describe_design, estimate, load_table, tc_bounds, BootstrapConfig, CellTable, Dataset,
    EstimateKind, Scheme, SupergroupMap,
};

use crate::args::{
    BoundsArg, BoundsArgs, ClassifyArgs, Command, DataArgs, EstimateArgs, InferenceArgs,
    PlaceboArgs, SimulateArgs,
};
use crate::report::{Design, EstimateOut, Failure, Report, Supergroups};

pub fn run(cmd: Command) -> Result<Report> {
    let mut report = Report::new(cmd.clone());
    match &cmd {
        Command::Estimate(a) => estimate_cmd(a, &mut report)?,
        Command::Bounds(a) => bounds_cmd(a, &mut report)?,
        Command::Placebo(a) => placebo_cmd(a, &mut report)?,
        Command::Classify(a) => classify_cmd(a, &mut report)?,
        Command::Simulate(a) => simulate_cmd(a, &mut report)?,
    }
    Ok(report)
}

fn invalid(msg: impl Into<String>) -> fuzzydid::Error {
    fuzzydid::Error::InvalidConfig(msg.into())
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        bail!(invalid(format!("--level {level} not in (0,1)")));
    }
    Ok(())
}

fn check_quantiles(qs: &[f64]) -> Result<()> {
    if let Some(q) = qs.iter().find(|q| !(**q > 0.0 && **q < 1.0)) {
        bail!(invalid(format!("quantile {q} not in (0,1)")));
    }
    Ok(())
}

fn load(data: &DataArgs) -> Result<Dataset> {
    Ok(load_table(&data.input, &data.schema())?)
}

fn overview(ds: &Dataset) -> Design {
    Design {
        observations: ds.len(),
        groups: ds.groups(),
        periods: ds.periods(),
        levels: ds.iter().map(|o| o.d).collect::<BTreeSet<_>>().into_iter().collect(),
        ..Design::default()
    }
}

/// Keeps the last two periods when there are more.
fn last_two(ds: &Dataset) -> Result<(Dataset, Option<(i64, i64)>)> {
    let p = ds.periods();
    if p.len() > 2 {
        let (a, b) = (p[p.len() - 2], p[p.len() - 1]);
        return Ok((ds.period_pair(a, b)?, Some((a, b))));
    }
    Ok((ds.clone(), None))
}

fn boot_config(inf: &InferenceArgs, clustered: bool) -> BootstrapConfig {
    BootstrapConfig {
        reps: inf.bootstrap,
        seed: inf.seed,
        scheme: if clustered { Scheme::Cluster } else { Scheme::Iid },
        ci: inf.ci.into(),
        level: inf.level,
        ..BootstrapConfig::default()
    }
}

/// A library error from an individual statistic: recorded when it is about
/// the data, propagated when it is about the configuration.
fn record(report: &mut Report, context: impl Into<String>, e: fuzzydid::Error) -> Result<()> {
    if !e.is_design() {
        return Err(e.into());
    }
    report.errors.push(Failure::new(context, &e));
    Ok(())
}

struct TwoGroup {
    pair: Dataset,
    ct: CellTable,
}

fn two_group(full: &Dataset, tol: f64, design: &mut Design) -> Result<TwoGroup> {
    let (pair, used) = last_two(full)?;
    let pair = pair.two_by_two()?;
    let ct = CellTable::build(&pair);
    design.used_periods = used;
    design.two_group = Some(check_design(&ct, tol)?);
    if !ct.is_binary() {
        design.acr_weights = Some(acr_weights(&ct, tol)?);
    }
    Ok(TwoGroup { pair, ct })
}

fn estimate_cmd(a: &EstimateArgs, report: &mut Report) -> Result<()> {
    check_level(a.inference.level)?;
    check_quantiles(&a.quantiles)?;
    let full = load(&a.data)?;
    let mut design = overview(&full);
    let cfg = boot_config(&a.inference, a.data.cluster.is_some());
    if let Some(src) = &a.supergroups {
        let res = estimate_multigroup(a, src, &full, &cfg, &mut design, report);
        report.design = Some(design);
        return res;
    }
    let tg = two_group(&full, a.stable_tol, &mut design)?;
    report.design = Some(design);

    let mut kinds = a.estimator.kinds();
    kinds.extend(a.quantiles.iter().map(|&q| EstimateKind::Lqte(q)));
    let mut ests = Vec::new();
    for k in kinds {
        match estimate(&tg.ct, k, a.stable_tol) {
            Ok(e) => ests.push(e),
            Err(e) => record(report, k.to_string(), e)?,
        }
    }
    if ests.is_empty() {
        return Ok(());
    }
    if cfg.reps > 0 {
        if let Err(e) = bootstrap_estimates(&tg.pair, &mut ests, &cfg) {
            record(report, "bootstrap", e)?;
        }
    } else {
        for e in &mut ests {
            if let Err(err) = attach_analytic(&tg.pair, &tg.ct, e, a.inference.level) {
                report.notes.push(format!("{}: no analytic standard error ({err}); {}", e.kind, err.hint()));
            }
        }
    }
    for e in &ests {
        if let Some(&n) = e.diagnostics.get("out_of_support").filter(|&&n| n > 0.0) {
            report.notes.push(format!("{}: {n} treatment-group period-0 outcomes fall outside the control support", e.kind));
        }
    }
    report.estimates = ests.into_iter().map(EstimateOut::from).collect();
    Ok(())
}

fn estimate_multigroup(
    a: &EstimateArgs,
    src: &str,
    full: &Dataset,
    cfg: &BootstrapConfig,
    design: &mut Design,
    report: &mut Report,
) -> Result<()> {
    if !a.quantiles.is_empty() {
        bail!(invalid("quantile effects are not aggregated across supergroups"));
    }
    let (ds, used) = last_two(full)?;
    design.used_periods = used;
    let auto = src == "auto";
    let split = a.split_sample && auto;
    if a.split_sample && !auto {
        report.notes.push("--split-sample ignored: the supergroup map was supplied".into());
    }
    let (class_ds, est_ds) = if split { split_sample(&ds)? } else { (ds.clone(), ds) };
    let map = if auto {
        classify_supergroups(&class_ds, a.pvalue_threshold)?
    } else {
        SupergroupMap::read(src)?
    };
    for k in a.estimator.kinds() {
        match aggregate(&est_ds, &map, k) {
            Ok(mut agg) => {
                if cfg.reps > 0 {
                    if let Err(e) = bootstrap_aggregate(&est_ds, &map, &mut agg, cfg) {
                        record(report, format!("{k} bootstrap"), e)?;
                    }
                }
                report.notes.extend(agg.warnings.iter().map(|w| format!("{k}: {w}")));
                report.estimates.push(agg.into());
            }
            Err(e) => record(report, k.to_string(), e)?,
        }
    }
    if cfg.reps == 0 {
        report.notes.push("aggregate estimates have no analytic standard errors; use --bootstrap B".into());
    }
    report.supergroups = Some(Supergroups {
        source: src.to_string(),
        split_sample: split,
        map,
        disagreements: None,
    });
    Ok(())
}

fn bounds_cmd(a: &BoundsArgs, report: &mut Report) -> Result<()> {
    check_level(a.inference.level)?;
    check_quantiles(&a.quantiles)?;
    let full = load(&a.data)?;
    let mut design = overview(&full);
    let tg = two_group(&full, a.stable_tol, &mut design);
    report.design = Some(design);
    let tg = tg?;
    let cfg = boot_config(&a.inference, a.data.cluster.is_some());

    let (tc, cic) = match a.estimator {
        BoundsArg::Tc => (true, false),
        BoundsArg::Cic => (false, true),
        BoundsArg::All => (true, true),
    };
    if tc && !cic && !a.quantiles.is_empty() {
        report.notes.push("quantile bounds come from the cic method; --quantiles ignored".into());
    }
    let mut out = Vec::new();
    let methods = [("tc", tc), ("cic", cic)];
    for (name, on) in methods {
        if !on {
            continue;
        }
        let res = if name == "tc" {
            tc_bounds(&tg.ct, a.support, a.stable_tol)
        } else {
            cic_bounds(&tg.ct, &a.quantiles, a.support, a.stable_tol)
        };
        match res {
            Ok(mut b) => {
                if cfg.reps > 0 && !b.collapsed {
                    if let Err(e) = bootstrap_bounds(&tg.pair, &mut b, &cfg) {
                        record(report, format!("{name} bounds bootstrap"), e)?;
                    }
                }
                out.push(b);
            }
            Err(e) => record(report, format!("{name} bounds"), e)?,
        }
    }
    report.bounds = Some(out);
    Ok(())
}

fn placebo_cmd(a: &PlaceboArgs, report: &mut Report) -> Result<()> {
    check_level(a.inference.level)?;
    let full = load(&a.data)?;
    let mut design = overview(&full);
    // The main-period diagnostics are informative only; placebo data need
    // not satisfy the first-stage conditions.
    if let Ok((pair, used)) = last_two(&full) {
        if let Ok(pair) = pair.two_by_two() {
            design.used_periods = used;
            design.two_group = describe_design(&CellTable::build(&pair), 0.0).ok();
        }
    }
    report.design = Some(design);
    let cfg = boot_config(&a.inference, a.data.cluster.is_some());
    let rep = placebo_report(&full, a.placebo_pair, (cfg.reps > 0).then_some(&cfg))?;
    report.notes.extend(rep.notes.iter().cloned());
    report.placebo = Some(rep);
    Ok(())
}

fn classify_cmd(a: &ClassifyArgs, report: &mut Report) -> Result<()> {
    let full = load(&a.data)?;
    let mut design = overview(&full);
    let (ds, used) = last_two(&full)?;
    design.used_periods = used;
    report.design = Some(design);
    let map = classify_supergroups(&ds, a.pvalue_threshold)?;
    let disagreements = if a.split_sample {
        let (x, y) = split_sample(&ds)?;
        let (mx, my) = (classify_supergroups(&x, a.pvalue_threshold)?, classify_supergroups(&y, a.pvalue_threshold)?);
        Some(compare_classifications(&mx, &my))
    } else {
        None
    };
    if let Some(path) = &a.write_map {
        map.write(path)?;
    }
    report.supergroups = Some(Supergroups {
        source: "auto".into(),
        split_sample: a.split_sample,
        map,
        disagreements,
    });
    Ok(())
}

fn simulate_cmd(a: &SimulateArgs, report: &mut Report) -> Result<()> {
    check_level(a.level)?;
    check_quantiles(&a.quantiles)?;
    let mut cfg = match &a.config {
        Some(p) => DgpConfig::load(p)?,
        None => DgpConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg = cfg.with_seed(s);
    }
    cfg.validate()?;
    let mut kinds = a.estimator.kinds();
    kinds.extend(a.quantiles.iter().map(|&q| EstimateKind::Lqte(q)));
    let inference = if a.bootstrap > 0 {
        McInference::Bootstrap(BootstrapConfig {
            reps: a.bootstrap,
            ci: a.ci.into(),
            level: a.level,
            ..BootstrapConfig::default()
        })
    } else {
        McInference::Analytic(a.level)
    };
    if let Some(path) = &a.write_data {
        let (ds, _) = generate(&cfg)?;
        write_csv(&ds, path)?;
    }
    if a.reps > 0 {
        report.mc = Some(monte_carlo(&cfg, a.reps, &kinds, inference)?);
    }
    Ok(())
}

fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut text = String::from("y,d,g,t\n");
    for o in ds.iter() {
        let _ = writeln!(text, "{},{},{},{}", o.y, o.d, o.g, o.t);
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
