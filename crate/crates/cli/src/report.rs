use std::collections::BTreeMap;
use std::fmt::Write as _;

use fuzzydid::multigroup::AggregateEstimate;
use fuzzydid::placebo::PlaceboReport;
use fuzzydid::simulate::McReport;
use fuzzydid::{AcrWeights, BoundsResult, Ci, DesignInfo, Estimate, SupergroupMap};
use serde::Serialize;

use crate::args::Command;

#[derive(Debug, Serialize)]
pub struct RunSpec {
    pub version: &'static str,
    #[serde(flatten)]
    pub command: Command,
}

#[derive(Debug, Default, Serialize)]
pub struct Design {
    pub observations: usize,
    pub groups: Vec<i64>,
    pub periods: Vec<i64>,
    pub levels: Vec<u32>,
    /// Periods the estimates use, when the file has more than two.
    pub used_periods: Option<(i64, i64)>,
    pub two_group: Option<DesignInfo>,
    pub acr_weights: Option<AcrWeights>,
}

#[derive(Debug, Serialize)]
pub struct EstimateOut {
    pub estimator: String,
    pub point: f64,
    pub se: Option<f64>,
    pub ci: Option<Ci>,
    pub se_source: Option<String>,
    pub diagnostics: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aggregate: Option<AggregateEstimate>,
}

impl From<Estimate> for EstimateOut {
    fn from(e: Estimate) -> Self {
        Self {
            estimator: e.kind.to_string(),
            point: e.point,
            se: e.se,
            ci: e.ci,
            se_source: e.se_source,
            diagnostics: e.diagnostics,
            aggregate: None,
        }
    }
}

impl From<AggregateEstimate> for EstimateOut {
    fn from(a: AggregateEstimate) -> Self {
        Self {
            estimator: a.kind.to_string(),
            point: a.point,
            se: a.se,
            ci: a.ci,
            se_source: a.se.map(|_| "bootstrap".into()),
            diagnostics: BTreeMap::new(),
            aggregate: Some(a),
        }
    }
}

pub type Disagreement = (i64, Option<i8>, Option<i8>);

#[derive(Debug, Serialize)]
pub struct Supergroups {
    /// "auto" or the map file.
    pub source: String,
    pub split_sample: bool,
    pub map: SupergroupMap,
    /// Groups labeled differently by the two halves: (group, first, second).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub disagreements: Option<Vec<Disagreement>>,
}

#[derive(Debug, Serialize)]
pub struct Failure {
    pub context: String,
    pub module: &'static str,
    pub code: &'static str,
    pub message: String,
    pub hint: &'static str,
}

impl Failure {
    pub fn new(context: impl Into<String>, e: &fuzzydid::Error) -> Self {
        Self {
            context: context.into(),
            module: e.module(),
            code: e.code(),
            message: e.to_string(),
            hint: e.hint(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Report {
    pub run: RunSpec,
    pub design: Option<Design>,
    pub estimates: Vec<EstimateOut>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Vec<BoundsResult>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub placebo: Option<PlaceboReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub supergroups: Option<Supergroups>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc: Option<McReport>,
    pub notes: Vec<String>,
    pub errors: Vec<Failure>,
}

impl Report {
    pub fn new(command: Command) -> Self {
        Self {
            run: RunSpec {
                version: env!("CARGO_PKG_VERSION"),
                command,
            },
            design: None,
            estimates: Vec::new(),
            bounds: None,
            placebo: None,
            supergroups: None,
            mc: None,
            notes: Vec::new(),
            errors: Vec::new(),
        }
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let w = &mut out;
        let _ = writeln!(w, "fuzzydid {} {}", self.run.version, self.run.command.name());
        if let Some(d) = &self.design {
            write_design(w, d);
        }
        if !self.estimates.is_empty() {
            let _ = writeln!(w, "\nestimates");
            let _ = writeln!(w, "  {:<12} {:>12} {:>10} {:>12} {:>12}  se_source", "estimator", "point", "se", "ci_lo", "ci_hi");
            for e in &self.estimates {
                let _ = writeln!(
                    w,
                    "  {:<12} {:>12} {:>10} {:>12} {:>12}  {}",
                    e.estimator,
                    num(e.point),
                    opt(e.se),
                    opt(e.ci.map(|c| c.lo)),
                    opt(e.ci.map(|c| c.hi)),
                    e.se_source.as_deref().unwrap_or("-")
                );
                if let Some(a) = &e.aggregate {
                    let _ = writeln!(
                        w,
                        "  {:<12} w10 {}  increasing share {}  decreasing share {}",
                        "",
                        num(a.w10),
                        num(a.share_increasing),
                        num(a.share_decreasing)
                    );
                }
            }
        }
        if let Some(bounds) = &self.bounds {
            let _ = writeln!(w, "\nbounds");
            for b in bounds {
                let method = serde_json::to_value(b.method).ok();
                let name = method.as_ref().and_then(|v| v.as_str()).unwrap_or("?");
                let _ = writeln!(
                    w,
                    "  {:<4} [{}, {}]  support [{}, {}]{}",
                    name,
                    num(b.lower),
                    num(b.upper),
                    num(b.support.0),
                    num(b.support.1),
                    if b.collapsed { "  (stable control, point identified)" } else { "" }
                );
                if let (Some(l), Some(u)) = (b.lower_ci, b.upper_ci) {
                    let _ = writeln!(w, "       {:.0}% set CI [{}, {}]", 100.0 * l.level, num(l.lo), num(u.hi));
                }
                for q in &b.quantiles {
                    let _ = writeln!(w, "       q={}  [{}, {}]", q.q, num(q.lower), num(q.upper));
                }
            }
        }
        if let Some(p) = &self.placebo {
            let _ = writeln!(w, "\nplacebo on periods {} -> {}{}", p.pair.0, p.pair.1, if p.informative { "" } else { " (uninformative)" });
            for s in p.tests.iter().chain(&p.conditional) {
                let _ = writeln!(w, "  {:<12} {:>12} {:>10} {:>8}", s.name, num(s.statistic), opt(s.se), opt(s.t_stat));
            }
            for (g, t) in &p.first_stage {
                let _ = writeln!(w, "  group {g}: treatment stability chi2 {} (df {}), p = {}", num(t.statistic), t.df, num(t.pvalue));
            }
        }
        if let Some(s) = &self.supergroups {
            let _ = writeln!(w, "\nsupergroups ({})", s.source);
            for (g, l) in &s.map.groups {
                let _ = writeln!(w, "  group {:<8} {:>3}  p = {}", g, l.label, opt(l.pvalue));
            }
            if let Some(dis) = &s.disagreements {
                let _ = writeln!(w, "  halves disagree on {} group(s)", dis.len());
            }
        }
        if let Some(mc) = &self.mc {
            let _ = writeln!(w, "\nmonte carlo, {} replications", mc.reps);
            let _ = writeln!(w, "  {:<12} {:>10} {:>10} {:>10} {:>10} {:>9} {:>6}", "estimator", "truth", "mean", "bias", "sd", "coverage", "ok");
            for s in &mc.estimators {
                let _ = writeln!(
                    w,
                    "  {:<12} {:>10} {:>10} {:>10} {:>10} {:>9} {:>6}",
                    s.estimator.to_string(),
                    opt(s.truth),
                    num(s.mean),
                    opt(s.bias),
                    num(s.sd),
                    opt(s.coverage),
                    s.successes
                );
            }
        }
        for n in &self.notes {
            let _ = writeln!(w, "note: {n}");
        }
        for e in &self.errors {
            let _ = writeln!(w, "error in {} [{}]: {}", e.context, e.module, e.message);
        }
        out
    }
}

fn write_design(w: &mut String, d: &Design) {
    let _ = writeln!(
        w,
        "\ndesign: {} observations, groups {:?}, periods {:?}, levels {:?}",
        d.observations, d.groups, d.periods, d.levels
    );
    if let Some((a, b)) = d.used_periods {
        let _ = writeln!(w, "  using periods {a} -> {b}");
    }
    if let Some(i) = &d.two_group {
        let _ = writeln!(
            w,
            "  first stage {}  control change {}  DID_D {}  stable control: {}",
            num(i.first_stage_gap),
            num(i.control_gap),
            num(i.did_d),
            if i.stable_control { "yes" } else { "no" }
        );
    }
    if let Some(a) = &d.acr_weights {
        let ws: Vec<String> = a.weights.iter().map(|(d, x)| format!("w{d}={}", num(*x))).collect();
        let _ = writeln!(w, "  ACR weights {}", ws.join(" "));
    }
}

fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.4}")
    } else {
        format!("{x}")
    }
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), num)
}
