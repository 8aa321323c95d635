//! Acceptance criteria. Prints one PASS/FAIL/SKIP line per criterion and
//! exits non-zero if any fails.

mod common;

use std::time::{Duration, Instant};

use common::*;
use fuzzydid::bounds::{cic_bounds, tc_bounds};
use fuzzydid::inference::{attach_analytic, bootstrap_estimates, bootstrap::mix};
use fuzzydid::multigroup::{acr_weights, aggregate, classify_supergroups, SupergroupMap};
use fuzzydid::simulate::{generate, last_pair, monte_carlo, summarize, DgpConfig, McDraw, McInference};
use fuzzydid::{
    estimate, load_table, switcher_cdf, wald_cic, wald_did, wald_tc, BootstrapConfig, CellTable, EstimateKind,
    Observation, Schema,
};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}
use Outcome::*;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

const KINDS: [EstimateKind; 3] = [EstimateKind::Did, EstimateKind::Tc, EstimateKind::Cic];

fn c1_toy16() -> Outcome {
    let ct = CellTable::build(&toy16());
    let lib = [
        wald_did(&ct).unwrap().point,
        wald_tc(&ct, 0.0).unwrap().point,
        wald_cic(&ct, 0.0).unwrap().point,
    ];
    let oracle = [common::wald_did(&TOY16), common::wald_tc(&TOY16), common::wald_cic(&TOY16)];
    let ok = lib.iter().zip([28.0, 29.0, 30.0]).all(|(a, b)| (a - b).abs() <= 1e-12)
        && lib.iter().zip(&oracle).all(|(a, b)| (a - b).abs() <= 1e-12);
    check(ok, format!("library {lib:?}, oracle {oracle:?}"))
}

fn c2_sharp() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let mut rows = Vec::new();
        for g in 0..2 {
            for t in 0..2 {
                for _ in 0..rng.random_range(2..30) {
                    rows.push((g, t, (g * t) as u32, rng.random_range(-50.0..50.0)));
                }
            }
        }
        let w = wald_did(&CellTable::build(&dataset(&rows))).unwrap().point;
        worst = worst.max((w - did_y(&rows)).abs());
    }
    check(worst <= 1e-12, format!("max |W_DID - DID_Y| = {worst:e}"))
}

fn c3_collapse() -> Outcome {
    let ct = CellTable::build(&toy16());
    let tc = tc_bounds(&ct, None, 0.0).unwrap();
    let cic = cic_bounds(&ct, &[], None, 0.0).unwrap();
    let (wt, wc) = (wald_tc(&ct, 0.0).unwrap().point, wald_cic(&ct, 0.0).unwrap().point);
    let err = [tc.lower - wt, tc.upper - wt, cic.lower - wc, cic.upper - wc]
        .iter()
        .fold(0.0f64, |m, e| m.max(e.abs()));
    check(
        err <= 1e-10,
        format!("TC [{}, {}], CIC [{}, {}], max gap {err:e}", tc.lower, tc.upper, cic.lower, cic.upper),
    )
}

fn ibp_gap(rows: &[(i64, i64, u32, f64)]) -> f64 {
    let ct = CellTable::build(&dataset(rows));
    let w = wald_cic(&ct, f64::INFINITY).unwrap().point;
    let (f0, f1) = (switcher_cdf(&ct, 0).unwrap().raw, switcher_cdf(&ct, 1).unwrap().raw);
    let mut grid: Vec<f64> = f0.grid().iter().chain(f1.grid()).copied().collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let integral = integrate_difference(&grid, |y| f0.eval(y), |y| f1.eval(y));
    (integral - w).abs()
}

fn c4_integration_by_parts() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = ibp_gap(&TOY16);
    for _ in 0..20 {
        worst = worst.max(ibp_gap(&random_binary(&mut rng)));
    }
    check(worst <= 1e-10, format!("max |W_CIC - integral| = {worst:e}"))
}

fn c5_consistency() -> Outcome {
    let cfg = DgpConfig {
        n: 10_000,
        rho: 0.5,
        seed: 5,
        ..Default::default()
    };
    let rep = monte_carlo(&cfg, 200, &KINDS, McInference::None).unwrap();
    let biases: Vec<f64> = rep.estimators.iter().map(|s| s.bias.unwrap()).collect();
    let ok = rep.estimators.iter().all(|s| s.successes == 200) && biases.iter().all(|b| b.abs() < 0.03);
    check(ok, format!("mean bias did/tc/cic = {biases:.4?}"))
}

fn c6_decomposition() -> Outcome {
    // τ(v) = τ₀ + τ₁v with switcher intervals [0.2,0.6) and [0.8,0.9).
    let tau1 = -0.6 / 0.45;
    let cfg = DgpConfig {
        n: 10_000,
        thresholds: vec![vec![0.9, 0.8], vec![0.6, 0.2]],
        tau0: 1.0 - 0.4 * tau1,
        tau1,
        rho: 0.3,
        seed: 6,
        ..Default::default()
    };
    let truth = cfg.truth().unwrap();
    let (d, dp) = (truth.delta.unwrap(), truth.delta_prime.unwrap());
    let limit = truth.wald_did_limit.unwrap();
    let rep = monte_carlo(&cfg, 200, &[EstimateKind::Did], McInference::None).unwrap();
    let s = &rep.estimators[0];
    let (z_limit, z_delta) = ((s.mean - limit) / s.mc_se, (s.mean - d) / s.mc_se);
    check(
        (d - 1.0).abs() < 1e-12 && (dp - 0.4).abs() < 1e-12 && z_limit.abs() <= 3.0 && z_delta.abs() > 5.0,
        format!(
            "alpha = {:.4}, mean W_DID = {:.4} (limit {limit:.4}, {z_limit:+.2} MC se; Delta {d}, {z_delta:+.1} MC se)",
            truth.alpha.unwrap(),
            s.mean
        ),
    )
}

fn c7_coverage() -> Outcome {
    let cfg = DgpConfig {
        n: 2_000,
        rho: 0.5,
        seed: 7,
        ..Default::default()
    };
    let bc = BootstrapConfig {
        reps: 299,
        ..Default::default()
    };
    let rep = monte_carlo(&cfg, 500, &[EstimateKind::Did, EstimateKind::Tc], McInference::Bootstrap(bc)).unwrap();
    let cov: Vec<f64> = rep.estimators.iter().map(|s| s.coverage.unwrap()).collect();
    check(
        cov.iter().all(|c| (0.915..=0.98).contains(c)),
        format!("95% percentile coverage did/tc = {cov:.3?}"),
    )
}

fn c8_analytic_vs_bootstrap() -> Outcome {
    let cfg = DgpConfig {
        n: 5_000,
        rho: 0.5,
        seed: 8,
        ..Default::default()
    };
    let (ds, _) = generate(&cfg).unwrap();
    let ct = CellTable::build(&ds);
    let mut ests: Vec<_> = KINDS.iter().map(|&k| estimate(&ct, k, f64::INFINITY).unwrap()).collect();
    let analytic: Vec<f64> = ests
        .iter_mut()
        .map(|e| {
            attach_analytic(&ds, &ct, e, 0.95).unwrap();
            e.se.unwrap()
        })
        .collect();
    let bc = BootstrapConfig {
        reps: 1999,
        seed: 8,
        ..Default::default()
    };
    let boot: Vec<f64> = bootstrap_estimates(&ds, &mut ests, &bc).unwrap().iter().map(|r| r.se).collect();
    let rel: Vec<f64> = analytic.iter().zip(&boot).map(|(a, b)| (a - b).abs() / b).collect();
    check(
        rel[0] <= 0.10 && rel[1] <= 0.10 && rel[2] <= 0.15,
        format!("analytic {analytic:.4?} vs bootstrap {boot:.4?}, relative gap {rel:.3?}"),
    )
}

fn c9_bounds_validity() -> Outcome {
    // No group effect: with bounded U₀ a shifted treatment group would leave
    // the control support, which changes-in-changes rules out.
    let cfg = DgpConfig {
        n: 4_000,
        gamma: vec![0.0, 0.0],
        thresholds: vec![vec![0.6, 0.5], vec![0.8, 0.3]],
        tau0: 1.0,
        tau1: 0.5,
        rho: 0.3,
        bounded: true,
        seed: 9,
        ..Default::default()
    };
    let truth = cfg.truth().unwrap();
    let delta = truth.delta.unwrap();
    let support = truth.support;
    let hits: Vec<(bool, bool)> = (0..200u64)
        .map(|r| {
            let (ds, _) = generate(&cfg.with_seed(mix(cfg.seed, r))).unwrap();
            let ct = CellTable::build(&last_pair(&ds, &cfg).unwrap());
            let tc = tc_bounds(&ct, support, 0.0).unwrap();
            let cic = cic_bounds(&ct, &[], support, 0.0).unwrap();
            (
                tc.lower <= delta && delta <= tc.upper,
                cic.lower <= delta && delta <= cic.upper,
            )
        })
        .collect();
    let tc = hits.iter().filter(|h| h.0).count() as f64 / 200.0;
    let cic = hits.iter().filter(|h| h.1).count() as f64 / 200.0;
    check(tc >= 0.93 && cic >= 0.93, format!("Delta = {delta}, containment TC {tc:.3}, CIC {cic:.3}"))
}

fn c10_acr() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < 50 {
        let top = rng.random_range(1..5u32);
        let mut obs = Vec::new();
        for g in 0..2 {
            for t in 0..2 {
                for d in 0..=top {
                    for _ in 0..rng.random_range(0..8) {
                        obs.push(Observation::new(rng.random_range(0.0..10.0), d, g, t));
                    }
                }
                obs.push(Observation::new(0.0, rng.random_range(0..=top), g, t));
            }
        }
        let ct = CellTable::build(&fuzzydid::Dataset::new(obs).unwrap());
        let Ok(w) = acr_weights(&ct, 0.0) else { continue };
        worst = worst.max((w.weights.iter().map(|x| x.1).sum::<f64>() - 1.0).abs());
        done += 1;
    }
    let ct = CellTable::build(&toy16());
    let w = acr_weights(&ct, 0.0).unwrap();
    let binary_ok = w.weights.len() == 1 && (w.weights[0].1 - 1.0).abs() <= 1e-12;
    check(
        worst <= 1e-12 && binary_ok,
        format!("max |sum w_d - 1| = {worst:e} over 50 datasets; binary w_1 = {}", w.weights[0].1),
    )
}

fn c11_aggregation() -> Outcome {
    let cfg = DgpConfig {
        n: 20_000,
        group_shares: vec![1.0, 1.0, 1.0],
        thresholds: vec![vec![0.5, 0.5], vec![0.8, 0.4], vec![0.3, 0.6]],
        gamma: vec![0.0, 0.5, -0.3],
        shift: vec![vec![0.0; 2]; 3],
        wedge: vec![vec![0.0; 2]; 3],
        tau0: 1.0,
        tau1: 1.0,
        rho: 0.3,
        seed: 11,
        ..Default::default()
    };
    let truth = cfg.truth().unwrap();
    let target = truth.delta_star.unwrap();
    let map = SupergroupMap::from_labels(truth.labels.iter().enumerate().map(|(g, &l)| (g as i64, l))).unwrap();
    let reps = 100;
    let draws: Vec<Vec<McDraw>> = (0..reps as u64)
        .map(|r| {
            let (ds, _) = generate(&cfg.with_seed(mix(cfg.seed, r))).unwrap();
            KINDS
                .iter()
                .map(|&k| aggregate(&ds, &map, k).map(|a| (a.point, None, None)))
                .collect()
        })
        .collect();
    let mut lines = Vec::new();
    let mut ok = true;
    for (i, &k) in KINDS.iter().enumerate() {
        let col: Vec<McDraw> = draws
            .iter()
            .map(|row| match &row[i] {
                Ok(v) => Ok(*v),
                Err(e) => Err(fuzzydid::Error::InvalidConfig(e.to_string())),
            })
            .collect();
        let s = summarize(k, Some(target), &col);
        let z = s.bias.unwrap() / s.mc_se;
        ok &= s.successes == reps && z.abs() <= 3.0;
        lines.push(format!("{}: {:.4} ({z:+.2} MC se)", k, s.mean));
    }
    // Two supergroups only.
    let two = DgpConfig {
        n: 5_000,
        group_shares: vec![1.0, 1.0, 1.0],
        thresholds: vec![vec![0.5, 0.5], vec![0.8, 0.4], vec![0.7, 0.7]],
        gamma: vec![0.0; 3],
        shift: vec![vec![0.0; 2]; 3],
        wedge: vec![vec![0.0; 2]; 3],
        seed: 12,
        ..Default::default()
    };
    let t2 = two.truth().unwrap();
    let map2 = SupergroupMap::from_labels(t2.labels.iter().enumerate().map(|(g, &l)| (g as i64, l))).unwrap();
    let (ds2, _) = generate(&two).unwrap();
    let w10: Vec<f64> = KINDS.iter().map(|&k| aggregate(&ds2, &map2, k).unwrap().w10).collect();
    ok &= w10.iter().all(|&w| w == 1.0);
    check(
        ok,
        format!("Delta* = {target:.4}; {}; two-supergroup w_10 = {w10:?}", lines.join(", ")),
    )
}

fn c12_replication() -> Outcome {
    let two = std::env::var("FUZZYDID_DUFLO_CSV").ok();
    let many = std::env::var("FUZZYDID_DUFLO_MULTIGROUP_CSV").ok();
    if two.is_none() && many.is_none() {
        return Skip("set FUZZYDID_DUFLO_CSV and/or FUZZYDID_DUFLO_MULTIGROUP_CSV (columns y,d,g,t)".into());
    }
    let near = |a: f64, b: f64| (a - b).abs() <= 0.005;
    let mut ok = true;
    let mut notes = Vec::new();
    if let Some(p) = two {
        let ds = load_table(&p, &Schema::default()).and_then(|d| d.two_by_two()).unwrap();
        let ct = CellTable::build(&ds);
        let w = wald_did(&ct).unwrap().point;
        ok &= near(w, 0.195);
        notes.push(format!("W_DID {w:.4} (0.195)"));
        for (name, res, want) in [
            ("TC", tc_bounds(&ct, None, 0.0), (-3.70, 2.18)),
            ("CIC", cic_bounds(&ct, &[], None, 0.0), (-5.60, 3.36)),
        ] {
            match res {
                Ok(b) => {
                    ok &= near(b.lower, want.0) && near(b.upper, want.1);
                    notes.push(format!("{name} [{:.3}, {:.3}] ({want:?})", b.lower, b.upper));
                }
                Err(e) => {
                    ok = false;
                    notes.push(format!("{name} bounds: {e}"));
                }
            }
        }
    }
    if let Some(p) = many {
        let ds = load_table(&p, &Schema::default()).unwrap();
        match classify_supergroups(&ds, 0.5) {
            Ok(map) => {
                for (k, want) in KINDS.iter().zip([0.140, 0.101, 0.099]) {
                    match aggregate(&ds, &map, *k) {
                        Ok(a) => {
                            ok &= near(a.point, want);
                            notes.push(format!("{k} {:.4} ({want})", a.point));
                        }
                        Err(e) => {
                            ok = false;
                            notes.push(format!("{k}: {e}"));
                        }
                    }
                }
            }
            Err(e) => {
                ok = false;
                notes.push(format!("classification: {e}"));
            }
        }
    }
    check(ok, notes.join("; "))
}

type Criterion = (u32, &'static str, fn() -> Outcome, Duration);

fn main() {
    let secs = Duration::from_secs;
    let criteria: [Criterion; 12] = [
        (1, "TOY16 oracle equivalence", c1_toy16, secs(1)),
        (2, "sharp-design collapse", c2_sharp, secs(1)),
        (3, "stable-control bound collapse", c3_collapse, secs(1)),
        (4, "integration-by-parts identity", c4_integration_by_parts, secs(1)),
        (5, "Monte Carlo consistency", c5_consistency, secs(120)),
        (6, "Wald-DID decomposition", c6_decomposition, secs(120)),
        (7, "bootstrap coverage", c7_coverage, secs(600)),
        (8, "analytic vs bootstrap SE", c8_analytic_vs_bootstrap, secs(300)),
        (9, "bounds validity in simulation", c9_bounds_validity, secs(300)),
        (10, "ACR weights", c10_acr, secs(1)),
        (11, "aggregation degeneracy", c11_aggregation, secs(60)),
        (12, "optional replication on user data", c12_replication, secs(600)),
    ];
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = 0;
    for (id, name, f, budget) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let outcome = f();
        let el = start.elapsed();
        let timing = format!("{:.2}s, budget {}s", el.as_secs_f64(), budget.as_secs());
        let line = match outcome {
            Pass(d) if el <= budget => format!("PASS {id:>2} {name}: {d} [{timing}]"),
            Pass(d) => format!("FAIL {id:>2} {name}: over time budget; {d} [{timing}]"),
            Fail(d) => format!("FAIL {id:>2} {name}: {d} [{timing}]"),
            Skip(d) => format!("SKIP {id:>2} {name}: {d}"),
        };
        if line.starts_with("FAIL") {
            failed += 1;
        }
        println!("{line}");
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
