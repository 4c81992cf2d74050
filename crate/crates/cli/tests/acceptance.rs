//! End-to-end acceptance suite, driven through the `fragility` binary.
//! Prints one PASS/FAIL line per criterion and exits nonzero on any failure.

use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

use fragility::compile::compile_joint;
use fragility::event::Atom;
use fragility::metrics::{empirical_metric, MetricName, MetricSpec};
use fragility::oracles::{
    apply_adapted_shift, apply_shift, conditional_residual, f_divergence, fair_projection, independence_residual,
    min_flip_budget_with, sample_feasible, Dist8, Divergence, FairCriterion, FlipOptions, SamplerMode, ShiftVector,
};
use fragility::program::build_program;
use fragility::scheme::{build_scheme, response_function_count};
use fragility::table::read_table;
use fragility::{config::BiasConfig, parse_edgelist};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn fragility(args: &[&str]) -> Result<Value, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_fragility"))
        .args(args)
        .current_dir(root())
        .output()
        .map_err(|e| format!("spawn failed: {e}"))?;
    if !out.status.success() {
        return Err(format!("fragility {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
    }
    serde_json::from_slice(&out.stdout).map_err(|e| format!("fragility {}: bad JSON: {e}", args.join(" ")))
}

fn num(v: &Value) -> Result<f64, String> {
    v.as_f64().ok_or_else(|| format!("expected a number, got {v}"))
}

/// `(lower, upper)` of a BoundsResult JSON object.
fn interval(b: &Value) -> Result<(f64, f64), String> {
    Ok((num(&b["lower"])?, num(&b["upper"])?))
}

fn table_text(name: &str) -> String {
    std::fs::read_to_string(root().join("data").join(name)).expect("table file")
}

fn config(name: &str) -> BiasConfig {
    BiasConfig::from_json(&std::fs::read_to_string(root().join("configs").join(name)).expect("config file")).unwrap()
}

const ALPHAS: &str = "0,0.01,0.02,0.05,0.1";
const TABLES: [&str; 2] = ["data/synthetic.csv", "data/skewed.csv"];
const BIAS_CONFIGS: [&str; 3] = ["configs/proxy.json", "configs/selection.json", "configs/ecp.json"];

fn oracle_equivalence() -> Outcome {
    let started = Instant::now();
    let oracle = fragility(&["oracle", "data/synthetic.csv", "--check", "fogliato", "--alpha", ALPHAS])?;
    let mut worst: f64 = 0.0;
    for g in 0..2usize {
        for metric in ["FPR", "FNR", "PPV"] {
            let group = g.to_string();
            let doc = fragility(&[
                "sweep",
                "configs/proxy_missed_positives.json",
                "data/synthetic.csv",
                "--metric",
                metric,
                "--group",
                &group,
                "--deltas",
                ALPHAS,
            ])?;
            let points = doc["points"].as_array().ok_or("no points")?;
            let expected = oracle["groups"][g]["points"].as_array().ok_or("no oracle points")?;
            for (p, e) in points.iter().zip(expected) {
                let (lo, hi) = interval(&p["bounds"])?;
                let (elo, ehi) = (num(&e["bounds"][metric][0])?, num(&e["bounds"][metric][1])?);
                let err = (lo - elo).abs().max((hi - ehi).abs());
                worst = worst.max(err);
                ensure!(
                    err <= 2e-3,
                    "{metric} group {g} alpha {}: solver [{lo:.6}, {hi:.6}] vs oracle [{elo:.6}, {ehi:.6}]",
                    p["delta"]
                );
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    ensure!(secs < 600.0, "took {secs:.0}s");
    Ok(format!("30 intervals, max endpoint error {worst:.2e}, {secs:.1}s"))
}

fn identification() -> Outcome {
    let mut worst: f64 = 0.0;
    for (cfg, metric) in
        [("configs/proxy_missed_positives.json", "FNR"), ("configs/proxy_spurious_positives.json", "FPR")]
    {
        for g in ["0", "1"] {
            let doc = fragility(&[
                "sweep",
                cfg,
                "data/skewed.csv",
                "--metric",
                metric,
                "--group",
                g,
                "--deltas",
                "0,0.05,0.1,0.15,0.2",
                "--gap-tol",
                "5e-4",
            ])?;
            for p in doc["points"].as_array().ok_or("no points")? {
                let (lo, hi) = interval(&p["bounds"])?;
                worst = worst.max(hi - lo);
                ensure!(hi - lo <= 2e-3, "{metric} group {g} delta {}: width {:.2e}", p["delta"], hi - lo);
            }
        }
    }
    Ok(format!("FNR (missed positives) and FPR (spurious positives), both groups, delta <= 0.2: max width {worst:.2e}"))
}

fn observational_specs() -> Vec<MetricSpec> {
    let mut specs = Vec::new();
    for name in MetricName::ALL.into_iter().filter(|m| m.is_observational()) {
        if name.is_per_group() {
            specs.push(MetricSpec::for_group(name, 0));
            specs.push(MetricSpec::for_group(name, 1));
        } else {
            specs.push(MetricSpec::new(name));
        }
    }
    specs
}

fn budget_zero_collapse() -> Outcome {
    let mut count = 0;
    let mut worst: f64 = 0.0;
    for cfg in BIAS_CONFIGS {
        for table in TABLES {
            let t = read_table(&std::fs::read_to_string(root().join(table)).unwrap()).map_err(|e| e.to_string())?;
            for spec in observational_specs() {
                let empirical = empirical_metric(&t, &spec).map_err(|e| e.to_string())?;
                let mut args = vec!["bound", cfg, table, "--metric", spec.name.as_str(), "--delta", "0"];
                let group = spec.group.map(|g| g.to_string());
                if let Some(g) = &group {
                    args.extend(["--group", g]);
                }
                let (lo, hi) = interval(&fragility(&args)?)?;
                worst = worst.max(hi - lo);
                ensure!(hi - lo <= 2e-3, "{cfg} {table} {}: width {:.2e}", spec.name, hi - lo);
                ensure!(
                    lo <= empirical && empirical <= hi,
                    "{cfg} {table} {} group {:?}: empirical {empirical} outside [{lo}, {hi}]",
                    spec.name,
                    spec.group
                );
                count += 1;
            }
        }
    }
    Ok(format!("{count} intervals over 3 configs x 2 tables, max width {worst:.2e}"))
}

fn soundness_sandwich() -> Outcome {
    let mut kept_total = 0;
    for cfg in BIAS_CONFIGS {
        for delta in ["0.02", "0.05"] {
            let common = ["data/synthetic.csv", "--metric", "PPP", "--delta", delta];
            let b = fragility(&[&["bound", cfg][..], &common].concat())?;
            let env = fragility(&[&["sample", cfg][..], &common, &["--samples", "10000", "--seed", "7"]].concat())?;
            let (lo, hi) = interval(&b)?;
            let kept = env["kept"].as_u64().unwrap_or(0);
            ensure!(kept > 0, "{cfg} delta {delta}: no feasible samples kept");
            kept_total += kept;
            let (smin, smax) = (num(&env["range"][0])?, num(&env["range"][1])?);
            ensure!(
                smin >= lo - 1e-9 && smax <= hi + 1e-9,
                "{cfg} delta {delta}: samples [{smin}, {smax}] escape [{lo}, {hi}]"
            );
            let gap = num(&b["gap"])?;
            let (ilo, ihi) = (num(&b["incumbent_lo"])?, num(&b["incumbent_hi"])?);
            ensure!(
                smin >= ilo - gap - 1e-12 && smax <= ihi + gap + 1e-12,
                "{cfg} delta {delta}: samples [{smin}, {smax}] beat incumbents [{ilo}, {ihi}] by more than gap {gap}"
            );
        }
    }
    Ok(format!("{kept_total} feasible samples out of 60000, all inside the certified intervals"))
}

fn widths(doc: &Value) -> Result<Vec<(f64, f64)>, String> {
    doc["points"].as_array().ok_or("no points")?.iter().map(|p| interval(&p["bounds"])).collect()
}

fn monotone_sweeps() -> Outcome {
    let mut notes = Vec::new();
    for table in TABLES {
        let doc = fragility(&["sweep", "configs/proxy.json", table, "--metric", "PPP", "--deltas", ALPHAS])?;
        let iv = widths(&doc)?;
        for w in iv.windows(2) {
            ensure!(w[1].1 >= w[0].1 && w[1].0 <= w[0].0, "{table}: PPP sweep not nested: {iv:?}");
        }
        let (w01, w05) = (iv[1].1 - iv[1].0, iv[3].1 - iv[3].0);
        ensure!(w05 > w01, "{table}: PPP width at 0.05 ({w05}) does not exceed width at 0.01 ({w01})");
        notes.push(format!("{table} PPP width {w01:.3} -> {w05:.3}"));
    }
    for (cfg, metric) in [("configs/selection.json", "DP"), ("configs/ecp.json", "CF_PPP")] {
        let doc = fragility(&["sweep", cfg, "data/skewed.csv", "--metric", metric, "--deltas", ALPHAS])?;
        let iv = widths(&doc)?;
        for w in iv.windows(2) {
            ensure!(w[1].1 >= w[0].1 && w[1].0 <= w[0].0, "{cfg} {metric} sweep not nested: {iv:?}");
        }
    }
    Ok(notes.join("; "))
}

fn two_bias_grid() -> Outcome {
    let grid_deltas = "0,0.0166666666666667,0.0333333333333333,0.05";
    let doc = fragility(&[
        "sweep",
        "configs/proxy.json",
        "data/synthetic.csv",
        "--metric",
        "PPP",
        "--deltas",
        grid_deltas,
        "--second-config",
        "configs/selection_proxy_outcome.json",
        "--second-deltas",
        grid_deltas,
    ])?;
    let grid = doc["grid"].as_array().ok_or("no grid")?;
    ensure!(grid.len() == 4 && grid.iter().all(|r| r.as_array().is_some_and(|r| r.len() == 4)), "grid is not 4x4");
    for row in grid {
        for cell in row.as_array().unwrap() {
            ensure!(cell["bounds"].is_object(), "cell failed: {}", cell["error"]);
        }
    }
    let corner = &grid[3][3]["bounds"];
    let corner_hi = num(&corner["upper"])?;
    let mut singles = Vec::new();
    for cfg in ["configs/proxy.json", "configs/selection_proxy_outcome.json"] {
        let b = fragility(&["bound", cfg, "data/synthetic.csv", "--metric", "PPP", "--delta", "0.05"])?;
        let (hi, inc) = (num(&b["upper"])?, num(&b["incumbent_hi"])?);
        ensure!(corner_hi >= inc, "corner upper {corner_hi} below the {cfg} incumbent {inc}");
        ensure!(corner_hi >= hi - 1e-3, "corner upper {corner_hi} below the {cfg} upper bound {hi}");
        singles.push(hi);
    }
    Ok(format!("corner upper {corner_hi:.4} vs single-bias uppers {:.4} and {:.4}", singles[0], singles[1]))
}

fn compiler_correctness() -> Outcome {
    let mut worst: f64 = 0.0;
    for cfg in BIAS_CONFIGS {
        let c = fragility(&["check-compiler", cfg, "--pairs", "1000", "--seed", "11"])?;
        let err = num(&c["max_error"])?;
        worst = worst.max(err);
        ensure!(err <= 1e-12, "{cfg}: max error {err:e}");
        ensure!(c["normalized"] == true, "{cfg}: normalization check failed");
    }
    Ok(format!("3000 pairs, max error {worst:.2e}, normalization identities hold"))
}

fn scheme_dimensions() -> Outcome {
    let chain = build_scheme(&parse_edgelist("A->Y").unwrap()).unwrap();
    ensure!(chain.block_dims() == vec![2, 4] && chain.total_dim == 6, "chain dims {:?}", chain.block_dims());
    let two = parse_edgelist("A->Y, B->Y, A->B").unwrap();
    let counts: Vec<usize> = ["A", "B", "Y"].iter().map(|n| response_function_count(n, &two).unwrap()).collect();
    ensure!(counts == vec![2, 4, 16], "response counts {counts:?}");
    let s = fragility(&["validate", "configs/proxy_independent.json"])?;
    ensure!(s["total_dim"] == 34, "total_dim {}", s["total_dim"]);
    let dims: Vec<u64> = s["blocks"].as_array().unwrap().iter().map(|b| b["dim"].as_u64().unwrap()).collect();
    let mut sorted = dims.clone();
    sorted.sort_unstable();
    ensure!(sorted == vec![2, 16, 16], "block dims {dims:?}");
    let rc = s["blocks"].as_array().unwrap().iter().flat_map(|b| {
        b["response_counts"].as_object().unwrap().iter().map(|(k, v)| (k.clone(), v.as_u64().unwrap())).collect::<Vec<_>>()
    });
    let rc: std::collections::BTreeMap<String, u64> = rc.collect();
    ensure!(
        rc.get("A") == Some(&2) && rc.get("Z") == Some(&4) && rc.get("P") == Some(&4) && rc.get("Y") == Some(&16),
        "response counts {rc:?}"
    );
    Ok("counts 2, 4, 16; dims 6 and 34".into())
}

fn random_dist8(rng: &mut ChaCha8Rng) -> Dist8 {
    let mut p = [0.0; 8];
    p.iter_mut().for_each(|v| *v = rng.random::<f64>() + 0.01);
    let s: f64 = p.iter().sum();
    p.map(|v| v / s)
}

fn supplementary_oracles() -> Outcome {
    // fair projections, through the CLI and on random inputs
    let cli = fragility(&["oracle", "data/skewed.csv", "--check", "fair-projection"])?;
    let mut worst_residual: f64 = 0.0;
    for c in cli["criteria"].as_array().ok_or("no criteria")? {
        worst_residual = worst_residual.max(num(&c["residual"])?);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..500 {
        let p = random_dist8(&mut rng);
        for c in [FairCriterion::Dp, FairCriterion::Pvp, FairCriterion::Eo] {
            let q = fair_projection(&p, c).map_err(|e| e.to_string())?;
            worst_residual = worst_residual.max(independence_residual(&q, c));
        }
    }
    ensure!(worst_residual < 1e-12, "independence residual {worst_residual:e}");

    let chi2 = f_divergence(&[0.5, 0.5], &[0.25, 0.75], Divergence::Chi2).unwrap();
    let tv = f_divergence(&[0.5, 0.5], &[0.25, 0.75], Divergence::Tv).unwrap();
    ensure!((chi2 - 1.0 / 3.0).abs() < 1e-9 && (tv - 0.5).abs() < 1e-9, "divergences chi2 {chi2} tv {tv}");

    // minimum flip budget against a 1e-3 grid over the 2-cell simplex
    let mut worst_flip: f64 = 0.0;
    for (reference, kind) in [([0.5, 0.5], Divergence::Chi2), ([0.4, 0.6], Divergence::Tv)] {
        let stat = |q: &[f64]| f_divergence(q, &reference, kind).unwrap();
        for (p0, t) in [(0.5, 0.1), (0.6, 0.2), (0.3, 0.05), (0.45, 0.3)] {
            let p = [p0, 1.0 - p0];
            let got = min_flip_budget_with(&p, stat, t, &FlipOptions::default()).map_err(|e| e.to_string())?;
            let mut best = f64::INFINITY;
            for k in 0..=1000 {
                let q = [k as f64 / 1000.0, 1.0 - k as f64 / 1000.0];
                if stat(&q) >= t {
                    best = best.min(((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt());
                }
            }
            worst_flip = worst_flip.max((got.budget - best).abs());
            ensure!((got.budget - best).abs() <= 2e-3, "flip budget {} vs grid {best} at p0={p0} t={t}", got.budget);
        }
    }

    // attribute shifts leave P(yhat | a) and P(y | yhat, a) unchanged
    let mut worst_shift: f64 = 0.0;
    for _ in 0..500 {
        let p = random_dist8(&mut rng);
        let pa1: f64 = p[..4].iter().sum();
        let mut l = ShiftVector::default();
        l.0[0] = (rng.random::<f64>() - 0.5) * pa1.min(1.0 - pa1);
        let q = apply_adapted_shift(&p, &l).map_err(|e| e.to_string())?;
        worst_shift = worst_shift.max(conditional_residual(&p, &q));
        let uniform: Dist8 = std::array::from_fn(|i| if i < 4 { pa1 / 4.0 } else { (1.0 - pa1) / 4.0 });
        let q = apply_shift(&uniform, &l).map_err(|e| e.to_string())?;
        worst_shift = worst_shift.max(conditional_residual(&uniform, &q));
    }
    ensure!(worst_shift < 1e-12, "shift residual {worst_shift:e}");
    Ok(format!(
        "projection residual {worst_residual:.1e}, chi2 {chi2:.5}, tv {tv:.3}, flip error {worst_flip:.1e}, shift residual {worst_shift:.1e}"
    ))
}

fn ecp_monotonicity() -> Outcome {
    let cfg = config("ecp.json");
    let table = read_table(&table_text("synthetic.csv")).unwrap();
    let mut kept = 0;
    let mut min_effect = f64::INFINITY;
    for delta in [0.0, 0.05] {
        let program =
            build_program(&cfg, &table, &MetricSpec::new(MetricName::CF_PPP), delta).map_err(|e| e.to_string())?;
        let y1 = compile_joint(&program.scheme, &[Atom::under("Y", &[("T", 1)], 1)]).unwrap();
        let y0 = compile_joint(&program.scheme, &[Atom::under("Y", &[("T", 0)], 1)]).unwrap();
        let points = sample_feasible(&program, 10_000, 13, SamplerMode::Restore);
        kept += points.len();
        for x in &points {
            min_effect = min_effect.min(y1.eval_f64(x) - y0.eval_f64(x));
        }
    }
    ensure!(kept > 0, "no feasible samples");
    ensure!(min_effect >= -1e-12, "sampled model with E[Y(T=1)] - E[Y(T=0)] = {min_effect}");
    let mut worst: f64 = 0.0;
    for (cf, factual) in [("CF_PPP", "PPP"), ("CF_NPP", "NPP"), ("CF_FPRP", "FPRP"), ("CF_FNRP", "FNRP")] {
        let args = |m: &'static str| ["bound", "configs/ecp.json", "data/skewed.csv", "--metric", m, "--delta", "0"];
        let (clo, chi) = interval(&fragility(&args(cf))?)?;
        let (flo, fhi) = interval(&fragility(&args(factual))?)?;
        let err = (clo - flo).abs().max((chi - fhi).abs());
        worst = worst.max(err);
        ensure!(err <= 2e-3, "{cf} [{clo}, {chi}] vs {factual} [{flo}, {fhi}]");
    }
    Ok(format!("{kept} samples, min effect {min_effect:.2e}; CF vs factual max endpoint gap {worst:.1e}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("oracle equivalence", oracle_equivalence),
        ("identification invariance", identification),
        ("budget-zero collapse", budget_zero_collapse),
        ("soundness sandwich", soundness_sandwich),
        ("monotone sweeps", monotone_sweeps),
        ("two-bias grid", two_bias_grid),
        ("compiler correctness", compiler_correctness),
        ("scheme dimensions", scheme_dimensions),
        ("supplementary oracles", supplementary_oracles),
        ("ECP monotonicity", ecp_monotonicity),
    ];
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if filter.as_ref().is_some_and(|f| !name.contains(f.as_str())) {
            continue;
        }
        let started = Instant::now();
        let outcome = check();
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS [{}] {name} ({secs:.1}s): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL [{}] {name} ({secs:.1}s): {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
