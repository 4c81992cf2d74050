//! Command-line front end. Every command returns its stdout text; errors
//! are rendered as `{"kind", "message"}` JSON on stderr by the binary.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use fragility::config::BiasConfig;
use fragility::io::{canonical_json, ResultDocument};
use fragility::metrics::{MetricName, MetricSpec};
use fragility::oracles::{
    brute_force_envelope, compiler_check, dist8_index, f_divergence, fair_projection, independence_residual, min_flip_budget,
    proxy_closed_form, smooth, Dist8, Divergence, FairCriterion, FlipOptions, FlipStatistic, ProxyMetric,
    ProxyRegime, ProxyTable, SamplerMode,
};
use fragility::program::{build_program, build_two_bias_program, summarize, Sense};
use fragility::scheme::build_scheme;
use fragility::solver::{solve, sweep, sweep_grid, SolverOptions};
use fragility::table::{read_table, ObservedTable};
use serde::Serialize;
use serde_json::json;

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub kind: String,
    pub message: String,
}

impl CliError {
    pub fn new(kind: &str, message: impl Into<String>) -> Self {
        CliError { kind: kind.into(), message: message.into() }
    }

    pub fn usage(message: &str) -> Self {
        Self::new("usage", message)
    }

    pub fn to_json(&self) -> String {
        canonical_json(&json!({ "kind": self.kind, "message": self.message })).expect("error serializes")
    }
}

impl From<fragility::Error> for CliError {
    fn from(e: fragility::Error) -> Self {
        CliError::new(e.kind(), e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "fragility", version, about = "Bounds on fairness metrics under proxy, selection and policy biases")]
pub struct Cli {
    /// Seed for the randomized parts of the solver and samplers.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Solver threads.
    #[arg(long, global = true, env = "FRAGILITY_THREADS", default_value_t = 1)]
    pub threads: usize,
    /// Absolute gap between certified bounds and incumbents.
    #[arg(long, global = true)]
    pub gap_tol: Option<f64>,
    /// Wall-clock limit per solve, in seconds.
    #[arg(long, global = true)]
    pub time_limit: Option<f64>,
    #[arg(long, global = true)]
    pub max_nodes: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct MetricArgs {
    /// Metric name (see `GET /metrics` or the README).
    #[arg(long)]
    pub metric: String,
    /// Attribute value for per-group metrics.
    #[arg(long)]
    pub group: Option<u8>,
    /// Report the absolute value of signed metrics.
    #[arg(long)]
    pub abs: bool,
}

impl MetricArgs {
    fn spec(&self) -> CliResult<MetricSpec> {
        let name: MetricName = self.metric.parse()?;
        Ok(MetricSpec { name, signed: !self.abs, group: self.group })
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SenseArg {
    Min,
    Max,
    Both,
}

impl From<SenseArg> for Sense {
    fn from(s: SenseArg) -> Sense {
        match s {
            SenseArg::Min => Sense::Min,
            SenseArg::Max => Sense::Max,
            SenseArg::Both => Sense::Both,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Check {
    Fogliato,
    FairProjection,
    FlipBudget,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RegimeArg {
    MissedPositives,
    SpuriousPositives,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CriterionArg {
    Dp,
    Pvp,
    Eo,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DivergenceArg {
    Chi2,
    Tv,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Rejection,
    Restore,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and project a config; print the scheme dimensions.
    Validate { config: PathBuf },
    /// Print the latent-projected edgelist.
    Project { config: PathBuf },
    /// Bound a metric at one budget.
    Bound {
        config: PathBuf,
        table: PathBuf,
        #[command(flatten)]
        metric: MetricArgs,
        #[arg(long)]
        delta: f64,
        #[arg(long, value_enum, default_value = "both")]
        sense: SenseArg,
        /// Second bias config; its constraints use `--second-delta`.
        #[arg(long, requires = "second_delta")]
        second_config: Option<PathBuf>,
        #[arg(long, requires = "second_config")]
        second_delta: Option<f64>,
    },
    /// Bound a metric over a budget grid and emit a result document.
    Sweep {
        config: PathBuf,
        table: PathBuf,
        #[command(flatten)]
        metric: MetricArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        deltas: Vec<f64>,
        #[arg(long, value_enum, default_value = "both")]
        sense: SenseArg,
        /// Second bias config for a two-bias grid.
        #[arg(long, requires = "second_deltas")]
        second_config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', requires = "second_config")]
        second_deltas: Option<Vec<f64>>,
        /// Write the document here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reference computations for cross-checking the solver.
    Oracle {
        table: PathBuf,
        #[arg(long, value_enum)]
        check: Check,
        /// Proxy budgets for `fogliato`.
        #[arg(long, value_delimiter = ',', default_value = "0,0.01,0.02,0.05,0.1")]
        alpha: Vec<f64>,
        #[arg(long, value_enum, default_value = "missed-positives")]
        regime: RegimeArg,
        #[arg(long, value_enum, default_value = "dp")]
        criterion: CriterionArg,
        #[arg(long, value_enum, default_value = "chi2")]
        divergence: DivergenceArg,
        /// Test threshold for `flip-budget`.
        #[arg(long)]
        threshold: Option<f64>,
        /// Multiplier on the divergence (the sample size for a chi-square test).
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        /// Mix this much of the uniform distribution into the table first.
        #[arg(long, default_value_t = 0.0)]
        smooth: f64,
    },
    /// Compare compiled event polynomials with direct enumeration.
    CheckCompiler {
        config: PathBuf,
        #[arg(long, default_value_t = 1000)]
        pairs: usize,
    },
    /// Range of a metric over sampled feasible models (an inner envelope).
    Sample {
        config: PathBuf,
        table: PathBuf,
        #[command(flatten)]
        metric: MetricArgs,
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, value_enum, default_value = "restore")]
        mode: ModeArg,
    },
    /// Start the HTTP service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Analyses running at once.
        #[arg(long, default_value_t = 2)]
        workers: usize,
        /// Directory receiving finished result documents.
        #[arg(long)]
        store_dir: Option<PathBuf>,
    },
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))
}

pub fn load_config(path: &Path) -> CliResult<BiasConfig> {
    Ok(BiasConfig::from_json(&read_text(path)?)?)
}

pub fn load_table(path: &Path) -> CliResult<ObservedTable> {
    Ok(read_table(&read_text(path)?)?)
}

fn to_json<T: Serialize>(v: &T) -> CliResult<String> {
    Ok(canonical_json(v)?)
}

impl Cli {
    pub fn solver_options(&self) -> SolverOptions {
        let mut o = SolverOptions { seed: self.seed, threads: self.threads, ..SolverOptions::default() };
        if let Some(g) = self.gap_tol {
            o.gap_tol = g;
        }
        if let Some(t) = self.time_limit {
            o.time_limit = Some(t);
        }
        if let Some(n) = self.max_nodes {
            o.max_nodes = n;
        }
        o
    }
}

/// Run a parsed command and return what it prints.
pub fn execute(cli: Cli) -> CliResult<String> {
    let options = cli.solver_options();
    match &cli.command {
        Command::Validate { config } => to_json(&summarize(&load_config(config)?)?),
        Command::Project { config } => Ok(summarize(&load_config(config)?)?.projected_edgelist),
        Command::Bound { config, table, metric, delta, sense, second_config, second_delta } => {
            let cfg = load_config(config)?;
            let tab = load_table(table)?;
            let spec = metric.spec()?;
            let program = match (second_config, second_delta) {
                (Some(c2), Some(d2)) => build_two_bias_program(&cfg, &load_config(c2)?, &tab, &spec, *delta, *d2)?,
                _ => build_program(&cfg, &tab, &spec, *delta)?,
            };
            to_json(&solve(&program, (*sense).into(), &options)?)
        }
        Command::Sweep { config, table, metric, deltas, sense, second_config, second_deltas, out } => {
            let cfg = load_config(config)?;
            let tab = load_table(table)?;
            let spec = metric.spec()?;
            let doc = match (second_config, second_deltas) {
                (Some(c2), Some(d2)) => {
                    let second = load_config(c2)?;
                    let grid = sweep_grid(&cfg, &second, &tab, &spec, deltas, d2, (*sense).into(), &options)?;
                    ResultDocument::from_grid(&cfg, &second, &tab, &grid)
                }
                _ => ResultDocument::from_sweep(&cfg, &tab, &sweep(&cfg, &tab, &spec, deltas, (*sense).into(), &options)?),
            };
            let text = doc.to_json();
            match out {
                Some(path) => {
                    std::fs::write(path, text + "\n")
                        .map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))?;
                    Ok(String::new())
                }
                None => Ok(text),
            }
        }
        Command::Oracle { table, check, alpha, regime, criterion, divergence, threshold, scale, smooth } => {
            let tab = load_table(table)?;
            match check {
                Check::Fogliato => fogliato(&tab, alpha, *regime),
                Check::FairProjection => projections(&dist8(&tab, *smooth)),
                Check::FlipBudget => {
                    let t = threshold.ok_or_else(|| CliError::usage("flip-budget needs --threshold"))?;
                    let stat = FlipStatistic { criterion: (*criterion).into(), kind: (*divergence).into(), scale: *scale };
                    let p = dist8(&tab, *smooth);
                    let flip_options = FlipOptions { seed: cli.seed, ..FlipOptions::default() };
                    let got = min_flip_budget(&p, stat, t, &flip_options)?;
                    to_json(&json!({
                        "check": "flip-budget",
                        "statistic": stat,
                        "threshold": t,
                        "value": stat.eval(&p),
                        "budget": got.budget,
                        "witness": got.witness,
                    }))
                }
            }
        }
        Command::CheckCompiler { config, pairs } => {
            let resolved = load_config(config)?.resolve()?;
            let scheme = build_scheme(&resolved.projected)?;
            to_json(&compiler_check(&scheme, *pairs, cli.seed)?)
        }
        Command::Sample { config, table, metric, delta, samples, mode } => {
            let program = build_program(&load_config(config)?, &load_table(table)?, &metric.spec()?, *delta)?;
            let mode = match mode {
                ModeArg::Rejection => SamplerMode::Rejection,
                ModeArg::Restore => SamplerMode::Restore,
            };
            to_json(&brute_force_envelope(&program, *samples, cli.seed, mode)?)
        }
        Command::Serve { port, host, workers, store_dir } => {
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .map_err(|e| CliError::usage(&format!("bad address {host}:{port}: {e}")))?;
            let config = fragility_service::ServiceConfig { workers: *workers, persist_dir: store_dir.clone() };
            let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::new("io", e.to_string()))?;
            eprintln!("listening on http://{addr}");
            runtime
                .block_on(fragility_service::serve(addr, config))
                .map_err(|e| CliError::new("io", e.to_string()))?;
            Ok(String::new())
        }
    }
}

impl From<CriterionArg> for FairCriterion {
    fn from(c: CriterionArg) -> Self {
        match c {
            CriterionArg::Dp => FairCriterion::Dp,
            CriterionArg::Pvp => FairCriterion::Pvp,
            CriterionArg::Eo => FairCriterion::Eo,
        }
    }
}

impl From<DivergenceArg> for Divergence {
    fn from(d: DivergenceArg) -> Self {
        match d {
            DivergenceArg::Chi2 => Divergence::Chi2,
            DivergenceArg::Tv => Divergence::Tv,
        }
    }
}

/// Joint `(A, Yhat, Y)` distribution of a table.
pub fn dist8(table: &ObservedTable, eps: f64) -> Dist8 {
    let total = table.total() as f64;
    let mut p = [0.0; 8];
    for a in 0..2u8 {
        for y in 0..2u8 {
            for yhat in 0..2u8 {
                p[dist8_index(a as usize, yhat as usize, y as usize)] = table.count(a, y, yhat) as f64 / total;
            }
        }
    }
    if eps > 0.0 {
        smooth(&p, eps)
    } else {
        p
    }
}

/// Group table `P(Y, Yhat | A = a)` with the table's `Y` read as the proxy.
pub fn group_table(table: &ObservedTable, a: u8, alpha: f64) -> CliResult<ProxyTable> {
    let n: u64 = (0..4).map(|i| table.count(a, i >> 1, i & 1)).sum();
    if n == 0 {
        return Err(CliError::new("oracle", format!("group A={a} has no rows")));
    }
    let f = |y, yhat| table.count(a, y, yhat) as f64 / n as f64;
    Ok(ProxyTable::new(f(0, 0), f(0, 1), f(1, 0), f(1, 1), alpha)?)
}

fn fogliato(table: &ObservedTable, alphas: &[f64], regime: RegimeArg) -> CliResult<String> {
    let regime = match regime {
        RegimeArg::MissedPositives => ProxyRegime::MissedPositives,
        RegimeArg::SpuriousPositives => ProxyRegime::SpuriousPositives,
    };
    let mut groups = Vec::new();
    for a in 0..2u8 {
        let mut points = Vec::new();
        for &alpha in alphas {
            let t = group_table(table, a, alpha)?;
            let mut bounds = BTreeMap::new();
            for m in [ProxyMetric::Fpr, ProxyMetric::Fnr, ProxyMetric::Ppv, ProxyMetric::Npv] {
                let (lo, hi) = proxy_closed_form(&t, m, regime)?;
                bounds.insert(serde_json::to_value(m).expect("metric name").as_str().unwrap_or("").to_string(), [lo, hi]);
            }
            points.push(json!({ "alpha": alpha, "bounds": bounds }));
        }
        let cells = group_table(table, a, 0.0)?.p;
        groups.push(json!({ "group": a, "cells": cells, "points": points }));
    }
    to_json(&json!({ "check": "fogliato", "regime": regime, "groups": groups }))
}

fn projections(p: &Dist8) -> CliResult<String> {
    let mut out = Vec::new();
    for c in [FairCriterion::Dp, FairCriterion::Pvp, FairCriterion::Eo] {
        let q = fair_projection(p, c)?;
        out.push(json!({
            "criterion": c,
            "projection": q,
            "chi2": f_divergence(p, &q, Divergence::Chi2)?,
            "tv": f_divergence(p, &q, Divergence::Tv)?,
            "residual": independence_residual(&q, c),
        }));
    }
    to_json(&json!({ "check": "fair-projection", "distribution": p, "criteria": out }))
}
