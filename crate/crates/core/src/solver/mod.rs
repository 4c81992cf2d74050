//! Certified bounds on a sensitivity program.

pub mod bnb;
pub mod local;
pub mod sweep;

use std::sync::atomic::AtomicBool;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Combine;
use crate::program::{Sense, SensitivityProgram};
use crate::relax::Pieces;
use crate::scalar::Scalar;

pub use sweep::{
    envelope, envelope_grid, sweep, sweep_grid, sweep_grid_with, sweep_with, GridResult, SweepPoint, SweepResult,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Absolute gap between certified bound and incumbent.
    pub gap_tol: f64,
    pub max_nodes: usize,
    /// Wall-clock budget per solve in seconds.
    pub time_limit: Option<f64>,
    /// Bound-propagation passes per node.
    pub relaxation_rounds: usize,
    /// Random starts for the incumbent search.
    pub restarts: usize,
    pub seed: u64,
    /// Worker threads; 0 uses the ambient pool.
    pub threads: usize,
    /// Optimization-based bound tightening at the root.
    pub obbt: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            gap_tol: 1e-3,
            max_nodes: 200_000,
            time_limit: Some(600.0),
            relaxation_rounds: 4,
            restarts: 4,
            seed: 0,
            threads: 1,
            obbt: true,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.gap_tol > 0.0 && self.gap_tol.is_finite()) {
            return Err(Error::Options("gap_tol must be positive".into()));
        }
        if self.max_nodes == 0 {
            return Err(Error::Options("max_nodes must be positive".into()));
        }
        if self.time_limit.is_some_and(|t| !(t > 0.0)) {
            return Err(Error::Options("time_limit must be positive".into()));
        }
        if self.relaxation_rounds == 0 {
            return Err(Error::Options("relaxation_rounds must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    BudgetExhausted,
    Infeasible,
}

/// Certified outer bounds and best inner values of a metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsResult {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub incumbent_lo: Option<f64>,
    pub incumbent_hi: Option<f64>,
    pub gap: Option<f64>,
    pub nodes: usize,
    pub status: SolveStatus,
    /// Feasible points attaining the incumbents.
    #[serde(skip)]
    pub witness_lo: Option<Vec<f64>>,
    #[serde(skip)]
    pub witness_hi: Option<Vec<f64>>,
}

impl BoundsResult {
    pub fn width(&self) -> Option<f64> {
        Some(self.upper? - self.lower?)
    }

    pub fn contains(&self, v: f64, tol: f64) -> bool {
        self.lower.is_none_or(|l| v >= l - tol) && self.upper.is_none_or(|u| v <= u + tol)
    }

    pub(crate) fn refresh_gap(&mut self) {
        let a = match (self.upper, self.incumbent_hi) {
            (Some(u), Some(i)) => Some(u - i),
            _ => None,
        };
        let b = match (self.lower, self.incumbent_lo) {
            (Some(l), Some(i)) => Some(i - l),
            _ => None,
        };
        self.gap = match (a, b) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (x, y) => x.or(y),
        };
    }
}

/// Metric value at a point (after the metric's combine rule).
pub fn metric_value(program: &SensitivityProgram, x: &[f64]) -> Option<f64> {
    program.objective_value(x).ok()
}

fn run_in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    if threads == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Bound the program's metric.
pub fn solve(program: &SensitivityProgram, sense: Sense, options: &SolverOptions) -> Result<BoundsResult> {
    solve_with(program, sense, options, &[], None)
}

/// [`solve`] with warm-start points and a cancellation flag.
pub fn solve_with(
    program: &SensitivityProgram,
    sense: Sense,
    options: &SolverOptions,
    starts: &[Vec<f64>],
    cancel: Option<&AtomicBool>,
) -> Result<BoundsResult> {
    options.validate()?;
    run_in_pool(options.threads, || solve_inner(program, sense, options, starts, cancel))
}

fn solve_inner(
    program: &SensitivityProgram,
    sense: Sense,
    options: &SolverOptions,
    starts: &[Vec<f64>],
    cancel: Option<&AtomicBool>,
) -> Result<BoundsResult> {
    let ncomp = program.objective.components.len();
    let combine = program.objective.combine;
    let want_lo = sense != Sense::Max;
    let want_hi = sense != Sense::Min;
    let mut nodes = 0;
    let mut status = SolveStatus::Optimal;
    let mut points: Vec<Vec<f64>> = Vec::new();
    let mut run = |pieces: Pieces, points: &mut Vec<Vec<f64>>| -> Result<f64> {
        let m = bnb::minimize(program, &pieces, options, starts, cancel)?;
        nodes += m.nodes;
        status = status.max(m.status);
        if let Some((x, _)) = m.incumbent {
            points.push(x);
        }
        Ok(m.lower)
    };
    let mut lower = None;
    let mut upper = None;
    match combine {
        Combine::Signed => {
            if want_lo {
                lower = Some(run(Pieces::minimize(0), &mut points)?);
            }
            if want_hi {
                upper = Some(-run(Pieces::maximize(0), &mut points)?);
            }
        }
        Combine::Abs | Combine::MaxAbs => {
            if want_lo {
                lower = Some(run(Pieces::max_abs(ncomp), &mut points)?.max(0.0));
            }
            if want_hi {
                let mut u: f64 = 0.0;
                for c in 0..ncomp {
                    let lo_c = run(Pieces::minimize(c), &mut points)?;
                    let hi_c = -run(Pieces::maximize(c), &mut points)?;
                    u = u.max(hi_c).max(-lo_c);
                }
                upper = Some(u);
            }
        }
    }
    // trivial range of the metric (each ratio lies in [0, 1])
    let span: f64 = program
        .objective
        .components
        .iter()
        .map(|c| c.terms.iter().map(|(w, _)| f64::from_rational(w).abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let floor = if combine == Combine::Signed { -span } else { 0.0 };
    let mut lower = lower.map(|l| l.max(floor));
    let mut upper = upper.map(|u| u.min(span));
    if status == SolveStatus::Infeasible {
        return Err(Error::Infeasible(format!("no model satisfies the constraints at budgets {:?}", program.deltas)));
    }
    let mut inc_lo: Option<(f64, Vec<f64>)> = None;
    let mut inc_hi: Option<(f64, Vec<f64>)> = None;
    for x in points {
        let Some(v) = metric_value(program, &x) else { continue };
        if inc_lo.as_ref().is_none_or(|(b, _)| v < *b) {
            inc_lo = Some((v, x.clone()));
        }
        if inc_hi.as_ref().is_none_or(|(b, _)| v > *b) {
            inc_hi = Some((v, x));
        }
    }
    // outer bounds never sit inside the inner values
    if let (Some(l), Some((v, _))) = (lower.as_mut(), &inc_lo) {
        *l = l.min(*v);
    }
    if let (Some(u), Some((v, _))) = (upper.as_mut(), &inc_hi) {
        *u = u.max(*v);
    }
    let mut res = BoundsResult {
        lower,
        upper,
        incumbent_lo: inc_lo.as_ref().map(|p| p.0),
        incumbent_hi: inc_hi.as_ref().map(|p| p.0),
        gap: None,
        nodes,
        status,
        witness_lo: inc_lo.map(|p| p.1),
        witness_hi: inc_hi.map(|p| p.1),
    };
    res.refresh_gap();
    Ok(res)
}
