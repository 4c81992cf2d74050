//! Budget sweeps and two-bias grids.
//!
//! Feasible sets grow with the budget when every constraint loosens in `D`,
//! so certified bounds at a larger budget also bound smaller ones:
//! `upper(d) <= min_{d' >= d} upper(d')`, `lower(d) >= max_{d' >= d} lower(d')`,
//! and inner values carry forward to larger budgets.

use std::sync::atomic::AtomicBool;

use serde::{Deserialize, Serialize};

use super::{solve_with, BoundsResult, SolverOptions};
use crate::config::BiasConfig;
use crate::error::{Error, Result};
use crate::event::budget_is_one_sided;
use crate::io::{config_hash, table_hash};
use crate::metrics::MetricSpec;
use crate::program::{build_program_with_budgets, Sense};
use crate::table::ObservedTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub delta: f64,
    /// Second budget in two-bias grids.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta2: Option<f64>,
    pub bounds: Option<BoundsResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub metric: MetricSpec,
    pub sense: Sense,
    pub deltas: Vec<f64>,
    /// Reported bounds after the budget envelope.
    pub points: Vec<SweepPoint>,
    /// Per-budget bounds as solved.
    pub raw: Vec<SweepPoint>,
    /// Whether the envelope was applied (all constraints loosen with `D`).
    pub nested: bool,
    pub config_hash: String,
    pub table_hash: String,
    pub options: SolverOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub metric: MetricSpec,
    pub sense: Sense,
    pub first_deltas: Vec<f64>,
    pub second_deltas: Vec<f64>,
    /// `cells[i][j]` at `(first_deltas[i], second_deltas[j])`.
    pub cells: Vec<Vec<SweepPoint>>,
    pub raw: Vec<Vec<SweepPoint>>,
    pub nested: bool,
    pub options: SolverOptions,
}

fn check_grid(deltas: &[f64]) -> Result<()> {
    for &d in deltas {
        if !(0.0..=1.0).contains(&d) {
            return Err(Error::DeltaRange(d));
        }
    }
    if deltas.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Options("delta grid must be sorted ascending".into()));
    }
    Ok(())
}

fn point(delta: f64, delta2: Option<f64>, r: Result<BoundsResult>) -> SweepPoint {
    match r {
        Ok(b) => SweepPoint { delta, delta2, bounds: Some(b), error: None },
        Err(e) => SweepPoint { delta, delta2, bounds: None, error: Some(e.to_string()) },
    }
}

fn warm(points: &[&SweepPoint]) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for p in points {
        if let Some(b) = &p.bounds {
            out.extend(b.witness_lo.iter().cloned());
            out.extend(b.witness_hi.iter().cloned());
        }
    }
    out
}

/// Apply the budget envelope to a sweep in ascending budget order.
pub fn envelope(points: &mut [SweepPoint]) {
    let n = points.len();
    let get = |p: &SweepPoint| p.bounds.clone();
    let orig: Vec<Option<BoundsResult>> = points.iter().map(get).collect();
    for i in 0..n {
        let Some(b) = points[i].bounds.as_mut() else { continue };
        for later in orig.iter().skip(i + 1).flatten() {
            if let (Some(u), Some(v)) = (b.upper.as_mut(), later.upper) {
                *u = u.min(v);
            }
            if let (Some(l), Some(v)) = (b.lower.as_mut(), later.lower) {
                *l = l.max(v);
            }
        }
        for earlier in orig.iter().take(i).flatten() {
            carry_inner(b, earlier);
        }
        settle(b);
    }
}

fn carry_inner(b: &mut BoundsResult, earlier: &BoundsResult) {
    if let Some(v) = earlier.incumbent_hi {
        if b.incumbent_hi.is_none_or(|h| v > h) {
            b.incumbent_hi = Some(v);
            b.witness_hi = earlier.witness_hi.clone();
        }
    }
    if let Some(v) = earlier.incumbent_lo {
        if b.incumbent_lo.is_none_or(|l| v < l) {
            b.incumbent_lo = Some(v);
            b.witness_lo = earlier.witness_lo.clone();
        }
    }
}

fn settle(b: &mut BoundsResult) {
    if let (Some(l), Some(i)) = (b.lower.as_mut(), b.incumbent_lo) {
        *l = l.min(i);
    }
    if let (Some(u), Some(i)) = (b.upper.as_mut(), b.incumbent_hi) {
        *u = u.max(i);
    }
    b.refresh_gap();
}

/// Two-dimensional envelope over a grid sorted ascending on both axes.
pub fn envelope_grid(cells: &mut [Vec<SweepPoint>]) {
    let orig: Vec<Vec<Option<BoundsResult>>> =
        cells.iter().map(|r| r.iter().map(|p| p.bounds.clone()).collect()).collect();
    for i in 0..cells.len() {
        for j in 0..cells[i].len() {
            let Some(b) = cells[i][j].bounds.as_mut() else { continue };
            for (i2, row) in orig.iter().enumerate() {
                for (j2, other) in row.iter().enumerate() {
                    let Some(o) = other else { continue };
                    if (i2, j2) == (i, j) {
                        continue;
                    }
                    if i2 >= i && j2 >= j {
                        if let (Some(u), Some(v)) = (b.upper.as_mut(), o.upper) {
                            *u = u.min(v);
                        }
                        if let (Some(l), Some(v)) = (b.lower.as_mut(), o.lower) {
                            *l = l.max(v);
                        }
                    }
                    if i2 <= i && j2 <= j {
                        carry_inner(b, o);
                    }
                }
            }
            settle(b);
        }
    }
}

/// Solve at every budget of `deltas`. `on_point` sees each raw result as it
/// certifies; `cancel` stops the remaining budgets.
#[allow(clippy::too_many_arguments)]
pub fn sweep_with(
    config: &BiasConfig,
    table: &ObservedTable,
    metric: &MetricSpec,
    deltas: &[f64],
    sense: Sense,
    options: &SolverOptions,
    cancel: Option<&AtomicBool>,
    on_point: &mut dyn FnMut(usize, &SweepPoint),
) -> Result<SweepResult> {
    check_grid(deltas)?;
    options.validate()?;
    let resolved = config.resolve()?;
    let nested = resolved.constraints.iter().all(budget_is_one_sided);
    let mut raw: Vec<SweepPoint> = Vec::with_capacity(deltas.len());
    for (i, &d) in deltas.iter().enumerate() {
        if cancel.is_some_and(|c| c.load(std::sync::atomic::Ordering::Relaxed)) {
            break;
        }
        let starts = if nested { warm(&raw.iter().rev().take(1).collect::<Vec<_>>()) } else { Vec::new() };
        let budgets = vec![d; resolved.constraints.len()];
        let r = build_program_with_budgets(config, &resolved, table, metric, &budgets)
            .and_then(|p| solve_with(&p, sense, options, &starts, cancel));
        let p = point(d, None, r);
        on_point(i, &p);
        raw.push(p);
    }
    let mut points = raw.clone();
    if nested {
        envelope(&mut points);
    }
    Ok(SweepResult {
        metric: metric.clone(),
        sense,
        deltas: deltas.to_vec(),
        points,
        raw,
        nested,
        config_hash: config_hash(config),
        table_hash: table_hash(table),
        options: options.clone(),
    })
}

pub fn sweep(
    config: &BiasConfig,
    table: &ObservedTable,
    metric: &MetricSpec,
    deltas: &[f64],
    sense: Sense,
    options: &SolverOptions,
) -> Result<SweepResult> {
    sweep_with(config, table, metric, deltas, sense, options, None, &mut |_, _| {})
}

/// Two-bias grid: `first`'s constraints use the row budget, `second`'s the
/// column budget.
#[allow(clippy::too_many_arguments)]
pub fn sweep_grid_with(
    first: &BiasConfig,
    second: &BiasConfig,
    table: &ObservedTable,
    metric: &MetricSpec,
    first_deltas: &[f64],
    second_deltas: &[f64],
    sense: Sense,
    options: &SolverOptions,
    cancel: Option<&AtomicBool>,
    on_cell: &mut dyn FnMut(usize, usize, &SweepPoint),
) -> Result<GridResult> {
    check_grid(first_deltas)?;
    check_grid(second_deltas)?;
    options.validate()?;
    let (merged, split) = first.merge(second)?;
    let resolved = merged.resolve()?;
    let nested = resolved.constraints.iter().all(budget_is_one_sided);
    let mut raw: Vec<Vec<SweepPoint>> = Vec::new();
    'outer: for (i, &d1) in first_deltas.iter().enumerate() {
        let mut row: Vec<SweepPoint> = Vec::new();
        for (j, &d2) in second_deltas.iter().enumerate() {
            if cancel.is_some_and(|c| c.load(std::sync::atomic::Ordering::Relaxed)) {
                raw.push(row);
                break 'outer;
            }
            let mut prev: Vec<&SweepPoint> = Vec::new();
            if nested {
                if let Some(p) = row.last() {
                    prev.push(p);
                }
                if let Some(p) = raw.last().and_then(|r| r.get(j)) {
                    prev.push(p);
                }
            }
            let starts = warm(&prev);
            let budgets: Vec<f64> = (0..resolved.constraints.len()).map(|k| if k < split { d1 } else { d2 }).collect();
            let r = build_program_with_budgets(&merged, &resolved, table, metric, &budgets)
                .and_then(|p| solve_with(&p, sense, options, &starts, cancel));
            let p = point(d1, Some(d2), r);
            on_cell(i, j, &p);
            row.push(p);
        }
        raw.push(row);
    }
    let mut cells = raw.clone();
    if nested {
        envelope_grid(&mut cells);
    }
    Ok(GridResult {
        metric: metric.clone(),
        sense,
        first_deltas: first_deltas.to_vec(),
        second_deltas: second_deltas.to_vec(),
        cells,
        raw,
        nested,
        options: options.clone(),
    })
}

#[allow(clippy::too_many_arguments)]
pub fn sweep_grid(
    first: &BiasConfig,
    second: &BiasConfig,
    table: &ObservedTable,
    metric: &MetricSpec,
    first_deltas: &[f64],
    second_deltas: &[f64],
    sense: Sense,
    options: &SolverOptions,
) -> Result<GridResult> {
    sweep_grid_with(first, second, table, metric, first_deltas, second_deltas, sense, options, None, &mut |_, _, _| {})
}
