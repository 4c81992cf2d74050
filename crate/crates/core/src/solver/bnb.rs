//! Spatial branch-and-bound over the relaxation.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::atomic::{AtomicBool, Ordering as AtomicOrdering};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::local::LocalSearch;
use super::{SolveStatus, SolverOptions};
use crate::error::Result;
use crate::lp::LpStatus;
use crate::program::SensitivityProgram;
use crate::relax::{Pieces, Relaxation};

/// Nodes processed per batch; fixed so results do not depend on threads.
const BATCH: usize = 8;

#[derive(Debug, Clone)]
pub struct Minimum {
    /// Certified lower bound on the minimum (`+inf` when infeasible).
    pub lower: f64,
    /// Best feasible point and its value.
    pub incumbent: Option<(Vec<f64>, f64)>,
    pub nodes: usize,
    pub status: SolveStatus,
}

#[derive(Debug, Clone)]
struct Node {
    lo: Vec<f64>,
    hi: Vec<f64>,
    bound: f64,
    seq: u64,
    depth: u32,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // max-heap: smallest bound first, then oldest
    fn cmp(&self, other: &Self) -> Ordering {
        other.bound.total_cmp(&self.bound).then_with(|| other.seq.cmp(&self.seq))
    }
}

enum Outcome {
    Pruned,
    /// Relaxation is exact at this node (or nothing left to split).
    Closed { bound: f64, candidates: Vec<Vec<f64>> },
    Split { bound: f64, var: usize, at: f64, lo: Vec<f64>, hi: Vec<f64>, candidates: Vec<Vec<f64>> },
}

struct Context<'a> {
    rel: Relaxation,
    local: LocalSearch,
    program: &'a SensitivityProgram,
    options: &'a SolverOptions,
}

impl Context<'_> {
    fn process(&self, node: &Node) -> Outcome {
        let mut lo = node.lo.clone();
        let mut hi = node.hi.clone();
        if !self.rel.tighten(&mut lo, &mut hi, self.options.relaxation_rounds) {
            return Outcome::Pruned;
        }
        let sol = self.rel.solve_lp(&lo, &hi);
        let bound = match sol.status {
            LpStatus::Infeasible => return Outcome::Pruned,
            LpStatus::Optimal | LpStatus::IterationLimit => sol.bound.max(node.bound),
        };
        let mut candidates = Vec::new();
        if sol.status != LpStatus::Optimal {
            // no usable point: split the widest branch variable
            let var = self.widest(&lo, &hi);
            return match var {
                Some(v) => Outcome::Split { bound, var: v, at: 0.5 * (lo[v] + hi[v]), lo, hi, candidates },
                None => Outcome::Closed { bound, candidates },
            };
        }
        let x = self.rel.conditional_point(&sol.x);
        candidates.push(x.clone());
        if node.depth <= 2 || node.seq % 16 == 0 {
            if let Some((y, _)) = self.local.run(&x) {
                candidates.push(y);
            }
        }
        let viol = self.rel.violations(&sol.x);
        let mut score = vec![0.0f64; self.rel.num_vars()];
        let mut worst: f64 = 0.0;
        for (k, v) in viol.iter().enumerate() {
            worst = worst.max(*v);
            for &b in &self.rel.product_base[k] {
                score[b] += v * (hi[b] - lo[b]);
            }
        }
        if worst < 1e-9 {
            return Outcome::Closed { bound, candidates };
        }
        let mut best = None;
        let mut best_score = 0.0;
        for &b in &self.rel.branch_vars {
            if hi[b] - lo[b] > 1e-7 && score[b] > best_score {
                best_score = score[b];
                best = Some(b);
            }
        }
        let Some(var) = best.or_else(|| self.widest(&lo, &hi)) else {
            return Outcome::Closed { bound, candidates };
        };
        let (l, h) = (lo[var], hi[var]);
        let v = sol.x[var];
        let at = if v > l + 0.1 * (h - l) && v < h - 0.1 * (h - l) { v } else { 0.5 * (l + h) };
        Outcome::Split { bound, var, at, lo, hi, candidates }
    }

    fn widest(&self, lo: &[f64], hi: &[f64]) -> Option<usize> {
        let mut best = None;
        let mut w = 1e-7;
        for &b in &self.rel.branch_vars {
            if hi[b] - lo[b] > w {
                w = hi[b] - lo[b];
                best = Some(b);
            }
        }
        best
    }

    fn evaluate(&self, x: &[f64]) -> Option<f64> {
        if self.program.is_feasible(x, self.program.eps_feas) {
            self.local.objective(x)
        } else {
            None
        }
    }

    /// Optimization-based bound tightening at the root.
    fn obbt(&self, lo: &mut [f64], hi: &mut [f64]) -> bool {
        for &v in &self.rel.branch_vars {
            for sign in [1.0, -1.0] {
                let mut lp = self.rel.lp(lo, hi);
                lp.cost.iter_mut().for_each(|c| *c = 0.0);
                lp.cost[v] = sign;
                let sol = lp.solve();
                match sol.status {
                    LpStatus::Infeasible => return false,
                    LpStatus::Optimal => {
                        if sign > 0.0 {
                            lo[v] = lo[v].max(sol.bound - 1e-12);
                        } else {
                            hi[v] = hi[v].min(-sol.bound + 1e-12);
                        }
                    }
                    LpStatus::IterationLimit => {}
                }
                if lo[v] > hi[v] + 1e-9 {
                    return false;
                }
                if lo[v] > hi[v] {
                    let m = 0.5 * (lo[v] + hi[v]);
                    lo[v] = m;
                    hi[v] = m;
                }
            }
        }
        self.rel.tighten(lo, hi, self.options.relaxation_rounds)
    }
}

/// Minimize `pieces` over the program. `starts` seed the incumbent search.
pub fn minimize(
    program: &SensitivityProgram,
    pieces: &Pieces,
    options: &SolverOptions,
    starts: &[Vec<f64>],
    cancel: Option<&AtomicBool>,
) -> Result<Minimum> {
    let started = Instant::now();
    let ctx = Context {
        rel: Relaxation::build(program, pieces)?,
        local: LocalSearch::new(program, pieces),
        program,
        options,
    };
    let infeasible = Minimum { lower: f64::INFINITY, incumbent: None, nodes: 1, status: SolveStatus::Infeasible };
    let mut lo = ctx.rel.lower.clone();
    let mut hi = ctx.rel.upper.clone();
    if !ctx.rel.tighten(&mut lo, &mut hi, options.relaxation_rounds) {
        return Ok(infeasible);
    }
    if options.obbt && !ctx.obbt(&mut lo, &mut hi) {
        return Ok(infeasible);
    }

    let mut incumbent: Option<(Vec<f64>, f64)> = None;
    let offer = |inc: &mut Option<(Vec<f64>, f64)>, x: Vec<f64>, f: f64| {
        if inc.as_ref().is_none_or(|(_, g)| f < *g) {
            *inc = Some((x, f));
        }
    };
    // incumbent search from warm starts, the root point and random points
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut seeds: Vec<Vec<f64>> = starts.to_vec();
    let root = ctx.rel.solve_lp(&lo, &hi);
    if root.status == LpStatus::Infeasible {
        return Ok(infeasible);
    }
    if root.status == LpStatus::Optimal {
        seeds.push(ctx.rel.conditional_point(&root.x));
        seeds.push(ctx.rel.point(&root.x));
    }
    for _ in 0..options.restarts {
        seeds.push((0..program.scheme.total_dim).map(|_| rng.random::<f64>()).collect());
    }
    let found: Vec<Option<(Vec<f64>, f64)>> = seeds.par_iter().map(|s| ctx.local.run(s)).collect();
    for (x, f) in found.into_iter().flatten() {
        if ctx.evaluate(&x).is_some() {
            offer(&mut incumbent, x, f);
        }
    }

    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    let root_bound = if root.status == LpStatus::Optimal { root.bound } else { f64::NEG_INFINITY };
    heap.push(Node { lo, hi, bound: root_bound, seq, depth: 0 });
    seq += 1;
    // bounds of nodes dropped without being dominated by the incumbent
    let mut floor = f64::INFINITY;
    let mut nodes = 0usize;
    let mut status = SolveStatus::Optimal;
    loop {
        let open = heap.peek().map_or(f64::INFINITY, |n| n.bound);
        let lower = open.min(floor);
        if let Some((_, f)) = &incumbent {
            if f - lower.min(*f) <= options.gap_tol {
                break;
            }
        }
        if heap.is_empty() {
            break;
        }
        if nodes >= options.max_nodes
            || options.time_limit.is_some_and(|t| started.elapsed().as_secs_f64() > t)
            || cancel.is_some_and(|c| c.load(AtomicOrdering::Relaxed))
        {
            status = SolveStatus::BudgetExhausted;
            break;
        }
        let mut batch = Vec::with_capacity(BATCH);
        while batch.len() < BATCH {
            match heap.pop() {
                Some(n) => batch.push(n),
                None => break,
            }
        }
        nodes += batch.len();
        let outcomes: Vec<Outcome> = batch.par_iter().map(|n| ctx.process(n)).collect();
        for (node, out) in batch.into_iter().zip(outcomes) {
            match out {
                Outcome::Pruned => {}
                Outcome::Closed { bound, candidates } => {
                    for x in candidates {
                        if let Some(f) = ctx.evaluate(&x) {
                            offer(&mut incumbent, x, f);
                        }
                    }
                    floor = floor.min(bound);
                }
                Outcome::Split { bound, var, at, lo, hi, candidates } => {
                    for x in candidates {
                        if let Some(f) = ctx.evaluate(&x) {
                            offer(&mut incumbent, x, f);
                        }
                    }
                    if incumbent.as_ref().is_some_and(|(_, f)| bound >= *f) {
                        continue;
                    }
                    let mut left_hi = hi.clone();
                    left_hi[var] = at;
                    let mut right_lo = lo.clone();
                    right_lo[var] = at;
                    heap.push(Node { lo: lo.clone(), hi: left_hi, bound, seq, depth: node.depth + 1 });
                    heap.push(Node { lo: right_lo, hi, bound, seq: seq + 1, depth: node.depth + 1 });
                    seq += 2;
                }
            }
        }
        // drop nodes the incumbent dominates
        if let Some((_, f)) = &incumbent {
            let f = *f;
            if heap.iter().any(|n| n.bound >= f) {
                heap = heap.into_iter().filter(|n| n.bound < f).collect();
            }
        }
    }
    let open = heap.peek().map_or(f64::INFINITY, |n| n.bound);
    let mut lower = open.min(floor);
    if let Some((_, f)) = &incumbent {
        lower = lower.min(*f);
    }
    if lower == f64::INFINITY && incumbent.is_none() && status == SolveStatus::Optimal {
        status = SolveStatus::Infeasible;
    }
    Ok(Minimum { lower, incumbent, nodes: nodes.max(1), status })
}
