//! Block-coordinate local search for feasible points.
//!
//! With every block but one fixed, all program polynomials are affine in the
//! free block, so each step is a small LP. Phase 1 drives the constraint
//! violation to zero; phase 2 improves the objective through a linearized
//! ratio model inside a trust region.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::lp::{LpProblem, LpStatus};
use crate::poly::{PolynomialExpr, EPS_DEN};
use crate::program::SensitivityProgram;
use crate::relax::Pieces;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
struct FPoly {
    terms: Vec<(Vec<usize>, f64)>,
}

impl FPoly {
    fn new(p: &PolynomialExpr) -> Self {
        FPoly { terms: p.terms().map(|(m, c)| (m.iter().map(|&i| i as usize).collect(), f64::from_rational(c))).collect() }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|(m, c)| m.iter().fold(*c, |a, &i| a * x[i])).sum()
    }

    /// Gradient in every coordinate.
    fn grad(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (m, c) in &self.terms {
            for (k, &i) in m.iter().enumerate() {
                let mut prod = *c;
                for (l, &j) in m.iter().enumerate() {
                    if l != k {
                        prod *= x[j];
                    }
                }
                out[i] += prod;
            }
        }
    }

    /// `p(x) = sum_c a_c x_c` over the free block when it sums to one.
    fn affine(&self, x: &[f64], block: &std::ops::Range<usize>, coords: &[usize], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut constant = 0.0;
        for (m, c) in &self.terms {
            let mut prod = *c;
            let mut hit = None;
            for &i in m {
                if block.contains(&i) {
                    hit = Some(i);
                } else {
                    prod *= x[i];
                }
            }
            match hit {
                None => constant += prod,
                Some(i) => {
                    if let Ok(k) = coords.binary_search(&i) {
                        out[k] += prod;
                    }
                }
            }
        }
        out.iter_mut().for_each(|v| *v += constant);
    }
}

/// Local search over a fixed program and piecewise objective.
#[derive(Debug, Clone)]
pub struct LocalSearch {
    /// Per component: `(weight, numerator, denominator)`.
    ratios: Vec<Vec<(f64, FPoly, FPoly)>>,
    equalities: Vec<FPoly>,
    inequalities: Vec<FPoly>,
    /// Free (unpinned) coordinates of each block with more than one.
    blocks: Vec<(std::ops::Range<usize>, Vec<usize>)>,
    all_blocks: Vec<(std::ops::Range<usize>, Vec<usize>)>,
    pieces: Pieces,
    eps: f64,
    dim: usize,
}

impl LocalSearch {
    pub fn new(program: &SensitivityProgram, pieces: &Pieces) -> Self {
        let ratios = program
            .objective
            .components
            .iter()
            .map(|c| {
                c.terms
                    .iter()
                    .map(|(w, r)| (f64::from_rational(w), FPoly::new(&r.numerator), FPoly::new(&r.denominator)))
                    .collect()
            })
            .collect();
        let all_blocks: Vec<_> = program
            .scheme
            .blocks
            .iter()
            .map(|b| (b.range(), b.range().filter(|c| !program.pinned.contains(c)).collect::<Vec<_>>()))
            .collect();
        LocalSearch {
            ratios,
            equalities: program.equalities.iter().map(FPoly::new).collect(),
            inequalities: program.inequalities.iter().map(FPoly::new).collect(),
            blocks: all_blocks.iter().filter(|(_, f)| f.len() > 1).cloned().collect(),
            all_blocks,
            pieces: pieces.clone(),
            eps: program.eps_feas,
            dim: program.scheme.total_dim,
        }
    }

    pub fn violation(&self, x: &[f64]) -> f64 {
        let mut v: f64 = 0.0;
        for g in &self.equalities {
            v = v.max(g.eval(x).abs());
        }
        for h in &self.inequalities {
            v = v.max(-h.eval(x));
        }
        v
    }

    /// Component values, or `None` when a denominator is below the threshold.
    pub fn components(&self, x: &[f64]) -> Option<Vec<f64>> {
        let mut out = Vec::with_capacity(self.ratios.len());
        for comp in &self.ratios {
            let mut acc = 0.0;
            for (w, n, d) in comp {
                let dv = d.eval(x);
                if dv < EPS_DEN {
                    return None;
                }
                acc += w * n.eval(x) / dv;
            }
            out.push(acc);
        }
        Some(out)
    }

    pub fn objective(&self, x: &[f64]) -> Option<f64> {
        self.components(x).map(|c| self.pieces.eval(&c))
    }

    pub fn is_feasible(&self, x: &[f64]) -> bool {
        self.violation(x) <= self.eps && self.components(x).is_some()
    }

    /// Project onto the block simplices (clip and renormalize).
    pub fn normalize(&self, x: &mut [f64]) {
        for (r, free) in &self.all_blocks {
            for c in r.clone() {
                if x[c] < 0.0 || !x[c].is_finite() || free.binary_search(&c).is_err() {
                    x[c] = 0.0;
                }
            }
            let s: f64 = x[r.clone()].iter().sum();
            if s <= 0.0 {
                for &c in free {
                    x[c] = 1.0 / free.len() as f64;
                }
            } else {
                for c in r.clone() {
                    x[c] /= s;
                }
            }
        }
    }

    /// One block LP. `proximal`: weight of the L1 pull towards `anchor`;
    /// `trust`: when set, phase-2 step with that radius.
    fn block_step(&self, x: &[f64], b: usize, anchor: Option<(&[f64], f64)>, trust: Option<f64>) -> Option<Vec<f64>> {
        let (range, coords) = &self.blocks[b];
        let n = coords.len();
        let mut lp = LpProblem::<f64>::new();
        let xv: Vec<usize> = coords
            .iter()
            .map(|&c| match trust {
                Some(r) => lp.add_var((x[c] - r).max(0.0), (x[c] + r).min(1.0), 0.0),
                None => lp.add_var(0.0, 1.0, 0.0),
            })
            .collect();
        lp.add_eq(xv.iter().map(|&v| (v, 1.0)).collect(), 1.0);
        let mut a = vec![0.0; n];
        let row = |a: &[f64]| -> Vec<(usize, f64)> { xv.iter().zip(a).map(|(&v, &c)| (v, c)).collect() };
        let soft = trust.is_none();
        let big = 1e3;
        // below the acceptance level of restore, leaving room for rounding
        let target = 0.25 * self.eps;
        for g in &self.equalities {
            g.affine(x, range, coords, &mut a);
            let mut r = row(&a);
            if soft {
                let sp = lp.add_var(0.0, big, 1.0);
                let sm = lp.add_var(0.0, big, 1.0);
                r.push((sp, -1.0));
                r.push((sm, 1.0));
                lp.add_row(r, Some(-target), Some(target));
            } else {
                let cur = g.eval(x);
                lp.add_row(r, Some((-target).min(cur)), Some(target.max(cur)));
            }
        }
        for h in &self.inequalities {
            h.affine(x, range, coords, &mut a);
            let mut r = row(&a);
            if soft {
                let s = lp.add_var(0.0, big, 1.0);
                r.push((s, 1.0));
                lp.add_row(r, Some(0.0), None);
            } else {
                let cur = h.eval(x);
                lp.add_row(r, Some(0.0f64.min(cur)), None);
            }
        }
        let floor = 4.0 * EPS_DEN;
        for comp in &self.ratios {
            for (_, _, d) in comp {
                d.affine(x, range, coords, &mut a);
                let mut r = row(&a);
                if soft {
                    let s = lp.add_var(0.0, big, 1.0);
                    r.push((s, 1.0));
                }
                lp.add_row(r, Some(floor.min(d.eval(x))), None);
            }
        }
        if let Some((anchor, weight)) = anchor {
            for (k, &c) in coords.iter().enumerate() {
                let p = lp.add_var(0.0, 1.0, weight);
                let q = lp.add_var(0.0, 1.0, weight);
                lp.add_eq(vec![(xv[k], 1.0), (p, -1.0), (q, 1.0)], anchor[c]);
            }
        }
        if trust.is_some() {
            // tau >= sign * linearized component
            let tau = lp.add_var(-1e3, 1e3, 1.0);
            let mut an = vec![0.0; n];
            let mut ad = vec![0.0; n];
            let mut lin: Vec<(f64, Vec<f64>)> = Vec::new();
            for comp in &self.ratios {
                let mut c0 = 0.0;
                let mut grad = vec![0.0; n];
                for (w, num, den) in comp {
                    num.affine(x, range, coords, &mut an);
                    den.affine(x, range, coords, &mut ad);
                    let (nv, dv) = (num.eval(x), den.eval(x));
                    c0 += w * nv / dv;
                    for k in 0..n {
                        grad[k] += w * (an[k] * dv - nv * ad[k]) / (dv * dv);
                    }
                }
                lin.push((c0, grad));
            }
            for &(sign, c) in &self.pieces.0 {
                let (c0, grad) = &lin[c];
                // tau - sign * grad.(x - x0) >= sign * c0
                let mut r = vec![(tau, 1.0)];
                let mut shift = 0.0;
                for (k, &coord) in coords.iter().enumerate() {
                    r.push((xv[k], -sign * grad[k]));
                    shift += grad[k] * x[coord];
                }
                lp.add_row(r, Some(sign * (c0 - shift)), None);
            }
        }
        let sol = lp.solve();
        if sol.status != LpStatus::Optimal {
            return None;
        }
        let mut y = x.to_vec();
        for c in range.clone() {
            y[c] = 0.0;
        }
        for (k, &c) in coords.iter().enumerate() {
            y[c] = sol.x[xv[k]].max(0.0);
        }
        let s: f64 = y[range.clone()].iter().sum();
        for c in range.clone() {
            y[c] /= s;
        }
        Some(y)
    }

    /// Sum of constraint excesses beyond the step targets.
    fn merit(&self, x: &[f64]) -> f64 {
        let target = 0.25 * self.eps;
        let floor = 4.0 * EPS_DEN;
        let mut m = 0.0;
        for g in &self.equalities {
            m += (g.eval(x).abs() - target).max(0.0);
        }
        for h in &self.inequalities {
            m += (-h.eval(x)).max(0.0);
        }
        for comp in &self.ratios {
            for (_, _, d) in comp {
                m += (floor - d.eval(x)).max(0.0);
            }
        }
        m
    }

    /// Linearize every constraint in all coordinates at once and take the
    /// L1-optimal step inside a box of the given radius. Returns the new point
    /// only when the merit decreases.
    fn joint_step(&self, x: &[f64], radius: f64) -> Option<Vec<f64>> {
        let mut lp = LpProblem::<f64>::new();
        let mut var_of = vec![usize::MAX; self.dim];
        for (_, free) in &self.blocks {
            let vars: Vec<usize> = free
                .iter()
                .map(|&c| {
                    let v = lp.add_var((x[c] - radius).max(0.0), (x[c] + radius).min(1.0), 0.0);
                    var_of[c] = v;
                    v
                })
                .collect();
            lp.add_eq(vars.iter().map(|&v| (v, 1.0)).collect(), 1.0);
        }
        let mut grad = vec![0.0; self.dim];
        let target = 0.25 * self.eps;
        let floor = 4.0 * EPS_DEN;
        // row: p(x) + grad.(y - x), returned as (coefficients, constant)
        let mut linear = |p: &FPoly| {
            p.grad(x, &mut grad);
            let mut r = Vec::new();
            let mut constant = p.eval(x);
            for (c, &v) in var_of.iter().enumerate() {
                if v != usize::MAX && grad[c] != 0.0 {
                    r.push((v, grad[c]));
                    constant -= grad[c] * x[c];
                }
            }
            (r, constant)
        };
        for g in &self.equalities {
            let (mut r, k) = linear(g);
            let sp = lp.add_var(0.0, 1e3, 1.0);
            let sm = lp.add_var(0.0, 1e3, 1.0);
            r.push((sp, -1.0));
            r.push((sm, 1.0));
            lp.add_row(r, Some(-target - k), Some(target - k));
        }
        for h in &self.inequalities {
            let (mut r, k) = linear(h);
            let s = lp.add_var(0.0, 1e3, 1.0);
            r.push((s, 1.0));
            lp.add_row(r, Some(-k), None);
        }
        for comp in &self.ratios {
            for (_, _, d) in comp {
                let (mut r, k) = linear(d);
                let s = lp.add_var(0.0, 1e3, 1.0);
                r.push((s, 1.0));
                lp.add_row(r, Some(floor - k), None);
            }
        }
        let sol = lp.solve();
        if sol.status != LpStatus::Optimal {
            return None;
        }
        let mut y = x.to_vec();
        for (c, &v) in var_of.iter().enumerate() {
            if v != usize::MAX {
                y[c] = sol.x[v].max(0.0);
            }
        }
        self.normalize(&mut y);
        (self.merit(&y) < self.merit(x)).then_some(y)
    }

    /// Drive the violation below half the tolerance. `anchor` keeps the
    /// result near a reference point.
    pub fn restore(&self, start: &[f64], anchor: Option<(&[f64], f64)>, sweeps: usize) -> Option<Vec<f64>> {
        let mut x = start.to_vec();
        self.normalize(&mut x);
        if self.violation(&x) <= 0.5 * self.eps && self.components(&x).is_some() {
            return Some(x);
        }
        let mut radius = 0.25;
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for _ in 0..sweeps {
            for b in 0..self.blocks.len() {
                if let Some(y) = self.block_step(&x, b, anchor, None) {
                    x = y;
                }
            }
            for _ in 0..3 {
                if self.violation(&x) <= 0.5 * self.eps || radius < 1e-9 {
                    break;
                }
                match self.joint_step(&x, radius) {
                    Some(y) => {
                        x = y;
                        radius = (2.0 * radius).min(1.0);
                    }
                    None => radius *= 0.25,
                }
            }
            if radius < 1e-9 {
                // stationary but infeasible: step off the saddle
                for v in x.iter_mut() {
                    *v = 0.7 * *v + 0.3 * rng.random::<f64>();
                }
                self.normalize(&mut x);
                radius = 0.25;
            }
            if self.violation(&x) <= 0.5 * self.eps && self.components(&x).is_some() {
                return Some(x);
            }
        }
        None
    }

    /// Improve a feasible point; returns the best point and its objective.
    pub fn improve(&self, start: &[f64], sweeps: usize) -> Option<(Vec<f64>, f64)> {
        let mut x = start.to_vec();
        let mut fx = self.objective(&x)?;
        if !self.is_feasible(&x) {
            return None;
        }
        for _ in 0..sweeps {
            let before = fx;
            for b in 0..self.blocks.len() {
                let mut radius = 1.0;
                for _ in 0..12 {
                    let Some(y) = self.block_step(&x, b, None, Some(radius)) else { break };
                    match self.objective(&y) {
                        Some(fy) if fy < fx - 1e-13 && self.is_feasible(&y) => {
                            x = y;
                            fx = fy;
                        }
                        _ => radius *= 0.25,
                    }
                    if radius < 1e-7 {
                        break;
                    }
                }
            }
            if before - fx < 1e-10 {
                break;
            }
        }
        Some((x, fx))
    }

    /// Restore then improve.
    pub fn run(&self, start: &[f64]) -> Option<(Vec<f64>, f64)> {
        let x = self.restore(start, None, 40)?;
        self.improve(&x, 40)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}
