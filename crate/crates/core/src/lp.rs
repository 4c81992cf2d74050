//! Bounded-variable primal simplex on a dense tableau.
//!
//! Generic over [`Scalar`], so the same routine runs in `f64` for the solver
//! and in exact rationals for cross-checks. Every variable and every row
//! activity carries finite bounds, which lets any dual vector be turned into
//! a valid lower bound on the optimum (see [`LpSolution::bound`]).


use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    /// Certified: the Phase I bound is strictly positive.
    Infeasible,
    /// Iteration cap hit; the reported bound is still valid.
    IterationLimit,
}

/// `min c.x` subject to `row_lo <= A x <= row_hi`, `lo <= x <= hi`.
#[derive(Debug, Clone)]
pub struct LpProblem<S> {
    pub lower: Vec<S>,
    pub upper: Vec<S>,
    pub cost: Vec<S>,
    pub rows: Vec<Vec<(usize, S)>>,
    pub row_lower: Vec<Option<S>>,
    pub row_upper: Vec<Option<S>>,
}

#[derive(Debug, Clone)]
pub struct LpSolution<S> {
    pub status: LpStatus,
    pub x: Vec<S>,
    pub objective: S,
    /// Valid lower bound on the optimum, from the final dual vector.
    pub bound: S,
    /// Row multipliers used for `bound`.
    pub duals: Vec<S>,
    pub iterations: usize,
}

impl<S: Scalar> Default for LpProblem<S> {
    fn default() -> Self {
        LpProblem {
            lower: Vec::new(),
            upper: Vec::new(),
            cost: Vec::new(),
            rows: Vec::new(),
            row_lower: Vec::new(),
            row_upper: Vec::new(),
        }
    }
}

impl<S: Scalar> LpProblem<S> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.lower.len()
    }

    pub fn add_var(&mut self, lo: S, hi: S, cost: S) -> usize {
        self.lower.push(lo);
        self.upper.push(hi);
        self.cost.push(cost);
        self.lower.len() - 1
    }

    /// Add `lo <= sum a_j x_j <= hi`; a missing side is implied by the
    /// variable bounds.
    pub fn add_row(&mut self, coeffs: Vec<(usize, S)>, lo: Option<S>, hi: Option<S>) -> usize {
        self.rows.push(coeffs);
        self.row_lower.push(lo);
        self.row_upper.push(hi);
        self.rows.len() - 1
    }

    pub fn add_eq(&mut self, coeffs: Vec<(usize, S)>, rhs: S) -> usize {
        self.add_row(coeffs, Some(rhs.clone()), Some(rhs))
    }

    /// Activity range of a row implied by the variable bounds.
    pub fn activity_range(&self, row: usize) -> (S, S) {
        let mut lo = S::zero();
        let mut hi = S::zero();
        for (j, a) in &self.rows[row] {
            let (p, q) = (a.clone() * self.lower[*j].clone(), a.clone() * self.upper[*j].clone());
            if p < q {
                lo = lo + p;
                hi = hi + q;
            } else {
                lo = lo + q;
                hi = hi + p;
            }
        }
        (lo, hi)
    }

    /// Lagrangian bound `sum_j min_{x_j in box} (c_j - A_j^T y) x_j` plus the
    /// row terms; valid for any `y`.
    pub fn dual_bound(&self, y: &[S], row_lo: &[S], row_hi: &[S]) -> S {
        self.dual_bound_with_cost(&self.cost, y, row_lo, row_hi)
    }

    fn dual_bound_with_cost(&self, cost: &[S], y: &[S], row_lo: &[S], row_hi: &[S]) -> S {
        let n = self.num_vars();
        let mut red: Vec<S> = cost.to_vec();
        for (i, row) in self.rows.iter().enumerate() {
            if y[i].is_zero() {
                continue;
            }
            for (j, a) in row {
                red[*j] = red[*j].clone() - a.clone() * y[i].clone();
            }
        }
        let mut total = S::zero();
        let mut mag = S::zero();
        for j in 0..n {
            let t = if red[j] > S::zero() {
                red[j].clone() * self.lower[j].clone()
            } else {
                red[j].clone() * self.upper[j].clone()
            };
            mag = mag + t.abs();
            total = total + t;
        }
        // slack s_i = A_i x in [row_lo, row_hi] enters with coefficient y_i
        for i in 0..self.rows.len() {
            let t = if y[i] > S::zero() { y[i].clone() * row_lo[i].clone() } else { y[i].clone() * row_hi[i].clone() };
            mag = mag + t.abs();
            total = total + t;
        }
        if S::is_exact() {
            total
        } else {
            // absorb rounding in the accumulation
            total - S::tolerance() * S::from_f64_lossy(0.1) * (S::one() + mag)
        }
    }

    pub fn solve(&self) -> LpSolution<S> {
        Simplex::new(self).run(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum At {
    Basic,
    Lower,
    Upper,
}

struct Simplex<S> {
    m: usize,
    /// Structural, then slack, then artificial columns.
    ncols: usize,
    n: usize,
    tab: Vec<S>,
    lo: Vec<S>,
    hi: Vec<S>,
    val: Vec<S>,
    state: Vec<At>,
    basis: Vec<usize>,
    d: Vec<S>,
    row_lo: Vec<S>,
    row_hi: Vec<S>,
    iterations: usize,
    art_start: usize,
    /// Row and sign of each artificial column.
    art_rows: Vec<(usize, S)>,
}

impl<S: Scalar> Simplex<S> {
    fn new(p: &LpProblem<S>) -> Self {
        let n = p.num_vars();
        let m = p.rows.len();
        let mut row_lo = Vec::with_capacity(m);
        let mut row_hi = Vec::with_capacity(m);
        for i in 0..m {
            let (alo, ahi) = p.activity_range(i);
            let l = p.row_lower[i].clone().map(|v| v.max_of(alo.clone())).unwrap_or(alo.clone());
            let h = p.row_upper[i].clone().map(|v| v.min_of(ahi.clone())).unwrap_or(ahi);
            row_lo.push(l);
            row_hi.push(h);
        }
        // structural start: the bound closer to zero
        let mut val: Vec<S> = Vec::with_capacity(n + 2 * m);
        let mut state = Vec::with_capacity(n + 2 * m);
        for j in 0..n {
            if p.upper[j].clone().abs() < p.lower[j].clone().abs() {
                val.push(p.upper[j].clone());
                state.push(At::Upper);
            } else {
                val.push(p.lower[j].clone());
                state.push(At::Lower);
            }
        }
        let mut lo: Vec<S> = p.lower.clone();
        let mut hi: Vec<S> = p.upper.clone();
        let mut activity = vec![S::zero(); m];
        for (i, row) in p.rows.iter().enumerate() {
            for (j, a) in row {
                activity[i] = activity[i].clone() + a.clone() * val[*j].clone();
            }
        }
        for i in 0..m {
            lo.push(row_lo[i].clone());
            hi.push(row_hi[i].clone());
        }
        let art_start = n + m;
        let mut arts = Vec::new(); // (row, sigma, value)
        let mut slack_val = Vec::with_capacity(m);
        for i in 0..m {
            let r = activity[i].clone();
            let s = r.clone().max_of(row_lo[i].clone()).min_of(row_hi[i].clone());
            let e = s.clone() - r;
            slack_val.push(s);
            if e.clone().abs() > S::tolerance() {
                arts.push((i, if e > S::zero() { S::one() } else { -S::one() }, e.abs()));
            }
        }
        let ncols = n + m + arts.len();
        let mut tab = vec![S::zero(); m * ncols];
        // constraint: A x - s + sigma a = 0
        for (i, row) in p.rows.iter().enumerate() {
            for (j, a) in row {
                tab[i * ncols + j] = tab[i * ncols + j].clone() + a.clone();
            }
            tab[i * ncols + n + i] = -S::one();
        }
        let mut basis: Vec<usize> = (0..m).map(|i| n + i).collect();
        for i in 0..m {
            let at = if slack_val[i] == row_lo[i] { At::Lower } else if slack_val[i] == row_hi[i] { At::Upper } else { At::Basic };
            state.push(at);
            val.push(slack_val[i].clone());
        }
        for (k, (i, sigma, e)) in arts.iter().enumerate() {
            let col = art_start + k;
            tab[i * ncols + col] = sigma.clone();
            lo.push(S::zero());
            hi.push(e.clone());
            val.push(e.clone());
            state.push(At::Basic);
            // slack leaves the basis at its clamped bound
            let s = n + i;
            state[s] = if val[s] == row_lo[*i] { At::Lower } else { At::Upper };
            basis[*i] = col;
        }
        for i in 0..m {
            let b = basis[i];
            state[b] = At::Basic;
            // normalize row so the basic column has coefficient one
            let piv = tab[i * ncols + b].clone();
            if !piv.is_one() {
                for c in 0..ncols {
                    let v = tab[i * ncols + c].clone();
                    if !v.is_zero() {
                        tab[i * ncols + c] = v / piv.clone();
                    }
                }
            }
        }
        Simplex {
            m,
            ncols,
            n,
            tab,
            lo,
            hi,
            val,
            state,
            basis,
            d: Vec::new(),
            row_lo,
            row_hi,
            iterations: 0,
            art_start,
            art_rows: arts.iter().map(|(i, sg, _)| (*i, sg.clone())).collect(),
        }
    }

    fn price(&mut self, cost: &[S]) {
        let mut d: Vec<S> = cost.to_vec();
        for i in 0..self.m {
            let cb = cost[self.basis[i]].clone();
            if cb.is_zero() {
                continue;
            }
            for c in 0..self.ncols {
                let t = &self.tab[i * self.ncols + c];
                if !t.is_zero() {
                    d[c] = d[c].clone() - cb.clone() * t.clone();
                }
            }
        }
        self.d = d;
    }

    /// Recompute basic values from the nonbasic ones.
    fn refresh_basics(&mut self) {
        for i in 0..self.m {
            let mut acc = S::zero();
            for c in 0..self.ncols {
                if self.state[c] != At::Basic {
                    let t = &self.tab[i * self.ncols + c];
                    if !t.is_zero() {
                        acc = acc - t.clone() * self.val[c].clone();
                    }
                }
            }
            let b = self.basis[i];
            self.val[b] = acc;
        }
    }

    /// Run simplex iterations on the current reduced costs. Returns false on
    /// the iteration cap.
    fn iterate(&mut self, max_iter: usize) -> bool {
        let tol = S::tolerance();
        let piv_tol = if S::is_exact() { S::zero() } else { S::from_f64_lossy(1e-9) };
        let mut degenerate_run = 0usize;
        loop {
            if self.iterations >= max_iter {
                return false;
            }
            let bland = degenerate_run > 50;
            // entering column
            let mut enter = None;
            let mut best = S::zero();
            for c in 0..self.ncols {
                let dir = match self.state[c] {
                    At::Basic => continue,
                    At::Lower if self.d[c] < -tol.clone() => S::one(),
                    At::Upper if self.d[c] > tol.clone() => -S::one(),
                    _ => continue,
                };
                if self.hi[c] == self.lo[c] {
                    continue;
                }
                let score = self.d[c].clone().abs();
                if bland {
                    enter = Some((c, dir));
                    break;
                }
                if score > best {
                    best = score;
                    enter = Some((c, dir));
                }
            }
            let Some((j, dir)) = enter else { return true };
            self.iterations += 1;

            // ratio test (two passes: relaxed bound, then largest pivot)
            let span = self.hi[j].clone() - self.lo[j].clone();
            let ratio = |s: &Self, i: usize, relax: &S| -> Option<S> {
                let alpha = s.tab[i * s.ncols + j].clone();
                if alpha.clone().abs() <= piv_tol {
                    return None;
                }
                let b = s.basis[i];
                let rate = -(dir.clone() * alpha);
                if rate < S::zero() {
                    let room = s.val[b].clone() - s.lo[b].clone() + relax.clone();
                    Some((room / (-rate)).max_of(S::zero()))
                } else {
                    let room = s.hi[b].clone() - s.val[b].clone() + relax.clone();
                    Some((room / rate).max_of(S::zero()))
                }
            };
            let mut theta_max = span.clone();
            for i in 0..self.m {
                if let Some(r) = ratio(self, i, &tol) {
                    if r < theta_max {
                        theta_max = r;
                    }
                }
            }
            let mut leave: Option<usize> = None;
            let mut best_alpha = S::zero();
            for i in 0..self.m {
                if let Some(r) = ratio(self, i, &S::zero()) {
                    if r <= theta_max {
                        let a = self.tab[i * self.ncols + j].clone().abs();
                        let better = match leave {
                            None => true,
                            Some(l) if bland => self.basis[i] < self.basis[l],
                            Some(_) => a > best_alpha,
                        };
                        if better {
                            best_alpha = a;
                            leave = Some(i);
                        }
                    }
                }
            }
            let theta = match leave {
                Some(r) => ratio(self, r, &S::zero()).expect("pivot row").min_of(span.clone()),
                None => span.clone(),
            };
            if theta.is_zero() {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            // move basics
            for i in 0..self.m {
                let alpha = self.tab[i * self.ncols + j].clone();
                if !alpha.is_zero() {
                    let b = self.basis[i];
                    self.val[b] = self.val[b].clone() - dir.clone() * alpha * theta.clone();
                }
            }
            let newval = self.val[j].clone() + dir.clone() * theta.clone();
            match leave {
                Some(r) if theta < span || self.state[j] == At::Basic => self.pivot(r, j, newval),
                Some(r) if theta == span && ratio(self, r, &S::zero()).is_some_and(|v| v < span) => {
                    self.pivot(r, j, newval)
                }
                _ => {
                    // bound flip
                    self.state[j] = if dir > S::zero() { At::Upper } else { At::Lower };
                    self.val[j] = if dir > S::zero() { self.hi[j].clone() } else { self.lo[j].clone() };
                }
            }
        }
    }

    fn pivot(&mut self, r: usize, j: usize, newval: S) {
        let nc = self.ncols;
        let leaving = self.basis[r];
        let piv = self.tab[r * nc + j].clone();
        for c in 0..nc {
            let v = self.tab[r * nc + c].clone();
            if !v.is_zero() {
                self.tab[r * nc + c] = v / piv.clone();
            }
        }
        let prow: Vec<(usize, S)> =
            (0..nc).filter(|&c| !self.tab[r * nc + c].is_zero()).map(|c| (c, self.tab[r * nc + c].clone())).collect();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.tab[i * nc + j].clone();
            if f.is_zero() {
                continue;
            }
            for (c, v) in &prow {
                let t = self.tab[i * nc + c].clone() - f.clone() * v.clone();
                self.tab[i * nc + c] = t;
            }
            self.tab[i * nc + j] = S::zero();
        }
        let f = self.d[j].clone();
        if !f.is_zero() {
            for (c, v) in &prow {
                self.d[*c] = self.d[*c].clone() - f.clone() * v.clone();
            }
            self.d[j] = S::zero();
        }
        // leaving variable sits at the bound it reached
        let lv = self.val[leaving].clone();
        let to_lower = (lv.clone() - self.lo[leaving].clone()).abs() <= (self.hi[leaving].clone() - lv).abs();
        self.state[leaving] = if to_lower { At::Lower } else { At::Upper };
        self.val[leaving] = if to_lower { self.lo[leaving].clone() } else { self.hi[leaving].clone() };
        self.basis[r] = j;
        self.state[j] = At::Basic;
        self.val[j] = newval;
    }

    fn duals_from_slacks(&self) -> Vec<S> {
        // reduced cost of slack column i (coefficient -e_i) is y_i
        (0..self.m).map(|i| self.d[self.n + i].clone()).collect()
    }

    fn run(mut self, p: &LpProblem<S>) -> LpSolution<S> {
        let max_iter = 50 * (self.m + self.ncols) + 1000;
        let n = self.n;
        let gap_tol = if S::is_exact() { S::zero() } else { S::from_f64_lossy(1e-9) };
        if (0..self.m).any(|i| self.row_lo[i].clone() - self.row_hi[i].clone() > gap_tol) {
            // row bounds cannot meet the activity range implied by the box
            return LpSolution {
                status: LpStatus::Infeasible,
                x: self.val[..n].to_vec(),
                objective: S::zero(),
                bound: S::zero(),
                duals: vec![S::zero(); self.m],
                iterations: 0,
            };
        }
        let has_art = self.ncols > self.art_start;
        if has_art {
            let mut c1 = vec![S::zero(); self.ncols];
            for c in c1.iter_mut().skip(self.art_start) {
                *c = S::one();
            }
            self.price(&c1);
            let finished = self.iterate(max_iter);
            self.refresh_basics();
            let infeas: S = (self.art_start..self.ncols).fold(S::zero(), |a, c| a + self.val[c].clone());
            if infeas > S::tolerance() {
                // certify with the Phase I dual bound
                let y = self.duals_from_slacks();
                let zero = vec![S::zero(); n];
                let mut lb = p.dual_bound_with_cost(&zero, &y, &self.row_lo, &self.row_hi);
                for (k, (i, sigma)) in self.art_rows.iter().enumerate() {
                    let c = self.art_start + k;
                    let r = S::one() - sigma.clone() * y[*i].clone();
                    lb = lb + if r > S::zero() { r * self.lo[c].clone() } else { r * self.hi[c].clone() };
                }
                let certified = if S::is_exact() { lb > S::zero() } else { lb.to_f64() > 1e-9 };
                if certified {
                    return LpSolution {
                        status: LpStatus::Infeasible,
                        x: self.val[..n].to_vec(),
                        objective: S::zero(),
                        bound: S::zero(),
                        duals: y,
                        iterations: self.iterations,
                    };
                }
                if !finished {
                    return self.limit(p);
                }
            }
            for c in self.art_start..self.ncols {
                self.hi[c] = S::zero();
                if self.state[c] != At::Basic {
                    self.state[c] = At::Lower;
                    self.val[c] = S::zero();
                }
            }
        }
        let mut c2 = vec![S::zero(); self.ncols];
        c2[..n].clone_from_slice(&p.cost);
        self.price(&c2);
        let finished = self.iterate(max_iter);
        self.refresh_basics();
        let y = self.duals_from_slacks();
        let bound = p.dual_bound(&y, &self.row_lo, &self.row_hi);
        let x: Vec<S> = self.val[..n].to_vec();
        let objective = x.iter().zip(&p.cost).fold(S::zero(), |a, (v, c)| a + v.clone() * c.clone());
        LpSolution {
            status: if finished { LpStatus::Optimal } else { LpStatus::IterationLimit },
            x,
            objective,
            bound,
            duals: y,
            iterations: self.iterations,
        }
    }

    fn limit(&self, p: &LpProblem<S>) -> LpSolution<S> {
        let y = vec![S::zero(); self.m];
        let bound = p.dual_bound(&y, &self.row_lo, &self.row_hi);
        LpSolution {
            status: LpStatus::IterationLimit,
            x: self.val[..self.n].to_vec(),
            objective: bound.clone(),
            bound,
            duals: y,
            iterations: self.iterations,
        }
    }
}
