//! Linear relaxation of a sensitivity program.
//!
//! Blocks are visited in topological order. Coordinates of a block whose
//! contribution to every polynomial is identical given the earlier choices
//! are merged into one atom, so each polynomial becomes a linear function of
//! products `P(atom_1, ..., atom_L)`. Those products form a tree; each edge is
//! a bilinear term `w = parent * form` handled with McCormick rows over the
//! current box, and every internal node carries `sum children = parent`.
//! Ratios `N/D` get a variable `t` with `N = t * d`, `d = D`.

use std::collections::HashMap;

use num_rational::BigRational;
use num_traits::Zero;

use crate::error::{Error, Result};
use crate::lp::{LpProblem, LpSolution, LpStatus};
use crate::poly::{PolynomialExpr, EPS_DEN};
use crate::program::SensitivityProgram;
use crate::scalar::Scalar;

/// Largest number of joint coordinate assignments the builder enumerates.
pub const MAX_ASSIGNMENTS: usize = 1 << 21;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    /// Aggregated coordinates of one block.
    Group,
    /// Atom mass: a sum of groups.
    Form,
    /// Probability of a path in the atom tree.
    Node,
    Ratio,
    Denominator,
    /// `t * d`.
    Scaled,
    Epigraph,
}

#[derive(Debug, Clone)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub lo: f64,
    pub hi: f64,
}

/// `w = u * v`.
#[derive(Debug, Clone, Copy)]
pub struct Product {
    pub w: usize,
    pub u: usize,
    pub v: usize,
}

/// Piecewise objective `max_p sign_p * component_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pieces(pub Vec<(f64, usize)>);

impl Pieces {
    pub fn minimize(component: usize) -> Self {
        Pieces(vec![(1.0, component)])
    }
    pub fn maximize(component: usize) -> Self {
        Pieces(vec![(-1.0, component)])
    }
    /// `max_i |component_i|` over all components.
    pub fn max_abs(n: usize) -> Self {
        Pieces((0..n).flat_map(|c| [(1.0, c), (-1.0, c)]).collect())
    }

    /// Value given component values.
    pub fn eval(&self, comps: &[f64]) -> f64 {
        self.0.iter().map(|(s, c)| s * comps[*c]).fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct Relaxation {
    pub kinds: Vec<VarKind>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub rows: Vec<Row>,
    pub products: Vec<Product>,
    /// Variables the branch-and-bound may split.
    pub branch_vars: Vec<usize>,
    /// Branch variables behind each product (transitively through parents).
    pub product_base: Vec<Vec<usize>>,
    /// Coordinates in each group, and the variable holding the group mass.
    pub groups: Vec<Vec<usize>>,
    pub group_vars: Vec<usize>,
    /// Per metric component: `(weight, t variable)`.
    pub components: Vec<Vec<(f64, usize)>>,
    pub tau: usize,
    pub total_dim: usize,
    /// Coordinate ranges of blocks for renormalizing recovered points.
    pub block_ranges: Vec<std::ops::Range<usize>>,
    pub pinned: Vec<usize>,
    /// Blocks in tree order with their groups and forms.
    pub levels: Vec<Level>,
}

#[derive(Debug, Clone)]
pub struct Level {
    /// Indices into `groups`.
    pub groups: Vec<usize>,
    pub forms: Vec<LevelForm>,
}

#[derive(Debug, Clone)]
pub struct LevelForm {
    /// Indices into `groups` summing to this form.
    pub groups: Vec<usize>,
    /// `(parent, child)` node variables; the parent is absent on the first level.
    pub links: Vec<(Option<usize>, usize)>,
}

struct Builder {
    kinds: Vec<VarKind>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    rows: Vec<Row>,
    products: Vec<Product>,
    product_base: Vec<Vec<usize>>,
    branch_vars: Vec<usize>,
}

impl Builder {
    fn var(&mut self, kind: VarKind, lo: f64, hi: f64) -> usize {
        self.kinds.push(kind);
        self.lower.push(lo);
        self.upper.push(hi);
        self.kinds.len() - 1
    }
    fn row(&mut self, coeffs: Vec<(usize, f64)>, lo: f64, hi: f64) {
        let coeffs: Vec<(usize, f64)> = coeffs.into_iter().filter(|(_, a)| *a != 0.0).collect();
        self.rows.push(Row { coeffs, lo, hi });
    }
    fn base_of(&self, var: usize) -> Vec<usize> {
        match self.products.iter().position(|p| p.w == var) {
            Some(k) => self.product_base[k].clone(),
            None if self.branch_vars.contains(&var) => vec![var],
            None => Vec::new(),
        }
    }
    fn product(&mut self, w: usize, u: usize, v: usize) {
        let mut base = self.base_of(u);
        base.extend(self.base_of(v));
        base.sort_unstable();
        base.dedup();
        self.products.push(Product { w, u, v });
        self.product_base.push(base);
    }
}

/// Joint coefficient table over ordered blocks.
struct Table {
    /// Free (unpinned) coordinates of each level.
    free: Vec<Vec<usize>>,
    stride: Vec<usize>,
    npoly: usize,
    values: Vec<BigRational>,
}

impl Table {
    fn new(program: &SensitivityProgram, order: &[usize], polys: &[&PolynomialExpr]) -> Result<Self> {
        let scheme = &program.scheme;
        let free: Vec<Vec<usize>> = order
            .iter()
            .map(|&b| scheme.blocks[b].range().filter(|c| !program.pinned.contains(c)).collect())
            .collect();
        let mut total: usize = 1;
        for f in &free {
            total = total.checked_mul(f.len()).filter(|&t| t <= MAX_ASSIGNMENTS).ok_or_else(|| {
                Error::Config(format!("program too large to relax (more than {MAX_ASSIGNMENTS} joint assignments)"))
            })?;
        }
        let mut stride = vec![1usize; free.len()];
        for l in (0..free.len().saturating_sub(1)).rev() {
            stride[l] = stride[l + 1] * free[l + 1].len();
        }
        let mut level_of = vec![None; scheme.total_dim];
        for (l, f) in free.iter().enumerate() {
            for (i, &c) in f.iter().enumerate() {
                level_of[c] = Some((l, i));
            }
        }
        let npoly = polys.len();
        let mut values = vec![BigRational::zero(); total * npoly];
        for (pi, poly) in polys.iter().enumerate() {
            for (mono, coef) in poly.terms() {
                let mut fixed = vec![None; free.len()];
                let mut dead = false;
                for &c in mono {
                    match level_of[c as usize] {
                        Some((l, i)) => fixed[l] = Some(i),
                        None => dead = true,
                    }
                }
                if dead {
                    continue;
                }
                // odometer over the levels the monomial leaves free
                let open: Vec<usize> = (0..free.len()).filter(|&l| fixed[l].is_none()).collect();
                let base: usize = fixed.iter().enumerate().filter_map(|(l, i)| i.map(|i| i * stride[l])).sum();
                let mut counter = vec![0usize; open.len()];
                loop {
                    let idx = base + open.iter().zip(&counter).map(|(&l, &k)| k * stride[l]).sum::<usize>();
                    let slot = &mut values[idx * npoly + pi];
                    *slot += coef;
                    let mut k = 0;
                    while k < open.len() {
                        counter[k] += 1;
                        if counter[k] < free[open[k]].len() {
                            break;
                        }
                        counter[k] = 0;
                        k += 1;
                    }
                    if k == open.len() {
                        break;
                    }
                }
            }
        }
        Ok(Table { free, stride, npoly, values })
    }

    fn slice(&self, level: usize, base: usize, idx: usize) -> &[BigRational] {
        let start = (base + idx * self.stride[level]) * self.npoly;
        &self.values[start..start + self.stride[level] * self.npoly]
    }
}

impl Relaxation {
    /// Build the relaxation of `program` for the objective `pieces`.
    pub fn build(program: &SensitivityProgram, pieces: &Pieces) -> Result<Self> {
        let scheme = &program.scheme;
        for p in program.equalities.iter().chain(&program.inequalities) {
            if !p.respects_blocks(scheme) {
                return Err(Error::UnsupportedConstraint("constraint multiplies coordinates of one block".into()));
            }
        }
        // polynomial list: ratios (num, den), equalities, inequalities
        let mut polys: Vec<&PolynomialExpr> = Vec::new();
        let mut ratio_index = Vec::new();
        for comp in &program.objective.components {
            let mut idx = Vec::new();
            for (w, r) in &comp.terms {
                idx.push((f64::from_rational(w), polys.len()));
                polys.push(&r.numerator);
                polys.push(&r.denominator);
            }
            ratio_index.push(idx);
        }
        let eq_start = polys.len();
        polys.extend(program.equalities.iter());
        let ineq_start = polys.len();
        polys.extend(program.inequalities.iter());

        // blocks in order of their earliest node
        let mut order: Vec<usize> = (0..scheme.blocks.len()).collect();
        let rank = |b: usize| scheme.topo.iter().position(|n| scheme.block_of[*n] == b).unwrap_or(usize::MAX);
        order.sort_by_key(|&b| (rank(b), b));
        let table = Table::new(program, &order, &polys)?;

        let mut bld = Builder {
            kinds: Vec::new(),
            lower: Vec::new(),
            upper: Vec::new(),
            rows: Vec::new(),
            products: Vec::new(),
            product_base: Vec::new(),
            branch_vars: Vec::new(),
        };
        let mut forms: Vec<Vec<FormInfo>> = (0..order.len()).map(|_| Vec::new()).collect();
        let mut form_index: HashMap<(usize, Vec<usize>), usize> = HashMap::new();
        let mut leaves: Vec<(usize, Vec<f64>)> = Vec::new();
        let mut tree = Tree { table: &table, forms: &mut forms, index: &mut form_index, leaves: &mut leaves };
        tree.expand(&mut bld, 0, 0, None);

        // a form shared by several parents: sum of children = form * sum of parents
        for level_forms in &forms {
            for f in level_forms {
                if f.links.len() < 2 || f.links[0].0.is_none() {
                    continue;
                }
                let m = bld.var(VarKind::Node, 0.0, 1.0);
                let big_w = bld.var(VarKind::Node, 0.0, 1.0);
                let mut rm = vec![(m, -1.0)];
                let mut rw = vec![(big_w, -1.0)];
                for &(p, c) in &f.links {
                    rm.push((p.expect("parent"), 1.0));
                    rw.push((c, 1.0));
                }
                bld.row(rm, 0.0, 0.0);
                bld.row(rw, 0.0, 0.0);
                let mut base: Vec<usize> = Vec::new();
                for &(p, _) in &f.links {
                    base.extend(bld.base_of(p.expect("parent")));
                }
                bld.product(big_w, m, f.var);
                let k = bld.product_base.len() - 1;
                bld.product_base[k].extend(base);
                bld.product_base[k].sort_unstable();
                bld.product_base[k].dedup();
            }
        }

        // coordinate groups by form membership
        let mut groups = Vec::new();
        let mut group_vars = Vec::new();
        let mut levels = Vec::new();
        for (l, level_forms) in forms.iter().enumerate() {
            let n = table.free[l].len();
            let mut sig: Vec<Vec<usize>> = vec![Vec::new(); n];
            for (fi, f) in level_forms.iter().enumerate() {
                for &i in &f.members {
                    sig[i].push(fi);
                }
            }
            let mut by_sig: HashMap<Vec<usize>, usize> = HashMap::new();
            let mut level_groups: Vec<(usize, Vec<usize>)> = Vec::new();
            for i in 0..n {
                let g = *by_sig.entry(sig[i].clone()).or_insert_with(|| {
                    let v = bld.var(VarKind::Group, 0.0, 1.0);
                    level_groups.push((v, Vec::new()));
                    level_groups.len() - 1
                });
                level_groups[g].1.push(i);
            }
            let mut form_rows: Vec<Vec<(usize, f64)>> = level_forms.iter().map(|f| vec![(f.var, 1.0)]).collect();
            let mut form_groups: Vec<Vec<usize>> = vec![Vec::new(); level_forms.len()];
            let mut simplex = Vec::new();
            let first_group = groups.len();
            for (gi, (v, members)) in level_groups.iter().enumerate() {
                simplex.push((*v, 1.0));
                for &fi in &sig[members[0]] {
                    form_rows[fi].push((*v, -1.0));
                    form_groups[fi].push(first_group + gi);
                }
                groups.push(members.iter().map(|&i| table.free[l][i]).collect::<Vec<_>>());
                group_vars.push(*v);
            }
            bld.row(simplex, 1.0, 1.0);
            for r in form_rows {
                bld.row(r, 0.0, 0.0);
            }
            levels.push(Level {
                groups: (first_group..groups.len()).collect(),
                forms: level_forms
                    .iter()
                    .zip(form_groups)
                    .map(|(f, g)| LevelForm { groups: g, links: f.links.clone() })
                    .collect(),
            });
        }

        let poly_row = |pi: usize| -> Vec<(usize, f64)> {
            leaves.iter().map(|(w, coef)| (*w, coef[pi])).filter(|(_, a)| *a != 0.0).collect()
        };
        let eps = program.eps_feas;
        for pi in eq_start..ineq_start {
            let r = poly_row(pi);
            bld.row(r, -eps, eps);
        }
        for pi in ineq_start..polys.len() {
            let r = poly_row(pi);
            bld.row(r, 0.0, f64::INFINITY);
        }
        let mut components = Vec::new();
        for idx in &ratio_index {
            let mut comp = Vec::new();
            for &(weight, pi) in idx {
                let t = bld.var(VarKind::Ratio, 0.0, 1.0);
                let d = bld.var(VarKind::Denominator, EPS_DEN, 1.0);
                let z = bld.var(VarKind::Scaled, 0.0, 1.0);
                bld.branch_vars.push(t);
                bld.branch_vars.push(d);
                let mut num = poly_row(pi);
                num.push((z, -1.0));
                bld.row(num, 0.0, 0.0);
                let mut den = poly_row(pi + 1);
                den.push((d, -1.0));
                bld.row(den, 0.0, 0.0);
                // N <= D holds for conditional probabilities
                bld.row(vec![(z, 1.0), (d, -1.0)], f64::NEG_INFINITY, 0.0);
                bld.product(z, t, d);
                comp.push((weight, t));
            }
            components.push(comp);
        }
        let span: f64 = components.iter().map(|c| c.iter().map(|(w, _)| w.abs()).sum::<f64>()).fold(0.0, f64::max);
        let tau = bld.var(VarKind::Epigraph, -span, span);
        for &(sign, c) in &pieces.0 {
            let mut r = vec![(tau, 1.0)];
            for &(w, t) in &components[c] {
                r.push((t, -sign * w));
            }
            bld.row(r, 0.0, f64::INFINITY);
        }
        let mut lower = bld.lower;
        let mut upper = bld.upper;
        for r in &bld.rows {
            // rows with a single variable are bounds
            if r.coeffs.len() == 1 {
                let (j, a) = r.coeffs[0];
                let (lo, hi) = if a > 0.0 { (r.lo / a, r.hi / a) } else { (r.hi / a, r.lo / a) };
                lower[j] = lower[j].max(lo);
                upper[j] = upper[j].min(hi);
            }
        }
        Ok(Relaxation {
            kinds: bld.kinds,
            lower,
            upper,
            rows: bld.rows,
            products: bld.products,
            branch_vars: bld.branch_vars,
            product_base: bld.product_base,
            groups,
            group_vars,
            components,
            tau,
            total_dim: scheme.total_dim,
            block_ranges: scheme.blocks.iter().map(|b| b.range()).collect(),
            pinned: program.pinned.clone(),
            levels,
        })
    }

    pub fn num_vars(&self) -> usize {
        self.kinds.len()
    }

    /// Linear program over a box, with McCormick rows for every product.
    pub fn lp(&self, lo: &[f64], hi: &[f64]) -> LpProblem<f64> {
        let mut p = LpProblem::new();
        for j in 0..self.num_vars() {
            p.add_var(lo[j], hi[j], if j == self.tau { 1.0 } else { 0.0 });
        }
        for r in &self.rows {
            let l = if r.lo.is_finite() { Some(r.lo) } else { None };
            let h = if r.hi.is_finite() { Some(r.hi) } else { None };
            p.add_row(r.coeffs.clone(), l, h);
        }
        for pr in &self.products {
            let (lu, uu, lv, uv) = (lo[pr.u], hi[pr.u], lo[pr.v], hi[pr.v]);
            // w >= lv u + lu v - lu lv ; w >= uv u + uu v - uu uv
            p.add_row(vec![(pr.w, 1.0), (pr.u, -lv), (pr.v, -lu)], Some(-lu * lv), None);
            p.add_row(vec![(pr.w, 1.0), (pr.u, -uv), (pr.v, -uu)], Some(-uu * uv), None);
            // w <= lv u + uu v - uu lv ; w <= uv u + lu v - lu uv
            p.add_row(vec![(pr.w, 1.0), (pr.u, -lv), (pr.v, -uu)], None, Some(-uu * lv));
            p.add_row(vec![(pr.w, 1.0), (pr.u, -uv), (pr.v, -lu)], None, Some(-lu * uv));
        }
        p
    }

    pub fn solve_lp(&self, lo: &[f64], hi: &[f64]) -> LpSolution<f64> {
        self.lp(lo, hi).solve()
    }

    /// Feasibility-based bound tightening. Returns false if the box is empty.
    pub fn tighten(&self, lo: &mut [f64], hi: &mut [f64], passes: usize) -> bool {
        const SLACK: f64 = 1e-12;
        for _ in 0..passes {
            let mut changed = false;
            for r in &self.rows {
                let (mut amin, mut amax) = (0.0f64, 0.0f64);
                for &(j, a) in &r.coeffs {
                    if a > 0.0 {
                        amin += a * lo[j];
                        amax += a * hi[j];
                    } else {
                        amin += a * hi[j];
                        amax += a * lo[j];
                    }
                }
                if amin > r.hi + 1e-9 || amax < r.lo - 1e-9 {
                    return false;
                }
                for &(j, a) in &r.coeffs {
                    let (cmin, cmax) = if a > 0.0 { (a * lo[j], a * hi[j]) } else { (a * hi[j], a * lo[j]) };
                    let rest_min = amin - cmin;
                    let rest_max = amax - cmax;
                    // a x_j in [r.lo - rest_max, r.hi - rest_min]
                    let (tl, th) = (r.lo - rest_max, r.hi - rest_min);
                    let (nl, nh) = if a > 0.0 { (tl / a, th / a) } else { (th / a, tl / a) };
                    if nl.is_finite() && nl - SLACK > lo[j] + 1e-9 {
                        lo[j] = nl - SLACK;
                        changed = true;
                    }
                    if nh.is_finite() && nh + SLACK < hi[j] - 1e-9 {
                        hi[j] = nh + SLACK;
                        changed = true;
                    }
                }
            }
            for pr in &self.products {
                // all factors are nonnegative
                let (wl, wh) = (lo[pr.u] * lo[pr.v], hi[pr.u] * hi[pr.v]);
                if wl - SLACK > lo[pr.w] + 1e-9 {
                    lo[pr.w] = wl - SLACK;
                    changed = true;
                }
                if wh + SLACK < hi[pr.w] - 1e-9 {
                    hi[pr.w] = wh + SLACK;
                    changed = true;
                }
                if lo[pr.w] > 0.0 {
                    if hi[pr.v] > 0.0 {
                        let ul = lo[pr.w] / hi[pr.v] - SLACK;
                        if ul > lo[pr.u] + 1e-9 {
                            lo[pr.u] = ul;
                            changed = true;
                        }
                    }
                    if hi[pr.u] > 0.0 {
                        let vl = lo[pr.w] / hi[pr.u] - SLACK;
                        if vl > lo[pr.v] + 1e-9 {
                            lo[pr.v] = vl;
                            changed = true;
                        }
                    }
                }
                if lo[pr.v] > 0.0 {
                    let uh = hi[pr.w] / lo[pr.v] + SLACK;
                    if uh < hi[pr.u] - 1e-9 {
                        hi[pr.u] = uh;
                        changed = true;
                    }
                }
                if lo[pr.u] > 0.0 {
                    let vh = hi[pr.w] / lo[pr.u] + SLACK;
                    if vh < hi[pr.v] - 1e-9 {
                        hi[pr.v] = vh;
                        changed = true;
                    }
                }
            }
            for j in 0..lo.len() {
                if lo[j] > hi[j] + 1e-9 {
                    return false;
                }
                if lo[j] > hi[j] {
                    let m = 0.5 * (lo[j] + hi[j]);
                    lo[j] = m;
                    hi[j] = m;
                }
            }
            if !changed {
                break;
            }
        }
        true
    }

    /// Scheme point from LP group masses: each group's mass is spread evenly
    /// over its coordinates, then every block is renormalized.
    pub fn point(&self, values: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.total_dim];
        for (members, &v) in self.groups.iter().zip(&self.group_vars) {
            let m = values[v].max(0.0) / members.len() as f64;
            for &c in members {
                x[c] = m;
            }
        }
        for r in &self.block_ranges {
            let s: f64 = x[r.clone()].iter().sum();
            let free: Vec<usize> = r.clone().filter(|c| !self.pinned.contains(c)).collect();
            if s <= 0.0 {
                for &c in &free {
                    x[c] = 1.0 / free.len() as f64;
                }
            } else {
                for c in r.clone() {
                    x[c] /= s;
                }
            }
        }
        x
    }

    /// Scheme point whose atom masses match the conditional masses
    /// `child / parent` of an LP point as closely as possible (L1), level by
    /// level.
    pub fn conditional_point(&self, values: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.total_dim];
        for level in &self.levels {
            let mut lp = LpProblem::<f64>::new();
            let gv: Vec<usize> = level.groups.iter().map(|_| lp.add_var(0.0, 1.0, 0.0)).collect();
            let local = |g: usize| level.groups.iter().position(|&h| h == g).expect("group of level");
            lp.add_eq(gv.iter().map(|&v| (v, 1.0)).collect(), 1.0);
            for f in &level.forms {
                let mut num = 0.0;
                let mut den = 0.0;
                for &(p, c) in &f.links {
                    num += values[c].max(0.0);
                    den += p.map_or(1.0, |p| values[p].max(0.0));
                }
                if den < 1e-12 {
                    continue;
                }
                let target = (num / den).clamp(0.0, 1.0);
                let e_plus = lp.add_var(0.0, 1.0, 1.0);
                let e_minus = lp.add_var(0.0, 1.0, 1.0);
                let mut r: Vec<(usize, f64)> = f.groups.iter().map(|&g| (gv[local(g)], 1.0)).collect();
                r.push((e_plus, -1.0));
                r.push((e_minus, 1.0));
                lp.add_eq(r, target);
            }
            let sol = lp.solve();
            for (k, &g) in level.groups.iter().enumerate() {
                let mass = if sol.status == LpStatus::Optimal { sol.x[gv[k]].max(0.0) } else { values[self.group_vars[g]].max(0.0) };
                let members = &self.groups[g];
                for &c in members {
                    x[c] = mass / members.len() as f64;
                }
            }
        }
        for r in &self.block_ranges {
            let s: f64 = x[r.clone()].iter().sum();
            let free: Vec<usize> = r.clone().filter(|c| !self.pinned.contains(c)).collect();
            if s <= 0.0 {
                for &c in &free {
                    x[c] = 1.0 / free.len() as f64;
                }
            } else {
                for c in r.clone() {
                    x[c] /= s;
                }
            }
        }
        x
    }

    /// Product violations `|w - u v|` at an LP point.
    pub fn violations(&self, values: &[f64]) -> Vec<f64> {
        self.products.iter().map(|p| (values[p.w] - values[p.u] * values[p.v]).abs()).collect()
    }
}

struct FormInfo {
    var: usize,
    members: Vec<usize>,
    /// `(parent, child)` tree nodes using this form.
    links: Vec<(Option<usize>, usize)>,
}

struct Tree<'a> {
    table: &'a Table,
    forms: &'a mut Vec<Vec<FormInfo>>,
    index: &'a mut HashMap<(usize, Vec<usize>), usize>,
    leaves: &'a mut Vec<(usize, Vec<f64>)>,
}

impl Tree<'_> {
    fn expand(&mut self, bld: &mut Builder, level: usize, base: usize, parent: Option<usize>) {
        let table = self.table;
        let n = table.free[level].len();
        let last = level + 1 == table.free.len();
        // atoms: coordinates with identical residual tables
        let mut atoms: Vec<Vec<usize>> = Vec::new();
        {
            let mut seen: HashMap<&[BigRational], usize> = HashMap::new();
            for i in 0..n {
                let key = table.slice(level, base, i);
                let a = *seen.entry(key).or_insert_with(|| {
                    atoms.push(Vec::new());
                    atoms.len() - 1
                });
                atoms[a].push(i);
            }
        }
        let mut children = Vec::new();
        let natoms = atoms.len();
        for members in atoms {
            let rep = members[0];
            let key = (level, members);
            let fi = match self.index.get(&key) {
                Some(&fi) => fi,
                None => {
                    let var = bld.var(VarKind::Form, 0.0, 1.0);
                    if natoms > 1 {
                        bld.branch_vars.push(var);
                    }
                    self.forms[level].push(FormInfo { var, members: key.1.clone(), links: Vec::new() });
                    let fi = self.forms[level].len() - 1;
                    self.index.insert(key, fi);
                    fi
                }
            };
            let form = self.forms[level][fi].var;
            let w = match parent {
                None => form,
                Some(p) => {
                    let w = bld.var(VarKind::Node, 0.0, 1.0);
                    bld.product(w, p, form);
                    w
                }
            };
            self.forms[level][fi].links.push((parent, w));
            children.push(w);
            let slice = table.slice(level, base, rep);
            if last {
                self.leaves.push((w, slice.iter().map(f64::from_rational).collect()));
            } else if slice.iter().all(|v| v.is_zero()) {
                self.leaves.push((w, vec![0.0; table.npoly]));
            } else {
                self.expand(bld, level + 1, base + rep * table.stride[level], Some(w));
            }
        }
        let mut r: Vec<(usize, f64)> = children.iter().map(|&c| (c, 1.0)).collect();
        match parent {
            None => bld.row(r, 1.0, 1.0),
            Some(p) => {
                r.push((p, -1.0));
                bld.row(r, 0.0, 0.0);
            }
        }
    }
}
