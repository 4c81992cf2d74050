//! Independent references for validating the solver: closed-form proxy
//! bounds, fair projections, divergences, the shift basis, the minimum flip
//! budget, a sampling inner envelope and a compiler cross-check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compile::compile_joint;
use crate::error::{Error, Result};
use crate::event::Atom;
use crate::poly::PolynomialExpr;
use crate::program::SensitivityProgram;
use crate::relax::Pieces;
use crate::scheme::ResponseScheme;
use crate::solver::local::LocalSearch;

/// Group-level table `p[i][j] = P(Y_P = i, Yhat = j | A = a)` with proxy
/// budget `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxyTable {
    pub p: [[f64; 2]; 2],
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ProxyMetric {
    Fpr,
    Fnr,
    Ppv,
    Npv,
}

/// Which one-sided flip the proxy may contain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProxyRegime {
    /// `P(Y_P = 1 | Y = 0) = 0`: only true positives can be recorded as 0,
    /// and `alpha = P(Y = 1, Y_P = 0 | A = a)`.
    #[default]
    MissedPositives,
    /// `P(Y_P = 0 | Y = 1) = 0`, `alpha = P(Y = 0, Y_P = 1 | A = a)`.
    SpuriousPositives,
}

impl ProxyTable {
    pub fn new(p00: f64, p01: f64, p10: f64, p11: f64, alpha: f64) -> Result<Self> {
        let t = ProxyTable { p: [[p00, p01], [p10, p11]], alpha };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let flat = [self.p[0][0], self.p[0][1], self.p[1][0], self.p[1][1]];
        if flat.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidDistribution("negative or non-finite cell".into()));
        }
        if (flat.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidDistribution("cells must sum to 1".into()));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidDistribution(format!("alpha {} must be nonnegative", self.alpha)));
        }
        Ok(())
    }

    /// Swap the roles of 0 and 1 in both the proxy and the prediction.
    fn flipped(&self) -> Self {
        ProxyTable { p: [[self.p[1][1], self.p[1][0]], [self.p[0][1], self.p[0][0]]], alpha: self.alpha }
    }
}

/// Closed-form interval `[lo, hi]` of a group metric over all flip masses in
/// `[0, alpha]`, with `Yhat` independent of `Y_P` given `Y` and `A`.
pub fn proxy_closed_form(table: &ProxyTable, metric: ProxyMetric, regime: ProxyRegime) -> Result<(f64, f64)> {
    table.validate()?;
    match regime {
        ProxyRegime::MissedPositives => missed_positives(table, metric),
        ProxyRegime::SpuriousPositives => {
            // relabel 0 <-> 1 in Y, Y_P and Yhat; the rates swap roles
            let m = match metric {
                ProxyMetric::Fpr => ProxyMetric::Fnr,
                ProxyMetric::Fnr => ProxyMetric::Fpr,
                ProxyMetric::Ppv => ProxyMetric::Npv,
                ProxyMetric::Npv => ProxyMetric::Ppv,
            };
            missed_positives(&table.flipped(), m)
        }
    }
}

fn missed_positives(table: &ProxyTable, metric: ProxyMetric) -> Result<(f64, f64)> {
    let [[p00, p01], [p10, p11]] = table.p;
    let alpha = table.alpha;
    let pos = p10 + p11;
    if pos <= 0.0 {
        return Err(Error::DivisionByZero("p10 + p11".into()));
    }
    if p00 + p01 <= alpha {
        return Err(Error::DivisionByZero("p00 + p01 - alpha".into()));
    }
    // mass moved from Y_P = 0 to Y = 1, split like Yhat given Y_P = 1
    let at = |a: f64| -> Result<f64> {
        let a0 = a * p10 / pos;
        let a1 = a * p11 / pos;
        let (num, den) = match metric {
            ProxyMetric::Fpr => (p01 - a1, p00 + p01 - a),
            ProxyMetric::Fnr => (p10 + a0, pos + a),
            ProxyMetric::Ppv => (p11 + a1, p01 + p11),
            ProxyMetric::Npv => (p00 - a0, p00 + p10),
        };
        if den <= 0.0 {
            return Err(Error::DivisionByZero(format!("{metric:?} denominator")));
        }
        Ok(num / den)
    };
    let (a, b) = (at(0.0)?, at(alpha)?);
    Ok((a.min(b), a.max(b)))
}

/// Joint distribution over `(A, Yhat, Y)` ordered
/// `(1,1,1), (1,1,0), (1,0,1), (1,0,0), (0,1,1), (0,1,0), (0,0,1), (0,0,0)`.
pub type Dist8 = [f64; 8];

/// Index of `(a, yhat, y)` in a [`Dist8`].
pub fn dist8_index(a: usize, yhat: usize, y: usize) -> usize {
    4 * (1 - a) + 2 * (1 - yhat) + (1 - y)
}

pub fn validate_dist8(p: &Dist8) -> Result<()> {
    for (i, v) in p.iter().enumerate() {
        if !(v.is_finite() && *v >= 0.0 && *v <= 1.0) {
            return Err(Error::SimplexViolation { index: i, value: *v });
        }
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDistribution(format!("entries sum to {s}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FairCriterion {
    /// `Yhat` independent of `A`.
    Dp,
    /// `Y` independent of `A` given `Yhat`.
    Pvp,
    /// `Yhat` independent of `A` given `Y`.
    Eo,
}

fn marginal(p: &Dist8, keep: impl Fn(usize, usize, usize) -> bool) -> f64 {
    let mut s = 0.0;
    for a in 0..2 {
        for h in 0..2 {
            for y in 0..2 {
                if keep(a, h, y) {
                    s += p[dist8_index(a, h, y)];
                }
            }
        }
    }
    s
}

/// Closest distribution satisfying the criterion's independence. Null
/// conditioning cells are an error; smooth the input first (see [`smooth`]).
pub fn fair_projection(p: &Dist8, criterion: FairCriterion) -> Result<Dist8> {
    validate_dist8(p)?;
    let mut q = [0.0; 8];
    let check = |v: f64, what: &str| -> Result<f64> {
        if v > 0.0 {
            Ok(v)
        } else {
            Err(Error::DivisionByZero(format!("null conditioning cell {what}")))
        }
    };
    for a in 0..2 {
        for h in 0..2 {
            for y in 0..2 {
                let joint = p[dist8_index(a, h, y)];
                q[dist8_index(a, h, y)] = match criterion {
                    FairCriterion::Dp => {
                        let pah = check(marginal(p, |a2, h2, _| a2 == a && h2 == h), &format!("P(A={a},Yhat={h})"))?;
                        joint / pah * marginal(p, |a2, _, _| a2 == a) * marginal(p, |_, h2, _| h2 == h)
                    }
                    FairCriterion::Pvp => {
                        let ph = check(marginal(p, |_, h2, _| h2 == h), &format!("P(Yhat={h})"))?;
                        marginal(p, |_, h2, y2| h2 == h && y2 == y) * marginal(p, |a2, h2, _| a2 == a && h2 == h) / ph
                    }
                    FairCriterion::Eo => {
                        let py = check(marginal(p, |_, _, y2| y2 == y), &format!("P(Y={y})"))?;
                        marginal(p, |_, h2, y2| h2 == h && y2 == y) * marginal(p, |a2, _, y2| a2 == a && y2 == y) / py
                    }
                };
            }
        }
    }
    Ok(q)
}

/// Mix in `eps` of the uniform distribution so every cell is positive.
pub fn smooth(p: &Dist8, eps: f64) -> Dist8 {
    let mut q = *p;
    for v in q.iter_mut() {
        *v = (*v + eps) / (1.0 + 8.0 * eps);
    }
    q
}

/// Largest residual of the criterion's independence in division-free form,
/// `P(x, z, c) P(c) - P(x, c) P(z, c)`.
pub fn independence_residual(q: &Dist8, criterion: FairCriterion) -> f64 {
    let mut worst: f64 = 0.0;
    for a in 0..2 {
        for h in 0..2 {
            for y in 0..2 {
                let r = match criterion {
                    FairCriterion::Dp => {
                        let joint = marginal(q, |a2, h2, _| a2 == a && h2 == h);
                        joint - marginal(q, |a2, _, _| a2 == a) * marginal(q, |_, h2, _| h2 == h)
                    }
                    FairCriterion::Pvp => {
                        let c = marginal(q, |_, h2, _| h2 == h);
                        q[dist8_index(a, h, y)] * c
                            - marginal(q, |a2, h2, _| a2 == a && h2 == h) * marginal(q, |_, h2, y2| h2 == h && y2 == y)
                    }
                    FairCriterion::Eo => {
                        let c = marginal(q, |_, _, y2| y2 == y);
                        marginal(q, |a2, h2, y2| a2 == a && h2 == h && y2 == y) * c
                            - marginal(q, |a2, _, y2| a2 == a && y2 == y) * marginal(q, |_, h2, y2| h2 == h && y2 == y)
                    }
                };
                worst = worst.max(r.abs());
            }
        }
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Divergence {
    Chi2,
    Tv,
}

/// `sum_i q_i f(p_i / q_i)`; `+inf` when `p_i > 0` and `q_i = 0`.
pub fn f_divergence(p: &[f64], q: &[f64], kind: Divergence) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::InvalidDistribution(format!("length {} vs {}", p.len(), q.len())));
    }
    let f = |x: f64| match kind {
        Divergence::Chi2 => (x - 1.0) * (x - 1.0),
        Divergence::Tv => (x - 1.0).abs(),
    };
    let mut d = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if qi == 0.0 {
            if pi > 0.0 {
                return Ok(f64::INFINITY);
            }
            continue;
        }
        d += qi * f(pi / qi);
    }
    Ok(d)
}

/// The seven zero-sum directions: `v0` moves `P(A=1)`, `v1, v2` move
/// `P(Yhat=1 | A=a)` for `a = 1, 0`, and `v3..v6` move `P(Y=1 | A, Yhat)`
/// for `(A, Yhat) = (1,1), (1,0), (0,1), (0,0)`.
pub fn shift_basis() -> [Dist8; 7] {
    let mut v = [[0.0; 8]; 7];
    for i in 0..8 {
        v[0][i] = if i < 4 { 0.25 } else { -0.25 };
    }
    v[1][..4].copy_from_slice(&[0.5, 0.5, -0.5, -0.5]);
    v[2][4..].copy_from_slice(&[0.5, 0.5, -0.5, -0.5]);
    for k in 0..4 {
        v[3 + k][2 * k] = 1.0;
        v[3 + k][2 * k + 1] = -1.0;
    }
    v
}

/// Coefficients over [`shift_basis`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ShiftVector(pub [f64; 7]);

impl ShiftVector {
    /// Coefficient of the direction moving `P(Y=1 | A=a, Yhat=yhat)`.
    pub fn label_coefficient(&self, a: usize, yhat: usize) -> f64 {
        self.0[3 + 2 * (1 - a) + (1 - yhat)]
    }

    /// L1 norm of the label coefficients, the proxy budget they consume.
    pub fn label_budget(&self) -> f64 {
        self.0[3..].iter().map(|v| v.abs()).sum()
    }

    pub fn within_proxy_budget(&self, budget: f64) -> bool {
        self.label_budget() <= budget + 1e-12
    }
}

/// `q = p + sum_k lambda_k v_k`; errors name the first coordinate leaving
/// `[0, 1]`.
pub fn apply_shift(p: &Dist8, lambda: &ShiftVector) -> Result<Dist8> {
    validate_dist8(p)?;
    let basis = shift_basis();
    let mut q = *p;
    for (k, v) in basis.iter().enumerate() {
        for i in 0..8 {
            q[i] += lambda.0[k] * v[i];
        }
    }
    for (i, &v) in q.iter().enumerate() {
        if !(-1e-15..=1.0 + 1e-15).contains(&v) {
            return Err(Error::SimplexViolation { index: i, value: v });
        }
    }
    Ok(q)
}

/// Basis with the supports and signs of [`shift_basis`], scaled by the
/// conditionals of `p` so that each direction moves only its own factor of
/// `P(a) P(yhat | a) P(y | yhat, a)`. Agrees with [`shift_basis`] when those
/// conditionals are uniform; the printed `v0, v1, v2` change the other
/// factors otherwise.
pub fn adapted_basis(p: &Dist8) -> Result<[Dist8; 7]> {
    validate_dist8(p)?;
    let mut v = shift_basis();
    let positive = |x: f64, what: String| if x > 0.0 { Ok(x) } else { Err(Error::DivisionByZero(what)) };
    for a in 0..2 {
        let pa = positive(marginal(p, |a2, _, _| a2 == a), format!("P(A={a})"))?;
        let sign = if a == 1 { 1.0 } else { -1.0 };
        for h in 0..2 {
            let pah = positive(marginal(p, |a2, h2, _| a2 == a && h2 == h), format!("P(A={a},Yhat={h})"))?;
            let hsign = if h == 1 { 1.0 } else { -1.0 };
            for y in 0..2 {
                let i = dist8_index(a, h, y);
                v[0][i] = sign * p[i] / pa;
                // v1 moves P(Yhat=1 | A=1), v2 moves P(Yhat=1 | A=0)
                let k = if a == 1 { 1 } else { 2 };
                v[k][i] = hsign * p[i] / pah;
            }
        }
    }
    Ok(v)
}

/// [`apply_shift`] over [`adapted_basis`] at `p`.
pub fn apply_adapted_shift(p: &Dist8, lambda: &ShiftVector) -> Result<Dist8> {
    let basis = adapted_basis(p)?;
    let mut q = *p;
    for (k, v) in basis.iter().enumerate() {
        for i in 0..8 {
            q[i] += lambda.0[k] * v[i];
        }
    }
    for (i, &v) in q.iter().enumerate() {
        if !(-1e-15..=1.0 + 1e-15).contains(&v) {
            return Err(Error::SimplexViolation { index: i, value: v });
        }
    }
    Ok(q)
}

/// Largest change in `P(yhat | a)` and `P(y | yhat, a)` between `p` and `q`.
pub fn conditional_residual(p: &Dist8, q: &Dist8) -> f64 {
    let mut worst: f64 = 0.0;
    for a in 0..2 {
        for h in 0..2 {
            let cond = |d: &Dist8| {
                let pa = marginal(d, |a2, _, _| a2 == a);
                let pah = marginal(d, |a2, h2, _| a2 == a && h2 == h);
                (pah / pa, d[dist8_index(a, h, 1)] / pah)
            };
            let (x, y) = cond(p);
            let (u, v) = cond(q);
            worst = worst.max((x - u).abs()).max((y - v).abs());
        }
    }
    worst
}

/// Test statistic `scale * D(q, fair_projection(q))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlipStatistic {
    pub criterion: FairCriterion,
    pub kind: Divergence,
    /// Sample size for a chi-square test; 1 gives the raw divergence.
    pub scale: f64,
}

impl FlipStatistic {
    /// Evaluated at the normalized input, so off-simplex probes (finite
    /// differences) stay meaningful.
    pub fn eval(&self, q: &[f64]) -> f64 {
        let mut d = [0.0; 8];
        d.copy_from_slice(q);
        d.iter_mut().for_each(|v| *v = v.max(0.0));
        let s: f64 = d.iter().sum();
        d.iter_mut().for_each(|v| *v /= s);
        let d = smooth(&d, 1e-9);
        match fair_projection(&d, self.criterion) {
            Ok(f) => self.scale * f_divergence(&d, &f, self.kind).unwrap_or(f64::INFINITY),
            Err(_) => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipBudget {
    /// Smallest L2 distance at which the statistic reaches the threshold.
    pub budget: f64,
    /// A distribution at that distance attaining it.
    pub witness: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlipOptions {
    pub starts: usize,
    pub iterations: usize,
    pub bisection_steps: usize,
    /// Shortfall `t - T(q)` still counted as reaching the threshold.
    pub zero_tol: f64,
    pub seed: u64,
}

impl Default for FlipOptions {
    fn default() -> Self {
        FlipOptions { starts: 16, iterations: 500, bisection_steps: 40, zero_tol: 1e-10, seed: 0 }
    }
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut css = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        css += ui;
        let t = (css - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Exact projection onto the simplex intersected with the ball
/// `|q - p| <= b`: the minimizer is `proj_simplex((v + mu p) / (1 + mu))`
/// for the smallest `mu >= 0` that lands inside the ball.
fn project_ball_simplex(v: &[f64], p: &[f64], b: f64) -> Vec<f64> {
    let at = |mu: f64| project_simplex(&v.iter().zip(p).map(|(vi, pi)| (vi + mu * pi) / (1.0 + mu)).collect::<Vec<_>>());
    let x = at(0.0);
    if dist2(&x, p) <= b * b {
        return x;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while dist2(&at(hi), p) > b * b {
        hi *= 2.0;
        if hi > 1e12 {
            break;
        }
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if dist2(&at(mid), p) > b * b {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(hi)
}

/// Largest statistic within distance `b` of `p`, by projected gradient
/// ascent from several starts.
fn max_within<T: Fn(&[f64]) -> f64 + Sync>(p: &[f64], stat: &T, b: f64, options: &FlipOptions) -> (f64, Vec<f64>) {
    let n = p.len();
    let starts: Vec<Vec<f64>> = (0..options.starts)
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
            rng.set_stream(s as u64);
            let dir: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            project_ball_simplex(&p.iter().zip(&dir).map(|(pi, d)| pi + b * d / norm).collect::<Vec<_>>(), p, b)
        })
        .collect();
    starts
        .into_par_iter()
        .map(|mut q| {
            let mut f = stat(&q);
            let mut step = 0.1;
            for _ in 0..options.iterations {
                let h = 1e-7;
                let g: Vec<f64> = (0..n)
                    .map(|i| {
                        let mut up = q.clone();
                        let mut dn = q.clone();
                        up[i] += h;
                        dn[i] -= h;
                        (stat(&up) - stat(&dn)) / (2.0 * h)
                    })
                    .collect();
                let mut improved = false;
                while step > 1e-14 {
                    let cand = project_ball_simplex(&q.iter().zip(&g).map(|(x, gi)| x + step * gi).collect::<Vec<_>>(), p, b);
                    let fc = stat(&cand);
                    if fc > f {
                        q = cand;
                        f = fc;
                        step *= 2.0;
                        improved = true;
                        break;
                    }
                    step *= 0.5;
                }
                if !improved {
                    break;
                }
            }
            (f, q)
        })
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .expect("at least one start")
}

/// Smallest L2 budget `b` such that some `q` in the simplex with
/// `|q - p| = b` has `T(q) = t`. Bisection on `b`, testing whether the
/// largest statistic in the ball reaches `t` (by continuity the minimal `b`
/// is the same). Generic over the dimension.
pub fn min_flip_budget_with<T: Fn(&[f64]) -> f64 + Sync>(
    p: &[f64],
    stat: T,
    t: f64,
    options: &FlipOptions,
) -> Result<FlipBudget> {
    if !(t >= 0.0) {
        return Err(Error::Unreachable(format!("threshold {t} must be nonnegative")));
    }
    if stat(p) >= t {
        return Ok(FlipBudget { budget: 0.0, witness: p.to_vec() });
    }
    // farthest simplex point from p bounds the search
    let hi0 = (0..p.len())
        .map(|i| {
            let mut e = vec![0.0; p.len()];
            e[i] = 1.0;
            dist2(&e, p).sqrt()
        })
        .fold(0.0, f64::max);
    let (f, q) = max_within(p, &stat, hi0, options);
    if f < t - options.zero_tol {
        return Err(Error::Unreachable(format!("statistic cannot reach {t} on the simplex")));
    }
    let mut witness = q;
    let mut hi = hi0;
    let mut lo = 0.0;
    for _ in 0..options.bisection_steps {
        let mid = 0.5 * (lo + hi);
        let (f, q) = max_within(p, &stat, mid, options);
        if f >= t - options.zero_tol {
            hi = mid;
            witness = q;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-6 {
            break;
        }
    }
    Ok(FlipBudget { budget: hi, witness })
}

/// [`min_flip_budget_with`] for a divergence test statistic on a [`Dist8`].
pub fn min_flip_budget(p: &Dist8, statistic: FlipStatistic, t: f64, options: &FlipOptions) -> Result<FlipBudget> {
    validate_dist8(p)?;
    min_flip_budget_with(p, |q| statistic.eval(q), t, options)
}

/// How sampled points are made feasible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerMode {
    /// Keep uniform Dirichlet draws that already satisfy every constraint.
    Rejection,
    /// Push each draw onto the feasible set with the block-LP restoration,
    /// keeping the ones that get there.
    #[default]
    Restore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    /// `(min, max)` of the objective over kept points; `None` when none kept.
    pub range: Option<(f64, f64)>,
    pub kept: usize,
    pub samples: usize,
    pub keep_rate: f64,
}

/// Uniform Dirichlet draw on every block (pinned coordinates at zero).
pub fn dirichlet_point(program: &SensitivityProgram, rng: &mut impl Rng) -> Vec<f64> {
    let mut x = vec![0.0; program.scheme.total_dim];
    for blk in &program.scheme.blocks {
        let r = blk.range();
        let mut s = 0.0;
        for c in r.clone() {
            if program.pinned.binary_search(&c).is_err() {
                let e: f64 = Exp1.sample(rng);
                x[c] = e;
                s += e;
            }
        }
        for c in r {
            x[c] /= s;
        }
    }
    x
}

/// Feasible points from `samples` seeded draws. Draw `i` uses stream `i` of
/// the seed, so the result does not depend on the number of workers.
pub fn sample_feasible(program: &SensitivityProgram, samples: usize, seed: u64, mode: SamplerMode) -> Vec<Vec<f64>> {
    let local = LocalSearch::new(program, &Pieces::minimize(0));
    (0..samples)
        .into_par_iter()
        .filter_map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let x = dirichlet_point(program, &mut rng);
            let x = match mode {
                SamplerMode::Rejection => x,
                SamplerMode::Restore => local.restore(&x, None, 40)?,
            };
            (program.is_feasible(&x, program.eps_feas) && program.objective_value(&x).is_ok()).then_some(x)
        })
        .collect()
}

/// Inner approximation of the metric's range from feasible samples.
pub fn brute_force_envelope(program: &SensitivityProgram, samples: usize, seed: u64, mode: SamplerMode) -> Result<Envelope> {
    if samples == 0 {
        return Err(Error::Options("samples must be at least 1".into()));
    }
    let points = sample_feasible(program, samples, seed, mode);
    let mut range: Option<(f64, f64)> = None;
    for x in &points {
        let v = program.objective_value(x)?;
        range = Some(range.map_or((v, v), |(a, b)| (a.min(v), b.max(v))));
    }
    Ok(Envelope { range, kept: points.len(), samples, keep_rate: points.len() as f64 / samples as f64 })
}

/// Agreement of compiled event polynomials with direct enumeration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompilerCheck {
    pub pairs: usize,
    /// Largest `|compiled - enumerated|` over the random pairs.
    pub max_error: f64,
    /// Symbolic checks: the observed partition sums to one, and
    /// `P(E, X = 0) + P(E, X = 1) = P(E)` for the first sampled events.
    pub normalized: bool,
    pub normalization_checks: usize,
}

fn random_event(scheme: &ResponseScheme, rng: &mut impl Rng) -> Vec<Atom> {
    let observed: Vec<usize> = (0..scheme.nodes.len()).filter(|&n| !scheme.dag.is_hidden(&scheme.nodes[n])).collect();
    let k = rng.random_range(1..=observed.len().min(3));
    let mut atoms: Vec<Atom> = Vec::new();
    while atoms.len() < k {
        let n = observed[rng.random_range(0..observed.len())];
        let mut atom = Atom::new(&scheme.nodes[n], rng.random_range(0..2));
        if rng.random::<f64>() < 0.3 {
            let m = observed[rng.random_range(0..observed.len())];
            if m != n {
                atom.intervention.insert(scheme.nodes[m].clone(), rng.random_range(0..2));
            }
        }
        if !atoms.iter().any(|a| a.node == atom.node && a.intervention == atom.intervention) {
            atoms.push(atom);
        }
    }
    atoms
}

fn enumerate(scheme: &ResponseScheme, support: &[(Vec<usize>, Vec<usize>)], atoms: &[Atom], x: &[f64]) -> f64 {
    let indexed: Vec<(usize, Vec<(usize, u8)>, u8)> = atoms
        .iter()
        .map(|a| {
            let iv = a.intervention.iter().map(|(n, v)| (scheme.node_index(n).expect("observed node"), *v)).collect();
            (scheme.node_index(&a.node).expect("observed node"), iv, a.value)
        })
        .collect();
    support
        .iter()
        .filter(|(assignment, _)| indexed.iter().all(|(n, iv, v)| scheme.realize_indexed(assignment, iv)[*n] == *v))
        .map(|(_, coords)| coords.iter().map(|&c| x[c]).product::<f64>())
        .sum()
}

/// Compare [`compile_joint`] with summing over every joint response
/// assignment on `pairs` random `(event, point)` pairs.
pub fn compiler_check(scheme: &ResponseScheme, pairs: usize, seed: u64) -> Result<CompilerCheck> {
    let support: Vec<(Vec<usize>, Vec<usize>)> = scheme
        .assignments()
        .map(|a| {
            let c = scheme.coordinates(&a);
            (a, c)
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_error: f64 = 0.0;
    let mut normalized = true;
    let mut checks = 0;
    for i in 0..pairs {
        let atoms = random_event(scheme, &mut rng);
        let mut x = vec![0.0; scheme.total_dim];
        for blk in &scheme.blocks {
            let draws: Vec<f64> = blk.range().map(|_| Exp1.sample(&mut rng)).collect();
            let s: f64 = draws.iter().sum();
            for (c, d) in blk.range().zip(draws) {
                x[c] = d / s;
            }
        }
        let poly = compile_joint(scheme, &atoms)?;
        max_error = max_error.max((poly.eval_f64(&x) - enumerate(scheme, &support, &atoms, &x)).abs());
        if i < 20 {
            let (last, rest) = atoms.split_last().expect("non-empty event");
            let mut flipped = last.clone();
            flipped.value = 1 - last.value;
            let mut other = rest.to_vec();
            other.push(flipped);
            let sum = poly.add(&compile_joint(scheme, &other)?).reduce(scheme);
            let marginal =
                if rest.is_empty() { PolynomialExpr::one() } else { compile_joint(scheme, rest)?.reduce(scheme) };
            normalized &= sum == marginal;
            checks += 1;
        }
    }
    let observed: Vec<&String> = scheme.nodes.iter().filter(|n| !scheme.dag.is_hidden(n)).collect();
    let mut total = PolynomialExpr::zero();
    for bits in 0..1usize << observed.len() {
        let atoms: Vec<Atom> = observed.iter().enumerate().map(|(k, n)| Atom::new(n, ((bits >> k) & 1) as u8)).collect();
        total = total.add(&compile_joint(scheme, &atoms)?);
    }
    normalized &= total.reduce(scheme) == PolynomialExpr::one();
    Ok(CompilerCheck { pairs, max_error, normalized, normalization_checks: checks + 1 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn proxy_worked_example() {
        let t = ProxyTable::new(0.4, 0.3, 0.1, 0.2, 0.05).unwrap();
        let (lo, hi) = proxy_closed_form(&t, ProxyMetric::Fnr, ProxyRegime::MissedPositives).unwrap();
        assert!(close(lo, 1.0 / 3.0, 1e-12) && close(hi, 1.0 / 3.0, 1e-12));
        let (lo, hi) = proxy_closed_form(&t, ProxyMetric::Fpr, ProxyRegime::MissedPositives).unwrap();
        // (0.3 - 0.05 * 0.2 / 0.3) / 0.65 and 0.3 / 0.7
        assert!(close(lo, 0.41025641025641024, 1e-12), "{lo}");
        assert!(close(hi, 3.0 / 7.0, 1e-12));
        let (lo, hi) = proxy_closed_form(&t, ProxyMetric::Ppv, ProxyRegime::MissedPositives).unwrap();
        assert!(close(lo, 0.4, 1e-12) && close(hi, 0.4666666666666667, 1e-12));
    }

    #[test]
    fn proxy_alpha_zero_is_observed() {
        let t = ProxyTable::new(0.4, 0.3, 0.1, 0.2, 0.0).unwrap();
        for m in [ProxyMetric::Fpr, ProxyMetric::Fnr, ProxyMetric::Ppv, ProxyMetric::Npv] {
            for r in [ProxyRegime::MissedPositives, ProxyRegime::SpuriousPositives] {
                let (lo, hi) = proxy_closed_form(&t, m, r).unwrap();
                assert_eq!(lo, hi);
            }
        }
    }

    #[test]
    fn spurious_regime_identifies_fpr() {
        let t = ProxyTable::new(0.4, 0.3, 0.1, 0.2, 0.05).unwrap();
        let (lo, hi) = proxy_closed_form(&t, ProxyMetric::Fpr, ProxyRegime::SpuriousPositives).unwrap();
        assert!(close(lo, 0.3 / 0.7, 1e-12) && close(hi, 0.3 / 0.7, 1e-12));
        let (lo, hi) = proxy_closed_form(&t, ProxyMetric::Fnr, ProxyRegime::SpuriousPositives).unwrap();
        assert!(lo < hi);
    }

    #[test]
    fn proxy_errors() {
        let t = ProxyTable::new(0.5, 0.5, 0.0, 0.0, 0.0).unwrap();
        assert!(matches!(proxy_closed_form(&t, ProxyMetric::Fnr, ProxyRegime::MissedPositives), Err(Error::DivisionByZero(_))));
        let t = ProxyTable::new(0.1, 0.1, 0.4, 0.4, 0.2).unwrap();
        assert!(proxy_closed_form(&t, ProxyMetric::Fpr, ProxyRegime::MissedPositives).is_err());
        assert!(ProxyTable::new(0.5, 0.6, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn projection_examples() {
        let u = [0.125; 8];
        for c in [FairCriterion::Dp, FairCriterion::Pvp, FairCriterion::Eo] {
            let q = fair_projection(&u, c).unwrap();
            assert!(q.iter().all(|v| close(*v, 0.125, 1e-15)));
        }
        // P(A=1)=0.5, P(Yhat=1|A=1)=0.8, P(Yhat=1|A=0)=0.4, Y = Yhat
        let mut p = [0.0; 8];
        p[dist8_index(1, 1, 1)] = 0.4;
        p[dist8_index(1, 0, 0)] = 0.1;
        p[dist8_index(0, 1, 1)] = 0.2;
        p[dist8_index(0, 0, 0)] = 0.3;
        let q = fair_projection(&p, FairCriterion::Dp).unwrap();
        assert!(close(q[dist8_index(1, 1, 1)], 0.30, 1e-15));
        assert!(independence_residual(&q, FairCriterion::Dp) < 1e-12);
    }

    #[test]
    fn projection_null_cell() {
        let mut p = [0.0; 8];
        p[0] = 1.0;
        assert!(fair_projection(&p, FairCriterion::Dp).is_err());
        assert!(fair_projection(&smooth(&p, 1e-9), FairCriterion::Dp).is_ok());
    }

    #[test]
    fn divergence_examples() {
        let p = [0.5, 0.5];
        let q = [0.25, 0.75];
        assert!(close(f_divergence(&p, &q, Divergence::Chi2).unwrap(), 1.0 / 3.0, 1e-12));
        assert!(close(f_divergence(&p, &q, Divergence::Tv).unwrap(), 0.5, 1e-12));
        assert_eq!(f_divergence(&p, &p, Divergence::Chi2).unwrap(), 0.0);
        assert_eq!(f_divergence(&[0.5, 0.5], &[1.0, 0.0], Divergence::Tv).unwrap(), f64::INFINITY);
        assert_eq!(f_divergence(&[1.0, 0.0], &[1.0, 0.0], Divergence::Tv).unwrap(), 0.0);
    }

    #[test]
    fn basis_listing() {
        let v = shift_basis();
        assert_eq!(v[0], [0.25, 0.25, 0.25, 0.25, -0.25, -0.25, -0.25, -0.25]);
        assert_eq!(v[1], [0.5, 0.5, -0.5, -0.5, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(v[3], [1.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(v[6], [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, -1.0]);
        for k in v {
            assert_eq!(k.iter().sum::<f64>(), 0.0);
        }
    }

    #[test]
    fn shift_errors_name_coordinate() {
        let p = [0.125; 8];
        let mut l = ShiftVector::default();
        assert_eq!(apply_shift(&p, &l).unwrap(), p);
        l.0[3] = -0.2;
        assert_eq!(apply_shift(&p, &l), Err(Error::SimplexViolation { index: 0, value: 0.125 - 0.2 }));
        l.0[3] = 0.1;
        l.0[6] = -0.05;
        assert!(close(l.label_budget(), 0.15, 1e-15));
        assert!(l.within_proxy_budget(0.15) && !l.within_proxy_budget(0.1));
        assert_eq!(l.label_coefficient(1, 1), 0.1);
        assert_eq!(l.label_coefficient(0, 0), -0.05);
    }

    #[test]
    fn flip_budget_two_cells_matches_grid() {
        let reference = [0.5, 0.5];
        let stat = |q: &[f64]| f_divergence(q, &reference, Divergence::Chi2).unwrap();
        for (p0, t) in [(0.5, 0.1), (0.6, 0.2), (0.3, 0.05)] {
            let p = [p0, 1.0 - p0];
            let got = min_flip_budget_with(&p, stat, t, &FlipOptions::default()).unwrap();
            let mut best = f64::INFINITY;
            for k in 0..=1000 {
                let s = k as f64 / 1000.0;
                let q = [s, 1.0 - s];
                if stat(&q) >= t {
                    best = best.min(dist2(&q, &p).sqrt());
                }
            }
            assert!(close(got.budget, best, 2e-3), "{p0} {t}: {} vs {best}", got.budget);
        }
    }

    #[test]
    fn flip_budget_trivial_and_unreachable() {
        let p = [0.125; 8];
        let s = FlipStatistic { criterion: FairCriterion::Dp, kind: Divergence::Chi2, scale: 1.0 };
        assert_eq!(min_flip_budget(&p, s, 0.0, &FlipOptions::default()).unwrap().budget, 0.0);
        let stat = |q: &[f64]| f_divergence(q, &[0.5, 0.5], Divergence::Tv).unwrap();
        assert!(matches!(min_flip_budget_with(&[0.5, 0.5], stat, 5.0, &FlipOptions::default()), Err(Error::Unreachable(_))));
    }

    #[test]
    fn simplex_projection() {
        let q = project_simplex(&[0.6, 0.6, -1.0]);
        assert!(close(q[0], 0.5, 1e-15) && close(q[1], 0.5, 1e-15) && q[2] == 0.0);
    }

    #[test]
    fn compiler_agrees_with_enumeration() {
        let mut dag = crate::graph::parse_edgelist("A->Y, A->P, U->Y, U->P, Y->S, A->S").unwrap();
        dag.set_hidden(["U"]).unwrap();
        let scheme = crate::scheme::build_scheme(&dag).unwrap();
        let c = compiler_check(&scheme, 200, 5).unwrap();
        assert!(c.max_error < 1e-12, "{c:?}");
        assert!(c.normalized);
    }
}
