//! Assemble a sensitivity program from a config, a table, a metric and a budget.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::compile::{compile_constraint, compile_joint};
use crate::config::{BiasConfig, ResolvedConfig};
use crate::error::{Error, Result};
use crate::event::{Atom, Comparison};
use crate::graph::NodeRoleMap;
use crate::metrics::{metric_expression, MetricExpr, MetricSpec};
use crate::poly::PolynomialExpr;
use crate::scalar::rational_from_f64;
use crate::scheme::{build_scheme, response_output, ResponseScheme};
use crate::table::ObservedTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Min,
    Max,
    Both,
}

impl std::str::FromStr for Sense {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min" => Ok(Sense::Min),
            "max" => Ok(Sense::Max),
            "both" => Ok(Sense::Both),
            _ => Err(Error::Options(format!("sense must be min, max or both, got {s:?}"))),
        }
    }
}

/// Default tolerance on data equalities inside the solver.
pub const EPS_FEAS: f64 = 1e-6;

/// Concrete bounding problem at one budget value.
#[derive(Debug, Clone)]
pub struct SensitivityProgram {
    pub scheme: ResponseScheme,
    pub roles: NodeRoleMap,
    pub metric: MetricSpec,
    pub objective: MetricExpr,
    /// `g(x) = 0`, enforced to within the feasibility tolerance.
    pub equalities: Vec<PolynomialExpr>,
    /// `g(x) >= 0`.
    pub inequalities: Vec<PolynomialExpr>,
    /// Coordinates fixed at zero.
    pub pinned: Vec<usize>,
    /// Budget value per config constraint (two-bias programs carry two).
    pub deltas: Vec<f64>,
    pub eps_feas: f64,
}

impl SensitivityProgram {
    /// Largest violation of any constraint at `x` (simplex rows excluded).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut v: f64 = 0.0;
        for g in &self.equalities {
            v = v.max(g.eval_f64(x).abs());
        }
        for g in &self.inequalities {
            v = v.max(-g.eval_f64(x));
        }
        for &c in &self.pinned {
            v = v.max(x[c].abs());
        }
        v
    }

    /// Within tolerance on every constraint and on the simplices.
    pub fn is_feasible(&self, x: &[f64], tol: f64) -> bool {
        for blk in &self.scheme.blocks {
            let s: f64 = x[blk.range()].iter().sum();
            if (s - 1.0).abs() > 1e-9 || x[blk.range()].iter().any(|&v| v < -1e-12) {
                return false;
            }
        }
        self.max_violation(x) <= tol
    }

    pub fn objective_value(&self, x: &[f64]) -> Result<f64> {
        self.objective.eval(x, crate::poly::EPS_DEN)
    }
}

/// Equalities tying the compiled cells to the observed frequencies.
///
/// Without conditioning nodes: `P(cell) - f(cell) = 0`. With conditioning
/// nodes `S`: `P(cell & S=1) - f(cell) P(S=1) = 0`.
pub fn data_constraints(
    scheme: &ResponseScheme,
    roles: &NodeRoleMap,
    table: &ObservedTable,
    cond_nodes: &[String],
) -> Result<Vec<PolynomialExpr>> {
    let cond: Vec<Atom> = cond_nodes.iter().map(|s| Atom::new(s, 1)).collect();
    let base = if cond.is_empty() { PolynomialExpr::one() } else { compile_joint(scheme, &cond)? };
    let measured = roles.measured_outcome();
    let mut out = Vec::with_capacity(8);
    for a in 0..2u8 {
        for y in 0..2u8 {
            for yh in 0..2u8 {
                let mut atoms =
                    vec![Atom::new(&roles.attribute, a), Atom::new(measured, y), Atom::new(&roles.prediction, yh)];
                atoms.extend(cond.iter().cloned());
                let cell = compile_joint(scheme, &atoms)?;
                out.push(cell.sub(&base.scale(&table.frequency(a, y, yh))));
            }
        }
    }
    Ok(out)
}

/// Coordinates whose outcome response decreases when the policy switches on.
pub fn defier_coordinates(scheme: &ResponseScheme, outcome: &str, policy: &str) -> Result<Vec<usize>> {
    let y = scheme.node_index(outcome).ok_or_else(|| Error::UnknownNode(outcome.into()))?;
    let d = scheme.node_index(policy).ok_or_else(|| Error::UnknownNode(policy.into()))?;
    let parents = &scheme.parents[y];
    let Some(pos) = parents.iter().position(|&p| p == d) else {
        return Ok(Vec::new());
    };
    let m = parents.len();
    let bit = 1usize << (m - 1 - pos);
    let defier = |k: usize| (0..1usize << m).any(|j| j & bit == 0 && response_output(k, j | bit) < response_output(k, j));
    let b = scheme.block_of[y];
    let blk = &scheme.blocks[b];
    let ypos = blk.nodes.iter().position(|&n| n == y).expect("node in its block");
    Ok((0..blk.dim).filter(|&l| defier(blk.decode(l)[ypos])).map(|l| blk.offset + l).collect())
}

fn to_inequalities(poly: PolynomialExpr, cmp: Comparison, ineq: &mut Vec<PolynomialExpr>, eq: &mut Vec<PolynomialExpr>) {
    match cmp {
        Comparison::Ge => ineq.push(poly),
        Comparison::Le => ineq.push(PolynomialExpr::zero().sub(&poly)),
        Comparison::Eq => eq.push(poly),
    }
}

/// Build the program with one budget per constraint.
pub fn build_program_with_budgets(
    config: &BiasConfig,
    resolved: &ResolvedConfig,
    table: &ObservedTable,
    metric: &MetricSpec,
    budgets: &[f64],
) -> Result<SensitivityProgram> {
    for &d in budgets {
        if !(0.0..=1.0).contains(&d) || d.is_nan() {
            return Err(Error::DeltaRange(d));
        }
    }
    if budgets.len() != resolved.constraints.len() {
        return Err(Error::Config("one budget per constraint required".into()));
    }
    let scheme = build_scheme(&resolved.projected)?;
    let roles = resolved.roles.clone();
    let objective = metric_expression(metric, &roles, &scheme)?;
    let mut equalities = data_constraints(&scheme, &roles, table, &config.cond_nodes)?;
    let mut inequalities = Vec::new();
    for (c, &d) in resolved.constraints.iter().zip(budgets) {
        let (poly, cmp) = compile_constraint(&scheme, c, &rational_from_f64(d))?;
        to_inequalities(poly, cmp, &mut inequalities, &mut equalities);
    }
    let pinned = match &roles.policy {
        Some(p) => defier_coordinates(&scheme, &roles.outcome, p)?,
        None => Vec::new(),
    };
    equalities.retain(|g| !g.is_zero());
    Ok(SensitivityProgram {
        scheme,
        roles,
        metric: metric.clone(),
        objective,
        equalities,
        inequalities,
        pinned,
        deltas: budgets.to_vec(),
        eps_feas: EPS_FEAS,
    })
}

/// Build the program for a single budget `delta` shared by all constraints.
pub fn build_program(
    config: &BiasConfig,
    table: &ObservedTable,
    metric: &MetricSpec,
    delta: f64,
) -> Result<SensitivityProgram> {
    let resolved = config.resolve()?;
    let budgets = vec![delta; resolved.constraints.len()];
    build_program_with_budgets(config, &resolved, table, metric, &budgets)
}

/// Two-bias program: constraints of `first` use `d1`, those of `second` use `d2`.
pub fn build_two_bias_program(
    first: &BiasConfig,
    second: &BiasConfig,
    table: &ObservedTable,
    metric: &MetricSpec,
    d1: f64,
    d2: f64,
) -> Result<SensitivityProgram> {
    let (merged, split) = first.merge(second)?;
    let resolved = merged.resolve()?;
    let budgets: Vec<f64> = (0..resolved.constraints.len()).map(|i| if i < split { d1 } else { d2 }).collect();
    build_program_with_budgets(&merged, &resolved, table, metric, &budgets)
}

/// Dimensions summary used by `validate`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SchemeSummary {
    pub projected_edgelist: String,
    pub hidden: Vec<String>,
    pub blocks: Vec<BlockSummary>,
    pub total_dim: usize,
    pub roles: NodeRoleMap,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BlockSummary {
    pub nodes: Vec<String>,
    pub dim: usize,
    pub response_counts: BTreeMap<String, usize>,
}

pub fn summarize(config: &BiasConfig) -> Result<SchemeSummary> {
    let r = config.resolve()?;
    let scheme = build_scheme(&r.projected)?;
    let blocks = scheme
        .blocks
        .iter()
        .map(|b| BlockSummary {
            nodes: b.nodes.iter().map(|&n| scheme.nodes[n].clone()).collect(),
            dim: b.dim,
            response_counts: b.nodes.iter().map(|&n| (scheme.nodes[n].clone(), scheme.counts[n])).collect(),
        })
        .collect();
    Ok(SchemeSummary {
        projected_edgelist: r.projected.to_edgelist(),
        hidden: r.projected.hidden().iter().cloned().collect(),
        blocks,
        total_dim: scheme.total_dim,
        roles: r.roles,
    })
}
