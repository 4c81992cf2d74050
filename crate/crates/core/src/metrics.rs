//! Parity metrics as weighted sums of (conditional) event probabilities.

use std::fmt;
use std::str::FromStr;

use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::compile::compile_probability;
use crate::error::{Error, Result};
use crate::event::{Atom, Event};
use crate::graph::NodeRoleMap;
use crate::poly::RationalExpr;
use crate::scalar::Scalar;
use crate::scheme::ResponseScheme;
use crate::table::ObservedTable;

#[allow(non_camel_case_types)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MetricName {
    DP,
    FPRP,
    FNRP,
    PPP,
    NPP,
    EO,
    CF_FPRP,
    CF_FNRP,
    CF_PPP,
    CF_NPP,
    CF_EO,
    CF,
    TE,
    SE,
    FPR,
    FNR,
    PPV,
}

impl MetricName {
    pub const ALL: [MetricName; 17] = [
        MetricName::DP,
        MetricName::FPRP,
        MetricName::FNRP,
        MetricName::PPP,
        MetricName::NPP,
        MetricName::EO,
        MetricName::CF_FPRP,
        MetricName::CF_FNRP,
        MetricName::CF_PPP,
        MetricName::CF_NPP,
        MetricName::CF_EO,
        MetricName::CF,
        MetricName::TE,
        MetricName::SE,
        MetricName::FPR,
        MetricName::FNR,
        MetricName::PPV,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MetricName::DP => "DP",
            MetricName::FPRP => "FPRP",
            MetricName::FNRP => "FNRP",
            MetricName::PPP => "PPP",
            MetricName::NPP => "NPP",
            MetricName::EO => "EO",
            MetricName::CF_FPRP => "CF_FPRP",
            MetricName::CF_FNRP => "CF_FNRP",
            MetricName::CF_PPP => "CF_PPP",
            MetricName::CF_NPP => "CF_NPP",
            MetricName::CF_EO => "CF_EO",
            MetricName::CF => "CF",
            MetricName::TE => "TE",
            MetricName::SE => "SE",
            MetricName::FPR => "FPR",
            MetricName::FNR => "FNR",
            MetricName::PPV => "PPV",
        }
    }

    /// No counterfactual atoms; computable from an observed table.
    pub fn is_observational(&self) -> bool {
        matches!(
            self,
            MetricName::DP
                | MetricName::FPRP
                | MetricName::FNRP
                | MetricName::PPP
                | MetricName::NPP
                | MetricName::EO
                | MetricName::FPR
                | MetricName::FNR
                | MetricName::PPV
        )
    }

    pub fn needs_policy(&self) -> bool {
        matches!(
            self,
            MetricName::CF_FPRP | MetricName::CF_FNRP | MetricName::CF_PPP | MetricName::CF_NPP | MetricName::CF_EO
        )
    }

    /// Takes a `group` parameter (attribute value).
    pub fn is_per_group(&self) -> bool {
        matches!(self, MetricName::SE | MetricName::FPR | MetricName::FNR | MetricName::PPV)
    }

    pub fn is_max_abs(&self) -> bool {
        matches!(self, MetricName::EO | MetricName::CF_EO)
    }

    pub fn description(&self) -> &'static str {
        match self {
            MetricName::DP => "P(Yhat=1|A=0) - P(Yhat=1|A=1)",
            MetricName::FPRP => "P(Yhat=1|A=0,Y=0) - P(Yhat=1|A=1,Y=0)",
            MetricName::FNRP => "P(Yhat=1|A=0,Y=1) - P(Yhat=1|A=1,Y=1)",
            MetricName::PPP => "P(Y=1|A=0,Yhat=1) - P(Y=1|A=1,Yhat=1)",
            MetricName::NPP => "P(Y=1|A=0,Yhat=0) - P(Y=1|A=1,Yhat=0)",
            MetricName::EO => "max(|FPRP|, |FNRP|)",
            MetricName::CF_FPRP => "P(Yhat=1|A=0,Y(T=1)=0) - P(Yhat=1|A=1,Y(T=1)=0)",
            MetricName::CF_FNRP => "P(Yhat=1|A=0,Y(T=1)=1) - P(Yhat=1|A=1,Y(T=1)=1)",
            MetricName::CF_PPP => "P(Y(T=1)=1|A=0,Yhat=1) - P(Y(T=1)=1|A=1,Yhat=1)",
            MetricName::CF_NPP => "P(Y(T=1)=1|A=0,Yhat=0) - P(Y(T=1)=1|A=1,Yhat=0)",
            MetricName::CF_EO => "max(|CF_FPRP|, |CF_FNRP|)",
            MetricName::CF => "P(Yhat(A=1) != Yhat(A=0))",
            MetricName::TE => "P(Yhat(A=1)=1) - P(Yhat(A=0)=1)",
            MetricName::SE => "P(Yhat(A=a)=1) - P(Yhat=1|A=a)",
            MetricName::FPR => "P(Yhat=1|A=a,Y=0)",
            MetricName::FNR => "P(Yhat=0|A=a,Y=1)",
            MetricName::PPV => "P(Y=1|A=a,Yhat=1)",
        }
    }
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        MetricName::ALL
            .iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .copied()
            .ok_or_else(|| Error::UnknownMetric(s.to_string()))
    }
}

/// A metric together with how its value is reported.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricSpec {
    pub name: MetricName,
    /// Report the signed difference; `false` reports its absolute value.
    #[serde(default = "default_true")]
    pub signed: bool,
    /// Attribute value for per-group metrics; defaults to 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<u8>,
}

fn default_true() -> bool {
    true
}

impl MetricSpec {
    pub fn new(name: MetricName) -> Self {
        MetricSpec { name, signed: true, group: None }
    }

    pub fn for_group(name: MetricName, group: u8) -> Self {
        MetricSpec { name, signed: true, group: Some(group) }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Ok(Self::new(name.parse()?))
    }

    pub fn group(&self) -> u8 {
        self.group.unwrap_or(1)
    }
}

/// How the components of a metric combine into one number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Combine {
    /// A single signed value.
    Signed,
    /// Absolute value of a single component.
    Abs,
    /// Maximum of the absolute values of the components.
    MaxAbs,
}

/// Event-level formula: each component is `sum_k w_k P(E_k)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetricFormula {
    pub components: Vec<Vec<(BigRational, Event)>>,
    pub combine: Combine,
}

fn p(joint: Vec<Atom>, given: Vec<Atom>) -> Event {
    Event::conditional(joint, given)
}

/// Event-level definition of a metric over the given role names.
pub fn metric_formula(spec: &MetricSpec, roles: &NodeRoleMap) -> Result<MetricFormula> {
    let a = roles.attribute.as_str();
    let y = roles.outcome.as_str();
    let yh = roles.prediction.as_str();
    let name = spec.name;
    let y_atom = |v: u8| -> Result<Atom> {
        if name.needs_policy() {
            let d = roles.policy.as_deref().ok_or_else(|| Error::MissingRole {
                metric: name.to_string(),
                role: "policy".into(),
            })?;
            Ok(Atom::under(y, &[(d, 1)], v))
        } else {
            Ok(Atom::new(y, v))
        }
    };
    let one = BigRational::one();
    let diff = |e0: Event, e1: Event| vec![(one.clone(), e0), (-one.clone(), e1)];
    let rate_diff = |target: Atom, cond: Atom| {
        diff(
            p(vec![target.clone()], vec![Atom::new(a, 0), cond.clone()]),
            p(vec![target], vec![Atom::new(a, 1), cond]),
        )
    };
    let g = spec.group();
    if g > 1 {
        return Err(Error::ValueOutOfDomain { node: a.to_string(), value: g as i64 });
    }
    let single = |c: Vec<(BigRational, Event)>| MetricFormula {
        components: vec![c],
        combine: if spec.signed { Combine::Signed } else { Combine::Abs },
    };
    let f = match name {
        MetricName::DP => single(diff(
            p(vec![Atom::new(yh, 1)], vec![Atom::new(a, 0)]),
            p(vec![Atom::new(yh, 1)], vec![Atom::new(a, 1)]),
        )),
        MetricName::FPRP | MetricName::CF_FPRP => single(rate_diff(Atom::new(yh, 1), y_atom(0)?)),
        MetricName::FNRP | MetricName::CF_FNRP => single(rate_diff(Atom::new(yh, 1), y_atom(1)?)),
        MetricName::PPP | MetricName::CF_PPP => single(rate_diff(y_atom(1)?, Atom::new(yh, 1))),
        MetricName::NPP | MetricName::CF_NPP => single(rate_diff(y_atom(1)?, Atom::new(yh, 0))),
        MetricName::EO | MetricName::CF_EO => MetricFormula {
            components: vec![rate_diff(Atom::new(yh, 1), y_atom(0)?), rate_diff(Atom::new(yh, 1), y_atom(1)?)],
            combine: Combine::MaxAbs,
        },
        MetricName::CF => single(vec![
            (one.clone(), p(vec![Atom::under(yh, &[(a, 1)], 1), Atom::under(yh, &[(a, 0)], 0)], vec![])),
            (one.clone(), p(vec![Atom::under(yh, &[(a, 1)], 0), Atom::under(yh, &[(a, 0)], 1)], vec![])),
        ]),
        MetricName::TE => single(diff(
            p(vec![Atom::under(yh, &[(a, 1)], 1)], vec![]),
            p(vec![Atom::under(yh, &[(a, 0)], 1)], vec![]),
        )),
        MetricName::SE => single(diff(
            p(vec![Atom::under(yh, &[(a, g)], 1)], vec![]),
            p(vec![Atom::new(yh, 1)], vec![Atom::new(a, g)]),
        )),
        MetricName::FPR => single(vec![(one.clone(), p(vec![Atom::new(yh, 1)], vec![Atom::new(a, g), Atom::new(y, 0)]))]),
        MetricName::FNR => single(vec![(one.clone(), p(vec![Atom::new(yh, 0)], vec![Atom::new(a, g), Atom::new(y, 1)]))]),
        MetricName::PPV => single(vec![(one.clone(), p(vec![Atom::new(y, 1)], vec![Atom::new(a, g), Atom::new(yh, 1)]))]),
    };
    Ok(f)
}

/// Compiled component: `sum_k w_k N_k / D_k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatioSum {
    pub terms: Vec<(BigRational, RationalExpr)>,
}

impl RatioSum {
    pub fn eval(&self, point: &[f64], eps_den: f64) -> Result<f64> {
        let mut acc = 0.0;
        for (w, r) in &self.terms {
            acc += f64::from_rational(w) * r.eval::<f64>(point, eps_den)?;
        }
        Ok(acc)
    }

    pub fn is_identically_zero(&self) -> bool {
        self.terms.iter().all(|(w, r)| w.is_zero() || r.numerator.is_zero())
    }
}

/// Compiled metric.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricExpr {
    pub components: Vec<RatioSum>,
    pub combine: Combine,
}

impl MetricExpr {
    pub fn eval(&self, point: &[f64], eps_den: f64) -> Result<f64> {
        let vals: Vec<f64> = self.components.iter().map(|c| c.eval(point, eps_den)).collect::<Result<_>>()?;
        Ok(combine_values(self.combine, &vals))
    }
}

pub fn combine_values(combine: Combine, vals: &[f64]) -> f64 {
    match combine {
        Combine::Signed => vals[0],
        Combine::Abs => vals[0].abs(),
        Combine::MaxAbs => vals.iter().fold(0.0f64, |m, v| m.max(v.abs())),
    }
}

/// Interval of `|x|` given an interval `[lo, hi]` of `x`.
pub fn abs_interval(lo: f64, hi: f64) -> (f64, f64) {
    let (a, b) = (lo.abs(), hi.abs());
    if lo <= 0.0 && 0.0 <= hi {
        (0.0, a.max(b))
    } else {
        (a.min(b), a.max(b))
    }
}

/// Compile a metric over a scheme.
pub fn metric_expression(spec: &MetricSpec, roles: &NodeRoleMap, scheme: &ResponseScheme) -> Result<MetricExpr> {
    let formula = metric_formula(spec, roles)?;
    let mut components = Vec::new();
    for comp in &formula.components {
        let mut terms = Vec::new();
        for (w, e) in comp {
            terms.push((w.clone(), compile_probability(scheme, e)?));
        }
        components.push(RatioSum { terms });
    }
    Ok(MetricExpr { components, combine: formula.combine })
}

/// Frequency plug-in value of an observational metric on a table.
pub fn empirical_metric(table: &ObservedTable, spec: &MetricSpec) -> Result<f64> {
    if !spec.name.is_observational() {
        return Err(Error::NotObservational(spec.name.to_string()));
    }
    let roles = NodeRoleMap::new("A", "Y", "Yhat");
    let formula = metric_formula(spec, &roles)?;
    let count = |atoms: &[&Atom]| -> u64 {
        let mut total = 0;
        for a in 0..2u8 {
            for y in 0..2u8 {
                for yh in 0..2u8 {
                    let ok = atoms.iter().all(|at| {
                        let v = match at.node.as_str() {
                            "A" => a,
                            "Y" => y,
                            _ => yh,
                        };
                        v == at.value
                    });
                    if ok {
                        total += table.count(a, y, yh);
                    }
                }
            }
        }
        total
    };
    let mut vals = Vec::new();
    for comp in &formula.components {
        let mut acc = 0.0;
        for (w, e) in comp {
            let all: Vec<&Atom> = e.joint.iter().chain(&e.given).collect();
            let given: Vec<&Atom> = e.given.iter().collect();
            let den = if given.is_empty() { table.total() } else { count(&given) };
            if den == 0 {
                return Err(Error::ZeroCountCell(spec.name.to_string()));
            }
            acc += f64::from_rational(w) * count(&all) as f64 / den as f64;
        }
        vals.push(acc);
    }
    Ok(combine_values(formula.combine, &vals))
}

/// Catalog entry served to clients.
#[derive(Debug, Clone, Serialize)]
pub struct MetricInfo {
    pub name: &'static str,
    pub description: &'static str,
    pub observational: bool,
    pub required_roles: Vec<&'static str>,
    pub per_group: bool,
}

pub fn catalog() -> Vec<MetricInfo> {
    MetricName::ALL
        .iter()
        .map(|m| {
            let mut roles = vec!["attribute", "outcome", "prediction"];
            if m.needs_policy() {
                roles.push("policy");
            }
            MetricInfo {
                name: m.as_str(),
                description: m.description(),
                observational: m.is_observational(),
                required_roles: roles,
                per_group: m.is_per_group(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compile::compile_joint;
    use crate::graph::parse_edgelist;
    use crate::scheme::build_scheme;

    fn obs_scheme() -> (ResponseScheme, NodeRoleMap) {
        let mut d = parse_edgelist("A->Y, A->P, U->Y, U->P").unwrap();
        d.set_hidden(["U"]).unwrap();
        (build_scheme(&d).unwrap(), NodeRoleMap::new("A", "Y", "P"))
    }

    /// Point putting all mass on one response assignment.
    fn vertex(s: &ResponseScheme, asg: &[usize]) -> Vec<f64> {
        let mut x = vec![0.0; s.total_dim];
        for c in s.coordinates(&asg.to_vec()) {
            x[c] = 1.0;
        }
        x
    }

    #[test]
    fn names_round_trip() {
        for m in MetricName::ALL {
            assert_eq!(m.as_str().parse::<MetricName>().unwrap(), m);
        }
        assert!("XYZ".parse::<MetricName>().is_err());
    }

    #[test]
    fn fprp_on_deterministic_model() {
        let (s, roles) = obs_scheme();
        let expr = metric_expression(&MetricSpec::new(MetricName::FPRP), &roles, &s).unwrap();
        // P = A (id), Y = 0 (zero); mix A evenly
        let p = s.node_index("P").unwrap();
        let y = s.node_index("Y").unwrap();
        let mut asg = vec![0; 3];
        asg[p] = 2;
        asg[y] = 0;
        let mut x = vertex(&s, &asg);
        x[0] = 0.5;
        x[1] = 0.5;
        assert!((expr.eval(&x, 1e-9).unwrap() - (-1.0)).abs() < 1e-12);
        let abs = MetricSpec { signed: false, ..MetricSpec::new(MetricName::FPRP) };
        let e2 = metric_expression(&abs, &roles, &s).unwrap();
        assert!((e2.eval(&x, 1e-9).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn te_vanishes_without_path() {
        let mut d = parse_edgelist("A->Y, U->P, U->Y").unwrap();
        d.set_hidden(["U"]).unwrap();
        let s = build_scheme(&d).unwrap();
        let e = metric_expression(&MetricSpec::new(MetricName::TE), &NodeRoleMap::new("A", "Y", "P"), &s).unwrap();
        let diff = e.components[0].terms[0].1.numerator.sub(&e.components[0].terms[1].1.numerator);
        assert!(diff.is_zero());
    }

    #[test]
    fn cf_metrics_need_policy() {
        let (s, roles) = obs_scheme();
        assert!(matches!(
            metric_expression(&MetricSpec::new(MetricName::CF_FPRP), &roles, &s),
            Err(Error::MissingRole { .. })
        ));
    }

    #[test]
    fn dp_is_antisymmetric() {
        let (s, roles) = obs_scheme();
        let f = metric_formula(&MetricSpec::new(MetricName::DP), &roles).unwrap();
        let e0 = &f.components[0][0].1;
        let e1 = &f.components[0][1].1;
        let swap = |e: &Event| -> Event {
            let mut e = e.clone();
            for at in e.given.iter_mut() {
                at.value = 1 - at.value;
            }
            e
        };
        assert_eq!(&swap(e0), e1);
        let _ = compile_joint(&s, &e0.joint).unwrap();
    }

    #[test]
    fn empirical_values() {
        let mut t = ObservedTable::zeros();
        // A=0: 40 of 100 predicted positive; A=1: 60 of 100
        t.set(0, 0, 1, 40);
        t.set(0, 0, 0, 60);
        t.set(1, 1, 1, 60);
        t.set(1, 1, 0, 40);
        let dp = empirical_metric(&t, &MetricSpec::new(MetricName::DP)).unwrap();
        assert!((dp - (-0.2)).abs() < 1e-12);
        assert!(matches!(
            empirical_metric(&t, &MetricSpec::new(MetricName::FPRP)),
            Err(Error::ZeroCountCell(_))
        ));
        assert!(matches!(
            empirical_metric(&t, &MetricSpec::new(MetricName::TE)),
            Err(Error::NotObservational(_))
        ));
    }

    #[test]
    fn abs_rule() {
        assert_eq!(abs_interval(-0.2, 0.1), (0.0, 0.2));
        assert_eq!(abs_interval(-0.3, -0.1), (0.1, 0.3));
        assert_eq!(abs_interval(0.1, 0.4), (0.1, 0.4));
    }
}
