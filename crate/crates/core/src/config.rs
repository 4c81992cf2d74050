//! Bias configuration files.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{parse_constraint, Constraint};
use crate::graph::{parse_edgelist, Dag, NodeRoleMap};

/// Reserved budget symbol in constraint strings.
pub const BUDGET_SYMBOL: &str = "D";

/// A bias config: DAG, hidden and conditioning nodes, roles and constraints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasConfig {
    pub dag_str: String,
    pub unob: Vec<String>,
    pub cond_nodes: Vec<String>,
    pub attribute_node: String,
    pub outcome_node: String,
    pub prediction_node: String,
    pub constraints: Vec<String>,
}

/// Validated pieces of a config.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    /// Graph as written, with hidden and conditioned nodes marked.
    pub dag: Dag,
    /// Latent projection used for the parameterization.
    pub projected: Dag,
    pub roles: NodeRoleMap,
    pub constraints: Vec<Constraint>,
}

impl BiasConfig {
    /// Parse and validate JSON text.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: BiasConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.resolve()?;
        Ok(cfg)
    }

    /// Pretty JSON in field order.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn dag(&self) -> Result<Dag> {
        let mut dag = parse_edgelist(&self.dag_str)?;
        if dag.contains(BUDGET_SYMBOL) {
            return Err(Error::Config(format!(
                "node name {BUDGET_SYMBOL} is reserved for the budget; rename the node (e.g. T)"
            )));
        }
        dag.set_hidden(&self.unob)?;
        dag.set_conditioned(&self.cond_nodes)?;
        Ok(dag)
    }

    pub fn resolve(&self) -> Result<ResolvedConfig> {
        let dag = self.dag()?;
        let mut roles = NodeRoleMap::new(&self.attribute_node, &self.outcome_node, &self.prediction_node);
        roles.validate(&dag)?;
        let mut hide = BTreeSet::new();
        if dag.contains("X") && roles.role_of("X").is_none() && !dag.conditioned().contains("X") {
            hide.insert("X".to_string());
        }
        let projected = dag.latent_project(&hide, Some(&roles))?;
        roles.infer_optional(&projected);
        roles.validate(&projected)?;
        let constraints = self
            .constraints
            .iter()
            .enumerate()
            .map(|(index, c)| {
                parse_constraint(c, &projected).map_err(|e| Error::InConstraint {
                    index,
                    text: c.clone(),
                    source: Box::new(e),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ResolvedConfig { dag, projected, roles, constraints })
    }

    /// Union of two configs describing different biases on one population.
    /// Roles must agree; the constraints of each keep their own budget.
    pub fn merge(&self, other: &BiasConfig) -> Result<(BiasConfig, usize)> {
        if self.attribute_node != other.attribute_node
            || self.outcome_node != other.outcome_node
            || self.prediction_node != other.prediction_node
        {
            return Err(Error::Config("merged configs must share attribute, outcome and prediction nodes".into()));
        }
        let a = self.dag()?;
        let b = other.dag()?;
        let mut edges: BTreeSet<(String, String)> = a.edges().clone();
        edges.extend(b.edges().iter().cloned());
        let dag_str = edges.iter().map(|(p, c)| format!("{p}->{c}")).collect::<Vec<_>>().join(", ");
        let union = |x: &[String], y: &[String]| -> Vec<String> {
            x.iter().chain(y).cloned().collect::<BTreeSet<_>>().into_iter().collect()
        };
        let mut constraints = self.constraints.clone();
        constraints.extend(other.constraints.iter().cloned());
        let merged = BiasConfig {
            dag_str,
            unob: union(&self.unob, &other.unob),
            cond_nodes: union(&self.cond_nodes, &other.cond_nodes),
            attribute_node: self.attribute_node.clone(),
            outcome_node: self.outcome_node.clone(),
            prediction_node: self.prediction_node.clone(),
            constraints,
        };
        merged.resolve()?;
        Ok((merged, self.constraints.len()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SELECTION: &str = r#"{
    "dag_str": "A->Y, A->P, A->S, U->P, U->Y, U->S, Y->S",
    "unob": ["U"],
    "cond_nodes": ["S"],
    "attribute_node": "A",
    "outcome_node": "Y",
    "prediction_node": "P",
    "constraints": ["P(S = 1) >= 1 - D"]
}"#;

    #[test]
    fn loads_selection_config() {
        let cfg = BiasConfig::from_json(SELECTION).unwrap();
        assert_eq!(cfg.cond_nodes, vec!["S"]);
        assert_eq!(cfg.constraints, vec!["P(S = 1) >= 1 - D"]);
        let r = cfg.resolve().unwrap();
        assert_eq!(r.roles.selection.as_deref(), Some("S"));
        let strip = |s: &str| s.chars().filter(|c| !c.is_whitespace()).collect::<String>();
        assert_eq!(strip(&cfg.to_json()), strip(SELECTION));
    }

    #[test]
    fn proxy_config_with_x() {
        let text = r#"{"dag_str": "A->X, A->Z, X->P, A->P, X->Z, Z->Y, A->Y", "unob": [], "cond_nodes": [],
            "attribute_node": "A", "outcome_node": "Z", "prediction_node": "P",
            "constraints": ["P(Z = 0 & Y = 0) + P(Z = 1 & Y = 1) >= 1 - D"]}"#;
        let r = BiasConfig::from_json(text).unwrap().resolve().unwrap();
        assert!(r.projected.is_hidden("X"));
        assert_eq!(r.roles.proxy.as_deref(), Some("Y"));
    }

    #[test]
    fn rejects_bad_configs() {
        let missing_pred = SELECTION.replace("A->P, ", "").replace("U->P, ", "");
        assert!(BiasConfig::from_json(&missing_pred).is_err());
        let unknown_field = SELECTION.replace("\"unob\"", "\"extra\": 1, \"unob\"");
        assert!(BiasConfig::from_json(&unknown_field).is_err());
        let bad_constraint = SELECTION.replace("P(S = 1) >= 1 - D", "P(S = 1 >= 1 - D");
        assert!(BiasConfig::from_json(&bad_constraint).is_err());
        let missing = SELECTION.replace("\"cond_nodes\": [\"S\"],", "");
        assert!(BiasConfig::from_json(&missing).is_err());
    }

    #[test]
    fn merge_two_biases() {
        let proxy = BiasConfig {
            dag_str: "A->Z, A->P, A->Y, U->Z, U->P, Z->Y".into(),
            unob: vec!["U".into()],
            cond_nodes: vec![],
            attribute_node: "A".into(),
            outcome_node: "Z".into(),
            prediction_node: "P".into(),
            constraints: vec!["P(Z = 0 & Y = 0) + P(Z = 1 & Y = 1) >= 1 - D".into()],
        };
        let sel = BiasConfig {
            dag_str: "A->Z, A->P, A->S, U->P, U->Z, U->S, Z->S".into(),
            unob: vec!["U".into()],
            cond_nodes: vec!["S".into()],
            attribute_node: "A".into(),
            outcome_node: "Z".into(),
            prediction_node: "P".into(),
            constraints: vec!["P(S = 1) >= 1 - D".into()],
        };
        let (m, split) = proxy.merge(&sel).unwrap();
        assert_eq!(split, 1);
        let r = m.resolve().unwrap();
        assert_eq!(r.roles.proxy.as_deref(), Some("Y"));
        assert_eq!(r.roles.selection.as_deref(), Some("S"));
    }
}
