//! Causal DAGs over named binary nodes: edgelist parsing, latent projection
//! and confounded components.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `[A-Za-z][A-Za-z0-9_]*`
pub fn is_valid_node_name(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Directed acyclic graph with hidden and conditioned node annotations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dag {
    nodes: BTreeSet<String>,
    edges: BTreeSet<(String, String)>,
    hidden: BTreeSet<String>,
    conditioned: BTreeSet<String>,
    cardinality: BTreeMap<String, usize>,
}

impl Dag {
    /// Build and validate a graph from explicit parts.
    pub fn new<N, E>(nodes: N, edges: E) -> Result<Self>
    where
        N: IntoIterator,
        N::Item: Into<String>,
        E: IntoIterator<Item = (String, String)>,
    {
        let mut dag = Dag {
            nodes: BTreeSet::new(),
            edges: BTreeSet::new(),
            hidden: BTreeSet::new(),
            conditioned: BTreeSet::new(),
            cardinality: BTreeMap::new(),
        };
        for n in nodes {
            let n = n.into();
            if !is_valid_node_name(&n) {
                return Err(Error::InvalidNodeName(n));
            }
            dag.nodes.insert(n);
        }
        for (from, to) in edges {
            for end in [&from, &to] {
                if !dag.nodes.contains(end) {
                    return Err(Error::UnknownNode(end.clone()));
                }
            }
            if from == to {
                return Err(Error::Cycle(from));
            }
            if !dag.edges.insert((from.clone(), to.clone())) {
                return Err(Error::DuplicateEdge(from, to));
            }
        }
        dag.topological_order()?;
        Ok(dag)
    }

    pub fn nodes(&self) -> &BTreeSet<String> {
        &self.nodes
    }

    pub fn edges(&self) -> &BTreeSet<(String, String)> {
        &self.edges
    }

    pub fn hidden(&self) -> &BTreeSet<String> {
        &self.hidden
    }

    pub fn conditioned(&self) -> &BTreeSet<String> {
        &self.conditioned
    }

    pub fn contains(&self, node: &str) -> bool {
        self.nodes.contains(node)
    }

    pub fn is_hidden(&self, node: &str) -> bool {
        self.hidden.contains(node)
    }

    pub fn is_observed(&self, node: &str) -> bool {
        self.nodes.contains(node) && !self.hidden.contains(node)
    }

    pub fn observed(&self) -> impl Iterator<Item = &String> {
        self.nodes.iter().filter(move |n| !self.hidden.contains(*n))
    }

    pub fn cardinality(&self, node: &str) -> usize {
        self.cardinality.get(node).copied().unwrap_or(2)
    }

    pub fn set_cardinality(&mut self, node: &str, card: usize) -> Result<()> {
        if !self.nodes.contains(node) {
            return Err(Error::UnknownNode(node.to_string()));
        }
        if card < 2 {
            return Err(Error::NonBinary { node: node.to_string(), cardinality: card });
        }
        self.cardinality.insert(node.to_string(), card);
        Ok(())
    }

    pub fn set_hidden<I, S>(&mut self, hidden: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        for h in hidden {
            let h = h.as_ref();
            if !self.nodes.contains(h) {
                return Err(Error::UnknownNode(h.to_string()));
            }
            if self.conditioned.contains(h) {
                return Err(Error::HiddenConditioned(h.to_string()));
            }
            self.hidden.insert(h.to_string());
        }
        Ok(())
    }

    pub fn set_conditioned<I, S>(&mut self, cond: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        for c in cond {
            let c = c.as_ref();
            if !self.nodes.contains(c) {
                return Err(Error::UnknownNode(c.to_string()));
            }
            if self.hidden.contains(c) {
                return Err(Error::HiddenConditioned(c.to_string()));
            }
            self.conditioned.insert(c.to_string());
        }
        Ok(())
    }

    pub fn parents(&self, node: &str) -> Vec<&String> {
        self.edges.iter().filter(|(_, c)| c == node).map(|(p, _)| p).collect()
    }

    pub fn children(&self, node: &str) -> Vec<&String> {
        self.edges.iter().filter(|(p, _)| p == node).map(|(_, c)| c).collect()
    }

    /// Observed parents, sorted by name.
    pub fn observed_parents(&self, node: &str) -> Vec<&String> {
        self.parents(node).into_iter().filter(|p| !self.hidden.contains(*p)).collect()
    }

    /// Kahn's algorithm with lexicographic tie-break.
    pub fn topological_order(&self) -> Result<Vec<String>> {
        let mut indegree: BTreeMap<&str, usize> =
            self.nodes.iter().map(|n| (n.as_str(), 0)).collect();
        for (_, c) in &self.edges {
            *indegree.get_mut(c.as_str()).expect("edge endpoint") += 1;
        }
        let mut ready: BTreeSet<&str> =
            indegree.iter().filter(|(_, d)| **d == 0).map(|(n, _)| *n).collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(n) = ready.pop_first() {
            order.push(n.to_string());
            for (p, c) in &self.edges {
                if p == n {
                    let d = indegree.get_mut(c.as_str()).expect("edge endpoint");
                    *d -= 1;
                    if *d == 0 {
                        ready.insert(c.as_str());
                    }
                }
            }
        }
        if order.len() != self.nodes.len() {
            let stuck = indegree
                .iter()
                .find(|(n, d)| **d > 0 && !order.iter().any(|o| o == *n))
                .map(|(n, _)| n.to_string())
                .unwrap_or_default();
            return Err(Error::Cycle(stuck));
        }
        Ok(order)
    }

    /// Ancestors of `node` including itself.
    pub fn ancestors(&self, node: &str) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut stack = vec![node.to_string()];
        while let Some(n) = stack.pop() {
            if out.insert(n.clone()) {
                for p in self.parents(&n) {
                    stack.push(p.clone());
                }
            }
        }
        out
    }

    /// Canonical edgelist: edges sorted by (parent, child), joined by `", "`.
    pub fn to_edgelist(&self) -> String {
        self.edges.iter().map(|(p, c)| format!("{p}->{c}")).collect::<Vec<_>>().join(", ")
    }

    /// Mark `hide` as unobserved and marginalize every hidden node.
    ///
    /// Step one rewires `Z -> U -> W` into `Z -> W` and drops the incoming
    /// edges of `U`; hidden nodes are visited in lexicographic order. Step two
    /// drops any hidden node whose children are a subset of another surviving
    /// hidden node's children (for identical child sets the lexicographically
    /// larger one goes), as well as hidden nodes without children.
    pub fn latent_project(&self, hide: &BTreeSet<String>, roles: Option<&NodeRoleMap>) -> Result<Dag> {
        for h in hide {
            if !self.nodes.contains(h) {
                return Err(Error::UnknownNode(h.clone()));
            }
            if self.conditioned.contains(h) {
                return Err(Error::HiddenConditioned(h.clone()));
            }
            if let Some(role) = roles.and_then(|r| r.role_of(h)) {
                return Err(Error::RoleNodeHidden { node: h.clone(), role: role.to_string() });
            }
        }
        let hidden: BTreeSet<String> = self.hidden.union(hide).cloned().collect();
        let mut edges = self.edges.clone();

        for u in &hidden {
            let parents: Vec<String> =
                edges.iter().filter(|(_, c)| c == u).map(|(p, _)| p.clone()).collect();
            let children: Vec<String> =
                edges.iter().filter(|(p, _)| p == u).map(|(_, c)| c.clone()).collect();
            for z in &parents {
                for w in &children {
                    edges.insert((z.clone(), w.clone()));
                }
            }
            edges.retain(|(_, c)| c != u);
        }

        let child_set = |edges: &BTreeSet<(String, String)>, u: &str| -> BTreeSet<String> {
            edges.iter().filter(|(p, _)| p == u).map(|(_, c)| c.clone()).collect()
        };
        let mut alive: BTreeSet<String> = hidden.clone();
        loop {
            let mut removed = None;
            for u in &alive {
                let cu = child_set(&edges, u);
                if cu.is_empty() {
                    removed = Some(u.clone());
                    break;
                }
                let dominated = alive.iter().any(|v| {
                    if v == u {
                        return false;
                    }
                    let cv = child_set(&edges, v);
                    cu.is_subset(&cv) && (cu != cv || u > v)
                });
                if dominated {
                    removed = Some(u.clone());
                    break;
                }
            }
            match removed {
                Some(u) => {
                    edges.retain(|(p, c)| p != &u && c != &u);
                    alive.remove(&u);
                }
                None => break,
            }
        }

        let deleted: BTreeSet<&String> = hidden.difference(&alive).collect();
        let nodes: BTreeSet<String> =
            self.nodes.iter().filter(|n| !deleted.contains(n)).cloned().collect();
        let cardinality =
            self.cardinality.iter().filter(|(n, _)| nodes.contains(*n)).map(|(n, c)| (n.clone(), *c)).collect();
        Ok(Dag { nodes, edges, hidden: alive, conditioned: self.conditioned.clone(), cardinality })
    }

    /// Partition of observed nodes by shared hidden parents (transitively).
    pub fn confounded_components(&self) -> Result<Vec<Vec<String>>> {
        for h in &self.hidden {
            if !self.parents(h).is_empty() {
                return Err(Error::HiddenWithParent(h.clone()));
            }
        }
        let observed: Vec<&String> = self.observed().collect();
        let index: BTreeMap<&str, usize> =
            observed.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let mut parent: Vec<usize> = (0..observed.len()).collect();
        fn find(parent: &mut [usize], mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        for h in &self.hidden {
            let kids: Vec<usize> = self
                .children(h)
                .iter()
                .filter_map(|c| index.get(c.as_str()).copied())
                .collect();
            for w in kids.windows(2) {
                let (a, b) = (find(&mut parent, w[0]), find(&mut parent, w[1]));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        let mut blocks: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        for i in 0..observed.len() {
            let r = find(&mut parent, i);
            blocks.entry(r).or_default().push(observed[i].clone());
        }
        let mut out: Vec<Vec<String>> = blocks.into_values().collect();
        for b in &mut out {
            b.sort();
        }
        out.sort_by(|a, b| a[0].cmp(&b[0]));
        Ok(out)
    }
}

impl fmt::Display for Dag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_edgelist())
    }
}

/// Parse `A->Y, A->P, ...`. Whitespace around tokens is ignored.
pub fn parse_edgelist(text: &str) -> Result<Dag> {
    if text.trim().is_empty() {
        return Err(Error::EmptyEdgelist);
    }
    let mut nodes = BTreeSet::new();
    let mut edges = Vec::new();
    let mut seen = BTreeSet::new();
    for item in text.split(',') {
        let item_t = item.trim();
        let (from, to) = item_t
            .split_once("->")
            .ok_or_else(|| Error::MalformedEdge { item: item_t.to_string() })?;
        let (from, to) = (from.trim(), to.trim());
        for n in [from, to] {
            if n.is_empty() || n.contains("->") {
                return Err(Error::MalformedEdge { item: item_t.to_string() });
            }
            if !is_valid_node_name(n) {
                return Err(Error::InvalidNodeName(n.to_string()));
            }
        }
        if from == to {
            return Err(Error::Cycle(from.to_string()));
        }
        if !seen.insert((from.to_string(), to.to_string())) {
            return Err(Error::DuplicateEdge(from.to_string(), to.to_string()));
        }
        nodes.insert(from.to_string());
        nodes.insert(to.to_string());
        edges.push((from.to_string(), to.to_string()));
    }
    Dag::new(nodes, edges)
}

/// Which node plays which part in a fairness audit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeRoleMap {
    pub attribute: String,
    pub outcome: String,
    pub prediction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proxy: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<String>,
}

impl NodeRoleMap {
    pub fn new(attribute: &str, outcome: &str, prediction: &str) -> Self {
        NodeRoleMap {
            attribute: attribute.into(),
            outcome: outcome.into(),
            prediction: prediction.into(),
            proxy: None,
            selection: None,
            policy: None,
        }
    }

    fn entries(&self) -> Vec<(&'static str, &String)> {
        let mut v = vec![
            ("attribute", &self.attribute),
            ("outcome", &self.outcome),
            ("prediction", &self.prediction),
        ];
        if let Some(p) = &self.proxy {
            v.push(("proxy", p));
        }
        if let Some(s) = &self.selection {
            v.push(("selection", s));
        }
        if let Some(d) = &self.policy {
            v.push(("policy", d));
        }
        v
    }

    pub fn role_of(&self, node: &str) -> Option<&'static str> {
        self.entries().into_iter().find(|(_, n)| n.as_str() == node).map(|(r, _)| r)
    }

    /// Node whose values appear in the observed table's `Y` column.
    pub fn measured_outcome(&self) -> &str {
        self.proxy.as_deref().unwrap_or(&self.outcome)
    }

    pub fn validate(&self, dag: &Dag) -> Result<()> {
        let entries = self.entries();
        let mut seen = BTreeSet::new();
        for (_, n) in &entries {
            if !dag.contains(n) {
                return Err(Error::UnknownNode((*n).clone()));
            }
            if dag.is_hidden(n) {
                return Err(Error::RoleNodeHidden {
                    node: (*n).clone(),
                    role: self.role_of(n).unwrap_or("role").to_string(),
                });
            }
            if !seen.insert(n.as_str()) {
                return Err(Error::DuplicateRole((*n).clone()));
            }
        }
        Ok(())
    }

    /// Fill the optional roles from graph structure.
    ///
    /// The proxy is the unique observed child of the outcome that carries no
    /// role and is not conditioned; the selection node is the single
    /// conditioned node; the policy is the unique unconditioned, role-free
    /// observed parent of the outcome.
    pub fn infer_optional(&mut self, dag: &Dag) {
        let base: BTreeSet<&str> =
            [self.attribute.as_str(), self.outcome.as_str(), self.prediction.as_str()].into();
        let free = |n: &&String| {
            dag.is_observed(n) && !dag.conditioned().contains(*n) && !base.contains(n.as_str())
        };
        let kids: Vec<&String> = dag.children(&self.outcome).into_iter().filter(free).collect();
        self.proxy = if kids.len() == 1 { Some(kids[0].clone()) } else { None };
        self.selection = if dag.conditioned().len() == 1 {
            dag.conditioned().iter().next().cloned()
        } else {
            None
        };
        let parents: Vec<&String> = dag
            .parents(&self.outcome)
            .into_iter()
            .filter(free)
            .filter(|p| Some(*p) != self.proxy.as_ref())
            .collect();
        self.policy = if parents.len() == 1 { Some(parents[0].clone()) } else { None };
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(xs: &[&str]) -> BTreeSet<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn children(d: &Dag, n: &str) -> BTreeSet<String> {
        d.children(n).into_iter().cloned().collect()
    }

    #[test]
    fn parses_selection_edgelist() {
        let d = parse_edgelist("A->Y, A->P, A->S, U->P, U->Y, U->S, Y->S").unwrap();
        assert_eq!(d.nodes().len(), 5);
        assert_eq!(d.edges().len(), 7);
        assert!(d.hidden().is_empty() && d.conditioned().is_empty());
    }

    #[test]
    fn rejects_cycles_and_garbage() {
        assert!(matches!(parse_edgelist("A->A"), Err(Error::Cycle(_))));
        assert!(matches!(parse_edgelist("A->Y, Y->A"), Err(Error::Cycle(_))));
        assert!(matches!(parse_edgelist("A-Y"), Err(Error::MalformedEdge { .. })));
        assert!(matches!(parse_edgelist("A->Y, A->Y"), Err(Error::DuplicateEdge(..))));
        assert!(matches!(parse_edgelist("  "), Err(Error::EmptyEdgelist)));
        assert!(matches!(parse_edgelist("A->Y,"), Err(Error::MalformedEdge { .. })));
        assert!(matches!(parse_edgelist("1A->Y"), Err(Error::InvalidNodeName(_))));
        assert!(matches!(parse_edgelist("A->B->C"), Err(Error::MalformedEdge { .. })));
    }

    #[test]
    fn canonical_serialization_round_trips() {
        let d = parse_edgelist("Y->S, A->Y,A->P").unwrap();
        assert_eq!(d.to_edgelist(), "A->P, A->Y, Y->S");
        assert_eq!(parse_edgelist(&d.to_edgelist()).unwrap(), d);
    }

    #[test]
    fn marginalization_step_one() {
        let mut d = parse_edgelist("X1->U, X2->U, U->X3, U->X4, U->X5").unwrap();
        d.set_hidden(["U"]).unwrap();
        let p = d.latent_project(&BTreeSet::new(), None).unwrap();
        assert_eq!(children(&p, "X1"), set(&["X3", "X4", "X5"]));
        assert_eq!(children(&p, "X2"), set(&["X3", "X4", "X5"]));
        assert_eq!(children(&p, "U"), set(&["X3", "X4", "X5"]));
        assert!(p.parents("U").is_empty());
        assert!(p.is_hidden("U"));
    }

    #[test]
    fn marginalization_step_two() {
        let mut d = parse_edgelist("U1->X3, U1->X4, U1->X5, U2->X3, U2->X4").unwrap();
        d.set_hidden(["U1", "U2"]).unwrap();
        let p = d.latent_project(&BTreeSet::new(), None).unwrap();
        assert!(p.contains("U1"));
        assert!(!p.contains("U2"));
        assert_eq!(p.hidden(), &set(&["U1"]));
    }

    #[test]
    fn identical_child_sets_keep_smaller_name() {
        let mut d = parse_edgelist("U1->X, U1->Y, U2->X, U2->Y").unwrap();
        d.set_hidden(["U2", "U1"]).unwrap();
        let p = d.latent_project(&BTreeSet::new(), None).unwrap();
        assert_eq!(p.hidden(), &set(&["U1"]));
    }

    #[test]
    fn proxy_graph_projection() {
        let d = parse_edgelist("A->X, A->Y, X->P, A->P, X->Y, Y->Yp, A->Yp").unwrap();
        let p = d.latent_project(&set(&["X"]), None).unwrap();
        let expected: BTreeSet<(String, String)> = [
            ("A", "P"),
            ("A", "Y"),
            ("A", "Yp"),
            ("X", "P"),
            ("X", "Y"),
            ("Y", "Yp"),
        ]
        .iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
        assert_eq!(p.edges(), &expected);
        assert_eq!(p.hidden(), &set(&["X"]));

        let dashed = parse_edgelist("A->X, A->Y, X->P, A->P, X->Y, Y->Yp, A->Yp, X->Yp").unwrap();
        let p = dashed.latent_project(&set(&["X"]), None).unwrap();
        assert_eq!(children(&p, "X"), set(&["P", "Y", "Yp"]));
    }

    #[test]
    fn projection_rejects_role_nodes() {
        let d = parse_edgelist("A->Y, A->P").unwrap();
        let roles = NodeRoleMap::new("A", "Y", "P");
        assert!(matches!(
            d.latent_project(&set(&["Y"]), Some(&roles)),
            Err(Error::RoleNodeHidden { .. })
        ));
        assert!(matches!(d.latent_project(&set(&["Q"]), None), Err(Error::UnknownNode(_))));
    }

    #[test]
    fn extra_latent_does_not_change_projection() {
        let base = "A->X, A->Y, X->P, A->P, X->Y, Y->Yp, A->Yp, X->Yp";
        let d = parse_edgelist(base).unwrap();
        let alone = d.latent_project(&set(&["X"]), None).unwrap();
        for extra in ["V->Y, V->Yp", "Y->V, V->Yp", "A->V, V->Yp", "V->Yp"] {
            let d2 = parse_edgelist(&format!("{base}, {extra}")).unwrap();
            let both = d2.latent_project(&set(&["V", "X"]), None).unwrap();
            assert_eq!(both, alone, "extra edges {extra}");
        }
    }

    #[test]
    fn components() {
        let mut d = parse_edgelist("A->Y, A->P, A->Yp, Y->Yp, U->Y, U->P").unwrap();
        d.set_hidden(["U"]).unwrap();
        let c = d.confounded_components().unwrap();
        assert_eq!(c, vec![vec!["A".to_string()], vec!["P".into(), "Y".into()], vec!["Yp".into()]]);

        let plain = parse_edgelist("A->Y, Y->Z").unwrap();
        assert_eq!(plain.confounded_components().unwrap().len(), 3);

        let mut bad = parse_edgelist("A->U, U->Y").unwrap();
        bad.set_hidden(["U"]).unwrap();
        assert!(matches!(bad.confounded_components(), Err(Error::HiddenWithParent(_))));
    }

    #[test]
    fn infers_optional_roles() {
        let mut d = parse_edgelist("A->Z, A->P, A->Y, U->Z, U->P, Z->Y").unwrap();
        d.set_hidden(["U"]).unwrap();
        let mut roles = NodeRoleMap::new("A", "Z", "P");
        roles.infer_optional(&d);
        assert_eq!(roles.proxy.as_deref(), Some("Y"));
        assert_eq!(roles.measured_outcome(), "Y");
        assert!(roles.policy.is_none());

        let mut e = parse_edgelist("A->T, A->Y, A->P, U->Y, U->P, U->T, T->Y").unwrap();
        e.set_hidden(["U"]).unwrap();
        let mut roles = NodeRoleMap::new("A", "Y", "P");
        roles.infer_optional(&e);
        assert_eq!(roles.policy.as_deref(), Some("T"));
        assert!(roles.proxy.is_none());
    }
}
