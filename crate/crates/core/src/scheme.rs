//! Response-function parameterization of every discrete SCM on a projected
//! DAG: one probability simplex per confounded component.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::Dag;

/// Number of response functions of an observed binary node: `2^(2^m)` with
/// `m` observed parents.
pub fn response_function_count(node: &str, dag: &Dag) -> Result<usize> {
    if !dag.is_observed(node) {
        return Err(Error::UnknownNode(node.to_string()));
    }
    let card = dag.cardinality(node);
    if card != 2 {
        return Err(Error::NonBinary { node: node.to_string(), cardinality: card });
    }
    let parents = dag.observed_parents(node);
    for p in &parents {
        let c = dag.cardinality(p);
        if c != 2 {
            return Err(Error::NonBinary { node: (*p).clone(), cardinality: c });
        }
    }
    let m = parents.len();
    if m > 4 {
        return Err(Error::Config(format!("node {node} has {m} observed parents; at most 4 supported")));
    }
    Ok(1usize << (1usize << m))
}

/// Output of response function `k` for parent configuration index `j`.
///
/// Parents are ordered by name and the first parent is the most significant
/// bit of `j`, so with one parent the functions are `zero, not, id, one`.
#[inline]
pub fn response_output(k: usize, j: usize) -> u8 {
    ((k >> j) & 1) as u8
}

/// Human-readable name of a response function for nodes with at most one parent.
pub fn response_name(k: usize, parents: usize) -> String {
    match (parents, k) {
        (0, 0) => "zero".into(),
        (0, 1) => "one".into(),
        (1, 0) => "zero".into(),
        (1, 1) => "not".into(),
        (1, 2) => "id".into(),
        (1, 3) => "one".into(),
        _ => format!("f{k}"),
    }
}

/// One simplex block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    /// Indices into `ResponseScheme::nodes`, ascending.
    pub nodes: Vec<usize>,
    /// Response-function count per node in `nodes`.
    pub counts: Vec<usize>,
    pub dim: usize,
    /// First coordinate of this block in the flat index space.
    pub offset: usize,
}

impl Block {
    /// Per-node response indices of a local coordinate (first node most significant).
    pub fn decode(&self, local: usize) -> Vec<usize> {
        let mut out = vec![0; self.nodes.len()];
        let mut rest = local;
        for i in (0..self.nodes.len()).rev() {
            out[i] = rest % self.counts[i];
            rest /= self.counts[i];
        }
        out
    }

    pub fn encode(&self, indices: &[usize]) -> usize {
        indices.iter().zip(&self.counts).fold(0, |acc, (k, c)| acc * c + k)
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.dim
    }
}

/// Choice of one response function per observed node.
pub type ResponseAssignment = Vec<usize>;

/// Simplex parameterization of all SCMs compatible with a projected DAG.
#[derive(Debug, Clone)]
pub struct ResponseScheme {
    pub dag: Dag,
    /// Observed nodes in lexicographic order.
    pub nodes: Vec<String>,
    /// Observed parents of each node, as indices into `nodes`, sorted by name.
    pub parents: Vec<Vec<usize>>,
    pub counts: Vec<usize>,
    pub blocks: Vec<Block>,
    /// Block holding each node.
    pub block_of: Vec<usize>,
    /// Observed nodes in topological order (indices).
    pub topo: Vec<usize>,
    pub total_dim: usize,
    index: BTreeMap<String, usize>,
}

impl ResponseScheme {
    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Block index and local offset of a flat coordinate.
    pub fn locate(&self, coord: usize) -> (usize, usize) {
        let b = self.blocks.partition_point(|blk| blk.offset + blk.dim <= coord);
        (b, coord - self.blocks[b].offset)
    }

    pub fn block_dims(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.dim).collect()
    }

    /// Response indices of every node in `block` for a local coordinate.
    pub fn decode(&self, block: usize, local: usize) -> Vec<(usize, usize)> {
        let blk = &self.blocks[block];
        blk.nodes.iter().copied().zip(blk.decode(local)).collect()
    }

    /// Flat coordinate of each block selected by a full assignment.
    pub fn coordinates(&self, assignment: &ResponseAssignment) -> Vec<usize> {
        self.blocks
            .iter()
            .map(|b| {
                let idx: Vec<usize> = b.nodes.iter().map(|&n| assignment[n]).collect();
                b.offset + b.encode(&idx)
            })
            .collect()
    }

    /// Full assignment from one flat coordinate per block.
    pub fn assignment(&self, coords: &[usize]) -> ResponseAssignment {
        let mut out = vec![0; self.nodes.len()];
        for (b, &c) in self.blocks.iter().zip(coords) {
            for (n, k) in b.nodes.iter().zip(b.decode(c - b.offset)) {
                out[*n] = k;
            }
        }
        out
    }

    /// Parent configuration index of `node` given realized values.
    #[inline]
    pub fn parent_config(&self, node: usize, values: &[u8]) -> usize {
        self.parents[node].iter().fold(0, |acc, &p| (acc << 1) | values[p] as usize)
    }

    /// Recursive substitution: intervened nodes take their forced value,
    /// all others apply their response function. Values indexed like `nodes`.
    pub fn realize_indexed(&self, assignment: &[usize], interventions: &[(usize, u8)]) -> Vec<u8> {
        let mut values = vec![0u8; self.nodes.len()];
        for &n in &self.topo {
            values[n] = match interventions.iter().find(|(i, _)| *i == n) {
                Some((_, v)) => *v,
                None => response_output(assignment[n], self.parent_config(n, &values)),
            };
        }
        values
    }

    /// Named-node convenience wrapper around [`Self::realize_indexed`].
    pub fn realize(
        &self,
        assignment: &ResponseAssignment,
        interventions: &BTreeMap<String, u8>,
    ) -> Result<BTreeMap<String, u8>> {
        if assignment.len() != self.nodes.len() {
            return Err(Error::Config("assignment length does not match scheme".into()));
        }
        for (n, &k) in assignment.iter().enumerate() {
            if k >= self.counts[n] {
                return Err(Error::ValueOutOfDomain { node: self.nodes[n].clone(), value: k as i64 });
            }
        }
        let mut iv = Vec::new();
        for (name, &v) in interventions {
            let i = self.node_index(name).ok_or_else(|| Error::UnknownNode(name.clone()))?;
            if v > 1 {
                return Err(Error::ValueOutOfDomain { node: name.clone(), value: v as i64 });
            }
            iv.push((i, v));
        }
        let values = self.realize_indexed(assignment, &iv);
        Ok(self.nodes.iter().cloned().zip(values).collect())
    }

    /// All full assignments, in lexicographic coordinate order.
    pub fn assignments(&self) -> impl Iterator<Item = ResponseAssignment> + '_ {
        let total: usize = self.blocks.iter().map(|b| b.dim).product();
        (0..total).map(move |mut i| {
            let mut coords = vec![0; self.blocks.len()];
            for (b, blk) in self.blocks.iter().enumerate().rev() {
                coords[b] = blk.offset + i % blk.dim;
                i /= blk.dim;
            }
            self.assignment(&coords)
        })
    }
}

/// Build the simplex parameterization of a latent-projected DAG.
pub fn build_scheme(dag: &Dag) -> Result<ResponseScheme> {
    let components = dag.confounded_components()?;
    let nodes: Vec<String> = dag.observed().cloned().collect();
    let index: BTreeMap<String, usize> =
        nodes.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
    let mut counts = Vec::with_capacity(nodes.len());
    let mut parents = Vec::with_capacity(nodes.len());
    for n in &nodes {
        counts.push(response_function_count(n, dag)?);
        parents.push(dag.observed_parents(n).iter().map(|p| index[p.as_str()]).collect());
    }
    let mut blocks = Vec::new();
    let mut block_of = vec![0; nodes.len()];
    let mut offset = 0;
    for (b, comp) in components.iter().enumerate() {
        let idx: Vec<usize> = comp.iter().map(|n| index[n.as_str()]).collect();
        let cnt: Vec<usize> = idx.iter().map(|&i| counts[i]).collect();
        let dim = cnt.iter().product();
        for &i in &idx {
            block_of[i] = b;
        }
        blocks.push(Block { nodes: idx, counts: cnt, dim, offset });
        offset += dim;
    }
    let topo = dag
        .topological_order()?
        .into_iter()
        .filter_map(|n| index.get(&n).copied())
        .collect();
    Ok(ResponseScheme {
        dag: dag.clone(),
        nodes,
        parents,
        counts,
        blocks,
        block_of,
        topo,
        total_dim: offset,
        index,
    })
}
