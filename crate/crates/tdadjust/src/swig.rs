// SPDX-License-Identifier: MIT
//! Single-world intervention graphs: each treatment splits into a random half
//! (keeping incoming edges) and a fixed half (taking over outgoing edges).
//!
//! Fixed halves are constants under the intervention, so every d-separation
//! query on the SWIG conditions on them implicitly; they block any path they
//! sit on. Having in-degree zero they can never open a collider, so this is
//! equivalent to deleting them for separation purposes.

use crate::adjust::AdjustmentSet;
use crate::dsep::{d_separated, DsepQuery};
use crate::error::{Error, Result};
use crate::graph::{Dag, DirectedStructure, NodeRole, NodeSet, MAX_NODES};

/// A fixed treatment assignment (a_0, ..., a_p); treatments are binary here.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Regime {
    values: Vec<u8>,
}

impl Regime {
    pub fn new(dag: &Dag, values: Vec<u8>) -> Result<Self> {
        if values.len() != dag.period_count() {
            return Err(Error::Adjustment(format!(
                "regime has {} values, graph has {} treatment times",
                values.len(),
                dag.period_count()
            )));
        }
        if values.iter().any(|&v| v > 1) {
            return Err(Error::Adjustment("treatment support is {0, 1}".into()));
        }
        Ok(Regime { values })
    }

    /// The all-ones regime (a ≡ 1).
    pub fn all_ones(dag: &Dag) -> Self {
        Regime {
            values: vec![1; dag.period_count()],
        }
    }

    /// Every regime over the binary support, in lexicographic order.
    pub fn all(dag: &Dag) -> Vec<Regime> {
        let p1 = dag.period_count();
        (0..1u32 << p1)
            .map(|bits| Regime {
                values: (0..p1).map(|k| (bits >> (p1 - 1 - k) & 1) as u8).collect(),
            })
            .collect()
    }

    pub fn value(&self, k: usize) -> u8 {
        self.values[k]
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn label(&self) -> String {
        let vals: Vec<String> = self.values.iter().map(|v| v.to_string()).collect();
        format!("({})", vals.join(","))
    }
}

/// SWIG over a base [`Dag`]. Base node indices are reused for the random
/// halves; fixed halves are appended after them.
#[derive(Clone, Debug)]
pub struct Swig {
    base_nodes: usize,
    names: Vec<String>,
    parent_sets: Vec<NodeSet>,
    child_sets: Vec<NodeSet>,
    fixed_halves: Vec<usize>,
    fixed_set: NodeSet,
    relabeled: NodeSet,
}

impl DirectedStructure for Swig {
    fn node_count(&self) -> usize {
        self.names.len()
    }
    fn parents(&self, v: usize) -> NodeSet {
        self.parent_sets[v]
    }
    fn children(&self, v: usize) -> NodeSet {
        self.child_sets[v]
    }
}

/// Splits every treatment node of `dag` into random and fixed halves.
pub fn build_swig(dag: &Dag) -> Result<Swig> {
    let n = dag.node_count();
    let t = dag.period_count();
    if n + t > MAX_NODES {
        return Err(Error::TooLarge {
            what: "SWIG",
            detail: format!("{} nodes after splitting (limit {MAX_NODES})", n + t),
        });
    }
    let mut names: Vec<String> = (0..n).map(|v| dag.name(v).to_string()).collect();
    let mut fixed_halves = Vec::with_capacity(t);
    let mut fixed_set = NodeSet::EMPTY;
    for k in 0..t {
        let a = dag.treatment(k);
        let mut fixed_name = dag.name(a).to_lowercase();
        if names.contains(&fixed_name) {
            fixed_name.push('*');
        }
        let idx = names.len();
        names.push(fixed_name);
        fixed_halves.push(idx);
        fixed_set.insert(idx);
    }
    let total = names.len();
    let mut parent_sets = vec![NodeSet::EMPTY; total];
    let mut child_sets = vec![NodeSet::EMPTY; total];
    let fixed_of = |v: usize| -> usize {
        match dag.role(v) {
            NodeRole::Treatment { k } => fixed_halves[k],
            _ => v,
        }
    };
    for (u, v) in dag.edges() {
        // outgoing edges of a treatment stem from its fixed half
        let src = fixed_of(u);
        child_sets[src].insert(v);
        parent_sets[v].insert(src);
    }
    let mut swig = Swig {
        base_nodes: n,
        names,
        parent_sets,
        child_sets,
        fixed_halves,
        fixed_set,
        relabeled: NodeSet::EMPTY,
    };
    swig.relabeled = swig.descendants_of_set(fixed_set);
    Ok(swig)
}

impl Swig {
    /// Node count of the underlying DAG (random halves reuse those indices).
    pub fn base_node_count(&self) -> usize {
        self.base_nodes
    }

    /// Index of the random half of `A_k` (same as the base index).
    pub fn random_half(&self, dag: &Dag, k: usize) -> usize {
        dag.treatment(k)
    }

    /// Index of the fixed half of `A_k`.
    pub fn fixed_half(&self, k: usize) -> usize {
        self.fixed_halves[k]
    }

    /// All fixed halves.
    pub fn fixed_set(&self) -> NodeSet {
        self.fixed_set
    }

    /// Nodes carrying a counterfactual superscript: descendants of fixed halves.
    pub fn relabeled_set(&self) -> NodeSet {
        self.relabeled
    }

    pub fn name(&self, v: usize) -> &str {
        &self.names[v]
    }

    pub fn edge_count(&self) -> usize {
        self.child_sets.iter().map(|s| s.len()).sum()
    }

    /// Display label: relabeled nodes carry the fixed halves they descend from.
    pub fn counterfactual_label(&self, v: usize) -> String {
        if !self.relabeled.contains(v) {
            return self.names[v].clone();
        }
        let ancestors = self.ancestors_of_set(NodeSet::singleton(v));
        let sup: Vec<&str> = self
            .fixed_halves
            .iter()
            .filter(|&&f| ancestors.contains(f))
            .map(|&f| self.names[f].as_str())
            .collect();
        format!("{}^{{{}}}", self.names[v], sup.join(","))
    }

    /// D-separation on the SWIG; fixed halves are implicitly conditioned on.
    pub fn d_separated(&self, x: NodeSet, y: NodeSet, z: NodeSet) -> Result<bool> {
        let z = z.union(self.fixed_set).minus(x).minus(y);
        d_separated(self, DsepQuery::new(x, y, z)?)
    }
}

/// Sequential conditional exchangeability of the counterfactual outcome:
/// for every k, `Y^a` is separated from the random half `A_k` given the
/// earlier random halves and the images of `Z̄_k`.
pub fn sequential_exchangeability_holds(dag: &Dag, swig: &Swig, z: &AdjustmentSet) -> Result<bool> {
    z.validate(dag)?;
    let y = NodeSet::singleton(dag.outcome());
    for k in 0..dag.period_count() {
        let a_k = NodeSet::singleton(swig.random_half(dag, k));
        let mut cond = NodeSet::EMPTY;
        for j in 0..k {
            cond.insert(swig.random_half(dag, j));
        }
        cond = cond.union(z.cumulative(k));
        if cond.contains(dag.treatment(k)) {
            return Err(Error::Adjustment(format!(
                "Z̄_{k} may not contain the current treatment A_{k}"
            )));
        }
        if !swig.d_separated(y, a_k, cond)? {
            return Ok(false);
        }
    }
    Ok(true)
}
