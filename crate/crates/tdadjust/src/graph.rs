// SPDX-License-Identifier: MIT
//! Role-annotated causal DAGs with the longitudinal structure
//! `(C_0, A_0, C_1, A_1, ..., C_p, A_p, Y)`.
//!
//! Graphs are capped at 64 nodes so node sets fit in a single machine word.

use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::fmt;

/// Maximum number of nodes in a [`Dag`] (and in the SWIG derived from it).
pub const MAX_NODES: usize = 64;

/// A set of node indices backed by a 64-bit mask.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct NodeSet(u64);

impl NodeSet {
    pub const EMPTY: NodeSet = NodeSet(0);

    pub fn singleton(v: usize) -> Self {
        debug_assert!(v < MAX_NODES);
        NodeSet(1 << v)
    }

    pub fn from_iter<I: IntoIterator<Item = usize>>(it: I) -> Self {
        let mut s = NodeSet::EMPTY;
        for v in it {
            s.insert(v);
        }
        s
    }

    pub fn insert(&mut self, v: usize) {
        debug_assert!(v < MAX_NODES);
        self.0 |= 1 << v;
    }

    pub fn remove(&mut self, v: usize) {
        self.0 &= !(1 << v);
    }

    pub fn contains(self, v: usize) -> bool {
        self.0 & (1 << v) != 0
    }

    pub fn union(self, other: NodeSet) -> NodeSet {
        NodeSet(self.0 | other.0)
    }

    pub fn intersection(self, other: NodeSet) -> NodeSet {
        NodeSet(self.0 & other.0)
    }

    pub fn minus(self, other: NodeSet) -> NodeSet {
        NodeSet(self.0 & !other.0)
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_subset_of(self, other: NodeSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn intersects(self, other: NodeSet) -> bool {
        self.0 & other.0 != 0
    }

    /// Ascending iterator over member indices.
    pub fn iter(self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let v = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(v)
            }
        })
    }
}

impl fmt::Debug for NodeSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

/// Role of a node in the longitudinal data structure.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash, PartialOrd, Ord)]
pub enum NodeRole {
    /// Time-`k` covariate `C_{k,j}`.
    Covariate { k: usize, j: usize },
    /// Treatment `A_k`.
    Treatment { k: usize },
    /// Terminal outcome `Y`.
    Outcome,
}

impl NodeRole {
    /// Sorting key: covariates before the same-time treatment, outcome last.
    fn order_key(&self) -> (usize, usize, usize) {
        match *self {
            NodeRole::Covariate { k, j } => (k, 0, j),
            NodeRole::Treatment { k } => (k, 1, 0),
            NodeRole::Outcome => (usize::MAX, 2, 0),
        }
    }
}

/// Minimal interface shared by [`Dag`] and the SWIG so d-separation can run on either.
pub trait DirectedStructure {
    fn node_count(&self) -> usize;
    fn parents(&self, v: usize) -> NodeSet;
    fn children(&self, v: usize) -> NodeSet;

    /// Ancestors of every node in `seed` (excluding the seeds themselves unless reached).
    fn ancestors_of_set(&self, seed: NodeSet) -> NodeSet {
        let mut out = NodeSet::EMPTY;
        let mut stack: Vec<usize> = seed.iter().collect();
        while let Some(v) = stack.pop() {
            for p in self.parents(v).iter() {
                if !out.contains(p) {
                    out.insert(p);
                    stack.push(p);
                }
            }
        }
        out
    }

    /// Descendants of every node in `seed` (excluding the seeds themselves unless reached).
    fn descendants_of_set(&self, seed: NodeSet) -> NodeSet {
        let mut out = NodeSet::EMPTY;
        let mut stack: Vec<usize> = seed.iter().collect();
        while let Some(v) = stack.pop() {
            for c in self.children(v).iter() {
                if !out.contains(c) {
                    out.insert(c);
                    stack.push(c);
                }
            }
        }
        out
    }
}

/// Validated role-annotated causal DAG.
#[derive(Clone, Debug)]
pub struct Dag {
    names: Vec<String>,
    roles: Vec<NodeRole>,
    parent_sets: Vec<NodeSet>,
    child_sets: Vec<NodeSet>,
    topo: Vec<usize>,
    topo_pos: Vec<usize>,
    treatments: Vec<usize>,
    outcome: usize,
    covariate_counts: Vec<usize>,
}

impl DirectedStructure for Dag {
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

impl Dag {
    /// Builds and validates a DAG from explicit parts. `edges` are (parent, child) name pairs.
    pub fn new(nodes: Vec<(String, NodeRole)>, edges: Vec<(String, String)>) -> Result<Dag> {
        build(nodes, edges, None)
    }

    pub fn node_count(&self) -> usize {
        self.names.len()
    }

    pub fn name(&self, v: usize) -> &str {
        &self.names[v]
    }

    pub fn role(&self, v: usize) -> NodeRole {
        self.roles[v]
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Query(format!("unknown node `{name}`")))
    }

    /// Node set from names; errors on any unknown name.
    pub fn set_of(&self, names: &[&str]) -> Result<NodeSet> {
        let mut s = NodeSet::EMPTY;
        for n in names {
            s.insert(self.index_of(n)?);
        }
        Ok(s)
    }

    /// Names of a node set, in ascending topological position.
    pub fn names_of(&self, set: NodeSet) -> Vec<String> {
        let mut v: Vec<usize> = set.iter().collect();
        v.sort_by_key(|&i| self.topo_pos[i]);
        v.into_iter().map(|i| self.names[i].clone()).collect()
    }

    /// Largest treatment time index `p`.
    pub fn max_period(&self) -> usize {
        self.treatments.len() - 1
    }

    /// Number of treatment times `p + 1`.
    pub fn period_count(&self) -> usize {
        self.treatments.len()
    }

    /// Node index of `A_k`.
    pub fn treatment(&self, k: usize) -> usize {
        self.treatments[k]
    }

    pub fn treatment_set(&self) -> NodeSet {
        NodeSet::from_iter(self.treatments.iter().copied())
    }

    /// Node index of the outcome.
    pub fn outcome(&self) -> usize {
        self.outcome
    }

    /// Number of covariates at time `k`.
    pub fn covariate_count(&self, k: usize) -> usize {
        self.covariate_counts.get(k).copied().unwrap_or(0)
    }

    /// Covariate node indices at time `k`, ordered by `j`.
    pub fn covariates_at(&self, k: usize) -> Vec<usize> {
        let mut v: Vec<(usize, usize)> = (0..self.node_count())
            .filter_map(|i| match self.roles[i] {
                NodeRole::Covariate { k: kk, j } if kk == k => Some((j, i)),
                _ => None,
            })
            .collect();
        v.sort();
        v.into_iter().map(|(_, i)| i).collect()
    }

    /// All covariate node indices ordered by `(k, j)`.
    pub fn covariates(&self) -> Vec<usize> {
        let mut v: Vec<((usize, usize), usize)> = (0..self.node_count())
            .filter_map(|i| match self.roles[i] {
                NodeRole::Covariate { k, j } => Some(((k, j), i)),
                _ => None,
            })
            .collect();
        v.sort();
        v.into_iter().map(|(_, i)| i).collect()
    }

    /// Deterministic topological order (ties broken by role class, time, then name).
    pub fn topological_order(&self) -> &[usize] {
        &self.topo
    }

    /// Position of `v` in the topological order.
    pub fn topo_position(&self, v: usize) -> usize {
        self.topo_pos[v]
    }

    pub fn parent_set(&self, v: usize) -> NodeSet {
        self.parent_sets[v]
    }

    pub fn child_set(&self, v: usize) -> NodeSet {
        self.child_sets[v]
    }

    pub fn ancestors(&self, v: usize) -> NodeSet {
        self.ancestors_of_set(NodeSet::singleton(v))
    }

    pub fn descendants(&self, v: usize) -> NodeSet {
        self.descendants_of_set(NodeSet::singleton(v))
    }

    pub fn edge_count(&self) -> usize {
        self.child_sets.iter().map(|s| s.len()).sum()
    }

    /// All edges as (parent, child) index pairs, parents in topological order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for &u in &self.topo {
            let mut cs: Vec<usize> = self.child_sets[u].iter().collect();
            cs.sort_by_key(|&c| self.topo_pos[c]);
            for c in cs {
                out.push((u, c));
            }
        }
        out
    }

    /// Serializes back to the graph file format; `parse_dag(serialize(d))` round-trips.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for &v in &self.topo {
            match self.roles[v] {
                NodeRole::Covariate { k, j } => {
                    out.push_str(&format!("node {} role=covariate k={} j={}\n", self.names[v], k, j))
                }
                NodeRole::Treatment { k } => {
                    out.push_str(&format!("node {} role=treatment k={}\n", self.names[v], k))
                }
                NodeRole::Outcome => out.push_str(&format!("node {} role=outcome\n", self.names[v])),
            }
        }
        for (u, v) in self.edges() {
            out.push_str(&format!("edge {} -> {}\n", self.names[u], self.names[v]));
        }
        out
    }
}

/// Parses the line-based graph file format.
///
/// One statement per line: `node <name> role=treatment k=<int>`,
/// `node <name> role=covariate k=<int> j=<int>`, `node <name> role=outcome`,
/// `edge <from> -> <to>`. `#` starts a comment; blank lines are ignored.
pub fn parse_dag(text: &str) -> Result<Dag> {
    let mut nodes: Vec<(String, NodeRole)> = Vec::new();
    let mut edges: Vec<(String, String)> = Vec::new();
    let mut edge_lines: Vec<usize> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let stmt = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        };
        let toks: Vec<&str> = stmt.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        match toks[0] {
            "node" => {
                if toks.len() < 3 {
                    return Err(Error::Parse {
                        line,
                        msg: "expected `node <name> role=...`".into(),
                    });
                }
                let name = toks[1].to_string();
                let mut kv: BTreeMap<&str, &str> = BTreeMap::new();
                for t in &toks[2..] {
                    let (k, v) = t.split_once('=').ok_or_else(|| Error::Parse {
                        line,
                        msg: format!("expected key=value, got `{t}`"),
                    })?;
                    kv.insert(k, v);
                }
                let parse_int = |key: &str| -> Result<usize> {
                    kv.get(key)
                        .ok_or_else(|| Error::Parse {
                            line,
                            msg: format!("missing `{key}=`"),
                        })?
                        .parse()
                        .map_err(|_| Error::Parse {
                            line,
                            msg: format!("`{key}` must be a non-negative integer"),
                        })
                };
                let role = match kv.get("role").copied() {
                    Some("treatment") => NodeRole::Treatment { k: parse_int("k")? },
                    Some("covariate") => {
                        let k = parse_int("k")?;
                        let j = parse_int("j")?;
                        if j == 0 {
                            return Err(Error::Parse {
                                line,
                                msg: "covariate index j must be >= 1".into(),
                            });
                        }
                        NodeRole::Covariate { k, j }
                    }
                    Some("outcome") => NodeRole::Outcome,
                    Some(other) => {
                        return Err(Error::Parse {
                            line,
                            msg: format!("unknown role `{other}`"),
                        })
                    }
                    None => {
                        return Err(Error::Parse {
                            line,
                            msg: "missing `role=`".into(),
                        })
                    }
                };
                nodes.push((name, role));
            }
            "edge" => {
                if toks.len() != 4 || toks[2] != "->" {
                    return Err(Error::Parse {
                        line,
                        msg: "expected `edge <from> -> <to>`".into(),
                    });
                }
                edges.push((toks[1].to_string(), toks[3].to_string()));
                edge_lines.push(line);
            }
            other => {
                return Err(Error::Parse {
                    line,
                    msg: format!("unknown statement `{other}`"),
                })
            }
        }
    }
    build(nodes, edges, Some(&edge_lines))
}

fn build(
    nodes: Vec<(String, NodeRole)>,
    edges: Vec<(String, String)>,
    edge_lines: Option<&[usize]>,
) -> Result<Dag> {
    if nodes.is_empty() {
        return Err(Error::Graph("graph has no nodes".into()));
    }
    if nodes.len() > MAX_NODES {
        return Err(Error::TooLarge {
            what: "graph",
            detail: format!("{} nodes exceeds the {MAX_NODES}-node limit", nodes.len()),
        });
    }
    let mut names = Vec::with_capacity(nodes.len());
    let mut roles = Vec::with_capacity(nodes.len());
    for (name, role) in nodes {
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::Graph(format!("invalid node name `{name}`")));
        }
        if names.contains(&name) {
            return Err(Error::Graph(format!("duplicate node `{name}`")));
        }
        names.push(name);
        roles.push(role);
    }
    let n = names.len();
    let idx = |name: &str| names.iter().position(|x| x == name);

    // Role inventory.
    let outcomes: Vec<usize> = (0..n).filter(|&i| roles[i] == NodeRole::Outcome).collect();
    if outcomes.len() != 1 {
        return Err(Error::Graph(format!(
            "expected exactly one outcome node, found {}",
            outcomes.len()
        )));
    }
    let outcome = outcomes[0];
    let mut trt: Vec<(usize, usize)> = (0..n)
        .filter_map(|i| match roles[i] {
            NodeRole::Treatment { k } => Some((k, i)),
            _ => None,
        })
        .collect();
    trt.sort();
    if trt.is_empty() {
        return Err(Error::Graph("graph has no treatment nodes".into()));
    }
    for (want, &(k, _)) in trt.iter().enumerate() {
        if k != want {
            return Err(Error::Graph(format!(
                "treatment time indices must be 0..p with no gaps or duplicates (got k={k}, expected k={want})"
            )));
        }
    }
    let treatments: Vec<usize> = trt.iter().map(|&(_, i)| i).collect();
    let p = treatments.len() - 1;

    let mut seen_cov = std::collections::BTreeSet::new();
    let mut covariate_counts = vec![0usize; p + 1];
    for i in 0..n {
        if let NodeRole::Covariate { k, j } = roles[i] {
            if k > p {
                return Err(Error::Graph(format!(
                    "covariate `{}` has time index {k} beyond the last treatment time {p}",
                    names[i]
                )));
            }
            if !seen_cov.insert((k, j)) {
                return Err(Error::Graph(format!(
                    "duplicate covariate index (k={k}, j={j})"
                )));
            }
            covariate_counts[k] += 1;
        }
    }

    // Edges.
    let mut parent_sets = vec![NodeSet::EMPTY; n];
    let mut child_sets = vec![NodeSet::EMPTY; n];
    for (e, (from, to)) in edges.iter().enumerate() {
        let line = edge_lines.and_then(|l| l.get(e)).copied();
        let err = |msg: String| match line {
            Some(line) => Error::Parse { line, msg },
            None => Error::Graph(msg),
        };
        let u = idx(from).ok_or_else(|| err(format!("unknown edge endpoint `{from}`")))?;
        let v = idx(to).ok_or_else(|| err(format!("unknown edge endpoint `{to}`")))?;
        if u == v {
            return Err(err(format!("self-loop on `{from}`")));
        }
        if child_sets[u].contains(v) {
            return Err(err(format!("duplicate edge {from} -> {to}")));
        }
        if u == outcome {
            return Err(err(format!(
                "role violation: outcome `{from}` must be terminal (edge out of it)"
            )));
        }
        child_sets[u].insert(v);
        parent_sets[v].insert(u);
    }

    // Acyclicity on the declared edges.
    let topo = kahn(&names, &roles, &parent_sets, &child_sets)
        .ok_or_else(|| Error::Graph("cycle detected".into()))?;

    // Role consistency: a topological order must exist in which every covariate
    // with index <= k and every earlier treatment precedes A_k. Checked by
    // augmenting the edge relation with those precedence constraints.
    {
        let mut aug_parents = parent_sets.clone();
        let mut aug_children = child_sets.clone();
        for (k, &a) in treatments.iter().enumerate() {
            if k > 0 {
                let prev = treatments[k - 1];
                if !aug_children[prev].contains(a) {
                    aug_children[prev].insert(a);
                    aug_parents[a].insert(prev);
                }
            }
            for i in 0..n {
                if let NodeRole::Covariate { k: ck, .. } = roles[i] {
                    if ck <= k && !aug_children[i].contains(a) {
                        aug_children[i].insert(a);
                        aug_parents[a].insert(i);
                    }
                }
            }
        }
        if kahn(&names, &roles, &aug_parents, &aug_children).is_none() {
            return Err(Error::Graph(
                "role violation: no topological order places all of C̄_k and Ā_{k-1} before A_k".into(),
            ));
        }
    }

    let mut topo_pos = vec![0usize; n];
    for (pos, &v) in topo.iter().enumerate() {
        topo_pos[v] = pos;
    }

    Ok(Dag {
        names,
        roles,
        parent_sets,
        child_sets,
        topo,
        topo_pos,
        treatments,
        outcome,
        covariate_counts,
    })
}

/// Kahn's algorithm; ties broken by (role class, time, name) for determinism.
fn kahn(
    names: &[String],
    roles: &[NodeRole],
    parents: &[NodeSet],
    children: &[NodeSet],
) -> Option<Vec<usize>> {
    let n = names.len();
    let mut indeg: Vec<usize> = (0..n).map(|v| parents[v].len()).collect();
    let mut done = vec![false; n];
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let next = (0..n)
            .filter(|&v| !done[v] && indeg[v] == 0)
            .min_by(|&a, &b| {
                let ka = (roles[a].order_key(), names[a].as_str());
                let kb = (roles[b].order_key(), names[b].as_str());
                ka.cmp(&kb)
            })?;
        done[next] = true;
        out.push(next);
        for c in children[next].iter() {
            indeg[c] -= 1;
        }
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtins;

    #[test]
    fn parses_example1() {
        let dag = parse_dag(builtins::EXAMPLE1_GRAPH).unwrap();
        assert_eq!(dag.node_count(), 7);
        assert_eq!(dag.edge_count(), 11);
        assert_eq!(dag.max_period(), 1);
        assert_eq!(dag.covariate_count(0), 2);
        assert_eq!(dag.covariate_count(1), 2);
        let order: Vec<&str> = dag.topological_order().iter().map(|&v| dag.name(v)).collect();
        assert_eq!(order, vec!["C01", "C02", "A0", "C11", "C12", "A1", "Y"]);
        // every edge goes forward in the order
        for (u, v) in dag.edges() {
            assert!(dag.topo_position(u) < dag.topo_position(v));
        }
        let a1 = dag.index_of("A1").unwrap();
        assert_eq!(dag.names_of(dag.parent_set(a1)), vec!["C02", "A0", "C11"]);
    }

    #[test]
    fn parses_example2() {
        let dag = parse_dag(builtins::EXAMPLE2_GRAPH).unwrap();
        assert_eq!(dag.node_count(), 6);
        assert_eq!(dag.edge_count(), 6);
        assert_eq!(dag.max_period(), 1);
        let order: Vec<&str> = dag.topological_order().iter().map(|&v| dag.name(v)).collect();
        assert_eq!(order, vec!["H", "A0", "R", "Q", "A1", "Y"]);
    }

    #[test]
    fn ancestors_and_descendants() {
        let dag = parse_dag(builtins::EXAMPLE1_GRAPH).unwrap();
        let y = dag.outcome();
        // ancestors of Y are all other six nodes
        assert_eq!(dag.ancestors(y).len(), 6);
        // a leaf has no descendants
        assert!(dag.descendants(y).is_empty());
        // parents subset of ancestors; edge endpoints consistent
        for v in 0..dag.node_count() {
            assert!(dag.parent_set(v).is_subset_of(dag.ancestors(v)));
            for c in dag.child_set(v).iter() {
                assert!(dag.ancestors(c).contains(v));
                assert!(dag.descendants(v).contains(c));
            }
        }
    }

    #[test]
    fn outcome_must_be_terminal() {
        let text = "node A role=treatment k=0\nnode Y role=outcome\nnode C role=covariate k=0 j=1\n\
                    edge A -> Y\nedge Y -> C\n";
        let err = parse_dag(text).unwrap_err();
        assert!(err.to_string().contains("terminal"), "{err}");
    }

    #[test]
    fn cycle_detected() {
        let text = "node A role=treatment k=0\nnode Y role=outcome\n\
                    node B role=covariate k=0 j=1\nnode C role=covariate k=0 j=2\n\
                    edge B -> C\nedge C -> B\nedge A -> Y\n";
        let err = parse_dag(text).unwrap_err();
        assert!(err.to_string().contains("cycle"), "{err}");
    }

    #[test]
    fn treatment_gap_rejected() {
        let text = "node A0 role=treatment k=0\nnode A2 role=treatment k=2\nnode Y role=outcome\nedge A0 -> Y\n";
        assert!(parse_dag(text).is_err());
    }

    #[test]
    fn two_outcomes_rejected() {
        let text = "node A role=treatment k=0\nnode Y role=outcome\nnode Z role=outcome\nedge A -> Y\n";
        assert!(parse_dag(text).is_err());
    }

    #[test]
    fn covariate_after_treatment_rejected() {
        // C is declared at time 0 but is a descendant of A_0: no valid order exists.
        let text = "node A0 role=treatment k=0\nnode C role=covariate k=0 j=1\nnode Y role=outcome\n\
                    edge A0 -> C\nedge C -> Y\n";
        let err = parse_dag(text).unwrap_err();
        assert!(err.to_string().contains("role violation"), "{err}");
    }

    #[test]
    fn syntax_error_reports_line() {
        let text = "node A role=treatment k=0\nnode Y role=outcome\nedge A ->\n";
        match parse_dag(text).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn serialize_round_trips() {
        for text in [builtins::EXAMPLE1_GRAPH, builtins::EXAMPLE2_GRAPH] {
            let dag = parse_dag(text).unwrap();
            let re = parse_dag(&dag.serialize()).unwrap();
            assert_eq!(dag.serialize(), re.serialize());
            assert_eq!(dag.node_count(), re.node_count());
            assert_eq!(dag.edges().len(), re.edges().len());
        }
    }

    #[test]
    fn single_node_graph_is_rejected_without_treatment() {
        assert!(parse_dag("node Y role=outcome\n").is_err());
    }

    #[test]
    fn chain_topological_order() {
        let text = "node X role=covariate k=0 j=1\nnode Z role=treatment k=0\nnode Y role=outcome\n\
                    edge X -> Z\nedge Z -> Y\n";
        let dag = parse_dag(text).unwrap();
        let order: Vec<&str> = dag.topological_order().iter().map(|&v| dag.name(v)).collect();
        assert_eq!(order, vec!["X", "Z", "Y"]);
    }
}
