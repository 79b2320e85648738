// SPDX-License-Identifier: MIT
//! Set-valued d-separation queries over any directed acyclic structure.
//!
//! The main test is reachability-based (one O(|V|+|E|) sweep per query); the
//! enumeration workload issues many thousands of queries, so no paths are
//! materialized. A path-enumeration oracle is kept for cross-checking.

use crate::error::{Error, Result};
use crate::graph::{DirectedStructure, NodeSet};

/// A d-separation query: are `x` and `y` separated given `z`?
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DsepQuery {
    pub x: NodeSet,
    pub y: NodeSet,
    pub z: NodeSet,
}

impl DsepQuery {
    pub fn new(x: NodeSet, y: NodeSet, z: NodeSet) -> Result<Self> {
        if x.intersects(y) || x.intersects(z) || y.intersects(z) {
            return Err(Error::Query("query sets x, y, z must be pairwise disjoint".into()));
        }
        Ok(DsepQuery { x, y, z })
    }

    fn check_nodes<G: DirectedStructure + ?Sized>(&self, graph: &G) -> Result<()> {
        let all = self.x.union(self.y).union(self.z);
        if let Some(v) = all.iter().find(|&v| v >= graph.node_count()) {
            return Err(Error::Query(format!("node index {v} out of range")));
        }
        Ok(())
    }
}

/// True iff every path between `x` and `y` is blocked by `z`.
///
/// Empty `x` or `y` is vacuously separated. A collider is open when it or any
/// of its descendants is conditioned on.
pub fn d_separated<G: DirectedStructure + ?Sized>(graph: &G, q: DsepQuery) -> Result<bool> {
    q.check_nodes(graph)?;
    if q.x.is_empty() || q.y.is_empty() {
        return Ok(true);
    }
    // Nodes whose conditioning opens colliders: z and its ancestors.
    let collider_open = q.z.union(graph.ancestors_of_set(q.z));

    // Trail-following reachability. State (v, dir): dir = true when the trail
    // arrived at v along an edge into v (so leaving through a parent makes v a
    // collider), dir = false when it arrived from a child.
    let n = graph.node_count();
    let mut visited = [NodeSet::EMPTY; 2];
    let mut queue: Vec<(usize, bool)> = Vec::with_capacity(2 * n);
    for s in q.x.iter() {
        for p in graph.parents(s).iter() {
            queue.push((p, false));
        }
        for c in graph.children(s).iter() {
            queue.push((c, true));
        }
    }
    while let Some((v, into)) = queue.pop() {
        let slot = &mut visited[into as usize];
        if slot.contains(v) {
            continue;
        }
        slot.insert(v);
        if q.y.contains(v) {
            return Ok(false);
        }
        if into {
            // Arrived along an edge into v: v -> child is a chain, v <- parent a collider.
            if !q.z.contains(v) {
                for c in graph.children(v).iter() {
                    queue.push((c, true));
                }
            }
            if collider_open.contains(v) {
                for p in graph.parents(v).iter() {
                    queue.push((p, false));
                }
            }
        } else if !q.z.contains(v) {
            // Arrived from a child: v is a fork or chain either way.
            for p in graph.parents(v).iter() {
                queue.push((p, false));
            }
            for c in graph.children(v).iter() {
                queue.push((c, true));
            }
        }
    }
    Ok(true)
}

/// Path-enumeration oracle with the same contract as [`d_separated`].
///
/// Walks every simple undirected path and applies the blocking rules
/// explicitly. Only for small graphs; used to cross-check the main test.
pub fn d_separated_oracle<G: DirectedStructure + ?Sized>(graph: &G, q: DsepQuery) -> Result<bool> {
    q.check_nodes(graph)?;
    if graph.node_count() > 12 {
        return Err(Error::TooLarge {
            what: "oracle graph",
            detail: format!("{} nodes (limit 12)", graph.node_count()),
        });
    }
    if q.x.is_empty() || q.y.is_empty() {
        return Ok(true);
    }
    let n = graph.node_count();
    let desc: Vec<NodeSet> = (0..n)
        .map(|v| graph.descendants_of_set(NodeSet::singleton(v)))
        .collect();
    let blocked = |path: &[usize]| -> bool {
        for i in 1..path.len() - 1 {
            let (prev, cur, next) = (path[i - 1], path[i], path[i + 1]);
            let into_from_prev = graph.parents(cur).contains(prev);
            let into_from_next = graph.parents(cur).contains(next);
            if into_from_prev && into_from_next {
                // collider: blocked unless cur or a descendant is conditioned on
                if !q.z.contains(cur) && !desc[cur].intersects(q.z) {
                    return true;
                }
            } else if q.z.contains(cur) {
                return true;
            }
        }
        false
    };
    // DFS over simple paths from each x.
    let mut stack: Vec<Vec<usize>> = q.x.iter().map(|x| vec![x]).collect();
    while let Some(path) = stack.pop() {
        let last = *path.last().unwrap();
        let neighbors = graph.parents(last).union(graph.children(last));
        for nb in neighbors.iter() {
            if path.contains(&nb) || q.x.contains(nb) {
                continue;
            }
            let mut next = path.clone();
            next.push(nb);
            if q.y.contains(nb) {
                if !blocked(&next) {
                    return Ok(false);
                }
            } else {
                stack.push(next);
            }
        }
    }
    Ok(true)
}

/// Conditional-independence convenience wrapper that tolerates overlapping sets.
///
/// Members of `x`/`y` that already appear in `z` are degenerate given `z` and
/// are dropped; a residual overlap between `x` and `y` means dependence.
pub fn ci_separated<G: DirectedStructure + ?Sized>(
    graph: &G,
    x: NodeSet,
    y: NodeSet,
    z: NodeSet,
) -> Result<bool> {
    let x = x.minus(z);
    let y = y.minus(z);
    if x.is_empty() || y.is_empty() {
        return Ok(true);
    }
    if x.intersects(y) {
        return Ok(false);
    }
    d_separated(graph, DsepQuery::new(x, y, z)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtins;
    use crate::graph::parse_dag;

    fn q(dag: &crate::graph::Dag, x: &[&str], y: &[&str], z: &[&str]) -> DsepQuery {
        DsepQuery::new(
            dag.set_of(x).unwrap(),
            dag.set_of(y).unwrap(),
            dag.set_of(z).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn direct_edge_never_separated() {
        let dag = parse_dag("node A role=treatment k=0\nnode Y role=outcome\nedge A -> Y\n").unwrap();
        assert!(!d_separated(&dag, q(&dag, &["A"], &["Y"], &[])).unwrap());
    }

    #[test]
    fn empty_x_is_vacuous() {
        let dag = parse_dag("node A role=treatment k=0\nnode Y role=outcome\nedge A -> Y\n").unwrap();
        let query = DsepQuery::new(NodeSet::EMPTY, dag.set_of(&["Y"]).unwrap(), NodeSet::EMPTY).unwrap();
        assert!(d_separated(&dag, query).unwrap());
    }

    #[test]
    fn collider_blocks_until_conditioned() {
        let text = "node X role=covariate k=0 j=1\nnode W role=covariate k=0 j=2\n\
                    node C role=covariate k=0 j=3\nnode A role=treatment k=0\nnode Y role=outcome\n\
                    edge X -> C\nedge W -> C\nedge A -> Y\n";
        let dag = parse_dag(text).unwrap();
        assert!(d_separated(&dag, q(&dag, &["X"], &["W"], &[])).unwrap());
        assert!(!d_separated(&dag, q(&dag, &["X"], &["W"], &["C"])).unwrap());
        assert!(d_separated_oracle(&dag, q(&dag, &["X"], &["W"], &[])).unwrap());
        assert!(!d_separated_oracle(&dag, q(&dag, &["X"], &["W"], &["C"])).unwrap());
    }

    #[test]
    fn descendant_of_collider_opens() {
        let text = "node X role=covariate k=0 j=1\nnode W role=covariate k=0 j=2\n\
                    node C role=covariate k=0 j=3\nnode D role=covariate k=0 j=4\n\
                    node A role=treatment k=0\nnode Y role=outcome\n\
                    edge X -> C\nedge W -> C\nedge C -> D\nedge A -> Y\n";
        let dag = parse_dag(text).unwrap();
        assert!(!d_separated(&dag, q(&dag, &["X"], &["W"], &["D"])).unwrap());
    }

    #[test]
    fn example1_paper_queries() {
        let dag = parse_dag(builtins::EXAMPLE1_GRAPH).unwrap();
        // From the worked reduction: Y independent of C02 given A1, C12, A0.
        assert!(d_separated(&dag, q(&dag, &["Y"], &["C02"], &["A1", "C12", "A0"])).unwrap());
        // Not given A0 alone.
        assert!(!d_separated(&dag, q(&dag, &["Y"], &["C02"], &["A0"])).unwrap());
    }

    #[test]
    fn symmetry_and_decomposition() {
        let dag = parse_dag(builtins::EXAMPLE1_GRAPH).unwrap();
        let n = dag.node_count();
        let others: Vec<usize> = (0..n).collect();
        for &a in &others {
            for &b in &others {
                if a == b {
                    continue;
                }
                let rest: Vec<usize> = others.iter().copied().filter(|&v| v != a && v != b).collect();
                for mask in 0..(1u32 << rest.len()) {
                    let z = NodeSet::from_iter(
                        rest.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, &v)| v),
                    );
                    let q1 = DsepQuery::new(NodeSet::singleton(a), NodeSet::singleton(b), z).unwrap();
                    let q2 = DsepQuery::new(NodeSet::singleton(b), NodeSet::singleton(a), z).unwrap();
                    assert_eq!(d_separated(&dag, q1).unwrap(), d_separated(&dag, q2).unwrap());
                }
            }
        }
        // decomposition: {a,b} _||_ y  <=>  a _||_ y and b _||_ y
        let x = dag.set_of(&["C01", "C11"]).unwrap();
        let y = dag.set_of(&["Y"]).unwrap();
        for z_names in [vec!["A0", "C12", "A1"], vec!["C02"], vec![]] {
            let z = dag.set_of(&z_names).unwrap();
            let joint = d_separated(&dag, DsepQuery::new(x, y, z).unwrap()).unwrap();
            let single = x.iter().all(|v| {
                d_separated(&dag, DsepQuery::new(NodeSet::singleton(v), y, z).unwrap()).unwrap()
            });
            assert_eq!(joint, single);
        }
    }

    #[test]
    fn oracle_agrees_exhaustively_on_both_examples() {
        for text in [builtins::EXAMPLE1_GRAPH, builtins::EXAMPLE2_GRAPH] {
            let dag = parse_dag(text).unwrap();
            let n = dag.node_count();
            for a in 0..n {
                for b in a + 1..n {
                    let rest: Vec<usize> = (0..n).filter(|&v| v != a && v != b).collect();
                    for mask in 0..(1u32 << rest.len()) {
                        let z = NodeSet::from_iter(
                            rest.iter()
                                .enumerate()
                                .filter(|(i, _)| mask >> i & 1 == 1)
                                .map(|(_, &v)| v),
                        );
                        let query =
                            DsepQuery::new(NodeSet::singleton(a), NodeSet::singleton(b), z).unwrap();
                        assert_eq!(
                            d_separated(&dag, query).unwrap(),
                            d_separated_oracle(&dag, query).unwrap(),
                            "disagreement on ({a},{b}) given {z:?}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn overlap_rejected_and_ci_wrapper_handles_it() {
        let dag = parse_dag(builtins::EXAMPLE1_GRAPH).unwrap();
        let x = dag.set_of(&["C01"]).unwrap();
        assert!(DsepQuery::new(x, x, NodeSet::EMPTY).is_err());
        // x member inside z is degenerate: drops out
        let z = dag.set_of(&["C01", "A0"]).unwrap();
        assert!(ci_separated(&dag, x, dag.set_of(&["Y"]).unwrap(), z).unwrap());
        // residual overlap between x and y means dependence
        assert!(!ci_separated(&dag, x, x, NodeSet::EMPTY).unwrap());
    }

    #[test]
    fn oracle_size_limit() {
        let mut text = String::new();
        for i in 0..13 {
            text.push_str(&format!("node C{i} role=covariate k=0 j={}\n", i + 1));
        }
        text.push_str("node A role=treatment k=0\nnode Y role=outcome\nedge A -> Y\n");
        let dag = parse_dag(&text).unwrap();
        let query = DsepQuery::new(
            dag.set_of(&["C0"]).unwrap(),
            dag.set_of(&["C1"]).unwrap(),
            NodeSet::EMPTY,
        )
        .unwrap();
        assert!(d_separated_oracle(&dag, query).is_err());
    }
}
