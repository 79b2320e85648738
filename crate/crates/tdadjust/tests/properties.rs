// SPDX-License-Identifier: MIT
//! Property tests over randomly generated role-annotated DAGs: parser round
//! trips, deterministic ordering, and agreement of the two d-separation
//! implementations on arbitrary queries.

use proptest::prelude::*;
use tdadjust::dsep::{d_separated, d_separated_oracle, DsepQuery};
use tdadjust::graph::{parse_dag, Dag, NodeRole, NodeSet};

/// A random small study graph: 1-2 treatments, 0-4 covariates, one outcome,
/// plus a random edge mask over the role-respecting candidate pairs.
fn arb_dag() -> impl Strategy<Value = Dag> {
    (1usize..=2, 0usize..=4, any::<u64>()).prop_map(|(periods, n_cov, edge_bits)| {
        let mut nodes: Vec<(String, NodeRole)> = Vec::new();
        for k in 0..periods {
            nodes.push((format!("A{k}"), NodeRole::Treatment { k }));
        }
        for j in 0..n_cov {
            // spread covariates over the available times
            let k = j % periods;
            nodes.push((format!("C{k}{j}"), NodeRole::Covariate { k, j: j + 1 }));
        }
        nodes.push(("Y".to_string(), NodeRole::Outcome));
        // candidate edges respect the longitudinal order: sort nodes by
        // (time, covariate-before-treatment) and allow only forward edges.
        let slot = |role: &NodeRole| match *role {
            NodeRole::Covariate { k, j } => (k, 0, j),
            NodeRole::Treatment { k } => (k, 1, 0),
            NodeRole::Outcome => (usize::MAX, 2, 0),
        };
        let mut ordered: Vec<usize> = (0..nodes.len()).collect();
        ordered.sort_by_key(|&i| slot(&nodes[i].1));
        let mut edges = Vec::new();
        let mut bit = 0;
        for a in 0..ordered.len() {
            for b in (a + 1)..ordered.len() {
                let (from, to) = (&nodes[ordered[a]], &nodes[ordered[b]]);
                if edge_bits >> (bit % 64) & 1 == 1 {
                    edges.push((from.0.clone(), to.0.clone()));
                }
                bit += 1;
            }
        }
        Dag::new(nodes, edges).expect("role-respecting forward edges are always valid")
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn serialize_round_trips(dag in arb_dag()) {
        let text = dag.serialize();
        let again = parse_dag(&text).unwrap();
        prop_assert_eq!(text, again.serialize());
        // deterministic ordering on identical text
        let third = parse_dag(&again.serialize()).unwrap();
        prop_assert_eq!(again.topological_order(), third.topological_order());
    }

    #[test]
    fn edge_closures_consistent(dag in arb_dag()) {
        for (u, v) in dag.edges() {
            prop_assert!(dag.ancestors(v).contains(u));
            prop_assert!(dag.descendants(u).contains(v));
        }
        for v in 0..dag.node_count() {
            prop_assert!(dag.parent_set(v).is_subset_of(dag.ancestors(v)));
            prop_assert!(!dag.ancestors(v).contains(v));
        }
    }

    #[test]
    fn dsep_engines_agree(dag in arb_dag(), qbits in any::<u32>()) {
        let n = dag.node_count();
        // derive a random disjoint (x, y, z) triple from the bits
        let x = (qbits as usize) % n;
        let y = (qbits as usize >> 8) % n;
        if x == y { return Ok(()); }
        let mut z = NodeSet::EMPTY;
        for v in 0..n {
            if v != x && v != y && (qbits >> (16 + v)) & 1 == 1 {
                z.insert(v);
            }
        }
        let q = DsepQuery::new(NodeSet::singleton(x), NodeSet::singleton(y), z).unwrap();
        let fast = d_separated(&dag, q).unwrap();
        let slow = d_separated_oracle(&dag, q).unwrap();
        prop_assert_eq!(fast, slow);
        // symmetry
        let rq = DsepQuery::new(NodeSet::singleton(y), NodeSet::singleton(x), z).unwrap();
        prop_assert_eq!(fast, d_separated(&dag, rq).unwrap());
    }
}
