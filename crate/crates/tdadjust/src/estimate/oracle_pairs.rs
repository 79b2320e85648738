// SPDX-License-Identifier: MIT
//! Closed-form nuisance functions for nested adjustment-set pairs under the
//! built-in data-generating processes.
//!
//! Each pair satisfies the inclusion rule's conditions, and every nuisance
//! below is available in closed form because the conditioning sets contain
//! the relevant structural parents (linear conditional means, expit
//! propensities). These back the empirical influence-function diagnostics
//! at large n without fitting error.

use super::OracleNuisances;
use crate::adjust::AdjustmentSet;
use crate::error::{Error, Result};
use crate::glm::expit;
use crate::graph::Dag;
use crate::scm::Dataset;
use crate::swig::Regime;

/// A nested pair with oracle nuisances for both sides.
pub struct OraclePair {
    pub label: String,
    pub base: AdjustmentSet,
    pub union: AdjustmentSet,
    pub base_nuis: OracleNuisances,
    pub union_nuis: OracleNuisances,
}

type NodeFn = Box<dyn Fn(&Dataset, &Dag, usize) -> f64 + Sync + Send>;

fn col(dag: &Dag, name: &str) -> usize {
    dag.index_of(name).expect("builtin node name")
}

fn prob(p: f64, arm: u8) -> f64 {
    if arm == 1 {
        p
    } else {
        1.0 - p
    }
}

fn linear(idx: usize, scale: f64, shift: f64) -> NodeFn {
    Box::new(move |d, _, i| shift + scale * d.column(idx)[i])
}

fn constant(v: f64) -> NodeFn {
    Box::new(move |_, _, _| v)
}

/// Oracle pairs for a built-in SCM at a regime.
pub fn builtin_pairs(dag: &Dag, scm_name: &str, regime: &Regime) -> Result<Vec<OraclePair>> {
    let a0 = regime.value(0) as f64;
    let a1 = regime.value(1) as f64;
    match scm_name {
        "example1" => {
            let (c01, c02, c11, c12) = (col(dag, "C01"), col(dag, "C02"), col(dag, "C11"), col(dag, "C12"));
            let base = AdjustmentSet::from_names(dag, &[&["C01"], &["C11", "A0", "C02"]])?;
            let union = AdjustmentSet::from_names(dag, &[&["C01", "C02"], &["C11", "C12", "A0", "C02"]])?;
            // Structural facts used: E[C02|C01] = C01, E[C11|A0,C02] = A0 + C02,
            // E[C12|C11] = C11, E[Y|A1,A0,C12] = A1 + A0 + C12,
            // P(A0=1|C01) = expit(C01), P(A1=1|C02,A0,C11) = expit(C02+A0+C11).
            let pi0 = |arm0: u8| -> NodeFn {
                Box::new(move |d, _, i| prob(expit(d.column(c01)[i]), arm0))
            };
            let pi1 = |arm0: f64, arm1: u8| -> NodeFn {
                Box::new(move |d, _, i| {
                    prob(expit(d.column(c02)[i] + arm0 + d.column(c11)[i]), arm1)
                })
            };
            Ok(vec![OraclePair {
                label: "example1 nested pair".into(),
                base,
                union,
                base_nuis: OracleNuisances {
                    b: vec![linear(c01, 1.0, a1 + 2.0 * a0), linear(c11, 1.0, a1 + a0)],
                    pi: vec![pi0(regime.value(0)), pi1(a0, regime.value(1))],
                    chi: a1 + 2.0 * a0,
                },
                union_nuis: OracleNuisances {
                    b: vec![linear(c02, 1.0, a1 + 2.0 * a0), linear(c12, 1.0, a1 + a0)],
                    pi: vec![pi0(regime.value(0)), pi1(a0, regime.value(1))],
                    chi: a1 + 2.0 * a0,
                },
            }])
        }
        "example2_strong_HA1" | "example2_strong_HRQ" => {
            let c = if scm_name == "example2_strong_HA1" { 2.5 } else { 4.0 };
            let (h, q) = (col(dag, "H"), col(dag, "Q"));
            // Structural facts used: E[Q|R] = R, E[R|A0,H] = A0 + cH,
            // E[Y|A1,Q] = A1 + Q, P(A0=1) = expit(0.5), P(A1=1|H) = expit(3H),
            // and H is independent of A0.
            let pi0 = constant(prob(expit(0.5), regime.value(0)));
            let pi0b = constant(prob(expit(0.5), regime.value(0)));
            let pi1 = |arm1: u8| -> NodeFn {
                Box::new(move |d, _, i| prob(expit(3.0 * d.column(h)[i]), arm1))
            };
            let set3 = AdjustmentSet::from_names(dag, &[&[], &["A0", "H"]])?;
            let set5 = AdjustmentSet::from_names(dag, &[&[], &["A0", "Q", "H"]])?;
            let set8 = AdjustmentSet::from_names(dag, &[&["H"], &["A0", "Q", "H"]])?;
            let pair_a = OraclePair {
                label: "example2 pair (periods share the outcome surrogate)".into(),
                base: set3,
                union: set5.clone(),
                base_nuis: OracleNuisances {
                    b: vec![constant(a1 + a0), linear(h, c, a1 + a0)],
                    pi: vec![pi0, pi1(regime.value(1))],
                    chi: a1 + a0,
                },
                union_nuis: OracleNuisances {
                    b: vec![constant(a1 + a0), linear(q, 1.0, a1)],
                    pi: vec![constant(prob(expit(0.5), regime.value(0))), pi1(regime.value(1))],
                    chi: a1 + a0,
                },
            };
            let pair_b = OraclePair {
                label: "example2 pair (baseline enlargement)".into(),
                base: set5,
                union: set8,
                base_nuis: OracleNuisances {
                    b: vec![constant(a1 + a0), linear(q, 1.0, a1)],
                    pi: vec![pi0b, pi1(regime.value(1))],
                    chi: a1 + a0,
                },
                union_nuis: OracleNuisances {
                    b: vec![linear(h, c, a1 + a0), linear(q, 1.0, a1)],
                    pi: vec![constant(prob(expit(0.5), regime.value(0))), pi1(regime.value(1))],
                    chi: a1 + a0,
                },
            };
            Ok(vec![pair_a, pair_b])
        }
        other => Err(Error::Graph(format!("no oracle pairs for `{other}`"))),
    }
}
