// SPDX-License-Identifier: MIT
//! Time-dependent adjustment sets for longitudinal causal DAGs.
//!
//! Given a role-annotated causal graph for a study with treatments
//! `A_0, ..., A_p`, time-indexed covariates and a terminal outcome, this
//! crate enumerates the sufficient time-dependent adjustment sets, orders
//! them by asymptotic estimator variance through graphical certificates,
//! and verifies both claims with exact rational oracles and a seeded
//! Monte Carlo simulation engine.
//!
//! The narrative guide lives in `book/`; its code blocks compile and run as
//! doctests of this crate (see [`guide`]).

pub mod adjust;
pub mod builtins;
pub mod compare;
pub mod dsep;
pub mod error;
pub mod estimate;
pub mod exact;
pub mod glm;
pub mod graph;
pub mod rng;
pub mod scm;
pub mod swig;

pub use adjust::{
    algorithm1_reduce, def1_to_def2_notation, enumerate_def2_sets, is_sufficient_def1,
    is_sufficient_def2, AdjustmentSet, Def2Status, Enumeration,
};
pub use compare::{build_dominance_order, theorem_certifies, DominanceCertificate, DominanceOrder};
pub use dsep::{d_separated, d_separated_oracle, DsepQuery};
pub use error::{Error, Result};
pub use exact::{exact_variance_oracle, DiscreteScm};
pub use graph::{parse_dag, Dag, NodeRole, NodeSet};
pub use scm::{sample_truncnorm, simulate_dataset, Dataset, ScmSpec};
pub use swig::{build_swig, sequential_exchangeability_holds, Regime, Swig};

/// The book chapters, included here so every code block in the guide is
/// compiled and executed by `cargo test --doc`.
pub mod guide {
    #[doc = include_str!("../../../book/src/graphs.md")]
    pub mod graphs {}
    #[doc = include_str!("../../../book/src/separation.md")]
    pub mod separation {}
    #[doc = include_str!("../../../book/src/interventions.md")]
    pub mod interventions {}
    #[doc = include_str!("../../../book/src/adjustment-sets.md")]
    pub mod adjustment_sets {}
    #[doc = include_str!("../../../book/src/variance.md")]
    pub mod variance {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    pub mod simulation {}
    #[doc = include_str!("../../../book/src/estimation.md")]
    pub mod estimation {}
}
