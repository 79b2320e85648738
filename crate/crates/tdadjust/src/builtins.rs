// SPDX-License-Identifier: MIT
//! Built-in example graphs and their simulation models.

use crate::error::{Error, Result};
use crate::graph::{parse_dag, Dag};
use crate::scm::{Equation, Link, NoiseLaw, ScmSpec};

/// Two-period study: two baseline covariates, two time-1 covariates.
pub const EXAMPLE1_GRAPH: &str = "\
# Two-period longitudinal study with time-dependent confounding.
node C01 role=covariate k=0 j=1
node C02 role=covariate k=0 j=2
node A0  role=treatment k=0
node C11 role=covariate k=1 j=1
node C12 role=covariate k=1 j=2
node A1  role=treatment k=1
node Y   role=outcome
edge C01 -> A0
edge C01 -> C02
edge C02 -> A1
edge C02 -> C11
edge A0  -> Y
edge A0  -> A1
edge A0  -> C11
edge C11 -> A1
edge C11 -> C12
edge C12 -> Y
edge A1  -> Y
";

/// Two-period study where the baseline covariate H is independent of A0.
/// The j indices order Q before R so set numbering matches the reference tables.
pub const EXAMPLE2_GRAPH: &str = "\
# Two-period study; H affects treatment 2 directly and through R -> Q.
node H  role=covariate k=0 j=1
node A0 role=treatment k=0
node Q  role=covariate k=1 j=1
node R  role=covariate k=1 j=2
node A1 role=treatment k=1
node Y  role=outcome
edge A0 -> R
edge H  -> R
edge R  -> Q
edge H  -> A1
edge Q  -> Y
edge A1 -> Y
";

/// Names accepted by [`builtin_scm`] and the CLI `--builtin` flag.
pub const BUILTIN_SCM_NAMES: [&str; 3] = ["example1", "example2_strong_HA1", "example2_strong_HRQ"];

/// Reference Monte Carlo standard deviations for the example-1 study
/// (10,000 replications of size 1,000; targeted-MLE numbers), indexed by the
/// canonical set number minus one.
pub const EXAMPLE1_REFERENCE_SD: [f64; 24] = [
    0.125, 0.106, 0.110, 0.118, 0.099, 0.101, 0.123, 0.104, 0.106, 0.117, 0.099, 0.106, 0.107,
    0.088, 0.095, 0.123, 0.104, 0.106, 0.120, 0.100, 0.105, 0.112, 0.093, 0.100,
];

/// Reference Monte Carlo standard deviations for the example-2 study
/// (20,000 replications of size 1,000): `(strong H→A1, strong H→R→Q)` per
/// canonical set number.
pub const EXAMPLE2_REFERENCE_SD: [(f64, f64); 26] = [
    (0.146, 0.199),
    (0.175, 0.222),
    (0.214, 0.248),
    (0.154, 0.203),
    (0.165, 0.207),
    (0.191, 0.229),
    (0.165, 0.207),
    (0.148, 0.173),
    (0.177, 0.199),
    (0.148, 0.173),
    (0.201, 0.220),
    (0.139, 0.194),
    (0.158, 0.213),
    (0.143, 0.197),
    (0.165, 0.208),
    (0.191, 0.229),
    (0.165, 0.208),
    (0.148, 0.174),
    (0.177, 0.199),
    (0.148, 0.174),
    (0.128, 0.164),
    (0.159, 0.191),
    (0.136, 0.168),
    (0.119, 0.157),
    (0.140, 0.180),
    (0.123, 0.161),
];

/// Parses one of the built-in graphs (`example1` or `example2`).
pub fn builtin_graph(name: &str) -> Result<Dag> {
    match name {
        "example1" => parse_dag(EXAMPLE1_GRAPH),
        "example2" | "example2_strong_HA1" | "example2_strong_HRQ" => parse_dag(EXAMPLE2_GRAPH),
        other => Err(Error::Graph(format!("unknown builtin graph `{other}`"))),
    }
}

fn tn() -> Option<NoiseLaw> {
    Some(NoiseLaw::TruncNormal {
        mu: 0.0,
        sigma2: 1.0,
        min: -2.0,
        max: 2.0,
    })
}

fn eq(node: &str, intercept: f64, coef: &[(&str, f64)], noise: Option<NoiseLaw>, link: Link) -> Equation {
    Equation {
        node: node.to_string(),
        intercept,
        coef: coef.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        noise,
        link,
    }
}

/// Structural model for one of the built-in data-generating processes.
pub fn builtin_scm(name: &str) -> Result<ScmSpec> {
    match name {
        "example1" => Ok(ScmSpec {
            equations: vec![
                eq("C01", 0.0, &[], tn(), Link::Identity),
                eq("C02", 0.0, &[("C01", 1.0)], tn(), Link::Identity),
                eq("A0", 0.0, &[("C01", 1.0)], None, Link::ExpitBernoulli),
                eq("C11", 0.0, &[("A0", 1.0), ("C02", 1.0)], tn(), Link::Identity),
                eq("C12", 0.0, &[("C11", 1.0)], tn(), Link::Identity),
                eq("A1", 0.0, &[("C02", 1.0), ("A0", 1.0), ("C11", 1.0)], None, Link::ExpitBernoulli),
                eq("Y", 0.0, &[("A1", 1.0), ("A0", 1.0), ("C12", 1.0)], tn(), Link::Identity),
            ],
        }),
        "example2_strong_HA1" => example2_scm(2.5),
        "example2_strong_HRQ" => example2_scm(4.0),
        other => Err(Error::Graph(format!("unknown builtin SCM `{other}`"))),
    }
}

fn example2_scm(h_to_r: f64) -> Result<ScmSpec> {
    Ok(ScmSpec {
        equations: vec![
            eq("A0", 0.5, &[], None, Link::ExpitBernoulli),
            eq("H", 0.0, &[], tn(), Link::Identity),
            eq("R", 0.0, &[("A0", 1.0), ("H", h_to_r)], tn(), Link::Identity),
            eq("Q", 0.0, &[("R", 1.0)], tn(), Link::Identity),
            eq("A1", 0.0, &[("H", 3.0)], None, Link::ExpitBernoulli),
            eq("Y", 0.0, &[("A1", 1.0), ("Q", 1.0)], tn(), Link::Identity),
        ],
    })
}
