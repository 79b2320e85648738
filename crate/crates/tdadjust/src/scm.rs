// SPDX-License-Identifier: MIT
//! Structural causal models compatible with a [`Dag`] and dataset simulation.

use crate::error::{Error, Result};
use crate::glm::expit;
use crate::graph::{Dag, NodeRole};
use crate::rng::{substream, DOMAIN_SIMULATION};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Noise attached to a structural equation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum NoiseLaw {
    #[serde(rename = "truncnormal")]
    TruncNormal { mu: f64, sigma2: f64, min: f64, max: f64 },
}

/// Response link of a structural equation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Link {
    #[serde(rename = "identity")]
    Identity,
    #[serde(rename = "expit-bernoulli")]
    ExpitBernoulli,
}

/// One structural equation: linear predictor, optional noise, link.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Equation {
    pub node: String,
    pub intercept: f64,
    #[serde(default)]
    pub coef: BTreeMap<String, f64>,
    #[serde(default)]
    pub noise: Option<NoiseLaw>,
    pub link: Link,
}

/// A full per-node structural specification, listed in topological order.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScmSpec {
    pub equations: Vec<Equation>,
}

impl ScmSpec {
    pub fn from_json_str(text: &str) -> Result<ScmSpec> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Checks the specification against a graph: one equation per node,
    /// coefficient keys within the node's parents, Bernoulli links on
    /// treatments, valid noise parameters.
    pub fn validate(&self, dag: &Dag) -> Result<()> {
        if self.equations.len() != dag.node_count() {
            return Err(Error::Graph(format!(
                "SCM has {} equations for {} nodes",
                self.equations.len(),
                dag.node_count()
            )));
        }
        let mut seen = vec![false; dag.node_count()];
        for e in &self.equations {
            let v = dag.index_of(&e.node)?;
            if seen[v] {
                return Err(Error::Graph(format!("duplicate equation for `{}`", e.node)));
            }
            seen[v] = true;
            for parent in e.coef.keys() {
                let p = dag.index_of(parent)?;
                if !dag.parent_set(v).contains(p) {
                    return Err(Error::Graph(format!(
                        "equation for `{}` references `{parent}` which is not a parent",
                        e.node
                    )));
                }
            }
            match dag.role(v) {
                NodeRole::Treatment { .. } => {
                    if e.link != Link::ExpitBernoulli {
                        return Err(Error::Graph(format!(
                            "treatment `{}` must use the expit-bernoulli link",
                            e.node
                        )));
                    }
                }
                _ => {}
            }
            if let Some(NoiseLaw::TruncNormal { sigma2, min, max, .. }) = e.noise {
                if !(min < max) || !(sigma2 > 0.0) {
                    return Err(Error::Graph(format!(
                        "invalid truncated-normal parameters on `{}`",
                        e.node
                    )));
                }
            }
        }
        Ok(())
    }

    fn equation_for(&self, name: &str) -> Option<&Equation> {
        self.equations.iter().find(|e| e.node == name)
    }
}

/// Column-major simulated dataset; column order is the graph's topological order.
#[derive(Clone, Debug)]
pub struct Dataset {
    names: Vec<String>,
    cols: Vec<Vec<f64>>,
    col_of_node: Vec<usize>,
    n: usize,
}

impl Dataset {
    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn column_names(&self) -> &[String] {
        &self.names
    }

    /// Column for a dag node index.
    pub fn column(&self, node: usize) -> &[f64] {
        &self.cols[self.col_of_node[node]]
    }

    /// CSV export with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = self.names.join(",");
        out.push('\n');
        for row in 0..self.n {
            for (c, col) in self.cols.iter().enumerate() {
                if c > 0 {
                    out.push(',');
                }
                out.push_str(&format!("{}", col[row]));
            }
            out.push('\n');
        }
        out
    }
}

/// One draw from a truncated normal law via rejection from the parent normal.
///
/// Acceptance for the (±2σ) laws used here is ≈ 95%.
pub fn sample_truncnorm<R: Rng>(law: NoiseLaw, rng: &mut R) -> f64 {
    match law {
        NoiseLaw::TruncNormal { mu, sigma2, min, max } => {
            let normal = Normal::new(mu, sigma2.sqrt()).expect("validated sigma2 > 0");
            loop {
                let x = normal.sample(rng);
                if x >= min && x <= max {
                    return x;
                }
            }
        }
    }
}

/// Simulates `n` rows; a pure function of `(scm, n, seed)`.
pub fn simulate_dataset(scm: &ScmSpec, dag: &Dag, n: usize, seed: u64) -> Result<Dataset> {
    simulate_replication(scm, dag, n, seed, 0)
}

/// Simulation for replication `rep` of a study with master seed `seed`;
/// every node draws from its own `(rep, node)` substream.
pub fn simulate_replication(
    scm: &ScmSpec,
    dag: &Dag,
    n: usize,
    seed: u64,
    rep: u64,
) -> Result<Dataset> {
    scm.validate(dag)?;
    let order = dag.topological_order();
    let mut names = Vec::with_capacity(order.len());
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(order.len());
    let mut col_of_node = vec![usize::MAX; dag.node_count()];
    for (pos, &v) in order.iter().enumerate() {
        let eqn = scm
            .equation_for(dag.name(v))
            .ok_or_else(|| Error::Graph(format!("missing equation for `{}`", dag.name(v))))?;
        let mut rng = substream(seed, DOMAIN_SIMULATION, rep, v as u64);
        let mut col = vec![eqn.intercept; n];
        for (parent, w) in &eqn.coef {
            let p = dag.index_of(parent)?;
            let pc = &cols[col_of_node[p]];
            for i in 0..n {
                col[i] += w * pc[i];
            }
        }
        match eqn.link {
            Link::Identity => {
                if let Some(law) = eqn.noise {
                    for value in col.iter_mut() {
                        *value += sample_truncnorm(law, &mut rng);
                    }
                }
            }
            Link::ExpitBernoulli => {
                for value in col.iter_mut() {
                    let p = expit(*value);
                    *value = if rng.gen::<f64>() < p { 1.0 } else { 0.0 };
                }
            }
        }
        names.push(dag.name(v).to_string());
        col_of_node[v] = pos;
        cols.push(col);
    }
    Ok(Dataset {
        names,
        cols,
        col_of_node,
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtins::{builtin_graph, builtin_scm};
    use crate::glm::{fit_linear, fit_logistic, Design};

    fn mean(xs: &[f64]) -> f64 {
        xs.iter().sum::<f64>() / xs.len() as f64
    }

    #[test]
    fn truncnorm_moments() {
        let law = NoiseLaw::TruncNormal { mu: 0.0, sigma2: 1.0, min: -2.0, max: 2.0 };
        let mut rng = substream(5, 9, 0, 0);
        let n = 1_000_000;
        let xs: Vec<f64> = (0..n).map(|_| sample_truncnorm(law, &mut rng)).collect();
        assert!(xs.iter().all(|&x| (-2.0..=2.0).contains(&x)));
        let m = mean(&xs);
        assert!(m.abs() < 0.004, "mean {m}");
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
        // second moment of the standard normal truncated to [-2, 2]:
        // 1 - 2*2*phi(2)/(2*Phi(2)-1) = 0.7737413...
        assert!((v - 0.7737).abs() < 0.01, "var {v}");
    }

    #[test]
    fn empty_dataset_has_schema() {
        let dag = builtin_graph("example1").unwrap();
        let scm = builtin_scm("example1").unwrap();
        let data = simulate_dataset(&scm, &dag, 0, 1).unwrap();
        assert_eq!(data.rows(), 0);
        assert_eq!(data.column_names().len(), 7);
        assert_eq!(data.to_csv().lines().count(), 1);
    }

    #[test]
    fn simulation_is_reproducible() {
        let dag = builtin_graph("example1").unwrap();
        let scm = builtin_scm("example1").unwrap();
        let a = simulate_dataset(&scm, &dag, 100, 42).unwrap();
        let b = simulate_dataset(&scm, &dag, 100, 42).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        let c = simulate_dataset(&scm, &dag, 100, 43).unwrap();
        assert_ne!(a.to_csv(), c.to_csv());
    }

    #[test]
    fn example1_regression_recovers_outcome_coefficients() {
        let dag = builtin_graph("example1").unwrap();
        let scm = builtin_scm("example1").unwrap();
        let n = 1_000_000;
        let data = simulate_dataset(&scm, &dag, n, 7).unwrap();
        let y = data.column(dag.index_of("Y").unwrap()).to_vec();
        let d = Design::new(
            n,
            vec![
                data.column(dag.index_of("A1").unwrap()).to_vec(),
                data.column(dag.index_of("A0").unwrap()).to_vec(),
                data.column(dag.index_of("C12").unwrap()).to_vec(),
            ],
        )
        .unwrap();
        let beta = fit_linear(&d, &y).unwrap();
        for (i, want) in [(1, 1.0), (2, 1.0), (3, 1.0)] {
            assert!((beta[i] - want).abs() < 0.01, "beta = {beta:?}");
        }
    }

    #[test]
    fn example2_propensity_slope_recovered() {
        let dag = builtin_graph("example2").unwrap();
        let scm = builtin_scm("example2_strong_HA1").unwrap();
        let n = 1_000_000;
        let data = simulate_dataset(&scm, &dag, n, 11).unwrap();
        let a1 = data.column(dag.index_of("A1").unwrap()).to_vec();
        let d = Design::new(n, vec![data.column(dag.index_of("H").unwrap()).to_vec()]).unwrap();
        let beta = fit_logistic(&d, &a1).unwrap();
        assert!((beta[1] - 3.0).abs() < 0.05, "beta = {beta:?}");
    }

    #[test]
    fn scm_json_round_trip() {
        let scm = builtin_scm("example2_strong_HRQ").unwrap();
        let json = scm.to_json().unwrap();
        let back = ScmSpec::from_json_str(&json).unwrap();
        assert_eq!(back.equations.len(), scm.equations.len());
        let dag = builtin_graph("example2").unwrap();
        back.validate(&dag).unwrap();
    }

    #[test]
    fn bad_coefficient_key_rejected() {
        let dag = builtin_graph("example1").unwrap();
        let mut scm = builtin_scm("example1").unwrap();
        scm.equations[1].coef.insert("Y".into(), 1.0);
        assert!(scm.validate(&dag).is_err());
    }
}
