// SPDX-License-Identifier: MIT
//! Exact discrete oracles: binary structural models with rational CPTs,
//! evaluated by full enumeration in exact arithmetic.
//!
//! These back the membership test for the nested identification formula, the
//! population checks of the estimators, and the exact variance comparisons.

use crate::adjust::AdjustmentSet;
use crate::error::{Error, Result};
use crate::graph::{Dag, NodeRole};
use crate::rng::{substream, DOMAIN_ORACLE_CPT};
use crate::swig::Regime;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::Rng;

/// Enumeration limit: joint tables are 2^n entries.
pub const MAX_ORACLE_NODES: usize = 20;

fn ratio(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// One conditional probability table: `p_one[bits]` is P(node = 1 | parents),
/// with `bits` packing the parent values in `parents` order.
#[derive(Clone, Debug)]
struct CpTable {
    parents: Vec<usize>,
    p_one: Vec<BigRational>,
}

/// A binary structural model over a [`Dag`] with rational CPTs.
#[derive(Clone, Debug)]
pub struct DiscreteScm {
    dag: Dag,
    cpts: Vec<CpTable>,
}

fn check_size(dag: &Dag) -> Result<()> {
    if dag.node_count() > MAX_ORACLE_NODES {
        return Err(Error::TooLarge {
            what: "oracle model",
            detail: format!("{} binary nodes (limit {MAX_ORACLE_NODES})", dag.node_count()),
        });
    }
    Ok(())
}

#[inline]
fn bit(cfg: usize, node: usize) -> u8 {
    (cfg >> node & 1) as u8
}

#[inline]
fn pack(cfg: usize, nodes: &[usize]) -> usize {
    let mut out = 0;
    for (i, &v) in nodes.iter().enumerate() {
        out |= ((cfg >> v) & 1) << i;
    }
    out
}

impl DiscreteScm {
    /// Random rational CPTs with entries drawn uniformly from {1/10, ..., 9/10}.
    ///
    /// Deterministic given `(seed, draw)`: each node uses its own substream.
    pub fn random(dag: &Dag, seed: u64, draw: u64) -> Result<DiscreteScm> {
        check_size(dag)?;
        let mut cpts = Vec::with_capacity(dag.node_count());
        for v in 0..dag.node_count() {
            let mut parents: Vec<usize> = dag.parent_set(v).iter().collect();
            parents.sort_unstable();
            let mut rng = substream(seed, DOMAIN_ORACLE_CPT, draw, v as u64);
            let p_one = (0..1usize << parents.len())
                .map(|_| ratio(rng.gen_range(1..=9), 10))
                .collect();
            cpts.push(CpTable { parents, p_one });
        }
        Ok(DiscreteScm { dag: dag.clone(), cpts })
    }

    pub fn dag(&self) -> &Dag {
        &self.dag
    }

    /// Number of CPT entries per node, in topological order.
    pub fn cpt_entry_counts(&self) -> Vec<usize> {
        self.dag
            .topological_order()
            .iter()
            .map(|&v| self.cpts[v].p_one.len())
            .collect()
    }

    fn node_count(&self) -> usize {
        self.dag.node_count()
    }

    /// P(node = 1 | parent values taken from `cfg`).
    fn p_one(&self, node: usize, cfg: usize) -> &BigRational {
        let t = &self.cpts[node];
        &t.p_one[pack(cfg, &t.parents)]
    }

    /// Full joint table over all 2^n configurations.
    pub fn joint(&self) -> Vec<BigRational> {
        let n = self.node_count();
        let mut out = Vec::with_capacity(1 << n);
        for cfg in 0..1usize << n {
            let mut p = BigRational::one();
            for v in 0..n {
                let p1 = self.p_one(v, cfg);
                if bit(cfg, v) == 1 {
                    p *= p1;
                } else {
                    p *= BigRational::one() - p1;
                }
            }
            out.push(p);
        }
        out
    }

    /// Ground-truth counterfactual mean E[Y^a] by the truncated factorization.
    pub fn g_formula_mean(&self, regime: &Regime) -> BigRational {
        let n = self.node_count();
        let y = self.dag.outcome();
        let trts: Vec<(usize, u8)> = (0..self.dag.period_count())
            .map(|k| (self.dag.treatment(k), regime.value(k)))
            .collect();
        let mut total = BigRational::zero();
        'cfg: for cfg in 0..1usize << n {
            for &(a, val) in &trts {
                if bit(cfg, a) != val {
                    continue 'cfg;
                }
            }
            if bit(cfg, y) == 0 {
                continue;
            }
            let mut p = BigRational::one();
            for v in 0..n {
                if matches!(self.dag.role(v), NodeRole::Treatment { .. }) {
                    continue;
                }
                let p1 = self.p_one(v, cfg);
                if bit(cfg, v) == 1 {
                    p *= p1;
                } else {
                    p *= BigRational::one() - p1;
                }
            }
            total += p;
        }
        total
    }

    fn split_period(&self, set: &AdjustmentSet, k: usize) -> (Vec<usize>, Vec<usize>) {
        let mut random = Vec::new();
        let mut fixed = Vec::new();
        for v in set.period(k).iter() {
            match self.dag.role(v) {
                NodeRole::Treatment { .. } => fixed.push(v),
                _ => random.push(v),
            }
        }
        (random, fixed)
    }

    fn regime_value_of(&self, node: usize, regime: &Regime) -> u8 {
        match self.dag.role(node) {
            NodeRole::Treatment { k } => regime.value(k),
            _ => unreachable!("held-fixed members are treatments"),
        }
    }

    /// Sequential regression tables b_p, ..., b_0 for `set` under `regime`.
    ///
    /// `b[k]` maps each configuration of the random part of Z_k (and, per the
    /// definition, held-fixed members at their regime values) to
    /// E(b_{k+1} | A_k = a_k, Z_k(ā_{k-1})). Returned per full configuration.
    fn b_tables(&self, joint: &[BigRational], set: &AdjustmentSet, regime: &Regime) -> Vec<Vec<BigRational>> {
        let n = self.node_count();
        let p1 = self.dag.period_count();
        let y = self.dag.outcome();
        // current function of `args` with values `table[packed args]`
        let mut args: Vec<usize> = vec![y];
        let mut table: Vec<BigRational> = vec![BigRational::zero(), BigRational::one()];
        let mut per_cfg: Vec<Vec<BigRational>> = vec![Vec::new(); p1];
        for k in (0..p1).rev() {
            let (random, fixed) = self.split_period(set, k);
            let mut cond_base: Vec<(usize, u8)> = vec![(self.dag.treatment(k), regime.value(k))];
            for &f in &fixed {
                cond_base.push((f, self.regime_value_of(f, regime)));
            }
            let mut next = vec![BigRational::zero(); 1 << random.len()];
            for zbits in 0..1usize << random.len() {
                let mut num = BigRational::zero();
                let mut den = BigRational::zero();
                'cfg: for cfg in 0..1usize << n {
                    for &(node, val) in &cond_base {
                        if bit(cfg, node) != val {
                            continue 'cfg;
                        }
                    }
                    if pack(cfg, &random) != zbits {
                        continue;
                    }
                    den += &joint[cfg];
                    num += &joint[cfg] * &table[pack(cfg, &args)];
                }
                debug_assert!(!den.is_zero(), "interior CPTs guarantee positivity");
                next[zbits] = num / den;
            }
            per_cfg[k] = (0..1usize << n).map(|cfg| next[pack(cfg, &random)].clone()).collect();
            args = random;
            table = next;
        }
        per_cfg
    }

    /// Propensity tables: `pi[k][cfg]` = P(A_k = a_k | Z_k(ā_{k-1})) at the
    /// covariate values of `cfg`.
    fn pi_tables(&self, joint: &[BigRational], set: &AdjustmentSet, regime: &Regime) -> Vec<Vec<BigRational>> {
        let n = self.node_count();
        let p1 = self.dag.period_count();
        let mut out = Vec::with_capacity(p1);
        for k in 0..p1 {
            let (random, fixed) = self.split_period(set, k);
            let cond_base: Vec<(usize, u8)> = fixed
                .iter()
                .map(|&f| (f, self.regime_value_of(f, regime)))
                .collect();
            let a_k = self.dag.treatment(k);
            let want = regime.value(k);
            let mut tab = vec![BigRational::zero(); 1 << random.len()];
            for (zbits, slot) in tab.iter_mut().enumerate() {
                let mut num = BigRational::zero();
                let mut den = BigRational::zero();
                'cfg: for cfg in 0..1usize << n {
                    for &(node, val) in &cond_base {
                        if bit(cfg, node) != val {
                            continue 'cfg;
                        }
                    }
                    if pack(cfg, &random) != zbits {
                        continue;
                    }
                    den += &joint[cfg];
                    if bit(cfg, a_k) == want {
                        num += &joint[cfg];
                    }
                }
                *slot = num / den;
            }
            out.push((0..1usize << n).map(|cfg| tab[pack(cfg, &random)].clone()).collect());
        }
        out
    }

    /// Value of the nested identification formula for `set` under `regime`.
    pub fn nested_value(&self, set: &AdjustmentSet, regime: &Regime) -> Result<BigRational> {
        set.validate(&self.dag)?;
        let joint = self.joint();
        let b = self.b_tables(&joint, set, regime);
        let mut total = BigRational::zero();
        for (cfg, p) in joint.iter().enumerate() {
            total += p * &b[0][cfg];
        }
        Ok(total)
    }

    /// Value of the inverse-probability-weighting display for `set`.
    pub fn ipw_value(&self, set: &AdjustmentSet, regime: &Regime) -> Result<BigRational> {
        set.validate(&self.dag)?;
        let n = self.node_count();
        let joint = self.joint();
        let pi = self.pi_tables(&joint, set, regime);
        let y = self.dag.outcome();
        let mut total = BigRational::zero();
        'cfg: for cfg in 0..1usize << n {
            for k in 0..self.dag.period_count() {
                if bit(cfg, self.dag.treatment(k)) != regime.value(k) {
                    continue 'cfg;
                }
            }
            if bit(cfg, y) == 0 {
                continue;
            }
            let mut w = BigRational::one();
            for tab in pi.iter() {
                w *= &tab[cfg];
            }
            total += &joint[cfg] / w;
        }
        Ok(total)
    }

    /// Exact efficient-influence-function evaluation under the true nuisances.
    pub fn eif_tables(&self, set: &AdjustmentSet, regime: &Regime) -> Result<EifTables> {
        set.validate(&self.dag)?;
        let n = self.node_count();
        let p1 = self.dag.period_count();
        let joint = self.joint();
        let b = self.b_tables(&joint, set, regime);
        let pi = self.pi_tables(&joint, set, regime);
        let mut chi = BigRational::zero();
        for (cfg, p) in joint.iter().enumerate() {
            chi += p * &b[0][cfg];
        }
        let y = self.dag.outcome();
        let indicator = |cfg: usize, upto: isize| -> bool {
            (0..=upto).all(|k| bit(cfg, self.dag.treatment(k as usize)) == regime.value(k as usize))
        };
        let mut psi = Vec::with_capacity(1 << n);
        for cfg in 0..1usize << n {
            let lambda = |upto: isize| -> BigRational {
                let mut f = BigRational::one();
                for k in 0..=upto {
                    f *= &pi[k as usize][cfg];
                }
                f
            };
            let yv = if bit(cfg, y) == 1 { BigRational::one() } else { BigRational::zero() };
            let last = p1 as isize - 1;
            let mut value = if indicator(cfg, last) {
                (yv - &b[p1 - 1][cfg]) / lambda(last)
            } else {
                BigRational::zero()
            };
            for k in 0..p1 {
                let prev = if k == 0 { chi.clone() } else { b[k - 1][cfg].clone() };
                if indicator(cfg, k as isize - 1) {
                    value += (&b[k][cfg] - prev) / lambda(k as isize - 1);
                }
            }
            psi.push(value);
        }
        let mut mean = BigRational::zero();
        for (cfg, p) in joint.iter().enumerate() {
            mean += p * &psi[cfg];
        }
        let mut variance = BigRational::zero();
        for (cfg, p) in joint.iter().enumerate() {
            let d = &psi[cfg] - &mean;
            variance += p * &d * &d;
        }
        Ok(EifTables {
            chi,
            mean,
            variance,
            psi,
            b,
            pi,
            joint,
        })
    }

    /// Exact decomposition terms for an inclusion pair: `base` = B and
    /// `union` = (G, B). The r_k terms use the base set's weights and the
    /// difference of the two sequential regressions.
    pub fn inclusion_decomposition(
        &self,
        base: &AdjustmentSet,
        union: &AdjustmentSet,
        regime: &Regime,
    ) -> Result<ExactDecomposition> {
        let eb = self.eif_tables(base, regime)?;
        let eu = self.eif_tables(union, regime)?;
        if eb.chi != eu.chi {
            return Err(Error::Adjustment(
                "base and union identify different values; not a valid pair".into(),
            ));
        }
        let n = self.node_count();
        let p1 = self.dag.period_count();
        let joint = &eb.joint;
        let indicator = |cfg: usize, upto: isize| -> bool {
            (0..=upto).all(|k| bit(cfg, self.dag.treatment(k as usize)) == regime.value(k as usize))
        };
        let mut r: Vec<Vec<BigRational>> = Vec::with_capacity(p1);
        for k in 0..p1 {
            let mut col = Vec::with_capacity(1 << n);
            for cfg in 0..1usize << n {
                if !indicator(cfg, k as isize - 1) {
                    col.push(BigRational::zero());
                    continue;
                }
                let mut lam = BigRational::one();
                for j in 0..k {
                    lam *= &eb.pi[j][cfg];
                }
                let a_match = bit(cfg, self.dag.treatment(k)) == regime.value(k);
                let ik = if a_match { BigRational::one() } else { BigRational::zero() };
                let s = &eu.b[k][cfg] - &eb.b[k][cfg];
                col.push((ik / &eb.pi[k][cfg] - BigRational::one()) * s / lam);
            }
            r.push(col);
        }
        let expect = |vals: &dyn Fn(usize) -> BigRational| -> BigRational {
            let mut acc = BigRational::zero();
            for (cfg, p) in joint.iter().enumerate() {
                acc += p * vals(cfg);
            }
            acc
        };
        let r_means: Vec<BigRational> = (0..p1).map(|k| expect(&|cfg| r[k][cfg].clone())).collect();
        let mut r_cross_covs = Vec::new();
        for k in 0..p1 {
            for i in 0..k {
                r_cross_covs.push(expect(&|cfg| &r[k][cfg] * &r[i][cfg]));
            }
        }
        let psi_r_covs: Vec<BigRational> = (0..p1)
            .map(|k| expect(&|cfg| &eu.psi[cfg] * &r[k][cfg]))
            .collect();
        let r_variances: Vec<BigRational> = (0..p1)
            .map(|k| expect(&|cfg| &r[k][cfg] * &r[k][cfg]) - &r_means[k] * &r_means[k])
            .collect();
        Ok(ExactDecomposition {
            var_base: eb.variance,
            var_union: eu.variance,
            r_means,
            r_cross_covs,
            psi_r_covs,
            r_variances,
        })
    }
}

/// Exact per-configuration EIF evaluation.
pub struct EifTables {
    /// Identified counterfactual mean (equals the nested-formula value).
    pub chi: BigRational,
    /// E[ψ]; zero for any sufficient set.
    pub mean: BigRational,
    /// Var(ψ): the asymptotic-variance functional attached to the set.
    pub variance: BigRational,
    /// ψ per full configuration.
    pub psi: Vec<BigRational>,
    b: Vec<Vec<BigRational>>,
    pi: Vec<Vec<BigRational>>,
    joint: Vec<BigRational>,
}

/// Exact terms of the inclusion variance decomposition.
pub struct ExactDecomposition {
    pub var_base: BigRational,
    pub var_union: BigRational,
    pub r_means: Vec<BigRational>,
    pub r_cross_covs: Vec<BigRational>,
    pub psi_r_covs: Vec<BigRational>,
    pub r_variances: Vec<BigRational>,
}

impl ExactDecomposition {
    /// Whether all appendix identities hold exactly:
    /// zero r means, zero cross moments, zero ψ-r moments, and
    /// Var ψ_B = Var ψ_{(G,B)} + Σ_k Var r_k.
    pub fn holds_exactly(&self) -> bool {
        let zero = BigRational::zero();
        self.r_means.iter().all(|m| *m == zero)
            && self.r_cross_covs.iter().all(|m| *m == zero)
            && self.psi_r_covs.iter().all(|m| *m == zero)
            && self.var_base
                == &self.var_union + self.r_variances.iter().fold(zero, |a, b| a + b)
    }
}

impl EifTables {
    pub fn mean_is_zero(&self) -> bool {
        self.mean.is_zero()
    }
}

/// Lossy conversion for display purposes.
pub fn rational_to_f64(r: &BigRational) -> f64 {
    use num_traits::ToPrimitive;
    r.to_f64().unwrap_or(f64::NAN)
}

/// Exact `(E[Y^a], Var ψ)` for one set under true nuisances.
pub fn exact_variance_oracle(
    scm: &DiscreteScm,
    set: &AdjustmentSet,
    regime: &Regime,
) -> Result<(BigRational, BigRational)> {
    let t = scm.eif_tables(set, regime)?;
    Ok((t.chi, t.variance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtins::builtin_graph;
    use crate::graph::parse_dag;

    fn two_node() -> Dag {
        parse_dag("node A role=treatment k=0\nnode Y role=outcome\nedge A -> Y\n").unwrap()
    }

    #[test]
    fn cpt_structure_counts() {
        let dag = two_node();
        let scm = DiscreteScm::random(&dag, 1, 0).unwrap();
        assert_eq!(scm.cpt_entry_counts(), vec![1, 2]);
        let dag = builtin_graph("example1").unwrap();
        let scm = DiscreteScm::random(&dag, 1, 0).unwrap();
        // 2^{|parents|} per node in topological order
        assert_eq!(scm.cpt_entry_counts(), vec![1, 2, 2, 4, 2, 8, 8]);
    }

    #[test]
    fn deterministic_draws() {
        let dag = builtin_graph("example1").unwrap();
        let a = DiscreteScm::random(&dag, 5, 2).unwrap();
        let b = DiscreteScm::random(&dag, 5, 2).unwrap();
        assert_eq!(a.joint(), b.joint());
        let c = DiscreteScm::random(&dag, 5, 3).unwrap();
        assert_ne!(a.joint(), c.joint());
    }

    #[test]
    fn joint_sums_to_one() {
        let dag = builtin_graph("example2").unwrap();
        let scm = DiscreteScm::random(&dag, 9, 0).unwrap();
        let total: BigRational = scm.joint().into_iter().sum();
        assert_eq!(total, BigRational::one());
    }

    #[test]
    fn randomized_two_node_hand_computation() {
        // A ~ Bernoulli(pa); Y | A ~ Bernoulli(q_a). With Z = ∅:
        // chi = q_1 for a=1; Var psi = Var(I_a(A)(Y-b)/pi) + Var(b) with b = q_1 const
        //     = E[(I/pi^2) Var(Y|A=1)] = q1(1-q1)/pa.
        let dag = two_node();
        let scm = DiscreteScm::random(&dag, 3, 1).unwrap();
        let a = dag.treatment(0);
        let pa = scm.cpts[a].p_one[0].clone();
        // q1 = P(Y=1 | A=1)
        let ytab = &scm.cpts[dag.outcome()];
        assert_eq!(ytab.parents, vec![a]);
        let q1 = ytab.p_one[1].clone();
        let set = AdjustmentSet::from_names(&dag, &[&[]]).unwrap();
        let regime = Regime::new(&dag, vec![1]).unwrap();
        let (chi, var) = exact_variance_oracle(&scm, &set, &regime).unwrap();
        assert_eq!(chi, q1);
        let want = &q1 * (BigRational::one() - &q1) / pa;
        assert_eq!(var, want);
        assert_eq!(scm.nested_value(&set, &regime).unwrap(), scm.g_formula_mean(&regime));
        assert_eq!(scm.ipw_value(&set, &regime).unwrap(), scm.g_formula_mean(&regime));
    }

    #[test]
    fn psi_mean_zero_and_nested_matches_truth() {
        let dag = builtin_graph("example1").unwrap();
        let scm = DiscreteScm::random(&dag, 11, 0).unwrap();
        let set = AdjustmentSet::from_names(&dag, &[&["C02"], &["C12", "A0"]]).unwrap();
        for regime in Regime::all(&dag) {
            let truth = scm.g_formula_mean(&regime);
            let tables = scm.eif_tables(&set, &regime).unwrap();
            assert_eq!(tables.chi, truth);
            assert!(tables.mean.is_zero());
        }
    }

    #[test]
    fn oracle_size_limit() {
        let mut text = String::new();
        for i in 0..20 {
            text.push_str(&format!("node C{i} role=covariate k=0 j={}\n", i + 1));
        }
        text.push_str("node A role=treatment k=0\nnode Y role=outcome\nedge A -> Y\n");
        let dag = parse_dag(&text).unwrap();
        assert!(DiscreteScm::random(&dag, 0, 0).is_err());
    }
}
