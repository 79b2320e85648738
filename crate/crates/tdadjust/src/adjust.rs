// SPDX-License-Identifier: MIT
//! Time-dependent adjustment sets: sufficiency under the sequential
//! (covariate-only) definition and the relaxed nested-formula definition,
//! the backward reduction algorithm, and table-style enumeration.

use crate::dsep::{d_separated, DsepQuery};
use crate::error::{Error, Result};
use crate::exact::DiscreteScm;
use crate::graph::{Dag, DirectedStructure, NodeRole, NodeSet};
use crate::swig::{build_swig, sequential_exchangeability_holds, Regime};
use num_rational::BigRational;
use std::collections::HashMap;

/// Default master seed for the randomized membership oracle.
pub const DEFAULT_ORACLE_SEED: u64 = 0;
/// Default number of random CPT draws for the membership oracle.
pub const DEFAULT_ORACLE_DRAWS: usize = 5;

/// Per-time node sets (Z_0, ..., Z_p). Past treatments are permitted members;
/// they are the "held fixed" components when formulas are evaluated.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AdjustmentSet {
    periods: Vec<NodeSet>,
}

impl AdjustmentSet {
    pub fn new(dag: &Dag, periods: Vec<NodeSet>) -> Result<Self> {
        let s = AdjustmentSet { periods };
        s.validate(dag)?;
        Ok(s)
    }

    pub fn from_names(dag: &Dag, periods: &[&[&str]]) -> Result<Self> {
        let mut sets = Vec::with_capacity(periods.len());
        for names in periods {
            sets.push(dag.set_of(names)?);
        }
        Self::new(dag, sets)
    }

    /// Temporal eligibility: Z_k may hold covariates measured at or before k
    /// and treatments strictly before k; never the outcome.
    pub fn validate(&self, dag: &Dag) -> Result<()> {
        if self.periods.len() != dag.period_count() {
            return Err(Error::Adjustment(format!(
                "set has {} periods, graph has {}",
                self.periods.len(),
                dag.period_count()
            )));
        }
        for (k, z) in self.periods.iter().enumerate() {
            for v in z.iter() {
                match dag.role(v) {
                    NodeRole::Covariate { k: ck, .. } if ck <= k => {}
                    NodeRole::Treatment { k: tk } if tk < k => {}
                    NodeRole::Outcome => {
                        return Err(Error::Adjustment("the outcome may not be adjusted for".into()))
                    }
                    _ => {
                        return Err(Error::Adjustment(format!(
                            "`{}` is not eligible at time {k}",
                            dag.name(v)
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    pub fn period_count(&self) -> usize {
        self.periods.len()
    }

    pub fn period(&self, k: usize) -> NodeSet {
        self.periods[k]
    }

    /// Z̄_k: union of the first k+1 period sets.
    pub fn cumulative(&self, k: usize) -> NodeSet {
        let mut s = NodeSet::EMPTY;
        for z in &self.periods[..=k] {
            s = s.union(*z);
        }
        s
    }

    /// Treatment members of Z_k (held fixed at regime values when evaluated).
    pub fn held_fixed(&self, dag: &Dag, k: usize) -> NodeSet {
        self.periods[k].intersection(dag.treatment_set())
    }

    /// Non-treatment members of Z_k.
    pub fn random_part(&self, dag: &Dag, k: usize) -> NodeSet {
        self.periods[k].minus(dag.treatment_set())
    }

    pub fn contains_treatment(&self, dag: &Dag) -> bool {
        self.periods.iter().any(|z| z.intersects(dag.treatment_set()))
    }

    /// Text form `Z0={...}; Z1={...}` with members in topological order.
    pub fn label(&self, dag: &Dag) -> String {
        let parts: Vec<String> = self
            .periods
            .iter()
            .enumerate()
            .map(|(k, z)| format!("Z{k}={{{}}}", dag.names_of(*z).join(",")))
            .collect();
        parts.join("; ")
    }
}

/// Sufficiency under the covariate-only sequential definition, decided by
/// counterfactual exchangeability on the intervention graph.
pub fn is_sufficient_def1(dag: &Dag, z: &AdjustmentSet) -> Result<bool> {
    z.validate(dag)?;
    if z.contains_treatment(dag) {
        return Err(Error::Adjustment(
            "definition-1 sets may contain covariates only".into(),
        ));
    }
    let swig = build_swig(dag)?;
    sequential_exchangeability_holds(dag, &swig, z)
}

/// Rewrites a covariate-only set into history notation:
/// Z'_k = {Ā_{k-1}, Z̄_k}, with treatment members marked held-fixed.
pub fn def1_to_def2_notation(dag: &Dag, z: &AdjustmentSet) -> Result<AdjustmentSet> {
    z.validate(dag)?;
    let mut periods = Vec::with_capacity(z.period_count());
    for k in 0..z.period_count() {
        let mut s = z.cumulative(k);
        for j in 0..k {
            s.insert(dag.treatment(j));
        }
        periods.push(s);
    }
    AdjustmentSet::new(dag, periods)
}

/// One step of the backward reduction sweep.
#[derive(Clone, Debug)]
pub struct AlgorithmStep {
    pub k: usize,
    /// Variables dropped from Z_k, in the order they were removed.
    pub dropped: Vec<usize>,
    /// G_k: the retained set, which becomes the parent set of the synthetic
    /// node replacing the outcome in the modified graph.
    pub retained: NodeSet,
}

/// Mutable graph scratchpad for the reduction sweep. The synthetic node Q_k
/// reuses the outcome's slot: its parents become the retained set, and the
/// processed treatment is disconnected.
struct WorkGraph {
    parents: Vec<NodeSet>,
    children: Vec<NodeSet>,
}

impl DirectedStructure for WorkGraph {
    fn node_count(&self) -> usize {
        self.parents.len()
    }
    fn parents(&self, v: usize) -> NodeSet {
        self.parents[v]
    }
    fn children(&self, v: usize) -> NodeSet {
        self.children[v]
    }
}

impl WorkGraph {
    fn from_dag(dag: &Dag) -> Self {
        WorkGraph {
            parents: (0..dag.node_count()).map(|v| dag.parent_set(v)).collect(),
            children: (0..dag.node_count()).map(|v| dag.child_set(v)).collect(),
        }
    }

    fn disconnect(&mut self, v: usize) {
        for p in self.parents[v].iter() {
            self.children[p].remove(v);
        }
        for c in self.children[v].iter() {
            self.parents[c].remove(v);
        }
        self.parents[v] = NodeSet::EMPTY;
        self.children[v] = NodeSet::EMPTY;
    }

    fn set_parents(&mut self, v: usize, parents: NodeSet) {
        self.disconnect(v);
        self.parents[v] = parents;
        for p in parents.iter() {
            self.children[p].insert(v);
        }
    }
}

/// Backward reduction: for k = p..1, drops from Z_k every member separated
/// from the current synthetic outcome given the remainder, then rebuilds the
/// modified graph. Drop candidates are tried greedily in reverse topological
/// order. Z_0 is never touched.
pub fn algorithm1_reduce(dag: &Dag, z_def1: &AdjustmentSet) -> Result<AdjustmentSet> {
    algorithm1_reduce_traced(dag, z_def1).map(|(s, _)| s)
}

/// [`algorithm1_reduce`] plus the per-step trace.
pub fn algorithm1_reduce_traced(
    dag: &Dag,
    z_def1: &AdjustmentSet,
) -> Result<(AdjustmentSet, Vec<AlgorithmStep>)> {
    z_def1.validate(dag)?;
    // Accept either covariate-only notation or the history notation; reduce
    // the history form. Verify the precondition through exchangeability of
    // the stripped covariate set.
    let image = if z_def1.contains_treatment(dag) {
        z_def1.clone()
    } else {
        def1_to_def2_notation(dag, z_def1)?
    };
    let stripped = strip_to_def1(dag, &image)?;
    if !is_sufficient_def1(dag, &stripped)? {
        return Err(Error::Adjustment(
            "input is not a definition-1 sufficient set".into(),
        ));
    }

    let p1 = dag.period_count();
    let mut work = WorkGraph::from_dag(dag);
    let q_node = dag.outcome();
    let mut periods: Vec<NodeSet> = (0..p1).map(|k| image.period(k)).collect();
    let mut steps = Vec::new();
    for k in (1..p1).rev() {
        let a_k = dag.treatment(k);
        let mut retained = periods[k];
        let mut candidates: Vec<usize> = retained.iter().collect();
        candidates.sort_by_key(|&v| std::cmp::Reverse(dag.topo_position(v)));
        let mut dropped = Vec::new();
        for v in candidates {
            let mut cond = retained;
            cond.remove(v);
            cond.insert(a_k);
            cond.remove(q_node);
            let q = DsepQuery::new(NodeSet::singleton(q_node), NodeSet::singleton(v), cond)?;
            if d_separated(&work, q)? {
                retained.remove(v);
                dropped.push(v);
            }
        }
        periods[k] = retained;
        steps.push(AlgorithmStep { k, dropped, retained });
        // Modified graph: Q_k replaces the previous synthetic outcome with
        // parents G_k, and A_k is removed.
        work.set_parents(q_node, retained.minus(NodeSet::singleton(a_k)));
        work.disconnect(a_k);
    }
    Ok((AdjustmentSet::new(dag, periods)?, steps))
}

/// Recovers the covariate-only set whose history notation is `image`.
fn strip_to_def1(dag: &Dag, image: &AdjustmentSet) -> Result<AdjustmentSet> {
    let mut periods = Vec::with_capacity(image.period_count());
    let mut prev = NodeSet::EMPTY;
    for k in 0..image.period_count() {
        let fresh = image.period(k).minus(prev).minus(dag.treatment_set());
        prev = prev.union(image.period(k));
        periods.push(fresh);
    }
    AdjustmentSet::new(dag, periods)
}

/// Outcome of the randomized exact membership test.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Def2Status {
    Sufficient,
    Insufficient,
    /// Draws disagreed; equality held on some CPTs but not others.
    Indeterminate { passes: usize, draws: usize },
}

/// Randomized exact test of the nested identification formula: on each of
/// `draws` random rational CPT models, the formula must equal the ground
/// truth exactly for every regime.
pub fn def2_status(dag: &Dag, z: &AdjustmentSet, draws: usize, seed: u64) -> Result<Def2Status> {
    if draws < 3 {
        return Err(Error::Adjustment("need at least 3 oracle draws".into()));
    }
    z.validate(dag)?;
    let regimes = Regime::all(dag);
    let mut passes = 0;
    for d in 0..draws {
        let scm = DiscreteScm::random(dag, seed, d as u64)?;
        let ok = regimes.iter().try_fold(true, |acc, regime| -> Result<bool> {
            Ok(acc && scm.nested_value(z, regime)? == scm.g_formula_mean(regime))
        })?;
        if ok {
            passes += 1;
        }
    }
    Ok(if passes == draws {
        Def2Status::Sufficient
    } else if passes == 0 {
        Def2Status::Insufficient
    } else {
        Def2Status::Indeterminate { passes, draws }
    })
}

/// Boolean wrapper over [`def2_status`] with the default seed; an
/// indeterminate oracle is an error rather than a silent resolution.
pub fn is_sufficient_def2(dag: &Dag, z: &AdjustmentSet, oracle_draws: usize) -> Result<bool> {
    match def2_status(dag, z, oracle_draws, DEFAULT_ORACLE_SEED)? {
        Def2Status::Sufficient => Ok(true),
        Def2Status::Insufficient => Ok(false),
        Def2Status::Indeterminate { passes, draws } => Err(Error::Indeterminate(format!(
            "nested-formula equality held on {passes} of {draws} CPT draws"
        ))),
    }
}

/// One enumerated sufficient set.
#[derive(Clone, Debug)]
pub struct EnumeratedSet {
    /// 1-based canonical number (sequential sets first, then reductions).
    pub number: usize,
    pub set: AdjustmentSet,
    /// Whether the set is the history image of a definition-1 set.
    pub def1: bool,
    /// Whether the inverse-weighting display also identifies E[Y^a]
    /// (exactly, on every oracle draw). The nested formula always does.
    pub ipw_display_valid: bool,
}

/// Result of [`enumerate_def2_sets`].
#[derive(Clone, Debug)]
pub struct Enumeration {
    pub sets: Vec<EnumeratedSet>,
    pub def1_count: usize,
    pub oracle_seed: u64,
    pub oracle_draws: usize,
}

impl Enumeration {
    pub fn by_number(&self, number: usize) -> &EnumeratedSet {
        &self.sets[number - 1]
    }

    pub fn find(&self, set: &AdjustmentSet) -> Option<&EnumeratedSet> {
        self.sets.iter().find(|e| &e.set == set)
    }
}

/// Candidate universe size `∏_k 2^{|eligible(k)|}` under loose eligibility.
pub fn universe_size(dag: &Dag) -> u128 {
    let mut total: u128 = 1;
    let mut cov = 0usize;
    for k in 0..dag.period_count() {
        cov += dag.covariate_count(k);
        total = total.saturating_mul(1u128 << (cov + k).min(127));
    }
    total
}

/// Covariates usable "fresh" at time k: those measured at k, followed by
/// earlier ones jointly d-separated from every skipped treatment; a covariate
/// whose timing the graph does not tie to the intervening treatments may be
/// treated as measured later.
pub fn fresh_covariates(dag: &Dag, k: usize) -> Result<Vec<usize>> {
    let mut out = dag.covariates_at(k);
    for v in dag.covariates() {
        if let NodeRole::Covariate { k: ck, .. } = dag.role(v) {
            if ck < k {
                let skipped = NodeSet::from_iter((ck..k).map(|j| dag.treatment(j)));
                let q = DsepQuery::new(NodeSet::singleton(v), skipped, NodeSet::EMPTY)?;
                if d_separated(dag, q)? {
                    out.push(v);
                }
            }
        }
    }
    Ok(out)
}

/// All covariate-only sufficient sets over the fresh universes, in canonical
/// order: K_0 subsets size-lex with the empty set first, and for k ≥ 1
/// size-lex with the empty set last. Period sets are pairwise disjoint.
pub fn enumerate_def1_sets(dag: &Dag) -> Result<Vec<AdjustmentSet>> {
    let p1 = dag.period_count();
    let swig = build_swig(dag)?;
    let fresh: Vec<Vec<usize>> = (0..p1)
        .map(|k| fresh_covariates(dag, k))
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    let mut stack: Vec<NodeSet> = Vec::new();
    fn rec(
        dag: &Dag,
        swig: &crate::swig::Swig,
        fresh: &[Vec<usize>],
        k: usize,
        used: NodeSet,
        stack: &mut Vec<NodeSet>,
        out: &mut Vec<AdjustmentSet>,
    ) -> Result<()> {
        if k == fresh.len() {
            let cand = AdjustmentSet::new(dag, stack.clone())?;
            if sequential_exchangeability_holds(dag, swig, &cand)? {
                out.push(cand);
            }
            return Ok(());
        }
        let universe: Vec<usize> = fresh[k].iter().copied().filter(|v| !used.contains(*v)).collect();
        for sub in subsets_ordered(&universe, k >= 1) {
            stack.push(sub);
            rec(dag, swig, fresh, k + 1, used.union(sub), stack, out)?;
            stack.pop();
        }
        Ok(())
    }
    rec(dag, &swig, &fresh, 0, NodeSet::EMPTY, &mut stack, &mut out)?;
    Ok(out)
}

/// Subsets of `universe` in (size, position-lex) order; the empty set is
/// listed first or last per `empty_last`.
fn subsets_ordered(universe: &[usize], empty_last: bool) -> Vec<NodeSet> {
    let m = universe.len();
    let mut out = Vec::with_capacity(1 << m);
    if !empty_last {
        out.push(NodeSet::EMPTY);
    }
    let mut combo: Vec<usize> = Vec::new();
    for size in 1..=m {
        combo.clear();
        combo.extend(0..size);
        loop {
            out.push(NodeSet::from_iter(combo.iter().map(|&i| universe[i])));
            // next combination
            let mut i = size;
            loop {
                if i == 0 {
                    break;
                }
                i -= 1;
                if combo[i] != i + m - size {
                    combo[i] += 1;
                    for j in i + 1..size {
                        combo[j] = combo[j - 1] + 1;
                    }
                    break;
                }
                if i == 0 {
                    combo.clear();
                    break;
                }
            }
            if combo.is_empty() {
                break;
            }
        }
    }
    if empty_last {
        out.push(NodeSet::EMPTY);
    }
    out
}

/// Enumerates all sufficient sets in canonical (table) order.
///
/// Sequential (definition-1) sets come first, grouped by Z_0 block, each
/// rewritten into history notation; then every set reachable from those
/// images by removing scaffolding elements from Z_k for k ≥ 1 that keeps the
/// exact nested-formula oracle satisfied.
pub fn enumerate_def2_sets(
    dag: &Dag,
    oracle_draws: usize,
    max_universe: u64,
) -> Result<Enumeration> {
    enumerate_def2_sets_seeded(dag, oracle_draws, max_universe, DEFAULT_ORACLE_SEED)
}

pub fn enumerate_def2_sets_seeded(
    dag: &Dag,
    oracle_draws: usize,
    max_universe: u64,
    seed: u64,
) -> Result<Enumeration> {
    if oracle_draws < 3 {
        return Err(Error::Adjustment("need at least 3 oracle draws".into()));
    }
    if universe_size(dag) > max_universe as u128 {
        return Err(Error::TooLarge {
            what: "candidate universe",
            detail: format!("{} candidates (limit {max_universe})", universe_size(dag)),
        });
    }
    let p1 = dag.period_count();

    // Oracle models and ground truths, one per draw.
    let regimes = Regime::all(dag);
    let models: Vec<DiscreteScm> = (0..oracle_draws)
        .map(|d| DiscreteScm::random(dag, seed, d as u64))
        .collect::<Result<_>>()?;
    let truths: Vec<Vec<BigRational>> = models
        .iter()
        .map(|m| regimes.iter().map(|r| m.g_formula_mean(r)).collect())
        .collect();
    let nested_ok = |set: &AdjustmentSet| -> Result<bool> {
        for (m, t) in models.iter().zip(&truths) {
            for (r, truth) in regimes.iter().zip(t) {
                if &m.nested_value(set, r)? != truth {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    };
    let ipw_ok = |set: &AdjustmentSet| -> Result<bool> {
        for (m, t) in models.iter().zip(&truths) {
            for (r, truth) in regimes.iter().zip(t) {
                if &m.ipw_value(set, r)? != truth {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    };

    // Sequential sets, grouped by K_0 in enumeration order.
    let mut groups: Vec<(NodeSet, Vec<AdjustmentSet>)> = Vec::new();
    for cand in enumerate_def1_sets(dag)? {
        let k0 = cand.period(0);
        match groups.last_mut() {
            Some((g, list)) if *g == k0 => list.push(cand),
            _ => groups.push((k0, vec![cand])),
        }
    }

    // Emit images, then reductions per group.
    let mut sets: Vec<EnumeratedSet> = Vec::new();
    let mut seen: HashMap<Vec<NodeSet>, ()> = HashMap::new();
    let mut number = 0;
    for (_, group) in &groups {
        for k_set in group {
            let image = def1_to_def2_notation(dag, k_set)?;
            let key: Vec<NodeSet> = (0..p1).map(|k| image.period(k)).collect();
            if seen.insert(key, ()).is_none() {
                number += 1;
                sets.push(EnumeratedSet {
                    number,
                    ipw_display_valid: ipw_ok(&image)?,
                    set: image,
                    def1: true,
                });
            }
        }
    }
    let def1_count = sets.len();

    for (_, group) in &groups {
        let images: Vec<AdjustmentSet> = group
            .iter()
            .map(|k_set| def1_to_def2_notation(dag, k_set))
            .collect::<Result<_>>()?;
        // Removal candidates: scaffolding elements of Z_k for k >= 1 —
        // treatments first (by time), then covariates older than their slot
        // (by time and index).
        let mut trt_cands: Vec<usize> = Vec::new();
        let mut cov_cands: Vec<usize> = Vec::new();
        for image in &images {
            for k in 1..p1 {
                for v in image.period(k).iter() {
                    match dag.role(v) {
                        NodeRole::Treatment { .. } => {
                            if !trt_cands.contains(&v) {
                                trt_cands.push(v);
                            }
                        }
                        NodeRole::Covariate { k: ck, .. } if ck < k => {
                            if !cov_cands.contains(&v) {
                                cov_cands.push(v);
                            }
                        }
                        _ => {}
                    }
                }
            }
        }
        trt_cands.sort_by_key(|&v| match dag.role(v) {
            NodeRole::Treatment { k } => k,
            _ => unreachable!(),
        });
        cov_cands.sort_by_key(|&v| match dag.role(v) {
            NodeRole::Covariate { k, j } => (k, j),
            _ => unreachable!(),
        });
        let removal_universe: Vec<usize> = trt_cands.into_iter().chain(cov_cands).collect();
        for removal in subsets_ordered(&removal_universe, true) {
            if removal.is_empty() {
                continue;
            }
            for image in &images {
                let mut periods: Vec<NodeSet> = (0..p1).map(|k| image.period(k)).collect();
                let mut changed = false;
                for (_k, period) in periods.iter_mut().enumerate().skip(1) {
                    let reduced = period.minus(removal);
                    if reduced != *period {
                        changed = true;
                        *period = reduced;
                    }
                }
                if !changed {
                    continue;
                }
                if seen.contains_key(&periods) {
                    continue;
                }
                seen.insert(periods.clone(), ());
                let cand = AdjustmentSet::new(dag, periods)?;
                if nested_ok(&cand)? {
                    number += 1;
                    sets.push(EnumeratedSet {
                        number,
                        ipw_display_valid: ipw_ok(&cand)?,
                        set: cand,
                        def1: false,
                    });
                }
            }
        }
    }

    Ok(Enumeration {
        sets,
        def1_count,
        oracle_seed: seed,
        oracle_draws,
    })
}
