// SPDX-License-Identifier: MIT
//! Nuisance fitting, identification-formula estimators, the one-step
//! efficient-influence-function estimator, influence-function diagnostics,
//! and the Monte Carlo study driver.

use crate::adjust::AdjustmentSet;
use crate::error::{Error, Result};
use crate::glm::{expit, fit_linear, fit_logistic, Design};
use crate::graph::{Dag, NodeRole};
use crate::scm::{simulate_replication, Dataset, ScmSpec};
use crate::swig::Regime;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::HashMap;

/// Estimator selection for Monte Carlo studies and the CLI.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Ipw,
    Gcomp,
    Onestep,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Ipw => "ipw",
            Estimator::Gcomp => "gcomp",
            Estimator::Onestep => "onestep",
        }
    }
}

/// Numerical options shared by the weight-based estimators.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct EstimatorOptions {
    /// Optional lower bound applied to estimated propensities.
    pub gbound: Option<f64>,
    /// Normalize the one-step correction weights by their sample mean.
    /// The normalizer converges to one, so the influence function is
    /// unchanged; finite-sample weight noise is damped considerably.
    pub stabilized: bool,
    /// Hard cap on cumulative inverse-probability weights; exceeding it is
    /// counted as a positivity flag, not a failure.
    pub weight_cap: f64,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        EstimatorOptions {
            gbound: None,
            stabilized: true,
            weight_cap: 1e6,
        }
    }
}

/// Per-row nuisance evaluations at a regime: sequential regressions `b_k`
/// and propensities `π_{a_k}`.
#[derive(Clone, Debug)]
pub struct Nuisances {
    pub b: Vec<Vec<f64>>,
    pub pi: Vec<Vec<f64>>,
}

/// Closed-form nuisance functions for a known data-generating process.
pub struct OracleNuisances {
    pub b: Vec<Box<dyn Fn(&Dataset, &Dag, usize) -> f64 + Sync + Send>>,
    pub pi: Vec<Box<dyn Fn(&Dataset, &Dag, usize) -> f64 + Sync + Send>>,
    pub chi: f64,
}

impl OracleNuisances {
    pub fn evaluate(&self, data: &Dataset, dag: &Dag) -> Nuisances {
        let n = data.rows();
        let b = self
            .b
            .iter()
            .map(|f| (0..n).map(|i| f(data, dag, i)).collect())
            .collect();
        let pi = self
            .pi
            .iter()
            .map(|f| (0..n).map(|i| f(data, dag, i)).collect())
            .collect();
        Nuisances { b, pi }
    }
}

/// Per-replication cache of fitted models, keyed by design signatures so
/// sets sharing a period reuse the same fits.
#[derive(Default)]
pub struct FitCache {
    propensity: HashMap<(usize, Vec<usize>), Vec<f64>>,
    outcome: HashMap<Vec<(usize, Vec<usize>)>, Vec<f64>>,
}

fn sorted_members(set: &AdjustmentSet, k: usize) -> Vec<usize> {
    let mut v: Vec<usize> = set.period(k).iter().collect();
    v.sort_unstable();
    v
}

/// Observed-column design for the given nodes.
fn design_of(data: &Dataset, cols: &[usize]) -> Result<Design> {
    Design::new(
        data.rows(),
        cols.iter().map(|&v| data.column(v).to_vec()).collect(),
    )
}

/// Design with treatment columns substituted at their regime values; used
/// when evaluating fitted models at "held fixed" treatment histories.
fn design_at_regime(data: &Dataset, dag: &Dag, cols: &[usize], regime: &Regime) -> Result<Design> {
    let n = data.rows();
    let mut out = Vec::with_capacity(cols.len());
    for &v in cols {
        match dag.role(v) {
            NodeRole::Treatment { k } => out.push(vec![regime.value(k) as f64; n]),
            _ => out.push(data.column(v).to_vec()),
        }
    }
    Design::new(n, out)
}

/// Fits the sequential outcome regressions and propensities for `set` at
/// `regime`, reusing `cache` entries when design signatures repeat.
pub fn fit_nuisances(
    data: &Dataset,
    dag: &Dag,
    set: &AdjustmentSet,
    regime: &Regime,
    options: &EstimatorOptions,
    cache: &mut FitCache,
) -> Result<Nuisances> {
    set.validate(dag)?;
    let p1 = dag.period_count();
    let n = data.rows();
    // Outcome chain from the last period backwards. The fit at level k
    // regresses the previous evaluation on (A_k, Z_k) as observed; the
    // evaluation substitutes regime values into every treatment column.
    let mut b: Vec<Vec<f64>> = vec![Vec::new(); p1];
    let mut chain_key: Vec<(usize, Vec<usize>)> = Vec::new();
    let mut target: Vec<f64> = data.column(dag.outcome()).to_vec();
    for k in (0..p1).rev() {
        let members = sorted_members(set, k);
        let mut cols = vec![dag.treatment(k)];
        cols.extend(&members);
        chain_key.push((k, cols.clone()));
        let eval = if let Some(hit) = cache.outcome.get(&chain_key) {
            hit.clone()
        } else {
            let beta = fit_linear(&design_of(data, &cols)?, &target)?;
            let eval = design_at_regime(data, dag, &cols, regime)?.predict(&beta);
            cache.outcome.insert(chain_key.clone(), eval.clone());
            eval
        };
        target = eval.clone();
        b[k] = eval;
    }
    // Propensities: A_k on Z_k as observed, evaluated at held-fixed history.
    let mut pi: Vec<Vec<f64>> = Vec::with_capacity(p1);
    for k in 0..p1 {
        let members = sorted_members(set, k);
        let a_col = data.column(dag.treatment(k));
        let key = (k, members.clone());
        let p_one: Vec<f64> = if let Some(beta) = cache.propensity.get(&key) {
            design_at_regime(data, dag, &members, regime)?.predict(beta)
                .into_iter()
                .map(expit)
                .collect()
        } else {
            let beta = if members.is_empty() {
                // intercept-only model: closed form
                let mean = a_col.iter().sum::<f64>() / n as f64;
                if mean <= 0.0 || mean >= 1.0 {
                    return Err(Error::Numeric("treatment column has a single class".into()));
                }
                vec![(mean / (1.0 - mean)).ln()]
            } else {
                fit_logistic(&design_of(data, &members)?, a_col)?
            };
            let out = design_at_regime(data, dag, &members, regime)?
                .predict(&beta)
                .into_iter()
                .map(expit)
                .collect();
            cache.propensity.insert(key, beta);
            out
        };
        let want = regime.value(k);
        let mut col: Vec<f64> = p_one
            .into_iter()
            .map(|p| if want == 1 { p } else { 1.0 - p })
            .collect();
        if let Some(g) = options.gbound {
            for v in col.iter_mut() {
                *v = v.max(g).min(1.0);
            }
        }
        pi.push(col);
    }
    Ok(Nuisances { b, pi })
}

/// Per-observation influence-function evaluation attached to an estimate.
#[derive(Clone, Debug)]
pub struct EifEvaluation {
    /// ψ per observation, centered so its sample mean is exactly zero.
    pub psi: Vec<f64>,
    /// Residual term I_p/λ_p (Y - b_p) per observation (after stabilization).
    pub residual_term: Vec<f64>,
    /// Telescoping terms I_{k-1}/λ_{k-1} (b_k - b_{k-1}) for k = p..1.
    pub level_terms: Vec<Vec<f64>>,
    /// Number of weight-cap hits (positivity warnings).
    pub positivity_flags: u64,
}

impl EifEvaluation {
    /// EIF-based variance estimate of the point estimate.
    pub fn variance_of_mean(&self) -> f64 {
        let n = self.psi.len() as f64;
        let mean = self.psi.iter().sum::<f64>() / n;
        self.psi.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0) / n
    }
}

fn regime_indicator(data: &Dataset, dag: &Dag, regime: &Regime, upto: usize, row: usize) -> bool {
    (0..=upto).all(|k| data.column(dag.treatment(k))[row] == regime.value(k) as f64)
}

/// Inverse-probability-weighted mean: `mean(I_ā(Ā) Y / Π_k π̂_k)`.
///
/// Note the weighting display does not identify `E[Y^a]` for every
/// enumerated set (see the enumeration's `ipw_display_valid` tag); on such
/// sets this estimator is biased even at the population level.
pub fn ipw_estimate(
    data: &Dataset,
    dag: &Dag,
    set: &AdjustmentSet,
    regime: &Regime,
    options: &EstimatorOptions,
) -> Result<(f64, u64)> {
    let nuis = fit_nuisances(data, dag, set, regime, options, &mut FitCache::default())?;
    ipw_from(data, dag, regime, &nuis, options)
}

/// IPW from precomputed propensities (fitted or oracle).
pub fn ipw_from(
    data: &Dataset,
    dag: &Dag,
    regime: &Regime,
    nuis: &Nuisances,
    options: &EstimatorOptions,
) -> Result<(f64, u64)> {
    let n = data.rows();
    if n == 0 {
        return Err(Error::Numeric("empty dataset".into()));
    }
    let p = dag.period_count() - 1;
    let y = data.column(dag.outcome());
    let mut flags = 0;
    let mut acc = 0.0;
    for i in 0..n {
        if !regime_indicator(data, dag, regime, p, i) {
            continue;
        }
        let mut lambda = 1.0;
        for k in 0..=p {
            lambda *= nuis.pi[k][i];
        }
        let mut w = 1.0 / lambda;
        if w > options.weight_cap {
            w = options.weight_cap;
            flags += 1;
        }
        acc += w * y[i];
    }
    Ok((acc / n as f64, flags))
}

/// Iterated-conditional-expectation estimate: the average of the fitted
/// first-period regression evaluated at the regime.
pub fn gcomp_estimate(
    data: &Dataset,
    dag: &Dag,
    set: &AdjustmentSet,
    regime: &Regime,
    options: &EstimatorOptions,
) -> Result<f64> {
    let nuis = fit_nuisances(data, dag, set, regime, options, &mut FitCache::default())?;
    Ok(gcomp_from(&nuis))
}

pub fn gcomp_from(nuis: &Nuisances) -> f64 {
    let b0 = &nuis.b[0];
    b0.iter().sum::<f64>() / b0.len() as f64
}

/// One-step estimator: plug-in plus the mean of the estimated influence
/// function's correction terms. Returned ψ values set the final estimate as
/// their centering constant, so `mean(ψ) = 0` exactly on the sample.
pub fn onestep_estimate(
    data: &Dataset,
    dag: &Dag,
    set: &AdjustmentSet,
    regime: &Regime,
    options: &EstimatorOptions,
) -> Result<(f64, EifEvaluation)> {
    let nuis = fit_nuisances(data, dag, set, regime, options, &mut FitCache::default())?;
    onestep_from(data, dag, regime, &nuis, options)
}

/// One-step from precomputed nuisances (fitted or oracle).
pub fn onestep_from(
    data: &Dataset,
    dag: &Dag,
    regime: &Regime,
    nuis: &Nuisances,
    options: &EstimatorOptions,
) -> Result<(f64, EifEvaluation)> {
    let n = data.rows();
    if n == 0 {
        return Err(Error::Numeric("empty dataset".into()));
    }
    let p1 = dag.period_count();
    let y = data.column(dag.outcome());
    let mut flags = 0u64;
    // cumulative weights w_k = I_{ā_k}(Ā_k) / λ_k per level
    let mut weights: Vec<Vec<f64>> = vec![vec![0.0; n]; p1];
    for i in 0..n {
        let mut lambda = 1.0;
        for k in 0..p1 {
            if !regime_indicator(data, dag, regime, k, i) {
                break;
            }
            lambda *= nuis.pi[k][i];
            let mut w = 1.0 / lambda;
            if w > options.weight_cap {
                w = options.weight_cap;
                flags += 1;
            }
            weights[k][i] = w;
        }
    }
    // stabilization: divide each level's weights by their sample mean
    let mut scaled = weights;
    if options.stabilized {
        for level in scaled.iter_mut() {
            let mean = level.iter().sum::<f64>() / n as f64;
            if mean <= 0.0 {
                return Err(Error::Numeric("no observations follow the regime".into()));
            }
            for w in level.iter_mut() {
                *w /= mean;
            }
        }
    }
    let p = p1 - 1;
    let residual_term: Vec<f64> = (0..n)
        .map(|i| scaled[p][i] * (y[i] - nuis.b[p][i]))
        .collect();
    // level term for k >= 1 uses the weight through k-1
    let level_terms: Vec<Vec<f64>> = (1..p1)
        .map(|k| {
            (0..n)
                .map(|i| scaled[k - 1][i] * (nuis.b[k][i] - nuis.b[k - 1][i]))
                .collect()
        })
        .collect();
    let mean_of = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let mut estimate = mean_of(&nuis.b[0]) + mean_of(&residual_term);
    for t in &level_terms {
        estimate += mean_of(t);
    }
    let psi: Vec<f64> = (0..n)
        .map(|i| {
            let mut v = residual_term[i] + nuis.b[0][i] - estimate;
            for t in &level_terms {
                v += t[i];
            }
            v
        })
        .collect();
    Ok((
        estimate,
        EifEvaluation {
            psi,
            residual_term,
            level_terms,
            positivity_flags: flags,
        },
    ))
}

/// Weights attached to counterfactual means in a linear contrast.
#[derive(Clone, Debug)]
pub struct ContrastSpec {
    pub terms: Vec<(Regime, f64)>,
}

impl ContrastSpec {
    pub fn new(terms: Vec<(Regime, f64)>) -> Result<Self> {
        if !terms.iter().any(|(_, c)| *c != 0.0) {
            return Err(Error::Adjustment("contrast needs a nonzero weight".into()));
        }
        for (i, (r, _)) in terms.iter().enumerate() {
            if terms[..i].iter().any(|(s, _)| s == r) {
                return Err(Error::Adjustment("contrast regimes must be distinct".into()));
            }
        }
        Ok(ContrastSpec { terms })
    }

    pub fn label(&self) -> String {
        self.terms
            .iter()
            .map(|(r, c)| format!("{c:+}*E[Y^{}]", r.label()))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Weighted combination of per-regime one-step estimates with the stacked
/// influence function; `sets` supplies one adjustment set per contrast term.
pub fn contrast_estimate(
    data: &Dataset,
    dag: &Dag,
    sets: &[AdjustmentSet],
    contrast: &ContrastSpec,
    options: &EstimatorOptions,
) -> Result<(f64, EifEvaluation)> {
    if sets.len() != contrast.terms.len() {
        return Err(Error::Adjustment(
            "need one adjustment set per contrast term".into(),
        ));
    }
    let n = data.rows();
    let mut value = 0.0;
    let mut psi = vec![0.0; n];
    let mut flags = 0;
    for ((regime, weight), set) in contrast.terms.iter().zip(sets) {
        let (est, eif) = onestep_estimate(data, dag, set, regime, options)?;
        value += weight * est;
        for i in 0..n {
            psi[i] += weight * eif.psi[i];
        }
        flags += eif.positivity_flags;
    }
    Ok((
        value,
        EifEvaluation {
            psi,
            residual_term: Vec::new(),
            level_terms: Vec::new(),
            positivity_flags: flags,
        },
    ))
}

/// A sample statistic with its Monte Carlo standard error.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct DiagStat {
    pub value: f64,
    pub se: f64,
}

impl DiagStat {
    /// |value| below `band` standard errors.
    pub fn within(&self, band: f64) -> bool {
        self.value.abs() <= band * self.se
    }
}

/// Empirical checks of the influence-function decomposition identities for a
/// nested pair (base ⊆ union per period).
#[derive(Clone, Debug, Serialize)]
pub struct DiagnosticsReport {
    pub n: usize,
    /// mean of r_k for each period.
    pub r_means: Vec<DiagStat>,
    /// cov(r_k, r_i) for i < k.
    pub r_cross: Vec<(usize, usize, DiagStat)>,
    /// cov(ψ_union, r_k).
    pub psi_cross: Vec<(usize, DiagStat)>,
    /// Sample variances of the r_k.
    pub r_variances: Vec<f64>,
}

/// Nuisance source for diagnostics.
pub enum DiagSource<'a> {
    Fitted(&'a EstimatorOptions),
    Oracle {
        base: &'a OracleNuisances,
        union: &'a OracleNuisances,
    },
}

fn stat_mean(xs: &[f64]) -> DiagStat {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    DiagStat {
        value: mean,
        se: (var / n).sqrt(),
    }
}

fn stat_cov(a: &[f64], b: &[f64]) -> DiagStat {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let prods: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).collect();
    stat_mean(&prods)
}

/// Influence-function decomposition diagnostics for a nested pair.
///
/// `base` must be contained in `union` period by period. The r_k terms use
/// the base set's weights against the difference of the two sequential
/// regressions; under the inclusion rule's conditions every reported moment
/// is zero in expectation.
pub fn eif_diagnostics(
    data: &Dataset,
    dag: &Dag,
    base: &AdjustmentSet,
    union: &AdjustmentSet,
    regime: &Regime,
    source: DiagSource<'_>,
) -> Result<DiagnosticsReport> {
    base.validate(dag)?;
    union.validate(dag)?;
    for k in 0..dag.period_count() {
        if !base.period(k).is_subset_of(union.period(k)) {
            return Err(Error::Adjustment(format!(
                "pair is not nested at time {k}: base must be contained in union"
            )));
        }
    }
    let (nb, nu, chi) = match source {
        DiagSource::Fitted(options) => {
            let mut cache = FitCache::default();
            let nb = fit_nuisances(data, dag, base, regime, options, &mut cache)?;
            let nu = fit_nuisances(data, dag, union, regime, options, &mut cache)?;
            let (est, _) = onestep_from(data, dag, regime, &nu, options)?;
            (nb, nu, est)
        }
        DiagSource::Oracle { base, union } => {
            (base.evaluate(data, dag), union.evaluate(data, dag), union.chi)
        }
    };
    let n = data.rows();
    let p1 = dag.period_count();
    let mut r: Vec<Vec<f64>> = Vec::with_capacity(p1);
    for k in 0..p1 {
        let a_col = data.column(dag.treatment(k));
        let col: Vec<f64> = (0..n)
            .map(|i| {
                if k > 0 && !regime_indicator(data, dag, regime, k - 1, i) {
                    return 0.0;
                }
                let mut lambda = 1.0;
                for j in 0..k {
                    lambda *= nb.pi[j][i];
                }
                let ik = if a_col[i] == regime.value(k) as f64 { 1.0 } else { 0.0 };
                (ik / nb.pi[k][i] - 1.0) * (nu.b[k][i] - nb.b[k][i]) / lambda
            })
            .collect();
        r.push(col);
    }
    // ψ for the union set, centered at the union's identified value:
    // (b_0 - χ) + Σ_{k>=1} I_{k-1}/λ_{k-1} (b_k - b_{k-1}) + I_p/λ_p (Y - b_p).
    let y = data.column(dag.outcome());
    let p = p1 - 1;
    let psi_union: Vec<f64> = (0..n)
        .map(|i| {
            let mut v = nu.b[0][i] - chi;
            let mut lambda = 1.0; // λ_{k-1} entering level k
            for k in 1..p1 {
                if !regime_indicator(data, dag, regime, k - 1, i) {
                    return v;
                }
                lambda *= nu.pi[k - 1][i];
                v += (nu.b[k][i] - nu.b[k - 1][i]) / lambda;
            }
            if regime_indicator(data, dag, regime, p, i) {
                lambda *= nu.pi[p][i];
                v += (y[i] - nu.b[p][i]) / lambda;
            }
            v
        })
        .collect();
    let r_means: Vec<DiagStat> = r.iter().map(|col| stat_mean(col)).collect();
    let mut r_cross = Vec::new();
    for k in 0..p1 {
        for i in 0..k {
            r_cross.push((k, i, stat_cov(&r[k], &r[i])));
        }
    }
    let psi_cross: Vec<(usize, DiagStat)> = (0..p1)
        .map(|k| (k, stat_cov(&psi_union, &r[k])))
        .collect();
    let r_variances: Vec<f64> = r
        .iter()
        .map(|col| {
            let m = col.iter().sum::<f64>() / n as f64;
            col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n as f64 - 1.0)
        })
        .collect();
    Ok(DiagnosticsReport {
        n,
        r_means,
        r_cross,
        psi_cross,
        r_variances,
    })
}

/// Monte Carlo study target.
#[derive(Clone, Debug)]
pub enum Target {
    Mean(Regime),
    /// Contrast evaluated with the same adjustment set for every term.
    Contrast(ContrastSpec),
}

impl Target {
    pub fn label(&self) -> String {
        match self {
            Target::Mean(r) => format!("E[Y^{}]", r.label()),
            Target::Contrast(c) => c.label(),
        }
    }
}

/// Configuration of a Monte Carlo study.
pub struct McStudy<'a> {
    pub scm: &'a ScmSpec,
    pub dag: &'a Dag,
    /// Labeled adjustment sets to evaluate on every replication.
    pub sets: Vec<(String, AdjustmentSet)>,
    pub target: Target,
    pub estimators: Vec<Estimator>,
    pub reps: usize,
    pub n: usize,
    pub seed: u64,
    pub options: EstimatorOptions,
    /// Worker threads; `None` uses the global pool. Results are identical
    /// for any value.
    pub jobs: Option<usize>,
}

/// One aggregated row of a Monte Carlo report.
#[derive(Clone, Debug, Serialize)]
pub struct ReportRow {
    pub set: String,
    pub estimator: &'static str,
    pub successes: usize,
    pub failures: usize,
    pub positivity_flags: u64,
    pub mc_mean: f64,
    pub mc_sd: f64,
    /// Standard error of the Monte Carlo SD: sd / sqrt(2 (reps - 1)).
    pub mc_sd_se: f64,
}

/// Aggregated Monte Carlo estimates across replications.
#[derive(Clone, Debug, Serialize)]
pub struct VarianceReport {
    pub target: String,
    pub reps: usize,
    pub n: usize,
    pub seed: u64,
    pub options: EstimatorOptions,
    pub rows: Vec<ReportRow>,
}

impl VarianceReport {
    pub fn row(&self, set: &str, estimator: Estimator) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.set == set && r.estimator == estimator.name())
    }

    /// CSV export with a fixed, documented column order.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("set,estimator,successes,failures,positivity_flags,mc_mean,mc_sd,mc_sd_se\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.set, r.estimator, r.successes, r.failures, r.positivity_flags, r.mc_mean, r.mc_sd, r.mc_sd_se
            ));
        }
        out
    }
}

/// Runs the study: one simulated dataset per replication on its own
/// substream, every estimator on every set, deterministic aggregation.
pub fn mc_study(cfg: &McStudy<'_>) -> Result<VarianceReport> {
    if cfg.reps < 2 {
        return Err(Error::Numeric("need at least 2 replications".into()));
    }
    cfg.scm.validate(cfg.dag)?;
    for (_, s) in &cfg.sets {
        s.validate(cfg.dag)?;
    }
    let run = || -> Vec<Result<Vec<(Option<f64>, u64)>>> {
        (0..cfg.reps)
            .into_par_iter()
            .map(|rep| replicate(cfg, rep as u64))
            .collect()
    };
    let per_rep: Vec<Result<Vec<(Option<f64>, u64)>>> = match cfg.jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build()
            .map_err(|e| Error::Numeric(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    };
    let cells = cfg.sets.len() * cfg.estimators.len();
    let mut samples: Vec<Vec<f64>> = vec![Vec::with_capacity(cfg.reps); cells];
    let mut failures = vec![0usize; cells];
    let mut flags = vec![0u64; cells];
    for rep in per_rep {
        let rep = rep?;
        for (cell, (value, flag)) in rep.into_iter().enumerate() {
            flags[cell] += flag;
            match value {
                Some(v) => samples[cell].push(v),
                None => failures[cell] += 1,
            }
        }
    }
    let mut rows = Vec::with_capacity(cells);
    for (si, (label, _)) in cfg.sets.iter().enumerate() {
        for (ei, est) in cfg.estimators.iter().enumerate() {
            let cell = si * cfg.estimators.len() + ei;
            let xs = &samples[cell];
            let m = xs.len();
            let (mean, sd) = if m >= 2 {
                let mean = xs.iter().sum::<f64>() / m as f64;
                let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1) as f64;
                (mean, var.sqrt())
            } else {
                (f64::NAN, f64::NAN)
            };
            rows.push(ReportRow {
                set: label.clone(),
                estimator: est.name(),
                successes: m,
                failures: failures[cell],
                positivity_flags: flags[cell],
                mc_mean: mean,
                mc_sd: sd,
                mc_sd_se: sd / (2.0 * (m.max(2) as f64 - 1.0)).sqrt(),
            });
        }
    }
    Ok(VarianceReport {
        target: cfg.target.label(),
        reps: cfg.reps,
        n: cfg.n,
        seed: cfg.seed,
        options: cfg.options,
        rows,
    })
}

fn replicate(cfg: &McStudy<'_>, rep: u64) -> Result<Vec<(Option<f64>, u64)>> {
    let data = simulate_replication(cfg.scm, cfg.dag, cfg.n, cfg.seed, rep)?;
    let mut cache = FitCache::default();
    let mut out = Vec::with_capacity(cfg.sets.len() * cfg.estimators.len());
    for (_, set) in &cfg.sets {
        for est in &cfg.estimators {
            let value = estimate_once(&data, cfg.dag, set, &cfg.target, *est, &cfg.options, &mut cache);
            out.push(match value {
                Ok(v) => (Some(v.0), v.1),
                Err(_) => (None, 0),
            });
        }
    }
    Ok(out)
}

fn estimate_once(
    data: &Dataset,
    dag: &Dag,
    set: &AdjustmentSet,
    target: &Target,
    estimator: Estimator,
    options: &EstimatorOptions,
    cache: &mut FitCache,
) -> Result<(f64, u64)> {
    match target {
        Target::Mean(regime) => {
            let nuis = fit_nuisances(data, dag, set, regime, options, cache)?;
            match estimator {
                Estimator::Gcomp => Ok((gcomp_from(&nuis), 0)),
                Estimator::Ipw => ipw_from(data, dag, regime, &nuis, options),
                Estimator::Onestep => {
                    let (v, eif) = onestep_from(data, dag, regime, &nuis, options)?;
                    Ok((v, eif.positivity_flags))
                }
            }
        }
        Target::Contrast(spec) => {
            let mut value = 0.0;
            let mut flags = 0;
            for (regime, weight) in &spec.terms {
                let nuis = fit_nuisances(data, dag, set, regime, options, cache)?;
                let (v, f) = match estimator {
                    Estimator::Gcomp => (gcomp_from(&nuis), 0),
                    Estimator::Ipw => ipw_from(data, dag, regime, &nuis, options)?,
                    Estimator::Onestep => {
                        let (v, eif) = onestep_from(data, dag, regime, &nuis, options)?;
                        (v, eif.positivity_flags)
                    }
                };
                value += weight * v;
                flags += f;
            }
            Ok((value, flags))
        }
    }
}

/// Linear partial correlation of two columns given a conditioning set,
/// computed from least-squares residuals.
pub fn partial_correlation(data: &Dataset, x: usize, y: usize, given: &[usize]) -> Result<f64> {
    partial_correlation_poly(data, x, y, given, 1)
}

/// Partial correlation with the conditioning columns expanded to powers up
/// to `degree`, with binary-by-continuous and binary-by-binary interactions
/// (binary columns are never raised to powers). Degrees above one diagnose
/// whether a nonzero linear partial correlation reflects genuine dependence
/// or only a nonlinear conditional mean.
pub fn partial_correlation_poly(
    data: &Dataset,
    x: usize,
    y: usize,
    given: &[usize],
    degree: u32,
) -> Result<f64> {
    let n = data.rows();
    let mut continuous: Vec<Vec<f64>> = Vec::new();
    let mut binary: Vec<Vec<f64>> = Vec::new();
    for &g in given {
        let base = data.column(g);
        if base.iter().all(|&v| v == 0.0 || v == 1.0) {
            binary.push(base.to_vec());
        } else {
            for d in 1..=degree {
                continuous.push(base.iter().map(|v| v.powi(d as i32)).collect());
            }
        }
    }
    let mut cols: Vec<Vec<f64>> = continuous.clone();
    cols.extend(binary.iter().cloned());
    if degree > 1 {
        for b in &binary {
            for c in &continuous {
                cols.push((0..n).map(|i| b[i] * c[i]).collect());
            }
            for b2 in &binary {
                if std::ptr::eq(b, b2) {
                    break;
                }
                cols.push((0..n).map(|i| b[i] * b2[i]).collect());
            }
        }
    }
    let design = Design::new(n, cols)?;
    let resid = |target: usize| -> Result<Vec<f64>> {
        let beta = fit_linear(&design, data.column(target))?;
        Ok(data
            .column(target)
            .iter()
            .enumerate()
            .map(|(i, v)| v - design.predict_row(i, &beta))
            .collect())
    };
    let rx = resid(x)?;
    let ry = resid(y)?;
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..rx.len() {
        let a = rx[i] - mx;
        let b = ry[i] - my;
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

pub mod oracle_pairs;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtins::{builtin_graph, builtin_scm};
    use crate::scm::simulate_dataset;

    fn setup(n: usize, seed: u64) -> (Dag, Dataset) {
        let dag = builtin_graph("example1").unwrap();
        let scm = builtin_scm("example1").unwrap();
        let data = simulate_dataset(&scm, &dag, n, seed).unwrap();
        (dag, data)
    }

    #[test]
    fn gcomp_population_value() {
        // E[Y^(1,1)] = a1 + a0 + E[C12^a] and E[C12^a] = E[C11^a] = a0 + E[C02] = 1,
        // so the target is 3.
        let (dag, data) = setup(1_000_000, 21);
        let set14 = AdjustmentSet::from_names(&dag, &[&["C02"], &["C12", "A0"]]).unwrap();
        let regime = Regime::all_ones(&dag);
        let est = gcomp_estimate(&data, &dag, &set14, &regime, &EstimatorOptions::default()).unwrap();
        assert!((est - 3.0).abs() < 0.02, "gcomp = {est}");
    }

    #[test]
    fn onestep_psi_centered() {
        let (dag, data) = setup(2000, 3);
        let set5 = AdjustmentSet::from_names(&dag, &[&["C02"], &["C12", "A0", "C02"]]).unwrap();
        let regime = Regime::all_ones(&dag);
        for stabilized in [true, false] {
            let opts = EstimatorOptions { stabilized, ..Default::default() };
            let (est, eif) = onestep_estimate(&data, &dag, &set5, &regime, &opts).unwrap();
            let mean = eif.psi.iter().sum::<f64>() / eif.psi.len() as f64;
            assert!(mean.abs() < 1e-10, "psi mean {mean}");
            assert!((est - 3.0).abs() < 0.5);
        }
    }

    #[test]
    fn ipw_with_known_randomization() {
        // single-period randomized treatment with known pi = 1/2
        let text = "node A role=treatment k=0\nnode Y role=outcome\nedge A -> Y\n";
        let dag = crate::graph::parse_dag(text).unwrap();
        let scm = ScmSpec {
            equations: vec![
                crate::scm::Equation {
                    node: "A".into(),
                    intercept: 0.0,
                    coef: Default::default(),
                    noise: None,
                    link: crate::scm::Link::ExpitBernoulli,
                },
                crate::scm::Equation {
                    node: "Y".into(),
                    intercept: 0.0,
                    coef: [("A".to_string(), 2.0)].into_iter().collect(),
                    noise: Some(crate::scm::NoiseLaw::TruncNormal {
                        mu: 0.0,
                        sigma2: 1.0,
                        min: -2.0,
                        max: 2.0,
                    }),
                    link: crate::scm::Link::Identity,
                },
            ],
        };
        let data = simulate_dataset(&scm, &dag, 5000, 8).unwrap();
        let regime = Regime::new(&dag, vec![1]).unwrap();
        let nuis = Nuisances {
            b: vec![vec![0.0; 5000]],
            pi: vec![vec![0.5; 5000]],
        };
        let (est, flags) = ipw_from(&data, &dag, &regime, &nuis, &EstimatorOptions::default()).unwrap();
        let y = data.column(dag.outcome());
        let a = data.column(dag.treatment(0));
        let manual = y
            .iter()
            .zip(a)
            .map(|(yi, ai)| if *ai == 1.0 { 2.0 * yi } else { 0.0 })
            .sum::<f64>()
            / 5000.0;
        assert!((est - manual).abs() < 1e-12);
        assert_eq!(flags, 0);
    }

    #[test]
    fn contrast_trivia() {
        let (dag, data) = setup(1500, 5);
        let set14 = AdjustmentSet::from_names(&dag, &[&["C02"], &["C12", "A0"]]).unwrap();
        let r = Regime::all_ones(&dag);
        // +1/-1 on the same regime cancels exactly
        let spec = ContrastSpec {
            terms: vec![(r.clone(), 1.0), (r.clone(), -1.0)],
        };
        let (v, eif) =
            contrast_estimate(&data, &dag, &[set14.clone(), set14.clone()], &spec, &EstimatorOptions::default())
                .unwrap();
        assert!(v.abs() < 1e-12);
        assert!(eif.psi.iter().all(|p| p.abs() < 1e-12));
        // single term with weight one reduces to the one-step estimate
        let spec = ContrastSpec::new(vec![(r.clone(), 1.0)]).unwrap();
        let (v1, _) = contrast_estimate(&data, &dag, &[set14.clone()], &spec, &EstimatorOptions::default()).unwrap();
        let (v2, _) = onestep_estimate(&data, &dag, &set14, &r, &EstimatorOptions::default()).unwrap();
        assert!((v1 - v2).abs() < 1e-12);
        // duplicate regimes rejected by the constructor
        assert!(ContrastSpec::new(vec![(r.clone(), 1.0), (r, -1.0)]).is_err());
    }

    #[test]
    fn ipw_sd_ordering_and_contrast_target() {
        let dag = builtin_graph("example1").unwrap();
        let scm = builtin_scm("example1").unwrap();
        let set5 = AdjustmentSet::from_names(&dag, &[&["C02"], &["C12", "A0", "C02"]]).unwrap();
        let set14 = AdjustmentSet::from_names(&dag, &[&["C02"], &["C12", "A0"]]).unwrap();
        let cfg = McStudy {
            scm: &scm,
            dag: &dag,
            sets: vec![("set5".into(), set5), ("set14".into(), set14.clone())],
            target: Target::Mean(Regime::all_ones(&dag)),
            estimators: vec![Estimator::Ipw],
            reps: 400,
            n: 1000,
            seed: 17,
            options: EstimatorOptions::default(),
            jobs: None,
        };
        let report = mc_study(&cfg).unwrap();
        // ordering only: the weighting estimator is noisier on the larger set
        let sd5 = report.row("set5", Estimator::Ipw).unwrap().mc_sd;
        let sd14 = report.row("set14", Estimator::Ipw).unwrap().mc_sd;
        assert!(sd14 < sd5, "ipw SDs: set14 {sd14:.4} vs set5 {sd5:.4}");

        // contrast target: E[Y^(1,1)] - E[Y^(0,0)] = 3 for this model
        let contrast = ContrastSpec::new(vec![
            (Regime::all_ones(&dag), 1.0),
            (Regime::new(&dag, vec![0, 0]).unwrap(), -1.0),
        ])
        .unwrap();
        let cfg = McStudy {
            scm: &scm,
            dag: &dag,
            sets: vec![("set14".into(), set14)],
            target: Target::Contrast(contrast),
            estimators: vec![Estimator::Onestep],
            reps: 60,
            n: 2000,
            seed: 18,
            options: EstimatorOptions::default(),
            jobs: None,
        };
        let report = mc_study(&cfg).unwrap();
        let row = report.row("set14", Estimator::Onestep).unwrap();
        assert!((row.mc_mean - 3.0).abs() < 0.05, "contrast mean {}", row.mc_mean);
    }

    #[test]
    fn mc_study_two_reps_sd() {
        let dag = builtin_graph("example1").unwrap();
        let scm = builtin_scm("example1").unwrap();
        let set14 = AdjustmentSet::from_names(&dag, &[&["C02"], &["C12", "A0"]]).unwrap();
        let cfg = McStudy {
            scm: &scm,
            dag: &dag,
            sets: vec![("set14".into(), set14)],
            target: Target::Mean(Regime::all_ones(&dag)),
            estimators: vec![Estimator::Onestep],
            reps: 2,
            n: 400,
            seed: 99,
            options: EstimatorOptions::default(),
            jobs: Some(1),
        };
        let report = mc_study(&cfg).unwrap();
        let row = report.row("set14", Estimator::Onestep).unwrap();
        assert_eq!(row.successes, 2);
        // with two replications the sample SD is |e1 - e2| / sqrt(2)
        let e: Vec<f64> = (0..2)
            .map(|rep| {
                let data = simulate_replication(&scm, &dag, 400, 99, rep).unwrap();
                onestep_estimate(
                    &data,
                    &dag,
                    &cfg.sets[0].1,
                    &Regime::all_ones(&dag),
                    &EstimatorOptions::default(),
                )
                .unwrap()
                .0
            })
            .collect();
        let want = (e[0] - e[1]).abs() / 2f64.sqrt();
        assert!((row.mc_sd - want).abs() < 1e-12);
    }

    #[test]
    fn diagnostics_with_fitted_nuisances() {
        // Nested pair with a non-degenerate difference term so the identities
        // are informative: base drops Q from the second period. (The zero-mean
        // identities hold under true nuisances; with fitted nuisances they
        // hold up to estimation error, which the 4-SE band absorbs when the
        // difference terms are not themselves pure noise.)
        let dag = builtin_graph("example2").unwrap();
        let scm = builtin_scm("example2_strong_HA1").unwrap();
        let data = simulate_dataset(&scm, &dag, 200_000, 31).unwrap();
        let base = AdjustmentSet::from_names(&dag, &[&[], &["A0", "H"]]).unwrap();
        let union = AdjustmentSet::from_names(&dag, &[&[], &["A0", "Q", "H"]]).unwrap();
        let regime = Regime::all_ones(&dag);
        let opts = EstimatorOptions::default();
        let report = eif_diagnostics(&data, &dag, &base, &union, &regime, DiagSource::Fitted(&opts))
            .unwrap();
        for stat in &report.r_means {
            assert!(stat.within(4.0), "r mean {} se {}", stat.value, stat.se);
        }
        for (_, _, stat) in &report.r_cross {
            assert!(stat.within(4.0));
        }
        for (_, stat) in &report.psi_cross {
            assert!(stat.within(4.0), "psi cov {} se {}", stat.value, stat.se);
        }
        // the second-period difference is genuinely nonzero
        assert!(report.r_variances[1] > 0.01);
        // a non-nested pair is rejected
        let other = AdjustmentSet::from_names(&dag, &[&["H"], &["A0", "H"]]).unwrap();
        assert!(eif_diagnostics(&data, &dag, &other, &union, &regime, DiagSource::Fitted(&opts))
            .is_err());
    }

    #[test]
    fn partial_correlation_soundness() {
        let dag = builtin_graph("example2").unwrap();
        let scm = builtin_scm("example2_strong_HA1").unwrap();
        let n = 200_000;
        let data = simulate_dataset(&scm, &dag, n, 13).unwrap();
        let threshold = 4.0 / (n as f64).sqrt();
        let h = dag.index_of("H").unwrap();
        let a0 = dag.index_of("A0").unwrap();
        let q = dag.index_of("Q").unwrap();
        let r = dag.index_of("R").unwrap();
        // implied separations with linear conditional means
        assert!(partial_correlation(&data, h, a0, &[]).unwrap().abs() < threshold);
        assert!(partial_correlation(&data, a0, q, &[r]).unwrap().abs() < threshold);
        // a d-connected pair is clearly correlated
        assert!(partial_correlation(&data, r, q, &[]).unwrap().abs() > 0.05);
    }

    #[test]
    fn mc_study_deterministic_across_jobs() {
        let dag = builtin_graph("example2").unwrap();
        let scm = builtin_scm("example2_strong_HA1").unwrap();
        let set24 = AdjustmentSet::from_names(&dag, &[&["H"], &["Q"]]).unwrap();
        let mk = |jobs| McStudy {
            scm: &scm,
            dag: &dag,
            sets: vec![("set24".into(), set24.clone())],
            target: Target::Mean(Regime::all_ones(&dag)),
            estimators: vec![Estimator::Onestep, Estimator::Gcomp, Estimator::Ipw],
            reps: 40,
            n: 300,
            seed: 4,
            options: EstimatorOptions::default(),
            jobs,
        };
        let a = mc_study(&mk(Some(1))).unwrap();
        let b = mc_study(&mk(Some(4))).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}
