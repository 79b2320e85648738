// SPDX-License-Identifier: MIT
//! `tdadjust` — enumerate sufficient time-dependent adjustment sets, certify
//! variance dominance, simulate, and reproduce the reference tables.

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use std::path::PathBuf;
use std::process::ExitCode;
use tdadjust::adjust::{enumerate_def2_sets_seeded, AdjustmentSet, Enumeration};
use tdadjust::builtins;
use tdadjust::compare::{build_dominance_order, lemma_inclusion_certifies, DominanceOrder};
use tdadjust::error::Error;
use tdadjust::estimate::{mc_study, Estimator, EstimatorOptions, McStudy, Target};
use tdadjust::exact::DiscreteScm;
use tdadjust::graph::{parse_dag, Dag, NodeSet};
use tdadjust::scm::ScmSpec;
use tdadjust::swig::Regime;

const EXIT_USAGE: u8 = 1;
const EXIT_TOLERANCE: u8 = 2;
const EXIT_RESOURCE: u8 = 3;

#[derive(Parser)]
#[command(
    name = "tdadjust",
    about = "Sufficient time-dependent adjustment sets: enumeration, dominance, simulation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Json,
    Csv,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EstimatorArg {
    Ipw,
    Gcomp,
    Onestep,
}

impl From<EstimatorArg> for Estimator {
    fn from(e: EstimatorArg) -> Self {
        match e {
            EstimatorArg::Ipw => Estimator::Ipw,
            EstimatorArg::Gcomp => Estimator::Gcomp,
            EstimatorArg::Onestep => Estimator::Onestep,
        }
    }
}

#[derive(Args)]
struct CommonOut {
    /// Output format.
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
    /// Write the report to a file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    /// Random CPT draws for the exact membership oracle.
    #[arg(long, default_value_t = 5)]
    draws: usize,
    /// Candidate-universe size guard.
    #[arg(long, default_value_t = 1 << 20)]
    max_universe: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Enumerate all sufficient adjustment sets of a graph.
    ListSets {
        /// Graph file path, or a builtin name (example1, example2).
        #[arg(long)]
        graph: String,
        /// Master seed for the oracle's deterministic substreams.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        oracle: OracleArgs,
        #[command(flatten)]
        out: CommonOut,
    },
    /// Build the variance-dominance partial order with full certificates.
    Dominance {
        #[arg(long)]
        graph: String,
        /// Master seed for the oracle's deterministic substreams.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        oracle: OracleArgs,
        #[command(flatten)]
        out: CommonOut,
    },
    /// Monte Carlo study of the estimators over all enumerated sets.
    Simulate {
        #[arg(long)]
        graph: Option<String>,
        /// Builtin model name (example1, example2_strong_HA1, example2_strong_HRQ).
        #[arg(long, conflicts_with = "scm")]
        builtin: Option<String>,
        /// Structural-model JSON file.
        #[arg(long)]
        scm: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        reps: usize,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        /// Master seed (required: no implicit entropy).
        #[arg(long)]
        seed: Option<u64>,
        /// Estimators to run (repeatable).
        #[arg(long, value_enum, default_values_t = vec![EstimatorArg::Onestep])]
        estimator: Vec<EstimatorArg>,
        /// Regime, comma separated (default: all ones).
        #[arg(long)]
        regime: Option<String>,
        /// Seed for the enumeration oracle's substreams.
        #[arg(long, default_value_t = 0)]
        oracle_seed: u64,
        /// Worker threads (results identical for any value).
        #[arg(long)]
        jobs: Option<usize>,
        /// Lower bound applied to estimated propensities.
        #[arg(long)]
        gbound: Option<f64>,
        /// Disable normalization of the one-step correction weights.
        #[arg(long)]
        raw_weights: bool,
        #[command(flatten)]
        oracle: OracleArgs,
        #[command(flatten)]
        out: CommonOut,
    },
    /// Re-run a reference table and compare Monte Carlo SDs side by side.
    Reproduce {
        /// Which table to reproduce.
        #[arg(long, value_parser = ["table1", "table2"])]
        table: String,
        /// Replications (default: 10000 for table1, 20000 for table2, 200 in smoke mode).
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Quick ordering check: few replications, tolerance comparison skipped.
        #[arg(long)]
        smoke: bool,
        /// Seed for the enumeration oracle's substreams.
        #[arg(long, default_value_t = 0)]
        oracle_seed: u64,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        gbound: Option<f64>,
        #[arg(long)]
        raw_weights: bool,
        #[command(flatten)]
        oracle: OracleArgs,
        #[command(flatten)]
        out: CommonOut,
    },
    /// Exact-arithmetic verification of every enumerated set and certificate.
    OracleCheck {
        #[arg(long)]
        graph: String,
        /// Master seed for the oracle's deterministic substreams.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        oracle: OracleArgs,
        #[command(flatten)]
        out: CommonOut,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap's own help/version output is not an error
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(EXIT_USAGE);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::TooLarge { .. } => ExitCode::from(EXIT_RESOURCE),
                _ => ExitCode::from(EXIT_USAGE),
            }
        }
    }
}

fn load_graph(source: &str) -> tdadjust::Result<Dag> {
    let path = std::path::Path::new(source);
    if path.exists() {
        parse_dag(&std::fs::read_to_string(path)?)
    } else {
        builtins::builtin_graph(source)
    }
}

fn emit(out: &CommonOut, table: String, jsonv: Value, csv: Option<String>) -> tdadjust::Result<()> {
    let text = match out.format {
        Format::Table => table,
        Format::Json => format!("{}\n", serde_json::to_string_pretty(&jsonv)?),
        Format::Csv => csv.ok_or_else(|| Error::Query("no CSV form for this command".into()))?,
    };
    match &out.out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn set_json(dag: &Dag, e: &tdadjust::adjust::EnumeratedSet) -> Value {
    let periods: Vec<Vec<String>> = (0..e.set.period_count())
        .map(|k| dag.names_of(e.set.period(k)))
        .collect();
    json!({
        "number": e.number,
        "def1": e.def1,
        "ipw_display_valid": e.ipw_display_valid,
        "label": e.set.label(dag),
        "periods": periods,
    })
}

fn enumeration_json(dag: &Dag, enumeration: &Enumeration) -> Value {
    json!({
        "graph": {
            "nodes": dag.node_count(),
            "edges": dag.edge_count(),
            "periods": dag.period_count(),
        },
        "oracle": {
            "seed": enumeration.oracle_seed,
            "draws": enumeration.oracle_draws,
            "note": "membership is decided by exact nested-formula equality on random rational \
                     models over the sequential family and its within-period reductions; this is \
                     a design choice, not a published completeness criterion",
        },
        "def1_count": enumeration.def1_count,
        "sets": enumeration.sets.iter().map(|e| set_json(dag, e)).collect::<Vec<_>>(),
    })
}

fn run(cli: Cli) -> tdadjust::Result<u8> {
    match cli.command {
        Command::ListSets { graph, seed, oracle, out } => {
            let dag = load_graph(&graph)?;
            let e = enumerate_def2_sets_seeded(&dag, oracle.draws, oracle.max_universe, seed)?;
            let mut table = format!(
                "{} sufficient adjustment sets ({} sequential)\n{:>3}  {:<5} {:<4} set\n",
                e.sets.len(),
                e.def1_count,
                "#",
                "def1",
                "ipw"
            );
            let mut csv = String::from("number,def1,ipw_display_valid,label\n");
            for s in &e.sets {
                table.push_str(&format!(
                    "{:>3}  {:<5} {:<4} {}\n",
                    s.number,
                    if s.def1 { "yes" } else { "" },
                    if s.ipw_display_valid { "yes" } else { "" },
                    s.set.label(&dag)
                ));
                csv.push_str(&format!(
                    "{},{},{},\"{}\"\n",
                    s.number, s.def1, s.ipw_display_valid, s.set.label(&dag)
                ));
            }
            let mut jsonv = enumeration_json(&dag, &e);
            jsonv["command"] = json!("list-sets");
            emit(&out, table, jsonv, Some(csv))?;
            Ok(0)
        }
        Command::Dominance { graph, seed, oracle, out } => {
            let dag = load_graph(&graph)?;
            let e = enumerate_def2_sets_seeded(&dag, oracle.draws, oracle.max_universe, seed)?;
            let sets: Vec<AdjustmentSet> = e.sets.iter().map(|s| s.set.clone()).collect();
            let order = build_dominance_order(&dag, &sets)?;
            let (table, jsonv, csv) = dominance_output(&dag, &e, &order);
            emit(&out, table, jsonv, Some(csv))?;
            Ok(0)
        }
        Command::Simulate {
            graph,
            builtin,
            scm,
            reps,
            n,
            seed,
            estimator,
            regime,
            oracle_seed,
            jobs,
            gbound,
            raw_weights,
            oracle,
            out,
        } => {
            let seed = require_seed(seed)?;
            let (dag, scm_spec, scm_name) = resolve_model(graph.as_deref(), builtin.as_deref(), scm.as_deref())?;
            let regime = parse_regime(&dag, regime.as_deref())?;
            let e = enumerate_def2_sets_seeded(&dag, oracle.draws, oracle.max_universe, oracle_seed)?;
            let sets: Vec<(String, AdjustmentSet)> = e
                .sets
                .iter()
                .map(|s| (format!("set {}", s.number), s.set.clone()))
                .collect();
            let options = EstimatorOptions {
                gbound,
                stabilized: !raw_weights,
                ..Default::default()
            };
            let cfg = McStudy {
                scm: &scm_spec,
                dag: &dag,
                sets,
                target: Target::Mean(regime),
                estimators: estimator.iter().map(|&e| e.into()).collect(),
                reps,
                n,
                seed,
                options,
                jobs,
            };
            let report = mc_study(&cfg)?;
            let mut table = format!(
                "Monte Carlo study: {} | model {} | reps={} n={} seed={}\n{:<10} {:<9} {:>10} {:>10} {:>9} {:>6}\n",
                report.target, scm_name, report.reps, report.n, report.seed,
                "set", "estimator", "mc_mean", "mc_sd", "sd_se", "flags"
            );
            for r in &report.rows {
                table.push_str(&format!(
                    "{:<10} {:<9} {:>10.4} {:>10.4} {:>9.4} {:>6}\n",
                    r.set, r.estimator, r.mc_mean, r.mc_sd, r.mc_sd_se, r.positivity_flags
                ));
            }
            let jsonv = json!({
                "command": "simulate",
                "model": scm_name,
                "report": serde_json::to_value(&report)?,
            });
            emit(&out, table, jsonv, Some(report.to_csv()))?;
            Ok(0)
        }
        Command::Reproduce {
            table,
            reps,
            n,
            seed,
            smoke,
            oracle_seed,
            jobs,
            gbound,
            raw_weights,
            oracle,
            out,
        } => {
            let seed = require_seed(seed)?;
            let options = EstimatorOptions {
                gbound,
                stabilized: !raw_weights,
                ..Default::default()
            };
            reproduce(&table, reps, n, seed, smoke, jobs, options, oracle_seed, &oracle, &out)
        }
        Command::OracleCheck { graph, seed, oracle, out } => {
            let dag = load_graph(&graph)?;
            oracle_check(&dag, seed, &oracle, &out)
        }
    }
}

fn require_seed(seed: Option<u64>) -> tdadjust::Result<u64> {
    seed.ok_or_else(|| {
        Error::Query("stochastic commands require an explicit --seed (no implicit entropy)".into())
    })
}

fn resolve_model(
    graph: Option<&str>,
    builtin: Option<&str>,
    scm: Option<&std::path::Path>,
) -> tdadjust::Result<(Dag, ScmSpec, String)> {
    match (builtin, scm) {
        (Some(name), None) => {
            let dag = match graph {
                Some(g) => load_graph(g)?,
                None => builtins::builtin_graph(name)?,
            };
            Ok((dag, builtins::builtin_scm(name)?, name.to_string()))
        }
        (None, Some(path)) => {
            let g = graph.ok_or_else(|| Error::Query("--scm requires --graph".into()))?;
            let dag = load_graph(g)?;
            let spec = ScmSpec::from_json_str(&std::fs::read_to_string(path)?)?;
            spec.validate(&dag)?;
            Ok((dag, spec, path.display().to_string()))
        }
        _ => Err(Error::Query("provide exactly one of --builtin or --scm".into())),
    }
}

fn parse_regime(dag: &Dag, text: Option<&str>) -> tdadjust::Result<Regime> {
    match text {
        None => Ok(Regime::all_ones(dag)),
        Some(t) => {
            let vals: Vec<u8> = t
                .split(',')
                .map(|s| s.trim().parse::<u8>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Query(format!("invalid regime `{t}`")))?;
            Regime::new(dag, vals)
        }
    }
}

fn dominance_output(dag: &Dag, e: &Enumeration, order: &DominanceOrder) -> (String, Value, String) {
    let number_of = |idx: usize| e.sets[idx].number;
    let minima: Vec<usize> = order.minima.iter().map(|&i| number_of(i)).collect();
    let mut table = format!(
        "dominance order over {} sets: {} direct certificates, {} pairs after closure\n",
        order.elements.len(),
        order.direct.len(),
        order.relation.len()
    );
    table.push_str(&format!("undominated (candidate optimal) sets: {minima:?}\n"));
    for (cert, (lo, hi)) in order.certificates.iter().zip(&order.direct) {
        table.push_str(&format!(
            "  set {:>2} <= set {:>2}  [{} checks, witness {}]\n",
            number_of(*lo),
            number_of(*hi),
            cert.checks.len(),
            if cert.witness.is_some() { "found" } else { "none" },
        ));
    }
    let mut csv = String::from("lower,higher,rule,witness_found,checks\n");
    for (cert, (lo, hi)) in order.certificates.iter().zip(&order.direct) {
        csv.push_str(&format!(
            "{},{},{:?},{},{}\n",
            number_of(*lo),
            number_of(*hi),
            cert.rule,
            cert.witness.is_some(),
            cert.checks.len()
        ));
    }
    let certificates: Vec<Value> = order
        .certificates
        .iter()
        .zip(&order.direct)
        .map(|(cert, (lo, hi))| {
            json!({
                "lower": number_of(*lo),
                "higher": number_of(*hi),
                "rule": serde_json::to_value(cert.rule).unwrap(),
                "witness": cert.witness.as_ref().map(|w| w.label(dag)),
                "checks": serde_json::to_value(&cert.checks).unwrap(),
            })
        })
        .collect();
    let relation: Vec<Value> = order
        .relation
        .iter()
        .map(|&(lo, hi)| json!([number_of(lo), number_of(hi)]))
        .collect();
    let mut jsonv = enumeration_json(dag, e);
    jsonv["command"] = json!("dominance");
    jsonv["certificates"] = Value::Array(certificates);
    jsonv["relation"] = Value::Array(relation);
    jsonv["minima"] = json!(minima);
    (table, jsonv, csv)
}

#[allow(clippy::too_many_arguments)]
fn reproduce(
    table: &str,
    reps: Option<usize>,
    n: usize,
    seed: u64,
    smoke: bool,
    jobs: Option<usize>,
    options: EstimatorOptions,
    oracle_seed: u64,
    oracle: &OracleArgs,
    out: &CommonOut,
) -> tdadjust::Result<u8> {
    let tolerance = 0.01;
    let (scenarios, default_reps): (Vec<(&str, &str)>, usize) = match table {
        "table1" => (vec![("example1", "example1")], 10_000),
        "table2" => (
            vec![
                ("example2_strong_HA1", "example2"),
                ("example2_strong_HRQ", "example2"),
            ],
            20_000,
        ),
        other => return Err(Error::Query(format!("unknown table `{other}`"))),
    };
    let reps = reps.unwrap_or(if smoke { 200 } else { default_reps });
    let mut text = format!(
        "reproducing {table}: reps={reps} n={n} seed={seed}{}\n",
        if smoke {
            " [smoke mode: tolerance comparison skipped]"
        } else {
            ""
        }
    );
    let mut scen_json = Vec::new();
    let mut all_ok = true;
    let mut csv = String::from("scenario,set,mc_sd,reference_sd,abs_diff,within_tolerance\n");
    for (scm_name, graph_name) in &scenarios {
        let dag = builtins::builtin_graph(graph_name)?;
        let scm = builtins::builtin_scm(scm_name)?;
        let e = enumerate_def2_sets_seeded(&dag, oracle.draws, oracle.max_universe, oracle_seed)?;
        let sets: Vec<(String, AdjustmentSet)> = e
            .sets
            .iter()
            .map(|s| (format!("{}", s.number), s.set.clone()))
            .collect();
        let cfg = McStudy {
            scm: &scm,
            dag: &dag,
            sets,
            target: Target::Mean(Regime::all_ones(&dag)),
            estimators: vec![Estimator::Onestep],
            reps,
            n,
            seed,
            options,
            jobs,
        };
        let report = mc_study(&cfg)?;
        let reference: Vec<f64> = match table {
            "table1" => builtins::EXAMPLE1_REFERENCE_SD.to_vec(),
            _ => builtins::EXAMPLE2_REFERENCE_SD
                .iter()
                .map(|&(a, b)| if *scm_name == "example2_strong_HA1" { a } else { b })
                .collect(),
        };
        text.push_str(&format!(
            "\nscenario {scm_name}\n{:>4} {:>9} {:>10} {:>8}  {}\n",
            "set", "mc_sd", "reference", "diff", "status"
        ));
        let mut rows = Vec::new();
        let mut sds = Vec::new();
        for (i, row) in report.rows.iter().enumerate() {
            let sd = row.mc_sd;
            sds.push(sd);
            let refv = reference[i];
            let diff = (sd - refv).abs();
            let ok = diff <= tolerance;
            if !smoke && !ok {
                all_ok = false;
            }
            text.push_str(&format!(
                "{:>4} {:>9.4} {:>10.3} {:>8.4}  {}\n",
                i + 1,
                sd,
                refv,
                diff,
                if smoke {
                    "skipped"
                } else if ok {
                    "ok"
                } else {
                    "OUT OF TOLERANCE"
                }
            ));
            csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                scm_name,
                i + 1,
                sd,
                refv,
                diff,
                if smoke { "skipped".to_string() } else { ok.to_string() }
            ));
            rows.push(json!({
                "number": i + 1,
                "label": e.sets[i].set.label(&dag),
                "mc_sd": sd,
                "reference_sd": refv,
                "abs_diff": diff,
                "within_tolerance": if smoke { Value::Null } else { json!(ok) },
            }));
        }
        // ranking claims
        let argmin = sds
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i + 1)
            .unwrap();
        let strictly = sds
            .iter()
            .enumerate()
            .all(|(i, &v)| i + 1 == argmin || v > sds[argmin - 1]);
        let ranking_ok = match table {
            "table1" => {
                if smoke {
                    sds[13] < sds[4]
                } else {
                    argmin == 14 && strictly
                }
            }
            _ => {
                if smoke {
                    // the full argmin is noisy at smoke replication counts;
                    // the featured orderings have wide margins
                    sds[23] < sds[0] && sds[23] < sds[7]
                } else {
                    argmin == 24 && strictly
                }
            }
        };
        if !ranking_ok {
            all_ok = false;
        }
        text.push_str(&format!(
            "lowest-variance set: {argmin}{} (ranking {})\n",
            if strictly { " (strict)" } else { "" },
            if ranking_ok { "ok" } else { "VIOLATED" }
        ));
        scen_json.push(json!({
            "model": scm_name,
            "rows": rows,
            "min_set": argmin,
            "strict_min": strictly,
            "ranking_ok": ranking_ok,
            "sd_of_set1": sds.first(),
            "sd_of_set8": sds.get(7),
        }));
    }
    // cross-scenario claim: the best sequential-only set flips between
    // scenarios while the overall best does not
    if table == "table2" {
        let a1 = scen_json[0]["sd_of_set1"].as_f64().unwrap();
        let a8 = scen_json[0]["sd_of_set8"].as_f64().unwrap();
        let b1 = scen_json[1]["sd_of_set1"].as_f64().unwrap();
        let b8 = scen_json[1]["sd_of_set8"].as_f64().unwrap();
        let swap_ok = a1 < a8 && b8 < b1;
        if !swap_ok {
            all_ok = false;
        }
        text.push_str(&format!(
            "sequential-set rank swap across scenarios (set1 vs set8): {}\n",
            if swap_ok { "ok" } else { "VIOLATED" }
        ));
        scen_json.push(json!({"swap_ok": swap_ok}));
    }
    let verdict = if all_ok { "PASS" } else { "FAIL" };
    text.push_str(&format!("overall: {verdict}\n"));
    let jsonv = json!({
        "command": "reproduce",
        "table": table,
        "reps": reps,
        "n": n,
        "seed": seed,
        "smoke": smoke,
        "tolerance": tolerance,
        "options": serde_json::to_value(options)?,
        "scenarios": scen_json,
        "pass": all_ok,
    });
    emit(out, text, jsonv, Some(csv))?;
    Ok(if all_ok { 0 } else { EXIT_TOLERANCE })
}

fn oracle_check(dag: &Dag, seed: u64, oracle: &OracleArgs, out: &CommonOut) -> tdadjust::Result<u8> {
    let e = enumerate_def2_sets_seeded(dag, oracle.draws, oracle.max_universe, seed)?;
    let sets: Vec<AdjustmentSet> = e.sets.iter().map(|s| s.set.clone()).collect();
    let order = build_dominance_order(dag, &sets)?;
    let regimes = Regime::all(dag);
    let mut id_failures = 0usize;
    let mut variance_violations: Vec<Value> = Vec::new();
    let mut decomposition_failures = 0usize;
    let mut pairs_checked = 0usize;
    let mut decomposition_checked = 0usize;
    for draw in 0..oracle.draws as u64 {
        let model = DiscreteScm::random(dag, seed, draw)?;
        for regime in &regimes {
            let truth = model.g_formula_mean(regime);
            // (a) identification: nested formula equals the ground truth
            let mut variances = Vec::with_capacity(sets.len());
            for set in &sets {
                let t = model.eif_tables(set, regime)?;
                if t.chi != truth || !t.mean_is_zero() {
                    id_failures += 1;
                }
                variances.push(t.variance);
            }
            // (b) certified ordering must hold exactly
            for &(lo, hi) in &order.direct {
                pairs_checked += 1;
                if variances[lo] > variances[hi] {
                    let to_f64 = tdadjust::exact::rational_to_f64;
                    let p1 = dag.period_count();
                    let kind = if (0..p1).all(|k| sets[hi].period(k).is_subset_of(sets[lo].period(k))) {
                        "addition"
                    } else if (0..p1).all(|k| sets[lo].period(k).is_subset_of(sets[hi].period(k))) {
                        "removal"
                    } else {
                        "mixed"
                    };
                    variance_violations.push(json!({
                        "lower": e.sets[lo].number,
                        "higher": e.sets[hi].number,
                        "direction": kind,
                        "draw": draw,
                        "regime": regime.label(),
                        "var_lower": to_f64(&variances[lo]),
                        "var_higher": to_f64(&variances[hi]),
                    }));
                }
            }
            // (c) inclusion pairs: exact decomposition identity. The
            // decomposition is claimed for unions carrying the full history
            // (sequential images), so reduced unions are out of scope.
            for &(lo, hi) in &order.direct {
                if !e.sets[lo].def1 {
                    continue;
                }
                let base = &sets[hi];
                let union = &sets[lo];
                let nested = (0..dag.period_count())
                    .all(|k| base.period(k).is_subset_of(union.period(k)));
                if !nested {
                    continue;
                }
                let extras: Vec<NodeSet> = (0..dag.period_count())
                    .map(|k| union.period(k).minus(base.period(k)))
                    .collect();
                if lemma_inclusion_certifies(dag, base, &extras)?.is_none() {
                    continue;
                }
                decomposition_checked += 1;
                let d = model.inclusion_decomposition(base, union, regime)?;
                if !d.holds_exactly() {
                    decomposition_failures += 1;
                }
            }
        }
    }
    let pass = id_failures == 0 && variance_violations.is_empty() && decomposition_failures == 0;
    let mut text = format!(
        "oracle check: {} sets, {} draws, {} regimes\n",
        sets.len(),
        oracle.draws,
        regimes.len()
    );
    text.push_str(&format!(
        "identification (nested formula == ground truth, psi mean zero): {}\n",
        if id_failures == 0 { "all exact".into() } else { format!("{id_failures} FAILURES") }
    ));
    text.push_str(&format!(
        "certified variance orderings checked: {} ({} violations)\n",
        pairs_checked,
        variance_violations.len()
    ));
    for v in variance_violations.iter().take(10) {
        text.push_str(&format!(
            "  VIOLATION set {} <= set {} fails on draw {} regime {}: {} > {}\n",
            v["lower"], v["higher"], v["draw"], v["regime"], v["var_lower"], v["var_higher"]
        ));
    }
    if variance_violations.len() > 10 {
        text.push_str(&format!("  ... {} more\n", variance_violations.len() - 10));
    }
    text.push_str(&format!(
        "inclusion-pair variance decompositions checked: {} ({} failures)\n",
        decomposition_checked, decomposition_failures
    ));
    text.push_str(&format!("overall: {}\n", if pass { "PASS" } else { "FAIL" }));
    let jsonv = json!({
        "command": "oracle-check",
        "oracle": {"seed": seed, "draws": oracle.draws},
        "sets_checked": sets.len(),
        "identification_failures": id_failures,
        "pairs_checked": pairs_checked,
        "variance_violations": variance_violations,
        "decomposition_checked": decomposition_checked,
        "decomposition_failures": decomposition_failures,
        "pass": pass,
    });
    emit(out, text, jsonv, None)?;
    Ok(if pass { 0 } else { EXIT_TOLERANCE })
}
