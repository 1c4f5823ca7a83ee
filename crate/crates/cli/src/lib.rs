//! Glue between experiment files, the two backends, CSV output and the
//! bound checks.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use arepc::adversary::AttackKind;
use arepc::config::{Backend, ExperimentConfig};
use arepc::engine::{self, mean, RunOptions, RunOutput};
use arepc::output;
use arepc::protocol::Rule;
use arepc::reputation::{LossKind, LossNorm, Normalizer, ReputationConfig};
use arepc::topology::{check_assumptions, Graph};
use arepc::verify::{self, BoundReport};
use arepc::{Error, Result, StateVector};

pub const DEFAULT_OUT_DIR: &str = "out";
pub const DEFAULT_LIPSCHITZ_PAIRS: usize = 1000;

/// Prints graph diagnostics that help judge the separation condition.
pub fn describe(cfg: &ExperimentConfig, graph: &Graph) -> String {
    let d = cfg.derive(graph);
    let mut s = format!(
        "nodes={} byzantine={} delta_min={} lambda2={:.6}",
        graph.n(),
        graph.byzantine_ids().len(),
        d.delta_min,
        d.lambda2
    );
    if let Some(th) = d.separation_threshold {
        s.push_str(&format!(" separation_threshold={th:.6}"));
    }
    let report = check_assumptions(graph);
    if !report.honest_connected {
        s.push_str("\nwarning: honest subgraph is disconnected");
    }
    let failing = report.failing_nodes();
    if !failing.is_empty() {
        s.push_str(&format!("\nwarning: honest nodes without an honest majority: {failing:?}"));
    }
    s
}

/// Runs the experiment on the chosen backend. `exe` is the binary spawned
/// for each node on the socket backend.
pub fn execute(cfg: &ExperimentConfig, graph: &Graph, exe: Option<&Path>) -> Result<RunOutput> {
    match cfg.backend {
        Backend::Engine => {
            let opts = RunOptions { waive_assumptions: cfg.waive_assumptions, ..Default::default() };
            engine::run(graph, &cfg.scenario(), opts)
        }
        Backend::Sockets => sockets(cfg, graph, exe),
    }
}

#[cfg(unix)]
fn sockets(cfg: &ExperimentConfig, graph: &Graph, exe: Option<&Path>) -> Result<RunOutput> {
    use arepc::transport::{orchestrate, Launcher};
    let exe = match exe {
        Some(p) => p.to_path_buf(),
        None => std::env::current_exe().map_err(Error::Stream)?,
    };
    orchestrate(cfg, graph, &Launcher::Process(exe))
}

#[cfg(not(unix))]
fn sockets(_: &ExperimentConfig, _: &Graph, _: Option<&Path>) -> Result<RunOutput> {
    Err(Error::NotApplicable("the socket backend needs Unix domain sockets".into()))
}

/// Output directory: explicit override, then the config, then `out/`.
pub fn out_dir(cfg: &ExperimentConfig, flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

/// Full `run` command: execute, then write CSVs and the config echo.
pub fn run_to_dir(cfg: &ExperimentConfig, dir: &Path, exe: Option<&Path>) -> Result<(Graph, RunOutput)> {
    let graph = cfg.build_graph()?;
    let out = execute(cfg, &graph, exe)?;
    output::write_all(dir, &out, &graph)?;
    output::write_echo(dir, &cfg.echo(&graph).to_toml())?;
    Ok((graph, out))
}

fn lambda_zero(rep: &ReputationConfig) -> bool {
    matches!(rep.accumulation, arepc::reputation::Accumulation::Decay { lambda } if lambda == 0.0)
}

/// Runs the experiment in-process with recording on and executes every
/// check whose hypotheses match the configured protocol.
pub fn verify_config(cfg: &ExperimentConfig, lipschitz_pairs: usize) -> Result<Vec<BoundReport>> {
    let graph = cfg.build_graph()?;
    let opts = RunOptions { record: true, waive_assumptions: cfg.waive_assumptions, ..Default::default() };
    let out = engine::run(&graph, &cfg.scenario(), opts)?;
    let Rule::Arepc(rep) = cfg.protocol.rule else {
        return Ok(Vec::new());
    };
    let mut reports = Vec::new();
    let cm_inf = rep.loss == LossKind::CoordinateMedian && rep.norm() == LossNorm::Inf;
    if cm_inf {
        reports.push(verify::check_lemma1(&graph, &out)?);
    }
    if cm_inf && lambda_zero(&rep) {
        match rep.normalizer {
            Normalizer::Sparsemax { eta } => {
                reports.push(verify::check_lemma2(&graph, &out, &rep)?);
                let (l4, l5) = verify::check_lipschitz(&graph, eta, cfg.dimension, lipschitz_pairs, cfg.seed)?;
                reports.push(l4);
                reports.push(l5);
                reports.push(fixed_point_at_consensus(cfg, &graph, &out, eta)?);
            }
            Normalizer::Softmax { .. } => reports.push(verify::check_softmax_influence(&graph, &out, &rep)?),
            Normalizer::Entmax { .. } => {}
        }
    }
    if rep.loss == LossKind::GeometricMedian {
        reports.push(verify::check_lemma6(&graph, &out)?);
    }
    Ok(reports)
}

/// Fixed-point check at the honest mean of the final states, with fixed
/// attackers at their constants and any other attacker placed at ten times
/// the separation threshold along the first axis.
fn fixed_point_at_consensus(cfg: &ExperimentConfig, graph: &Graph, out: &RunOutput, eta: f64) -> Result<BoundReport> {
    let consensus = mean(&out.final_states);
    let threshold = graph.stats().separation_threshold(eta);
    let scenario = cfg.scenario();
    let byz: BTreeMap<usize, StateVector> = graph
        .byzantine_ids()
        .into_iter()
        .map(|b| {
            let value = match scenario.attack_for(b).kind {
                AttackKind::FixedInitial { value: Some(v) } => v,
                _ => {
                    let mut v = consensus.clone();
                    v[0] += 10.0 * threshold;
                    v
                }
            };
            (b, value)
        })
        .collect();
    verify::check_prop2(graph, eta, &consensus, &byz)
}

/// Whether an error stems from the user's input rather than the run.
pub fn is_usage_error(e: &Error) -> bool {
    matches!(
        e,
        Error::Config { .. } | Error::InvalidParameter { .. } | Error::GraphParse { .. } | Error::Io { .. }
    )
}
