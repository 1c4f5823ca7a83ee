//! WebAssembly bindings used by `www/index.html`.
//!
//! Everything returns plain numbers or strings so the page needs no glue
//! beyond what `wasm-bindgen` generates.

use std::path::Path;

use arepc::config::ExperimentConfig;
use arepc::engine::{self, compute_metrics, RunOptions, RunOutput};
use arepc::simplex::{entmax, softmax, sparsemax};
use arepc::topology::Graph;
use arepc::NodeId;
use wasm_bindgen::prelude::*;

/// Weights that sparsemax, softmax and entmax-`alpha` assign to accumulated
/// losses at learning rate `eta`, concatenated in that order.
#[wasm_bindgen]
pub fn normalizer_weights(losses: &[f64], eta: f64, alpha: f64) -> Result<Vec<f64>, String> {
    let scores: Vec<f64> = losses.iter().map(|l| -eta * l).collect();
    let mut out = Vec::with_capacity(3 * losses.len());
    for p in [sparsemax(&scores), softmax(&scores), entmax(&scores, alpha)] {
        out.extend_from_slice(p.map_err(|e| e.to_string())?.as_slice());
    }
    Ok(out)
}

/// A finished in-process run of an experiment description.
#[wasm_bindgen]
pub struct Simulation {
    graph: Graph,
    out: RunOutput,
    rmse: Vec<f64>,
    dia: Vec<f64>,
}

#[wasm_bindgen]
impl Simulation {
    /// Runs the experiment in `toml`. The graph must come from a generator
    /// since the page has no file system.
    #[wasm_bindgen(constructor)]
    pub fn new(toml: &str) -> Result<Simulation, String> {
        let cfg = ExperimentConfig::from_toml(toml, Path::new("<page>")).map_err(|e| e.to_string())?;
        if cfg.graph.file.is_some() {
            return Err("graph files are not available here; use a generator".into());
        }
        let graph = cfg.build_graph().map_err(|e| e.to_string())?;
        let opts = RunOptions { waive_assumptions: cfg.waive_assumptions, ..Default::default() };
        let out = engine::run(&graph, &cfg.scenario(), opts).map_err(|e| e.to_string())?;
        let end = compute_metrics(out.trace.len() as u64, &out.honest, &out.final_states, &out.initial, Vec::new(), &graph);
        let rmse = out.trace.iter().map(|r| r.rmse).chain([end.rmse]).collect();
        let dia = out.trace.iter().map(|r| r.dia).chain([end.dia]).collect();
        Ok(Simulation { graph, out, rmse, dia })
    }

    /// RMSE for rounds `0..=T`.
    pub fn rmse(&self) -> Vec<f64> {
        self.rmse.clone()
    }

    /// Drift from the initial honest mean for rounds `0..=T`.
    pub fn dia(&self) -> Vec<f64> {
        self.dia.clone()
    }

    /// Mean Byzantine weight mass over honest nodes per round; empty when the
    /// rule keeps no weights or there are no Byzantine nodes.
    pub fn byzantine_mass(&self) -> Vec<f64> {
        self.out.trace.iter().filter_map(|r| r.byz_mass_mean).collect()
    }

    pub fn honest_ids(&self) -> Vec<u32> {
        self.out.honest.iter().map(|&i| i as u32).collect()
    }

    pub fn neighbors(&self, node: u32) -> Vec<u32> {
        let node = node as NodeId;
        if node >= self.graph.n() {
            return Vec::new();
        }
        self.graph.neighbors(node).iter().map(|&j| j as u32).collect()
    }

    pub fn is_byzantine(&self, node: u32) -> bool {
        (node as NodeId) < self.graph.n() && self.graph.is_byzantine(node as NodeId)
    }

    /// Weights of `node` over its neighbors, row-major by round. Empty when
    /// the node is not honest or the rule keeps no weights.
    pub fn reputations(&self, node: u32) -> Vec<f64> {
        let node = node as NodeId;
        let mut out = Vec::new();
        for row in &self.out.trace {
            if let Some((_, rep)) = row.reputations.iter().find(|(i, _)| *i == node) {
                out.extend(rep.iter().map(|(_, p)| p));
            }
        }
        out
    }
}
