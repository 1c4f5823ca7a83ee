//! Experiment files.
//!
//! ```toml
//! seed = 7
//! rounds = 2000
//! dimension = 4
//! backend = "engine"
//!
//! [init]
//! lo = -100.0
//! hi = 100.0
//!
//! [graph]
//! generator = { kind = "random_regular", k = 6 }
//! honest = 20
//! byzantine = 4
//!
//! [protocol]
//! alpha = 0.5
//! kind = "arepc"
//! loss = "coordinate_median"
//! accumulation = { kind = "decay", lambda = 0.0 }
//! normalizer = { kind = "sparsemax", eta = 0.005 }
//!
//! [[attack]]
//! node = 20
//! kind = "uniform_random"
//! lo = -150.0
//! hi = 150.0
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adversary::{AttackSpec, InitBox};
use crate::engine::Scenario;
use crate::error::{Error, Result};
use crate::protocol::ProtocolConfig;
use crate::topology::{self, generate, GeneratorKind, Graph};
use crate::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Engine,
    Sockets,
}

/// Either a graph file or a generator invocation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GraphSpec {
    /// Edge-list file; relative paths are taken from the config's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub honest: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub byzantine: Option<usize>,
    /// Generator seed; defaults to the master seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackEntry {
    pub node: NodeId,
    #[serde(flatten)]
    pub spec: AttackSpec,
}

/// Values computed from the resolved graph, echoed for the experimenter.
/// Ignored when a config is read back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Derived {
    pub delta_min: usize,
    pub lambda2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub separation_threshold: Option<f64>,
    pub assumptions_hold: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub rounds: u64,
    pub dimension: usize,
    #[serde(default)]
    pub backend: Backend,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Run even if the graph violates the honest-majority or connectivity
    /// assumption. Violations are only warned about either way.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub waive_assumptions: bool,
    pub init: InitBox,
    pub graph: GraphSpec,
    pub protocol: ProtocolConfig,
    #[serde(default, rename = "attack", skip_serializing_if = "Vec::is_empty")]
    pub attacks: Vec<AttackEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derived: Option<Derived>,
}

/// First key path present in `raw` but absent from `known`. Empty arrays
/// are skipped since they serialize to nothing.
fn unknown_key(raw: &toml::Table, known: &toml::Table, prefix: &str) -> Option<String> {
    for (key, value) in raw {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match (value, known.get(key)) {
            (toml::Value::Array(a), None) if a.is_empty() => {}
            (_, None) => return Some(path),
            (toml::Value::Table(r), Some(toml::Value::Table(k))) => {
                if let Some(p) = unknown_key(r, k, &path) {
                    return Some(p);
                }
            }
            (toml::Value::Array(r), Some(toml::Value::Array(k))) => {
                for (idx, (rv, kv)) in r.iter().zip(k).enumerate() {
                    if let (toml::Value::Table(rt), toml::Value::Table(kt)) = (rv, kv) {
                        if let Some(p) = unknown_key(rt, kt, &format!("{path}[{idx}]")) {
                            return Some(p);
                        }
                    }
                }
            }
            _ => {}
        }
    }
    None
}

impl ExperimentConfig {
    /// Parses TOML, rejecting unknown keys with their path.
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        let cfg_err = |reason: String| Error::Config { path: origin.display().to_string(), reason };
        let raw: toml::Table = text.parse().map_err(|e: toml::de::Error| cfg_err(e.to_string()))?;
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| cfg_err(e.to_string()))?;
        // Flattened and tagged tables swallow stray keys, so compare against
        // what the parsed value serializes back to.
        let known = toml::Table::try_from(&cfg).map_err(|e| cfg_err(e.to_string()))?;
        if let Some(first) = unknown_key(&raw, &known, "") {
            return Err(cfg_err(format!("unknown field `{first}`")));
        }
        cfg.derived = None;
        cfg.validate().map_err(|e| cfg_err(e.to_string()))?;
        Ok(cfg)
    }

    /// Reads a config and resolves relative graph paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text, path)?;
        if let Some(file) = cfg.graph.file.as_mut() {
            if file.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                *file = base.join(&*file);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension == 0 {
            return Err(Error::param("dimension", "must be >= 1"));
        }
        if self.rounds == 0 {
            return Err(Error::param("rounds", "must be >= 1"));
        }
        self.init.validate().map_err(|e| Error::param("init", e.to_string()))?;
        self.protocol.validate().map_err(|e| Error::param("protocol", e.to_string()))?;
        match (&self.graph.file, &self.graph.generator) {
            (Some(_), None) => {
                if self.graph.honest.is_some() || self.graph.byzantine.is_some() || self.graph.seed.is_some() {
                    return Err(Error::param("graph", "`honest`, `byzantine` and `seed` only apply to generators"));
                }
            }
            (None, Some(_)) => {
                if self.graph.honest.is_none() {
                    return Err(Error::param("graph.honest", "required with a generator"));
                }
            }
            _ => return Err(Error::param("graph", "set exactly one of `file` or `generator`")),
        }
        let mut seen = BTreeMap::new();
        for (k, a) in self.attacks.iter().enumerate() {
            if seen.insert(a.node, k).is_some() {
                return Err(Error::param(format!("attack[{k}].node"), format!("node {} listed twice", a.node)));
            }
            a.spec
                .validate(self.dimension)
                .map_err(|e| Error::param(format!("attack[{k}]"), e.to_string()))?;
        }
        Ok(())
    }

    pub fn build_graph(&self) -> Result<Graph> {
        if let Some(file) = &self.graph.file {
            return Ok(topology::load_graph(file)?.graph);
        }
        let kind = self.graph.generator.as_ref().expect("validated");
        generate(
            kind,
            self.graph.honest.unwrap_or(0),
            self.graph.byzantine.unwrap_or(0),
            self.graph.seed.unwrap_or(self.seed),
        )
    }

    pub fn scenario(&self) -> Scenario {
        Scenario {
            protocol: self.protocol.clone(),
            attacks: self.attacks.iter().map(|a| (a.node, a.spec.clone())).collect(),
            init: self.init,
            dim: self.dimension,
            rounds: self.rounds,
            seed: self.seed,
        }
    }

    pub fn derive(&self, graph: &Graph) -> Derived {
        let stats = graph.stats();
        let eta = self.protocol.reputation_config().map(|r| r.normalizer.eta());
        Derived {
            delta_min: stats.delta_min,
            lambda2: stats.lambda2,
            separation_threshold: eta.map(|e| stats.separation_threshold(e)),
            assumptions_hold: topology::check_assumptions(graph).all_pass(),
        }
    }

    /// Copy with the derived table filled in, ready to echo.
    pub fn echo(&self, graph: &Graph) -> Self {
        ExperimentConfig { derived: Some(self.derive(graph)), ..self.clone() }
    }
}
