//! Experiment specs: flat JSON files whose keys mirror the command-line flags.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use sky_core::graph::{self, TrustGraph};
use sky_core::opinion::{Model, RuleConfig};
use sky_core::protocol::ProtocolConfig;
use sky_core::sim::{
    AdversaryKind, AdversaryStrategy, AsyncConfig, FaultySelection, InitialConfiguration, LatencyModel,
    DEFAULT_HORIZON_MS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Sync,
    Async,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    Random,
    Top,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSpec {
    /// `uniform:<n>:<degree>` or a path to an edge list.
    pub dataset: String,
    pub graph_seed: u64,
    pub min_followees: usize,
    pub mode: Mode,
    pub model: Model,
    pub sky_mr_ratio: f64,
    pub adversary: AdversaryKind,
    pub fault_fraction: f64,
    pub selection: Selection,
    pub init_cvg: f64,
    pub max_rounds: u32,
    pub threshold: f64,
    pub timeout_ms: f64,
    pub latency_mu: f64,
    pub latency_sigma: f64,
    pub latency_cutoff: f64,
    pub tick_ms: f64,
    pub horizon_ms: f64,
    pub seed_start: u64,
    pub seeds: u64,
    pub epsilon: f64,
    pub decide_by_ms: f64,
}

impl Default for SimSpec {
    fn default() -> Self {
        let p = ProtocolConfig::default();
        let lat = LatencyModel::default();
        SimSpec {
            dataset: "uniform:1000:30".into(),
            graph_seed: 1,
            min_followees: 0,
            mode: Mode::Async,
            model: Model::Sky,
            sky_mr_ratio: 0.5,
            adversary: AdversaryKind::None,
            fault_fraction: 0.0,
            selection: Selection::Random,
            init_cvg: 0.5,
            max_rounds: p.max_rounds,
            threshold: p.threshold,
            timeout_ms: p.timeout_ms,
            latency_mu: lat.mu,
            latency_sigma: lat.sigma,
            latency_cutoff: lat.lower_cutoff,
            tick_ms: 1000.0,
            horizon_ms: DEFAULT_HORIZON_MS,
            seed_start: 0,
            seeds: 20,
            epsilon: 0.05,
            decide_by_ms: 70_000.0,
        }
    }
}

/// Reads a flat JSON object from `path` (if any) and applies `overrides` on top.
pub fn load_object(path: Option<&Path>, overrides: Map<String, Value>) -> Result<Map<String, Value>> {
    let mut base = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading spec {}", p.display()))?;
            match serde_json::from_str::<Value>(&text).with_context(|| format!("parsing spec {}", p.display()))? {
                Value::Object(m) => m,
                _ => bail!("spec {} must be a JSON object", p.display()),
            }
        }
        None => Map::new(),
    };
    base.extend(overrides);
    Ok(base)
}

/// JSON object of the flags that were actually given.
pub fn flags_object<T: Serialize>(flags: &T) -> Map<String, Value> {
    match serde_json::to_value(flags) {
        Ok(Value::Object(m)) => m.into_iter().filter(|(_, v)| !v.is_null()).collect(),
        _ => Map::new(),
    }
}

impl SimSpec {
    pub fn from_object(obj: Map<String, Value>) -> Result<Self> {
        let spec: SimSpec = serde_json::from_value(Value::Object(obj)).context("invalid spec")?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.fault_fraction) {
            bail!("fault_fraction must be in [0, 1) (got {})", self.fault_fraction);
        }
        if !(0.0..=1.0).contains(&self.sky_mr_ratio) {
            bail!("sky_mr_ratio must be in [0, 1] (got {})", self.sky_mr_ratio);
        }
        if !(0.0..0.5).contains(&self.epsilon) || self.epsilon == 0.0 {
            bail!("epsilon must be in (0, 0.5) (got {})", self.epsilon);
        }
        if self.seeds == 0 {
            bail!("seeds must be at least 1");
        }
        if self.max_rounds == 0 {
            bail!("max_rounds must be at least 1");
        }
        // node count only matters for explicit initial opinions, which specs never use
        self.async_config().validate(0)?;
        Ok(())
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (self.seed_start..self.seed_start + self.seeds).collect()
    }

    pub fn rule(&self) -> RuleConfig {
        RuleConfig {
            model: self.model,
            sky_mr_ratio: self.sky_mr_ratio,
        }
    }

    pub fn async_config(&self) -> AsyncConfig {
        let selection = match self.selection {
            Selection::Random => FaultySelection::Random {
                fraction: self.fault_fraction,
                seed: None,
            },
            Selection::Top => FaultySelection::TopInfluential {
                fraction: self.fault_fraction,
            },
        };
        AsyncConfig {
            protocol: ProtocolConfig {
                max_rounds: self.max_rounds,
                threshold: self.threshold,
                timeout_ms: self.timeout_ms,
                rule: self.rule(),
            },
            adversary: AdversaryStrategy {
                kind: if self.fault_fraction > 0.0 { self.adversary } else { AdversaryKind::None },
                selection,
                tick_ms: self.tick_ms,
            },
            latency: LatencyModel {
                mu: self.latency_mu,
                sigma: self.latency_sigma,
                lower_cutoff: self.latency_cutoff,
            },
            init: InitialConfiguration::target(self.init_cvg),
            horizon_ms: self.horizon_ms,
            sample_ms: None,
            trace: false,
        }
    }
}

/// A loaded dataset plus the digest that identifies it in outputs.
pub struct Dataset {
    pub graph: TrustGraph,
    pub sha256: String,
}

pub fn load_dataset(spec: &str, graph_seed: u64, min_followees: usize) -> Result<Dataset> {
    let (graph, digest) = if let Some(rest) = spec.strip_prefix("uniform:") {
        let (n, d) = rest
            .split_once(':')
            .with_context(|| format!("dataset {spec:?}: expected uniform:<n>:<degree>"))?;
        let n: usize = n.parse().with_context(|| format!("dataset {spec:?}: bad node count"))?;
        let d: usize = d.parse().with_context(|| format!("dataset {spec:?}: bad degree"))?;
        let g = graph::generate_uniform(n, d, graph_seed)?;
        let digest = sha256_hex(g.to_edge_list().as_bytes());
        (g, digest)
    } else {
        let bytes = fs::read(spec).with_context(|| format!("reading dataset {spec}"))?;
        let text = String::from_utf8(bytes).with_context(|| format!("dataset {spec} is not UTF-8"))?;
        let (g, _) = graph::parse_edge_list(&text).with_context(|| format!("parsing dataset {spec}"))?;
        (g, sha256_hex(text.as_bytes()))
    };
    let graph = if min_followees > 0 {
        graph::enforce_min_followees(&graph, min_followees)?
    } else {
        graph
    };
    Ok(Dataset { graph, sha256: digest })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of a serializable description; the field order of the value is fixed
/// by its type, so equal specs hash equally.
pub fn spec_hash<T: Serialize>(command: &str, spec: &T, dataset_sha256: Option<&str>) -> Result<String> {
    let body = serde_json::json!({
        "command": command,
        "spec": spec,
        "dataset_sha256": dataset_sha256,
        "version": env!("CARGO_PKG_VERSION"),
    });
    Ok(sha256_hex(serde_json::to_string(&body)?.as_bytes()))
}
