use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::json;

use sky_core::graph::{self, GraphError, GraphStats, ParseReport};

use crate::output::{sink, write_json};
use crate::spec::{sha256_hex, spec_hash};

#[derive(Debug, Serialize)]
pub struct IngestReport {
    pub spec_sha256: String,
    pub source_sha256: String,
    pub min_followees: usize,
    pub parse: ParseReport,
    pub input: GraphStats,
    pub filtered: GraphStats,
    pub removed_nodes: usize,
}

fn write_edge_list(path: Option<&Path>, header: &[(&str, String)], body: &str) -> Result<()> {
    let mut out = sink(path)?;
    for (k, v) in header {
        writeln!(out, "# {k}={v}")?;
    }
    out.write_all(body.as_bytes())?;
    out.flush()?;
    Ok(())
}

pub fn ingest(path: &Path, min_followees: usize, out: Option<&Path>, stats: Option<&Path>) -> Result<IngestReport> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let source_sha256 = sha256_hex(text.as_bytes());
    let (g, parse) = graph::parse_edge_list(&text).with_context(|| format!("parsing {}", path.display()))?;
    let filtered = match graph::enforce_min_followees(&g, min_followees) {
        Err(GraphError::Annihilated) => anyhow::bail!(
            "graph annihilated: no node of {} keeps at least {min_followees} followees",
            path.display()
        ),
        other => other?,
    };
    let spec_sha256 = spec_hash("ingest", &json!({ "min_followees": min_followees }), Some(&source_sha256))?;
    let report = IngestReport {
        spec_sha256: spec_sha256.clone(),
        source_sha256: source_sha256.clone(),
        min_followees,
        parse,
        input: g.stats(),
        filtered: filtered.stats(),
        removed_nodes: g.node_count() - filtered.node_count(),
    };
    if let Some(out) = out {
        let header = [("spec_sha256", spec_sha256), ("source_sha256", source_sha256)];
        write_edge_list(Some(out), &header, &filtered.to_edge_list())?;
    }
    write_json(stats, &report)?;
    Ok(report)
}

pub fn gen_uniform(n: usize, degree: usize, seed: u64, out: Option<&Path>) -> Result<()> {
    let g = graph::generate_uniform(n, degree, seed)?;
    let hash = spec_hash("gen-uniform", &json!({ "n": n, "degree": degree }), None)?;
    let header = [("spec_sha256", hash), ("seed", seed.to_string())];
    write_edge_list(out, &header, &g.to_edge_list())
}
