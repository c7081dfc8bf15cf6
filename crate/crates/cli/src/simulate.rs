use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{Map, Value};

use sky_core::metrics::{self, proportion_ci, summarize_at, BatchSummary, CiMethod, Interval, Moments, RoundHistogram};
use sky_core::sim::{run_async, run_sync, InitialConfiguration, RunResult};

use crate::output::{csv_with_header, num, opt_num, write_json};
use crate::spec::{load_dataset, spec_hash, Dataset, Mode, SimSpec};

pub const RUN_COLUMNS: [&str; 17] = [
    "seed",
    "dataset",
    "model",
    "adversary",
    "f",
    "init_cvg",
    "final_cvg_signed",
    "decision",
    "d0",
    "d1",
    "confused",
    "rounds_p50",
    "rounds_max",
    "end_time_ms",
    "complete",
    "decided_by",
    "success",
];

pub fn run_batch(spec: &SimSpec, data: &Dataset, jobs: usize) -> Result<Vec<RunResult>> {
    let g = &data.graph;
    let seeds = spec.seed_list();
    let cfg = spec.async_config();
    let init = InitialConfiguration::target(spec.init_cvg);
    let work = || -> Result<Vec<RunResult>> {
        seeds
            .par_iter()
            .map(|&seed| {
                let r = match spec.mode {
                    Mode::Sync => run_sync(g, spec.rule(), &init, spec.max_rounds, seed),
                    Mode::Async => run_async(g, &cfg, seed),
                };
                r.with_context(|| format!("seed {seed}"))
            })
            .collect()
    };
    if jobs == 0 {
        work()
    } else {
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?.install(work)
    }
}

fn success(r: &RunResult, epsilon: f64) -> bool {
    let t = r.tally();
    r.complete && metrics::meets_epsilon(t.d0, t.d1, epsilon)
}

pub fn run_row(spec: &SimSpec, r: &RunResult, n_nodes: usize) -> Vec<String> {
    let t = r.tally();
    let is_async = spec.mode == Mode::Async;
    vec![
        r.seed.to_string(),
        spec.dataset.clone(),
        spec.model.to_string(),
        spec.adversary.to_string(),
        num(r.faulty.len() as f64 / n_nodes as f64, 4),
        opt_num(r.initial_cvg().ok(), 6),
        opt_num(r.final_cvg().ok(), 6),
        opt_num(r.decision_metric().ok(), 6),
        t.d0.to_string(),
        t.d1.to_string(),
        t.confused.to_string(),
        r.rounds_p50().to_string(),
        r.rounds_max().to_string(),
        num(r.end_time_ms, 3),
        r.complete.to_string(),
        if is_async { num(r.finished_by(spec.decide_by_ms), 6) } else { String::new() },
        if is_async { success(r, spec.epsilon).to_string() } else { String::new() },
    ]
}

#[derive(Debug, Serialize)]
pub struct Stat {
    pub n: u64,
    pub mean: Option<f64>,
    pub ci95: Option<Interval>,
}

impl From<&Moments> for Stat {
    fn from(m: &Moments) -> Self {
        Stat {
            n: m.n,
            mean: m.mean(),
            ci95: m.ci95(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Bin {
    pub from: u32,
    pub to: u32,
    pub count: u64,
}

#[derive(Debug, Serialize)]
pub struct SuccessStat {
    pub epsilon: f64,
    pub count: u64,
    pub fraction: f64,
    pub ci95: Option<Interval>,
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub spec_sha256: String,
    pub dataset_sha256: String,
    pub seeds: [u64; 2],
    pub nodes: usize,
    pub spec: SimSpec,
    pub runs: u64,
    pub incomplete: u64,
    pub incomplete_fraction: f64,
    pub rounds_histogram: Vec<Bin>,
    pub sentinel_round: u32,
    pub sentinel_count: u64,
    pub final_cvg: Stat,
    pub final_cvg_bins: Vec<u64>,
    pub decision: Stat,
    pub decided_zero: Stat,
    pub confused_fraction: Stat,
    pub decided_by_ms: f64,
    pub decided_by: Stat,
    pub success: SuccessStat,
    pub degenerate_firings: u64,
}

pub fn summary(spec: &SimSpec, data: &Dataset, hash: &str, results: &[RunResult]) -> Result<Summary> {
    let s: BatchSummary = summarize_at(results, spec.decide_by_ms)?;
    let wins = results.iter().filter(|r| success(r, spec.epsilon)).count() as u64;
    let bins = s
        .histogram
        .bins
        .iter()
        .enumerate()
        .map(|(i, &count)| Bin {
            from: RoundHistogram::bin_start(i),
            to: RoundHistogram::bin_start(i + 1),
            count,
        })
        .collect();
    Ok(Summary {
        spec_sha256: hash.to_string(),
        dataset_sha256: data.sha256.clone(),
        seeds: [spec.seed_start, spec.seed_start + spec.seeds],
        nodes: data.graph.node_count(),
        spec: spec.clone(),
        runs: s.runs,
        incomplete: s.incomplete,
        incomplete_fraction: s.incomplete_fraction(),
        rounds_histogram: bins,
        sentinel_round: s.histogram.max_rounds + 1,
        sentinel_count: s.histogram.sentinel,
        final_cvg: (&s.final_cvg).into(),
        final_cvg_bins: s.final_cvg_bins.clone(),
        decision: (&s.decision).into(),
        decided_zero: (&s.decided_zero).into(),
        confused_fraction: (&s.confused_fraction).into(),
        decided_by_ms: s.finished_by_ms,
        decided_by: (&s.finished_by).into(),
        success: SuccessStat {
            epsilon: spec.epsilon,
            count: wins,
            fraction: wins as f64 / s.runs as f64,
            ci95: proportion_ci(wins, s.runs, CiMethod::Exact),
        },
        degenerate_firings: s.degenerate_firings,
    })
}

fn seeds_label(spec: &SimSpec) -> String {
    format!("{}..{}", spec.seed_start, spec.seed_start + spec.seeds)
}

pub fn simulate(spec: &SimSpec, runs_out: Option<&Path>, summary_out: Option<&Path>, jobs: usize) -> Result<Summary> {
    let data = load_dataset(&spec.dataset, spec.graph_seed, spec.min_followees)?;
    let hash = spec_hash("simulate", spec, Some(&data.sha256))?;
    let results = run_batch(spec, &data, jobs)?;
    let mut w = csv_with_header(
        runs_out,
        &[
            ("spec_sha256", hash.clone()),
            ("dataset_sha256", data.sha256.clone()),
            ("seeds", seeds_label(spec)),
        ],
    )?;
    w.write_record(RUN_COLUMNS)?;
    for r in &results {
        w.write_record(run_row(spec, r, data.graph.node_count()))?;
    }
    w.flush()?;
    let s = summary(spec, &data, &hash, &results)?;
    if let Some(p) = summary_out {
        write_json(Some(p), &s)?;
    }
    Ok(s)
}

/// Parses `key=v1,v2,...`; values are read as JSON when possible, else as strings.
pub fn parse_vary(arg: &str) -> Result<(String, Vec<Value>)> {
    let Some((key, values)) = arg.split_once('=') else {
        bail!("--vary expects key=v1,v2,... (got {arg:?})");
    };
    let values: Vec<Value> = values
        .split(',')
        .filter(|v| !v.is_empty())
        .map(|v| serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string())))
        .collect();
    if values.is_empty() {
        bail!("--vary {key}: no values");
    }
    Ok((key.trim().to_string(), values))
}

fn grid(axes: &[(String, Vec<Value>)]) -> Vec<Vec<Value>> {
    axes.iter().fold(vec![Vec::new()], |acc, (_, values)| {
        acc.into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push(v.clone());
                    p
                })
            })
            .collect()
    })
}

fn cell(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// One summary row per point of the cartesian product of `axes`.
pub fn sweep(base: Map<String, Value>, axes: &[(String, Vec<Value>)], out: Option<&Path>, jobs: usize) -> Result<()> {
    if axes.is_empty() {
        bail!("sweep needs at least one --vary axis");
    }
    let base_spec = SimSpec::from_object(base.clone())?;
    let sweep_hash = spec_hash("sweep", &serde_json::json!({ "base": base_spec, "axes": axes }), None)?;
    let mut datasets: BTreeMap<(String, u64, usize), Dataset> = BTreeMap::new();
    let mut w = csv_with_header(out, &[("spec_sha256", sweep_hash), ("seeds", seeds_label(&base_spec))])?;
    let mut header: Vec<String> = axes.iter().map(|(k, _)| k.clone()).collect();
    header.extend(
        [
            "point_sha256",
            "runs",
            "incomplete_fraction",
            "sentinel",
            "final_cvg_mean",
            "decision_mean",
            "decided_zero_mean",
            "decided_zero_lo",
            "decided_zero_hi",
            "decided_by_mean",
            "success_fraction",
            "success_lo",
            "success_hi",
        ]
        .map(String::from),
    );
    w.write_record(&header)?;
    for point in grid(axes) {
        let mut obj = base.clone();
        for ((k, _), v) in axes.iter().zip(&point) {
            obj.insert(k.clone(), v.clone());
        }
        let spec = SimSpec::from_object(obj)?;
        let key = (spec.dataset.clone(), spec.graph_seed, spec.min_followees);
        if !datasets.contains_key(&key) {
            let d = load_dataset(&spec.dataset, spec.graph_seed, spec.min_followees)?;
            datasets.insert(key.clone(), d);
        }
        let data = &datasets[&key];
        let hash = spec_hash("simulate", &spec, Some(&data.sha256))?;
        let results = run_batch(&spec, data, jobs)?;
        let s = summary(&spec, data, &hash, &results)?;
        let mut row: Vec<String> = point.iter().map(cell).collect();
        let dz = s.decided_zero.ci95;
        let sc = s.success.ci95;
        row.extend([
            hash,
            s.runs.to_string(),
            num(s.incomplete_fraction, 4),
            s.sentinel_count.to_string(),
            opt_num(s.final_cvg.mean, 6),
            opt_num(s.decision.mean, 6),
            opt_num(s.decided_zero.mean, 6),
            opt_num(dz.map(|i| i.lo), 6),
            opt_num(dz.map(|i| i.hi), 6),
            opt_num(s.decided_by.mean, 6),
            num(s.success.fraction, 4),
            opt_num(sc.map(|i| i.lo), 4),
            opt_num(sc.map(|i| i.hi), 4),
        ]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
