mod graphs;
mod meanfield;
mod output;
mod simulate;
mod spec;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use sky_core::mean_field::{AdversaryMapping, MeanFieldModel, DEFAULT_HORIZON};

use meanfield::{CriticalParams, FixedPointParams, TrajectoryParams};
use spec::{flags_object, load_object, SimSpec};

#[derive(Parser)]
#[command(name = "sky", version, about = "Opinion-dynamics consensus simulation lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse an edge list and prune it to a minimum out-degree.
    Ingest {
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        min_followees: usize,
        /// Filtered edge list.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Statistics JSON (stdout by default).
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Write a graph in which every node follows exactly `degree` others.
    GenUniform {
        #[arg(long)]
        nodes: usize,
        #[arg(long)]
        degree: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean-field analysis.
    #[command(subcommand)]
    Meanfield(MeanfieldCommand),
    /// Run one spec over a range of seeds.
    Simulate {
        #[command(flatten)]
        common: SpecArgs,
        /// Per-run CSV (stdout by default).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Aggregate JSON.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Run a spec over the cartesian product of `--vary` axes.
    Sweep {
        #[command(flatten)]
        common: SpecArgs,
        /// `key=v1,v2,...`; repeat for more axes.
        #[arg(long, required = true)]
        vary: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum MeanfieldCommand {
    /// c0 over time.
    Trajectory {
        #[arg(long, default_value = "sky", value_parser = by_name::<MeanFieldModel>)]
        model: MeanFieldModel,
        #[arg(long, value_delimiter = ',', default_value = "10")]
        degrees: Vec<f64>,
        #[arg(long, default_value_t = 0.5)]
        c0: f64,
        #[arg(long, default_value_t = 0.0)]
        f: f64,
        #[arg(long, default_value = "always-one", value_parser = by_name::<AdversaryMapping>)]
        adversary: AdversaryMapping,
        #[arg(long, default_value_t = 1.0)]
        dt: f64,
        #[arg(long, default_value_t = DEFAULT_HORIZON)]
        t_max: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Largest always-one fraction that still reaches epsilon-consensus.
    Critical {
        #[arg(long, default_value = "sky", value_parser = by_name::<MeanFieldModel>)]
        model: MeanFieldModel,
        #[arg(long, value_delimiter = ',', default_value = "0.75")]
        p: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "10,20,50,100,200,400")]
        degrees: Vec<f64>,
        #[arg(long, default_value_t = 0.05)]
        epsilon: f64,
        #[arg(long, default_value_t = 1.0)]
        dt: f64,
        #[arg(long, default_value_t = DEFAULT_HORIZON)]
        t_max: f64,
        #[arg(long, default_value_t = 1e-4)]
        resolution: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Roots of dc0/dt on [0, 1 - f].
    FixedPoints {
        #[arg(long, default_value = "sky", value_parser = by_name::<MeanFieldModel>)]
        model: MeanFieldModel,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        f: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "10")]
        degrees: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SpecArgs {
    /// JSON spec; flags override its keys.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[command(flatten)]
    flags: SimFlags,
}

/// Mirrors the spec keys; unset flags fall back to the file, then defaults.
#[derive(Args, Serialize)]
struct SimFlags {
    /// `uniform:<n>:<degree>` or an edge-list path.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    graph_seed: Option<u64>,
    #[arg(long)]
    min_followees: Option<usize>,
    /// sync | async
    #[arg(long)]
    mode: Option<String>,
    /// mr | sa | sky | voter | sznajd
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    sky_mr_ratio: Option<f64>,
    /// none | always-one | always-zero | silent | random-opinion | split-half | inverted
    #[arg(long)]
    adversary: Option<String>,
    #[arg(long)]
    fault_fraction: Option<f64>,
    /// random | top
    #[arg(long)]
    selection: Option<String>,
    #[arg(long)]
    init_cvg: Option<f64>,
    #[arg(long)]
    max_rounds: Option<u32>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    timeout_ms: Option<f64>,
    #[arg(long)]
    latency_mu: Option<f64>,
    #[arg(long)]
    latency_sigma: Option<f64>,
    #[arg(long)]
    latency_cutoff: Option<f64>,
    #[arg(long)]
    tick_ms: Option<f64>,
    #[arg(long)]
    horizon_ms: Option<f64>,
    #[arg(long)]
    seed_start: Option<u64>,
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    decide_by_ms: Option<f64>,
}

fn by_name<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('_', "-")))
        .or_else(|_| serde_json::from_value(serde_json::Value::String(s.to_string())))
        .map_err(|e| e.to_string())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Ingest {
            input,
            min_followees,
            out,
            stats,
        } => {
            graphs::ingest(&input, min_followees, out.as_deref(), stats.as_deref())?;
        }
        Command::GenUniform {
            nodes,
            degree,
            seed,
            out,
        } => graphs::gen_uniform(nodes, degree, seed, out.as_deref())?,
        Command::Meanfield(cmd) => match cmd {
            MeanfieldCommand::Trajectory {
                model,
                degrees,
                c0,
                f,
                adversary,
                dt,
                t_max,
                out,
            } => {
                let p = TrajectoryParams {
                    model,
                    degrees,
                    c0,
                    f,
                    adversary,
                    dt,
                    t_max,
                };
                meanfield::trajectory(&p, out.as_deref())?
            }
            MeanfieldCommand::Critical {
                model,
                p,
                degrees,
                epsilon,
                dt,
                t_max,
                resolution,
                out,
            } => {
                let params = CriticalParams {
                    model,
                    ps: p,
                    degrees,
                    epsilon,
                    dt,
                    t_max,
                    resolution,
                };
                meanfield::critical(&params, out.as_deref())?
            }
            MeanfieldCommand::FixedPoints { model, f, degrees, out } => {
                let p = FixedPointParams { model, fs: f, degrees };
                meanfield::roots(&p, out.as_deref())?
            }
        },
        Command::Simulate { common, out, summary } => {
            let obj = load_object(common.spec.as_deref(), flags_object(&common.flags))?;
            let spec = SimSpec::from_object(obj)?;
            simulate::simulate(&spec, out.as_deref(), summary.as_deref(), common.jobs)?;
        }
        Command::Sweep { common, vary, out } => {
            let obj = load_object(common.spec.as_deref(), flags_object(&common.flags))?;
            let axes = vary.iter().map(|v| simulate::parse_vary(v)).collect::<Result<Vec<_>>>()?;
            simulate::sweep(obj, &axes, out.as_deref(), common.jobs)?;
        }
    }
    Ok(())
}
