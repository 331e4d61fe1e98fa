use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use dpclust::bench::{
    gen_synthetic, hst, run_matrix, ExperimentSpec, HstParams, SyntheticKind, SyntheticParams,
};
use dpclust::dataset::{read_points, read_points_file};
use dpclust::kmeans::{dp_kmeans_exact, KMeansConfig};
use dpclust::kmedian::{dp_kmedian, kmedian_high_dim, HighDimConfig, TreeParams};
use dpclust::mpc::{mpc_run_kmedian, MpcConfig};
use dpclust::quadtree::theory_max_depth;
use dpclust::{normalize, Dataset, Error, Privacy};

#[derive(Parser)]
#[command(
    name = "dpclust",
    version,
    about = "Differentially private k-median and k-means"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// One clustering run.
    Cluster {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value = "tree")]
        method: Method,
    },
    /// Experiment matrix from a JSON spec.
    Bench {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Plot data (aggregates) as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Tree k-median on a simulated cluster.
    MpcSim {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 4)]
        machines: usize,
        /// Per-machine memory in words; sized from the input when omitted.
        #[arg(long)]
        memory_words: Option<usize>,
    },
    /// Synthetic dataset as CSV (normalized coordinates).
    GenData {
        #[arg(long, value_enum, default_value = "blobs")]
        kind: SyntheticKind,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        blobs: usize,
        #[arg(long, default_value_t = 0.05)]
        sigma: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Normalize a raw CSV into the ball of radius lambda.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Zero-based columns to drop, e.g. a label column.
        #[arg(long, value_delimiter = ',')]
        drop: Vec<usize>,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
    },
}

#[derive(Args)]
struct Input {
    /// CSV or whitespace-separated points, one per row.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    k: usize,
    #[arg(long, conflicts_with = "no_privacy")]
    epsilon: Option<f64>,
    #[arg(long)]
    no_privacy: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..=2))]
    z: u32,
    #[arg(long)]
    alpha_depth: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lambda_smooth: Option<f64>,
    #[arg(long)]
    gamma_grad: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    /// Tree DP (k-median for z=1, tree bicriteria plus reverse greedy for z=2).
    Tree,
    /// Random projection, tree DP, project-back (z=1).
    HighDim,
    /// Tree DP seeding followed by private Lloyd steps.
    Hst,
}

impl RunArgs {
    fn privacy(&self) -> Result<Privacy, Error> {
        match (self.epsilon, self.no_privacy) {
            (_, true) => Ok(Privacy::disabled()),
            (Some(e), false) => Privacy::new(e),
            (None, false) => Err(Error::InvalidParameter(
                "either --epsilon or --no-privacy is required".into(),
            )),
        }
    }

    fn tree(&self, dim: usize) -> TreeParams {
        if self.alpha_depth.is_some() || self.beta.is_some() {
            TreeParams::experimental(
                dim,
                self.alpha_depth.unwrap_or(10.0),
                self.beta.unwrap_or(6.0),
            )
        } else {
            TreeParams::theory()
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::MemoryOverflow { .. } => 3,
        Error::EmptyDataset
        | Error::InvalidCoordinate
        | Error::DimensionMismatch { .. }
        | Error::OutOfUniverse
        | Error::Io(_)
        | Error::Csv(_) => 4,
        _ => 2,
    }
}

fn load(input: &Input) -> Result<Dataset, Error> {
    normalize(&read_points_file(&input.data)?, input.lambda)
}

fn emit(out: Option<&Path>, value: &serde_json::Value) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => writeln!(std::io::stdout(), "{text}")?,
    }
    Ok(())
}

fn write_rows(path: &Path, rows: impl Iterator<Item = Vec<f64>>) -> Result<(), Error> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.write_record(r.iter().map(|x| x.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn cluster(input: &Input, run: &RunArgs, method: Method) -> Result<(), Error> {
    let data = load(input)?;
    let privacy = run.privacy()?;
    let (centers, cost, extra) = match (method, run.z) {
        (Method::Tree, 1) => {
            let s = dp_kmedian(&data, run.k, &privacy, &run.tree(data.dim()), run.seed)?;
            let extra =
                json!({ "tree_cost": s.tree_cost, "num_cells": s.num_cells, "ledger": s.ledger });
            (s.centers, s.cost, extra)
        }
        (Method::Tree, _) => {
            let config = KMeansConfig {
                tree: run.tree(data.dim()),
                ..KMeansConfig::default()
            };
            let s = dp_kmeans_exact(&data, run.k, &privacy, &config, run.seed)?;
            let extra =
                json!({ "bicriteria_centers": s.bicriteria.centers.len(), "ledger": s.ledger });
            (s.centers, s.cost, extra)
        }
        (Method::HighDim, 1) => {
            let mut config = HighDimConfig {
                tree: run.tree(data.dim()),
                ..HighDimConfig::default()
            };
            if let Some(l) = run.lambda_smooth {
                config.median.lambda_smooth = l;
            }
            if let Some(g) = run.gamma_grad {
                config.median.gamma_grad = g;
            }
            let s = kmedian_high_dim(&data, run.k, &privacy, &config, run.seed)?;
            let extra = json!({ "projected_dim": s.projected_dim, "ledger": s.ledger });
            (s.centers, s.cost, extra)
        }
        (Method::Hst, 1) => {
            let mut params = HstParams::default();
            params.alpha_depth = run.alpha_depth.unwrap_or(params.alpha_depth);
            params.beta = run.beta.unwrap_or(params.beta);
            params.lloyd.lambda_smooth = run.lambda_smooth.unwrap_or(params.lloyd.lambda_smooth);
            params.lloyd.gamma_grad = run.gamma_grad.or(params.lloyd.gamma_grad);
            let s = hst(&data, run.k, &privacy, &params, run.seed)?;
            let extra = json!({ "tree_cost": s.tree_cost, "iteration_costs": s.iteration_costs, "ledger": s.ledger });
            (s.centers, s.cost, extra)
        }
        _ => {
            return Err(Error::InvalidParameter(
                "this method supports --z 1 only".into(),
            ))
        }
    };
    let value = json!({
        "k": run.k,
        "z": run.z,
        "epsilon": run.epsilon.filter(|_| !run.no_privacy),
        "seed": run.seed,
        "cost": cost,
        "centers": data.denormalize(&centers),
        "normalized_centers": centers,
        "details": extra,
    });
    emit(run.out.as_deref(), &value)
}

fn mpc_sim(
    input: &Input,
    run: &RunArgs,
    machines: usize,
    memory_words: Option<usize>,
) -> Result<(), Error> {
    if run.z != 1 {
        return Err(Error::InvalidParameter(
            "mpc-sim supports --z 1 only".into(),
        ));
    }
    let data = load(input)?;
    let privacy = run.privacy()?;
    let params = run.tree(data.dim());
    let depth = params
        .depth_override
        .unwrap_or_else(|| theory_max_depth(data.dim(), data.len()));
    let mut config = MpcConfig::sized(data.len(), data.dim(), run.k, depth, machines);
    if let Some(s) = memory_words {
        config.memory_words = s;
    }
    let s = mpc_run_kmedian(&data, run.k, &privacy, &params, run.seed, &config)?;
    let value = json!({
        "machines": config.machines,
        "memory_words": config.memory_words,
        "cost": s.cost,
        "tree_cost": s.tree_cost,
        "centers": data.denormalize(&s.centers),
        "normalized_centers": s.centers,
        "rounds": s.trace.num_rounds(),
        "max_expanded_depth": s.max_expanded_depth,
        "loads": s.loads,
        "ledger": s.ledger,
        "trace": s.trace,
    });
    emit(run.out.as_deref(), &value)
}

fn ingest(input: &Path, out: &Path, drop: &[usize], lambda: f64) -> Result<(), Error> {
    let text = std::fs::read_to_string(input)?;
    let kept: String = text
        .lines()
        .map(|line| {
            let fields: Vec<&str> = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|f| !f.is_empty())
                .collect();
            let kept: Vec<&str> = fields
                .iter()
                .enumerate()
                .filter(|(i, _)| !drop.contains(i))
                .map(|(_, f)| *f)
                .collect();
            kept.join(",") + "\n"
        })
        .collect();
    let data = normalize(&read_points(kept.as_bytes())?, lambda)?;
    write_rows(out, data.iter().map(<[f64]>::to_vec))?;
    let n = data.normalization();
    let summary = json!({ "n": data.len(), "d": data.dim(), "lambda": lambda, "shift": n.shift, "scale": n.scale });
    emit(None, &summary)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.cmd {
        Cmd::Cluster { input, run, method } => cluster(&input, &run, method),
        Cmd::Bench { spec, out, csv } => {
            let spec: ExperimentSpec = serde_json::from_str(&std::fs::read_to_string(spec)?)?;
            let report = run_matrix(&spec)?;
            if let Some(p) = csv {
                report.write_csv(&p)?;
            }
            match out {
                Some(p) => report.write_json(&p),
                None => emit(None, &serde_json::to_value(&report)?),
            }
        }
        Cmd::MpcSim {
            input,
            run,
            machines,
            memory_words,
        } => mpc_sim(&input, &run, machines, memory_words),
        Cmd::GenData {
            kind,
            n,
            d,
            seed,
            blobs,
            sigma,
            out,
        } => {
            let params = SyntheticParams {
                blobs,
                sigma,
                ..SyntheticParams::default()
            };
            let s = gen_synthetic(kind, n, d, &params, seed)?;
            write_rows(&out, s.data.iter().map(<[f64]>::to_vec))
        }
        Cmd::Ingest {
            input,
            out,
            drop,
            lambda,
        } => ingest(&input, &out, &drop, lambda),
    }
}

fn main() -> ExitCode {
    env_logger::init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
