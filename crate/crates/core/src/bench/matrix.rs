use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::baselines::{
    hst, hst_mpc, kmeanspp_baseline, kmedianpp_baseline, private_lloyd, HstParams, LloydParams,
};
use super::synth::{gen_synthetic, SyntheticKind, SyntheticParams};
use crate::cost::Power;
use crate::dataset::{normalize, read_points_file, Dataset};
use crate::error::{Error, Result};
use crate::kmeans::{dp_kmeans_exact, KMeansConfig};
use crate::kmedian::TreeParams;
use crate::mpc::MpcConfig;
use crate::privacy::Privacy;
use crate::quadtree::theory_max_depth;

#[derive(
    Debug,
    Clone,
    Copy,
    PartialEq,
    Eq,
    PartialOrd,
    Ord,
    Hash,
    Serialize,
    Deserialize,
    clap::ValueEnum,
)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Hst,
    HstMpc,
    PrivateLloyd,
    Kmedianpp,
    Kmeanspp,
    Kmeans,
}

impl Algorithm {
    pub fn power(self) -> Power {
        match self {
            Algorithm::Kmeans | Algorithm::Kmeanspp => Power::Means,
            _ => Power::Median,
        }
    }

    pub fn is_private(self) -> bool {
        !matches!(self, Algorithm::Kmedianpp | Algorithm::Kmeanspp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DatasetRef {
    Synthetic {
        kind: SyntheticKind,
        n: usize,
        d: usize,
        seed: u64,
        #[serde(default)]
        params: Option<SyntheticParams>,
    },
    Csv {
        path: PathBuf,
        #[serde(default = "default_lambda")]
        lambda: f64,
    },
}

fn default_lambda() -> f64 {
    1.0
}

impl DatasetRef {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetRef::Synthetic {
                kind,
                n,
                d,
                seed,
                params,
            } => Ok(gen_synthetic(*kind, *n, *d, &params.unwrap_or_default(), *seed)?.data),
            DatasetRef::Csv { path, lambda } => normalize(&read_points_file(path)?, *lambda),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub dataset: DatasetRef,
    pub algorithms: Vec<Algorithm>,
    pub ks: Vec<usize>,
    /// `null` runs without privacy.
    pub epsilons: Vec<Option<f64>>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_alpha")]
    pub alpha_depth: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub lambda_smooth: Option<f64>,
    #[serde(default)]
    pub gamma_grad: Option<f64>,
    #[serde(default = "default_machines")]
    pub machines: usize,
}

fn default_alpha() -> f64 {
    10.0
}

fn default_beta() -> f64 {
    6.0
}

fn default_machines() -> usize {
    4
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.algorithms.is_empty()
            || self.ks.is_empty()
            || self.epsilons.is_empty()
            || self.seeds.is_empty()
        {
            return Err(Error::param(
                "algorithms, ks, epsilons and seeds must be nonempty",
            ));
        }
        if self.ks.contains(&0) {
            return Err(Error::param("k must be positive"));
        }
        if self.epsilons.iter().flatten().any(|e| !(*e > 0.0)) {
            return Err(Error::param("epsilon must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRow {
    pub algorithm: Algorithm,
    pub k: usize,
    pub epsilon: Option<f64>,
    pub seed: u64,
    pub z: u32,
    pub cost: f64,
    pub tree_cost: Option<f64>,
    pub centers: usize,
    pub wall_ms: f64,
    pub epsilon_spent: f64,
    pub ledger: BTreeMap<String, f64>,
    /// Cost over the best cost among runs with the same `k` and `z`.
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub algorithm: Algorithm,
    pub k: usize,
    pub epsilon: Option<f64>,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub algorithm: Algorithm,
    pub k: usize,
    pub epsilon: Option<f64>,
    pub runs: usize,
    pub median_cost: f64,
    pub mean_cost: f64,
    pub median_normalized: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub spec: ExperimentSpec,
    pub runs: Vec<RunRow>,
    pub failures: Vec<Failure>,
    pub aggregates: Vec<Aggregate>,
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

type Cell = (Algorithm, usize, Option<f64>, u64);

struct Outcome {
    cost: f64,
    tree_cost: Option<f64>,
    centers: usize,
    ledger: BTreeMap<String, f64>,
}

fn run_one(
    data: &Dataset,
    spec: &ExperimentSpec,
    alg: Algorithm,
    k: usize,
    eps: Option<f64>,
    seed: u64,
) -> Result<Outcome> {
    let privacy = match eps {
        Some(e) => Privacy::new(e)?,
        None => Privacy::disabled(),
    };
    let mut hp = HstParams {
        alpha_depth: spec.alpha_depth,
        beta: spec.beta,
        ..HstParams::default()
    };
    let mut lp = LloydParams::baseline();
    if let Some(l) = spec.lambda_smooth {
        hp.lloyd.lambda_smooth = l;
        lp.lambda_smooth = l;
    }
    if spec.gamma_grad.is_some() {
        hp.lloyd.gamma_grad = spec.gamma_grad;
        lp.gamma_grad = spec.gamma_grad;
    }
    let lloyd = |r: super::LloydRun| Outcome {
        cost: r.cost,
        tree_cost: r.tree_cost,
        centers: r.centers.len(),
        ledger: r.ledger.by_label(),
    };
    Ok(match alg {
        Algorithm::Hst => lloyd(hst(data, k, &privacy, &hp, seed)?),
        Algorithm::HstMpc => {
            let depth = TreeParams::experimental(data.dim(), hp.alpha_depth, hp.beta)
                .depth_override
                .unwrap_or(theory_max_depth(data.dim(), data.len()));
            let cfg = MpcConfig::sized(data.len(), data.dim(), k, depth, spec.machines);
            lloyd(hst_mpc(data, k, &privacy, &hp, seed, &cfg)?)
        }
        Algorithm::PrivateLloyd => lloyd(private_lloyd(data, k, &privacy, &lp, seed)?),
        Algorithm::Kmedianpp | Algorithm::Kmeanspp => {
            let s = if alg == Algorithm::Kmedianpp {
                kmedianpp_baseline(data, k, 10, seed)?
            } else {
                kmeanspp_baseline(data, k, 10, seed)?
            };
            Outcome {
                cost: s.cost,
                tree_cost: None,
                centers: s.len(),
                ledger: BTreeMap::new(),
            }
        }
        Algorithm::Kmeans => {
            let r = dp_kmeans_exact(data, k, &privacy, &KMeansConfig::default(), seed)?;
            Outcome {
                cost: r.cost,
                tree_cost: None,
                centers: r.centers.len(),
                ledger: r.ledger.by_label(),
            }
        }
    })
}

/// Runs every (algorithm, k, ε, seed) cell. Failed cells are recorded and the
/// rest of the matrix still runs.
pub fn run_matrix(spec: &ExperimentSpec) -> Result<RunReport> {
    spec.validate()?;
    let data = spec.dataset.load()?;
    let mut cells = Vec::new();
    for &alg in &spec.algorithms {
        for &k in &spec.ks {
            // Non-private algorithms ignore ε; run them once per seed.
            let eps_list: Vec<Option<f64>> = if alg.is_private() {
                spec.epsilons.clone()
            } else {
                vec![None]
            };
            for eps in eps_list {
                for &seed in &spec.seeds {
                    cells.push((alg, k, eps, seed));
                }
            }
        }
    }
    let results: Vec<(Cell, f64, Result<Outcome>)> = cells
        .into_par_iter()
        .map(|cell| {
            let (alg, k, eps, seed) = cell;
            let t = Instant::now();
            let r = run_one(&data, spec, alg, k, eps, seed);
            (cell, t.elapsed().as_secs_f64() * 1e3, r)
        })
        .collect();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for ((algorithm, k, epsilon, seed), wall_ms, r) in results {
        match r {
            Ok(o) => runs.push(RunRow {
                algorithm,
                k,
                epsilon,
                seed,
                z: algorithm.power().z(),
                cost: o.cost,
                tree_cost: o.tree_cost,
                centers: o.centers,
                wall_ms,
                epsilon_spent: o.ledger.values().sum(),
                ledger: o.ledger,
                normalized: f64::NAN,
            }),
            Err(e) => failures.push(Failure {
                algorithm,
                k,
                epsilon,
                seed,
                error: e.to_string(),
            }),
        }
    }
    let mut best: BTreeMap<(usize, u32), f64> = BTreeMap::new();
    for r in &runs {
        let b = best.entry((r.k, r.z)).or_insert(f64::INFINITY);
        *b = b.min(r.cost);
    }
    for r in runs.iter_mut() {
        let b = best[&(r.k, r.z)];
        r.normalized = if b > 0.0 {
            r.cost / b
        } else if r.cost == 0.0 {
            1.0
        } else {
            f64::INFINITY
        };
    }
    let mut groups: BTreeMap<(Algorithm, usize, Option<u64>), Vec<&RunRow>> = BTreeMap::new();
    for r in &runs {
        groups
            .entry((r.algorithm, r.k, r.epsilon.map(f64::to_bits)))
            .or_default()
            .push(r);
    }
    let aggregates = groups
        .into_iter()
        .map(|((algorithm, k, eps), rows)| {
            let mut costs: Vec<f64> = rows.iter().map(|r| r.cost).collect();
            let mut norm: Vec<f64> = rows.iter().map(|r| r.normalized).collect();
            Aggregate {
                algorithm,
                k,
                epsilon: eps.map(f64::from_bits),
                runs: rows.len(),
                mean_cost: costs.iter().sum::<f64>() / costs.len() as f64,
                median_cost: median(&mut costs),
                median_normalized: median(&mut norm),
            }
        })
        .collect();
    Ok(RunReport {
        spec: spec.clone(),
        runs,
        failures,
        aggregates,
    })
}

impl RunReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Plot series: normalized cost against k, one series per (algorithm, ε).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "algorithm",
            "epsilon",
            "k",
            "runs",
            "median_cost",
            "mean_cost",
            "median_normalized",
        ])?;
        for a in &self.aggregates {
            let alg = serde_json::to_value(a.algorithm)?
                .as_str()
                .unwrap_or_default()
                .to_string();
            let eps = a.epsilon.map_or("inf".to_string(), |e| e.to_string());
            w.write_record([
                alg,
                eps,
                a.k.to_string(),
                a.runs.to_string(),
                a.median_cost.to_string(),
                a.mean_cost.to_string(),
                a.median_normalized.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
