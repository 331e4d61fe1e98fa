use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::cost::{clustering_cost, nearest, Power, Solution};
use crate::dataset::{norm, Dataset};
use crate::error::{Error, Result};
use crate::kmedian::{dp_kmedian, TreeParams};
use crate::median::{weiszfeld, WEISZFELD_ITERS, WEISZFELD_TOL};
use crate::mpc::{mpc_run_kmedian, MpcConfig};
use crate::privacy::{dp_one_median, MedianParams, Privacy, PrivacyBudget};
use crate::rng::RngStream;

/// Uniform point of `B(0, radius)` in `d` dimensions.
pub fn random_in_ball<R: Rng + ?Sized>(d: usize, radius: f64, rng: &mut R) -> Vec<f64> {
    let dir: Vec<f64> = (0..d)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let len = norm(&dir).max(f64::MIN_POSITIVE);
    let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
    dir.into_iter().map(|x| x / len * r).collect()
}

/// `D^z` seeding: the first center uniform, each next one a data point drawn
/// with probability proportional to its current cost.
fn seed_centers<R: Rng + ?Sized>(
    data: &Dataset,
    k: usize,
    power: Power,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let n = data.len();
    let mut centers = vec![data.point(rng.random_range(0..n)).to_vec()];
    let mut cost: Vec<f64> = data
        .iter()
        .map(|p| power.of_dist(crate::dataset::dist(p, &centers[0])))
        .collect();
    while centers.len() < k {
        let next = match WeightedIndex::new(&cost) {
            Ok(w) => w.sample(rng),
            Err(_) => rng.random_range(0..n),
        };
        let c = data.point(next).to_vec();
        for (i, p) in data.iter().enumerate() {
            cost[i] = cost[i].min(power.of_dist(crate::dataset::dist(p, &c)));
        }
        centers.push(c);
    }
    centers
}

fn clusters(data: &Dataset, centers: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); centers.len()];
    for (i, p) in data.iter().enumerate() {
        out[nearest(p, centers).0].push(i);
    }
    out
}

fn lloyd_baseline(
    data: &Dataset,
    k: usize,
    iters: usize,
    power: Power,
    seed: u64,
) -> Result<Solution> {
    if k == 0 || k > data.len() {
        return Err(Error::param(format!("k must lie in 1..={}", data.len())));
    }
    let mut rng = RngStream::new(seed, "baseline").rng();
    let mut centers = seed_centers(data, k, power, &mut rng);
    for _ in 0..iters {
        for (j, members) in clusters(data, &centers).into_iter().enumerate() {
            if members.is_empty() {
                continue;
            }
            let pts: Vec<&[f64]> = members.iter().map(|&i| data.point(i)).collect();
            centers[j] = match power {
                Power::Median => weiszfeld(&pts, None, WEISZFELD_ITERS, WEISZFELD_TOL),
                Power::Means => {
                    let mut m = vec![0.0; data.dim()];
                    for p in &pts {
                        for (a, b) in m.iter_mut().zip(p.iter()) {
                            *a += b / pts.len() as f64;
                        }
                    }
                    m
                }
            };
        }
    }
    Solution::evaluate(data, centers, power)
}

/// Non-private k-median++: `D¹` seeding and Weiszfeld-based Lloyd steps.
pub fn kmedianpp_baseline(
    data: &Dataset,
    k: usize,
    lloyd_iters: usize,
    seed: u64,
) -> Result<Solution> {
    lloyd_baseline(data, k, lloyd_iters, Power::Median, seed)
}

/// Non-private k-means++: `D²` seeding and mean-based Lloyd steps.
pub fn kmeanspp_baseline(
    data: &Dataset,
    k: usize,
    lloyd_iters: usize,
    seed: u64,
) -> Result<Solution> {
    lloyd_baseline(data, k, lloyd_iters, Power::Means, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LloydParams {
    pub iters: usize,
    pub lambda_smooth: f64,
    /// `None` uses `0.01·√d/n`.
    pub gamma_grad: Option<f64>,
    /// Points per cluster handed to the 1-median solver.
    pub cap: Option<usize>,
}

impl LloydParams {
    pub fn baseline() -> Self {
        Self {
            iters: 7,
            lambda_smooth: 1.0,
            gamma_grad: None,
            cap: None,
        }
    }

    fn median_params(&self, data: &Dataset) -> MedianParams {
        let gamma = self
            .gamma_grad
            .unwrap_or(0.01 * (data.dim() as f64).sqrt() / data.len() as f64);
        MedianParams::new(self.lambda_smooth, gamma)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LloydRun {
    pub centers: Vec<Vec<f64>>,
    pub cost: f64,
    /// k-median cost after each iteration.
    pub iteration_costs: Vec<f64>,
    pub tree_cost: Option<f64>,
    pub ledger: PrivacyBudget,
}

/// Lloyd steps whose centers come from the private 1-median, each iteration
/// spending `per_iter` (clusters are disjoint, so charged once).
fn private_refine(
    data: &Dataset,
    mut centers: Vec<Vec<f64>>,
    per_iter: &Privacy,
    params: &LloydParams,
    stream: &RngStream,
    ledger: &mut PrivacyBudget,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let median = params.median_params(data);
    let mut costs = Vec::with_capacity(params.iters);
    for it in 0..params.iters {
        let mut rng = stream.indexed("iter", it as u64).rng();
        let groups = clusters(data, &centers);
        for (j, members) in groups.iter().enumerate() {
            if members.is_empty() {
                centers[j] = random_in_ball(data.dim(), data.lambda(), &mut rng);
                continue;
            }
            let chosen: Vec<usize> = match params.cap {
                Some(cap) if members.len() > cap => sample_indices(&mut rng, members.len(), cap)
                    .into_iter()
                    .map(|i| members[i])
                    .collect(),
                _ => members.clone(),
            };
            let pts: Vec<&[f64]> = chosen.iter().map(|&i| data.point(i)).collect();
            centers[j] =
                dp_one_median(&pts, None, per_iter, &median, data.lambda(), &mut rng)?.point;
        }
        if per_iter.is_private() {
            ledger.charge_parallel(
                format!("lloyd/iter{it}"),
                &vec![per_iter.epsilon; groups.len()],
            )?;
        }
        costs.push(clustering_cost(data, &centers, Power::Median)?.0);
    }
    Ok((centers, costs))
}

/// Private Lloyd from random centers in the ball, `ε/iters` per iteration.
pub fn private_lloyd(
    data: &Dataset,
    k: usize,
    privacy: &Privacy,
    params: &LloydParams,
    seed: u64,
) -> Result<LloydRun> {
    if k == 0 || data.is_empty() {
        return Err(Error::param("need k ≥ 1 and a nonempty dataset"));
    }
    let stream = RngStream::new(seed, "private_lloyd");
    let mut rng = stream.child("init").rng();
    let init: Vec<Vec<f64>> = (0..k)
        .map(|_| random_in_ball(data.dim(), data.lambda(), &mut rng))
        .collect();
    let per_iter = privacy.scaled(1.0 / params.iters.max(1) as f64);
    let mut ledger = PrivacyBudget::for_privacy(privacy);
    let (centers, iteration_costs) =
        private_refine(data, init, &per_iter, params, &stream, &mut ledger)?;
    let cost = clustering_cost(data, &centers, Power::Median)?.0;
    Ok(LloydRun {
        centers,
        cost,
        iteration_costs,
        tree_cost: None,
        ledger,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HstParams {
    pub alpha_depth: f64,
    pub beta: f64,
    pub lloyd: LloydParams,
}

impl Default for HstParams {
    fn default() -> Self {
        Self {
            alpha_depth: 10.0,
            beta: 6.0,
            lloyd: LloydParams {
                iters: 4,
                lambda_smooth: 0.2,
                gamma_grad: None,
                cap: Some(20_000),
            },
        }
    }
}

fn hst_with<F>(
    data: &Dataset,
    privacy: &Privacy,
    params: &HstParams,
    seed: u64,
    tree: F,
) -> Result<LloydRun>
where
    F: FnOnce(&TreeParams, &Privacy) -> Result<(Vec<Vec<f64>>, f64, PrivacyBudget)>,
{
    let share = privacy.scaled(1.0 / (params.lloyd.iters + 1) as f64);
    let tree_params = TreeParams::experimental(data.dim(), params.alpha_depth, params.beta);
    let (centers, tree_cost, tree_ledger) = tree(&tree_params, &share)?;
    let mut ledger = PrivacyBudget::for_privacy(privacy);
    ledger.absorb("hst", &tree_ledger)?;
    let stream = RngStream::new(seed, "hst_lloyd");
    let (centers, iteration_costs) =
        private_refine(data, centers, &share, &params.lloyd, &stream, &mut ledger)?;
    let cost = clustering_cost(data, &centers, Power::Median)?.0;
    Ok(LloydRun {
        centers,
        cost,
        iteration_costs,
        tree_cost: Some(tree_cost),
        ledger,
    })
}

/// Experimental-tree k-median followed by private Lloyd refinement; the
/// budget splits evenly between the tree and each Lloyd iteration.
pub fn hst(
    data: &Dataset,
    k: usize,
    privacy: &Privacy,
    params: &HstParams,
    seed: u64,
) -> Result<LloydRun> {
    hst_with(data, privacy, params, seed, |tp, p| {
        let s = dp_kmedian(data, k, p, tp, seed)?;
        Ok((s.centers, s.tree_cost, s.ledger))
    })
}

/// [`hst`] with the tree stage run on the cluster simulator.
pub fn hst_mpc(
    data: &Dataset,
    k: usize,
    privacy: &Privacy,
    params: &HstParams,
    seed: u64,
    config: &MpcConfig,
) -> Result<LloydRun> {
    hst_with(data, privacy, params, seed, |tp, p| {
        let s = mpc_run_kmedian(data, k, p, tp, seed, config)?;
        Ok((s.centers, s.tree_cost, s.ledger))
    })
}
