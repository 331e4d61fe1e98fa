//! Dynamic program on the private tree, the k-median pipeline, random
//! projection and project-back of low-dimensional clusters.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::cost::{clustering_cost, nearest, Power};
use crate::dataset::{clamp_to_ball, dist, Dataset, Normalization, NORM_SLACK};
use crate::error::{Error, Result};
use crate::privacy::{
    dp_one_median, laplace_sample, make_private, MedianParams, NoisyWeights, Privacy,
    PrivacyBudget, ThresholdRule,
};
use crate::quadtree::{CellId, Quadtree, TreeConfig, TreeGeometry};
use crate::rng::RngStream;

/// `v[0]` of a cell: all its (noisy, clamped) points pay the cell diameter.
pub fn empty_cost(weight: Option<f64>, diam: f64, power: Power) -> f64 {
    weight.unwrap_or(0.0).max(0.0) * power.of_dist(diam)
}

/// Table of a DP leaf: zero centers pay `v[0]`, any positive number pays 0.
pub fn leaf_values(weight: Option<f64>, diam: f64, power: Power, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; k + 1];
    v[0] = empty_cost(weight, diam, power);
    v
}

/// Table of an internal cell from its children's tables, with the chosen
/// `k1` (left share) per `k'`. Ties go to the smaller `k1`.
///
/// For `k' >= 1` at least one center lands in the subtree. With noisy weights
/// `v[1]` can exceed `v[0]`; beyond that the table is non-increasing.
pub fn combine_values(
    weight: Option<f64>,
    diam: f64,
    power: Power,
    left: &[f64],
    right: &[f64],
) -> (Vec<f64>, Vec<u32>) {
    let k = left.len() - 1;
    let mut v = vec![0.0; k + 1];
    let mut split = vec![0u32; k + 1];
    v[0] = empty_cost(weight, diam, power);
    for kp in 1..=k {
        let mut best = f64::INFINITY;
        let mut arg = 0;
        for k1 in 0..=kp {
            let s = left[k1] + right[kp - k1];
            if s < best {
                best = s;
                arg = k1;
            }
        }
        v[kp] = best;
        split[kp] = arg as u32;
    }
    (v, split)
}

/// Per-cell DP values and backpointers. A cell with no split entry is a DP
/// leaf.
#[derive(Debug, Clone)]
pub struct DpTable {
    pub k: usize,
    pub power: Power,
    values: Vec<Vec<f64>>,
    splits: Vec<Option<Vec<u32>>>,
}

impl DpTable {
    pub fn values(&self, id: CellId) -> &[f64] {
        &self.values[id]
    }

    pub fn split(&self, id: CellId, kp: usize) -> Option<(usize, usize)> {
        self.splits[id]
            .as_ref()
            .map(|s| (s[kp] as usize, kp - s[kp] as usize))
    }

    pub fn is_leaf(&self, id: CellId) -> bool {
        self.splits[id].is_none()
    }
}

/// Output of a backpointer walk.
#[derive(Debug, Clone)]
pub struct Extraction {
    /// DP leaves that received at least one center, in walk order.
    pub leaves: Vec<CellId>,
    /// Maximal center-free cells and their `v[0]`.
    pub uncovered: Vec<(CellId, f64)>,
}

/// Bottom-up DP over the materialized cells. Children always have larger ids
/// than their parent, so a reverse scan is a post-order.
pub fn dp_solve(
    tree: &Quadtree,
    weights: &NoisyWeights,
    k: usize,
    power: Power,
) -> Result<DpTable> {
    if k == 0 {
        return Err(Error::param("k must be at least 1"));
    }
    let n = tree.num_cells();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut splits: Vec<Option<Vec<u32>>> = vec![None; n];
    for id in (0..n).rev() {
        let c = tree.cell(id);
        let w = weights.get(id);
        match c.children {
            [Some(l), Some(r)] => {
                let (v, s) = combine_values(w, c.diam, power, &values[l], &values[r]);
                values[id] = v;
                splits[id] = Some(s);
            }
            [None, None] => values[id] = leaf_values(w, c.diam, power, k),
            _ => {
                return Err(Error::param(
                    "dp_solve needs both children of every expanded cell",
                ))
            }
        }
    }
    Ok(DpTable {
        k,
        power,
        values,
        splits,
    })
}

/// Walks backpointers from the root with `k` centers.
pub fn extract(tree: &Quadtree, table: &DpTable) -> Extraction {
    let mut out = Extraction {
        leaves: Vec::new(),
        uncovered: Vec::new(),
    };
    let mut stack = vec![(tree.root(), table.k)];
    while let Some((id, kp)) = stack.pop() {
        if kp == 0 {
            out.uncovered.push((id, table.values(id)[0]));
            continue;
        }
        match table.split(id, kp) {
            None => out.leaves.push(id),
            Some((k1, k2)) => {
                let [l, r] = tree.cell(id).children;
                stack.push((r.expect("expanded"), k2));
                stack.push((l.expect("expanded"), k1));
            }
        }
    }
    out
}

/// Tree cost of opening centers at the given DP leaves: every point pays the
/// diameter of its maximal center-free cell, using the same weights and
/// summation order as the DP.
pub fn tree_cost_of_leaves(
    tree: &Quadtree,
    weights: &NoisyWeights,
    leaves: &[CellId],
    power: Power,
) -> f64 {
    let n = tree.num_cells();
    let mut open = vec![false; n];
    for &l in leaves {
        open[l] = true;
    }
    // has[id]: subtree contains an open leaf.
    let mut has = vec![false; n];
    let mut cost = vec![0.0; n];
    for id in (0..n).rev() {
        let c = tree.cell(id);
        match c.children {
            [Some(l), Some(r)] => {
                has[id] = has[l] || has[r];
                cost[id] = if has[id] {
                    cost[l] + cost[r]
                } else {
                    empty_cost(weights.get(id), c.diam, power)
                };
            }
            _ => {
                has[id] = open[id];
                cost[id] = if has[id] {
                    0.0
                } else {
                    empty_cost(weights.get(id), c.diam, power)
                };
            }
        }
    }
    cost[tree.root()]
}

/// `Σ_p min_c dist_T(p, c)^z` under the tree metric of `geometry`.
pub fn tree_metric_cost(
    geometry: &TreeGeometry,
    data: &Dataset,
    centers: &[Vec<f64>],
    power: Power,
) -> Result<f64> {
    let mut total = 0.0;
    for p in data.iter() {
        let mut best = f64::INFINITY;
        for c in centers {
            best = best.min(geometry.tree_distance(p, c)?);
        }
        total += power.of_dist(best);
    }
    Ok(total)
}

/// Sorts centers lexicographically and removes duplicates.
pub fn canonical_centers(mut centers: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    centers.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    centers.dedup();
    centers
}

/// Splits the tree cost among centers: each center-free cell is charged to
/// the center nearest to its midpoint.
pub fn attribute_costs(centers: &[Vec<f64>], uncovered: &[(Vec<f64>, f64)]) -> Vec<f64> {
    let mut out = vec![0.0; centers.len()];
    if centers.is_empty() {
        return out;
    }
    for (mid, v) in uncovered {
        out[nearest(mid, centers).0] += v;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TreeParams {
    pub rule: ThresholdRule,
    pub depth_override: Option<usize>,
}

impl TreeParams {
    pub fn theory() -> Self {
        Self {
            rule: ThresholdRule::Theory,
            depth_override: None,
        }
    }

    /// Tree depth `alpha_depth·d` and threshold `10βd/ε`.
    pub fn experimental(dim: usize, alpha_depth: f64, beta: f64) -> Self {
        let depth = ((alpha_depth * dim as f64).round() as usize).max(1);
        Self {
            rule: ThresholdRule::Experimental { beta },
            depth_override: Some(depth),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TreeSolution {
    /// Normalized-space centers, sorted and distinct.
    pub centers: Vec<Vec<f64>>,
    pub tree_cost: f64,
    /// Euclidean cost on the data the tree was built over.
    pub cost: f64,
    /// Tree cost attributed to each center.
    pub center_tree_costs: Vec<f64>,
    pub num_cells: usize,
    pub num_weighted: usize,
    pub ledger: PrivacyBudget,
}

/// Materialized tree, weights and DP table of one run.
#[derive(Debug, Clone)]
pub struct TreeRun {
    pub tree: Quadtree,
    pub weights: NoisyWeights,
    pub table: DpTable,
    pub solution: TreeSolution,
}

/// make_private followed by the DP and extraction, on a given geometry.
#[allow(clippy::too_many_arguments)]
pub fn solve_on_tree(
    data: &Dataset,
    geometry: TreeGeometry,
    k: usize,
    power: Power,
    privacy: &Privacy,
    rule: ThresholdRule,
    noise: &RngStream,
    budget: &mut PrivacyBudget,
) -> Result<TreeRun> {
    if k == 0 {
        return Err(Error::param("k must be at least 1"));
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut tree = Quadtree::with_root(data, geometry)?;
    let mut local = PrivacyBudget::new(budget.remaining());
    let weights = make_private(&mut tree, data, privacy, rule, noise, &mut local)?;
    budget.absorb("tree", &local)?;
    let table = dp_solve(&tree, &weights, k, power)?;
    let ex = extract(&tree, &table);
    let tree_cost = table.values(tree.root())[k];
    let centers = canonical_centers(
        ex.leaves
            .iter()
            .map(|&l| tree.cell(l).geom.center())
            .collect(),
    );
    let uncovered: Vec<(Vec<f64>, f64)> = ex
        .uncovered
        .iter()
        .map(|&(id, v)| (tree.cell(id).geom.center(), v))
        .collect();
    let center_tree_costs = attribute_costs(&centers, &uncovered);
    let (cost, _) = clustering_cost(data, &centers, power)?;
    let solution = TreeSolution {
        centers,
        tree_cost,
        cost,
        center_tree_costs,
        num_cells: tree.num_cells(),
        num_weighted: weights.num_weighted(),
        ledger: local,
    };
    Ok(TreeRun {
        tree,
        weights,
        table,
        solution,
    })
}

/// Private k-median (z = 1) or k-means (z = 2) by the tree DP. The whole ε
/// goes to the tree weights.
pub fn dp_tree_clustering(
    data: &Dataset,
    k: usize,
    power: Power,
    privacy: &Privacy,
    params: &TreeParams,
    seed: u64,
) -> Result<TreeRun> {
    let stream = RngStream::new(seed, "dp_kmedian");
    let config = match params.depth_override {
        Some(depth) => TreeConfig::with_depth(data.len(), depth),
        None => TreeConfig::theory(data.len()),
    };
    let geometry = TreeGeometry::new(data.dim(), data.lambda(), config, stream.child("shifts"))?;
    let mut budget = PrivacyBudget::for_privacy(privacy);
    solve_on_tree(
        data,
        geometry,
        k,
        power,
        privacy,
        params.rule,
        &stream.child("laplace"),
        &mut budget,
    )
}

pub fn dp_kmedian(
    data: &Dataset,
    k: usize,
    privacy: &Privacy,
    params: &TreeParams,
    seed: u64,
) -> Result<TreeSolution> {
    Ok(dp_tree_clustering(data, k, Power::Median, privacy, params, seed)?.solution)
}

/// Target dimension of the random projection.
pub fn jl_target_dim(k: usize) -> usize {
    (4.0 * ((k + 2) as f64).log2()).ceil() as usize
}

/// Gaussian projection `x ↦ Gx/√d'`; the identity when `d ≤ d'`.
#[derive(Debug, Clone, PartialEq)]
pub struct JlProjection {
    pub d_in: usize,
    pub d_out: usize,
    matrix: Option<Vec<f64>>,
}

impl JlProjection {
    pub fn new(d_in: usize, k: usize, stream: &RngStream) -> Self {
        let target = jl_target_dim(k);
        if d_in <= target {
            return Self {
                d_in,
                d_out: d_in,
                matrix: None,
            };
        }
        let mut rng = stream.rng();
        let scale = 1.0 / (target as f64).sqrt();
        let matrix = (0..target * d_in)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
            .collect();
        Self {
            d_in,
            d_out: target,
            matrix: Some(matrix),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.matrix.is_none()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match &self.matrix {
            None => x.to_vec(),
            Some(m) => m
                .chunks_exact(self.d_in)
                .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
                .collect(),
        }
    }
}

/// Projects the dataset and clamps every image into the open ball of radius
/// `Λ`; clamping is 1-Lipschitz so distances never grow.
pub fn jl_project(data: &Dataset, k: usize, stream: &RngStream) -> (Dataset, JlProjection) {
    let proj = JlProjection::new(data.dim(), k, stream);
    if proj.is_identity() {
        return (data.clone(), proj);
    }
    let radius = data.lambda() * (1.0 - NORM_SLACK);
    let mut coords = Vec::with_capacity(data.len() * proj.d_out);
    for p in data.iter() {
        let mut y = proj.apply(p);
        clamp_to_ball(&mut y, radius);
        coords.extend_from_slice(&y);
    }
    let ds = Dataset::from_parts(
        coords,
        proj.d_out,
        data.lambda(),
        Normalization::identity(proj.d_out),
    );
    (ds, proj)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProjectBackParams {
    /// Sample size; `None` uses `⌈25·log₂²(|P|+2)⌉`.
    pub t: Option<usize>,
    pub d_close: f64,
    /// Ring threshold fraction; `None` uses `1/(8·#rings)`.
    pub r_small: Option<f64>,
    /// Approximation factor of the anchor cost.
    pub alpha_apx: f64,
    /// Dataset size, for the ring count `⌈log₂(n·α)⌉`.
    pub n_total: usize,
}

impl ProjectBackParams {
    pub fn new(alpha_apx: f64, n_total: usize) -> Self {
        Self {
            t: None,
            d_close: 1.0,
            r_small: None,
            alpha_apx,
            n_total,
        }
    }

    pub fn sample_size(&self, cluster: usize) -> usize {
        self.t.unwrap_or_else(|| {
            let l = ((cluster + 2) as f64).log2();
            (25.0 * l * l).ceil() as usize
        })
    }

    pub fn num_rings(&self) -> usize {
        ((self.n_total as f64 * self.alpha_apx).log2().ceil() as usize).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ring {
    pub index: usize,
    pub count: usize,
    pub kept: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectBack {
    pub point: Vec<f64>,
    pub delta: f64,
    /// Sampled points merged into the anchor.
    pub merged: usize,
    pub rings: Vec<Ring>,
}

/// Recovers a full-dimensional median of `cluster` from an approximate one.
/// Half the budget selects the rings (disjoint, so charged once), half goes
/// to the 1-median solver.
#[allow(clippy::too_many_arguments)]
pub fn project_back<R: Rng + ?Sized>(
    cluster: &[&[f64]],
    anchor: &[f64],
    apx_cost: f64,
    params: &ProjectBackParams,
    privacy: &Privacy,
    median: &MedianParams,
    radius: f64,
    rng: &mut R,
) -> Result<ProjectBack> {
    if cluster.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(apx_cost >= 0.0) {
        return Err(Error::param("apx_cost must be nonnegative"));
    }
    let half = privacy.scaled(0.5);
    let t = params.sample_size(cluster.len()).min(cluster.len());
    let sample: Vec<&[f64]> = if t == cluster.len() {
        cluster.to_vec()
    } else {
        sample_indices(rng, cluster.len(), t)
            .into_iter()
            .map(|i| cluster[i])
            .collect()
    };
    let delta = params.d_close / params.alpha_apx * apx_cost / cluster.len() as f64;
    if delta == 0.0 {
        let m = dp_one_median(&sample, None, &half, median, radius, rng)?;
        return Ok(ProjectBack {
            point: m.point,
            delta,
            merged: 0,
            rings: Vec::new(),
        });
    }
    let num_rings = params.num_rings();
    let r_small = params.r_small.unwrap_or(1.0 / (8.0 * num_rings as f64));
    let mut merged = 0;
    let mut members: Vec<Vec<&[f64]>> = vec![Vec::new(); num_rings];
    for p in &sample {
        let r = dist(p, anchor);
        if r < delta {
            merged += 1;
            continue;
        }
        // Ring i (1-based) covers (2^{i-1}Δ, 2^iΔ]; [Δ, 2Δ] is ring 1.
        let i = ((r / delta).log2().ceil() as usize).clamp(1, num_rings);
        members[i - 1].push(p);
    }
    let threshold = r_small * sample.len() as f64;
    let scale = half.scale_for(1.0);
    let mut rings = Vec::with_capacity(num_rings);
    let mut omega: Vec<&[f64]> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    if merged > 0 {
        omega.push(anchor);
        weights.push(merged as f64);
    }
    let mut any_kept = false;
    for (i, ring) in members.iter().enumerate() {
        let noise = laplace_sample(scale, half.is_private() && scale > 0.0, rng)?;
        let kept = !ring.is_empty() && (ring.len() as f64) >= threshold + noise;
        if kept {
            any_kept = true;
            omega.extend(ring.iter().copied());
            weights.extend(std::iter::repeat_n(1.0, ring.len()));
        }
        rings.push(Ring {
            index: i + 1,
            count: ring.len(),
            kept,
        });
    }
    if !any_kept {
        return Ok(ProjectBack {
            point: anchor.to_vec(),
            delta,
            merged,
            rings,
        });
    }
    let m = dp_one_median(&omega, Some(&weights), &half, median, radius, rng)?;
    Ok(ProjectBack {
        point: m.point,
        delta,
        merged,
        rings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HighDimConfig {
    pub tree: TreeParams,
    pub median: MedianParams,
    pub t: Option<usize>,
    pub d_close: f64,
    pub r_small: Option<f64>,
}

impl Default for HighDimConfig {
    fn default() -> Self {
        Self {
            tree: TreeParams::theory(),
            median: MedianParams::new(0.01, 1.0),
            t: None,
            d_close: 1.0,
            r_small: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HighDimSolution {
    pub centers: Vec<Vec<f64>>,
    pub cost: f64,
    pub projected_dim: usize,
    pub low: TreeSolution,
    pub project_back: Vec<ProjectBack>,
    pub ledger: PrivacyBudget,
}

/// Random projection, tree DP in the reduced space, then project-back of
/// every induced cluster. ε/2 for the tree and ε/2 for each (disjoint)
/// cluster.
pub fn kmedian_high_dim(
    data: &Dataset,
    k: usize,
    privacy: &Privacy,
    config: &HighDimConfig,
    seed: u64,
) -> Result<HighDimSolution> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let stream = RngStream::new(seed, "kmedian_high_dim");
    let (low_data, proj) = jl_project(data, k, &stream.child("jl"));
    let half = privacy.scaled(0.5);
    let mut ledger = PrivacyBudget::for_privacy(privacy);
    let config_tree = match config.tree.depth_override {
        Some(depth) => TreeConfig::with_depth(data.len(), depth),
        None => TreeConfig::theory(data.len()),
    };
    let geometry = TreeGeometry::new(
        low_data.dim(),
        data.lambda(),
        config_tree,
        stream.child("shifts"),
    )?;
    let run = solve_on_tree(
        &low_data,
        geometry,
        k,
        Power::Median,
        &half,
        config.tree.rule,
        &stream.child("laplace"),
        &mut ledger,
    )?;
    let low = run.solution;

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); low.centers.len()];
    for (i, y) in low_data.iter().enumerate() {
        members[nearest(y, &low.centers).0].push(i);
    }
    let d_out = proj.d_out as f64;
    let alpha_apx = d_out.powf(1.5) * (data.len().max(2) as f64).log2();
    let mut pb_params = ProjectBackParams::new(alpha_apx, data.len());
    pb_params.t = config.t;
    pb_params.d_close = config.d_close;
    pb_params.r_small = config.r_small;

    let mut centers = Vec::new();
    let mut reports = Vec::new();
    let mut parts = Vec::new();
    for (j, idx) in members.iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        let anchor_idx = *idx
            .iter()
            .min_by(|&&a, &&b| {
                let da = dist(low_data.point(a), &low.centers[j]);
                let db = dist(low_data.point(b), &low.centers[j]);
                da.total_cmp(&db).then(a.cmp(&b))
            })
            .expect("nonempty");
        let cluster: Vec<&[f64]> = idx.iter().map(|&i| data.point(i)).collect();
        let mut rng = stream.indexed("project_back", j as u64).rng();
        let pb = project_back(
            &cluster,
            data.point(anchor_idx),
            low.center_tree_costs[j],
            &pb_params,
            &half,
            &config.median,
            data.lambda(),
            &mut rng,
        )?;
        centers.push(pb.point.clone());
        reports.push(pb);
        parts.push(half.epsilon);
    }
    if half.is_private() {
        ledger.charge_parallel("project_back", &parts)?;
    }
    let centers = canonical_centers(centers);
    let (cost, _) = clustering_cost(data, &centers, Power::Median)?;
    Ok(HighDimSolution {
        centers,
        cost,
        projected_dim: proj.d_out,
        low,
        project_back: reports,
        ledger,
    })
}
