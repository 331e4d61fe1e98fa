//! Laplace mechanism, privatized quadtree weights and private 1-center solvers.

use std::collections::HashMap;
use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{clamp_to_ball, dist, norm, Dataset};
use crate::error::{Error, Result};
use crate::quadtree::{CellId, Quadtree, TreeGeometry};
use crate::rng::RngStream;

/// Slack used when comparing accumulated ε against a budget.
const LEDGER_TOL: f64 = 1e-9;

/// Privacy parameter of one mechanism invocation.
///
/// `noise == false` is a debug mode in which every Laplace draw is zero while
/// thresholds still use `epsilon`. An infinite `epsilon` always disables noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Privacy {
    pub epsilon: f64,
    pub noise: bool,
}

impl Privacy {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::param("epsilon must be positive"));
        }
        Ok(Self {
            epsilon,
            noise: epsilon.is_finite(),
        })
    }

    /// No privacy: infinite ε and no noise.
    pub fn disabled() -> Self {
        Self {
            epsilon: f64::INFINITY,
            noise: false,
        }
    }

    /// Finite ε for thresholds but zero noise.
    pub fn noiseless(epsilon: f64) -> Self {
        Self {
            epsilon,
            noise: false,
        }
    }

    pub fn is_private(&self) -> bool {
        self.noise && self.epsilon.is_finite()
    }

    /// The same mode with `epsilon * fraction`.
    pub fn scaled(&self, fraction: f64) -> Self {
        Self {
            epsilon: self.epsilon * fraction,
            noise: self.noise,
        }
    }

    /// Laplace scale for a query of the given L1 sensitivity.
    pub fn scale_for(&self, sensitivity: f64) -> f64 {
        if self.epsilon.is_infinite() {
            0.0
        } else {
            sensitivity / self.epsilon
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub label: String,
    pub epsilon: f64,
}

/// Sequential-composition ledger. Parallel composition over disjoint data is
/// charged through [`PrivacyBudget::charge_parallel`] as the max of its parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub total: f64,
    pub entries: Vec<LedgerEntry>,
}

impl PrivacyBudget {
    pub fn new(total: f64) -> Self {
        Self {
            total,
            entries: Vec::new(),
        }
    }

    pub fn for_privacy(p: &Privacy) -> Self {
        Self::new(p.epsilon)
    }

    pub fn spent(&self) -> f64 {
        self.entries.iter().map(|e| e.epsilon).sum()
    }

    pub fn remaining(&self) -> f64 {
        self.total - self.spent()
    }

    pub fn charge(&mut self, label: impl Into<String>, epsilon: f64) -> Result<()> {
        let label = label.into();
        if !(epsilon >= 0.0) {
            return Err(Error::param(format!("negative charge for {label}")));
        }
        if self.total.is_finite()
            && self.spent() + epsilon > self.total * (1.0 + LEDGER_TOL) + LEDGER_TOL
        {
            return Err(Error::BudgetExhausted {
                label,
                requested: epsilon,
                remaining: self.remaining(),
            });
        }
        self.entries.push(LedgerEntry { label, epsilon });
        Ok(())
    }

    /// Disjoint-data mechanisms cost the max of their ε.
    pub fn charge_parallel(&mut self, label: impl Into<String>, parts: &[f64]) -> Result<()> {
        let eps = parts.iter().copied().fold(0.0, f64::max);
        self.charge(label, eps)
    }

    /// Charges `p.epsilon` only when the mechanism is actually private.
    pub fn charge_for(&mut self, label: impl Into<String>, p: &Privacy) -> Result<()> {
        if p.is_private() {
            self.charge(label, p.epsilon)
        } else {
            Ok(())
        }
    }

    pub fn absorb(&mut self, prefix: &str, other: &PrivacyBudget) -> Result<()> {
        for e in &other.entries {
            self.charge(format!("{prefix}/{}", e.label), e.epsilon)?;
        }
        Ok(())
    }

    /// Label → total ε, for reports.
    pub fn by_label(&self) -> std::collections::BTreeMap<String, f64> {
        let mut m = std::collections::BTreeMap::new();
        for e in &self.entries {
            *m.entry(e.label.clone()).or_insert(0.0) += e.epsilon;
        }
        m
    }
}

/// Inverse-CDF Laplace draw from `u` uniform in (0, 1).
pub fn laplace_from_uniform(scale: f64, u: f64) -> f64 {
    let v = u - 0.5;
    -scale * v.signum() * (1.0 - 2.0 * v.abs()).ln()
}

/// One `Lap(scale)` draw; zero when noise is disabled.
pub fn laplace_sample<R: Rng + ?Sized>(scale: f64, noise: bool, rng: &mut R) -> Result<f64> {
    if !noise {
        return Ok(0.0);
    }
    if !(scale > 0.0) {
        return Err(Error::param("laplace scale must be positive"));
    }
    let bits = rng.random::<u64>() >> 11;
    let u = (bits as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
    Ok(laplace_from_uniform(scale, u))
}

/// Split threshold of the weight walk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ThresholdRule {
    /// `τ = 2H/ε` with `H` the number of weighted depths.
    Theory,
    /// `τ = 10βd/ε`.
    Experimental { beta: f64 },
}

/// Noise scale and threshold for one tree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightParams {
    pub noise_scale: f64,
    pub threshold: f64,
    /// Depths that can carry a weight; each gets `ε / levels`.
    pub levels: usize,
}

impl WeightParams {
    pub fn new(geometry: &TreeGeometry, privacy: &Privacy, rule: ThresholdRule) -> Self {
        let levels = geometry.max_depth();
        let noise_scale = privacy.scale_for(levels as f64);
        let threshold = match rule {
            ThresholdRule::Theory => privacy.scale_for(2.0 * levels as f64),
            ThresholdRule::Experimental { beta } => {
                privacy.scale_for(10.0 * beta * geometry.dim() as f64)
            }
        };
        Self {
            noise_scale,
            threshold,
            levels,
        }
    }

    /// Noisy count of a cell from its exact count and canonical key.
    pub fn weight(&self, count: usize, key: u64, privacy: &Privacy, noise: &RngStream) -> f64 {
        if privacy.noise && self.noise_scale > 0.0 {
            count as f64 + laplace_from_uniform(self.noise_scale, noise.uniform_at(key))
        } else {
            count as f64
        }
    }
}

/// Noisy per-cell counts, indexed by materialized cell id.
#[derive(Debug, Clone)]
pub struct NoisyWeights {
    weights: Vec<Option<f64>>,
    pub params: WeightParams,
}

impl NoisyWeights {
    pub fn get(&self, id: CellId) -> Option<f64> {
        self.weights.get(id).copied().flatten()
    }

    pub fn num_weighted(&self) -> usize {
        self.weights.iter().flatten().count()
    }

    pub fn threshold(&self) -> f64 {
        self.params.threshold
    }

    pub fn iter(&self) -> impl Iterator<Item = (CellId, f64)> + '_ {
        self.weights
            .iter()
            .enumerate()
            .filter_map(|(i, w)| w.map(|w| (i, w)))
    }
}

/// Breadth-first weight walk: every popped non-terminal cell gets
/// `count + Lap(H/ε)`; its two children (empty ones included) are enqueued
/// iff the noisy weight is strictly above the threshold. Noise is keyed by
/// cell key so any evaluation order reproduces it.
pub fn make_private(
    tree: &mut Quadtree,
    data: &Dataset,
    privacy: &Privacy,
    rule: ThresholdRule,
    noise: &RngStream,
    budget: &mut PrivacyBudget,
) -> Result<NoisyWeights> {
    let params = WeightParams::new(tree.geometry(), privacy, rule);
    budget.charge_for("make_private", privacy)?;
    let mut weights: Vec<Option<f64>> = Vec::new();
    let mut queue = VecDeque::from([tree.root()]);
    while let Some(id) = queue.pop_front() {
        if tree.is_terminal(id) {
            continue;
        }
        let cell = tree.cell(id);
        let w = params.weight(cell.count(), cell.geom.key, privacy, noise);
        if weights.len() <= id {
            weights.resize(id + 1, None);
        }
        weights[id] = Some(w);
        if w > params.threshold {
            for child in tree.expand(id, data, true).into_iter().flatten() {
                queue.push_back(child);
            }
        }
    }
    weights.resize(tree.num_cells(), None);
    Ok(NoisyWeights { weights, params })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub neighbors_checked: usize,
    pub max_abs_delta: i64,
    /// Neighbors whose count changes were not exactly one root-leaf path of ±1.
    pub violations: usize,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.violations == 0 && self.max_abs_delta <= 1
    }
}

fn counts_by_key(data: &Dataset, geometry: &TreeGeometry) -> Result<HashMap<u64, i64>> {
    let tree = Quadtree::build_with(data, geometry.clone())?;
    Ok(tree
        .cells()
        .iter()
        .map(|c| (c.geom.key, c.count() as i64))
        .collect())
}

/// Checks that removing any one point, or adding a duplicate of it, changes
/// exact cell counts by exactly one along one root-leaf path. The partition is
/// data-independent, so both neighbors are measured against the same geometry.
pub fn sensitivity_audit(data: &Dataset, geometry: &TreeGeometry) -> Result<AuditReport> {
    let base = counts_by_key(data, geometry)?;
    let mut report = AuditReport {
        neighbors_checked: 0,
        max_abs_delta: 0,
        violations: 0,
    };
    let n = data.len();
    for i in 0..n {
        let path: Vec<u64> = geometry
            .path(data.point(i))?
            .iter()
            .map(|c| c.key)
            .collect();
        let mut neighbors: Vec<(Dataset, i64)> = Vec::new();
        if n > 1 {
            let keep: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            neighbors.push((data.select(&keep), -1));
        }
        let mut dup: Vec<usize> = (0..n).collect();
        dup.push(i);
        neighbors.push((data.select(&dup), 1));
        for (neighbor, sign) in neighbors {
            report.neighbors_checked += 1;
            let counts = counts_by_key(&neighbor, geometry)?;
            let mut keys: Vec<u64> = base.keys().chain(counts.keys()).copied().collect();
            keys.sort_unstable();
            keys.dedup();
            let mut changed = Vec::new();
            for k in keys {
                let delta =
                    counts.get(&k).copied().unwrap_or(0) - base.get(&k).copied().unwrap_or(0);
                report.max_abs_delta = report.max_abs_delta.max(delta.abs());
                if delta != 0 {
                    changed.push((k, delta));
                }
            }
            let mut changed_keys: Vec<u64> = changed.iter().map(|c| c.0).collect();
            changed_keys.sort_unstable();
            let mut expected = path.clone();
            expected.sort_unstable();
            if changed_keys != expected || changed.iter().any(|c| c.1 != sign) {
                report.violations += 1;
            }
        }
    }
    Ok(report)
}

/// `f_λ(r) = r + 2λ log((1 + e^{-r/λ}) / 2)`, a smooth surrogate of `r`.
pub fn smooth_norm(r: f64, lambda: f64) -> f64 {
    r + 2.0 * lambda * ((-r / lambda).exp().ln_1p() - std::f64::consts::LN_2)
}

/// `f_λ'(r) = tanh(r / 2λ)`.
pub fn smooth_norm_deriv(r: f64, lambda: f64) -> f64 {
    (r / (2.0 * lambda)).tanh()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CenterEstimate {
    pub point: Vec<f64>,
    /// False when the optimizer hit its iteration cap, or (for the mean) when
    /// the noisy count was too small and the origin was returned.
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MedianParams {
    /// Smoothing `λ` of the surrogate objective.
    pub lambda_smooth: f64,
    /// Gradient-norm bound `γ` scaling the perturbation.
    pub gamma_grad: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
}

impl MedianParams {
    pub fn new(lambda_smooth: f64, gamma_grad: f64) -> Self {
        Self {
            lambda_smooth,
            gamma_grad,
            max_iters: 500,
            grad_tol: 1e-8,
        }
    }
}

/// Private 1-median by objective perturbation: minimizes
/// `(1/W) Σ w_i f_λ(x - p_i) + b·x` where `b` has a uniform direction and a
/// `Gamma(d, 2γ/(εW))` norm, by gradient descent with backtracking, and clamps
/// the result to `B(0, radius)`.
pub fn dp_one_median<R: Rng + ?Sized>(
    points: &[&[f64]],
    weights: Option<&[f64]>,
    privacy: &Privacy,
    params: &MedianParams,
    radius: f64,
    rng: &mut R,
) -> Result<CenterEstimate> {
    if points.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(params.lambda_smooth > 0.0) {
        return Err(Error::param("lambda_smooth must be positive"));
    }
    let d = points[0].len();
    let w = |i: usize| weights.map_or(1.0, |w| w[i].max(0.0));
    let total: f64 = (0..points.len()).map(w).sum();
    if !(total > 0.0) {
        return Err(Error::EmptyDataset);
    }
    let mut b = vec![0.0; d];
    if privacy.is_private() {
        let scale = 2.0 * params.gamma_grad / (privacy.epsilon * total);
        let magnitude = if scale > 0.0 {
            Gamma::new(d as f64, scale)
                .map_err(|e| Error::param(e.to_string()))?
                .sample(rng)
        } else {
            0.0
        };
        let dir: Vec<f64> = (0..d)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let len = norm(&dir).max(f64::MIN_POSITIVE);
        b = dir.iter().map(|x| x / len * magnitude).collect();
    }
    let lambda = params.lambda_smooth;
    let objective = |x: &[f64]| -> f64 {
        let mut s = 0.0;
        for (i, p) in points.iter().enumerate() {
            s += w(i) * smooth_norm(dist(x, p), lambda);
        }
        s / total + x.iter().zip(&b).map(|(a, c)| a * c).sum::<f64>()
    };
    let gradient = |x: &[f64]| -> Vec<f64> {
        let mut g = b.clone();
        for (i, p) in points.iter().enumerate() {
            let r = dist(x, p);
            if r > 0.0 {
                let f = w(i) * smooth_norm_deriv(r, lambda) / (r * total);
                for j in 0..d {
                    g[j] += f * (x[j] - p[j]);
                }
            }
        }
        g
    };

    let mut x = vec![0.0; d];
    for (i, p) in points.iter().enumerate() {
        for j in 0..d {
            x[j] += w(i) * p[j] / total;
        }
    }
    let mut fx = objective(&x);
    let mut step = lambda;
    let mut converged = false;
    for _ in 0..params.max_iters {
        let g = gradient(&x);
        let g2: f64 = g.iter().map(|v| v * v).sum();
        if g2.sqrt() <= params.grad_tol {
            converged = true;
            break;
        }
        step *= 2.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<f64> = x.iter().zip(&g).map(|(a, gi)| a - step * gi).collect();
            let fc = objective(&cand);
            if fc <= fx - 0.5 * step * g2 {
                x = cand;
                fx = fc;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // No descent at machine precision: x is stationary for our purposes.
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("dp_one_median stopped at the iteration cap");
    }
    clamp_to_ball(&mut x, radius);
    Ok(CenterEstimate {
        point: x,
        converged,
    })
}

/// Private mean: `(Σp + Lap(4dΛ/ε)^d) / (n + Lap(2/ε))`, half the budget on the
/// sum and half on the count, clamped to `B(0, radius)`.
pub fn dp_one_mean<R: Rng + ?Sized>(
    points: &[&[f64]],
    privacy: &Privacy,
    radius: f64,
    rng: &mut R,
) -> Result<CenterEstimate> {
    let d = match points.first() {
        Some(p) => p.len(),
        None if privacy.is_private() => 0,
        None => return Err(Error::EmptyDataset),
    };
    let half = privacy.scaled(0.5);
    let mut sum = vec![0.0; d];
    for p in points {
        for j in 0..d {
            sum[j] += p[j];
        }
    }
    let sum_scale = half.scale_for(2.0 * d as f64 * radius);
    for s in sum.iter_mut() {
        *s += laplace_sample(sum_scale, half.noise && sum_scale > 0.0, rng)?;
    }
    let count_scale = half.scale_for(1.0);
    let count =
        points.len() as f64 + laplace_sample(count_scale, half.noise && count_scale > 0.0, rng)?;
    let noisy = privacy.is_private();
    if count <= 1.0 && (noisy || points.is_empty()) {
        log::warn!("dp_one_mean: noisy count {count} too small, returning origin");
        return Ok(CenterEstimate {
            point: vec![0.0; d],
            converged: false,
        });
    }
    let mut point: Vec<f64> = sum.iter().map(|s| s / count).collect();
    clamp_to_ball(&mut point, radius);
    Ok(CenterEstimate {
        point,
        converged: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::median::{weiszfeld, WEISZFELD_ITERS, WEISZFELD_TOL};
    use crate::quadtree::TreeConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn disabled_noise_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(laplace_sample(1.0, false, &mut rng).unwrap(), 0.0);
        assert!(laplace_sample(0.0, true, &mut rng).is_err());
        assert!(laplace_sample(-1.0, true, &mut rng).is_err());
    }

    #[test]
    fn laplace_moments() {
        // 5σ on the mean: σ = sqrt(2/1e6) ≈ 0.0014.
        let mut rng = RngStream::new(42, "laplace").rng();
        let n = 1_000_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| laplace_sample(1.0, true, &mut rng).unwrap())
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 2.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn ledger_sequential_and_parallel() {
        let mut b = PrivacyBudget::new(1.0);
        b.charge("a", 0.25).unwrap();
        b.charge_parallel("b", &[0.5, 0.25, 0.1]).unwrap();
        assert!((b.spent() - 0.75).abs() < 1e-15);
        assert!(matches!(
            b.charge("c", 0.5),
            Err(Error::BudgetExhausted { .. })
        ));
        b.charge("c", 0.25).unwrap();
        assert_eq!(b.spent(), 1.0);
    }

    fn cluster_data(n: usize) -> Dataset {
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![0.5 + 1e-7 * i as f64, 0.5]).collect();
        Dataset::from_normalized(&rows, 1.0).unwrap()
    }

    #[test]
    fn noiseless_chain_carries_full_count() {
        let ds = cluster_data(40);
        let g = TreeGeometry::new(
            2,
            1.0,
            TreeConfig::with_depth(40, 12),
            RngStream::new(1, "s"),
        )
        .unwrap();
        let mut t = Quadtree::with_root(&ds, g).unwrap();
        let mut budget = PrivacyBudget::new(f64::INFINITY);
        let p = Privacy::disabled();
        let w = make_private(
            &mut t,
            &ds,
            &p,
            ThresholdRule::Theory,
            &RngStream::new(1, "laplace"),
            &mut budget,
        )
        .unwrap();
        assert_eq!(w.get(t.root()), Some(40.0));
        let mut id = t.root();
        loop {
            let c = t.cell(id);
            if !c.is_expanded() {
                break;
            }
            let next = c
                .children
                .iter()
                .flatten()
                .copied()
                .find(|&k| t.cell(k).count() > 0)
                .unwrap();
            id = next;
            if let Some(wt) = w.get(id) {
                assert_eq!(wt, 40.0);
            }
        }
    }

    #[test]
    fn terminal_cells_never_weighted() {
        let ds = cluster_data(30);
        let mut t = Quadtree::with_root(
            &ds,
            TreeGeometry::for_dataset(&ds, None, RngStream::new(4, "s")).unwrap(),
        )
        .unwrap();
        let mut budget = PrivacyBudget::new(f64::INFINITY);
        let w = make_private(
            &mut t,
            &ds,
            &Privacy::disabled(),
            ThresholdRule::Theory,
            &RngStream::new(1, "l"),
            &mut budget,
        )
        .unwrap();
        let stop = 1.0 / 30.0;
        for (id, c) in t.cells().iter().enumerate() {
            if c.diam <= stop {
                assert_eq!(w.get(id), None);
            }
        }
        assert!(w.num_weighted() > 0);
    }

    #[test]
    fn weight_equal_to_threshold_does_not_expand() {
        // Noise off, τ = 10βd/ε = 10 * 0.5 * 2 / 1 = 10 and exactly 10 points.
        let ds = cluster_data(10);
        let g = TreeGeometry::new(
            2,
            1.0,
            TreeConfig::with_depth(10, 8),
            RngStream::new(2, "s"),
        )
        .unwrap();
        let mut t = Quadtree::with_root(&ds, g).unwrap();
        let p = Privacy::noiseless(1.0);
        let mut budget = PrivacyBudget::new(1.0);
        let w = make_private(
            &mut t,
            &ds,
            &p,
            ThresholdRule::Experimental { beta: 0.5 },
            &RngStream::new(1, "l"),
            &mut budget,
        )
        .unwrap();
        assert_eq!(w.threshold(), 10.0);
        assert_eq!(w.get(t.root()), Some(10.0));
        assert!(!t.cell(t.root()).is_expanded());
        assert_eq!(w.num_weighted(), 1);
    }

    #[test]
    fn make_private_charges_configured_epsilon_once() {
        for (n, seed) in [(20, 1), (200, 2), (1000, 3)] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| vec![rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6)])
                .collect();
            let ds = Dataset::from_normalized(&rows, 1.0).unwrap();
            let mut t = Quadtree::with_root(
                &ds,
                TreeGeometry::for_dataset(&ds, None, RngStream::new(seed, "s")).unwrap(),
            )
            .unwrap();
            let p = Privacy::new(0.7).unwrap();
            let mut budget = PrivacyBudget::new(0.7);
            make_private(
                &mut t,
                &ds,
                &p,
                ThresholdRule::Theory,
                &RngStream::new(seed, "l"),
                &mut budget,
            )
            .unwrap();
            assert_eq!(budget.spent(), 0.7);
            assert!(make_private(
                &mut t,
                &ds,
                &p,
                ThresholdRule::Theory,
                &RngStream::new(seed, "l"),
                &mut budget
            )
            .is_err());
        }
    }

    #[test]
    fn noiseless_expansion_monotone_in_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<Vec<f64>> = (0..300)
            .map(|_| vec![rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6)])
            .collect();
        let g = TreeConfig::with_depth(300, 16);
        let expanded = |k: usize| -> std::collections::HashSet<u64> {
            let ds = Dataset::from_normalized(&rows[..k], 1.0).unwrap();
            let geom = TreeGeometry::new(2, 1.0, g, RngStream::new(3, "s")).unwrap();
            let mut t = Quadtree::with_root(&ds, geom).unwrap();
            let mut budget = PrivacyBudget::new(1.0);
            make_private(
                &mut t,
                &ds,
                &Privacy::noiseless(1.0),
                ThresholdRule::Experimental { beta: 0.2 },
                &RngStream::new(1, "l"),
                &mut budget,
            )
            .unwrap();
            t.cells()
                .iter()
                .filter(|c| c.is_expanded())
                .map(|c| c.geom.key)
                .collect()
        };
        let small = expanded(100);
        let large = expanded(300);
        assert!(small.is_subset(&large));
    }

    #[test]
    fn audit_removal_and_duplicate() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|_| vec![rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6)])
            .collect();
        let ds = Dataset::from_normalized(&rows, 1.0).unwrap();
        let g = TreeGeometry::for_dataset(&ds, None, RngStream::new(5, "s")).unwrap();
        let report = sensitivity_audit(&ds, &g).unwrap();
        assert_eq!(report.neighbors_checked, 100);
        assert_eq!(report.max_abs_delta, 1);
        assert!(report.passed());
    }

    #[test]
    fn smooth_norm_matches_limits() {
        assert!((smooth_norm(0.0, 0.3)).abs() < 1e-15);
        assert!(
            (smooth_norm(50.0, 0.01) - 50.0 + 2.0 * 0.01 * std::f64::consts::LN_2).abs() < 1e-12
        );
        let (r, l, h) = (0.37, 0.2, 1e-6);
        let fd = (smooth_norm(r + h, l) - smooth_norm(r - h, l)) / (2.0 * h);
        assert!((fd - smooth_norm_deriv(r, l)).abs() < 1e-8);
    }

    #[test]
    fn median_of_symmetric_pair_is_midpoint() {
        let pts = [[0.0, 0.0], [1.0, 0.0]];
        let refs: Vec<&[f64]> = pts.iter().map(|p| &p[..]).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = dp_one_median(
            &refs,
            None,
            &Privacy::disabled(),
            &MedianParams::new(0.2, 0.0),
            10.0,
            &mut rng,
        )
        .unwrap();
        assert!(dist(&m.point, &[0.5, 0.0]) < 1e-9);
    }

    #[test]
    fn median_of_single_point_is_the_point() {
        let p = [0.3, -0.2, 0.1];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = dp_one_median(
            &[&p[..]],
            None,
            &Privacy::disabled(),
            &MedianParams::new(0.2, 0.0),
            1.0,
            &mut rng,
        )
        .unwrap();
        assert!(dist(&m.point, &p) < 1e-6);
    }

    #[test]
    fn median_matches_weiszfeld_on_a_line() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vec<f64>> = (0..101)
            .map(|_| {
                let t: f64 = rng.random_range(-0.8..0.8);
                vec![t, 0.5 * t]
            })
            .collect();
        let refs: Vec<&[f64]> = pts.iter().map(|p| &p[..]).collect();
        let oracle = weiszfeld(&refs, None, 5000, 1e-13);
        let m = dp_one_median(
            &refs,
            None,
            &Privacy::disabled(),
            &MedianParams::new(1e-4, 0.0),
            1.0,
            &mut rng,
        )
        .unwrap();
        assert!(
            dist(&m.point, &oracle) < 1e-3,
            "{:?} vs {:?}",
            m.point,
            oracle
        );
    }

    #[test]
    fn median_matches_weiszfeld_on_random_instances() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let n = rng.random_range(5..60);
            let pts: Vec<Vec<f64>> = (0..n)
                .map(|_| vec![rng.random_range(-0.7..0.7), rng.random_range(-0.7..0.7)])
                .collect();
            let refs: Vec<&[f64]> = pts.iter().map(|p| &p[..]).collect();
            let oracle = weiszfeld(&refs, None, WEISZFELD_ITERS * 10, WEISZFELD_TOL * 1e-3);
            let m = dp_one_median(
                &refs,
                None,
                &Privacy::disabled(),
                &MedianParams::new(1e-4, 0.0),
                1.0,
                &mut rng,
            )
            .unwrap();
            assert!(
                dist(&m.point, &oracle) < 1e-3,
                "seed {seed}: {:?} vs {:?}",
                m.point,
                oracle
            );
        }
    }

    #[test]
    fn private_median_stays_in_ball() {
        let pts = [[0.9, 0.0], [0.95, 0.1]];
        let refs: Vec<&[f64]> = pts.iter().map(|p| &p[..]).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = dp_one_median(
            &refs,
            None,
            &Privacy::new(0.01).unwrap(),
            &MedianParams::new(0.2, 10.0),
            1.0,
            &mut rng,
        )
        .unwrap();
        assert!(norm(&m.point) <= 1.0 + 1e-12);
    }

    #[test]
    fn mean_noiseless_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = [[1.0, 1.0], [3.0, 3.0]];
        let refs: Vec<&[f64]> = pts.iter().map(|p| &p[..]).collect();
        let m = dp_one_mean(&refs, &Privacy::disabled(), 10.0, &mut rng).unwrap();
        assert_eq!(m.point, vec![2.0, 2.0]);
        let one = [0.25, -0.5];
        assert_eq!(
            dp_one_mean(&[&one[..]], &Privacy::disabled(), 1.0, &mut rng)
                .unwrap()
                .point,
            one.to_vec()
        );
    }

    #[test]
    fn private_mean_concentrates() {
        let origin = [0.0, 0.0];
        let refs: Vec<&[f64]> = (0..10_000).map(|_| &origin[..]).collect();
        let mut rng = RngStream::new(3, "mean").rng();
        let ok = (0..100)
            .filter(|_| {
                norm(
                    &dp_one_mean(&refs, &Privacy::new(1.0).unwrap(), 1.0, &mut rng)
                        .unwrap()
                        .point,
                ) <= 0.05
            })
            .count();
        assert!(ok >= 99);
    }
}
