//! Private k-means: badly-cut filtering, the iterated tree round, and
//! reverse greedy down to exactly k centers.

use rand::Rng;
use serde::Serialize;

use crate::cost::{clustering_cost, nearest, Power};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::kmedian::{canonical_centers, solve_on_tree, TreeParams};
use crate::privacy::{dp_one_mean, laplace_sample, Privacy, PrivacyBudget};
use crate::quadtree::{TreeConfig, TreeGeometry};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum InitialSolution {
    /// The single center at the origin.
    Origin,
    /// A private 1-means estimate, paid from the first round's budget.
    DpMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KMeansConfig {
    /// Extra-center fraction α.
    pub alpha: f64,
    /// Failure probability π; `None` uses `1/(4 log₂ n)`.
    pub pi: Option<f64>,
    pub tree: TreeParams,
    pub init: InitialSolution,
    /// Rounds; `None` uses `⌈log₂ n⌉`.
    pub rounds: Option<usize>,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            pi: None,
            tree: TreeParams::theory(),
            init: InitialSolution::Origin,
            rounds: None,
        }
    }
}

fn log2_n(n: usize) -> f64 {
    (n.max(2) as f64).log2()
}

impl KMeansConfig {
    pub fn pi_for(&self, n: usize) -> f64 {
        self.pi.unwrap_or_else(|| 1.0 / (4.0 * log2_n(n)))
    }

    pub fn alpha_f(&self, n: usize) -> f64 {
        self.pi_for(n) * self.alpha / 6.0
    }

    /// Recorded only; the client-side threshold does not drive filtering.
    pub fn alpha_c(&self, n: usize, d: usize) -> f64 {
        let (a, p, d, l) = (self.alpha, self.pi_for(n), d as f64, log2_n(n));
        a.powi(3) * p.powi(3) / (144.0 * d.powi(3) * l * l)
    }

    pub fn num_rounds(&self, n: usize) -> usize {
        self.rounds
            .unwrap_or_else(|| log2_n(n).ceil() as usize)
            .max(1)
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::param("alpha must lie in (0, 1)"));
        }
        if let Some(pi) = self.pi {
            if !(pi > 0.0 && pi < 1.0) {
                return Err(Error::param("pi must lie in (0, 1)"));
            }
        }
        Ok(())
    }
}

/// Clients whose nearest reference center is not badly cut, plus the badly-cut
/// centers themselves.
#[derive(Debug, Clone)]
pub struct FilteredInstance {
    pub kept: Dataset,
    /// Original index of every point of `kept`.
    pub provenance: Vec<usize>,
    /// Original indices of the removed clients.
    pub removed: Vec<usize>,
    pub badly_cut: Vec<Vec<f64>>,
}

pub fn filter_instance(
    data: &Dataset,
    reference: &[Vec<f64>],
    geometry: &TreeGeometry,
    alpha_f: f64,
) -> Result<FilteredInstance> {
    if reference.is_empty() {
        return Err(Error::NoCenters);
    }
    let bad_idx = geometry.badly_cut_centers(reference, alpha_f)?;
    let mut bad = vec![false; reference.len()];
    for &i in &bad_idx {
        bad[i] = true;
    }
    let (mut provenance, mut removed) = (Vec::new(), Vec::new());
    for (i, p) in data.iter().enumerate() {
        if bad[nearest(p, reference).0] {
            removed.push(i);
        } else {
            provenance.push(i);
        }
    }
    Ok(FilteredInstance {
        kept: data.select(&provenance),
        provenance,
        removed,
        badly_cut: bad_idx.iter().map(|&i| reference[i].clone()).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundTrace {
    pub round: usize,
    pub reference_size: usize,
    pub badly_cut: usize,
    pub kept_points: usize,
    pub tree_cost: f64,
    pub centers: usize,
    /// Euclidean k-means cost of the round output on the full data.
    pub cost: f64,
    pub epsilon: f64,
}

/// One improvement round: filter against `reference`, run the squared-cost
/// tree DP on the kept clients and return its centers together with the
/// badly-cut ones.
#[allow(clippy::too_many_arguments)]
pub fn dp_kmeans_round(
    data: &Dataset,
    reference: &[Vec<f64>],
    k: usize,
    privacy: &Privacy,
    config: &KMeansConfig,
    stream: &RngStream,
    budget: &mut PrivacyBudget,
) -> Result<(Vec<Vec<f64>>, RoundTrace)> {
    let n = data.len();
    let tree_config = match config.tree.depth_override {
        Some(depth) => TreeConfig::with_depth(n, depth),
        None => TreeConfig::theory(n),
    };
    let geometry = TreeGeometry::new(
        data.dim(),
        data.lambda(),
        tree_config,
        stream.child("shifts"),
    )?;
    let filtered = filter_instance(data, reference, &geometry, config.alpha_f(n))?;
    let mut centers = filtered.badly_cut.clone();
    let mut tree_cost = 0.0;
    if filtered.kept.is_empty() {
        // Nothing to cluster, but the round's budget is still accounted.
        budget.charge_for("tree/make_private", privacy)?;
    } else {
        let run = solve_on_tree(
            &filtered.kept,
            geometry,
            k,
            Power::Means,
            privacy,
            config.tree.rule,
            &stream.child("laplace"),
            budget,
        )?;
        tree_cost = run.solution.tree_cost;
        centers.extend(run.solution.centers);
    }
    let centers = canonical_centers(centers);
    let (cost, _) = clustering_cost(data, &centers, Power::Means)?;
    let trace = RoundTrace {
        round: 0,
        reference_size: reference.len(),
        badly_cut: filtered.badly_cut.len(),
        kept_points: filtered.kept.len(),
        tree_cost,
        centers: centers.len(),
        cost,
        epsilon: if privacy.is_private() {
            privacy.epsilon
        } else {
            0.0
        },
    };
    Ok((centers, trace))
}

#[derive(Debug, Clone, Serialize)]
pub struct KMeansResult {
    pub centers: Vec<Vec<f64>>,
    pub cost: f64,
    pub rounds: Vec<RoundTrace>,
    pub ledger: PrivacyBudget,
}

/// Iterated rounds starting from a trivial solution, `ε/rounds` each.
/// Returns at most `k + |B_T|` centers.
pub fn dp_kmeans(
    data: &Dataset,
    k: usize,
    privacy: &Privacy,
    config: &KMeansConfig,
    seed: u64,
) -> Result<KMeansResult> {
    config.validate()?;
    if k == 0 {
        return Err(Error::param("k must be at least 1"));
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let stream = RngStream::new(seed, "dp_kmeans");
    let rounds = config.num_rounds(data.len());
    let per_round = privacy.scaled(1.0 / rounds as f64);
    let mut ledger = PrivacyBudget::for_privacy(privacy);
    let mut reference = vec![vec![0.0; data.dim()]];
    let mut first = per_round;
    if config.init == InitialSolution::DpMean {
        let init = per_round.scaled(0.5);
        first = init;
        let pts: Vec<&[f64]> = data.iter().collect();
        let mean = dp_one_mean(&pts, &init, data.lambda(), &mut stream.child("init").rng())?;
        ledger.charge_for("init/dp_one_mean", &init)?;
        reference = vec![mean.point];
    }
    let mut traces = Vec::with_capacity(rounds);
    for r in 0..rounds {
        let p = if r == 0 { first } else { per_round };
        let round_stream = stream.indexed("round", r as u64);
        let mut local = PrivacyBudget::new(f64::INFINITY);
        let (centers, mut trace) =
            dp_kmeans_round(data, &reference, k, &p, config, &round_stream, &mut local)?;
        ledger.absorb(&format!("round{r}"), &local)?;
        trace.round = r;
        traces.push(trace);
        reference = centers;
    }
    let (cost, _) = clustering_cost(data, &reference, Power::Means)?;
    Ok(KMeansResult {
        centers: reference,
        cost,
        rounds: traces,
        ledger,
    })
}

/// Centers with noisy cluster sizes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightedCenters {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl WeightedCenters {
    /// Cluster sizes of `data` around `centers` plus `Lap(1/ε)` each; one
    /// point changes one size by one.
    pub fn from_data<R: Rng + ?Sized>(
        data: &Dataset,
        centers: &[Vec<f64>],
        privacy: &Privacy,
        rng: &mut R,
    ) -> Result<Self> {
        let (_, assign) = clustering_cost(data, centers, Power::Means)?;
        let mut weights = vec![0.0; centers.len()];
        for a in assign {
            weights[a] += 1.0;
        }
        let scale = privacy.scale_for(1.0);
        for w in weights.iter_mut() {
            *w += laplace_sample(scale, privacy.is_private() && scale > 0.0, rng)?;
        }
        Ok(Self {
            points: centers.to_vec(),
            weights,
        })
    }

    /// Cost of serving every weighted point from `open` (indices into
    /// `points`), with weights clamped at zero.
    pub fn cost(&self, open: &[usize], power: Power) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(p, &w)| {
                let d2 = open
                    .iter()
                    .map(|&c| crate::dataset::dist2(p, &self.points[c]))
                    .fold(f64::INFINITY, f64::min);
                w.max(0.0) * power.of_dist2(d2)
            })
            .sum()
    }
}

/// Indices of the `k` centers kept by reverse greedy: repeatedly drop the
/// center whose removal raises the weighted cost least (lowest index on ties).
pub fn greedy_reduce(instance: &WeightedCenters, k: usize, power: Power) -> Vec<usize> {
    let mut open: Vec<usize> = (0..instance.points.len()).collect();
    while open.len() > k.max(1) {
        let mut best = (f64::INFINITY, 0);
        for pos in 0..open.len() {
            let rest: Vec<usize> = open
                .iter()
                .enumerate()
                .filter(|&(q, _)| q != pos)
                .map(|(_, &c)| c)
                .collect();
            let c = instance.cost(&rest, power);
            if c < best.0 {
                best = (c, pos);
            }
        }
        open.remove(best.1);
    }
    open
}

#[derive(Debug, Clone, Serialize)]
pub struct ReducedSolution {
    pub centers: Vec<Vec<f64>>,
    /// Positions of the kept centers in the input list.
    pub kept: Vec<usize>,
    pub instance: WeightedCenters,
}

/// Reduces `centers` to exactly `k` of them (identity when there are at most
/// `k`). Always charges `privacy.epsilon`, so the ledger does not depend on
/// how many centers the private input had.
pub fn reverse_greedy(
    data: &Dataset,
    centers: &[Vec<f64>],
    k: usize,
    power: Power,
    privacy: &Privacy,
    seed: u64,
    budget: &mut PrivacyBudget,
) -> Result<ReducedSolution> {
    if centers.is_empty() {
        return Err(Error::NoCenters);
    }
    budget.charge_for("reverse_greedy/weights", privacy)?;
    if centers.len() <= k {
        let n = centers.len();
        let instance = WeightedCenters {
            points: centers.to_vec(),
            weights: vec![0.0; n],
        };
        return Ok(ReducedSolution {
            centers: centers.to_vec(),
            kept: (0..n).collect(),
            instance,
        });
    }
    let mut rng = RngStream::new(seed, "reverse_greedy").rng();
    let instance = WeightedCenters::from_data(data, centers, privacy, &mut rng)?;
    let kept = greedy_reduce(&instance, k, power);
    Ok(ReducedSolution {
        centers: kept.iter().map(|&i| centers[i].clone()).collect(),
        kept,
        instance,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ExactKMeans {
    pub centers: Vec<Vec<f64>>,
    pub cost: f64,
    pub bicriteria: KMeansResult,
    pub ledger: PrivacyBudget,
}

/// `dp_kmeans` on ε/2 followed by `reverse_greedy` on ε/2.
pub fn dp_kmeans_exact(
    data: &Dataset,
    k: usize,
    privacy: &Privacy,
    config: &KMeansConfig,
    seed: u64,
) -> Result<ExactKMeans> {
    let half = privacy.scaled(0.5);
    let bicriteria = dp_kmeans(data, k, &half, config, seed)?;
    let mut ledger = PrivacyBudget::for_privacy(privacy);
    ledger.absorb("dp_kmeans", &bicriteria.ledger)?;
    let reduced = reverse_greedy(
        data,
        &bicriteria.centers,
        k,
        Power::Means,
        &half,
        seed,
        &mut ledger,
    )?;
    let (cost, _) = clustering_cost(data, &reduced.centers, Power::Means)?;
    Ok(ExactKMeans {
        centers: reduced.centers,
        cost,
        bicriteria,
        ledger,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::cost_of;
    use crate::dataset::dist2;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rows(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| vec![rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6)])
            .collect()
    }

    fn geometry(n: usize, seed: u64) -> TreeGeometry {
        TreeGeometry::new(2, 1.0, TreeConfig::theory(n), RngStream::new(seed, "s")).unwrap()
    }

    #[test]
    fn config_thresholds() {
        let c = KMeansConfig::default();
        assert_eq!(c.num_rounds(2), 1);
        assert_eq!(c.num_rounds(1000), 10);
        assert!((c.pi_for(16) - 1.0 / 16.0).abs() < 1e-15);
        assert!((c.alpha_f(16) - 0.5 / 96.0).abs() < 1e-15);
        assert!(c.alpha_c(16, 2) > 0.0 && c.alpha_c(16, 2) < c.alpha_f(16));
        let bad = KMeansConfig { alpha: 1.5, ..c };
        let ds = Dataset::from_normalized(&rows(4, 1), 1.0).unwrap();
        assert!(dp_kmeans(&ds, 2, &Privacy::disabled(), &bad, 1).is_err());
    }

    #[test]
    fn filter_keeps_everything_without_bad_centers() {
        let ds = Dataset::from_normalized(&rows(100, 2), 1.0).unwrap();
        let g = geometry(100, 2);
        let f = filter_instance(&ds, &[vec![0.1, 0.1], vec![-0.3, 0.2]], &g, 1e-9).unwrap();
        assert!(f.badly_cut.is_empty());
        assert_eq!(f.provenance, (0..100).collect::<Vec<_>>());
    }

    fn plane_center(g: &TreeGeometry) -> Vec<f64> {
        let (j, x) = g.split(&g.root());
        let mut c = vec![0.0; g.dim()];
        c[j] = x + 1e-9;
        c
    }

    #[test]
    fn center_on_split_plane_loses_its_cluster() {
        let ds = Dataset::from_normalized(&rows(100, 3), 1.0).unwrap();
        let g = geometry(100, 3);
        let bad = plane_center(&g);
        assert_eq!(
            g.badly_cut_centers(std::slice::from_ref(&bad), 0.5)
                .unwrap(),
            vec![0]
        );
        let f = filter_instance(&ds, std::slice::from_ref(&bad), &g, 0.5).unwrap();
        assert!(f.kept.is_empty());
        assert_eq!(f.badly_cut, vec![bad.clone()]);

        let far = vec![0.55, 0.55];
        let f = filter_instance(&ds, &[bad.clone(), far.clone()], &g, 0.5).unwrap();
        let mut all: Vec<usize> = f.provenance.iter().chain(&f.removed).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        let refs = [bad.clone(), far.clone()];
        for &i in &f.removed {
            assert!(f.badly_cut.contains(&refs[nearest(ds.point(i), &refs).0]));
        }
        for &i in &f.provenance {
            assert!(!f.badly_cut.contains(&refs[nearest(ds.point(i), &refs).0]));
        }
    }

    #[test]
    fn round_with_nothing_kept_returns_badly_cut_centers() {
        let ds = Dataset::from_normalized(&rows(50, 4), 1.0).unwrap();
        let stream = RngStream::new(4, "r");
        let g = TreeGeometry::new(2, 1.0, TreeConfig::theory(50), stream.child("shifts")).unwrap();
        let bad = plane_center(&g);
        let cfg = KMeansConfig {
            pi: Some(0.99),
            alpha: 0.99,
            ..Default::default()
        };
        let mut budget = PrivacyBudget::new(1.0);
        let p = Privacy::new(1.0).unwrap();
        let (centers, trace) = dp_kmeans_round(
            &ds,
            std::slice::from_ref(&bad),
            3,
            &p,
            &cfg,
            &stream,
            &mut budget,
        )
        .unwrap();
        assert_eq!(centers, vec![bad]);
        assert_eq!(trace.kept_points, 0);
        assert_eq!(budget.spent(), 1.0);
    }

    #[test]
    fn round_with_k_equal_n_has_zero_tree_cost() {
        let ds = Dataset::from_normalized(&rows(10, 5), 1.0).unwrap();
        let mut budget = PrivacyBudget::new(f64::INFINITY);
        let (centers, trace) = dp_kmeans_round(
            &ds,
            &[vec![0.0, 0.0]],
            10,
            &Privacy::disabled(),
            &KMeansConfig::default(),
            &RngStream::new(1, "r"),
            &mut budget,
        )
        .unwrap();
        assert_eq!(trace.badly_cut, 0);
        assert_eq!(trace.tree_cost, 0.0);
        assert!(centers.len() <= 10);
    }

    #[test]
    fn two_points_run_one_round() {
        let ds = Dataset::from_normalized(&[vec![-0.5, 0.0], vec![0.5, 0.0]], 1.0).unwrap();
        let r = dp_kmeans(&ds, 1, &Privacy::disabled(), &KMeansConfig::default(), 1).unwrap();
        assert_eq!(r.rounds.len(), 1);
    }

    #[test]
    fn ledgers_sum_to_epsilon() {
        let ds = Dataset::from_normalized(&rows(500, 6), 1.0).unwrap();
        for init in [InitialSolution::Origin, InitialSolution::DpMean] {
            let cfg = KMeansConfig {
                init,
                ..Default::default()
            };
            let r = dp_kmeans(&ds, 3, &Privacy::new(0.9).unwrap(), &cfg, 6).unwrap();
            assert!((r.ledger.spent() - 0.9).abs() < 1e-12, "{:?}", r.ledger);
            let e = dp_kmeans_exact(&ds, 3, &Privacy::new(0.9).unwrap(), &cfg, 6).unwrap();
            assert!((e.ledger.spent() - 0.9).abs() < 1e-12);
            assert!(e.centers.len() <= 3);
        }
    }

    #[test]
    fn duplicate_center_removed_first() {
        let ds = Dataset::from_normalized(&rows(60, 7), 1.0).unwrap();
        let centers = vec![vec![0.3, 0.3], vec![-0.3, -0.3], vec![0.3, 0.3]];
        let mut budget = PrivacyBudget::new(f64::INFINITY);
        let r = reverse_greedy(
            &ds,
            &centers,
            2,
            Power::Means,
            &Privacy::disabled(),
            1,
            &mut budget,
        )
        .unwrap();
        assert_eq!(r.centers.len(), 2);
        assert!(r.centers.contains(&vec![0.3, 0.3]) && r.centers.contains(&vec![-0.3, -0.3]));
    }

    #[test]
    fn zero_weights_cost_nothing() {
        let inst = WeightedCenters {
            points: rows(6, 8),
            weights: vec![-1.0, 0.0, -3.0, 0.0, 0.0, -0.5],
        };
        let kept = greedy_reduce(&inst, 2, Power::Median);
        assert_eq!(kept.len(), 2);
        assert_eq!(inst.cost(&kept, Power::Median), 0.0);
    }

    fn harmonic(k: usize) -> f64 {
        (1..=k).map(|i| 1.0 / i as f64).sum()
    }

    fn best_subset(inst: &WeightedCenters, k: usize, power: Power) -> f64 {
        let n = inst.points.len();
        let mut best = f64::INFINITY;
        for mask in 1u32..(1 << n) {
            if mask.count_ones() as usize == k {
                let open: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
                best = best.min(inst.cost(&open, power));
            }
        }
        best
    }

    #[test]
    fn greedy_within_harmonic_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let s = rng.random_range(5..=8);
            let k = rng.random_range(2..=3);
            let inst = WeightedCenters {
                points: (0..s)
                    .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
                    .collect(),
                weights: (0..s).map(|_| rng.random_range(1.0..20.0)).collect(),
            };
            for power in [Power::Median, Power::Means] {
                let kept = greedy_reduce(&inst, k, power);
                assert_eq!(kept.len(), k);
                let opt = best_subset(&inst, k, power);
                assert!(inst.cost(&kept, power) <= 2.0 * harmonic(k) * opt + 1e-12);
            }
        }
    }

    #[test]
    fn reverse_greedy_returns_subset() {
        let ds = Dataset::from_normalized(&rows(200, 10), 1.0).unwrap();
        let centers = rows(7, 11);
        let mut budget = PrivacyBudget::new(1.0);
        let r = reverse_greedy(
            &ds,
            &centers,
            3,
            Power::Means,
            &Privacy::new(1.0).unwrap(),
            3,
            &mut budget,
        )
        .unwrap();
        assert_eq!(r.centers.len(), 3);
        for (c, &i) in r.centers.iter().zip(&r.kept) {
            assert_eq!(c, &centers[i]);
        }
        assert!((cost_of(&ds, &r.centers, Power::Means).unwrap()).is_finite());
    }

    fn lemma_holds(p: &[f64], s: &[f64], t: &[Vec<f64>]) -> bool {
        let cp = nearest(p, t).1;
        let cs = nearest(s, t).1;
        (cp - cs).abs() <= 0.5 * cs + 10.0 * dist2(p, s) + 1e-12
    }

    #[test]
    fn generalized_triangle_inequality_many_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let pt = |rng: &mut ChaCha8Rng| {
            vec![
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ]
        };
        for _ in 0..100_000 {
            let p = pt(&mut rng);
            let s = pt(&mut rng);
            let m = rng.random_range(1..4);
            let t: Vec<Vec<f64>> = (0..m).map(|_| pt(&mut rng)).collect();
            assert!(lemma_holds(&p, &s, &t));
        }
    }

    proptest! {
        #[test]
        fn generalized_triangle_inequality(
            p in prop::collection::vec(-1.0f64..1.0, 2),
            s in prop::collection::vec(-1.0f64..1.0, 2),
            t in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 2), 1..5),
        ) {
            prop_assert!(lemma_holds(&p, &s, &t));
        }
    }
}
