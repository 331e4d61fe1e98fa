//! Randomly shifted binary quadtree over `[-Λ, Λ]^d`.
//!
//! A cell at depth `t` splits coordinate `t mod d` at a point drawn uniformly
//! from the middle third of its extent along that coordinate. Split values are
//! keyed by the cell's canonical key (a hash of its root path), so the whole
//! partition is a pure function of the shift stream: [`TreeGeometry`] answers
//! point-location queries without materializing anything, and [`Quadtree`]
//! materializes cells over a concrete dataset on demand.
//!
//! Levels group `d` consecutive depths and are counted from the bottom:
//! `level(t) = ⌈(max_depth - t) / d⌉`, so the deepest cells sit at level 0 and
//! the root at `top_level = max_depth / d`. A level-`i` cell has nominal side
//! `2Λ · 2^(i - top_level)`, which is the radius scale used by the cut tests.

use serde::{Deserialize, Serialize};

use crate::dataset::{dist, Dataset};
use crate::error::{Error, Result};
use crate::rng::{splitmix64, RngStream};

pub type CellId = usize;

/// Canonical key of the root cell.
pub const ROOT_KEY: u64 = 0x5EED_0F7E_EE00_0001;

pub fn child_key(parent: u64, upper: bool) -> u64 {
    splitmix64(
        parent.rotate_left(1)
            ^ if upper {
                0xC3A5_C85C_97CB_3127
            } else {
                0xB492_B66F_BE98_F273
            },
    )
}

/// Parameters of the partition that do not depend on the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    /// `n` in the `Λ/n` stopping diameter and the `log n` noise terms.
    pub n: usize,
    /// Fixed maximum depth (`α_depth · d`). When set, the `Λ/n` rule is off.
    pub max_depth_override: Option<usize>,
}

impl TreeConfig {
    pub fn theory(n: usize) -> Self {
        Self {
            n,
            max_depth_override: None,
        }
    }

    pub fn with_depth(n: usize, max_depth: usize) -> Self {
        Self {
            n,
            max_depth_override: Some(max_depth),
        }
    }
}

/// Smallest multiple of `d` at which every cell is guaranteed to have
/// diameter at most `Λ/n`, given the worst-case 2/3 shrink per split.
pub fn theory_max_depth(dim: usize, n: usize) -> usize {
    let target = 2.0 * (dim as f64).sqrt() * n.max(1) as f64;
    let bands = (target.ln() / 1.5f64.ln()).ceil().max(1.0) as usize;
    dim * bands
}

/// Geometry of one cell: depth, canonical key and axis-aligned bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGeom {
    pub depth: usize,
    pub key: u64,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl CellGeom {
    pub fn diam(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| (b - a) * (b - a))
            .sum::<f64>()
            .sqrt()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(x, (a, b))| *x >= *a && *x <= *b)
    }
}

/// The implicit shifted partition.
#[derive(Debug, Clone)]
pub struct TreeGeometry {
    dim: usize,
    lambda: f64,
    config: TreeConfig,
    max_depth: usize,
    shifts: RngStream,
}

impl TreeGeometry {
    pub fn new(dim: usize, lambda: f64, config: TreeConfig, shifts: RngStream) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("dimension must be positive"));
        }
        if config.n == 0 {
            return Err(Error::param("tree size parameter n must be positive"));
        }
        let max_depth = match config.max_depth_override {
            Some(0) => return Err(Error::param("max depth override must be at least 1")),
            Some(m) => m,
            None => theory_max_depth(dim, config.n),
        };
        Ok(Self {
            dim,
            lambda,
            config,
            max_depth,
            shifts,
        })
    }

    pub fn for_dataset(
        data: &Dataset,
        max_depth_override: Option<usize>,
        shifts: RngStream,
    ) -> Result<Self> {
        let config = TreeConfig {
            n: data.len(),
            max_depth_override,
        };
        Self::new(data.dim(), data.lambda(), config, shifts)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn n(&self) -> usize {
        self.config.n
    }

    pub fn config(&self) -> TreeConfig {
        self.config
    }

    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    pub fn shifts(&self) -> &RngStream {
        &self.shifts
    }

    /// `log2 n`, floored at 1 so thresholds never vanish for tiny inputs.
    pub fn log_n(&self) -> f64 {
        (self.config.n as f64).log2().max(1.0)
    }

    /// Cells with diameter at most this are never split or weighted.
    pub fn stop_diam(&self) -> Option<f64> {
        match self.config.max_depth_override {
            Some(_) => None,
            None => Some(self.lambda / self.config.n as f64),
        }
    }

    pub fn root(&self) -> CellGeom {
        CellGeom {
            depth: 0,
            key: ROOT_KEY,
            lo: vec![-self.lambda; self.dim],
            hi: vec![self.lambda; self.dim],
        }
    }

    /// Cells below the stopping rule carry no weight and have no children.
    pub fn is_terminal(&self, depth: usize, diam: f64) -> bool {
        if depth >= self.max_depth {
            return true;
        }
        matches!(self.stop_diam(), Some(s) if diam <= s)
    }

    /// Split coordinate and value of a non-terminal cell.
    pub fn split(&self, cell: &CellGeom) -> (usize, f64) {
        let j = cell.depth % self.dim;
        let (lo, hi) = (cell.lo[j], cell.hi[j]);
        let u = self.shifts.uniform_at(cell.key);
        let x = lo + (hi - lo) * (1.0 + u) / 3.0;
        (j, x)
    }

    pub fn child(&self, cell: &CellGeom, split: (usize, f64), upper: bool) -> CellGeom {
        let (j, x) = split;
        let mut lo = cell.lo.clone();
        let mut hi = cell.hi.clone();
        if upper {
            lo[j] = x;
        } else {
            hi[j] = x;
        }
        CellGeom {
            depth: cell.depth + 1,
            key: child_key(cell.key, upper),
            lo,
            hi,
        }
    }

    pub fn level_of_depth(&self, depth: usize) -> usize {
        self.max_depth.saturating_sub(depth).div_ceil(self.dim)
    }

    pub fn top_level(&self) -> usize {
        self.level_of_depth(0)
    }

    /// Nominal side length of a level-`level` cell.
    pub fn nominal_side(&self, level: usize) -> f64 {
        2.0 * self.lambda * 2f64.powi(level as i32 - self.top_level() as i32)
    }

    fn check_in_universe(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: p.len(),
            });
        }
        if p.iter().any(|x| !x.is_finite() || x.abs() > self.lambda) {
            return Err(Error::OutOfUniverse);
        }
        Ok(())
    }

    /// Cells on `p`'s root-to-leaf path, root first.
    pub fn path(&self, p: &[f64]) -> Result<Vec<CellGeom>> {
        self.check_in_universe(p)?;
        let mut out = Vec::new();
        let mut cell = self.root();
        loop {
            if self.is_terminal(cell.depth, cell.diam()) {
                out.push(cell);
                return Ok(out);
            }
            let s = self.split(&cell);
            let next = self.child(&cell, s, p[s.0] > s.1);
            out.push(cell);
            cell = next;
        }
    }

    /// Diameter of the smallest cell containing both points. For `p == q` this
    /// is the diameter of `p`'s leaf, not zero.
    pub fn tree_distance(&self, p: &[f64], q: &[f64]) -> Result<f64> {
        self.check_in_universe(p)?;
        self.check_in_universe(q)?;
        let mut cell = self.root();
        loop {
            let diam = cell.diam();
            if self.is_terminal(cell.depth, diam) {
                return Ok(diam);
            }
            let s = self.split(&cell);
            let (pu, qu) = (p[s.0] > s.1, q[s.0] > s.1);
            if pu != qu {
                return Ok(diam);
            }
            cell = self.child(&cell, s, pu);
        }
    }

    /// Distance from `p` to each split plane on its path, paired with whether
    /// `p` lies on the upper side. A closed ball `B(p, r)` crosses the plane
    /// iff `margin < r` (lower side) or `margin <= r` (upper side).
    fn split_margins(&self, p: &[f64]) -> Result<Vec<(usize, f64, bool)>> {
        self.check_in_universe(p)?;
        let mut out = Vec::new();
        let mut cell = self.root();
        while !self.is_terminal(cell.depth, cell.diam()) {
            let s = self.split(&cell);
            let upper = p[s.0] > s.1;
            out.push((cell.depth, (p[s.0] - s.1).abs(), upper));
            cell = self.child(&cell, s, upper);
        }
        Ok(out)
    }

    /// Level of the highest cell on `p`'s path whose split separates `p` from
    /// some point of `B(p, r)`; `None` if the ball reaches `p`'s leaf uncut.
    pub fn ball_cut_level(&self, p: &[f64], r: f64) -> Result<Option<usize>> {
        if !(r > 0.0) {
            return Err(Error::param("radius must be positive"));
        }
        let margins = self.split_margins(p)?;
        Ok(margins
            .iter()
            .find(|(_, m, upper)| crosses(*m, *upper, r))
            .map(|(depth, _, _)| self.level_of_depth(*depth)))
    }

    /// Indices of centers `f` for which some ball `B(f, side(i))` is cut at a
    /// level above `i + log2(d log n / alpha_f)`.
    pub fn badly_cut_centers(&self, centers: &[Vec<f64>], alpha_f: f64) -> Result<Vec<usize>> {
        if !(alpha_f > 0.0 && alpha_f < 1.0) {
            return Err(Error::param("alpha_F must lie in (0, 1)"));
        }
        let slack = (self.dim as f64 * self.log_n() / alpha_f).log2();
        let mut bad = Vec::new();
        for (idx, f) in centers.iter().enumerate() {
            let margins = self.split_margins(f)?;
            let top = self.top_level();
            // A ball of radius r is first cut at the shallowest depth whose
            // margin falls below r; scan levels with a moving cursor.
            let is_bad = (0..=top).any(|i| {
                let r = self.nominal_side(i);
                margins
                    .iter()
                    .find(|(_, m, upper)| crosses(*m, *upper, r))
                    .map(|(depth, _, _)| self.level_of_depth(*depth) as f64 > i as f64 + slack)
                    .unwrap_or(false)
            });
            if is_bad {
                bad.push(idx);
            }
        }
        Ok(bad)
    }
}

fn crosses(margin: f64, upper: bool, r: f64) -> bool {
    if upper {
        margin <= r
    } else {
        margin < r
    }
}

#[derive(Debug, Clone)]
pub struct Cell {
    pub geom: CellGeom,
    pub diam: f64,
    pub parent: Option<CellId>,
    /// `[lower, upper]` children once expanded.
    pub children: [Option<CellId>; 2],
    pub split: Option<(usize, f64)>,
    start: usize,
    mid: usize,
    end: usize,
}

impl Cell {
    pub fn count(&self) -> usize {
        self.end - self.start
    }

    pub fn is_expanded(&self) -> bool {
        self.children.iter().any(Option::is_some)
    }
}

/// Cells of a [`TreeGeometry`] materialized over a dataset. Each cell owns a
/// contiguous range of a point permutation, so per-cell exact counts are the
/// range lengths.
#[derive(Debug, Clone)]
pub struct Quadtree {
    geometry: TreeGeometry,
    cells: Vec<Cell>,
    perm: Vec<usize>,
    /// Coordinates in `perm` order.
    rows: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct CellDump<'a> {
    id: CellId,
    depth: usize,
    lo: &'a [f64],
    hi: &'a [f64],
    count: usize,
    children: [Option<CellId>; 2],
}

impl Quadtree {
    /// Only the root is materialized; see [`Quadtree::expand`].
    pub fn with_root(data: &Dataset, geometry: TreeGeometry) -> Result<Self> {
        if geometry.dim() != data.dim() {
            return Err(Error::DimensionMismatch {
                expected: geometry.dim(),
                got: data.dim(),
            });
        }
        let geom = geometry.root();
        let diam = geom.diam();
        let root = Cell {
            geom,
            diam,
            parent: None,
            children: [None, None],
            split: None,
            start: 0,
            mid: 0,
            end: data.len(),
        };
        Ok(Self {
            geometry,
            cells: vec![root],
            perm: (0..data.len()).collect(),
            rows: data.coords().to_vec(),
        })
    }

    /// Materializes every nonempty cell down to the stopping rule.
    pub fn build(
        data: &Dataset,
        shifts: RngStream,
        max_depth_override: Option<usize>,
    ) -> Result<Self> {
        let geometry = TreeGeometry::for_dataset(data, max_depth_override, shifts)?;
        Self::build_with(data, geometry)
    }

    pub fn build_with(data: &Dataset, geometry: TreeGeometry) -> Result<Self> {
        let mut tree = Self::with_root(data, geometry)?;
        let mut stack = vec![0];
        while let Some(id) = stack.pop() {
            if tree.cells[id].count() == 0 {
                continue;
            }
            for child in tree.expand(id, data, false).into_iter().flatten().rev() {
                stack.push(child);
            }
        }
        Ok(tree)
    }

    pub fn geometry(&self) -> &TreeGeometry {
        &self.geometry
    }

    pub fn root(&self) -> CellId {
        0
    }

    pub fn cell(&self, id: CellId) -> &Cell {
        &self.cells[id]
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    /// Dataset indices of the points inside `id`.
    pub fn points_of(&self, id: CellId) -> &[usize] {
        let c = &self.cells[id];
        &self.perm[c.start..c.end]
    }

    pub fn is_terminal(&self, id: CellId) -> bool {
        let c = &self.cells[id];
        self.geometry.is_terminal(c.geom.depth, c.diam)
    }

    /// Materializes the children of `id` (terminal cells have none). With
    /// `include_empty` false, an empty child is left unmaterialized. Points on
    /// the split plane go to the lower child.
    pub fn expand(
        &mut self,
        id: CellId,
        data: &Dataset,
        include_empty: bool,
    ) -> [Option<CellId>; 2] {
        if self.is_terminal(id) {
            return [None, None];
        }
        let (start, end) = (self.cells[id].start, self.cells[id].end);
        let (split, mid) = match self.cells[id].split {
            Some(s) => (s, self.cells[id].mid),
            None => {
                let s = self.geometry.split(&self.cells[id].geom);
                let d = data.dim();
                let mut lower = start;
                // Branch-free Lomuto pass: always swap, advance on the predicate.
                for i in start..end {
                    let below = self.rows[i * d + s.0] <= s.1;
                    self.perm.swap(lower, i);
                    for j in 0..d {
                        self.rows.swap(lower * d + j, i * d + j);
                    }
                    lower += usize::from(below);
                }
                self.cells[id].split = Some(s);
                self.cells[id].mid = lower;
                (s, lower)
            }
        };
        let ranges = [(start, mid), (mid, end)];
        for (slot, upper) in [(0, false), (1, true)] {
            if self.cells[id].children[slot].is_some() {
                continue;
            }
            let (s, e) = ranges[slot];
            if s == e && !include_empty {
                continue;
            }
            let geom = self.geometry.child(&self.cells[id].geom, split, upper);
            let diam = geom.diam();
            let child = Cell {
                geom,
                diam,
                parent: Some(id),
                children: [None, None],
                split: None,
                start: s,
                mid: s,
                end: e,
            };
            self.cells.push(child);
            self.cells[id].children[slot] = Some(self.cells.len() - 1);
        }
        self.cells[id].children
    }

    /// Deepest materialized cell containing `p`.
    pub fn locate(&self, p: &[f64]) -> Result<CellId> {
        if p.len() != self.geometry.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.geometry.dim(),
                got: p.len(),
            });
        }
        if !self.cells[0].geom.contains(p) {
            return Err(Error::OutOfUniverse);
        }
        let mut id = 0;
        while let Some((j, x)) = self.cells[id].split {
            let slot = usize::from(p[j] > x);
            match self.cells[id].children[slot] {
                Some(c) => id = c,
                None => break,
            }
        }
        Ok(id)
    }

    pub fn tree_distance(&self, p: &[f64], q: &[f64]) -> Result<f64> {
        self.geometry.tree_distance(p, q)
    }

    pub fn ball_cut_level(&self, p: &[f64], r: f64) -> Result<Option<usize>> {
        self.geometry.ball_cut_level(p, r)
    }

    /// JSON listing of materialized cells for visualization.
    pub fn dump_json(&self) -> Result<String> {
        let cells: Vec<CellDump<'_>> = self
            .cells
            .iter()
            .enumerate()
            .map(|(id, c)| CellDump {
                id,
                depth: c.geom.depth,
                lo: &c.geom.lo,
                hi: &c.geom.hi,
                count: c.count(),
                children: c.children,
            })
            .collect();
        Ok(serde_json::to_string(&cells)?)
    }
}

/// `dist(p, q) <= dist_T(p, q)` helper used by tests and reports.
pub fn distortion(geometry: &TreeGeometry, p: &[f64], q: &[f64]) -> Result<f64> {
    Ok(geometry.tree_distance(p, q)? / dist(p, q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::normalize;
    use rand::{Rng, SeedableRng};

    fn random_data(n: usize, d: usize, seed: u64) -> Dataset {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        normalize(&rows, 1.0).unwrap()
    }

    #[test]
    fn root_split_always_separates_symmetric_pair() {
        let ds = Dataset::from_normalized(&[vec![-0.5], vec![0.5]], 1.0).unwrap();
        for seed in 0..200 {
            let t = Quadtree::build(&ds, RngStream::new(seed, "tree-shift"), None).unwrap();
            let (j, x) = t.cell(t.root()).split.unwrap();
            assert_eq!(j, 0);
            assert!((-1.0 / 3.0..=1.0 / 3.0).contains(&x));
            assert_eq!(t.tree_distance(&[-0.5], &[0.5]).unwrap(), 2.0);
        }
    }

    #[test]
    fn single_point_yields_a_chain() {
        let ds = Dataset::from_normalized(&[vec![0.1, -0.2]], 1.0).unwrap();
        let t = Quadtree::build(&ds, RngStream::new(1, "tree-shift"), None).unwrap();
        for c in t.cells() {
            assert_eq!(c.count(), 1);
            assert!(c.geom.contains(ds.point(0)));
            assert!(c.children.iter().flatten().count() <= 1);
        }
        let leaf = t.locate(ds.point(0)).unwrap();
        assert!(t.cell(leaf).diam <= 1.0);
    }

    #[test]
    fn split_coordinates_cycle() {
        let ds = random_data(50, 2, 4);
        let t = Quadtree::build(&ds, RngStream::new(2, "tree-shift"), None).unwrap();
        for c in t.cells() {
            if let Some((j, _)) = c.split {
                assert_eq!(j, c.geom.depth % 2);
            }
        }
    }

    #[test]
    fn same_point_distance_is_leaf_diameter() {
        let g = TreeGeometry::new(2, 1.0, TreeConfig::theory(100), RngStream::new(3, "s")).unwrap();
        let p = [0.3, 0.1];
        let path = g.path(&p).unwrap();
        assert_eq!(
            g.tree_distance(&p, &p).unwrap(),
            path.last().unwrap().diam()
        );
        assert!(g.tree_distance(&p, &p).unwrap() > 0.0);
        assert!(matches!(
            g.tree_distance(&[2.0, 0.0], &p),
            Err(Error::OutOfUniverse)
        ));
    }

    #[test]
    fn children_partition_parent_within_middle_third() {
        let ds = random_data(300, 3, 5);
        let t = Quadtree::build(&ds, RngStream::new(9, "tree-shift"), None).unwrap();
        for c in t.cells() {
            if let Some((j, x)) = c.split {
                let (lo, hi) = (c.geom.lo[j], c.geom.hi[j]);
                assert!(x >= lo + (hi - lo) / 3.0 - 1e-15 && x <= hi - (hi - lo) / 3.0 + 1e-15);
                let total: usize = c
                    .children
                    .iter()
                    .flatten()
                    .map(|&k| t.cell(k).count())
                    .sum();
                assert_eq!(total, c.count());
                for &k in c.children.iter().flatten() {
                    for &i in t.points_of(k) {
                        assert!(t.cell(k).geom.contains(ds.point(i)));
                    }
                }
            }
        }
    }

    #[test]
    fn diameter_shrinks_by_three_halves_every_d_depths() {
        let ds = random_data(200, 3, 6);
        let t = Quadtree::build(&ds, RngStream::new(1, "tree-shift"), None).unwrap();
        for (id, c) in t.cells().iter().enumerate() {
            let mut anc = id;
            for _ in 0..3 {
                match t.cell(anc).parent {
                    Some(p) => anc = p,
                    None => break,
                }
            }
            if t.cell(anc).geom.depth + 3 == c.geom.depth {
                assert!(t.cell(anc).diam >= 1.5 * c.diam - 1e-12);
            }
        }
    }

    #[test]
    fn each_point_in_one_cell_per_depth() {
        let ds = random_data(120, 2, 8);
        let t = Quadtree::build(&ds, RngStream::new(4, "tree-shift"), None).unwrap();
        let mut hits = vec![std::collections::HashMap::<usize, usize>::new(); ds.len()];
        for (id, c) in t.cells().iter().enumerate() {
            for &i in t.points_of(id) {
                *hits[i].entry(c.geom.depth).or_default() += 1;
            }
        }
        for h in hits {
            assert!(h.values().all(|&v| v == 1));
            let max = *h.keys().max().unwrap();
            assert_eq!(h.len(), max + 1);
        }
    }

    #[test]
    fn leaves_respect_stopping_rule() {
        let ds = random_data(64, 2, 10);
        let t = Quadtree::build(&ds, RngStream::new(5, "tree-shift"), None).unwrap();
        for c in t.cells().iter().filter(|c| !c.is_expanded()) {
            assert!(c.diam <= 1.0 / 64.0);
        }
        let t = Quadtree::build(&ds, RngStream::new(5, "tree-shift"), Some(6)).unwrap();
        for c in t.cells().iter().filter(|c| !c.is_expanded()) {
            assert_eq!(c.geom.depth, 6);
        }
    }

    #[test]
    fn identical_stream_identical_tree() {
        let ds = random_data(80, 2, 11);
        let a = Quadtree::build(&ds, RngStream::new(77, "tree-shift"), None).unwrap();
        let b = Quadtree::build(&ds, RngStream::new(77, "tree-shift"), None).unwrap();
        assert_eq!(a.dump_json().unwrap(), b.dump_json().unwrap());
        let c = Quadtree::build(&ds, RngStream::new(78, "tree-shift"), None).unwrap();
        assert_ne!(a.dump_json().unwrap(), c.dump_json().unwrap());
    }

    #[test]
    fn tree_metric_dominates_and_is_ultrametric() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let g =
            TreeGeometry::new(2, 1.0, TreeConfig::theory(1000), RngStream::new(12, "s")).unwrap();
        for _ in 0..500 {
            let p: Vec<f64> = (0..2).map(|_| rng.random_range(-0.7..0.7)).collect();
            let q: Vec<f64> = (0..2).map(|_| rng.random_range(-0.7..0.7)).collect();
            let r: Vec<f64> = (0..2).map(|_| rng.random_range(-0.7..0.7)).collect();
            let pq = g.tree_distance(&p, &q).unwrap();
            assert!(dist(&p, &q) <= pq);
            let bound = g
                .tree_distance(&p, &r)
                .unwrap()
                .max(g.tree_distance(&r, &q).unwrap());
            assert!(pq <= bound);
        }
    }

    #[test]
    fn huge_ball_cut_at_root_small_centered_ball_uncut() {
        let g = TreeGeometry::new(2, 1.0, TreeConfig::theory(100), RngStream::new(1, "s")).unwrap();
        let p = [0.2, -0.4];
        assert_eq!(g.ball_cut_level(&p, 3.0).unwrap(), Some(g.top_level()));
        // A ball strictly inside every cell of the path is never cut.
        let margins = g.split_margins(&p).unwrap();
        let min = margins.iter().map(|m| m.1).fold(f64::INFINITY, f64::min);
        assert_eq!(g.ball_cut_level(&p, min * 0.5).unwrap(), None);
        // Just past the root margin the ball crosses the root split.
        let (_, m0, _) = margins[0];
        assert_eq!(
            g.ball_cut_level(&p, m0 * 1.000001 + 1e-12).unwrap(),
            Some(g.top_level())
        );
    }

    #[test]
    fn levels_count_from_the_bottom() {
        let g = TreeGeometry::new(
            2,
            1.0,
            TreeConfig::with_depth(10, 8),
            RngStream::new(1, "s"),
        )
        .unwrap();
        assert_eq!(g.top_level(), 4);
        assert_eq!(g.level_of_depth(0), 4);
        assert_eq!(g.level_of_depth(1), 4);
        assert_eq!(g.level_of_depth(2), 3);
        assert_eq!(g.level_of_depth(8), 0);
        assert_eq!(g.nominal_side(4), 2.0);
        assert_eq!(g.nominal_side(3), 1.0);
    }

    #[test]
    fn center_far_from_planes_not_badly_cut_but_near_plane_is() {
        let g = TreeGeometry::new(1, 1.0, TreeConfig::theory(16), RngStream::new(21, "s")).unwrap();
        let root = g.root();
        let (_, x) = g.split(&root);
        let near = vec![x + 1e-6];
        assert_eq!(
            g.badly_cut_centers(std::slice::from_ref(&near), 0.5)
                .unwrap(),
            vec![0]
        );
        // Once the slack exceeds the top level no cut can be deep enough.
        let alpha = g.dim() as f64 * g.log_n() / 2f64.powi(g.top_level() as i32 + 1);
        assert!(g
            .badly_cut_centers(std::slice::from_ref(&near), alpha)
            .unwrap()
            .is_empty());
        assert!(g.badly_cut_centers(&[near], 1.5).is_err());
    }
}
