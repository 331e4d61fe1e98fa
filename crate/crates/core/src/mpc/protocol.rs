//! Distributed tree construction, private weights, DP and extraction.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::Serialize;

use super::{
    block_ranges, Engine, MpcConfig, Outbox, ResponsibilityMap, RoundTrace, Words, KEY_WORDS,
};
use crate::cost::{chunk_costs, reduce_chunks, Power};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::kmedian::{canonical_centers, combine_values, leaf_values, TreeParams};
use crate::privacy::{Privacy, PrivacyBudget, WeightParams};
use crate::quadtree::{CellGeom, TreeConfig, TreeGeometry};
use crate::rng::RngStream;

#[derive(Debug, Clone)]
struct CellRec {
    geom: CellGeom,
    parent: Option<u64>,
    upper: bool,
    count: usize,
}

impl CellRec {
    fn words(&self) -> usize {
        2 * KEY_WORDS + 3 + 2 * self.geom.lo.len()
    }
}

enum Msg {
    Partial(CellRec),
    Expanded {
        key: u64,
        expanded: bool,
    },
    CellTotal(usize),
    Record(CellRec),
    Link {
        parent: u64,
        upper: bool,
        owner: usize,
    },
    DStar(i64),
    ChildAt {
        key: u64,
        upper: bool,
        owner: usize,
    },
    ParentAt {
        key: u64,
        owner: usize,
    },
    Values {
        parent: u64,
        upper: bool,
        v: Vec<f64>,
    },
    Allot {
        key: u64,
        k: usize,
    },
    Centers(Vec<Vec<f64>>),
    TreeCost(f64),
    Partials(Vec<f64>),
}

impl Words for Msg {
    fn words(&self) -> usize {
        match self {
            Msg::Partial(r) | Msg::Record(r) => r.words(),
            Msg::Expanded { .. } => KEY_WORDS + 1,
            Msg::CellTotal(_) | Msg::DStar(_) | Msg::TreeCost(_) => 1,
            Msg::Link { .. } | Msg::ChildAt { .. } => KEY_WORDS + 2,
            Msg::ParentAt { .. } => KEY_WORDS + 1,
            Msg::Values { v, .. } => KEY_WORDS + 1 + v.len(),
            Msg::Allot { .. } => KEY_WORDS + 1,
            Msg::Centers(c) => c.iter().map(Vec::len).sum(),
            Msg::Partials(p) => p.len(),
        }
    }
}

/// DP state of a locally evaluated subtree of empty cells.
#[derive(Debug, Clone)]
struct LocalNode {
    geom: CellGeom,
    values: Vec<f64>,
    split: Option<Vec<u32>>,
    children: Option<Box<[LocalNode; 2]>>,
}

impl LocalNode {
    fn words(&self) -> usize {
        let own = KEY_WORDS + self.values.len() + self.split.as_ref().map_or(0, Vec::len);
        own + self
            .children
            .as_ref()
            .map_or(0, |c| c[0].words() + c[1].words())
    }

    fn extract(&self, kp: usize, out: &mut Vec<Vec<f64>>) {
        if kp == 0 {
            return;
        }
        match (&self.split, &self.children) {
            (Some(s), Some(ch)) => {
                let k1 = s[kp] as usize;
                ch[0].extract(k1, out);
                ch[1].extract(kp - k1, out);
            }
            _ => out.push(self.geom.center()),
        }
    }
}

struct Ctx<'a> {
    geometry: &'a TreeGeometry,
    params: WeightParams,
    privacy: Privacy,
    noise: RngStream,
    power: Power,
    k: usize,
}

impl Ctx<'_> {
    /// Weight of a cell reached by the walk, or `None` when terminal.
    fn weight(&self, geom: &CellGeom, count: usize) -> Option<f64> {
        if self.geometry.is_terminal(geom.depth, geom.diam()) {
            None
        } else {
            Some(
                self.params
                    .weight(count, geom.key, &self.privacy, &self.noise),
            )
        }
    }

    fn expanded(&self, w: Option<f64>) -> bool {
        matches!(w, Some(w) if w > self.params.threshold)
    }

    /// Subtree of an empty cell: all weights are pure noise.
    fn empty_subtree(&self, geom: CellGeom) -> LocalNode {
        let w = self.weight(&geom, 0);
        let diam = geom.diam();
        if !self.expanded(w) {
            let values = leaf_values(w, diam, self.power, self.k);
            return LocalNode {
                geom,
                values,
                split: None,
                children: None,
            };
        }
        let s = self.geometry.split(&geom);
        let l = self.empty_subtree(self.geometry.child(&geom, s, false));
        let r = self.empty_subtree(self.geometry.child(&geom, s, true));
        let (values, split) = combine_values(w, diam, self.power, &l.values, &r.values);
        LocalNode {
            geom,
            values,
            split: Some(split),
            children: Some(Box::new([l, r])),
        }
    }
}

#[derive(Debug, Clone)]
struct Owned {
    rec: CellRec,
    weight: Option<f64>,
    expanded: bool,
    parent_owner: Option<usize>,
    child_owner: [Option<usize>; 2],
    child_v: [Option<Vec<f64>>; 2],
    empty_child: [Option<LocalNode>; 2],
    v: Option<Vec<f64>>,
    split: Option<Vec<u32>>,
    allot: Option<usize>,
}

impl Owned {
    fn words(&self) -> usize {
        let vecs = |v: &Option<Vec<f64>>| v.as_ref().map_or(0, Vec::len);
        self.rec.words()
            + 5
            + vecs(&self.child_v[0])
            + vecs(&self.child_v[1])
            + vecs(&self.v)
            + self.split.as_ref().map_or(0, Vec::len)
            + self
                .empty_child
                .iter()
                .flatten()
                .map(LocalNode::words)
                .sum::<usize>()
    }
}

#[derive(Default)]
struct Machine {
    block: Range<usize>,
    local: BTreeMap<u64, CellRec>,
    flags: BTreeMap<u64, bool>,
    agg: BTreeMap<u64, (CellRec, Vec<usize>)>,
    agg_owner: BTreeMap<u64, usize>,
    links: Vec<(u64, bool, usize)>,
    owned: BTreeMap<u64, Owned>,
    centers: Vec<Vec<f64>>,
}

impl Machine {
    fn words(&self, dim: usize) -> usize {
        self.block.len() * dim
            + self.local.values().map(CellRec::words).sum::<usize>()
            + self.flags.len() * (KEY_WORDS + 1)
            + self
                .agg
                .values()
                .map(|(r, c)| r.words() + c.len())
                .sum::<usize>()
            + self.agg_owner.len() * (KEY_WORDS + 1)
            + self.links.len() * (KEY_WORDS + 2)
            + self.owned.values().map(Owned::words).sum::<usize>()
            + self.centers.iter().map(Vec::len).sum::<usize>()
    }
}

fn check(engine: &mut Engine, machines: &[Machine], dim: usize) -> Result<()> {
    let resident: Vec<usize> = machines.iter().map(|m| m.words(dim)).collect();
    engine.check_resident(&resident)
}

fn empty_outboxes(m: usize) -> Vec<Outbox<Msg>> {
    (0..m).map(|_| Vec::new()).collect()
}

/// Exact counts of every nonempty cell at its owner, plus the global
/// maximum depth of an expanded cell reached by the weight walk.
fn count_phase(
    engine: &mut Engine,
    machines: &mut [Machine],
    data: &Dataset,
    ctx: &Ctx<'_>,
    config: &MpcConfig,
) -> Result<i64> {
    let m = machines.len();
    let dim = data.dim();
    // Local root-leaf paths, combined per cell.
    for mach in machines.iter_mut() {
        for i in mach.block.clone() {
            let path = ctx.geometry.path(data.point(i))?;
            let mut parent: Option<u64> = None;
            for geom in path {
                let key = geom.key;
                let upper = parent.is_some_and(|p| crate::quadtree::child_key(p, true) == key);
                mach.local
                    .entry(key)
                    .and_modify(|r| r.count += 1)
                    .or_insert(CellRec {
                        geom,
                        parent,
                        upper,
                        count: 1,
                    });
                parent = Some(key);
            }
        }
    }
    check(engine, machines, dim)?;

    let mut out = empty_outboxes(m);
    for (i, mach) in machines.iter().enumerate() {
        for rec in mach.local.values() {
            out[i].push((config.aggregator(rec.geom.key), Msg::Partial(rec.clone())));
        }
    }
    let inboxes = engine.exchange("count-aggregate", out)?;
    for (mach, inbox) in machines.iter_mut().zip(inboxes) {
        for (src, msg) in inbox {
            if let Msg::Partial(rec) = msg {
                match mach.agg.get_mut(&rec.geom.key) {
                    Some((r, c)) => {
                        r.count += rec.count;
                        c.push(src);
                    }
                    None => {
                        mach.agg.insert(rec.geom.key, (rec, vec![src]));
                    }
                }
            }
        }
    }
    check(engine, machines, dim)?;

    // Expansion flags back to contributors; cell totals to everyone.
    let mut out = empty_outboxes(m);
    for (i, mach) in machines.iter().enumerate() {
        for (key, (rec, contributors)) in &mach.agg {
            let expanded = ctx.expanded(ctx.weight(&rec.geom, rec.count));
            for &c in contributors {
                out[i].push((
                    c,
                    Msg::Expanded {
                        key: *key,
                        expanded,
                    },
                ));
            }
        }
        for dst in 0..m {
            out[i].push((dst, Msg::CellTotal(mach.agg.len())));
        }
    }
    let inboxes = engine.exchange("weight", out)?;
    let mut offsets = vec![vec![0usize; m]; m];
    for (me, inbox) in inboxes.into_iter().enumerate() {
        for (src, msg) in inbox {
            match msg {
                Msg::Expanded { key, expanded } => {
                    machines[me].flags.insert(key, expanded);
                }
                Msg::CellTotal(c) => offsets[me][src] = c,
                _ => {}
            }
        }
    }
    let mut out = empty_outboxes(m);
    for (i, mach) in machines.iter_mut().enumerate() {
        // Reached cells along local paths, shallowest first.
        let mut by_depth: Vec<&CellRec> = mach.local.values().collect();
        by_depth.sort_by_key(|r| (r.geom.depth, r.geom.key));
        let mut reached: BTreeMap<u64, bool> = BTreeMap::new();
        let mut d_star: i64 = -1;
        for r in by_depth {
            let ok = match r.parent {
                None => true,
                Some(p) => reached[&p] && mach.flags[&p],
            };
            reached.insert(r.geom.key, ok);
            if ok && mach.flags[&r.geom.key] {
                d_star = d_star.max(r.geom.depth as i64);
            }
        }
        for dst in 0..m {
            out[i].push((dst, Msg::DStar(d_star)));
        }
        mach.local.clear();
        mach.flags.clear();
        // Global rank = cells held by lower aggregators + local rank.
        let offset: usize = offsets[i][..i].iter().sum();
        for (rank, (key, (rec, _))) in mach.agg.iter().enumerate() {
            let owner = (offset + rank) % m;
            mach.agg_owner.insert(*key, owner);
            out[i].push((owner, Msg::Record(rec.clone())));
            if let Some(p) = rec.parent {
                out[i].push((
                    config.aggregator(p),
                    Msg::Link {
                        parent: p,
                        upper: rec.upper,
                        owner,
                    },
                ));
            }
        }
        mach.agg.clear();
    }
    let inboxes = engine.exchange("route", out)?;
    let mut d_star = -1;
    for (mach, inbox) in machines.iter_mut().zip(inboxes) {
        for (_, msg) in inbox {
            match msg {
                Msg::Record(rec) => {
                    let weight = ctx.weight(&rec.geom, rec.count);
                    let expanded = ctx.expanded(weight);
                    mach.owned.insert(
                        rec.geom.key,
                        Owned {
                            rec,
                            weight,
                            expanded,
                            parent_owner: None,
                            child_owner: [None, None],
                            child_v: [None, None],
                            empty_child: [None, None],
                            v: None,
                            split: None,
                            allot: None,
                        },
                    );
                }
                Msg::Link {
                    parent,
                    upper,
                    owner,
                } => mach.links.push((parent, upper, owner)),
                Msg::DStar(d) => d_star = d_star.max(d),
                _ => {}
            }
        }
    }
    check(engine, machines, dim)?;
    Ok(d_star)
}

/// Tells every cell where its parent and children live.
fn link_phase(engine: &mut Engine, machines: &mut [Machine], dim: usize) -> Result<()> {
    let m = machines.len();
    let mut out = empty_outboxes(m);
    for (i, mach) in machines.iter_mut().enumerate() {
        for (parent, upper, child_owner) in mach.links.drain(..) {
            let parent_owner = mach.agg_owner[&parent];
            out[i].push((
                parent_owner,
                Msg::ChildAt {
                    key: parent,
                    upper,
                    owner: child_owner,
                },
            ));
            let child = crate::quadtree::child_key(parent, upper);
            out[i].push((
                child_owner,
                Msg::ParentAt {
                    key: child,
                    owner: parent_owner,
                },
            ));
        }
        mach.agg_owner.clear();
    }
    let inboxes = engine.exchange("route-links", out)?;
    for (mach, inbox) in machines.iter_mut().zip(inboxes) {
        for (_, msg) in inbox {
            match msg {
                Msg::ChildAt { key, upper, owner } => {
                    mach.owned.get_mut(&key).expect("owned parent").child_owner
                        [usize::from(upper)] = Some(owner);
                }
                Msg::ParentAt { key, owner } => {
                    mach.owned.get_mut(&key).expect("owned child").parent_owner = Some(owner)
                }
                _ => {}
            }
        }
    }
    check(engine, machines, dim)
}

/// DP values of an owned cell whose nonempty children have reported.
fn finalize(cell: &mut Owned, ctx: &Ctx<'_>, leaf_depth: usize) {
    let diam = cell.rec.geom.diam();
    if !cell.expanded || cell.rec.geom.depth >= leaf_depth {
        cell.v = Some(leaf_values(cell.weight, diam, ctx.power, ctx.k));
        return;
    }
    let s = ctx.geometry.split(&cell.rec.geom);
    let mut sides: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for (slot, upper) in [(0, false), (1, true)] {
        sides[slot] = match cell.child_v[slot].take() {
            Some(v) => v,
            None => {
                let node = ctx.empty_subtree(ctx.geometry.child(&cell.rec.geom, s, upper));
                let v = node.values.clone();
                cell.empty_child[slot] = Some(node);
                v
            }
        };
    }
    let (v, split) = combine_values(cell.weight, diam, ctx.power, &sides[0], &sides[1]);
    cell.v = Some(v);
    cell.split = Some(split);
}

#[derive(Debug, Clone, Serialize)]
pub struct MpcSolution {
    pub centers: Vec<Vec<f64>>,
    pub tree_cost: f64,
    pub cost: f64,
    /// Deepest expanded cell reached by the weight walk (−1: root not expanded).
    pub max_expanded_depth: i64,
    pub loads: Vec<usize>,
    pub ledger: PrivacyBudget,
    pub trace: RoundTrace,
}

fn setup<'a>(
    data: &Dataset,
    k: usize,
    privacy: &Privacy,
    params: &TreeParams,
    geometry: &'a TreeGeometry,
    stream: &RngStream,
    config: &MpcConfig,
) -> Result<(Engine, Vec<Machine>, Ctx<'a>)> {
    config.validate(data.len(), data.dim(), k)?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let ctx = Ctx {
        geometry,
        params: WeightParams::new(geometry, privacy, params.rule),
        privacy: *privacy,
        noise: stream.child("laplace"),
        power: Power::Median,
        k,
    };
    let machines: Vec<Machine> = block_ranges(data.len(), config.machines)
        .into_iter()
        .map(|block| Machine {
            block,
            ..Default::default()
        })
        .collect();
    Ok((Engine::new(config), machines, ctx))
}

fn geometry_for(data: &Dataset, params: &TreeParams, stream: &RngStream) -> Result<TreeGeometry> {
    let config = match params.depth_override {
        Some(depth) => TreeConfig::with_depth(data.len(), depth),
        None => TreeConfig::theory(data.len()),
    };
    TreeGeometry::new(data.dim(), data.lambda(), config, stream.child("shifts"))
}

/// Exact per-cell counts delivered to their owners.
#[derive(Debug, Clone)]
pub struct CellCounts {
    pub counts: BTreeMap<u64, usize>,
    pub responsibility: ResponsibilityMap,
    pub trace: RoundTrace,
}

/// Counting phase alone: paths, aggregation and routing to owners.
pub fn mpc_count_cells(
    data: &Dataset,
    params: &TreeParams,
    seed: u64,
    config: &MpcConfig,
) -> Result<CellCounts> {
    let stream = RngStream::new(seed, "dp_kmedian");
    let geometry = geometry_for(data, params, &stream)?;
    let privacy = Privacy::disabled();
    let (mut engine, mut machines, ctx) =
        setup(data, 1, &privacy, params, &geometry, &stream, config)?;
    count_phase(&mut engine, &mut machines, data, &ctx, config)?;
    let mut counts = BTreeMap::new();
    let mut owner = BTreeMap::new();
    for (i, mach) in machines.iter().enumerate() {
        for (key, c) in &mach.owned {
            counts.insert(*key, c.rec.count);
            owner.insert(*key, i);
        }
    }
    let responsibility = ResponsibilityMap {
        machines: config.machines,
        owner,
    };
    Ok(CellCounts {
        counts,
        responsibility,
        trace: engine.trace,
    })
}

/// The private tree k-median run on a simulated cluster. With the same seed
/// it reproduces the sequential run bit for bit.
pub fn mpc_run_kmedian(
    data: &Dataset,
    k: usize,
    privacy: &Privacy,
    params: &TreeParams,
    seed: u64,
    config: &MpcConfig,
) -> Result<MpcSolution> {
    if k == 0 {
        return Err(Error::param("k must be at least 1"));
    }
    let stream = RngStream::new(seed, "dp_kmedian");
    let geometry = geometry_for(data, params, &stream)?;
    let (mut engine, mut machines, ctx) =
        setup(data, k, privacy, params, &geometry, &stream, config)?;
    let mut ledger = PrivacyBudget::for_privacy(privacy);
    let mut local = PrivacyBudget::new(ledger.remaining());
    local.charge_for("make_private", privacy)?;
    ledger.absorb("tree", &local)?;
    let m = config.machines;
    let dim = data.dim();

    let d_star = count_phase(&mut engine, &mut machines, data, &ctx, config)?;
    link_phase(&mut engine, &mut machines, dim)?;
    let loads: Vec<usize> = machines.iter().map(|mach| mach.owned.len()).collect();
    let leaf_depth = (d_star + 1) as usize;

    // Bottom-up, one depth per round.
    for depth in (1..=leaf_depth).rev() {
        let mut out = empty_outboxes(m);
        for (i, mach) in machines.iter_mut().enumerate() {
            for cell in mach
                .owned
                .values_mut()
                .filter(|c| c.rec.geom.depth == depth)
            {
                finalize(cell, &ctx, leaf_depth);
                let parent = cell.rec.parent.expect("non-root");
                let v = cell.v.clone().expect("finalized");
                out[i].push((
                    cell.parent_owner.expect("linked"),
                    Msg::Values {
                        parent,
                        upper: cell.rec.upper,
                        v,
                    },
                ));
            }
        }
        let inboxes = engine.exchange(&format!("dp-up depth {depth}"), out)?;
        for (mach, inbox) in machines.iter_mut().zip(inboxes) {
            for (_, msg) in inbox {
                if let Msg::Values { parent, upper, v } = msg {
                    mach.owned.get_mut(&parent).expect("owned").child_v[usize::from(upper)] =
                        Some(v);
                }
            }
        }
        check(&mut engine, &machines, dim)?;
    }
    let root_key = geometry.root().key;
    let root_owner = machines
        .iter()
        .position(|mach| mach.owned.contains_key(&root_key))
        .expect("root owned");
    {
        let root = machines[root_owner].owned.get_mut(&root_key).expect("root");
        finalize(root, &ctx, leaf_depth);
        root.allot = Some(k);
    }

    // Top-down, one depth per round.
    let emit = |cell: &mut Owned, centers: &mut Vec<Vec<f64>>| -> Vec<(usize, Msg)> {
        let kp = match cell.allot.take() {
            Some(kp) if kp > 0 => kp,
            _ => return Vec::new(),
        };
        let split = match &cell.split {
            None => {
                centers.push(cell.rec.geom.center());
                return Vec::new();
            }
            Some(s) => s,
        };
        let k1 = split[kp] as usize;
        let mut msgs = Vec::new();
        for (slot, share) in [(0usize, k1), (1, kp - k1)] {
            if let Some(node) = &cell.empty_child[slot] {
                node.extract(share, centers);
            } else if share > 0 {
                let key = crate::quadtree::child_key(cell.rec.geom.key, slot == 1);
                msgs.push((
                    cell.child_owner[slot].expect("nonempty child"),
                    Msg::Allot { key, k: share },
                ));
            }
        }
        msgs
    };
    for depth in 0..leaf_depth {
        let mut out = empty_outboxes(m);
        for (i, mach) in machines.iter_mut().enumerate() {
            let mut centers = std::mem::take(&mut mach.centers);
            for cell in mach
                .owned
                .values_mut()
                .filter(|c| c.rec.geom.depth == depth)
            {
                out[i].extend(emit(cell, &mut centers));
            }
            mach.centers = centers;
        }
        let inboxes = engine.exchange(&format!("extract-down depth {depth}"), out)?;
        for (mach, inbox) in machines.iter_mut().zip(inboxes) {
            for (_, msg) in inbox {
                if let Msg::Allot { key, k } = msg {
                    mach.owned.get_mut(&key).expect("owned").allot = Some(k);
                }
            }
        }
        check(&mut engine, &machines, dim)?;
    }
    for mach in machines.iter_mut() {
        let mut centers = std::mem::take(&mut mach.centers);
        for cell in mach
            .owned
            .values_mut()
            .filter(|c| c.rec.geom.depth == leaf_depth)
        {
            let msgs = emit(cell, &mut centers);
            debug_assert!(msgs.is_empty());
        }
        mach.centers = centers;
    }
    let tree_cost = machines[root_owner].owned[&root_key]
        .v
        .as_ref()
        .expect("root value")[k];
    for mach in machines.iter_mut() {
        mach.owned.clear();
    }

    // Gather, canonicalize, broadcast, then sum chunk costs in chunk order.
    let mut out = empty_outboxes(m);
    for (i, mach) in machines.iter_mut().enumerate() {
        out[i].push((0, Msg::Centers(std::mem::take(&mut mach.centers))));
        if i == root_owner {
            out[i].push((0, Msg::TreeCost(tree_cost)));
        }
    }
    let inboxes = engine.exchange("gather-centers", out)?;
    let mut all = Vec::new();
    let mut gathered_cost = f64::NAN;
    for (_, msg) in inboxes.into_iter().next().expect("machine 0") {
        match msg {
            Msg::Centers(c) => all.extend(c),
            Msg::TreeCost(c) => gathered_cost = c,
            _ => {}
        }
    }
    let centers = canonical_centers(all);
    machines[0].centers = centers.clone();
    check(&mut engine, &machines, dim)?;

    let mut out = empty_outboxes(m);
    for dst in 1..m {
        out[0].push((dst, Msg::Centers(centers.clone())));
    }
    let inboxes = engine.exchange("broadcast-centers", out)?;
    for (i, inbox) in inboxes.into_iter().enumerate().skip(1) {
        for (_, msg) in inbox {
            if let Msg::Centers(c) = msg {
                machines[i].centers = c;
            }
        }
    }
    check(&mut engine, &machines, dim)?;

    let power = ctx.power;
    let mut out = empty_outboxes(m);
    for (i, mach) in machines.iter().enumerate() {
        let coords = &data.coords()[mach.block.start * dim..mach.block.end * dim];
        out[i].push((
            0,
            Msg::Partials(chunk_costs(coords, dim, &mach.centers, power)),
        ));
    }
    let inboxes = engine.exchange("gather-cost", out)?;
    let mut partials = Vec::new();
    for (_, msg) in inboxes.into_iter().next().expect("machine 0") {
        if let Msg::Partials(p) = msg {
            partials.extend(p);
        }
    }
    let cost = reduce_chunks(&partials);
    check(&mut engine, &machines, dim)?;

    Ok(MpcSolution {
        centers,
        tree_cost: gathered_cost,
        cost,
        max_expanded_depth: d_star,
        loads,
        ledger,
        trace: engine.trace,
    })
}
