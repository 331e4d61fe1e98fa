//! Round-synchronous simulator of a massively parallel cluster, with word
//! accounting per machine and per round.

mod protocol;
mod sample;

use std::collections::BTreeMap;

use serde::Serialize;

use crate::cost::COST_CHUNK;
use crate::error::{Error, Result};
use crate::rng::splitmix64;

pub use protocol::{mpc_count_cells, mpc_run_kmedian, CellCounts, MpcSolution};
pub use sample::mpc_sample_for_projection;

/// Words of a cell id.
pub const KEY_WORDS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MpcConfig {
    pub machines: usize,
    /// Per-machine memory `s`, in words. Also caps per-round send and receive.
    pub memory_words: usize,
    /// Seed of the shared hash `h` that picks count aggregators.
    pub hash_seed: u64,
    /// Slack constant required between the memory and machine exponents;
    /// recorded, not used by the simulation.
    pub exponent_slack: f64,
}

impl MpcConfig {
    pub fn new(machines: usize, memory_words: usize) -> Self {
        Self {
            machines,
            memory_words,
            hash_seed: 0x9E37,
            exponent_slack: 0.1,
        }
    }

    /// Memory large enough for `n` points in `d` dimensions with `k` centers
    /// and root-leaf paths of `depth` cells spread over `machines`.
    pub fn sized(n: usize, d: usize, k: usize, depth: usize, machines: usize) -> Self {
        let per = n.div_ceil(machines.max(1)) + COST_CHUNK;
        let record = 8 + 2 * d + 3 * (k + 1);
        Self::new(
            machines,
            4 * per * (depth + 1) * record + 16 * machines * (k + 1) * d.max(1) + 1024,
        )
    }

    /// `m ≥ 1`, `m·s ≥ N` and `k ≤ s / (4·d·⌈log₂ n⌉)`.
    pub fn validate(&self, n: usize, d: usize, k: usize) -> Result<()> {
        if self.machines == 0 {
            return Err(Error::param("need at least one machine"));
        }
        if (self.machines as u128) * (self.memory_words as u128) < (n as u128) * (d as u128) {
            return Err(Error::param(format!(
                "total memory {}·{} words below input size {}",
                self.machines,
                self.memory_words,
                n * d
            )));
        }
        let log_n = ((n.max(2) as f64).log2().ceil() as usize).max(1);
        let bound = self.memory_words / (4 * d.max(1) * log_n);
        if k > bound {
            return Err(Error::param(format!(
                "k = {k} exceeds the per-cell state bound {bound}"
            )));
        }
        if !(self.exponent_slack > 0.0) {
            return Err(Error::param("exponent slack must be positive"));
        }
        Ok(())
    }

    /// Aggregator of a cell.
    pub fn aggregator(&self, key: u64) -> usize {
        (splitmix64(key ^ self.hash_seed) % self.machines as u64) as usize
    }
}

/// Machine that owns each cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponsibilityMap {
    pub machines: usize,
    pub owner: BTreeMap<u64, usize>,
}

impl ResponsibilityMap {
    pub fn loads(&self) -> Vec<usize> {
        let mut l = vec![0; self.machines];
        for &m in self.owner.values() {
            l[m] += 1;
        }
        l
    }

    pub fn get(&self, key: u64) -> Option<usize> {
        self.owner.get(&key).copied()
    }
}

/// Round-robin over cells ordered by (aggregator, id); the order the
/// distributed ranking produces.
pub fn build_responsibility_map(cell_ids: &[u64], config: &MpcConfig) -> ResponsibilityMap {
    let mut ids: Vec<(usize, u64)> = cell_ids
        .iter()
        .map(|&k| (config.aggregator(k), k))
        .collect();
    ids.sort_unstable();
    ids.dedup();
    let owner = ids
        .iter()
        .enumerate()
        .map(|(rank, &(_, k))| (k, rank % config.machines))
        .collect();
    ResponsibilityMap {
        machines: config.machines,
        owner,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub phase: String,
    pub messages: usize,
    pub words: usize,
    pub max_sent: usize,
    pub max_received: usize,
    pub max_resident: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RoundTrace {
    pub rounds: Vec<RoundRecord>,
}

impl RoundTrace {
    pub fn num_rounds(&self) -> usize {
        self.rounds.len()
    }

    pub fn rounds_in(&self, phase_prefix: &str) -> usize {
        self.rounds
            .iter()
            .filter(|r| r.phase.starts_with(phase_prefix))
            .count()
    }

    pub fn max_resident(&self) -> usize {
        self.rounds
            .iter()
            .map(|r| r.max_resident)
            .max()
            .unwrap_or(0)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// A message with a word size.
pub(crate) trait Words {
    fn words(&self) -> usize;
}

/// Delivers messages between machines one round at a time and enforces the
/// memory cap on traffic and resident state.
pub(crate) struct Engine {
    pub m: usize,
    pub s: usize,
    pub trace: RoundTrace,
}

pub(crate) type Outbox<T> = Vec<(usize, T)>;
pub(crate) type Inbox<T> = Vec<(usize, T)>;

impl Engine {
    pub fn new(config: &MpcConfig) -> Self {
        Self {
            m: config.machines,
            s: config.memory_words,
            trace: RoundTrace::default(),
        }
    }

    fn overflow(&self, machine: usize) -> Error {
        Error::MemoryOverflow {
            round: self.trace.rounds.len(),
            machine,
        }
    }

    /// One round: `outboxes[i]` holds machine `i`'s `(destination, message)`
    /// pairs. Inboxes are ordered by sender id.
    pub fn exchange<T: Words>(
        &mut self,
        phase: &str,
        outboxes: Vec<Outbox<T>>,
    ) -> Result<Vec<Inbox<T>>> {
        let mut received = vec![0usize; self.m];
        let mut inboxes: Vec<Inbox<T>> = (0..self.m).map(|_| Vec::new()).collect();
        let (mut messages, mut words, mut max_sent) = (0, 0, 0);
        let mut record = RoundRecord {
            round: self.trace.rounds.len() + 1,
            phase: phase.to_string(),
            messages: 0,
            words: 0,
            max_sent: 0,
            max_received: 0,
            max_resident: 0,
        };
        let mut first_bad = None;
        for (src, out) in outboxes.into_iter().enumerate() {
            let mut sent = 0;
            for (dst, msg) in out {
                let w = msg.words();
                sent += w;
                received[dst] += w;
                messages += 1;
                words += w;
                inboxes[dst].push((src, msg));
            }
            max_sent = max_sent.max(sent);
            if sent > self.s && first_bad.is_none() {
                first_bad = Some(src);
            }
        }
        record.messages = messages;
        record.words = words;
        record.max_sent = max_sent;
        record.max_received = received.iter().copied().max().unwrap_or(0);
        self.trace.rounds.push(record);
        if let Some(src) = first_bad {
            return Err(self.overflow(src));
        }
        if let Some(dst) = received.iter().position(|&r| r > self.s) {
            return Err(self.overflow(dst));
        }
        Ok(inboxes)
    }

    /// Checks resident words at the end of the latest round.
    pub fn check_resident(&mut self, resident: &[usize]) -> Result<()> {
        let max = resident.iter().copied().max().unwrap_or(0);
        if let Some(r) = self.trace.rounds.last_mut() {
            r.max_resident = r.max_resident.max(max);
        }
        match resident.iter().position(|&w| w > self.s) {
            Some(machine) => Err(self.overflow(machine)),
            None => Ok(()),
        }
    }
}

/// Contiguous point blocks aligned to the cost chunk size, one per machine.
pub fn block_ranges(n: usize, machines: usize) -> Vec<std::ops::Range<usize>> {
    let chunks = n.div_ceil(COST_CHUNK);
    let (q, r) = (chunks / machines, chunks % machines);
    let mut out = Vec::with_capacity(machines);
    let mut start = 0;
    for i in 0..machines {
        let c = q + usize::from(i < r);
        let end = (start + c * COST_CHUNK).min(n);
        out.push(start..end);
        start = end;
    }
    out
}
