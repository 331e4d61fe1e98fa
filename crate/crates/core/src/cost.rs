//! Clustering objectives `cost(P, C) = Σ_p min_c dist(p, c)^z`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{dist2, Dataset};
use crate::error::{Error, Result};

/// Points per summation chunk. Partial sums are formed per chunk in index
/// order and then reduced in chunk order, so the total does not depend on
/// how chunks are scheduled (or which MPC machine holds them).
pub const COST_CHUNK: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Power {
    /// k-median, `z = 1`.
    Median,
    /// k-means, `z = 2`.
    Means,
}

impl Power {
    pub fn z(self) -> u32 {
        match self {
            Power::Median => 1,
            Power::Means => 2,
        }
    }

    pub fn from_z(z: u32) -> Result<Self> {
        match z {
            1 => Ok(Power::Median),
            2 => Ok(Power::Means),
            _ => Err(Error::param(format!("z must be 1 or 2, got {z}"))),
        }
    }

    /// Raises a distance to this power.
    pub fn of_dist(self, d: f64) -> f64 {
        match self {
            Power::Median => d,
            Power::Means => d * d,
        }
    }

    pub(crate) fn of_dist2(self, d2: f64) -> f64 {
        match self {
            Power::Median => d2.sqrt(),
            Power::Means => d2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub centers: Vec<Vec<f64>>,
    pub power: Power,
    pub cost: f64,
    pub assignment: Option<Vec<usize>>,
}

impl Solution {
    /// Evaluates `centers` on `data` and materializes the assignment.
    pub fn evaluate(data: &Dataset, centers: Vec<Vec<f64>>, power: Power) -> Result<Self> {
        let (cost, assignment) = clustering_cost(data, &centers, power)?;
        Ok(Self {
            centers,
            power,
            cost,
            assignment: Some(assignment),
        })
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

/// Index of the nearest center (lowest index on ties) and the squared distance.
pub fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let d2 = dist2(p, c);
        if d2 < best.1 {
            best = (i, d2);
        }
    }
    best
}

/// Per-chunk partial costs in chunk order; see [`COST_CHUNK`].
pub fn chunk_costs(points: &[f64], dim: usize, centers: &[Vec<f64>], power: Power) -> Vec<f64> {
    points
        .par_chunks(COST_CHUNK * dim)
        .map(|chunk| {
            let mut s = 0.0;
            for p in chunk.chunks_exact(dim) {
                s += power.of_dist2(nearest(p, centers).1);
            }
            s
        })
        .collect()
}

pub(crate) fn reduce_chunks(partials: &[f64]) -> f64 {
    partials.iter().fold(0.0, |acc, x| acc + x)
}

/// Exact cost and argmin assignment.
pub fn clustering_cost(
    data: &Dataset,
    centers: &[Vec<f64>],
    power: Power,
) -> Result<(f64, Vec<usize>)> {
    if centers.is_empty() {
        return Err(Error::NoCenters);
    }
    if let Some(c) = centers.iter().find(|c| c.len() != data.dim()) {
        return Err(Error::DimensionMismatch {
            expected: data.dim(),
            got: c.len(),
        });
    }
    let assignment: Vec<usize> = data
        .coords()
        .par_chunks(data.dim())
        .map(|p| nearest(p, centers).0)
        .collect();
    let cost = reduce_chunks(&chunk_costs(data.coords(), data.dim(), centers, power));
    Ok((cost, assignment))
}

/// Cost only, same summation order as [`clustering_cost`].
pub fn cost_of(data: &Dataset, centers: &[Vec<f64>], power: Power) -> Result<f64> {
    if centers.is_empty() {
        return Err(Error::NoCenters);
    }
    Ok(reduce_chunks(&chunk_costs(
        data.coords(),
        data.dim(),
        centers,
        power,
    )))
}
