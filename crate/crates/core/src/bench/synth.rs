use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::random_in_ball;
use crate::dataset::{clamp_to_ball, Dataset, Normalization, NORM_SLACK};
use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticKind {
    /// Gaussian blobs around well-separated means.
    Blobs,
    /// Uniform in the ball.
    Uniform,
    /// Uniform on a segment through the origin, plus Gaussian jitter.
    Line,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub lambda: f64,
    /// Number of blobs.
    pub blobs: usize,
    /// Per-coordinate standard deviation of blobs and line jitter.
    pub sigma: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            blobs: 4,
            sigma: 0.05,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub data: Dataset,
    /// Blob means (empty for other kinds).
    pub means: Vec<Vec<f64>>,
    /// Blob label per point.
    pub labels: Vec<usize>,
}

/// Blob means: a greedy spread of candidates in `B(0, 0.6Λ)`.
fn blob_means(k: usize, d: usize, lambda: f64, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best = (f64::NEG_INFINITY, Vec::new());
        for _ in 0..64 {
            let c = random_in_ball(d, 0.6 * lambda, rng);
            let sep = means
                .iter()
                .map(|m| crate::dataset::dist(m, &c))
                .fold(f64::INFINITY, f64::min);
            if sep > best.0 {
                best = (sep, c);
            }
        }
        means.push(best.1);
    }
    means
}

/// Reproducible synthetic data in normalized coordinates; points that would
/// leave the ball are clamped to its edge.
pub fn gen_synthetic(
    kind: SyntheticKind,
    n: usize,
    d: usize,
    params: &SyntheticParams,
    seed: u64,
) -> Result<SyntheticData> {
    if n == 0 || d == 0 {
        return Err(Error::param("n and d must be positive"));
    }
    if !(params.lambda > 0.0) || !(params.sigma >= 0.0) {
        return Err(Error::param(
            "lambda must be positive and sigma nonnegative",
        ));
    }
    let mut rng = RngStream::new(seed, "gen_synthetic").rng();
    let lambda = params.lambda;
    let radius = lambda * (1.0 - NORM_SLACK);
    let mut coords = Vec::with_capacity(n * d);
    let mut means = Vec::new();
    let mut labels = Vec::new();
    match kind {
        SyntheticKind::Blobs => {
            means = blob_means(params.blobs.max(1), d, lambda, &mut rng);
            for i in 0..n {
                let b = i % means.len();
                let mut p: Vec<f64> = means[b]
                    .iter()
                    .map(|m| m + params.sigma * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                clamp_to_ball(&mut p, radius);
                coords.extend(p);
                labels.push(b);
            }
        }
        SyntheticKind::Uniform => {
            for _ in 0..n {
                let mut p = random_in_ball(d, lambda, &mut rng);
                clamp_to_ball(&mut p, radius);
                coords.extend(p);
            }
        }
        SyntheticKind::Line => {
            let dir = random_in_ball(d, 1.0, &mut rng);
            let len = crate::dataset::norm(&dir).max(1e-12);
            for _ in 0..n {
                let t: f64 = rng.random_range(-0.8..0.8) * lambda;
                let mut p: Vec<f64> = dir
                    .iter()
                    .map(|x| x / len * t + params.sigma * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                clamp_to_ball(&mut p, radius);
                coords.extend(p);
            }
        }
    }
    let data = Dataset::from_parts(coords, d, lambda, Normalization::identity(d));
    Ok(SyntheticData {
        data,
        means,
        labels,
    })
}
