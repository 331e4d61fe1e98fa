//! Point sets normalized into the open ball `B(0, Λ)`.

use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack below `Λ` for the largest normalized norm, keeping the
/// open-ball precondition strict.
pub const NORM_SLACK: f64 = 1e-9;

/// Affine map `normalized = (raw - shift) * scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub shift: Vec<f64>,
    pub scale: f64,
}

impl Normalization {
    pub fn identity(dim: usize) -> Self {
        Self {
            shift: vec![0.0; dim],
            scale: 1.0,
        }
    }

    pub fn apply(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(&self.shift)
            .map(|(x, s)| (x - s) * self.scale)
            .collect()
    }

    pub fn invert(&self, normalized: &[f64]) -> Vec<f64> {
        normalized
            .iter()
            .zip(&self.shift)
            .map(|(x, s)| x / self.scale + s)
            .collect()
    }
}

/// Row-major point set with every point strictly inside `B(0, lambda)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    coords: Vec<f64>,
    dim: usize,
    lambda: f64,
    normalization: Normalization,
}

impl Dataset {
    /// Wraps already-normalized points. Fails if any point leaves the open ball.
    pub fn from_normalized(rows: &[Vec<f64>], lambda: f64) -> Result<Self> {
        let (coords, dim) = flatten(rows)?;
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::param("lambda must be positive"));
        }
        let ds = Self {
            coords,
            dim,
            lambda,
            normalization: Normalization::identity(dim),
        };
        if ds.iter().any(|p| norm(p) >= lambda) {
            return Err(Error::OutOfUniverse);
        }
        Ok(ds)
    }

    pub(crate) fn from_parts(
        coords: Vec<f64>,
        dim: usize,
        lambda: f64,
        normalization: Normalization,
    ) -> Self {
        debug_assert!(dim > 0 && coords.len().is_multiple_of(dim));
        Self {
            coords,
            dim,
            lambda,
            normalization,
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.iter().map(<[f64]>::to_vec).collect()
    }

    /// Subset by index, keeping `lambda` and the normalization.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut coords = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            coords.extend_from_slice(self.point(i));
        }
        Self::from_parts(coords, self.dim, self.lambda, self.normalization.clone())
    }

    /// Maps normalized centers into raw input coordinates.
    pub fn denormalize(&self, centers: &[Vec<f64>]) -> Vec<Vec<f64>> {
        centers
            .iter()
            .map(|c| self.normalization.invert(c))
            .collect()
    }
}

/// Shifts raw points by the midpoint of their bounding box and scales them so
/// the largest norm is `lambda * (1 - 1e-9)`.
pub fn normalize(raw: &[Vec<f64>], lambda: f64) -> Result<Dataset> {
    let (coords, dim) = flatten(raw)?;
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::param("lambda must be positive"));
    }
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for p in coords.chunks_exact(dim) {
        for j in 0..dim {
            lo[j] = lo[j].min(p[j]);
            hi[j] = hi[j].max(p[j]);
        }
    }
    let shift: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
    let max_norm = coords
        .chunks_exact(dim)
        .map(|p| {
            p.iter()
                .zip(&shift)
                .map(|(x, s)| (x - s) * (x - s))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max);
    let scale = if max_norm > 0.0 {
        lambda * (1.0 - NORM_SLACK) / max_norm
    } else {
        1.0
    };
    let normalization = Normalization { shift, scale };
    let mut out = Vec::with_capacity(coords.len());
    for p in coords.chunks_exact(dim) {
        out.extend(normalization.apply(p));
    }
    Ok(Dataset::from_parts(out, dim, lambda, normalization))
}

fn flatten(rows: &[Vec<f64>]) -> Result<(Vec<f64>, usize)> {
    let first = rows.first().ok_or(Error::EmptyDataset)?;
    let dim = first.len();
    if dim == 0 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: 0,
        });
    }
    let mut coords = Vec::with_capacity(rows.len() * dim);
    for r in rows {
        if r.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: r.len(),
            });
        }
        if r.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidCoordinate);
        }
        coords.extend_from_slice(r);
    }
    Ok((coords, dim))
}

pub fn norm(p: &[f64]) -> f64 {
    p.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dist(p: &[f64], q: &[f64]) -> f64 {
    dist2(p, q).sqrt()
}

pub fn dist2(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Scales `p` back inside the closed ball of radius `radius` if needed.
pub fn clamp_to_ball(p: &mut [f64], radius: f64) {
    let n = norm(p);
    if n > radius {
        let f = radius / n;
        p.iter_mut().for_each(|x| *x *= f);
    }
}

/// Parses numeric rows split on commas and/or whitespace. A leading row with
/// any non-numeric token is treated as a header and skipped.
pub fn read_points<R: BufRead>(reader: R) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let tokens: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .collect();
        if tokens.is_empty() {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            tokens.iter().map(|t| t.parse::<f64>()).collect();
        match parsed {
            Ok(row) => {
                if row.iter().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidCoordinate);
                }
                rows.push(row);
            }
            Err(_) if rows.is_empty() && lineno == 0 => continue,
            Err(_) => return Err(Error::InvalidCoordinate),
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(rows)
}

pub fn read_points_file(path: &Path) -> Result<Vec<Vec<f64>>> {
    let f = std::fs::File::open(path)?;
    read_points(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn two_point_case_is_symmetric() {
        let ds = normalize(&[vec![0.0, 0.0], vec![2.0, 0.0]], 1.0).unwrap();
        let r = 1.0 - NORM_SLACK;
        assert_eq!(ds.point(0), &[-r, 0.0]);
        assert_eq!(ds.point(1), &[r, 0.0]);
        assert_eq!(ds.normalization().shift, vec![1.0, 0.0]);
    }

    #[test]
    fn single_point_goes_to_origin_with_unit_scale() {
        let ds = normalize(&[vec![5.0, 5.0]], 1.0).unwrap();
        assert_eq!(ds.point(0), &[0.0, 0.0]);
        assert_eq!(ds.normalization().scale, 1.0);
    }

    #[test]
    fn uniform_square_lands_in_open_ball() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let raw: Vec<Vec<f64>> = (0..100)
            .map(|_| vec![rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)])
            .collect();
        let ds = normalize(&raw, 1.0).unwrap();
        assert!(ds.iter().all(|p| norm(p) < 1.0));
        assert_eq!(ds.len(), 100);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(normalize(&[], 1.0), Err(Error::EmptyDataset)));
        assert!(matches!(
            normalize(&[vec![f64::NAN]], 1.0),
            Err(Error::InvalidCoordinate)
        ));
        assert!(matches!(
            normalize(&[vec![1.0], vec![1.0, 2.0]], 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(Dataset::from_normalized(&[vec![1.0, 0.0]], 1.0).is_err());
    }

    #[test]
    fn reads_header_and_mixed_delimiters() {
        let text = "x,y\n1,2\n3 4\n 5,\t6 \n\n";
        let rows = read_points(text.as_bytes()).unwrap();
        assert_eq!(rows, vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        assert!(matches!(
            read_points("1,2\nfoo,3\n".as_bytes()),
            Err(Error::InvalidCoordinate)
        ));
        assert!(matches!(
            read_points("a,b\n".as_bytes()),
            Err(Error::EmptyDataset)
        ));
    }
}
