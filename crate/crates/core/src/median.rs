//! Non-private geometric median by Weiszfeld iteration.

use crate::dataset::dist;

pub const WEISZFELD_ITERS: usize = 500;
pub const WEISZFELD_TOL: f64 = 1e-9;

/// Weighted geometric median. Weights must be nonnegative with a positive sum.
///
/// A data point that coincides with the iterate would divide by zero; its
/// distance is floored at `1e-12`, which is the usual perturbation fix.
pub fn weiszfeld(points: &[&[f64]], weights: Option<&[f64]>, iters: usize, tol: f64) -> Vec<f64> {
    assert!(!points.is_empty(), "weiszfeld needs at least one point");
    let d = points[0].len();
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let total: f64 = (0..points.len()).map(w).sum();
    let mut x = vec![0.0; d];
    for (i, p) in points.iter().enumerate() {
        for j in 0..d {
            x[j] += w(i) * p[j] / total;
        }
    }
    for _ in 0..iters {
        let mut num = vec![0.0; d];
        let mut den = 0.0;
        for (i, p) in points.iter().enumerate() {
            let wi = w(i);
            if wi == 0.0 {
                continue;
            }
            let r = dist(p, &x).max(1e-12);
            for j in 0..d {
                num[j] += wi * p[j] / r;
            }
            den += wi / r;
        }
        let next: Vec<f64> = num.iter().map(|v| v / den).collect();
        let step = dist(&next, &x);
        x = next;
        if step <= tol {
            break;
        }
    }
    x
}

pub fn median_cost(points: &[&[f64]], c: &[f64]) -> f64 {
    points.iter().map(|p| dist(p, c)).sum()
}
