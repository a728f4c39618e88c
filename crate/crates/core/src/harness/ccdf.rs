//! Outage probability and empirical CCDF computation.

use crate::error::{Result, SimError};

/// Window outage: dropped / arrived, with an empty window counting as 0.
pub fn outage_probability(dropped: u64, arrived: u64) -> f64 {
    if arrived == 0 {
        0.0
    } else {
        dropped as f64 / arrived as f64
    }
}

/// Right-continuous empirical complementary CDF over the sample set.
///
/// Returns one `(x, P[X > x])` point per distinct sample value, in ascending
/// order of `x`. Evaluate between points with [`ccdf_at`].
pub fn empirical_ccdf(samples: &[f64]) -> Result<Vec<(f64, f64)>> {
    if samples.is_empty() {
        return Err(SimError::domain("empirical CCDF of an empty sample set"));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(SimError::domain("empirical CCDF over non-finite samples"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = sorted.len() as f64;
    let mut points = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let v = sorted[i];
        // index one past the last occurrence of v
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == v {
            j += 1;
        }
        points.push((v, (sorted.len() - j) as f64 / n));
        i = j;
    }
    Ok(points)
}

/// Evaluate an [`empirical_ccdf`] point set at `x`.
pub fn ccdf_at(points: &[(f64, f64)], x: f64) -> f64 {
    if points.is_empty() || x < points[0].0 {
        return 1.0;
    }
    let mut p = 1.0;
    for &(v, prob) in points {
        if v <= x {
            p = prob;
        } else {
            break;
        }
    }
    p
}

/// True when the point set is a valid CCDF: monotone nonincreasing, 1 below
/// the minimum, 0 at and above the maximum.
pub fn is_monotone_ccdf(points: &[(f64, f64)]) -> bool {
    if points.is_empty() {
        return false;
    }
    let mut prev_x = f64::NEG_INFINITY;
    let mut prev_p = 1.0 + 1e-12;
    for &(x, p) in points {
        if x <= prev_x || p > prev_p || !(0.0..=1.0).contains(&p) {
            return false;
        }
        prev_x = x;
        prev_p = p;
    }
    points.last().map_or(false, |&(_, p)| p == 0.0)
}
