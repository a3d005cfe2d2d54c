//! Chart boxes and low-discrepancy sample points.

use serde::{Deserialize, Serialize};

/// Environment variable overriding [`DEFAULT_SAMPLES`].
pub const SAMPLES_ENV: &str = "SUPERGEO_SAMPLES";
pub const DEFAULT_SAMPLES: usize = 32;

const PRIMES: [u32; 24] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89];

/// Axis-aligned open box `Π (lo_i, hi_i)` realizing the base chart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartBox {
    pub bounds: Vec<(f64, f64)>,
}

impl ChartBox {
    pub fn cube(n: usize, half_width: f64) -> Self {
        ChartBox { bounds: vec![(-half_width, half_width); n] }
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.bounds.len() && x.iter().zip(&self.bounds).all(|(v, (lo, hi))| v > lo && v < hi)
    }

    /// `count` Halton points strictly inside the box (shrunk by `margin` of each side).
    pub fn halton(&self, count: usize, margin: f64) -> Vec<Vec<f64>> {
        let cube = halton_unit(self.dim(), count, 0);
        cube.into_iter()
            .map(|u| {
                u.iter()
                    .zip(&self.bounds)
                    .map(|(t, (lo, hi))| {
                        let w = hi - lo;
                        lo + margin * w + t * (1.0 - 2.0 * margin) * w
                    })
                    .collect()
            })
            .collect()
    }
}

/// Sample count from the environment, falling back to the default.
pub fn sample_count() -> usize {
    std::env::var(SAMPLES_ENV).ok().and_then(|v| v.trim().parse().ok()).filter(|&c| c > 0).unwrap_or(DEFAULT_SAMPLES)
}

fn radical_inverse(mut i: u64, base: u32) -> f64 {
    let b = base as f64;
    let mut inv = 1.0 / b;
    let mut out = 0.0;
    while i > 0 {
        out += (i % base as u64) as f64 * inv;
        i /= base as u64;
        inv /= b;
    }
    out
}

/// Halton points in `[0,1)^dim`, using prime bases starting at `base_offset`.
pub fn halton_unit(dim: usize, count: usize, base_offset: usize) -> Vec<Vec<f64>> {
    assert!(dim + base_offset <= PRIMES.len(), "Halton dimension too large");
    (1..=count as u64).map(|i| (0..dim).map(|d| radical_inverse(i, PRIMES[d + base_offset])).collect()).collect()
}

/// Points on the total space `E`: base point in the box and fiber point in `[-r, r]^q`.
pub fn total_space_samples(
    chart_box: &ChartBox,
    q: usize,
    fiber_radius: f64,
    count: usize,
) -> Vec<(Vec<f64>, Vec<f64>)> {
    let base = chart_box.halton(count, 0.05);
    let fiber = halton_unit(q, count, chart_box.dim());
    base.into_iter()
        .zip(fiber)
        .map(|(x, u)| (x, u.into_iter().map(|t| fiber_radius * (2.0 * t - 1.0)).collect()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halton_points_inside_box() {
        let b = ChartBox { bounds: vec![(-1.0, 2.0), (0.0, 0.5)] };
        let pts = b.halton(64, 0.05);
        assert_eq!(pts.len(), 64);
        assert!(pts.iter().all(|p| b.contains(p)));
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(3, 2), 0.75);
    }
}
