//! Points, balls, axis-aligned boxes and multi-index helpers.
//!
//! The crate only works in dimensions 1 and 2, so a point is a fixed
//! `[f64; 2]`; one-dimensional code reads the first coordinate and keeps the
//! second at zero.

use crate::error::{Error, Result};

/// A point in dimension 1 or 2. In dimension 1 only `x[0]` is meaningful.
pub type Point = [f64; 2];

/// Multi-index `(k1, k2)`; in dimension 1 only the first entry is used.
pub type MultiIndex = [usize; 2];

/// Euclidean distance restricted to the first `dim` coordinates.
pub fn dist(dim: usize, a: Point, b: Point) -> f64 {
    let dx = a[0] - b[0];
    if dim == 1 {
        dx.abs()
    } else {
        let dy = a[1] - b[1];
        dx.hypot(dy)
    }
}

/// Euclidean ball; an interval when `dim == 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ball {
    pub center: Point,
    pub radius: f64,
    pub dim: usize,
}

impl Ball {
    pub fn new(dim: usize, center: Point, radius: f64) -> Result<Self> {
        if dim == 0 || dim > 2 {
            return Err(Error::UnsupportedDomain(format!("dimension {dim}")));
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidParameter(format!("ball radius {radius}")));
        }
        Ok(Ball { center, radius, dim })
    }

    /// Lebesgue measure: `2r` in 1-d, `pi r^2` in 2-d.
    pub fn volume(&self) -> f64 {
        match self.dim {
            1 => 2.0 * self.radius,
            _ => std::f64::consts::PI * self.radius * self.radius,
        }
    }

    pub fn contains(&self, x: Point) -> bool {
        dist(self.dim, self.center, x) <= self.radius
    }
}

/// Integration regions understood by the weight module.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Region {
    Ball(Ball),
    /// Axis-aligned box `[lo, hi]`; an interval when `dim == 1`.
    Box { dim: usize, lo: Point, hi: Point },
}

impl Region {
    pub fn interval(a: f64, b: f64) -> Self {
        Region::Box { dim: 1, lo: [a, 0.0], hi: [b, 0.0] }
    }

    pub fn rect(lo: Point, hi: Point) -> Self {
        Region::Box { dim: 2, lo, hi }
    }

    pub fn dim(&self) -> usize {
        match self {
            Region::Ball(b) => b.dim,
            Region::Box { dim, .. } => *dim,
        }
    }

    pub fn volume(&self) -> f64 {
        match self {
            Region::Ball(b) => b.volume(),
            Region::Box { dim: 1, lo, hi } => hi[0] - lo[0],
            Region::Box { lo, hi, .. } => (hi[0] - lo[0]) * (hi[1] - lo[1]),
        }
    }

    /// Whether `x` lies in the closed region.
    pub fn contains(&self, x: Point) -> bool {
        match self {
            Region::Ball(b) => b.contains(x),
            Region::Box { dim, lo, hi } => {
                let mut inside = x[0] >= lo[0] && x[0] <= hi[0];
                if *dim == 2 {
                    inside = inside && x[1] >= lo[1] && x[1] <= hi[1];
                }
                inside
            }
        }
    }
}

/// All multi-indices with `|k| <= max_total` in the given dimension, in
/// graded lexicographic order. The order is part of the crate's determinism
/// contract: coefficient vectors are laid out by iterating this list.
pub fn multi_indices(dim: usize, max_total: usize) -> Vec<MultiIndex> {
    let mut out = Vec::new();
    for total in 0..=max_total {
        if dim == 1 {
            out.push([total, 0]);
        } else {
            for k1 in (0..=total).rev() {
                out.push([k1, total - k1]);
            }
        }
    }
    out
}

/// Multi-indices with `|k| == total` exactly.
pub fn multi_indices_exact(dim: usize, total: usize) -> Vec<MultiIndex> {
    multi_indices(dim, total)
        .into_iter()
        .filter(|k| k[0] + k[1] == total)
        .collect()
}

pub fn multi_order(k: MultiIndex) -> usize {
    k[0] + k[1]
}

pub fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

pub fn multi_factorial(k: MultiIndex) -> f64 {
    factorial(k[0]) * factorial(k[1])
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    // Small arguments only (multi-indices of total order <= 4 or so).
    factorial(n) / (factorial(k) * factorial(n - k))
}

pub fn multi_binomial(a: MultiIndex, b: MultiIndex) -> f64 {
    binomial(a[0], b[0]) * binomial(a[1], b[1])
}

/// `x^k` componentwise.
pub fn multi_pow(x: Point, k: MultiIndex) -> f64 {
    x[0].powi(k[0] as i32) * x[1].powi(k[1] as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ball_volumes() {
        let b1 = Ball::new(1, [0.5, 0.0], 0.25).unwrap();
        assert_eq!(b1.volume(), 0.5);
        let b2 = Ball::new(2, [0.0, 0.0], 2.0).unwrap();
        assert!((b2.volume() - 4.0 * std::f64::consts::PI).abs() < 1e-14);
    }

    #[test]
    fn multi_index_order_is_graded() {
        let idx = multi_indices(2, 2);
        assert_eq!(idx, vec![[0, 0], [1, 0], [0, 1], [2, 0], [1, 1], [0, 2]]);
        assert_eq!(multi_indices(1, 3).len(), 4);
    }

    #[test]
    fn binomials_and_factorials() {
        assert_eq!(factorial(0), 1.0);
        assert_eq!(factorial(4), 24.0);
        assert_eq!(binomial(4, 2), 6.0);
        assert_eq!(multi_binomial([2, 1], [1, 1]), 2.0);
    }

    #[test]
    fn region_containment() {
        let r = Region::rect([0.0, 0.0], [1.0, 2.0]);
        assert!(r.contains([0.5, 1.9]));
        assert!(!r.contains([0.5, 2.1]));
        assert_eq!(r.volume(), 2.0);
    }
}
