//! Dense bivariate polynomials of small degree, centered at a point.
//!
//! Taylor polynomials, averaged Taylor polynomials and element shape
//! functions are all low-degree, so a dense `(deg+1) x (deg+1)` coefficient
//! grid in the shifted monomial basis `(x - c1)^i (y - c2)^j` is the simplest
//! faithful representation. One-dimensional polynomials use `j == 0` only.

use crate::error::{Error, Result};
use crate::geometry::{multi_order, MultiIndex, Point};

#[derive(Debug, Clone, PartialEq)]
pub struct Poly {
    pub dim: usize,
    /// Expansion point of the monomial basis.
    pub center: Point,
    /// Maximal exponent stored per coordinate.
    deg: usize,
    /// `coef[i + j*(deg+1)]` multiplies `(x-c1)^i (y-c2)^j`.
    coef: Vec<f64>,
}

impl Poly {
    pub fn zero(dim: usize, center: Point, deg: usize) -> Self {
        Poly { dim, center, deg, coef: vec![0.0; (deg + 1) * (deg + 1)] }
    }

    /// Constant polynomial.
    pub fn constant(dim: usize, center: Point, value: f64) -> Self {
        let mut p = Poly::zero(dim, center, 0);
        p.coef[0] = value;
        p
    }

    pub fn max_exponent(&self) -> usize {
        self.deg
    }

    pub fn coeff(&self, k: MultiIndex) -> f64 {
        if k[0] > self.deg || k[1] > self.deg {
            0.0
        } else {
            self.coef[k[0] + k[1] * (self.deg + 1)]
        }
    }

    pub fn set_coeff(&mut self, k: MultiIndex, value: f64) {
        assert!(k[0] <= self.deg && k[1] <= self.deg, "exponent out of range");
        assert!(self.dim == 2 || k[1] == 0, "y-exponent in a 1-d polynomial");
        self.coef[k[0] + k[1] * (self.deg + 1)] = value;
    }

    pub fn add_coeff(&mut self, k: MultiIndex, value: f64) {
        assert!(k[0] <= self.deg && k[1] <= self.deg, "exponent out of range");
        self.coef[k[0] + k[1] * (self.deg + 1)] += value;
    }

    pub fn eval(&self, x: Point) -> f64 {
        let u = x[0] - self.center[0];
        let v = x[1] - self.center[1];
        // Horner in u for each power of v, then Horner in v.
        let n = self.deg + 1;
        let mut acc = 0.0;
        for j in (0..n).rev() {
            let mut row = 0.0;
            for i in (0..n).rev() {
                row = row * u + self.coef[i + j * n];
            }
            acc = acc * v + row;
        }
        acc
    }

    /// Partial derivative `D^k`, exact on the coefficients.
    pub fn deriv(&self, k: MultiIndex) -> Poly {
        let mut p = self.clone();
        for _ in 0..k[0] {
            p = p.deriv_axis(0);
        }
        for _ in 0..k[1] {
            p = p.deriv_axis(1);
        }
        p
    }

    fn deriv_axis(&self, axis: usize) -> Poly {
        let n = self.deg + 1;
        let mut out = Poly::zero(self.dim, self.center, self.deg);
        for j in 0..n {
            for i in 0..n {
                let c = self.coef[i + j * n];
                if c == 0.0 {
                    continue;
                }
                match axis {
                    0 if i > 0 => out.coef[(i - 1) + j * n] += c * i as f64,
                    1 if j > 0 => out.coef[i + (j - 1) * n] += c * j as f64,
                    _ => {}
                }
            }
        }
        out
    }

    pub fn scale(&mut self, s: f64) {
        for c in &mut self.coef {
            *c *= s;
        }
    }

    /// `self - other`; both polynomials must share the expansion point.
    pub fn sub(&self, other: &Poly) -> Result<Poly> {
        if self.center != other.center || self.dim != other.dim {
            return Err(Error::InvalidParameter(
                "polynomial subtraction requires matching centers".into(),
            ));
        }
        let deg = self.deg.max(other.deg);
        let mut out = Poly::zero(self.dim, self.center, deg);
        for j in 0..=deg {
            for i in 0..=deg {
                let a = self.coeff([i, j]);
                let b = other.coeff([i, j]);
                if a != 0.0 || b != 0.0 {
                    out.set_coeff([i, j], a - b);
                }
            }
        }
        Ok(out)
    }

    /// Largest absolute coefficient, restricted to total degree `<= max_total`
    /// when `max_total` is given.
    pub fn max_abs_coeff(&self, max_total: Option<usize>) -> f64 {
        let mut m: f64 = 0.0;
        for j in 0..=self.deg {
            for i in 0..=self.deg {
                if let Some(t) = max_total {
                    if multi_order([i, j]) > t {
                        continue;
                    }
                }
                m = m.max(self.coeff([i, j]).abs());
            }
        }
        m
    }

    /// Maximum of `|self|` over a dense sample grid of the box `[lo, hi]`.
    /// Used by probes that need an `L^inf` norm of a known polynomial.
    pub fn sup_on_box(&self, lo: Point, hi: Point, samples_per_axis: usize) -> f64 {
        let n = samples_per_axis.max(2);
        let mut m: f64 = 0.0;
        if self.dim == 1 {
            for i in 0..n {
                let x = lo[0] + (hi[0] - lo[0]) * i as f64 / (n - 1) as f64;
                m = m.max(self.eval([x, 0.0]).abs());
            }
        } else {
            for j in 0..n {
                let y = lo[1] + (hi[1] - lo[1]) * j as f64 / (n - 1) as f64;
                for i in 0..n {
                    let x = lo[0] + (hi[0] - lo[0]) * i as f64 / (n - 1) as f64;
                    m = m.max(self.eval([x, y]).abs());
                }
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_and_deriv_match_hand_computation() {
        // p(x,y) = 2 + 3(x-1) + (x-1)^2 (y+2)
        let mut p = Poly::zero(2, [1.0, -2.0], 2);
        p.set_coeff([0, 0], 2.0);
        p.set_coeff([1, 0], 3.0);
        p.set_coeff([2, 1], 1.0);
        let x = [1.5, -1.0];
        assert!((p.eval(x) - (2.0 + 1.5 + 0.25 * 1.0)).abs() < 1e-15);

        let dx = p.deriv([1, 0]);
        // d/dx = 3 + 2(x-1)(y+2)
        assert!((dx.eval(x) - (3.0 + 2.0 * 0.5 * 1.0)).abs() < 1e-15);

        let dxy = p.deriv([1, 1]);
        assert!((dxy.eval(x) - 2.0 * 0.5).abs() < 1e-15);
    }

    #[test]
    fn subtraction_requires_matching_center() {
        let a = Poly::constant(1, [0.0, 0.0], 1.0);
        let b = Poly::constant(1, [1.0, 0.0], 1.0);
        assert!(a.sub(&b).is_err());
        let c = Poly::constant(1, [0.0, 0.0], 0.25);
        assert_eq!(a.sub(&c).unwrap().coeff([0, 0]), 0.75);
    }

    #[test]
    fn sup_on_box_finds_interior_extremum() {
        // p(x) = x(1-x) has sup 0.25 on [0,1]
        let mut p = Poly::zero(1, [0.0, 0.0], 2);
        p.set_coeff([1, 0], 1.0);
        p.set_coeff([2, 0], -1.0);
        let m = p.sup_on_box([0.0, 0.0], [1.0, 0.0], 101);
        assert!((m - 0.25).abs() < 1e-4);
    }
}
