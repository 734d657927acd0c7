//! Gaussian quadrature nodes and adaptive one-dimensional integrators.
//!
//! Nodes and weights come from the Golub–Welsch algorithm: the three-term
//! recurrence coefficients of the orthogonal polynomial family define a
//! symmetric tridiagonal Jacobi matrix whose eigenvalues are the nodes and
//! whose first eigenvector components give the weights. We only ever need a
//! few dozen points, so a dense symmetric eigensolve is plenty.
//!
//! Rules are cached per order (and per Jacobi exponent pair), which also
//! guarantees that repeated runs see bit-identical nodes.

use std::collections::BTreeMap;
use std::sync::Mutex;

use nalgebra::DMatrix;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Nodes/weights on the reference interval `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct Rule1d {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule1d {
    /// Integrate `f` over `[a, b]` (affine map of the reference rule).
    /// For a Jacobi rule the singular factor is *included* in the weights,
    /// so `f` is only the smooth part.
    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc = 0.0;
        for (t, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * t);
        }
        acc * half
    }
}

fn golub_welsch(diag: &[f64], offdiag: &[f64], mu0: f64) -> Rule1d {
    let n = diag.len();
    let mut m = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = diag[i];
        if i + 1 < n {
            m[(i, i + 1)] = offdiag[i];
            m[(i + 1, i)] = offdiag[i];
        }
    }
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for &i in &order {
        nodes.push(eig.eigenvalues[i]);
        let v0 = eig.eigenvectors[(0, i)];
        weights.push(mu0 * v0 * v0);
    }
    Rule1d { nodes, weights }
}

/// `n`-point Gauss–Legendre rule on `[-1, 1]`; exact on degree `2n - 1`.
pub fn legendre(n: usize) -> Rule1d {
    assert!(n >= 1, "empty quadrature rule");
    static CACHE: Mutex<BTreeMap<usize, Rule1d>> = Mutex::new(BTreeMap::new());
    let mut cache = CACHE.lock().unwrap();
    cache
        .entry(n)
        .or_insert_with(|| {
            let diag = vec![0.0; n];
            let offdiag: Vec<f64> = (1..n)
                .map(|k| {
                    let k = k as f64;
                    k / (4.0 * k * k - 1.0).sqrt()
                })
                .collect();
            golub_welsch(&diag, &offdiag, 2.0)
        })
        .clone()
}

/// `n`-point Gauss–Jacobi rule for the weight `(1-x)^a (1+x)^b` on `[-1, 1]`.
/// The weight is folded into the quadrature weights; exactness is degree
/// `2n - 1` against the weighted measure. Requires `a, b > -1`.
pub fn jacobi(n: usize, a: f64, b: f64) -> Result<Rule1d> {
    assert!(n >= 1, "empty quadrature rule");
    if a <= -1.0 || b <= -1.0 {
        return Err(Error::NonIntegrable(format!(
            "Jacobi weight exponents ({a}, {b}) must exceed -1"
        )));
    }
    static CACHE: Mutex<BTreeMap<(usize, u64, u64), Rule1d>> = Mutex::new(BTreeMap::new());
    let key = (n, a.to_bits(), b.to_bits());
    let mut cache = CACHE.lock().unwrap();
    if let Some(r) = cache.get(&key) {
        return Ok(r.clone());
    }

    // Recurrence coefficients, Gautschi's `r_jacobi` convention.
    let mu0 = (a + b + 1.0) * std::f64::consts::LN_2 + ln_gamma(a + 1.0) + ln_gamma(b + 1.0)
        - ln_gamma(a + b + 2.0);
    let mu0 = mu0.exp();
    let mut diag = Vec::with_capacity(n);
    let mut offdiag = Vec::with_capacity(n.saturating_sub(1));
    diag.push((b - a) / (a + b + 2.0));
    for k in 1..n {
        let k = k as f64;
        let denom = (2.0 * k + a + b) * (2.0 * k + a + b + 2.0);
        diag.push((b * b - a * a) / denom);
        let beta = if k == 1.0 {
            4.0 * (a + 1.0) * (b + 1.0) / ((a + b + 2.0).powi(2) * (a + b + 3.0))
        } else {
            4.0 * k * (k + a) * (k + b) * (k + a + b)
                / ((2.0 * k + a + b).powi(2) * (2.0 * k + a + b + 1.0) * (2.0 * k + a + b - 1.0))
        };
        offdiag.push(beta.sqrt());
    }
    let rule = golub_welsch(&diag, &offdiag, mu0);
    cache.insert(key, rule.clone());
    Ok(rule)
}

/// Composite Gauss panels doubled until two successive refinements agree to
/// `tol` (relative). Intended for integrands that are smooth on `[a, b]`.
pub fn integrate_smooth(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let rule = legendre(16);
    let mut panels = 1usize;
    let mut prev = f64::NAN;
    loop {
        let h = (b - a) / panels as f64;
        let mut acc = 0.0;
        for i in 0..panels {
            let lo = a + i as f64 * h;
            acc += rule.integrate(lo, lo + h, &mut *f);
        }
        if prev.is_finite() {
            let scale = acc.abs().max(prev.abs()).max(f64::MIN_POSITIVE);
            if (acc - prev).abs() <= tol * scale || (acc - prev).abs() < 1e-300 {
                return Ok(acc);
            }
        }
        prev = acc;
        panels *= 2;
        if panels > 4096 {
            return Err(Error::QuadratureFailure(format!(
                "smooth integrator did not reach tol {tol} on [{a}, {b}]"
            )));
        }
    }
}

/// Maximum number of dyadic levels used when grading toward a singular point.
/// An endpoint singularity `x^g` sheds only a factor `2^{-(1+g)}` per level,
/// so tight tolerances near `g = -1` legitimately need well over a hundred
/// levels; each level costs one 16-point panel.
pub const GRADED_LEVEL_CAP: usize = 200;

/// Integrate `f` over `[a, b]` where `f` may be non-smooth (but integrable)
/// at the marked points. Panels are graded dyadically toward each marked
/// point; accumulation stops when the last level's contribution drops below
/// `tol` relative to the running total.
pub fn integrate_graded(
    f: &mut dyn FnMut(f64) -> f64,
    a: f64,
    b: f64,
    singular: &[f64],
    tol: f64,
) -> Result<f64> {
    if b <= a {
        return Ok(0.0);
    }
    // Split at interior singular points so each piece is singular at
    // endpoints only.
    let mut cuts: Vec<f64> = singular.iter().copied().filter(|s| *s > a && *s < b).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut pieces = Vec::with_capacity(cuts.len() + 1);
    let mut lo = a;
    for c in cuts {
        pieces.push((lo, c));
        lo = c;
    }
    pieces.push((lo, b));

    let touch = |x: f64, lo: f64, hi: f64| -> bool {
        let scale = (hi - lo).abs().max(lo.abs()).max(hi.abs()).max(1e-300);
        (x - lo).abs() <= 1e-13 * scale || (x - hi).abs() <= 1e-13 * scale
    };

    let mut total = 0.0;
    for (lo, hi) in pieces {
        let sing_lo = singular.iter().any(|&s| touch(s, lo, lo));
        let sing_hi = singular.iter().any(|&s| touch(s, hi, hi));
        total += integrate_piece(f, lo, hi, sing_lo, sing_hi, tol)?;
    }
    Ok(total)
}

fn integrate_piece(
    f: &mut dyn FnMut(f64) -> f64,
    lo: f64,
    hi: f64,
    sing_lo: bool,
    sing_hi: bool,
    tol: f64,
) -> Result<f64> {
    if !sing_lo && !sing_hi {
        return integrate_smooth(f, lo, hi, tol);
    }
    let rule = legendre(16);
    let len = hi - lo;
    // Fractions of the interval assigned to each graded end.
    let (frac_lo, frac_hi) = if sing_lo && sing_hi { (0.5, 0.5) } else if sing_lo { (1.0, 0.0) } else { (0.0, 1.0) };

    let mut acc = 0.0;
    let mut graded_end = |from_lo: bool, frac: f64, acc: &mut f64| -> Result<()> {
        if frac == 0.0 {
            return Ok(());
        }
        let span = len * frac;
        let mut outer = span; // distance from the singular endpoint
        let mut level = 0usize;
        loop {
            let inner = outer * 0.5;
            let (pa, pb) = if from_lo { (lo + inner, lo + outer) } else { (hi - outer, hi - inner) };
            let contribution = rule.integrate(pa, pb, &mut *f);
            *acc += contribution;
            level += 1;
            let scale = acc.abs().max(f64::MIN_POSITIVE);
            // The tail beyond the last panel is a geometric multiple of the
            // last contribution for the integrands we grade toward (algebraic
            // or log-type singularities with exponent > -1), hence the safety
            // factor on the stopping test.
            if contribution.abs() <= 0.05 * tol * scale && level >= 6 {
                return Ok(());
            }
            if level >= GRADED_LEVEL_CAP {
                if contribution.abs() <= 10.0 * tol * scale {
                    return Ok(());
                }
                return Err(Error::QuadratureFailure(format!(
                    "graded integrator hit level cap {GRADED_LEVEL_CAP} (last increment {contribution:e})"
                )));
            }
            outer = inner;
        }
    };

    graded_end(true, frac_lo, &mut acc)?;
    graded_end(false, frac_hi, &mut acc)?;
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn legendre_exact_on_polynomials() {
        let r = legendre(3); // exact through degree 5
        let val = r.integrate(0.0, 1.0, |x| x.powi(5));
        assert_relative_eq!(val, 1.0 / 6.0, max_relative = 1e-14);
        let val = r.integrate(-1.0, 2.0, |x| 1.0 + x + x.powi(4));
        assert_relative_eq!(val, 3.0 + 1.5 + 33.0 / 5.0, max_relative = 1e-14);
    }

    #[test]
    fn jacobi_matches_beta_moments() {
        // int_{-1}^1 (1+x)^b x^k dx, b = -0.5: substitute t=(1+x)/2.
        // k = 0: 2^{b+1}/(b+1); k = 1: 2^{b+1} (2/(b+2) - 1/(b+1)).
        let b = -0.5;
        let r = jacobi(6, 0.0, b).unwrap();
        let m0: f64 = r.weights.iter().sum();
        assert_relative_eq!(m0, 2f64.powf(b + 1.0) / (b + 1.0), max_relative = 1e-13);
        let m1: f64 = r.nodes.iter().zip(&r.weights).map(|(x, w)| w * x).sum();
        let exact = 2f64.powf(b + 1.0) * (2.0 / (b + 2.0) - 1.0 / (b + 1.0));
        assert_relative_eq!(m1, exact, max_relative = 1e-12);
    }

    #[test]
    fn jacobi_rejects_divergent_exponent() {
        assert!(matches!(jacobi(4, 0.0, -1.0), Err(Error::NonIntegrable(_))));
    }

    #[test]
    fn jacobi_with_zero_exponents_is_legendre() {
        let gj = jacobi(5, 0.0, 0.0).unwrap();
        let gl = legendre(5);
        for (a, b) in gj.nodes.iter().zip(&gl.nodes) {
            assert_relative_eq!(a, b, epsilon = 1e-13);
        }
    }

    #[test]
    fn graded_integrator_handles_inverse_sqrt() {
        // int_0^1 x^{-1/2} dx = 2
        let mut f = |x: f64| x.powf(-0.5);
        let v = integrate_graded(&mut f, 0.0, 1.0, &[0.0], 1e-12).unwrap();
        assert_relative_eq!(v, 2.0, max_relative = 1e-10);
    }

    #[test]
    fn graded_integrator_splits_interior_singularity() {
        // int_{-1}^1 |x|^{-1/2} dx = 4
        let mut f = |x: f64| x.abs().powf(-0.5);
        let v = integrate_graded(&mut f, -1.0, 1.0, &[0.0], 1e-12).unwrap();
        assert_relative_eq!(v, 4.0, max_relative = 1e-10);
    }

    #[test]
    fn smooth_integrator_on_oscillatory_function() {
        let mut f = |x: f64| (10.0 * x).sin();
        let v = integrate_smooth(&mut f, 0.0, 1.0, 1e-13).unwrap();
        assert_relative_eq!(v, (1.0 - (10.0f64).cos()) / 10.0, max_relative = 1e-12);
    }
}
