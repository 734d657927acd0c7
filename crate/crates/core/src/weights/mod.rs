//! Weight functions and Muckenhoupt-class diagnostics.
//!
//! A [`Weight`] is a nonnegative function that may vanish or blow up on a
//! small set: a power of the distance to a point, a power of the distance to
//! the hyperplane `y = 0`, or a regularised point-mass weight that behaves
//! like `d^{n-2} / log^2 d` near its center. The module computes weighted
//! measures of balls and boxes, averaged-measure ratios
//! `(avg_B w) (avg_B w^{1/(1-p)})^{p-1}`, and estimates the class constant by
//! sampling a deterministic family of balls.
//!
//! One-dimensional integrals of powers use closed-form antiderivatives; all
//! other cases reduce to radial or polar integrals with panels graded
//! dyadically toward the singular point.

mod measure;

use crate::error::{Error, Result};
use crate::geometry::{dist, Ball, Point, Region};

pub use measure::{weighted_measure, weighted_measure_pow};

/// Ratios above this cap are reported as divergent by
/// [`estimate_ap_constant`].
pub const DIVERGENCE_CAP: f64 = 1e6;

/// Default relative tolerance for weighted measures.
pub const DEFAULT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum WeightKind {
    /// `w(x) = c`.
    Constant(f64),
    /// `w(x) = |x - center|^exponent`.
    Power { center: Point, exponent: f64 },
    /// `w(x) = |y|^alpha` where `y` is the last coordinate (the even
    /// extension of `y^alpha` across the hyperplane `y = 0`).
    Extension { alpha: f64 },
    /// Regularised point-mass weight. With `d(x) = |x - center| / (2 diameter)`:
    /// `w = d^{n-2} / log^2 d` for `0 < d < 1/2`, constant `2^{2-n} / log^2 2`
    /// beyond, which matches the inner branch at `d = 1/2`.
    DiracLog { center: Point, diameter: f64 },
    Reciprocal(Box<Weight>),
    Product(Box<Weight>, Box<Weight>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Weight {
    pub(crate) kind: WeightKind,
    pub(crate) dim: usize,
}

impl Weight {
    pub fn constant(dim: usize, value: f64) -> Result<Self> {
        check_dim(dim)?;
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::InvalidParameter(format!("constant weight {value}")));
        }
        Ok(Weight { kind: WeightKind::Constant(value), dim })
    }

    pub fn one(dim: usize) -> Self {
        Weight { kind: WeightKind::Constant(1.0), dim }
    }

    pub fn power(dim: usize, center: Point, exponent: f64) -> Result<Self> {
        check_dim(dim)?;
        if !exponent.is_finite() {
            return Err(Error::InvalidParameter("power exponent must be finite".into()));
        }
        Ok(Weight { kind: WeightKind::Power { center, exponent }, dim })
    }

    /// `|y|^alpha` in the last coordinate; `alpha` restricted to `(-1, 1)` so
    /// the weight is locally integrable together with its reciprocal.
    pub fn extension(dim: usize, alpha: f64) -> Result<Self> {
        check_dim(dim)?;
        if !(alpha > -1.0 && alpha < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "extension exponent {alpha} outside (-1, 1)"
            )));
        }
        Ok(Weight { kind: WeightKind::Extension { alpha }, dim })
    }

    pub fn dirac_log(dim: usize, center: Point, diameter: f64) -> Result<Self> {
        check_dim(dim)?;
        if !(diameter > 0.0) {
            return Err(Error::InvalidParameter("dirac-log diameter must be positive".into()));
        }
        Ok(Weight { kind: WeightKind::DiracLog { center, diameter }, dim })
    }

    /// Pointwise reciprocal. Taking the reciprocal twice returns the original
    /// weight structurally, so the round trip is exact.
    pub fn reciprocal(self) -> Self {
        match self.kind {
            WeightKind::Reciprocal(inner) => *inner,
            kind => {
                let dim = self.dim;
                Weight { kind: WeightKind::Reciprocal(Box::new(Weight { kind, dim })), dim }
            }
        }
    }

    pub fn product(a: Weight, b: Weight) -> Result<Self> {
        if a.dim != b.dim {
            return Err(Error::InvalidParameter("product of weights in different dimensions".into()));
        }
        let dim = a.dim;
        Ok(Weight { kind: WeightKind::Product(Box::new(a), Box::new(b)), dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &WeightKind {
        &self.kind
    }

    /// Pointwise evaluation. At a singular point the value may be `0` or
    /// `+inf`; quadrature rules never place nodes there.
    pub fn eval(&self, x: Point) -> f64 {
        match &self.kind {
            WeightKind::Constant(c) => *c,
            WeightKind::Power { center, exponent } => {
                let d = dist(self.dim, *center, x);
                if d == 0.0 {
                    if *exponent > 0.0 {
                        0.0
                    } else if *exponent == 0.0 {
                        1.0
                    } else {
                        f64::INFINITY
                    }
                } else {
                    d.powf(*exponent)
                }
            }
            WeightKind::Extension { alpha } => {
                let y = x[self.dim - 1].abs();
                if y == 0.0 {
                    if *alpha > 0.0 {
                        0.0
                    } else if *alpha == 0.0 {
                        1.0
                    } else {
                        f64::INFINITY
                    }
                } else {
                    y.powf(*alpha)
                }
            }
            WeightKind::DiracLog { center, diameter } => {
                let d = dist(self.dim, *center, x) / (2.0 * diameter);
                let n = self.dim as f64;
                if d >= 0.5 {
                    2f64.powf(2.0 - n) / std::f64::consts::LN_2.powi(2)
                } else if d == 0.0 {
                    if self.dim == 2 {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                } else {
                    d.powf(n - 2.0) / d.ln().powi(2)
                }
            }
            WeightKind::Reciprocal(w) => 1.0 / w.eval(x),
            WeightKind::Product(a, b) => a.eval(x) * b.eval(x),
        }
    }

    /// `w(x)^sigma` evaluated pointwise.
    pub fn eval_pow(&self, x: Point, sigma: f64) -> f64 {
        if sigma == 1.0 {
            self.eval(x)
        } else {
            self.eval(x).powf(sigma)
        }
    }

    /// The weight `w^sigma` as a first-class object, when representable:
    /// powers, constants and extension weights are closed under powering;
    /// the dirac-log weight only under `sigma = +/- 1`.
    pub fn powered(&self, sigma: f64) -> Result<Weight> {
        let dim = self.dim;
        let kind = match &self.kind {
            WeightKind::Constant(c) => WeightKind::Constant(c.powf(sigma)),
            WeightKind::Power { center, exponent } => {
                WeightKind::Power { center: *center, exponent: exponent * sigma }
            }
            WeightKind::Extension { alpha } => WeightKind::Extension { alpha: alpha * sigma },
            WeightKind::DiracLog { .. } => {
                if sigma == 1.0 {
                    self.kind.clone()
                } else if sigma == -1.0 {
                    return Ok(self.clone().reciprocal());
                } else {
                    return Err(Error::UnsupportedWeight(format!(
                        "dirac-log weight raised to power {sigma}"
                    )));
                }
            }
            WeightKind::Reciprocal(w) => return w.powered(-sigma),
            WeightKind::Product(a, b) => {
                WeightKind::Product(Box::new(a.powered(sigma)?), Box::new(b.powered(sigma)?))
            }
        };
        Ok(Weight { kind, dim })
    }

    /// The dual weight `w^{-1/(p-1)}` appearing in the class definition.
    pub fn dual(&self, p: f64) -> Result<Weight> {
        check_p(p)?;
        self.powered(-1.0 / (p - 1.0))
    }

    /// Points where the weight degenerates radially (vanishes or blows up).
    pub fn singular_centers(&self) -> Vec<Point> {
        let mut out = Vec::new();
        self.collect_singular_centers(&mut out);
        out.dedup_by(|a, b| a == b);
        out
    }

    fn collect_singular_centers(&self, out: &mut Vec<Point>) {
        match &self.kind {
            WeightKind::Constant(_) => {}
            WeightKind::Power { center, exponent } => {
                if *exponent != 0.0 {
                    out.push(*center);
                }
            }
            WeightKind::Extension { .. } => {}
            WeightKind::DiracLog { center, .. } => out.push(*center),
            WeightKind::Reciprocal(w) => w.collect_singular_centers(out),
            WeightKind::Product(a, b) => {
                a.collect_singular_centers(out);
                b.collect_singular_centers(out);
            }
        }
    }

    /// Exponent of the extension factor, if the weight contains one.
    pub fn axis_exponent(&self) -> Option<f64> {
        match &self.kind {
            WeightKind::Extension { alpha } => Some(*alpha),
            WeightKind::Reciprocal(w) => w.axis_exponent().map(|a| -a),
            WeightKind::Product(a, b) => match (a.axis_exponent(), b.axis_exponent()) {
                (Some(x), Some(y)) => Some(x + y),
                (Some(x), None) | (None, Some(x)) => Some(x),
                (None, None) => None,
            },
            _ => None,
        }
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 1 || dim == 2 {
        Ok(())
    } else {
        Err(Error::UnsupportedDomain(format!("dimension {dim}")))
    }
}

fn check_p(p: f64) -> Result<()> {
    if p > 1.0 && p.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("Lebesgue exponent p = {p} must lie in (1, inf)")))
    }
}

/// `(avg_B w) * (avg_B w^{1/(1-p)})^{p-1}` over a single ball. Always `>= 1`
/// up to quadrature error, with equality iff the weight is constant on `B`.
pub fn muckenhoupt_ratio(w: &Weight, p: f64, ball: &Ball, tol: f64) -> Result<f64> {
    check_p(p)?;
    let region = Region::Ball(*ball);
    let vol = ball.volume();
    let m1 = weighted_measure_pow(w, 1.0, &region, tol)? / vol;
    let m2 = weighted_measure_pow(w, 1.0 / (1.0 - p), &region, tol)? / vol;
    Ok(m1 * m2.powf(p - 1.0))
}

/// Deterministic family of sample balls: dyadically shrinking balls centered
/// at a point of interest, optionally flanked by off-center balls whose
/// distance to the center is a fixed multiple of their radius.
#[derive(Debug, Clone)]
pub struct BallFamily {
    pub balls: Vec<Ball>,
}

impl BallFamily {
    /// Centered balls `B(center, base_radius * 2^-j)`, `j = 0..=levels`.
    pub fn dyadic(dim: usize, center: Point, base_radius: f64, levels: usize) -> Result<Self> {
        let mut balls = Vec::with_capacity(levels + 1);
        for j in 0..=levels {
            balls.push(Ball::new(dim, center, base_radius * 0.5f64.powi(j as i32))?);
        }
        Ok(BallFamily { balls })
    }

    /// The dyadic family plus, per level, off-center balls at offsets
    /// `{2r, 4r, 8r}` along the first axis. The offsets keep every singular
    /// point outside the off-center balls, which is the regime complementary
    /// to the centered one.
    pub fn dyadic_with_offsets(
        dim: usize,
        center: Point,
        base_radius: f64,
        levels: usize,
    ) -> Result<Self> {
        let mut balls = Vec::new();
        for j in 0..=levels {
            let r = base_radius * 0.5f64.powi(j as i32);
            balls.push(Ball::new(dim, center, r)?);
            for scale in [2.0, 4.0, 8.0] {
                let c = [center[0] + scale * r, center[1]];
                balls.push(Ball::new(dim, c, r)?);
            }
        }
        Ok(BallFamily { balls })
    }

    /// Family attached to a weight: dyadic-with-offsets around each singular
    /// center, or around the origin for weights without one.
    pub fn for_weight(w: &Weight, base_radius: f64, levels: usize) -> Result<Self> {
        let centers = w.singular_centers();
        if centers.is_empty() {
            return Self::dyadic_with_offsets(w.dim(), [0.0, 0.0], base_radius, levels);
        }
        let mut balls = Vec::new();
        for c in centers {
            balls.extend(Self::dyadic_with_offsets(w.dim(), c, base_radius, levels)?.balls);
        }
        Ok(BallFamily { balls })
    }

    pub fn len(&self) -> usize {
        self.balls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.balls.is_empty()
    }
}

/// Result of sampling the averaged-measure ratio over a ball family.
#[derive(Debug, Clone)]
pub struct ApEstimate {
    pub p: f64,
    /// Largest finite sampled ratio.
    pub sampled_max: f64,
    /// Ball attaining `sampled_max`.
    pub argmax: Option<Ball>,
    /// Set when some ball produced a divergent integral or a ratio above
    /// [`DIVERGENCE_CAP`]: the weight is not in the class for this `p`.
    pub diverged: bool,
    /// `(ball, ratio)` rows; divergent balls carry `f64::INFINITY`.
    pub per_ball: Vec<(Ball, f64)>,
}

/// Sample the class constant over a ball family. Divergent integrals mark
/// the estimate as diverged instead of failing the whole scan.
pub fn estimate_ap_constant(
    w: &Weight,
    p: f64,
    family: &BallFamily,
    tol: f64,
) -> Result<ApEstimate> {
    check_p(p)?;
    let mut est = ApEstimate {
        p,
        sampled_max: f64::NEG_INFINITY,
        argmax: None,
        diverged: false,
        per_ball: Vec::with_capacity(family.balls.len()),
    };
    for ball in &family.balls {
        match muckenhoupt_ratio(w, p, ball, tol) {
            Ok(r) => {
                if r > DIVERGENCE_CAP || !r.is_finite() {
                    est.diverged = true;
                }
                if r > est.sampled_max {
                    est.sampled_max = r;
                    est.argmax = Some(*ball);
                }
                est.per_ball.push((*ball, r));
            }
            Err(Error::NonIntegrable(_)) => {
                est.diverged = true;
                est.per_ball.push((*ball, f64::INFINITY));
            }
            Err(e) => return Err(e),
        }
    }
    if est.sampled_max == f64::NEG_INFINITY {
        est.sampled_max = f64::NAN;
    }
    Ok(est)
}

#[derive(Debug, Clone, Copy)]
pub struct StrongDoubling {
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
}

/// Check the strong doubling inequality
/// `w(B) <= C (|B| / |E|)^p w(E)` for a measurable pair `E subset B`,
/// with `C` a sampled class constant.
pub fn check_strong_doubling(
    w: &Weight,
    p: f64,
    class_constant: f64,
    inner: &Ball,
    outer: &Ball,
    tol: f64,
) -> Result<StrongDoubling> {
    check_p(p)?;
    let sep = dist(outer.dim, inner.center, outer.center);
    if sep + inner.radius > outer.radius * (1.0 + 1e-12) {
        return Err(Error::InvalidParameter("inner set not contained in outer ball".into()));
    }
    let lhs = weighted_measure(w, &Region::Ball(*outer), tol)?;
    let we = weighted_measure(w, &Region::Ball(*inner), tol)?;
    let rhs = class_constant * (outer.volume() / inner.volume()).powf(p) * we;
    Ok(StrongDoubling { lhs, rhs, satisfied: lhs <= rhs * (1.0 + 1e-9) })
}

/// Evaluate both sides of the duality identity: the ratio of the dual weight
/// `w^{-1/(p-1)}` at the conjugate exponent `p'` equals the `1/(p-1)` power
/// of the ratio of `w` at `p`. The two sides are computed through different
/// code paths, so their agreement cross-checks the measure engine.
pub fn dual_weight_identity(w: &Weight, p: f64, ball: &Ball, tol: f64) -> Result<(f64, f64)> {
    check_p(p)?;
    let p_conj = p / (p - 1.0);
    let dual = w.dual(p)?;
    let r1 = muckenhoupt_ratio(&dual, p_conj, ball, tol)?;
    let r2 = muckenhoupt_ratio(w, p, ball, tol)?.powf(1.0 / (p - 1.0));
    Ok((r1, r2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_ball_1d() -> Ball {
        Ball::new(1, [0.0, 0.0], 1.0).unwrap()
    }

    #[test]
    fn constant_weight_measures_and_ratio() {
        let w = Weight::one(1);
        let b = unit_ball_1d();
        let m = weighted_measure(&w, &Region::Ball(b), DEFAULT_TOL).unwrap();
        assert_eq!(m, 2.0);
        let r = muckenhoupt_ratio(&w, 2.0, &b, DEFAULT_TOL).unwrap();
        assert_relative_eq!(r, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn sqrt_power_measure_is_four_thirds() {
        let w = Weight::power(1, [0.0, 0.0], 0.5).unwrap();
        let m = weighted_measure(&w, &Region::Ball(unit_ball_1d()), DEFAULT_TOL).unwrap();
        assert_relative_eq!(m, 4.0 / 3.0, epsilon = 1e-14);
        // Translated copy over a translated ball: identical by change of variables.
        let wt = Weight::power(1, [5.0, 0.0], 0.5).unwrap();
        let bt = Ball::new(1, [5.0, 0.0], 1.0).unwrap();
        let mt = weighted_measure(&wt, &Region::Ball(bt), DEFAULT_TOL).unwrap();
        assert_relative_eq!(mt, m, epsilon = 1e-13);
    }

    #[test]
    fn inverse_square_is_non_integrable() {
        let w = Weight::power(1, [0.0, 0.0], -2.0).unwrap();
        match weighted_measure(&w, &Region::Ball(unit_ball_1d()), DEFAULT_TOL) {
            Err(Error::NonIntegrable(_)) => {}
            other => panic!("expected NonIntegrable, got {other:?}"),
        }
    }

    #[test]
    fn sqrt_power_ratio_centered_and_off_center() {
        let w = Weight::power(1, [0.0, 0.0], 0.5).unwrap();
        // Centered: (avg |x|^{1/2})(avg |x|^{-1/2}) = (2/3) * 2 = 4/3 at any radius.
        for r in [1.0, 0.125, 7.8125e-3] {
            let b = Ball::new(1, [0.0, 0.0], r).unwrap();
            let ratio = muckenhoupt_ratio(&w, 2.0, &b, DEFAULT_TOL).unwrap();
            assert_relative_eq!(ratio, 4.0 / 3.0, epsilon = 1e-12);
        }
        // Far from the singularity the weight is nearly constant: ratio in [1, 4/3).
        let far = Ball::new(1, [5.0, 0.0], 1.0).unwrap();
        let ratio = muckenhoupt_ratio(&w, 2.0, &far, DEFAULT_TOL).unwrap();
        assert!(ratio >= 1.0 - 1e-12 && ratio < 4.0 / 3.0, "ratio = {ratio}");
    }

    #[test]
    fn ratio_monotone_in_exponent() {
        // Larger p admits more weights: the ratio at r >= p is bounded by the
        // ratio at p (checked here on a sample).
        let w = Weight::power(1, [0.0, 0.0], 0.5).unwrap();
        let b = unit_ball_1d();
        let r2 = muckenhoupt_ratio(&w, 2.0, &b, DEFAULT_TOL).unwrap();
        let r3 = muckenhoupt_ratio(&w, 3.0, &b, DEFAULT_TOL).unwrap();
        assert!(r3 <= r2 + 1e-12, "r3 = {r3}, r2 = {r2}");
    }

    #[test]
    fn dual_identity_closed_form() {
        // For w = |x|^{1/2}, p = 3 on B(0,1) both sides equal
        // (4/3) sqrt(2/3) = 4 sqrt(2) / (3 sqrt(3)).
        let w = Weight::power(1, [0.0, 0.0], 0.5).unwrap();
        let b = unit_ball_1d();
        let (r1, r2) = dual_weight_identity(&w, 3.0, &b, DEFAULT_TOL).unwrap();
        let expected = 1.088_662_107_903_635;
        assert_relative_eq!(r1, expected, epsilon = 1e-12);
        assert_relative_eq!(r2, expected, epsilon = 1e-12);
    }

    #[test]
    fn dual_identity_for_p2_is_symmetric() {
        let w = Weight::power(1, [0.0, 0.0], 0.5).unwrap();
        let b = unit_ball_1d();
        let (r1, r2) = dual_weight_identity(&w, 2.0, &b, DEFAULT_TOL).unwrap();
        assert_relative_eq!(r1, 4.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(r2, 4.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn reciprocal_round_trip_is_structural() {
        let w = Weight::power(2, [0.3, 0.4], -0.25).unwrap();
        let back = w.clone().reciprocal().reciprocal();
        assert_eq!(w, back);
        let x = [1.0, 2.0];
        assert_eq!(w.eval(x), back.eval(x));
    }

    #[test]
    fn divergence_flags_track_the_admissible_range() {
        // In one dimension with p = 2, |x|^g is in the class iff -1 < g < 1.
        for (g, expect_diverged) in [
            (-1.5, true),
            (-0.5, false),
            (0.5, false),
            (0.9, false),
            (1.1, true),
            (1.5, true),
        ] {
            let w = Weight::power(1, [0.0, 0.0], g).unwrap();
            let fam = BallFamily::for_weight(&w, 1.0, 10).unwrap();
            let est = estimate_ap_constant(&w, 2.0, &fam, DEFAULT_TOL).unwrap();
            assert_eq!(est.diverged, expect_diverged, "exponent {g}: {est:?}");
            if !expect_diverged {
                // Closed form on centered balls: 1 / (1 - g^2).
                let expected = 1.0 / (1.0 - g * g);
                assert!(
                    est.sampled_max <= expected * (1.0 + 1e-10),
                    "max {} above centered-ball value {expected}",
                    est.sampled_max
                );
                assert_relative_eq!(est.sampled_max, expected, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn strong_doubling_example() {
        // Constant weight: w(B)=2, rhs = 1 * 2^2 * 1 = 4.
        let w = Weight::one(1);
        let inner = Ball::new(1, [0.0, 0.0], 0.5).unwrap();
        let outer = unit_ball_1d();
        let sd = check_strong_doubling(&w, 2.0, 1.0, &inner, &outer, DEFAULT_TOL).unwrap();
        assert_relative_eq!(sd.lhs, 2.0, epsilon = 1e-14);
        assert_relative_eq!(sd.rhs, 4.0, epsilon = 1e-14);
        assert!(sd.satisfied);

        // |x|^{1/2}: lhs = 4/3, rhs = (4/3) * 4 * (4/3) * 2^{-3/2}.
        let w = Weight::power(1, [0.0, 0.0], 0.5).unwrap();
        let sd = check_strong_doubling(&w, 2.0, 4.0 / 3.0, &inner, &outer, DEFAULT_TOL).unwrap();
        assert_relative_eq!(sd.lhs, 4.0 / 3.0, epsilon = 1e-13);
        let expected_rhs = (4.0 / 3.0) * 4.0 * (4.0 / 3.0) * 0.5f64.powf(1.5);
        assert_relative_eq!(sd.rhs, expected_rhs, epsilon = 1e-12);
        assert!(sd.satisfied);

        // A set not contained in the ball is rejected.
        let stray = Ball::new(1, [0.9, 0.0], 0.5).unwrap();
        assert!(check_strong_doubling(&w, 2.0, 1.0, &stray, &outer, DEFAULT_TOL).is_err());
    }

    #[test]
    fn dirac_log_weight_is_continuous_across_the_branch() {
        let w = Weight::dirac_log(2, [0.0, 0.0], 1.0).unwrap();
        // d = 1/2 at |x| = 1: inner and outer branches agree there.
        let inner = w.eval([1.0 - 1e-9, 0.0]);
        let outer = w.eval([1.0 + 1e-9, 0.0]);
        assert_relative_eq!(inner, outer, max_relative = 1e-6);
        assert_relative_eq!(outer, 1.0 / std::f64::consts::LN_2.powi(2), max_relative = 1e-6);
        // Vanishes at the center in dimension 2, increases outward.
        assert_eq!(w.eval([0.0, 0.0]), 0.0);
        assert!(w.eval([1e-6, 0.0]) < w.eval([1e-3, 0.0]));
    }

    #[test]
    fn dirac_log_class_constant_is_bounded() {
        let w = Weight::dirac_log(2, [0.0, 0.0], 1.0).unwrap();
        let fam = BallFamily::for_weight(&w, 0.5, 8).unwrap();
        let est = estimate_ap_constant(&w, 2.0, &fam, 1e-8).unwrap();
        assert!(!est.diverged, "estimate flagged divergence: max {}", est.sampled_max);
        assert!(est.sampled_max >= 1.0 - 1e-9);
        assert!(est.sampled_max < 1e3, "suspiciously large constant {}", est.sampled_max);
    }

    #[test]
    fn extension_weight_closed_forms() {
        // int_0^1 y^{-1/2} dy = 2 over a unit-height box of width 2.
        let w = Weight::extension(2, -0.5).unwrap();
        let r = Region::rect([0.0, 0.0], [2.0, 1.0]);
        let m = weighted_measure(&w, &r, DEFAULT_TOL).unwrap();
        assert_relative_eq!(m, 4.0, epsilon = 1e-13);
        // Powered: (y^{-1/2})^{-2} = y integrates to 1/2 per unit width.
        let mp = weighted_measure_pow(&w, -2.0, &r, DEFAULT_TOL).unwrap();
        assert_relative_eq!(mp, 1.0, epsilon = 1e-13);
    }

    #[test]
    fn ball_family_shapes() {
        let fam = BallFamily::dyadic_with_offsets(1, [0.0, 0.0], 1.0, 11).unwrap();
        assert_eq!(fam.len(), 48);
        // Off-center balls never contain the singular point.
        for b in &fam.balls {
            if b.center != [0.0, 0.0] {
                assert!(!b.contains([0.0, 0.0]));
            }
        }
    }
}
