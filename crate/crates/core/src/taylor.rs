//! Smooth bumps and averaged Taylor polynomials on node stars.
//!
//! The reference bump is the standard mollifier `exp(-1/(1-|x|^2))`,
//! normalized to unit mass and supported in the closed unit ball. A node
//! bump rescales it onto an axis-aligned ellipse that fits inside the star
//! of a mesh node — isotropically on simplicial meshes, per axis on tensor
//! meshes. Averaging the Taylor polynomial of a function against a node
//! bump yields a polynomial of the same degree whose coefficients are
//! quadrature moments; the construction reproduces polynomials exactly,
//! commutes with differentiation, and attains the local approximation
//! orders that the interpolation theory needs. Probes for stability,
//! Poincaré ratios and those orders live here as well.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::gauss;
use crate::geometry::{
    multi_binomial, multi_factorial, multi_indices, multi_order, multi_pow, MultiIndex, Point,
};
use crate::mesh::{ElementKind, Mesh};
use crate::poly::Poly;
use crate::quad::{self, Field, QuadratureRule, SmoothFn};

/// Unnormalized mollifier profile as a function of `t = |x|^2`.
///
/// The cutoff slightly inside `t = 1` keeps the derivative formulas clear of
/// the `0 * inf` corner; the discarded shell carries no double-precision
/// mass (`exp(-1e12)` underflows to zero).
fn profile(t: f64) -> f64 {
    if t >= 1.0 - 1e-12 {
        0.0
    } else {
        (-1.0 / (1.0 - t)).exp()
    }
}

/// Mass of the unnormalized profile over the unit ball, cached per
/// dimension. Composite Gauss on the radius; the integrand is smooth and
/// identically flat at the support boundary.
fn profile_mass(dim: usize) -> f64 {
    static MASS: [OnceLock<f64>; 2] = [OnceLock::new(), OnceLock::new()];
    *MASS[dim - 1].get_or_init(|| {
        let rule = gauss::legendre(12);
        let panels = 40;
        let mut acc = 0.0;
        for k in 0..panels {
            let a = k as f64 / panels as f64;
            let b = (k + 1) as f64 / panels as f64;
            for (&t, &w) in rule.nodes.iter().zip(&rule.weights) {
                let r = a + 0.5 * (t + 1.0) * (b - a);
                let dw = 0.5 * (b - a) * w;
                acc += dw * if dim == 1 { profile(r * r) } else { r * profile(r * r) };
            }
        }
        if dim == 1 {
            2.0 * acc
        } else {
            2.0 * std::f64::consts::PI * acc
        }
    })
}

/// The reference mollifier: unit mass, support in the closed unit ball,
/// `C^infty` profile.
#[derive(Debug, Clone)]
pub struct Bump {
    dim: usize,
    norm: f64,
}

impl Bump {
    pub fn new(dim: usize) -> Result<Bump> {
        if dim == 0 || dim > 2 {
            return Err(Error::InvalidParameter(format!("bump dimension {dim}")));
        }
        Ok(Bump { dim, norm: 1.0 / profile_mass(dim) })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, xi: Point) -> f64 {
        self.norm * profile(rho2(self.dim, xi))
    }

    /// Partial derivative `D^k` at `xi`, available through order two.
    pub fn deriv(&self, k: MultiIndex, xi: Point) -> Result<f64> {
        let order = multi_order(k);
        if order > 2 {
            return Err(Error::DerivativeUnavailable { order, available: 2 });
        }
        let t = rho2(self.dim, xi);
        if t >= 1.0 - 1e-12 {
            return Ok(0.0);
        }
        let u = 1.0 - t;
        let b = self.norm * (-1.0 / u).exp();
        let u2 = u * u;
        Ok(match (k[0], k[1]) {
            (0, 0) => b,
            (1, 0) => -2.0 * xi[0] / u2 * b,
            (0, 1) => -2.0 * xi[1] / u2 * b,
            (2, 0) => b * ((4.0 * xi[0] * xi[0] / u - 8.0 * xi[0] * xi[0] - 2.0 * u) / (u2 * u)),
            (0, 2) => b * ((4.0 * xi[1] * xi[1] / u - 8.0 * xi[1] * xi[1] - 2.0 * u) / (u2 * u)),
            (1, 1) => b * ((4.0 * xi[0] * xi[1] / u - 8.0 * xi[0] * xi[1]) / (u2 * u)),
            _ => unreachable!(),
        })
    }
}

fn rho2(dim: usize, xi: Point) -> f64 {
    if dim == 1 {
        xi[0] * xi[0]
    } else {
        xi[0] * xi[0] + xi[1] * xi[1]
    }
}

/// A bump rescaled to a mesh node. Its support is the axis-aligned ellipse
/// with the stored semi-axes, verified to sit inside the node's star; the
/// struct carries a quadrature rule over that support so that averages
/// against the bump are a dot product.
pub struct NodeBump {
    dim: usize,
    center: Point,
    semi: [f64; 2],
    bump: Bump,
    star: Vec<usize>,
    points: Vec<Point>,
    weights: Vec<f64>,
    pt_elem: Vec<usize>,
    /// Cached bump values at the rule points.
    psi: Vec<f64>,
    /// Rule mass `sum w_q psi_q`; averages divide by it so that polynomial
    /// reproduction is exact independently of the rule's resolution.
    mass: f64,
}

/// Subcell panels across the support diameter, per axis. Resolving the
/// mollifier to full double precision would take ~150 panels; averages are
/// normalized by the rule mass, so this moderate resolution bounds moment
/// errors near 1e-7 without dominating the cost of interpolation.
const PANELS_2D: f64 = 8.0;
const PANELS_1D: f64 = 16.0;
const GAUSS_2D: usize = 8;
const GAUSS_1D: usize = 10;

impl NodeBump {
    /// Isotropic scaling for averages of degree `m`: the support radius is
    /// `0.9 dist(z, boundary of S_z)/(m+1)`, so supports shrink as the
    /// degree grows and containment always holds with a 10% margin.
    pub fn isotropic(mesh: &Mesh, node: usize, m: usize) -> Result<NodeBump> {
        check_degree(m)?;
        let a = 0.9 * mesh.star_boundary_distance(node) / (m as f64 + 1.0);
        NodeBump::with_semi_axes(mesh, node, [a, a])
    }

    /// Per-axis scaling on tensor meshes: each semi-axis is 90% of the
    /// smaller adjacent cell extent in that direction, so strongly graded
    /// stars get bumps of matching aspect.
    pub fn anisotropic(mesh: &Mesh, node: usize) -> Result<NodeBump> {
        if mesh.kind() != ElementKind::Rect {
            return Err(Error::InvalidParameter(
                "per-axis bump scaling requires a tensor mesh".into(),
            ));
        }
        let mut ext = [f64::INFINITY; 2];
        for &e in mesh.star(node) {
            let s = mesh.sizes(e);
            ext[0] = ext[0].min(s[0]);
            ext[1] = ext[1].min(s[1]);
        }
        NodeBump::with_semi_axes(mesh, node, [0.9 * ext[0], 0.9 * ext[1]])
    }

    /// The scaling the quasi-interpolant uses: per-axis on tensor meshes,
    /// isotropic elsewhere.
    pub fn for_node(mesh: &Mesh, node: usize, m: usize) -> Result<NodeBump> {
        if mesh.kind() == ElementKind::Rect {
            check_degree(m)?;
            NodeBump::anisotropic(mesh, node)
        } else {
            NodeBump::isotropic(mesh, node, m)
        }
    }

    /// Explicit semi-axes. Verifies geometrically that the support ellipse
    /// stays inside the node's star and fails rather than rescaling.
    pub fn with_semi_axes(mesh: &Mesh, node: usize, semi: [f64; 2]) -> Result<NodeBump> {
        if mesh.is_boundary(node) {
            return Err(Error::InvalidParameter(format!(
                "node {node} lies on the domain boundary; bumps attach to interior nodes only"
            )));
        }
        NodeBump::at_point(mesh, mesh.node(node), mesh.star(node).to_vec(), semi)
    }

    /// Bump at an arbitrary center with a caller-chosen support patch. The
    /// degree-two Lagrange spaces attach bumps to edge midpoints, whose
    /// patch is the pair of adjacent elements rather than a vertex star.
    pub fn at_point(mesh: &Mesh, z: Point, star: Vec<usize>, semi: [f64; 2]) -> Result<NodeBump> {
        let dim = mesh.dim();
        if star.is_empty() {
            return Err(Error::InvalidParameter("bump support patch is empty".into()));
        }
        if !(semi[0] > 0.0) || (dim == 2 && !(semi[1] > 0.0)) {
            return Err(Error::InvalidParameter("bump semi-axes must be positive".into()));
        }

        // Containment check: sample the support boundary; every sample must
        // lie in some patch element.
        let samples = if dim == 1 { 2 } else { 64 };
        for s in 0..samples {
            let x = if dim == 1 {
                [z[0] + if s == 0 { -semi[0] } else { semi[0] }, 0.0]
            } else {
                let th = 2.0 * std::f64::consts::PI * s as f64 / samples as f64;
                [z[0] + semi[0] * th.cos(), z[1] + semi[1] * th.sin()]
            };
            if !star.iter().any(|&e| quad::element_contains(mesh, e, x)) {
                return Err(Error::QuadratureFailure(format!(
                    "bump support at ({}, {}) leaks outside its patch",
                    z[0], z[1]
                )));
            }
        }

        let bump = Bump::new(dim)?;
        let keep = |lo: Point, hi: Point| -> bool {
            // Closest point of the box to the node, in ellipse coordinates.
            let cx = (z[0].clamp(lo[0], hi[0]) - z[0]) / semi[0];
            let cy = if dim == 1 { 0.0 } else { (z[1].clamp(lo[1], hi[1]) - z[1]) / semi[1] };
            cx * cx + cy * cy < 1.0
        };
        let (panels, ngl) =
            if dim == 1 { (PANELS_1D, GAUSS_1D) } else { (PANELS_2D, GAUSS_2D) };
        let mut points = Vec::new();
        let mut weights = Vec::new();
        let mut pt_elem = Vec::new();
        for &e in &star {
            let sizes = mesh.sizes(e);
            // Split until subcells resolve the support: extent/2^L <= 2a/panels.
            let mut levels = 0usize;
            for axis in 0..dim {
                let need = sizes[axis] * panels / (2.0 * semi[axis]);
                while need > (1u64 << levels) as f64 && levels < 12 {
                    levels += 1;
                }
            }
            let (p, w) = quad::refined_element_gauss(mesh, e, levels, ngl, &keep);
            pt_elem.extend(std::iter::repeat(e).take(p.len()));
            points.extend(p);
            weights.extend(w);
        }

        let jac_inv = if dim == 1 { 1.0 / semi[0] } else { 1.0 / (semi[0] * semi[1]) };
        let psi: Vec<f64> = points
            .iter()
            .map(|&x| jac_inv * bump.eval(scaled_coords(dim, z, semi, x)))
            .collect();
        let mass: f64 = weights.iter().zip(&psi).map(|(&w, &p)| w * p).sum();
        if (mass - 1.0).abs() > 1e-5 {
            return Err(Error::QuadratureFailure(format!(
                "bump rule mass {mass} at ({}, {}) is not unit; the support \
                 resolution or the patch geometry is off",
                z[0], z[1]
            )));
        }

        Ok(NodeBump { dim, center: z, semi, bump, star, points, weights, pt_elem, psi, mass })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn center(&self) -> Point {
        self.center
    }

    pub fn semi_axes(&self) -> [f64; 2] {
        self.semi
    }

    /// Elements of the node's star (the support rule lives on them).
    pub fn star(&self) -> &[usize] {
        &self.star
    }

    /// Rule mass `sum w psi` (close to one; exact averages divide by it).
    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn eval(&self, x: Point) -> f64 {
        let jac_inv = if self.dim == 1 {
            1.0 / self.semi[0]
        } else {
            1.0 / (self.semi[0] * self.semi[1])
        };
        jac_inv * self.bump.eval(scaled_coords(self.dim, self.center, self.semi, x))
    }

    /// `D^k` of the rescaled bump (order two at most).
    pub fn deriv(&self, k: MultiIndex, x: Point) -> Result<f64> {
        let jac_inv = if self.dim == 1 {
            1.0 / self.semi[0]
        } else {
            1.0 / (self.semi[0] * self.semi[1])
        };
        let scale = self.semi[0].powi(k[0] as i32) * self.semi[1].powi(k[1] as i32);
        let d = self.bump.deriv(k, scaled_coords(self.dim, self.center, self.semi, x))?;
        Ok(jac_inv * d / scale)
    }

    /// `int psi_z f` by the bump's own rule (the bump factor is included;
    /// divide by `mass()` for the weighted mean of `f`).
    pub fn integrate(&self, f: &dyn Field) -> Result<f64> {
        let mut acc = 0.0;
        for i in 0..self.points.len() {
            acc += self.weights[i]
                * self.psi[i]
                * f.deriv_in(self.pt_elem[i], [0, 0], self.points[i])?;
        }
        Ok(acc)
    }
}

fn scaled_coords(dim: usize, z: Point, semi: [f64; 2], x: Point) -> Point {
    if dim == 1 {
        [(x[0] - z[0]) / semi[0], 0.0]
    } else {
        [(x[0] - z[0]) / semi[0], (x[1] - z[1]) / semi[1]]
    }
}

fn check_degree(m: usize) -> Result<()> {
    if m > 2 {
        return Err(Error::InvalidParameter(format!(
            "averaged Taylor degree {m} above the supported range 0..=2"
        )));
    }
    Ok(())
}

/// Taylor polynomial of degree `m` of `v` about `x`, as a polynomial in the
/// second argument, centered at `x`. `elem` names an element containing `x`
/// so piecewise fields can differentiate.
pub fn taylor_poly(v: &dyn Field, elem: usize, x: Point, m: usize) -> Result<Poly> {
    let mut p = Poly::zero(v.dim(), x, m);
    for alpha in multi_indices(v.dim(), m) {
        p.set_coeff(alpha, v.deriv_in(elem, alpha, x)? / multi_factorial(alpha));
    }
    Ok(p)
}

/// Averaged Taylor polynomial of degree `m` of `v` about a mesh node: the
/// Taylor polynomial based at `x` averaged over `x` against the node bump.
///
/// Degree `m` needs `m` derivatives of `v`; functions known only through
/// point values support `m = 0` (the weighted mean).
pub fn averaged_taylor(v: &dyn Field, mesh: &Mesh, node: usize, m: usize) -> Result<Poly> {
    let bump = NodeBump::for_node(mesh, node, m)?;
    averaged_taylor_with(v, &bump, m)
}

/// Same, against a caller-supplied bump. Computations that must share one
/// averaging kernel (both sides of the commutation identity, repeated
/// averages at one node) build the bump once and use this entry.
pub fn averaged_taylor_with(v: &dyn Field, bump: &NodeBump, m: usize) -> Result<Poly> {
    check_degree(m)?;
    if v.dim() != bump.dim {
        return Err(Error::InvalidParameter(
            "field and bump dimensions disagree".into(),
        ));
    }
    let z = bump.center;
    let mut q = Poly::zero(bump.dim, z, m);
    for alpha in multi_indices(bump.dim, m) {
        let inv_fact = 1.0 / multi_factorial(alpha);
        for i in 0..bump.points.len() {
            let x = bump.points[i];
            let s = bump.weights[i]
                * bump.psi[i]
                * inv_fact
                * v.deriv_in(bump.pt_elem[i], alpha, x)?;
            if s == 0.0 {
                continue;
            }
            // (y - x)^alpha re-expanded about the node z.
            let zx = [z[0] - x[0], z[1] - x[1]];
            for b0 in 0..=alpha[0] {
                for b1 in 0..=alpha[1] {
                    let beta = [b0, b1];
                    let rest = [alpha[0] - b0, alpha[1] - b1];
                    q.add_coeff(beta, s * multi_binomial(alpha, beta) * multi_pow(zx, rest));
                }
            }
        }
    }
    q.scale(1.0 / bump.mass);
    Ok(q)
}

/// Averaged Taylor polynomial computed through integration by parts, so
/// that only point values of `v` enter: every derivative lands on the bump,
/// and the boundary terms vanish because the support is interior to the
/// patch. The route that admits functions known only through samples; it
/// carries the quadrature error of the bump-derivative moments instead of
/// reproducing polynomials to roundoff, so the derivative route is
/// preferred whenever `v` can differentiate.
pub fn averaged_taylor_by_parts(v: &dyn Field, bump: &NodeBump, m: usize) -> Result<Poly> {
    check_degree(m)?;
    if v.dim() != bump.dim {
        return Err(Error::InvalidParameter(
            "field and bump dimensions disagree".into(),
        ));
    }
    let z = bump.center;
    let mut q = Poly::zero(bump.dim, z, m);
    let mut dpsi = [[0.0f64; 3]; 3];
    for i in 0..bump.points.len() {
        let x = bump.points[i];
        let val = bump.weights[i] * v.deriv_in(bump.pt_elem[i], [0, 0], x)?;
        if val == 0.0 {
            continue;
        }
        dpsi[0][0] = bump.psi[i];
        for delta in multi_indices(bump.dim, m) {
            if delta != [0, 0] {
                dpsi[delta[0]][delta[1]] = bump.deriv(delta, x)?;
            }
        }
        let zx = [z[0] - x[0], z[1] - x[1]];
        for alpha in multi_indices(bump.dim, m) {
            for d0 in 0..=alpha[0] {
                for d1 in 0..=alpha[1] {
                    let delta = [d0, d1];
                    let d = dpsi[d0][d1];
                    if d == 0.0 {
                        continue;
                    }
                    let sign = if multi_order(delta) % 2 == 0 { 1.0 } else { -1.0 };
                    let c = val * d * sign * multi_binomial(alpha, delta)
                        / multi_factorial(delta);
                    // (y - x)^delta re-expanded about the node z.
                    for b0 in 0..=d0 {
                        for b1 in 0..=d1 {
                            let beta = [b0, b1];
                            let rest = [d0 - b0, d1 - b1];
                            q.add_coeff(
                                beta,
                                c * multi_binomial(delta, beta) * multi_pow(zx, rest),
                            );
                        }
                    }
                }
            }
        }
    }
    q.scale(1.0 / bump.mass);
    Ok(q)
}

/// Both sides of the commutation identity `D^alpha (Q_m v) = Q_{m-|alpha|}
/// (D^alpha v)`, computed against one shared bump. The caller asserts
/// coefficient-wise equality.
pub fn derivative_commutes(
    v: &dyn Field,
    mesh: &Mesh,
    node: usize,
    m: usize,
    alpha: MultiIndex,
) -> Result<(Poly, Poly)> {
    let a = multi_order(alpha);
    if a > m {
        return Err(Error::InvalidParameter(format!(
            "derivative order {a} exceeds the average degree {m}"
        )));
    }
    let bump = NodeBump::for_node(mesh, node, m)?;
    let lhs = averaged_taylor_with(v, &bump, m)?.deriv(alpha);
    let shifted = DerivField { inner: v, shift: alpha };
    let rhs = averaged_taylor_with(&shifted, &bump, m - a)?;
    Ok((lhs, rhs))
}

/// `D^shift` of a field, as a field.
struct DerivField<'a> {
    inner: &'a dyn Field,
    shift: MultiIndex,
}

impl Field for DerivField<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn max_order(&self) -> usize {
        self.inner.max_order().saturating_sub(multi_order(self.shift))
    }

    fn deriv_in(&self, elem: usize, k: MultiIndex, x: Point) -> Result<f64> {
        self.inner.deriv_in(elem, [k[0] + self.shift[0], k[1] + self.shift[1]], x)
    }
}

/// The difference `v - q` as a field, with the polynomial's derivatives
/// precomputed; the workhorse for local interpolation error norms.
pub struct RemainderField<'a> {
    v: &'a dyn Field,
    q: SmoothFn,
}

impl<'a> RemainderField<'a> {
    pub fn new(v: &'a dyn Field, q: &Poly) -> RemainderField<'a> {
        RemainderField { v, q: SmoothFn::from_poly(q) }
    }
}

impl Field for RemainderField<'_> {
    fn dim(&self) -> usize {
        self.v.dim()
    }

    fn max_order(&self) -> usize {
        self.v.max_order()
    }

    fn deriv_in(&self, elem: usize, k: MultiIndex, x: Point) -> Result<f64> {
        Ok(self.v.deriv_in(elem, k, x)? - self.q.deriv_in(elem, k, x)?)
    }
}

/// A field shifted by a constant (used to enforce weighted mean zero).
struct ShiftField<'a> {
    inner: &'a dyn Field,
    shift: f64,
}

impl Field for ShiftField<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn max_order(&self) -> usize {
        self.inner.max_order()
    }

    fn deriv_in(&self, elem: usize, k: MultiIndex, x: Point) -> Result<f64> {
        let v = self.inner.deriv_in(elem, k, x)?;
        Ok(if k == [0, 0] { v - self.shift } else { v })
    }
}

/// Local stability data for the averaged Taylor polynomial at a node:
/// `lhs = sup |Q_m v|` over the star (densely sampled) and
/// `rhs = h^{-n} ||1||_{L^{p'}(w^{-p'/p}, S_z)} sum_{l<=k} h^l |v|_{W^l_p(w, S_z)}`.
///
/// `rule` must be built with the weight itself and `dual_rule` with its
/// `p`-dual `w^{-p'/p}`, both on the same mesh. The ratio `lhs/rhs` is
/// monitored for boundedness across refinements.
#[allow(clippy::too_many_arguments)]
pub fn stability_probe(
    v: &dyn Field,
    mesh: &Mesh,
    node: usize,
    m: usize,
    k: usize,
    p: f64,
    rule: &QuadratureRule,
    dual_rule: &QuadratureRule,
) -> Result<(f64, f64)> {
    if k > m {
        return Err(Error::InvalidParameter(format!(
            "stability probe needs k <= m, got k = {k}, m = {m}"
        )));
    }
    let bump = NodeBump::for_node(mesh, node, m)?;
    let q = averaged_taylor_with(v, &bump, m)?;
    let star = mesh.star(node);
    let mut lhs = 0.0f64;
    for &e in star {
        let (pts, _) = quad::element_gauss(mesh, e, 8);
        for x in pts {
            lhs = lhs.max(q.eval(x).abs());
        }
        for x in mesh.elem_coords(e) {
            lhs = lhs.max(q.eval(x).abs());
        }
    }
    let h = mesh.star_h(node);
    let pp = p / (p - 1.0);
    let one = SmoothFn::new(mesh.dim(), usize::MAX, |k, _| if k == [0, 0] { 1.0 } else { 0.0 });
    let dual_norm = quad::weighted_lp_norm_on(&one, pp, dual_rule, star)?;
    let mut sum = 0.0;
    for l in 0..=k {
        sum += h.powi(l as i32) * quad::weighted_seminorm_on(v, p, l, rule, star)?;
    }
    let rhs = h.powi(-(mesh.dim() as i32)) * dual_norm * sum;
    Ok((lhs, rhs))
}

/// Measured Poincaré ratios `||v - mean|| / ||grad v||` in `L^p` of the
/// rule's weight over the given elements, one per sample. The mean is taken
/// against the unit-mass bump `chi`: when `elems` is exactly `chi`'s star
/// this probes the star-shaped inequality; a larger connected patch probes
/// the overlapping-subdomain variant, where the mean still comes from
/// `chi`'s own star.
pub fn poincare_probe(
    elems: &[usize],
    p: f64,
    chi: &NodeBump,
    rule: &QuadratureRule,
    samples: &[&dyn Field],
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(samples.len());
    for &v in samples {
        let mean = chi.integrate(v)? / chi.mass;
        let centered = ShiftField { inner: v, shift: mean };
        let num = quad::weighted_lp_norm_on(&centered, p, rule, elems)?;
        let den = quad::weighted_seminorm_on(v, p, 1, rule, elems)?;
        out.push(num / den);
    }
    Ok(out)
}
