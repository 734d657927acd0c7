//! Lagrange finite element spaces and the weighted quasi-interpolant.
//!
//! A space carries its mesh, its node set (vertices, plus edge midpoints
//! for the quadratic family), and per-element shape polynomials. The
//! quasi-interpolant assigns each interior node the value at the node of
//! the averaged Taylor polynomial built over the node's patch, and zero to
//! boundary nodes; it is stable in weighted norms and attains the local
//! approximation orders of the averaging operator. Local and global error
//! tables, the two-weight ("different metrics") variants, and the
//! compatibility probe for weight pairs live here as well.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{dist, Ball, MultiIndex, Point, Region};
use crate::mesh::{ElementKind, Mesh};
use crate::poly::Poly;
use crate::quad::{self, Field, QuadratureRule, SmoothFn};
use crate::taylor::{averaged_taylor_by_parts, averaged_taylor_with, NodeBump};
use crate::weights::{weighted_measure, Weight, WeightKind, DEFAULT_TOL};

/// A Lagrange finite element space: piecewise `P_m` (`m` = 1 or 2) on
/// simplicial and interval meshes, bilinear `Q_1` on tensor meshes.
pub struct FeSpace {
    mesh: Mesh,
    degree: usize,
    /// Space nodes: mesh vertices first, then edge midpoints (degree 2).
    nodes: Vec<Point>,
    /// Mesh vertex id for vertex nodes, `None` for midpoints.
    mesh_vertex: Vec<Option<usize>>,
    boundary: Vec<bool>,
    node_star: Vec<Vec<usize>>,
    /// Global node ids per element, aligned with `shapes`.
    elem_nodes: Vec<Vec<usize>>,
    /// Shape polynomials per element; `shapes[e][i]` is one at local node
    /// `i` and zero at the element's other nodes.
    shapes: Vec<Vec<Poly>>,
}

impl FeSpace {
    pub fn new(mesh: Mesh, degree: usize) -> Result<FeSpace> {
        match mesh.kind() {
            ElementKind::Rect => {
                if degree != 1 {
                    return Err(Error::InvalidParameter(
                        "tensor meshes support the bilinear space only".into(),
                    ));
                }
            }
            _ => {
                if degree == 0 || degree > 2 {
                    return Err(Error::InvalidParameter(format!(
                        "unsupported polynomial degree {degree}"
                    )));
                }
            }
        }

        let mut nodes: Vec<Point> = (0..mesh.n_nodes()).map(|i| mesh.node(i)).collect();
        let mut mesh_vertex: Vec<Option<usize>> = (0..mesh.n_nodes()).map(Some).collect();
        let mut boundary: Vec<bool> = (0..mesh.n_nodes()).map(|i| mesh.is_boundary(i)).collect();
        let mut node_star: Vec<Vec<usize>> =
            (0..mesh.n_nodes()).map(|i| mesh.star(i).to_vec()).collect();
        let mut elem_nodes: Vec<Vec<usize>> =
            (0..mesh.n_elements()).map(|e| mesh.elem_vertices(e).to_vec()).collect();

        if degree == 2 {
            // Edge midpoints, deduplicated through a sorted-pair table.
            let mut edge_table: BTreeMap<(usize, usize), usize> = BTreeMap::new();
            for e in 0..mesh.n_elements() {
                let vs = mesh.elem_vertices(e).to_vec();
                let edges: Vec<(usize, usize)> = match mesh.kind() {
                    ElementKind::Segment => vec![(vs[0], vs[1])],
                    ElementKind::Triangle => {
                        vec![(vs[0], vs[1]), (vs[1], vs[2]), (vs[2], vs[0])]
                    }
                    ElementKind::Rect => unreachable!(),
                };
                for (a, b) in edges {
                    let key = (a.min(b), a.max(b));
                    let id = *edge_table.entry(key).or_insert_with(|| {
                        let pa = mesh.node(a);
                        let pb = mesh.node(b);
                        nodes.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
                        mesh_vertex.push(None);
                        boundary.push(false);
                        node_star.push(Vec::new());
                        nodes.len() - 1
                    });
                    node_star[id].push(e);
                    elem_nodes[e].push(id);
                }
            }
            // A midpoint is a boundary node exactly when its edge belongs
            // to a single element (conforming meshes); in one dimension
            // element interiors never touch the boundary.
            if mesh.dim() == 2 {
                for id in mesh.n_nodes()..nodes.len() {
                    boundary[id] = node_star[id].len() == 1;
                }
            }
        }

        let shapes: Vec<Vec<Poly>> =
            (0..mesh.n_elements()).map(|e| element_shapes(&mesh, e, degree)).collect();

        Ok(FeSpace { mesh, degree, nodes, mesh_vertex, boundary, node_star, elem_nodes, shapes })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Number of space nodes (vertices plus midpoints for degree two).
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, i: usize) -> Point {
        self.nodes[i]
    }

    pub fn is_boundary_node(&self, i: usize) -> bool {
        self.boundary[i]
    }

    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| !self.boundary[i]).collect()
    }

    /// Elements forming the node's star (the adjacent pair for interior
    /// edge midpoints).
    pub fn node_star(&self, i: usize) -> &[usize] {
        &self.node_star[i]
    }

    /// The mesh vertex a space node sits on (`None` for the edge midpoints
    /// that only exist in the degree-two space).
    pub fn node_vertex(&self, i: usize) -> Option<usize> {
        self.mesh_vertex[i]
    }

    pub fn elem_nodes(&self, e: usize) -> &[usize] {
        &self.elem_nodes[e]
    }

    pub fn shape(&self, e: usize, local: usize) -> &Poly {
        &self.shapes[e][local]
    }

    /// The averaging bump at an interior node: per-axis scaling on tensor
    /// meshes, isotropic over the node's star otherwise (with the adjacent
    /// elements as the patch for edge midpoints).
    pub fn node_bump(&self, i: usize) -> Result<NodeBump> {
        if self.boundary[i] {
            return Err(Error::InvalidParameter(format!(
                "node {i} lies on the domain boundary; bumps attach to interior nodes only"
            )));
        }
        match self.mesh_vertex[i] {
            Some(v) => NodeBump::for_node(&self.mesh, v, self.degree),
            None => {
                let z = self.nodes[i];
                let star = self.node_star[i].clone();
                let d = patch_boundary_distance(&self.mesh, &star, z);
                let a = 0.9 * d / (self.degree as f64 + 1.0);
                NodeBump::at_point(&self.mesh, z, star, [a, a])
            }
        }
    }
}

/// Distance from an interior point of an element patch to the patch
/// boundary: the minimum distance to the element edges that do not pass
/// through the point (edges through it are interior to the patch).
fn patch_boundary_distance(mesh: &Mesh, elems: &[usize], z: Point) -> f64 {
    let mut best = f64::INFINITY;
    for &e in elems {
        let c = mesh.elem_coords(e);
        if mesh.dim() == 1 {
            for p in &c {
                let d = (p[0] - z[0]).abs();
                if d > 1e-13 {
                    best = best.min(d);
                }
            }
            continue;
        }
        for i in 0..c.len() {
            let (a, b) = (c[i], c[(i + 1) % c.len()]);
            let len = dist(2, a, b);
            let on_seg = (dist(2, a, z) + dist(2, z, b) - len).abs() < 1e-12 * (1.0 + len);
            if !on_seg {
                best = best.min(point_segment_distance(z, a, b));
            }
        }
    }
    best
}

fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0);
    let proj = [a[0] + t * dx, a[1] + t * dy];
    dist(2, p, proj)
}

/// Shape polynomials of one element, centered at its centroid.
fn element_shapes(mesh: &Mesh, e: usize, degree: usize) -> Vec<Poly> {
    let c = mesh.elem_coords(e);
    let centroid = {
        let mut s = [0.0, 0.0];
        for p in &c {
            s[0] += p[0];
            s[1] += p[1];
        }
        [s[0] / c.len() as f64, s[1] / c.len() as f64]
    };
    match (mesh.kind(), degree) {
        (ElementKind::Segment, 1) => segment_hats(&c, centroid).to_vec(),
        (ElementKind::Segment, 2) => {
            let [l0, l1] = segment_hats(&c, centroid);
            vec![quadratic_vertex(&l0), quadratic_vertex(&l1), scaled(poly_mul(&l0, &l1, 2), 4.0)]
        }
        (ElementKind::Triangle, 1) => tri_barycentric(&c, centroid).to_vec(),
        (ElementKind::Triangle, 2) => {
            let [l0, l1, l2] = tri_barycentric(&c, centroid);
            vec![
                quadratic_vertex(&l0),
                quadratic_vertex(&l1),
                quadratic_vertex(&l2),
                scaled(poly_mul(&l0, &l1, 2), 4.0),
                scaled(poly_mul(&l1, &l2, 2), 4.0),
                scaled(poly_mul(&l2, &l0, 2), 4.0),
            ]
        }
        (ElementKind::Rect, _) => {
            // Corners counterclockwise from the lower-left; the opposite
            // corner supplies the vanishing factors.
            (0..4)
                .map(|i| {
                    let v = c[i];
                    let o = c[(i + 2) % 4];
                    let mut fx = Poly::zero(2, centroid, 1);
                    fx.set_coeff([0, 0], (centroid[0] - o[0]) / (v[0] - o[0]));
                    fx.set_coeff([1, 0], 1.0 / (v[0] - o[0]));
                    let mut fy = Poly::zero(2, centroid, 1);
                    fy.set_coeff([0, 0], (centroid[1] - o[1]) / (v[1] - o[1]));
                    fy.set_coeff([0, 1], 1.0 / (v[1] - o[1]));
                    poly_mul(&fx, &fy, 1)
                })
                .collect()
        }
        _ => unreachable!("space construction validated the degree"),
    }
}

fn segment_hats(c: &[Point], centroid: Point) -> [Poly; 2] {
    let (a, b) = (c[0][0], c[1][0]);
    let inv = 1.0 / (b - a);
    let mut l0 = Poly::zero(1, centroid, 1);
    l0.set_coeff([0, 0], (b - centroid[0]) * inv);
    l0.set_coeff([1, 0], -inv);
    let mut l1 = Poly::zero(1, centroid, 1);
    l1.set_coeff([0, 0], (centroid[0] - a) * inv);
    l1.set_coeff([1, 0], inv);
    [l0, l1]
}

fn tri_barycentric(c: &[Point], centroid: Point) -> [Poly; 3] {
    let det = c[0][0] * (c[1][1] - c[2][1])
        + c[1][0] * (c[2][1] - c[0][1])
        + c[2][0] * (c[0][1] - c[1][1]);
    std::array::from_fn(|i| {
        let (p1, p2) = (c[(i + 1) % 3], c[(i + 2) % 3]);
        let alpha = p1[0] * p2[1] - p2[0] * p1[1];
        let beta = p1[1] - p2[1];
        let gamma = p2[0] - p1[0];
        let mut l = Poly::zero(2, centroid, 1);
        l.set_coeff([0, 0], (alpha + beta * centroid[0] + gamma * centroid[1]) / det);
        l.set_coeff([1, 0], beta / det);
        l.set_coeff([0, 1], gamma / det);
        l
    })
}

/// `2 l^2 - l`, the vertex shape of the quadratic family.
fn quadratic_vertex(l: &Poly) -> Poly {
    let mut q = scaled(poly_mul(l, l, 2), 2.0);
    for i in 0..=1 {
        for j in 0..=1 {
            q.add_coeff([i, j], -l.coeff([i, j]));
        }
    }
    q
}

fn scaled(mut p: Poly, s: f64) -> Poly {
    p.scale(s);
    p
}

/// Product of two polynomials sharing a center; `deg` must accommodate the
/// full product grid.
fn poly_mul(a: &Poly, b: &Poly, deg: usize) -> Poly {
    let mut out = Poly::zero(a.dim, a.center, deg);
    for i1 in 0..=a.max_exponent() {
        for j1 in 0..=a.max_exponent() {
            let ca = a.coeff([i1, j1]);
            if ca == 0.0 {
                continue;
            }
            for i2 in 0..=b.max_exponent() {
                for j2 in 0..=b.max_exponent() {
                    let cb = b.coeff([i2, j2]);
                    if cb != 0.0 {
                        out.add_coeff([i1 + i2, j1 + j2], ca * cb);
                    }
                }
            }
        }
    }
    out
}

/// A function in a finite element space: one coefficient per space node.
pub struct FeFunction<'a> {
    space: &'a FeSpace,
    coeffs: Vec<f64>,
    /// Per-element restriction with its derivative table.
    local: Vec<SmoothFn>,
}

impl<'a> FeFunction<'a> {
    pub fn new(space: &'a FeSpace, coeffs: Vec<f64>) -> Result<FeFunction<'a>> {
        if coeffs.len() != space.n_nodes() {
            return Err(Error::InvalidParameter(format!(
                "{} coefficients for a space with {} nodes",
                coeffs.len(),
                space.n_nodes()
            )));
        }
        let deg = if space.mesh.kind() == ElementKind::Rect { 1 } else { space.degree };
        let local = (0..space.mesh.n_elements())
            .map(|e| {
                let mut p = Poly::zero(space.mesh.dim(), space.shapes[e][0].center, deg);
                for (local_i, &node) in space.elem_nodes[e].iter().enumerate() {
                    let c = coeffs[node];
                    if c == 0.0 {
                        continue;
                    }
                    let s = &space.shapes[e][local_i];
                    for i in 0..=s.max_exponent() {
                        for j in 0..=s.max_exponent() {
                            let v = s.coeff([i, j]);
                            if v != 0.0 {
                                p.add_coeff([i, j], c * v);
                            }
                        }
                    }
                }
                SmoothFn::from_poly(&p)
            })
            .collect();
        Ok(FeFunction { space, coeffs, local })
    }

    pub fn space(&self) -> &FeSpace {
        self.space
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeff(&self, node: usize) -> f64 {
        self.coeffs[node]
    }

    /// Point evaluation; the mesh locates the element.
    pub fn evaluate(&self, x: Point) -> Result<f64> {
        let e = self.space.mesh.locate(x)?;
        self.local[e].deriv_in(e, [0, 0], x)
    }

    /// Evaluation with the element supplied (unambiguous on edges).
    pub fn evaluate_in(&self, e: usize, x: Point) -> Result<f64> {
        self.local[e].deriv_in(e, [0, 0], x)
    }

    /// Piecewise gradient; on element borders the located element decides.
    pub fn gradient_at(&self, x: Point) -> Result<[f64; 2]> {
        let e = self.space.mesh.locate(x)?;
        Ok([
            self.local[e].deriv_in(e, [1, 0], x)?,
            if self.space.mesh.dim() == 2 { self.local[e].deriv_in(e, [0, 1], x)? } else { 0.0 },
        ])
    }
}

impl Field for FeFunction<'_> {
    fn dim(&self) -> usize {
        self.space.mesh.dim()
    }

    fn max_order(&self) -> usize {
        usize::MAX
    }

    fn deriv_in(&self, elem: usize, k: MultiIndex, x: Point) -> Result<f64> {
        self.local[elem].deriv_in(elem, k, x)
    }
}

/// The difference of two fields, for error norms.
/// Pointwise difference `a - b` of two fields over the same mesh, exposing
/// whatever derivative orders both sides can supply. This is how errors
/// `v - Pi v` or `u - U` enter the weighted norm routines.
pub struct Difference<'a> {
    a: &'a dyn Field,
    b: &'a dyn Field,
}

impl<'a> Difference<'a> {
    pub fn new(a: &'a dyn Field, b: &'a dyn Field) -> Difference<'a> {
        Difference { a, b }
    }
}

impl Field for Difference<'_> {
    fn dim(&self) -> usize {
        self.a.dim()
    }

    fn max_order(&self) -> usize {
        self.a.max_order().min(self.b.max_order())
    }

    fn deriv_in(&self, elem: usize, k: MultiIndex, x: Point) -> Result<f64> {
        Ok(self.a.deriv_in(elem, k, x)? - self.b.deriv_in(elem, k, x)?)
    }
}

/// Quasi-interpolant of `v` in the space: interior node coefficients are
/// the averaged Taylor polynomial of the space's degree evaluated at the
/// node, boundary coefficients are exactly zero. Functions that supply
/// derivatives use the direct averaging route; functions known only
/// through point values go through integration by parts.
pub fn quasi_interpolate<'a>(v: &dyn Field, space: &'a FeSpace) -> Result<FeFunction<'a>> {
    if v.dim() != space.mesh.dim() {
        return Err(Error::InvalidParameter("field and space dimensions disagree".into()));
    }
    let m = space.degree;
    let coeffs: Vec<f64> = (0..space.n_nodes())
        .into_par_iter()
        .map(|i| -> Result<f64> {
            if space.boundary[i] {
                return Ok(0.0);
            }
            let bump = space.node_bump(i)?;
            let q = if v.max_order() >= m {
                averaged_taylor_with(v, &bump, m)?
            } else {
                averaged_taylor_by_parts(v, &bump, m)?
            };
            Ok(q.coeff([0, 0]))
        })
        .collect::<Result<Vec<f64>>>()?;
    FeFunction::new(space, coeffs)
}

/// One element's interpolation error data: the `W^k_p(w, T)` seminorm of
/// the error, the patch seminorm `|v|_{W^{m+1}_p(w, S_T)}`, and the ratio
/// of the error against `h_T^{m+1-k}` times the patch seminorm. The ratio
/// is NaN when the patch seminorm vanishes (polynomial data).
#[derive(Debug, Clone)]
pub struct LocalErrorRow {
    pub elem: usize,
    pub h: f64,
    /// Per-axis extents (equal on simplicial elements).
    pub sizes: [f64; 2],
    pub error: f64,
    pub patch_seminorm: f64,
    pub ratio: f64,
}

/// Per-element interpolation errors in the weighted `k`-seminorm, with the
/// patch data the local estimate compares against. `rule` must be built
/// over the space's mesh with the weight of interest.
pub fn local_error_table(
    v: &dyn Field,
    f: &FeFunction,
    p: f64,
    k: usize,
    rule: &QuadratureRule,
) -> Result<Vec<LocalErrorRow>> {
    let space = f.space;
    let m = space.degree;
    let need = k.max(m + 1);
    if v.max_order() < need {
        return Err(Error::DerivativeUnavailable { order: need, available: v.max_order() });
    }
    if k > m + 1 {
        return Err(Error::InvalidParameter(format!(
            "error order k = {k} exceeds m + 1 = {}",
            m + 1
        )));
    }
    let mesh = &space.mesh;
    (0..mesh.n_elements())
        .into_par_iter()
        .map(|e| -> Result<LocalErrorRow> {
            let diff = Difference::new(v, f);
            let error = quad::weighted_seminorm_on(&diff, p, k, rule, &[e])?;
            let patch = mesh.element_patch(e);
            let patch_seminorm = quad::weighted_seminorm_on(v, p, m + 1, rule, &patch)?;
            let h = mesh.h(e);
            let denom = h.powi((m + 1 - k) as i32) * patch_seminorm;
            let ratio = if patch_seminorm > 0.0 { error / denom } else { f64::NAN };
            Ok(LocalErrorRow { elem: e, h, sizes: mesh.sizes(e), error, patch_seminorm, ratio })
        })
        .collect()
}

/// CSV rendering of a local error table.
pub fn local_error_csv(rows: &[LocalErrorRow]) -> String {
    let mut out = String::from("elem,h1,h2,error,patch_seminorm,ratio\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.elem, r.sizes[0], r.sizes[1], r.error, r.patch_seminorm, r.ratio
        ));
    }
    out
}

/// Global interpolation error in the weighted `k`-seminorm.
#[derive(Debug, Clone, Copy)]
pub struct GlobalError {
    /// `(sum_T h_T^{-(m+1-k)p} |v - F|^p_{W^k_p(w,T)})^{1/p}`: each local
    /// error normalized by its expected order, so the total stays bounded
    /// by the global `(m+1)`-seminorm of `v` across refinements.
    pub scaled: f64,
    /// `(sum_T |v - F|^p_{W^k_p(w,T)})^{1/p}`, the raw error for rate fits.
    pub plain: f64,
}

pub fn global_error(
    v: &dyn Field,
    f: &FeFunction,
    p: f64,
    k: usize,
    rule: &QuadratureRule,
) -> Result<GlobalError> {
    global_error_on(v, f, p, k, rule, &(0..f.space.mesh.n_elements()).collect::<Vec<_>>())
}

/// Global error restricted to a subset of elements. Contributions add in
/// `p`-th power: the restriction to two disjoint subsets recombines
/// exactly into the restriction to their union.
pub fn global_error_on(
    v: &dyn Field,
    f: &FeFunction,
    p: f64,
    k: usize,
    rule: &QuadratureRule,
    elems: &[usize],
) -> Result<GlobalError> {
    let space = f.space;
    let m = space.degree;
    if v.max_order() < k {
        return Err(Error::DerivativeUnavailable { order: k, available: v.max_order() });
    }
    if k > m + 1 {
        return Err(Error::InvalidParameter(format!(
            "error order k = {k} exceeds m + 1 = {}",
            m + 1
        )));
    }
    let terms: Vec<(f64, f64)> = elems
        .par_iter()
        .map(|&e| -> Result<(f64, f64)> {
            let diff = Difference::new(v, f);
            let err = quad::weighted_seminorm_on(&diff, p, k, rule, &[e])?;
            let h = space.mesh.h(e);
            Ok((err.powf(p), h.powf(-((m + 1 - k) as f64) * p) * err.powf(p)))
        })
        .collect::<Result<Vec<_>>>()?;
    let plain: f64 = terms.iter().map(|t| t.0).sum();
    let scaled: f64 = terms.iter().map(|t| t.1).sum();
    Ok(GlobalError { scaled: scaled.powf(1.0 / p), plain: plain.powf(1.0 / p) })
}

/// Local stability data: `|Pi v|_{W^k_p(w,T)}` against the layered patch
/// norm `sum_{l<=k} h_T^{l-k} |v|_{W^l_p(w,S_T)}`; the ratio is monitored
/// for boundedness across refinements.
#[derive(Debug, Clone)]
pub struct StabilityRow {
    pub elem: usize,
    pub h: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

pub fn stability_table(
    v: &dyn Field,
    f: &FeFunction,
    p: f64,
    k: usize,
    rule: &QuadratureRule,
) -> Result<Vec<StabilityRow>> {
    let space = f.space;
    if v.max_order() < k {
        return Err(Error::DerivativeUnavailable { order: k, available: v.max_order() });
    }
    let mesh = &space.mesh;
    (0..mesh.n_elements())
        .into_par_iter()
        .map(|e| -> Result<StabilityRow> {
            let lhs = quad::weighted_seminorm_on(f, p, k, rule, &[e])?;
            let patch = mesh.element_patch(e);
            let h = mesh.h(e);
            let mut rhs = 0.0;
            for l in 0..=k {
                rhs += h.powi(l as i32 - k as i32)
                    * quad::weighted_seminorm_on(v, p, l, rule, &patch)?;
            }
            Ok(StabilityRow { elem: e, h, lhs, rhs, ratio: lhs / rhs })
        })
        .collect()
}

/// One element's two-weight error data: the error measured in `L^q(rho)`
/// (of the difference for `k = 0`, of its gradient for `k = 1`) against
/// the mixed factor `h_T rho(S_T)^{1/q} omega(S_T)^{-1/p} |v|_{W^{k+1}_p
/// (omega, S_T)}`.
#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub elem: usize,
    pub h: f64,
    pub error: f64,
    pub factor: f64,
    pub ratio: f64,
}

/// Whether a two-weight pair `(rho, omega)` is in the supported list: both
/// constant, the same power weight twice, the reciprocal point-mass weight
/// against a constant, or a constant against the extension weight. These
/// are the pairs whose compatibility is established; anything else is
/// rejected rather than silently measured.
fn pair_supported(rho: &Weight, omega: &Weight) -> bool {
    match (rho.kind(), omega.kind()) {
        (WeightKind::Constant(_), WeightKind::Constant(_)) => true,
        (
            WeightKind::Power { center: c1, exponent: e1 },
            WeightKind::Power { center: c2, exponent: e2 },
        ) => c1 == c2 && e1 == e2,
        (WeightKind::Reciprocal(inner), WeightKind::Constant(_)) => {
            matches!(inner.kind(), WeightKind::DiracLog { .. })
        }
        (WeightKind::Constant(_), WeightKind::Extension { .. }) => true,
        _ => false,
    }
}

/// Per-element two-weight interpolation errors. `rule_rho` and
/// `rule_omega` are quadrature rules over the space's mesh built with
/// `rho` and `omega` respectively.
#[allow(clippy::too_many_arguments)]
pub fn different_metrics_error(
    v: &dyn Field,
    f: &FeFunction,
    rho: &Weight,
    q: f64,
    omega: &Weight,
    p: f64,
    k: usize,
    rule_rho: &QuadratureRule,
    rule_omega: &QuadratureRule,
) -> Result<Vec<MetricsRow>> {
    if !pair_supported(rho, omega) {
        return Err(Error::UnsupportedPair(format!("({:?}, {:?})", rho.kind(), omega.kind())));
    }
    if !(p > 1.0) || p > q {
        return Err(Error::InvalidParameter(format!(
            "two-metric estimates need 1 < p <= q, got p = {p}, q = {q}"
        )));
    }
    if k > 1 {
        return Err(Error::InvalidParameter(
            "two-metric errors cover the function and its gradient only".into(),
        ));
    }
    if v.max_order() < k + 1 {
        return Err(Error::DerivativeUnavailable { order: k + 1, available: v.max_order() });
    }
    let space = f.space;
    let mesh = &space.mesh;
    (0..mesh.n_elements())
        .into_par_iter()
        .map(|e| -> Result<MetricsRow> {
            let diff = Difference::new(v, f);
            let error = if k == 0 {
                quad::weighted_lp_norm_on(&diff, q, rule_rho, &[e])?
            } else {
                quad::weighted_seminorm_on(&diff, q, 1, rule_rho, &[e])?
            };
            let patch = mesh.element_patch(e);
            let rho_m = rule_rho.integrate_on(&patch, |_| 1.0);
            let omega_m = rule_omega.integrate_on(&patch, |_| 1.0);
            let sem = quad::weighted_seminorm_on(v, p, k + 1, rule_omega, &patch)?;
            let h = mesh.h(e);
            let factor = h * rho_m.powf(1.0 / q) * omega_m.powf(-1.0 / p) * sem;
            let ratio = if factor > 0.0 { error / factor } else { f64::NAN };
            Ok(MetricsRow { elem: e, h, error, factor, ratio })
        })
        .collect()
}

/// Maximum over radius pairs `r <= R` of the two-weight compatibility
/// quotient `(r/R) (rho(B_r)/rho(B_R))^{1/q} (omega(B_r)/omega(B_R))^
/// {-1/p}` at `x`; boundedness over a family of pairs indicates the pair
/// supports the two-metric estimates.
pub fn compatibility_probe(
    rho: &Weight,
    q: f64,
    omega: &Weight,
    p: f64,
    x: Point,
    radii: &[f64],
) -> Result<f64> {
    if radii.len() < 2 {
        return Err(Error::InvalidParameter("need at least two radii".into()));
    }
    if rho.dim() != omega.dim() {
        return Err(Error::InvalidParameter("weight dimensions disagree".into()));
    }
    let dim = rho.dim();
    let mut rs = radii.to_vec();
    rs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut rho_m = Vec::with_capacity(rs.len());
    let mut omega_m = Vec::with_capacity(rs.len());
    for &r in &rs {
        let ball = Region::Ball(Ball::new(dim, x, r)?);
        rho_m.push(weighted_measure(rho, &ball, DEFAULT_TOL)?);
        omega_m.push(weighted_measure(omega, &ball, DEFAULT_TOL)?);
    }
    let mut max = 0.0f64;
    for i in 0..rs.len() {
        for j in i + 1..rs.len() {
            let quot = (rs[i] / rs[j])
                * (rho_m[i] / rho_m[j]).powf(1.0 / q)
                * (omega_m[i] / omega_m[j]).powf(-1.0 / p);
            max = max.max(quot);
        }
    }
    Ok(max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn fit_slope(h: &[f64], e: &[f64]) -> f64 {
        let n = h.len() as f64;
        let xs: Vec<f64> = h.iter().map(|v| v.ln()).collect();
        let ys: Vec<f64> = e.iter().map(|v| v.ln()).collect();
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        sxy / sxx
    }

    /// sin(pi x) sin(pi y) with all derivatives.
    fn wave() -> SmoothFn {
        let pi = std::f64::consts::PI;
        SmoothFn::new(2, usize::MAX, move |k, x| {
            let f = |t: f64, d: usize| -> f64 {
                pi.powi(d as i32)
                    * match d % 4 {
                        0 => t.sin(),
                        1 => t.cos(),
                        2 => -t.sin(),
                        _ => -t.cos(),
                    }
            };
            f(pi * x[0], k[0]) * f(pi * x[1], k[1])
        })
    }

    /// sin(pi x) as a function of one variable.
    fn wave_1d() -> SmoothFn {
        let pi = std::f64::consts::PI;
        SmoothFn::new(1, usize::MAX, move |k, x| {
            let t = pi * x[0];
            pi.powi(k[0] as i32)
                * match k[0] % 4 {
                    0 => t.sin(),
                    1 => t.cos(),
                    2 => -t.sin(),
                    _ => -t.cos(),
                }
        })
    }

    /// sin(pi x) viewed on a two-dimensional mesh (independent of y).
    fn wave_x_only() -> SmoothFn {
        let pi = std::f64::consts::PI;
        SmoothFn::new(2, usize::MAX, move |k, x| {
            if k[1] > 0 {
                return 0.0;
            }
            let t = pi * x[0];
            pi.powi(k[0] as i32)
                * match k[0] % 4 {
                    0 => t.sin(),
                    1 => t.cos(),
                    2 => -t.sin(),
                    _ => -t.cos(),
                }
        })
    }

    fn sample_points(mesh: &Mesh, e: usize) -> Vec<Point> {
        let c = mesh.elem_coords(e);
        let mut pts = vec![];
        let n = c.len() as f64;
        let centroid = c.iter().fold([0.0, 0.0], |a, p| [a[0] + p[0] / n, a[1] + p[1] / n]);
        pts.push(centroid);
        for p in &c {
            pts.push([0.6 * p[0] + 0.4 * centroid[0], 0.6 * p[1] + 0.4 * centroid[1]]);
        }
        pts
    }

    /// Elements all of whose patch elements carry only interior nodes (the
    /// reproduction statement concerns patches that avoid the boundary).
    fn fully_interior_elements(space: &FeSpace) -> Vec<usize> {
        let mesh = space.mesh();
        (0..mesh.n_elements())
            .filter(|&e| {
                mesh.element_patch(e)
                    .iter()
                    .all(|&pe| space.elem_nodes(pe).iter().all(|&n| !space.is_boundary_node(n)))
            })
            .collect()
    }

    #[test]
    fn shape_functions_delta_and_partition_of_unity() {
        let cases: Vec<(Mesh, usize)> = vec![
            (Mesh::triangulated_square(3).unwrap(), 1),
            (Mesh::triangulated_square(3).unwrap(), 2),
            (
                Mesh::tensor(vec![0.0, 0.3, 0.55, 1.0], vec![0.0, 0.25, 0.5, 0.75, 1.0]).unwrap(),
                1,
            ),
            (Mesh::interval(0.0, 1.0, 5).unwrap(), 1),
            (Mesh::interval(0.0, 1.0, 5).unwrap(), 2),
        ];
        for (mesh, degree) in cases {
            let space = FeSpace::new(mesh, degree).unwrap();
            let mesh = space.mesh();
            for e in 0..mesh.n_elements() {
                let ids = space.elem_nodes(e);
                // Kronecker property at the element's own nodes.
                for (i, _) in ids.iter().enumerate() {
                    for &nj in ids.iter() {
                        let expect = if ids[i] == nj { 1.0 } else { 0.0 };
                        let got = space.shape(e, i).eval(space.node(nj));
                        assert_abs_diff_eq!(got, expect, epsilon = 1e-12);
                    }
                }
                // Partition of unity inside the element.
                for x in sample_points(mesh, e) {
                    let sum: f64 = (0..ids.len()).map(|i| space.shape(e, i).eval(x)).sum();
                    assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
                }
            }
        }

        // Midpoint bookkeeping for the quadratic simplicial space.
        let space = FeSpace::new(Mesh::triangulated_square(3).unwrap(), 2).unwrap();
        let mesh_nodes = space.mesh().n_nodes();
        let mut interior_mid = 0;
        let mut boundary_mid = 0;
        for i in mesh_nodes..space.n_nodes() {
            match space.node_star(i).len() {
                2 => {
                    assert!(!space.is_boundary_node(i));
                    interior_mid += 1;
                }
                1 => {
                    assert!(space.is_boundary_node(i));
                    boundary_mid += 1;
                }
                n => panic!("midpoint adjacent to {n} elements"),
            }
        }
        // A 3x3 triangulated grid has 12 boundary edges; every other edge
        // is shared by two triangles.
        assert_eq!(boundary_mid, 12);
        assert_eq!(interior_mid + boundary_mid, space.n_nodes() - mesh_nodes);

        // Tensor meshes reject higher degrees.
        assert!(
            FeSpace::new(Mesh::tensor(vec![0.0, 0.5, 1.0], vec![0.0, 0.5, 1.0]).unwrap(), 2)
                .is_err()
        );
    }

    #[test]
    fn fe_function_reproduces_its_own_space() {
        // Linear data in the linear simplicial space.
        let space = FeSpace::new(Mesh::triangulated_square(3).unwrap(), 1).unwrap();
        let lin = |x: Point| 0.3 + 1.7 * x[0] - 0.9 * x[1];
        let coeffs: Vec<f64> = (0..space.n_nodes()).map(|i| lin(space.node(i))).collect();
        let f = FeFunction::new(&space, coeffs).unwrap();
        for &x in &[[0.1, 0.2], [0.77, 0.33], [0.5, 0.5], [0.98, 0.01]] {
            assert_abs_diff_eq!(f.evaluate(x).unwrap(), lin(x), epsilon = 1e-12);
            let g = f.gradient_at(x).unwrap();
            assert_abs_diff_eq!(g[0], 1.7, epsilon = 1e-12);
            assert_abs_diff_eq!(g[1], -0.9, epsilon = 1e-12);
        }
        // Nodal evaluation returns the coefficient.
        for i in 0..space.n_nodes() {
            assert_abs_diff_eq!(f.evaluate(space.node(i)).unwrap(), f.coeff(i), epsilon = 1e-12);
        }
        assert!(matches!(f.evaluate([2.0, 2.0]), Err(Error::PointOutsideMesh(_, _))));

        // Bilinear data (including the xy term) in the tensor space.
        let space = FeSpace::new(
            Mesh::tensor(vec![0.0, 0.4, 0.7, 1.0], vec![0.0, 0.5, 1.0]).unwrap(),
            1,
        )
        .unwrap();
        let bil = |x: Point| 0.5 - x[0] + 2.0 * x[1] + 3.0 * x[0] * x[1];
        let coeffs: Vec<f64> = (0..space.n_nodes()).map(|i| bil(space.node(i))).collect();
        let f = FeFunction::new(&space, coeffs).unwrap();
        for &x in &[[0.2, 0.3], [0.65, 0.8], [0.9, 0.1]] {
            assert_abs_diff_eq!(f.evaluate(x).unwrap(), bil(x), epsilon = 1e-12);
        }

        // Quadratic data in the quadratic spaces (1-d and 2-d).
        let space = FeSpace::new(Mesh::interval(0.0, 1.0, 4).unwrap(), 2).unwrap();
        let quad1 = |x: Point| 1.0 - 2.0 * x[0] + 3.5 * x[0] * x[0];
        let coeffs: Vec<f64> = (0..space.n_nodes()).map(|i| quad1(space.node(i))).collect();
        let f = FeFunction::new(&space, coeffs).unwrap();
        for &x in &[[0.1, 0.0], [0.33, 0.0], [0.81, 0.0]] {
            assert_abs_diff_eq!(f.evaluate(x).unwrap(), quad1(x), epsilon = 1e-12);
        }

        let space = FeSpace::new(Mesh::triangulated_square(2).unwrap(), 2).unwrap();
        let quad2 = |x: Point| x[0] * x[0] - 0.5 * x[0] * x[1] + 2.0 * x[1] - 1.0;
        let coeffs: Vec<f64> = (0..space.n_nodes()).map(|i| quad2(space.node(i))).collect();
        let f = FeFunction::new(&space, coeffs).unwrap();
        for &x in &[[0.3, 0.4], [0.6, 0.1], [0.45, 0.45]] {
            assert_abs_diff_eq!(f.evaluate(x).unwrap(), quad2(x), epsilon = 1e-12);
        }
    }

    #[test]
    fn quasi_interpolant_boundary_zero_and_linearity() {
        let space = FeSpace::new(Mesh::triangulated_square(4).unwrap(), 1).unwrap();
        let zero = SmoothFn::new(2, usize::MAX, |_, _| 0.0);
        let f0 = quasi_interpolate(&zero, &space).unwrap();
        assert!(f0.coeffs().iter().all(|&c| c == 0.0));

        let v = wave();
        let u = SmoothFn::new(2, usize::MAX, |k, x| {
            0.5f64.powi(k[1] as i32) * (x[0] + 0.5 * x[1]).exp()
        });
        let fv = quasi_interpolate(&v, &space).unwrap();
        let fu = quasi_interpolate(&u, &space).unwrap();
        // Boundary coefficients vanish exactly.
        for i in 0..space.n_nodes() {
            if space.is_boundary_node(i) {
                assert_eq!(fv.coeff(i), 0.0);
            }
        }
        // Linearity to roundoff: interpolate 2v - 3u in one pass.
        let comb = SmoothFn::new(2, usize::MAX, |k, x| {
            let pi = std::f64::consts::PI;
            let f = |t: f64, d: usize| -> f64 {
                pi.powi(d as i32)
                    * match d % 4 {
                        0 => t.sin(),
                        1 => t.cos(),
                        2 => -t.sin(),
                        _ => -t.cos(),
                    }
            };
            2.0 * f(pi * x[0], k[0]) * f(pi * x[1], k[1])
                - 3.0 * 0.5f64.powi(k[1] as i32) * (x[0] + 0.5 * x[1]).exp()
        });
        let fc = quasi_interpolate(&comb, &space).unwrap();
        for i in 0..space.n_nodes() {
            assert_abs_diff_eq!(
                fc.coeff(i),
                2.0 * fv.coeff(i) - 3.0 * fu.coeff(i),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn quasi_interpolant_reproduces_polynomials_on_interior_patches() {
        // Linear reproduction in the linear simplicial space.
        let space = FeSpace::new(Mesh::triangulated_square(6).unwrap(), 1).unwrap();
        let mut v = Poly::zero(2, [0.0, 0.0], 1);
        v.set_coeff([0, 0], 0.4);
        v.set_coeff([1, 0], -1.1);
        v.set_coeff([0, 1], 0.8);
        let vf = SmoothFn::from_poly(&v);
        let f = quasi_interpolate(&vf, &space).unwrap();
        let inner = fully_interior_elements(&space);
        assert!(!inner.is_empty());
        for &e in &inner {
            for x in sample_points(space.mesh(), e) {
                assert_abs_diff_eq!(f.evaluate_in(e, x).unwrap(), v.eval(x), epsilon = 1e-9);
            }
        }

        // Quadratic reproduction in the quadratic space.
        let space = FeSpace::new(Mesh::triangulated_square(6).unwrap(), 2).unwrap();
        let mut v = Poly::zero(2, [0.0, 0.0], 2);
        v.set_coeff([0, 0], 0.2);
        v.set_coeff([1, 0], 1.0);
        v.set_coeff([0, 1], -0.7);
        v.set_coeff([2, 0], 0.6);
        v.set_coeff([1, 1], -0.4);
        v.set_coeff([0, 2], 0.9);
        let vf = SmoothFn::from_poly(&v);
        let f = quasi_interpolate(&vf, &space).unwrap();
        let inner = fully_interior_elements(&space);
        assert!(!inner.is_empty());
        for &e in &inner {
            for x in sample_points(space.mesh(), e) {
                assert_abs_diff_eq!(f.evaluate_in(e, x).unwrap(), v.eval(x), epsilon = 1e-9);
            }
        }

        // Bilinear nodal consistency in the tensor space: the degree-one
        // average at a node of a bilinear function recovers its value
        // there (the mixed term's contribution cancels by the bump's
        // per-axis symmetry), up to the rule's odd-moment error.
        let space = FeSpace::new(
            Mesh::tensor(
                (0..=6).map(|i| i as f64 / 6.0).collect(),
                (0..=6).map(|i| i as f64 / 6.0).collect(),
            )
            .unwrap(),
            1,
        )
        .unwrap();
        let mut v = Poly::zero(2, [0.0, 0.0], 1);
        v.set_coeff([0, 0], -0.3);
        v.set_coeff([1, 0], 0.9);
        v.set_coeff([0, 1], 0.5);
        v.set_coeff([1, 1], 2.0);
        let vf = SmoothFn::from_poly(&v);
        let f = quasi_interpolate(&vf, &space).unwrap();
        for i in 0..space.n_nodes() {
            if !space.is_boundary_node(i) {
                assert_abs_diff_eq!(f.coeff(i), v.eval(space.node(i)), epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn quasi_interpolant_nodal_values_second_order_accurate() {
        // v = sin(pi x) on (0,1) with h = 1/8: interior nodal values within
        // O(h^2) of v, for both the derivative route and the sampled
        // (integration-by-parts) route.
        let pi = std::f64::consts::PI;
        let space = FeSpace::new(Mesh::interval(0.0, 1.0, 8).unwrap(), 1).unwrap();
        let smooth = wave_1d();
        let sampled = SmoothFn::from_values(1, move |x| (pi * x[0]).sin());
        let f_smooth = quasi_interpolate(&smooth, &space).unwrap();
        let f_sampled = quasi_interpolate(&sampled, &space).unwrap();
        let h = 0.125;
        for i in 0..space.n_nodes() {
            if space.is_boundary_node(i) {
                continue;
            }
            let exact = (pi * space.node(i)[0]).sin();
            assert!((f_smooth.coeff(i) - exact).abs() <= h * h);
            assert!((f_sampled.coeff(i) - exact).abs() <= h * h);
            // The two routes compute the same average through different
            // quadratures.
            assert_abs_diff_eq!(f_smooth.coeff(i), f_sampled.coeff(i), epsilon = 1e-6);
        }
    }

    #[test]
    fn simplicial_rates_across_weights() {
        let v = wave();
        let x0 = [0.5, 0.5];
        let weights = vec![
            Weight::one(2),
            Weight::power(2, x0, 0.5).unwrap(),
            Weight::dirac_log(2, x0, 1.0).unwrap(),
        ];

        let mut hs = Vec::new();
        // Per weight: plain errors for k = 0 and 1, scaled for k = 0,
        // boundary-restricted plain for k = 0, local ratio maxima (k = 1).
        let nw = weights.len();
        let mut plain0 = vec![Vec::new(); nw];
        let mut plain1 = vec![Vec::new(); nw];
        let mut scaled0 = vec![Vec::new(); nw];
        let mut bdry0 = vec![Vec::new(); nw];
        let mut ratio1 = vec![Vec::new(); nw];
        for &n in &[4usize, 8, 16, 32] {
            let space = FeSpace::new(Mesh::triangulated_square(n).unwrap(), 1).unwrap();
            let f = quasi_interpolate(&v, &space).unwrap();
            hs.push(space.mesh().h_max());
            let bdry: Vec<usize> = (0..space.mesh().n_elements())
                .filter(|&e| space.elem_nodes(e).iter().any(|&i| space.is_boundary_node(i)))
                .collect();
            for (wi, w) in weights.iter().enumerate() {
                let rule = QuadratureRule::build(space.mesh(), w, 4, 1e-9).unwrap();
                let g0 = global_error(&v, &f, 2.0, 0, &rule).unwrap();
                let g1 = global_error(&v, &f, 2.0, 1, &rule).unwrap();
                plain0[wi].push(g0.plain);
                plain1[wi].push(g1.plain);
                scaled0[wi].push(g0.scaled);
                bdry0[wi].push(global_error_on(&v, &f, 2.0, 0, &rule, &bdry).unwrap().plain);
                if n <= 16 {
                    let rows = local_error_table(&v, &f, 2.0, 1, &rule).unwrap();
                    let max = rows
                        .iter()
                        .filter(|r| r.ratio.is_finite())
                        .map(|r| r.ratio)
                        .fold(0.0, f64::max);
                    ratio1[wi].push(max);
                }
            }
        }
        for wi in 0..nw {
            let s0 = fit_slope(&hs, &plain0[wi]);
            let s1 = fit_slope(&hs, &plain1[wi]);
            assert!((s0 - 2.0).abs() <= 0.2, "L2 rate {s0} for weight {wi}");
            assert!((s1 - 1.0).abs() <= 0.2, "H1 rate {s1} for weight {wi}");
            // Scaled error stays bounded across refinements.
            let smax = scaled0[wi].iter().cloned().fold(0.0, f64::max);
            let smin = scaled0[wi].iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(smax / smin < 2.5, "scaled errors drift for weight {wi}: {:?}", scaled0[wi]);
            // Local ratios bounded (including elements at the singularity).
            let rmax = ratio1[wi].iter().cloned().fold(0.0, f64::max);
            assert!(
                rmax <= 1.5 * ratio1[wi][0],
                "local ratios grow for weight {wi}: {:?}",
                ratio1[wi]
            );
            // Elements touching the boundary (where the interpolant carries
            // the homogeneous trace and the data vanishes) converge at
            // least at the interior order.
            let sb = fit_slope(&hs, &bdry0[wi]);
            assert!(sb >= 1.8, "boundary-element L2 rate {sb} for weight {wi}");
        }

        // Quadratic elements, two dimensions: orders 3 (L2) and 2 (H1).
        let w1 = Weight::one(2);
        let mut hs2 = Vec::new();
        let mut p2_l2 = Vec::new();
        let mut p2_h1 = Vec::new();
        for &n in &[4usize, 8, 16] {
            let space = FeSpace::new(Mesh::triangulated_square(n).unwrap(), 2).unwrap();
            let rule = QuadratureRule::build(space.mesh(), &w1, 6, 1e-10).unwrap();
            let f = quasi_interpolate(&v, &space).unwrap();
            hs2.push(space.mesh().h_max());
            p2_l2.push(global_error(&v, &f, 2.0, 0, &rule).unwrap().plain);
            p2_h1.push(global_error(&v, &f, 2.0, 1, &rule).unwrap().plain);
        }
        let s0 = fit_slope(&hs2, &p2_l2);
        let s1 = fit_slope(&hs2, &p2_h1);
        assert!((s0 - 3.0).abs() <= 0.2, "P2 L2 rate {s0}");
        assert!((s1 - 2.0).abs() <= 0.2, "P2 H1 rate {s1}");

        // Quadratic elements in one dimension: third order in L2.
        let v1 = wave_1d();
        let w1d = Weight::one(1);
        let mut hs1 = Vec::new();
        let mut errs1 = Vec::new();
        for &n in &[4usize, 8, 16, 32] {
            let space = FeSpace::new(Mesh::interval(0.0, 1.0, n).unwrap(), 2).unwrap();
            let rule = QuadratureRule::build(space.mesh(), &w1d, 6, 1e-10).unwrap();
            let f = quasi_interpolate(&v1, &space).unwrap();
            hs1.push(space.mesh().h_max());
            errs1.push(global_error(&v1, &f, 2.0, 0, &rule).unwrap().plain);
        }
        let s = fit_slope(&hs1, &errs1);
        assert!((s - 3.0).abs() <= 0.2, "P2 1-d L2 rate {s}");
    }

    #[test]
    fn global_error_additivity_and_table_rejections() {
        let v = wave();
        let space = FeSpace::new(Mesh::triangulated_square(6).unwrap(), 1).unwrap();
        let rule = QuadratureRule::build(space.mesh(), &Weight::one(2), 4, 1e-10).unwrap();
        let f = quasi_interpolate(&v, &space).unwrap();

        // Disjoint element sets recombine exactly in p-th power.
        let all: Vec<usize> = (0..space.mesh().n_elements()).collect();
        let evens: Vec<usize> = all.iter().cloned().filter(|e| e % 2 == 0).collect();
        let odds: Vec<usize> = all.iter().cloned().filter(|e| e % 2 == 1).collect();
        let p = 2.0;
        let full = global_error_on(&v, &f, p, 0, &rule, &all).unwrap();
        let ge = global_error_on(&v, &f, p, 0, &rule, &evens).unwrap();
        let go = global_error_on(&v, &f, p, 0, &rule, &odds).unwrap();
        assert_relative_eq!(
            full.plain.powf(p),
            ge.plain.powf(p) + go.plain.powf(p),
            max_relative = 1e-12
        );
        assert_relative_eq!(
            full.scaled.powf(p),
            ge.scaled.powf(p) + go.scaled.powf(p),
            max_relative = 1e-12
        );

        // Polynomial data lying in the space: interior errors at roundoff.
        let mut vp = Poly::zero(2, [0.0, 0.0], 1);
        vp.set_coeff([1, 0], 1.0);
        vp.set_coeff([0, 1], -2.0);
        let vpf = SmoothFn::from_poly(&vp);
        let fp = quasi_interpolate(&vpf, &space).unwrap();
        let rows = local_error_table(&vpf, &fp, 2.0, 0, &rule).unwrap();
        let inner = fully_interior_elements(&space);
        assert!(!inner.is_empty());
        for &e in &inner {
            assert!(rows[e].error <= 1e-9, "elem {e}: {}", rows[e].error);
        }
        let inner_err = global_error_on(&vpf, &fp, 2.0, 0, &rule, &inner).unwrap();
        assert!(inner_err.plain <= 1e-9);

        // Sampled data cannot provide error tables.
        let sampled = SmoothFn::from_values(2, |x| x[0] + x[1]);
        assert!(matches!(
            local_error_table(&sampled, &f, 2.0, 0, &rule),
            Err(Error::DerivativeUnavailable { .. })
        ));
        // Error orders beyond m + 1 are rejected.
        assert!(local_error_table(&v, &f, 2.0, 3, &rule).is_err());
    }

    #[test]
    fn stability_ratios_bounded() {
        let v = wave();
        let x0 = [0.5, 0.5];
        for radial in [false, true] {
            let w = if radial { Weight::power(2, x0, 0.5).unwrap() } else { Weight::one(2) };
            for k in [0usize, 1] {
                let mut level_max = Vec::new();
                for &n in &[4usize, 8, 16] {
                    let space = FeSpace::new(Mesh::triangulated_square(n).unwrap(), 1).unwrap();
                    let rule = QuadratureRule::build(space.mesh(), &w, 4, 1e-9).unwrap();
                    let f = quasi_interpolate(&v, &space).unwrap();
                    let rows = stability_table(&v, &f, 2.0, k, &rule).unwrap();
                    let max =
                        rows.iter().map(|r| r.ratio).filter(|r| r.is_finite()).fold(0.0, f64::max);
                    level_max.push(max);
                }
                let overall = level_max.iter().cloned().fold(0.0, f64::max);
                assert!(
                    overall <= 1.5 * level_max[0] || overall < 1.0,
                    "stability ratios grow for k={k}, radial={radial}: {level_max:?}"
                );
            }
        }
    }

    #[test]
    fn anisotropic_errors_track_directions() {
        // v = sin(pi x) depends on x only and vanishes on the x-boundary.
        // Errors are measured over the fixed band y in [1/4, 3/4], which
        // every grid below resolves exactly.
        let v = wave_x_only();
        let grid = |n: usize| -> Vec<f64> { (0..=n).map(|i| i as f64 / n as f64).collect() };
        let run = |nx: usize, ny: usize| -> (f64, f64) {
            let space = FeSpace::new(Mesh::tensor(grid(nx), grid(ny)).unwrap(), 1).unwrap();
            let mesh = space.mesh();
            let rule = QuadratureRule::build(mesh, &Weight::one(2), 4, 1e-10).unwrap();
            let f = quasi_interpolate(&v, &space).unwrap();
            let band: Vec<usize> = (0..mesh.n_elements())
                .filter(|&e| {
                    mesh.elem_coords(e)
                        .iter()
                        .all(|c| c[1] >= 0.25 - 1e-12 && c[1] <= 0.75 + 1e-12)
                })
                .collect();
            (
                global_error_on(&v, &f, 2.0, 0, &rule, &band).unwrap().plain,
                global_error_on(&v, &f, 2.0, 1, &rule, &band).unwrap().plain,
            )
        };

        // Refining y alone moves both errors by less than 5%.
        let (l2_base, h1_base) = run(8, 8);
        let (l2_fine, h1_fine) = run(8, 32);
        assert!(
            (l2_fine - l2_base).abs() <= 0.05 * l2_base,
            "L2 moved {l2_base} -> {l2_fine} under y-refinement"
        );
        assert!(
            (h1_fine - h1_base).abs() <= 0.05 * h1_base,
            "H1 moved {h1_base} -> {h1_fine} under y-refinement"
        );

        // Refining x drives the errors at orders 2 (L2) and 1 (H1) in h_x.
        let mut hxs = Vec::new();
        let mut l2s = Vec::new();
        let mut h1s = Vec::new();
        for &nx in &[8usize, 16, 32, 64] {
            let (l2, h1) = run(nx, 8);
            hxs.push(1.0 / nx as f64);
            l2s.push(l2);
            h1s.push(h1);
        }
        let s0 = fit_slope(&hxs, &l2s);
        let s1 = fit_slope(&hxs, &h1s);
        assert!((s0 - 2.0).abs() <= 0.2, "directional L2 rate {s0}");
        assert!((s1 - 1.0).abs() <= 0.15, "directional H1 rate {s1}");
    }

    #[test]
    fn metrics_errors_and_compatibility() {
        let v = wave();
        let space = FeSpace::new(Mesh::triangulated_square(8).unwrap(), 1).unwrap();
        let one = Weight::one(2);
        let rule = QuadratureRule::build(space.mesh(), &one, 4, 1e-10).unwrap();
        let f = quasi_interpolate(&v, &space).unwrap();

        // Equal constant weights, p = q = 2: the error column must agree
        // with the plain local error table.
        let rows = different_metrics_error(&v, &f, &one, 2.0, &one, 2.0, 0, &rule, &rule).unwrap();
        let base = local_error_table(&v, &f, 2.0, 0, &rule).unwrap();
        for (r, b) in rows.iter().zip(&base) {
            assert_relative_eq!(r.error, b.error, max_relative = 1e-12);
            assert!(r.ratio.is_finite() && r.ratio > 0.0);
        }

        // p = 2, q = 4 on the unit square: ratios bounded across levels.
        let mut level_max = Vec::new();
        for &n in &[4usize, 8, 16] {
            let space = FeSpace::new(Mesh::triangulated_square(n).unwrap(), 1).unwrap();
            let rule = QuadratureRule::build(space.mesh(), &one, 4, 1e-10).unwrap();
            let f = quasi_interpolate(&v, &space).unwrap();
            let rows =
                different_metrics_error(&v, &f, &one, 4.0, &one, 2.0, 0, &rule, &rule).unwrap();
            level_max.push(rows.iter().map(|r| r.ratio).fold(0.0, f64::max));
        }
        let overall = level_max.iter().cloned().fold(0.0, f64::max);
        assert!(overall <= 1.5 * level_max[0], "two-metric ratios grow: {level_max:?}");

        // Gradient variant (k = 1) with the same power weight on both
        // sides.
        let wpow = Weight::power(2, [0.5, 0.5], 0.5).unwrap();
        let rule_pow = QuadratureRule::build(space.mesh(), &wpow, 4, 1e-9).unwrap();
        let rows =
            different_metrics_error(&v, &f, &wpow, 2.0, &wpow, 2.0, 1, &rule_pow, &rule_pow)
                .unwrap();
        assert!(rows.iter().all(|r| r.error.is_finite() && r.factor > 0.0));

        // Reciprocal point-mass weight against the plain measure: the
        // k = 0 errors carry the log-corrected factor and stay in ratio.
        let varpi_inv = Weight::dirac_log(2, [0.5, 0.5], 1.0).unwrap().reciprocal();
        let rule_vi = QuadratureRule::build(space.mesh(), &varpi_inv, 4, 1e-8).unwrap();
        let rows =
            different_metrics_error(&v, &f, &varpi_inv, 2.0, &one, 2.0, 0, &rule_vi, &rule)
                .unwrap();
        assert!(rows.iter().all(|r| r.error.is_finite() && r.ratio.is_finite()));
        let max_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
        assert!(max_ratio < 5.0, "point-mass two-metric ratio {max_ratio}");

        // Unsupported pairs and invalid exponents are rejected.
        assert!(matches!(
            different_metrics_error(&v, &f, &wpow, 2.0, &one, 2.0, 0, &rule_pow, &rule),
            Err(Error::UnsupportedPair(_))
        ));
        assert!(different_metrics_error(&v, &f, &one, 2.0, &one, 4.0, 0, &rule, &rule).is_err());

        // Compatibility quotient closed form for unit weights in 2-d:
        // (r/R) (r^2/R^2)^{1/2} (r^2/R^2)^{-1/2} = r/R, maximized by the
        // closest pair.
        let radii = [0.1, 0.2, 0.4, 0.8];
        let got = compatibility_probe(&one, 2.0, &one, 2.0, [0.3, 0.4], &radii).unwrap();
        assert_relative_eq!(got, 0.5, max_relative = 1e-9);

        // Point-mass reciprocal against the constant weight: bounded over
        // dyadic radii.
        let got = compatibility_probe(
            &varpi_inv,
            2.0,
            &one,
            2.0,
            [0.5, 0.5],
            &[0.05, 0.1, 0.2, 0.4],
        )
        .unwrap();
        assert!(got.is_finite() && got > 0.0 && got < 10.0, "quotient {got}");

        // The same singular power weight on both sides: bounded.
        let wp = Weight::power(2, [0.0, 0.0], 0.5).unwrap();
        let got =
            compatibility_probe(&wp, 2.0, &wp, 2.0, [0.0, 0.0], &[0.05, 0.1, 0.2, 0.4]).unwrap();
        assert!(got.is_finite() && got > 0.0 && got < 10.0, "quotient {got}");
    }

    #[test]
    fn csv_rendering_is_stable() {
        let rows = vec![
            LocalErrorRow {
                elem: 0,
                h: 0.25,
                sizes: [0.25, 0.25],
                error: 0.5,
                patch_seminorm: 2.0,
                ratio: 4.0,
            },
            LocalErrorRow {
                elem: 7,
                h: 0.125,
                sizes: [0.125, 0.0625],
                error: 0.001,
                patch_seminorm: 1.5,
                ratio: 0.42666666666666664,
            },
        ];
        let csv = local_error_csv(&rows);
        assert_eq!(
            csv,
            "elem,h1,h2,error,patch_seminorm,ratio\n\
             0,0.25,0.25,0.5,2,4\n\
             7,0.125,0.0625,0.001,1.5,0.42666666666666664\n"
        );
    }
}
