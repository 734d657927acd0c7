//! Structured meshes: interval partitions, uniform triangulations of a
//! square, and tensor-product rectangle meshes (possibly graded toward an
//! axis).
//!
//! The mesh stores its generating partitions, so point location is a binary
//! search, boundary detection is an exact coordinate comparison against the
//! partition ends, and uniform refinement inserts midpoints without touching
//! existing nodes — coarse nodes survive refinement bit-for-bit, which the
//! nested-mesh error computations rely on. Graded partitions are instead
//! rebuilt from their defining formula at each resolution; doubling the cell
//! count reproduces the coarse nodes exactly because `(2k)/(2M)` rounds to
//! the same double as `k/M`.

use crate::error::{Error, Result};
use crate::geometry::{dist, Point};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementKind {
    Segment,
    Triangle,
    Rect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

#[derive(Debug, Clone)]
enum Structure {
    Interval { xs: Vec<f64> },
    /// Uniform grid of squares, each split into two triangles along the
    /// main diagonal (lower-left to upper-right).
    TriGrid { xs: Vec<f64>, ys: Vec<f64> },
    Tensor { xs: Vec<f64>, ys: Vec<f64> },
}

/// Maximum shape constant and neighbour-size ratio of a mesh.
#[derive(Debug, Clone, Copy)]
pub struct ShapeDiagnostics {
    /// `max_T h_T / rho_T` with `rho_T` the inscribed-ball diameter.
    pub max_sigma: f64,
    /// Largest ratio of consecutive cell sizes along any axis (weak
    /// regularity of the underlying partitions); 1 for uniform meshes.
    pub max_weak_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    dim: usize,
    kind: ElementKind,
    nodes: Vec<Point>,
    /// Vertex indices per element; unused trailing slots hold `usize::MAX`.
    elements: Vec<[usize; 4]>,
    boundary: Vec<bool>,
    structure: Structure,
    /// Elements incident to each node, in ascending element order.
    star: Vec<Vec<usize>>,
}

fn validate_partition(xs: &[f64]) -> Result<()> {
    if xs.len() < 2 {
        return Err(Error::InvalidParameter("partition needs at least two points".into()));
    }
    if xs.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("partition must be strictly increasing".into()));
    }
    Ok(())
}

fn uniform_partition(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| a + (b - a) * (i as f64 / n as f64)).collect()
}

impl Mesh {
    /// Uniform partition of `[a, b]` into `n` segments.
    pub fn interval(a: f64, b: f64, n: usize) -> Result<Mesh> {
        if n == 0 || !(b > a) {
            return Err(Error::InvalidParameter(format!("interval [{a}, {b}] with {n} cells")));
        }
        Mesh::interval_from_partition(uniform_partition(a, b, n))
    }

    /// Segment mesh over an arbitrary strictly increasing partition.
    pub fn interval_from_partition(xs: Vec<f64>) -> Result<Mesh> {
        validate_partition(&xs)?;
        let n = xs.len() - 1;
        let nodes: Vec<Point> = xs.iter().map(|&x| [x, 0.0]).collect();
        let elements: Vec<[usize; 4]> =
            (0..n).map(|i| [i, i + 1, usize::MAX, usize::MAX]).collect();
        let mut boundary = vec![false; nodes.len()];
        boundary[0] = true;
        boundary[n] = true;
        let mut mesh = Mesh {
            dim: 1,
            kind: ElementKind::Segment,
            nodes,
            elements,
            boundary,
            structure: Structure::Interval { xs },
            star: Vec::new(),
        };
        mesh.build_star();
        Ok(mesh)
    }

    /// Partition of `[0, height]` graded toward `0`:
    /// `x_k = height * (k / m)^gamma`. Doubling `m` reproduces every coarse
    /// node exactly.
    pub fn graded_interval(height: f64, m: usize, gamma: f64) -> Result<Mesh> {
        if !(height > 0.0) || m == 0 || !(gamma >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "graded partition: height {height}, cells {m}, grading {gamma}"
            )));
        }
        let xs: Vec<f64> =
            (0..=m).map(|k| height * (k as f64 / m as f64).powf(gamma)).collect();
        Mesh::interval_from_partition(xs)
    }

    /// `n x n` grid of squares over `[lo, hi]`, each split into two
    /// triangles along the main diagonal.
    pub fn triangulated_box(lo: Point, hi: Point, n: usize) -> Result<Mesh> {
        if n == 0 || !(hi[0] > lo[0]) || !(hi[1] > lo[1]) {
            return Err(Error::InvalidParameter("degenerate triangulated box".into()));
        }
        let xs = uniform_partition(lo[0], hi[0], n);
        let ys = uniform_partition(lo[1], hi[1], n);
        let id = |i: usize, j: usize| j * (n + 1) + i;
        let mut nodes = Vec::with_capacity((n + 1) * (n + 1));
        for j in 0..=n {
            for i in 0..=n {
                nodes.push([xs[i], ys[j]]);
            }
        }
        let mut elements = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let (v00, v10) = (id(i, j), id(i + 1, j));
                let (v01, v11) = (id(i, j + 1), id(i + 1, j + 1));
                elements.push([v00, v10, v11, usize::MAX]);
                elements.push([v00, v11, v01, usize::MAX]);
            }
        }
        let mut boundary = vec![false; nodes.len()];
        for j in 0..=n {
            for i in 0..=n {
                if i == 0 || i == n || j == 0 || j == n {
                    boundary[id(i, j)] = true;
                }
            }
        }
        let mut mesh = Mesh {
            dim: 2,
            kind: ElementKind::Triangle,
            nodes,
            elements,
            boundary,
            structure: Structure::TriGrid { xs, ys },
            star: Vec::new(),
        };
        mesh.build_star();
        Ok(mesh)
    }

    /// Uniform triangulation of the unit square.
    pub fn triangulated_square(n: usize) -> Result<Mesh> {
        Mesh::triangulated_box([0.0, 0.0], [1.0, 1.0], n)
    }

    /// Triangulation of a square domain with mesh size at most `target_h`:
    /// the grid count is `ceil(sqrt(2) * side / target_h)` so that the
    /// triangle diameters (the square-cell diagonals) stay below the target.
    pub fn simplicial(lo: Point, hi: Point, target_h: f64) -> Result<Mesh> {
        let side = hi[0] - lo[0];
        if (hi[1] - lo[1] - side).abs() > 1e-12 * side.abs() {
            return Err(Error::UnsupportedDomain(
                "simplicial constructor expects a square domain".into(),
            ));
        }
        if !(target_h > 0.0) {
            return Err(Error::InvalidParameter("mesh size target must be positive".into()));
        }
        let n = (std::f64::consts::SQRT_2 * side / target_h).ceil() as usize;
        Mesh::triangulated_box(lo, hi, n.max(1))
    }

    /// Tensor-product rectangle mesh from per-axis partitions.
    pub fn tensor(xs: Vec<f64>, ys: Vec<f64>) -> Result<Mesh> {
        validate_partition(&xs)?;
        validate_partition(&ys)?;
        let (nx, ny) = (xs.len() - 1, ys.len() - 1);
        let id = |i: usize, j: usize| j * (nx + 1) + i;
        let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                nodes.push([xs[i], ys[j]]);
            }
        }
        let mut elements = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                elements.push([id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
        let mut boundary = vec![false; nodes.len()];
        for j in 0..=ny {
            for i in 0..=nx {
                if i == 0 || i == nx || j == 0 || j == ny {
                    boundary[id(i, j)] = true;
                }
            }
        }
        let mut mesh = Mesh {
            dim: 2,
            kind: ElementKind::Rect,
            nodes,
            elements,
            boundary,
            structure: Structure::Tensor { xs, ys },
            star: Vec::new(),
        };
        mesh.build_star();
        Ok(mesh)
    }

    fn build_star(&mut self) {
        let mut star = vec![Vec::new(); self.nodes.len()];
        for (e, verts) in self.elements.iter().enumerate() {
            for &v in verts.iter().take(self.vertices_per_element()) {
                star[v].push(e);
            }
        }
        self.star = star;
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> ElementKind {
        self.kind
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn vertices_per_element(&self) -> usize {
        match self.kind {
            ElementKind::Segment => 2,
            ElementKind::Triangle => 3,
            ElementKind::Rect => 4,
        }
    }

    pub fn node(&self, i: usize) -> Point {
        self.nodes[i]
    }

    pub fn elem_vertices(&self, e: usize) -> &[usize] {
        &self.elements[e][..self.vertices_per_element()]
    }

    /// Coordinates of the element's vertices (counterclockwise).
    pub fn elem_coords(&self, e: usize) -> Vec<Point> {
        self.elem_vertices(e).iter().map(|&v| self.nodes[v]).collect()
    }

    /// Per-axis partition of the underlying structured grid.
    pub fn partition(&self, axis: usize) -> &[f64] {
        match (&self.structure, axis) {
            (Structure::Interval { xs }, _) => xs,
            (Structure::TriGrid { xs, .. }, 0) | (Structure::Tensor { xs, .. }, 0) => xs,
            (Structure::TriGrid { ys, .. }, _) | (Structure::Tensor { ys, .. }, _) => ys,
        }
    }

    /// Element diameter.
    pub fn h(&self, e: usize) -> f64 {
        let c = self.elem_coords(e);
        match self.kind {
            ElementKind::Segment => c[1][0] - c[0][0],
            ElementKind::Triangle => {
                let mut h: f64 = 0.0;
                for i in 0..3 {
                    h = h.max(dist(2, c[i], c[(i + 1) % 3]));
                }
                h
            }
            ElementKind::Rect => (c[2][0] - c[0][0]).hypot(c[2][1] - c[0][1]),
        }
    }

    /// Diameter of the largest inscribed ball (for segments, the length).
    pub fn rho(&self, e: usize) -> f64 {
        let c = self.elem_coords(e);
        match self.kind {
            ElementKind::Segment => c[1][0] - c[0][0],
            ElementKind::Triangle => {
                let per: f64 =
                    (0..3).map(|i| dist(2, c[i], c[(i + 1) % 3])).sum();
                4.0 * self.area(e) / per
            }
            ElementKind::Rect => (c[2][0] - c[0][0]).min(c[2][1] - c[0][1]),
        }
    }

    /// Per-direction sizes `[h1, h2]` (rectangles and segments).
    pub fn sizes(&self, e: usize) -> [f64; 2] {
        let c = self.elem_coords(e);
        match self.kind {
            ElementKind::Segment => [c[1][0] - c[0][0], 0.0],
            ElementKind::Rect => [c[2][0] - c[0][0], c[2][1] - c[0][1]],
            ElementKind::Triangle => {
                let h = self.h(e);
                [h, h]
            }
        }
    }

    pub fn area(&self, e: usize) -> f64 {
        let c = self.elem_coords(e);
        match self.kind {
            ElementKind::Segment => c[1][0] - c[0][0],
            ElementKind::Triangle => {
                0.5 * ((c[1][0] - c[0][0]) * (c[2][1] - c[0][1])
                    - (c[2][0] - c[0][0]) * (c[1][1] - c[0][1]))
            }
            ElementKind::Rect => (c[2][0] - c[0][0]) * (c[2][1] - c[0][1]),
        }
    }

    pub fn h_max(&self) -> f64 {
        (0..self.n_elements()).map(|e| self.h(e)).fold(0.0, f64::max)
    }

    pub fn h_min(&self) -> f64 {
        (0..self.n_elements()).map(|e| self.h(e)).fold(f64::INFINITY, f64::min)
    }

    /// Elements incident to a node.
    pub fn star(&self, node: usize) -> &[usize] {
        &self.star[node]
    }

    /// Elements sharing at least one vertex with `e` (including `e`).
    pub fn element_patch(&self, e: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .elem_vertices(e)
            .iter()
            .flat_map(|&v| self.star[v].iter().copied())
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Largest element diameter in the star of a node.
    pub fn star_h(&self, node: usize) -> f64 {
        self.star[node].iter().map(|&e| self.h(e)).fold(0.0, f64::max)
    }

    /// Distance from a node to the boundary of its star (the union of its
    /// incident elements): the minimum distance to any element edge that
    /// does not contain the node.
    pub fn star_boundary_distance(&self, node: usize) -> f64 {
        let z = self.nodes[node];
        let mut best = f64::INFINITY;
        for &e in &self.star[node] {
            let verts = self.elem_vertices(e);
            let k = verts.len();
            for i in 0..k {
                let (a, b) = (verts[i], verts[(i + 1) % k]);
                if a == node || b == node {
                    continue;
                }
                best = best.min(point_segment_distance(z, self.nodes[a], self.nodes[b]));
            }
            if k == 2 {
                for &v in verts {
                    if v != node {
                        best = best.min(dist(1, z, self.nodes[v]));
                    }
                }
            }
        }
        best
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary[node]
    }

    /// Whether a node lies on the given side of the (box) domain; exact
    /// comparison against the stored partition ends.
    pub fn on_side(&self, node: usize, side: Side) -> bool {
        let p = self.nodes[node];
        match side {
            Side::Left => p[0] == self.partition(0)[0],
            Side::Right => p[0] == *self.partition(0).last().unwrap(),
            Side::Bottom => {
                if self.dim == 1 {
                    false
                } else {
                    p[1] == self.partition(1)[0]
                }
            }
            Side::Top => {
                if self.dim == 1 {
                    false
                } else {
                    p[1] == *self.partition(1).last().unwrap()
                }
            }
        }
    }

    /// Element containing `x`; points on shared faces resolve to the lower
    /// element index, points within a relative `1e-12` margin of the domain
    /// are clamped inside.
    pub fn locate(&self, x: Point) -> Result<usize> {
        let cell = |xs: &[f64], v: f64| -> Result<(usize, f64)> {
            let (a, b) = (xs[0], *xs.last().unwrap());
            let pad = 1e-12 * (b - a).abs().max(a.abs()).max(b.abs());
            if v < a - pad || v > b + pad {
                return Err(Error::PointOutsideMesh(x[0], x[1]));
            }
            let v = v.clamp(a, b);
            let pp = xs.partition_point(|&t| t < v);
            let idx = pp.max(1) - 1;
            Ok((idx.min(xs.len() - 2), v))
        };
        match &self.structure {
            Structure::Interval { xs } => Ok(cell(xs, x[0])?.0),
            Structure::Tensor { xs, ys } => {
                let (i, _) = cell(xs, x[0])?;
                let (j, _) = cell(ys, x[1])?;
                Ok(j * (xs.len() - 1) + i)
            }
            Structure::TriGrid { xs, ys } => {
                let (i, vx) = cell(xs, x[0])?;
                let (j, vy) = cell(ys, x[1])?;
                let xi = (vx - xs[i]) / (xs[i + 1] - xs[i]);
                let eta = (vy - ys[j]) / (ys[j + 1] - ys[j]);
                let base = 2 * (j * (xs.len() - 1) + i);
                // Cells split along the main diagonal: eta <= xi is the
                // lower triangle, which also takes the tie.
                Ok(if eta <= xi { base } else { base + 1 })
            }
        }
    }

    /// Shape constants of the mesh.
    pub fn shape_diagnostics(&self) -> ShapeDiagnostics {
        let max_sigma = (0..self.n_elements())
            .map(|e| self.h(e) / self.rho(e))
            .fold(0.0, f64::max);
        let mut max_weak_ratio: f64 = 1.0;
        let mut scan = |xs: &[f64]| {
            for w in xs.windows(3) {
                let (d0, d1) = (w[1] - w[0], w[2] - w[1]);
                max_weak_ratio = max_weak_ratio.max(d1 / d0).max(d0 / d1);
            }
        };
        match &self.structure {
            Structure::Interval { xs } => scan(xs),
            Structure::TriGrid { xs, ys } | Structure::Tensor { xs, ys } => {
                scan(xs);
                scan(ys);
            }
        }
        ShapeDiagnostics { max_sigma, max_weak_ratio }
    }

    /// Uniform refinement by midpoint insertion; existing nodes keep their
    /// exact coordinates.
    pub fn refine_uniform(&self) -> Mesh {
        let split = |xs: &[f64]| -> Vec<f64> {
            let mut out = Vec::with_capacity(2 * xs.len() - 1);
            for w in xs.windows(2) {
                out.push(w[0]);
                out.push(0.5 * (w[0] + w[1]));
            }
            out.push(*xs.last().unwrap());
            out
        };
        match &self.structure {
            Structure::Interval { xs } => Mesh::interval_from_partition(split(xs)).unwrap(),
            Structure::TriGrid { xs, ys } => {
                // The grid is uniform by construction; rebuilding at doubled
                // resolution equals the regular four-way split of each
                // triangle.
                let sx = split(xs);
                let sy = split(ys);
                Mesh::trigrid_from_partitions(sx, sy)
            }
            Structure::Tensor { xs, ys } => Mesh::tensor(split(xs), split(ys)).unwrap(),
        }
    }

    /// Refine rectangles along one axis only (midpoint insertion in that
    /// partition); the other axis is untouched bit-for-bit.
    pub fn refine_axis(&self, axis: usize) -> Result<Mesh> {
        let split = |xs: &[f64]| -> Vec<f64> {
            let mut out = Vec::with_capacity(2 * xs.len() - 1);
            for w in xs.windows(2) {
                out.push(w[0]);
                out.push(0.5 * (w[0] + w[1]));
            }
            out.push(*xs.last().unwrap());
            out
        };
        match &self.structure {
            Structure::Tensor { xs, ys } => {
                if axis == 0 {
                    Mesh::tensor(split(xs), ys.clone())
                } else {
                    Mesh::tensor(xs.clone(), split(ys))
                }
            }
            _ => Err(Error::UnsupportedDomain(
                "per-axis refinement only applies to tensor meshes".into(),
            )),
        }
    }

    fn trigrid_from_partitions(xs: Vec<f64>, ys: Vec<f64>) -> Mesh {
        // Same layout as `triangulated_box`, but keeping the given nodes.
        let n = xs.len() - 1;
        debug_assert_eq!(ys.len(), xs.len());
        let id = |i: usize, j: usize| j * (n + 1) + i;
        let mut nodes = Vec::with_capacity((n + 1) * (n + 1));
        for j in 0..=n {
            for i in 0..=n {
                nodes.push([xs[i], ys[j]]);
            }
        }
        let mut elements = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let (v00, v10) = (id(i, j), id(i + 1, j));
                let (v01, v11) = (id(i, j + 1), id(i + 1, j + 1));
                elements.push([v00, v10, v11, usize::MAX]);
                elements.push([v00, v11, v01, usize::MAX]);
            }
        }
        let mut boundary = vec![false; nodes.len()];
        for j in 0..=n {
            for i in 0..=n {
                if i == 0 || i == n || j == 0 || j == n {
                    boundary[id(i, j)] = true;
                }
            }
        }
        let mut mesh = Mesh {
            dim: 2,
            kind: ElementKind::Triangle,
            nodes,
            elements,
            boundary,
            structure: Structure::TriGrid { xs, ys },
            star: Vec::new(),
        };
        mesh.build_star();
        mesh
    }
}

fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (abx, aby) = (b[0] - a[0], b[1] - a[1]);
    let (apx, apy) = (p[0] - a[0], p[1] - a[1]);
    let len2 = abx * abx + aby * aby;
    let t = if len2 > 0.0 { ((apx * abx + apy * aby) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (cx, cy) = (a[0] + t * abx, a[1] + t * aby);
    (p[0] - cx).hypot(p[1] - cy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn interval_mesh_basics() {
        let m = Mesh::interval(0.0, 1.0, 4).unwrap();
        assert_eq!(m.n_nodes(), 5);
        assert_eq!(m.n_elements(), 4);
        assert_eq!(m.node(2), [0.5, 0.0]);
        assert!(m.is_boundary(0) && m.is_boundary(4) && !m.is_boundary(2));
        assert_relative_eq!(m.h(1), 0.25);
        assert_eq!(m.star(2), &[1, 2]);
        // Point location, including the tie at a shared node.
        assert_eq!(m.locate([0.1, 0.0]).unwrap(), 0);
        assert_eq!(m.locate([0.25, 0.0]).unwrap(), 0);
        assert_eq!(m.locate([1.0, 0.0]).unwrap(), 3);
        assert!(m.locate([1.5, 0.0]).is_err());
    }

    #[test]
    fn uniform_interval_nodes_survive_refinement_bitwise() {
        let coarse = Mesh::interval(0.0, 1.0, 5).unwrap();
        let fine = coarse.refine_uniform();
        assert_eq!(fine.n_elements(), 10);
        for i in 0..coarse.n_nodes() {
            assert_eq!(coarse.node(i), fine.node(2 * i));
        }
        // Rebuilding at doubled resolution also reproduces coarse nodes.
        let rebuilt = Mesh::interval(0.0, 1.0, 10).unwrap();
        for i in 0..coarse.n_nodes() {
            assert_eq!(coarse.node(i), rebuilt.node(2 * i));
        }
    }

    #[test]
    fn graded_partition_weak_ratio() {
        // x_k = (k/4)^2: cell sizes 1/16, 3/16, 5/16, 7/16; the largest
        // neighbour ratio is 3.
        let m = Mesh::graded_interval(1.0, 4, 2.0).unwrap();
        assert_eq!(m.node(1)[0], 1.0 / 16.0);
        assert_eq!(m.node(2)[0], 0.25);
        assert_eq!(m.node(3)[0], 9.0 / 16.0);
        let d = m.shape_diagnostics();
        assert_relative_eq!(d.max_weak_ratio, 3.0, epsilon = 1e-12);
        // Doubled resolution keeps the coarse nodes bitwise.
        let fine = Mesh::graded_interval(1.0, 8, 2.0).unwrap();
        for k in 0..=4 {
            assert_eq!(m.node(k)[0], fine.node(2 * k)[0]);
        }
    }

    #[test]
    fn triangulated_square_counts_and_shape() {
        let m = Mesh::triangulated_square(2).unwrap();
        assert_eq!(m.n_nodes(), 9);
        assert_eq!(m.n_elements(), 8);
        // Right isoceles triangles: shape constant 1 + sqrt(2), with the
        // inscribed-ball *diameter* in the denominator.
        let d = m.shape_diagnostics();
        assert_relative_eq!(d.max_sigma, 1.0 + std::f64::consts::SQRT_2, epsilon = 1e-12);
        assert_relative_eq!(d.max_weak_ratio, 1.0, epsilon = 1e-15);
        // Element areas sum to one.
        let total: f64 = (0..m.n_elements()).map(|e| m.area(e)).sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-14);
        // All areas positive (consistent orientation).
        assert!((0..m.n_elements()).all(|e| m.area(e) > 0.0));
    }

    #[test]
    fn simplicial_target_size() {
        // Target sqrt(2)/2 on the unit square: 2 x 2 grid, 8 triangles.
        let m = Mesh::simplicial([0.0, 0.0], [1.0, 1.0], std::f64::consts::SQRT_2 / 2.0).unwrap();
        assert_eq!(m.n_elements(), 8);
        assert!(m.h_max() <= std::f64::consts::SQRT_2 / 2.0 + 1e-12);
    }

    #[test]
    fn trigrid_locate_resolves_diagonal() {
        let m = Mesh::triangulated_square(2).unwrap();
        // Cell (0,0): below the diagonal is element 0, above is element 1.
        assert_eq!(m.locate([0.3, 0.1]).unwrap(), 0);
        assert_eq!(m.locate([0.1, 0.3]).unwrap(), 1);
        // On the diagonal: the tie goes to the lower element index.
        assert_eq!(m.locate([0.2, 0.2]).unwrap(), 0);
        // A far cell.
        let e = m.locate([0.9, 0.6]).unwrap();
        assert!(m.elem_coords(e).iter().all(|p| p[0] >= 0.5 - 1e-12 && p[1] >= 0.5 - 1e-12));
    }

    #[test]
    fn trigrid_star_and_boundary_distance() {
        let m = Mesh::triangulated_square(2).unwrap();
        // Center node (0.5, 0.5) has a six-triangle star in this split.
        let center = 4;
        assert_eq!(m.node(center), [0.5, 0.5]);
        assert_eq!(m.star(center).len(), 6);
        // Nearest star-boundary edges are the off-diagonal ones at distance
        // sqrt(2)/4.
        assert_relative_eq!(
            m.star_boundary_distance(center),
            std::f64::consts::SQRT_2 / 4.0,
            epsilon = 1e-13
        );
        // Star/patch duality: e contains z iff e is in star(z).
        for e in 0..m.n_elements() {
            for &v in m.elem_vertices(e) {
                assert!(m.star(v).contains(&e));
            }
        }
    }

    #[test]
    fn trigrid_refinement_reproduces_coarse_nodes() {
        let coarse = Mesh::triangulated_square(3).unwrap();
        let fine = coarse.refine_uniform();
        assert_eq!(fine.n_elements(), 4 * coarse.n_elements());
        for j in 0..=3usize {
            for i in 0..=3usize {
                let c = coarse.node(j * 4 + i);
                let f = fine.node((2 * j) * 7 + 2 * i);
                assert_eq!(c, f);
            }
        }
    }

    #[test]
    fn tensor_mesh_and_axis_refinement() {
        let m = Mesh::tensor(vec![0.0, 0.5, 1.0], vec![0.0, 0.25, 1.0]).unwrap();
        assert_eq!(m.n_elements(), 4);
        assert_eq!(m.sizes(0), [0.5, 0.25]);
        assert_relative_eq!(m.rho(1), 0.25);
        assert_relative_eq!(m.h(3), 0.5f64.hypot(0.75));
        assert_eq!(m.locate([0.6, 0.1]).unwrap(), 1);
        let fx = m.refine_axis(0).unwrap();
        assert_eq!(fx.n_elements(), 8);
        // The y-partition is untouched.
        assert_eq!(fx.partition(1), m.partition(1));
        // Corner boundary detection.
        assert!(m.is_boundary(0));
        assert!(m.on_side(0, Side::Left) && m.on_side(0, Side::Bottom));
        assert!(!m.on_side(4, Side::Left));
    }
}
