//! Structured P1 meshes on intervals and rectangles.
//!
//! 1D meshes use a uniform grid of `n` cells; 2D meshes use an `n x n` tensor
//! grid of quads, each split along its (0,0)-(1,1) diagonal into two
//! triangles (the (1,0) and (0,1) corner quads use the other diagonal so
//! every triangle has an interior vertex). Quadrature points are strictly interior to every cell (3-point
//! Gauss in 1D, the interior 3-point rule on triangles), so integrands that
//! blow up on the boundary are never sampled there.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainSpec {
    Interval(f64, f64),
    Rectangle(f64, f64, f64, f64),
}

impl DomainSpec {
    pub fn dim(&self) -> usize {
        match self {
            DomainSpec::Interval(..) => 1,
            DomainSpec::Rectangle(..) => 2,
        }
    }

    /// Euclidean distance to the boundary; exact for both shapes.
    pub fn distance(&self, pt: [f64; 2]) -> f64 {
        match *self {
            DomainSpec::Interval(a, b) => (pt[0] - a).min(b - pt[0]).max(0.0),
            DomainSpec::Rectangle(ax, bx, ay, by) => {
                (pt[0] - ax).min(bx - pt[0]).min(pt[1] - ay).min(by - pt[1]).max(0.0)
            }
        }
    }

    pub fn measure(&self) -> f64 {
        match *self {
            DomainSpec::Interval(a, b) => b - a,
            DomainSpec::Rectangle(ax, bx, ay, by) => (bx - ax) * (by - ay),
        }
    }

    pub fn diameter(&self) -> f64 {
        match *self {
            DomainSpec::Interval(a, b) => b - a,
            DomainSpec::Rectangle(ax, bx, ay, by) => (bx - ax).hypot(by - ay),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            DomainSpec::Interval(a, b) => a.is_finite() && b.is_finite() && b > a,
            DomainSpec::Rectangle(ax, bx, ay, by) => {
                [ax, bx, ay, by].iter().all(|v| v.is_finite()) && bx > ax && by > ay
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::DegenerateDomain(format!("{self:?}")))
        }
    }
}

/// One simplex: vertex indices, constant gradients of the barycentric
/// basis functions, and measure. In 1D only the first two slots are used.
#[derive(Debug, Clone, Copy)]
pub struct Cell {
    pub nodes: [usize; 3],
    pub grads: [[f64; 2]; 3],
    pub measure: f64,
}

/// Reference quadrature rule in barycentric coordinates.
#[derive(Debug, Clone)]
struct QuadRule {
    bary: Vec<[f64; 3]>,
    weights: Vec<f64>,
}

impl QuadRule {
    fn gauss3_line() -> Self {
        let s = 0.5 * (0.6f64).sqrt();
        let ts = [0.5 - s, 0.5, 0.5 + s];
        QuadRule {
            bary: ts.iter().map(|&t| [1.0 - t, t, 0.0]).collect(),
            weights: vec![5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0],
        }
    }

    fn interior3_triangle() -> Self {
        let a = 2.0 / 3.0;
        let b = 1.0 / 6.0;
        QuadRule {
            bary: vec![[a, b, b], [b, a, b], [b, b, a]],
            weights: vec![1.0 / 3.0; 3],
        }
    }
}

/// Nodal scalar field (P1 coefficients).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GridFunction {
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(values: Vec<f64>) -> Self {
        GridFunction { values }
    }

    pub fn zeros(n: usize) -> Self {
        GridFunction { values: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, s: f64) -> Self {
        GridFunction::new(self.values.iter().map(|v| v * s).collect())
    }

    /// Nodewise clamp into `[lo, hi]`.
    pub fn clamp_between(&self, lo: &GridFunction, hi: &GridFunction) -> Self {
        GridFunction::new(
            self.values
                .iter()
                .zip(lo.values.iter().zip(&hi.values))
                .map(|(&v, (&l, &h))| v.max(l).min(h))
                .collect(),
        )
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }
}

/// Piecewise-constant per-cell gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub values: Vec<[f64; 2]>,
}

impl VectorField {
    pub fn norms(&self) -> Vec<f64> {
        self.values.iter().map(|g| g[0].hypot(g[1])).collect()
    }

    pub fn max_norm(&self) -> f64 {
        self.norms().into_iter().fold(0.0, f64::max)
    }
}

/// Values at the mesh quadrature points, `cell * nq + k` ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadField {
    pub values: Vec<f64>,
}

impl QuadField {
    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }
}

/// A quadrature point as seen by integrands.
#[derive(Debug, Clone, Copy)]
pub struct QuadPoint {
    pub cell: usize,
    pub index: usize,
    pub x: [f64; 2],
    pub distance: f64,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub domain: DomainSpec,
    pub n: usize,
    pub dim: usize,
    pub nodes: Vec<[f64; 2]>,
    pub cells: Vec<Cell>,
    pub boundary_nodes: Vec<usize>,
    is_boundary: Vec<bool>,
    pub h: f64,
    pub distance: Vec<f64>,
    rule: QuadRule,
    qpoints: Vec<[f64; 2]>,
    qweights: Vec<f64>,
    qdist: Vec<f64>,
}

impl Mesh {
    pub const MIN_CELLS: usize = 2;

    pub fn build(domain: DomainSpec, n: usize) -> Result<Mesh> {
        domain.validate()?;
        if n < Self::MIN_CELLS {
            return Err(Error::Resolution {
                n,
                min: Self::MIN_CELLS,
            });
        }
        let (nodes, cells, is_boundary, rule, h) = match domain {
            DomainSpec::Interval(a, b) => {
                let dx = (b - a) / n as f64;
                let nodes: Vec<[f64; 2]> = (0..=n).map(|i| [a + dx * i as f64, 0.0]).collect();
                let cells = (0..n)
                    .map(|i| Cell {
                        nodes: [i, i + 1, i + 1],
                        grads: [[-1.0 / dx, 0.0], [1.0 / dx, 0.0], [0.0, 0.0]],
                        measure: dx,
                    })
                    .collect();
                let mut bd = vec![false; n + 1];
                bd[0] = true;
                bd[n] = true;
                (nodes, cells, bd, QuadRule::gauss3_line(), dx)
            }
            DomainSpec::Rectangle(ax, bx, ay, by) => {
                let dx = (bx - ax) / n as f64;
                let dy = (by - ay) / n as f64;
                let idx = |i: usize, j: usize| j * (n + 1) + i;
                let mut nodes = Vec::with_capacity((n + 1) * (n + 1));
                let mut bd = Vec::with_capacity((n + 1) * (n + 1));
                for j in 0..=n {
                    for i in 0..=n {
                        nodes.push([ax + dx * i as f64, ay + dy * j as f64]);
                        bd.push(i == 0 || j == 0 || i == n || j == n);
                    }
                }
                let mut cells = Vec::with_capacity(2 * n * n);
                for j in 0..n {
                    for i in 0..n {
                        let (n00, n10, n01, n11) = (idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1));
                        if Self::flipped(n, i, j) {
                            cells.push(triangle(&nodes, [n00, n10, n01]));
                            cells.push(triangle(&nodes, [n10, n11, n01]));
                        } else {
                            cells.push(triangle(&nodes, [n00, n10, n11]));
                            cells.push(triangle(&nodes, [n00, n11, n01]));
                        }
                    }
                }
                (nodes, cells, bd, QuadRule::interior3_triangle(), dx.hypot(dy))
            }
        };
        let dim = domain.dim();
        let distance: Vec<f64> = nodes
            .iter()
            .zip(&is_boundary)
            .map(|(p, &b)| if b { 0.0 } else { domain.distance(*p) })
            .collect();
        let boundary_nodes = (0..nodes.len()).filter(|&i| is_boundary[i]).collect();

        let nq = rule.weights.len();
        let mut qpoints = Vec::with_capacity(cells.len() * nq);
        let mut qweights = Vec::with_capacity(cells.len() * nq);
        let mut qdist = Vec::with_capacity(cells.len() * nq);
        for c in &cells {
            for (b, w) in rule.bary.iter().zip(&rule.weights) {
                let mut x = [0.0; 2];
                for a in 0..dim + 1 {
                    let p = nodes[c.nodes[a]];
                    x[0] += b[a] * p[0];
                    x[1] += b[a] * p[1];
                }
                qpoints.push(x);
                qweights.push(w * c.measure);
                qdist.push(domain.distance(x));
            }
        }
        Ok(Mesh {
            domain,
            n,
            dim,
            nodes,
            cells,
            boundary_nodes,
            is_boundary,
            h,
            distance,
            rule,
            qpoints,
            qweights,
            qdist,
        })
    }

    /// The two corner quads whose main-diagonal split would produce a
    /// triangle with all vertices on the boundary use the other diagonal.
    fn flipped(n: usize, i: usize, j: usize) -> bool {
        (i == n - 1 && j == 0) || (i == 0 && j == n - 1)
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    /// Vertices per cell (`dim + 1`).
    pub fn nv(&self) -> usize {
        self.dim + 1
    }

    pub fn nq(&self) -> usize {
        self.rule.weights.len()
    }

    pub fn num_qpoints(&self) -> usize {
        self.qweights.len()
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.is_boundary[node]
    }

    pub fn interior_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_nodes()).filter(move |&i| !self.is_boundary[i])
    }

    pub fn measure(&self) -> f64 {
        self.domain.measure()
    }

    pub fn max_distance(&self) -> f64 {
        self.distance.iter().cloned().fold(0.0, f64::max)
    }

    pub fn qpoint(&self, q: usize) -> QuadPoint {
        QuadPoint {
            cell: q / self.nq(),
            index: q,
            x: self.qpoints[q],
            distance: self.qdist[q],
            weight: self.qweights[q],
        }
    }

    pub fn qweights(&self) -> &[f64] {
        &self.qweights
    }

    pub fn qdistances(&self) -> &[f64] {
        &self.qdist
    }

    /// Barycentric weights of the k-th quadrature point of any cell.
    pub fn qbary(&self, k: usize) -> &[f64; 3] {
        &self.rule.bary[k]
    }

    pub fn check_nodal(&self, len: usize, what: &'static str) -> Result<()> {
        if len == self.num_nodes() {
            Ok(())
        } else {
            Err(Error::MeshMismatch {
                what,
                expected: self.num_nodes(),
                got: len,
            })
        }
    }

    pub fn check_quad(&self, len: usize, what: &'static str) -> Result<()> {
        if len == self.num_qpoints() {
            Ok(())
        } else {
            Err(Error::MeshMismatch {
                what,
                expected: self.num_qpoints(),
                got: len,
            })
        }
    }

    /// P1 interpolation of nodal values at every quadrature point.
    pub fn interpolate(&self, values: &[f64]) -> QuadField {
        let nv = self.nv();
        let mut out = Vec::with_capacity(self.num_qpoints());
        for c in &self.cells {
            for b in &self.rule.bary {
                let mut s = 0.0;
                for a in 0..nv {
                    s += b[a] * values[c.nodes[a]];
                }
                out.push(s);
            }
        }
        QuadField { values: out }
    }

    /// Samples a closure at every quadrature point.
    pub fn sample(&self, f: impl Fn(&QuadPoint) -> f64) -> QuadField {
        QuadField {
            values: (0..self.num_qpoints()).map(|q| f(&self.qpoint(q))).collect(),
        }
    }

    /// Evaluates a closure of the coordinates at every node.
    pub fn nodal(&self, f: impl Fn([f64; 2]) -> f64) -> GridFunction {
        GridFunction::new(self.nodes.iter().map(|&p| f(p)).collect())
    }

    /// Exact gradient of the P1 interpolant, one vector per cell.
    pub fn gradient(&self, u: &GridFunction) -> Result<VectorField> {
        self.check_nodal(u.len(), "nodes")?;
        let nv = self.nv();
        Ok(VectorField {
            values: self
                .cells
                .iter()
                .map(|c| {
                    let mut g = [0.0; 2];
                    for a in 0..nv {
                        let v = u.values[c.nodes[a]];
                        g[0] += v * c.grads[a][0];
                        g[1] += v * c.grads[a][1];
                    }
                    g
                })
                .collect(),
        })
    }

    /// Composite quadrature of a per-point integrand.
    pub fn integrate(&self, f: impl Fn(&QuadPoint) -> f64) -> Result<f64> {
        let mut s = 0.0;
        for q in 0..self.num_qpoints() {
            let p = self.qpoint(q);
            let v = f(&p);
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("integrand at quadrature point {:?}", p.x)));
            }
            s += p.weight * v;
        }
        Ok(s)
    }

    pub fn integrate_field(&self, f: &QuadField) -> Result<f64> {
        self.check_quad(f.values.len(), "quadrature points")?;
        self.integrate(|p| f.values[p.index])
    }

    /// Nodes with `d(x) < delta`, boundary nodes included.
    pub fn boundary_strip(&self, delta: f64) -> Result<Vec<usize>> {
        let dmax = self.max_distance();
        if !(delta > 0.0 && delta < dmax) {
            return Err(Error::OutOfRange(format!("strip width {delta} outside (0, {dmax})")));
        }
        Ok((0..self.num_nodes()).filter(|&i| self.distance[i] < delta).collect())
    }

    /// Locates `pt` and returns (cell, barycentric weights). Points outside
    /// the domain are clamped onto it.
    pub fn locate(&self, pt: [f64; 2]) -> (usize, [f64; 3]) {
        let n = self.n;
        match self.domain {
            DomainSpec::Interval(a, b) => {
                let t = ((pt[0] - a) / (b - a) * n as f64).clamp(0.0, n as f64);
                let i = (t.floor() as usize).min(n - 1);
                let s = t - i as f64;
                (i, [1.0 - s, s, 0.0])
            }
            DomainSpec::Rectangle(ax, bx, ay, by) => {
                let tx = ((pt[0] - ax) / (bx - ax) * n as f64).clamp(0.0, n as f64);
                let ty = ((pt[1] - ay) / (by - ay) * n as f64).clamp(0.0, n as f64);
                let i = (tx.floor() as usize).min(n - 1);
                let j = (ty.floor() as usize).min(n - 1);
                let (s, t) = (tx - i as f64, ty - j as f64);
                let quad = 2 * (j * n + i);
                if Self::flipped(n, i, j) {
                    if s + t <= 1.0 {
                        (quad, [1.0 - s - t, s, t])
                    } else {
                        (quad + 1, [1.0 - t, s + t - 1.0, 1.0 - s])
                    }
                } else if s >= t {
                    // [n00, n10, n11]
                    (quad, [1.0 - s, s - t, t])
                } else {
                    // [n00, n11, n01]
                    (quad + 1, [1.0 - t, s, t - s])
                }
            }
        }
    }

    /// P1 interpolant of nodal values at an arbitrary point.
    pub fn interpolate_at(&self, values: &[f64], pt: [f64; 2]) -> f64 {
        let (c, b) = self.locate(pt);
        let cell = &self.cells[c];
        (0..self.nv()).map(|a| b[a] * values[cell.nodes[a]]).sum()
    }

    /// Writes one row per node: coordinates followed by the named columns.
    pub fn write_csv<W: Write>(&self, mut w: W, columns: &[(&str, &[f64])]) -> Result<()> {
        for (_, col) in columns {
            self.check_nodal(col.len(), "csv column")?;
        }
        let mut header = if self.dim == 1 {
            vec!["x".to_string()]
        } else {
            vec!["x".to_string(), "y".to_string()]
        };
        header.extend(columns.iter().map(|(n, _)| n.to_string()));
        writeln!(w, "{}", header.join(","))?;
        for (i, p) in self.nodes.iter().enumerate() {
            let mut row: Vec<String> = vec![format!("{}", p[0])];
            if self.dim == 2 {
                row.push(format!("{}", p[1]));
            }
            row.extend(columns.iter().map(|(_, c)| format!("{}", c[i])));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn triangle(nodes: &[[f64; 2]], ids: [usize; 3]) -> Cell {
    let [p0, p1, p2] = [nodes[ids[0]], nodes[ids[1]], nodes[ids[2]]];
    let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
    let g1 = [(p2[1] - p0[1]) / det, -(p2[0] - p0[0]) / det];
    let g2 = [-(p1[1] - p0[1]) / det, (p1[0] - p0[0]) / det];
    let g0 = [-g1[0] - g2[0], -g1[1] - g2[1]];
    Cell {
        nodes: ids,
        grads: [g0, g1, g2],
        measure: 0.5 * det.abs(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_interval(n: usize) -> Mesh {
        Mesh::build(DomainSpec::Interval(0.0, 1.0), n).unwrap()
    }

    fn unit_square(n: usize) -> Mesh {
        Mesh::build(DomainSpec::Rectangle(0.0, 1.0, 0.0, 1.0), n).unwrap()
    }

    #[test]
    fn interval_grid_layout() {
        let m = unit_interval(4);
        let xs: Vec<f64> = m.nodes.iter().map(|p| p[0]).collect();
        assert_eq!(xs, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(m.distance, vec![0.0, 0.25, 0.5, 0.25, 0.0]);
        assert_eq!(m.boundary_nodes, vec![0, 4]);

        let m = Mesh::build(DomainSpec::Interval(0.0, 2.0), 8).unwrap();
        assert_eq!(m.h, 0.25);
        assert_eq!(m.distance[4], 1.0);
    }

    #[test]
    fn square_counts() {
        let m = unit_square(2);
        assert_eq!(m.num_nodes(), 9);
        assert_eq!(m.num_cells(), 8);
        assert_eq!(m.boundary_nodes.len(), 8);
        let total: f64 = m.cells.iter().map(|c| c.measure).sum();
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_domains_rejected() {
        assert!(matches!(
            Mesh::build(DomainSpec::Interval(1.0, 1.0), 8),
            Err(Error::DegenerateDomain(_))
        ));
        assert!(Mesh::build(DomainSpec::Rectangle(0.0, 1.0, 2.0, 2.0), 8).is_err());
        assert!(matches!(
            Mesh::build(DomainSpec::Interval(0.0, 1.0), 1),
            Err(Error::Resolution { .. })
        ));
    }

    #[test]
    fn strips() {
        let m = unit_interval(4);
        assert_eq!(m.boundary_strip(0.3).unwrap(), vec![0, 1, 3, 4]);
        assert_eq!(m.boundary_strip(1e-9).unwrap(), m.boundary_nodes);
        assert!(m.boundary_strip(0.0).is_err());
        assert!(m.boundary_strip(0.5).is_err());

        // 5x5 grid: nodes with d = 0.25 form the first interior ring
        let m = unit_square(4);
        let strip = m.boundary_strip(0.26).unwrap();
        let ring: Vec<usize> = (0..25)
            .filter(|&k| {
                let (i, j) = (k % 5, k / 5);
                !(i == 2 && j == 2)
            })
            .collect();
        assert_eq!(strip, ring);
    }

    #[test]
    fn affine_gradients_exact() {
        let m = unit_interval(7);
        let g = m.gradient(&m.nodal(|p| p[0])).unwrap();
        assert!(g.values.iter().all(|v| (v[0] - 1.0).abs() < 1e-13));

        let m = unit_square(5);
        let g = m.gradient(&m.nodal(|p| 2.0 * p[0] - 3.0 * p[1])).unwrap();
        for v in &g.values {
            assert!((v[0] - 2.0).abs() < 1e-12 && (v[1] + 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_of_quadratic_is_first_order() {
        let m = unit_interval(1024);
        let g = m.gradient(&m.nodal(|p| p[0] * (1.0 - p[0]) / 2.0)).unwrap();
        for (c, v) in m.cells.iter().zip(&g.values) {
            let xm = 0.5 * (m.nodes[c.nodes[0]][0] + m.nodes[c.nodes[1]][0]);
            assert!((v[0] - (1.0 - 2.0 * xm) / 2.0).abs() <= m.h);
        }
    }

    #[test]
    fn integration() {
        let m = unit_interval(16);
        assert!((m.integrate(|_| 1.0).unwrap() - 1.0).abs() < 1e-14);
        let m = unit_interval(1024);
        let v = m.integrate(|p| p.x[0] * p.x[0]).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-6);
        let f = |p: &QuadPoint| p.x[0].sin();
        let g = |p: &QuadPoint| p.x[0].exp();
        let lhs = m.integrate(|p| f(p) + g(p)).unwrap();
        let rhs = m.integrate(f).unwrap() + m.integrate(g).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
        assert!(m.integrate(|p| 1.0 / (p.x[0] - p.x[0])).is_err());
    }

    #[test]
    fn affine_integrals_exact_on_triangles() {
        let m = unit_square(3);
        let v = m.integrate(|p| 1.0 + 2.0 * p.x[0] - p.x[1]).unwrap();
        assert!((v - 1.5).abs() < 1e-14);
    }

    #[test]
    fn quadrature_points_are_interior() {
        for m in [unit_interval(8), unit_square(4)] {
            assert!(m.qdistances().iter().all(|&d| d > 0.0));
        }
    }

    #[test]
    fn locate_and_interpolate() {
        let m = unit_square(4);
        let f = m.nodal(|p| 3.0 * p[0] + 0.5 * p[1] - 1.0);
        for pt in [[0.1, 0.7], [0.9, 0.05], [0.5, 0.5], [1.0, 1.0], [0.0, 0.3]] {
            let v = m.interpolate_at(&f.values, pt);
            assert!((v - (3.0 * pt[0] + 0.5 * pt[1] - 1.0)).abs() < 1e-12, "{pt:?}");
        }
        let m = unit_interval(5);
        let f = m.nodal(|p| 2.0 * p[0]);
        assert!((m.interpolate_at(&f.values, [0.37, 0.0]) - 0.74).abs() < 1e-14);
    }

    #[test]
    fn csv_layout() {
        let m = unit_interval(2);
        let mut buf = Vec::new();
        m.write_csv(&mut buf, &[("value", &[0.0, 1.0, 0.0])]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x,value\n0,0\n0.5,1\n1,0\n");
    }

    #[test]
    fn distance_is_lipschitz() {
        let m = unit_square(6);
        for i in 0..m.num_nodes() {
            for j in 0..m.num_nodes() {
                let (a, b) = (m.nodes[i], m.nodes[j]);
                let dist = (a[0] - b[0]).hypot(a[1] - b[1]);
                assert!((m.distance[i] - m.distance[j]).abs() <= dist + 1e-14);
            }
        }
    }
}
