//! Scalar Dirichlet problems `-div(|grad u|^{p(x)-2} grad u) = h`, `u = 0` on
//! the boundary, solved by minimizing the convex energy
//!
//! ```text
//! J(u) = \int (1/p) (|grad u|^2 + eps^2)^{p/2} - \int h u
//! ```
//!
//! over zero-trace P1 fields with damped Newton and Armijo backtracking.
//! Convergence is judged on the residual of the unregularized weak form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expspace::ExponentField;
use crate::grid::{GridFunction, Mesh, QuadField};
use crate::linalg::BandedSpd;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub eps_reg: f64,
    pub tol_residual: f64,
    pub max_newton: usize,
    pub line_search_shrink: f64,
    pub armijo: f64,
    pub max_halvings: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            eps_reg: 1e-8,
            tol_residual: 1e-11,
            max_newton: 200,
            line_search_shrink: 0.5,
            armijo: 1e-4,
            max_halvings: 40,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_reg > 0.0) {
            return Err(Error::OutOfRange(format!("eps_reg must be > 0, got {}", self.eps_reg)));
        }
        if !(self.tol_residual > 0.0) {
            return Err(Error::OutOfRange(format!(
                "tol_residual must be > 0, got {}",
                self.tol_residual
            )));
        }
        if !(self.line_search_shrink > 0.0 && self.line_search_shrink < 1.0) {
            return Err(Error::OutOfRange(format!(
                "line_search_shrink must lie in (0,1), got {}",
                self.line_search_shrink
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarSolveResult {
    pub u: GridFunction,
    pub residual: f64,
    pub energy: f64,
    pub newton_iters: usize,
    pub converged: bool,
    /// Energy after each accepted step (initial guess first).
    pub energy_trace: Vec<f64>,
}

impl ScalarSolveResult {
    pub fn into_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NotConverged {
                residual: self.residual,
                iters: self.newton_iters,
            })
        }
    }
}

/// `|g|^{p-2} g` without regularization.
#[inline]
fn flux(g: [f64; 2], p: f64) -> [f64; 2] {
    let s = g[0].hypot(g[1]);
    if s == 0.0 {
        [0.0, 0.0]
    } else {
        let a = s.powf(p - 2.0);
        [a * g[0], a * g[1]]
    }
}

/// `\int |grad u|^{p-2} grad u . grad phi_j` for every nodal hat `phi_j`.
pub fn tested_flux(mesh: &Mesh, p: &QuadField, u: &GridFunction) -> Vec<f64> {
    let grads = mesh.gradient(u).expect("field length checked by caller");
    let nq = mesh.nq();
    let w = mesh.qweights();
    let mut out = vec![0.0; mesh.num_nodes()];
    for (c, cell) in mesh.cells.iter().enumerate() {
        let g = grads.values[c];
        let mut f = [0.0; 2];
        for k in 0..nq {
            let q = c * nq + k;
            let fl = flux(g, p.values[q]);
            f[0] += w[q] * fl[0];
            f[1] += w[q] * fl[1];
        }
        for a in 0..mesh.nv() {
            out[cell.nodes[a]] += f[0] * cell.grads[a][0] + f[1] * cell.grads[a][1];
        }
    }
    out
}

/// `\int h phi_j` for every nodal hat.
pub fn load_vector(mesh: &Mesh, h: &QuadField) -> Vec<f64> {
    let nq = mesh.nq();
    let w = mesh.qweights();
    let mut out = vec![0.0; mesh.num_nodes()];
    for (c, cell) in mesh.cells.iter().enumerate() {
        for k in 0..nq {
            let q = c * nq + k;
            let b = mesh.qbary(k);
            for a in 0..mesh.nv() {
                out[cell.nodes[a]] += w[q] * h.values[q] * b[a];
            }
        }
    }
    out
}

/// Max over interior hats of `|\int flux . grad phi - \int h phi|`,
/// normalized by `||h||_{L^1} + 1`.
pub fn weak_residual(mesh: &Mesh, p: &ExponentField, u: &GridFunction, h: &QuadField) -> Result<f64> {
    mesh.check_nodal(u.len(), "solution nodes")?;
    mesh.check_quad(h.values.len(), "source values")?;
    let pq = p.at_quadrature(mesh)?;
    Ok(residual_q(mesh, &pq, u, h))
}

fn residual_q(mesh: &Mesh, pq: &QuadField, u: &GridFunction, h: &QuadField) -> f64 {
    let a = tested_flux(mesh, pq, u);
    let b = load_vector(mesh, h);
    let l1: f64 = h.values.iter().zip(mesh.qweights()).map(|(v, w)| w * v.abs()).sum();
    mesh.interior_nodes().map(|j| (a[j] - b[j]).abs()).fold(0.0, f64::max) / (l1 + 1.0)
}

struct Problem<'a> {
    mesh: &'a Mesh,
    p: QuadField,
    h: &'a QuadField,
    eps2: f64,
    bw: usize,
}

impl Problem<'_> {
    fn energy(&self, u: &[f64]) -> f64 {
        let mesh = self.mesh;
        let nq = mesh.nq();
        let w = mesh.qweights();
        let mut e = 0.0;
        for (c, cell) in mesh.cells.iter().enumerate() {
            let g = cell_grad(mesh, c, u);
            let s = g[0] * g[0] + g[1] * g[1] + self.eps2;
            for k in 0..nq {
                let q = c * nq + k;
                let p = self.p.values[q];
                let b = mesh.qbary(k);
                let uq: f64 = (0..mesh.nv()).map(|a| b[a] * u[cell.nodes[a]]).sum();
                e += w[q] * (s.powf(0.5 * p) / p - self.h.values[q] * uq);
            }
        }
        e
    }

    /// Sum of the magnitudes of the energy contributions.
    fn energy_scale(&self, u: &[f64]) -> f64 {
        let mesh = self.mesh;
        let nq = mesh.nq();
        let w = mesh.qweights();
        let mut e = 0.0;
        for (c, cell) in mesh.cells.iter().enumerate() {
            let g = cell_grad(mesh, c, u);
            let s = g[0] * g[0] + g[1] * g[1] + self.eps2;
            for k in 0..nq {
                let q = c * nq + k;
                let p = self.p.values[q];
                let b = mesh.qbary(k);
                let uq: f64 = (0..mesh.nv()).map(|a| b[a] * u[cell.nodes[a]]).sum();
                e += w[q] * (s.powf(0.5 * p) / p + (self.h.values[q] * uq).abs());
            }
        }
        e
    }

    /// `d/dc J(c w)`; increasing in `c` by convexity.
    fn ray_slope(&self, w: &[f64], c: f64) -> f64 {
        let mesh = self.mesh;
        let nq = mesh.nq();
        let wq = mesh.qweights();
        let mut d = 0.0;
        for (k, cell) in mesh.cells.iter().enumerate() {
            let g = cell_grad(mesh, k, w);
            let g2 = g[0] * g[0] + g[1] * g[1];
            let s = c * c * g2 + self.eps2;
            for j in 0..nq {
                let q = k * nq + j;
                let b = mesh.qbary(j);
                let uq: f64 = (0..mesh.nv()).map(|a| b[a] * w[cell.nodes[a]]).sum();
                d += wq[q] * (s.powf(0.5 * (self.p.values[q] - 2.0)) * c * g2 - self.h.values[q] * uq);
            }
        }
        d
    }

    /// Minimizer of the energy along the ray `c w`, `c > 0`. Puts the
    /// Newton start at the right amplitude when `p != 2` makes the Poisson
    /// guess off by orders of magnitude.
    fn ray_start(&self, w: &[f64]) -> Vec<f64> {
        // p = 2: w is already the minimizer
        if self.p.values.iter().all(|p| *p == 2.0) || self.ray_slope(w, 1e-12) >= 0.0 {
            return w.to_vec();
        }
        let (mut lo, mut hi) = (1e-12f64, 1.0f64);
        while self.ray_slope(w, hi) < 0.0 && hi < 1e12 {
            lo = hi;
            hi *= 10.0;
        }
        for _ in 0..100 {
            let mid = (lo * hi).sqrt();
            if self.ray_slope(w, mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi / lo < 1.0 + 1e-10 {
                break;
            }
        }
        let c = (lo * hi).sqrt();
        w.iter().map(|v| c * v).collect()
    }

    /// Gradient of the regularized energy and its Hessian, boundary rows
    /// replaced by identity.
    fn assemble(&self, u: &[f64]) -> (Vec<f64>, BandedSpd) {
        let mesh = self.mesh;
        let nq = mesh.nq();
        let nv = mesh.nv();
        let w = mesh.qweights();
        let mut grad = vec![0.0; mesh.num_nodes()];
        let mut hess = BandedSpd::zeros(mesh.num_nodes(), self.bw);
        for (c, cell) in mesh.cells.iter().enumerate() {
            let g = cell_grad(mesh, c, u);
            let t = g[0] * g[0] + g[1] * g[1] + self.eps2;
            let (mut k1, mut k2) = (0.0, 0.0);
            for k in 0..nq {
                let q = c * nq + k;
                let p = self.p.values[q];
                let a = t.powf(0.5 * (p - 2.0));
                k1 += w[q] * a;
                if p != 2.0 {
                    k2 += w[q] * (p - 2.0) * a / t;
                }
                let b = mesh.qbary(k);
                for i in 0..nv {
                    grad[cell.nodes[i]] -= w[q] * self.h.values[q] * b[i];
                }
            }
            for i in 0..nv {
                let gi = cell.grads[i];
                let gdot_i = g[0] * gi[0] + g[1] * gi[1];
                grad[cell.nodes[i]] += k1 * gdot_i;
                if mesh.is_boundary(cell.nodes[i]) {
                    continue;
                }
                for j in 0..=i {
                    if mesh.is_boundary(cell.nodes[j]) {
                        continue;
                    }
                    let gj = cell.grads[j];
                    let gdot_j = g[0] * gj[0] + g[1] * gj[1];
                    let v = k1 * (gi[0] * gj[0] + gi[1] * gj[1]) + k2 * gdot_i * gdot_j;
                    if i == j || cell.nodes[i] != cell.nodes[j] {
                        hess.add(cell.nodes[i], cell.nodes[j], v);
                    }
                }
            }
        }
        for &b in &mesh.boundary_nodes {
            grad[b] = 0.0;
            hess.add(b, b, 1.0);
        }
        (grad, hess)
    }
}

#[inline]
fn cell_grad(mesh: &Mesh, c: usize, u: &[f64]) -> [f64; 2] {
    let cell = &mesh.cells[c];
    let mut g = [0.0; 2];
    for a in 0..mesh.nv() {
        let v = u[cell.nodes[a]];
        g[0] += v * cell.grads[a][0];
        g[1] += v * cell.grads[a][1];
    }
    g
}

fn bandwidth(mesh: &Mesh) -> usize {
    mesh.cells
        .iter()
        .map(|c| {
            let ids = &c.nodes[..mesh.nv()];
            ids.iter().max().unwrap() - ids.iter().min().unwrap()
        })
        .max()
        .unwrap_or(1)
}

/// Linear Poisson solve with the same source: the Newton starting point.
fn poisson(mesh: &Mesh, h: &QuadField, bw: usize) -> Result<Vec<f64>> {
    let pq = QuadField {
        values: vec![2.0; mesh.num_qpoints()],
    };
    let prob = Problem {
        mesh,
        p: pq,
        h,
        eps2: 0.0,
        bw,
    };
    let zero = vec![0.0; mesh.num_nodes()];
    let (g, hess) = prob.assemble(&zero);
    let rhs: Vec<f64> = g.iter().map(|v| -v).collect();
    hess.solve(&rhs)
}

pub fn solve_dirichlet(
    mesh: &Mesh,
    p: &ExponentField,
    h: &QuadField,
    opts: &SolverOptions,
) -> Result<ScalarSolveResult> {
    solve_dirichlet_from(mesh, p, h, opts, None)
}

/// As [`solve_dirichlet`], optionally warm-started from `init` (its boundary
/// values are zeroed).
pub fn solve_dirichlet_from(
    mesh: &Mesh,
    p: &ExponentField,
    h: &QuadField,
    opts: &SolverOptions,
    init: Option<&GridFunction>,
) -> Result<ScalarSolveResult> {
    opts.validate()?;
    p.validate_as_p("p")?;
    mesh.check_quad(h.values.len(), "source values")?;
    h.check_finite("source")?;
    let bw = bandwidth(mesh);
    let prob = Problem {
        mesh,
        p: p.at_quadrature(mesh)?,
        h,
        eps2: opts.eps_reg * opts.eps_reg,
        bw,
    };

    let mut u = match init {
        Some(g) => {
            mesh.check_nodal(g.len(), "initial guess")?;
            g.check_finite("initial guess")?;
            g.values.clone()
        }
        None => prob.ray_start(&poisson(mesh, h, bw)?),
    };
    for &b in &mesh.boundary_nodes {
        u[b] = 0.0;
    }

    let mut energy = prob.energy(&u);
    let mut trace = vec![energy];
    let mut residual = residual_q(mesh, &prob.p, &GridFunction::new(u.clone()), h);
    let mut iters = 0;
    while residual > opts.tol_residual && iters < opts.max_newton {
        iters += 1;
        let (grad, hess) = prob.assemble(&u);
        let rhs: Vec<f64> = grad.iter().map(|v| -v).collect();
        let dir = hess
            .solve(&rhs)
            .map_err(|e| Error::Linear(format!("Newton Hessian: {e}")))?;
        let slope: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();

        let mut t = 1.0;
        let mut accepted = None;
        // below this the energy cannot resolve the decrease: pure Newton step
        let roundoff = -slope <= 1e3 * f64::EPSILON * prob.energy_scale(&u);
        if roundoff {
            let trial: Vec<f64> = u.iter().zip(&dir).map(|(a, d)| a + d).collect();
            let e = prob.energy(&trial);
            accepted = Some((trial, e));
        }
        for _ in 0..=opts.max_halvings {
            if accepted.is_some() {
                break;
            }
            let trial: Vec<f64> = u.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
            let e = prob.energy(&trial);
            if e.is_finite() && e <= energy + opts.armijo * t * slope {
                accepted = Some((trial, e));
                break;
            }
            t *= opts.line_search_shrink;
        }
        let (next, e_next) = match accepted {
            Some(a) => a,
            None => {
                // energy differences at roundoff level: take the full step if
                // it still reduces the weak residual
                let trial: Vec<f64> = u.iter().zip(&dir).map(|(a, d)| a + d).collect();
                let r = residual_q(mesh, &prob.p, &GridFunction::new(trial.clone()), h);
                if r < residual {
                    let e = prob.energy(&trial);
                    (trial, e)
                } else {
                    break;
                }
            }
        };
        u = next;
        energy = e_next;
        trace.push(energy);
        residual = residual_q(mesh, &prob.p, &GridFunction::new(u.clone()), h);
    }

    Ok(ScalarSolveResult {
        converged: residual <= opts.tol_residual,
        u: GridFunction::new(u),
        residual,
        energy,
        newton_iters: iters,
        energy_trace: trace,
    })
}

pub fn constant_source(mesh: &Mesh, v: f64) -> QuadField {
    QuadField {
        values: vec![v; mesh.num_qpoints()],
    }
}

/// Torsion function: `-Delta_p xi = 1`, zero trace.
pub fn torsion(mesh: &Mesh, p: &ExponentField, opts: &SolverOptions) -> Result<GridFunction> {
    Ok(solve_dirichlet(mesh, p, &constant_source(mesh, 1.0), opts)?
        .into_converged()?
        .u)
}

/// Source `+1` away from the boundary strip `{d < delta}` and `-1` inside it.
pub fn strip_source(mesh: &Mesh, delta: f64) -> QuadField {
    mesh.sample(|q| if q.distance < delta { -1.0 } else { 1.0 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TorsionDelta {
    pub xi_delta: GridFunction,
    /// `min xi_delta / d` over interior nodes.
    pub c0: f64,
}

/// Solves the strip-perturbed torsion problem and checks
/// `c0 d <= xi_delta <= xi` with a measured `c0 > 0`.
pub fn torsion_delta(mesh: &Mesh, p: &ExponentField, delta: f64, opts: &SolverOptions) -> Result<TorsionDelta> {
    let xi = torsion(mesh, p, opts)?;
    torsion_delta_with(mesh, p, delta, opts, &xi)
}

pub fn torsion_delta_with(
    mesh: &Mesh,
    p: &ExponentField,
    delta: f64,
    opts: &SolverOptions,
    xi: &GridFunction,
) -> Result<TorsionDelta> {
    let dmax = mesh.max_distance();
    if !(delta > 0.0 && delta < dmax) {
        return Err(Error::OutOfRange(format!("delta {delta} outside (0, {dmax})")));
    }
    let res = solve_dirichlet(mesh, p, &strip_source(mesh, delta), opts)?.into_converged()?;
    let xd = res.u;
    let mut c0 = f64::INFINITY;
    for j in mesh.interior_nodes() {
        let v = xd.values[j];
        if !(v > 0.0) {
            return Err(Error::Positivity(format!(
                "xi_delta = {v:e} at node {j} (delta {delta} too large)"
            )));
        }
        let slack = 1e-9 * xi.values[j].abs().max(1e-12);
        if v > xi.values[j] + slack {
            return Err(Error::Ordering(format!(
                "xi_delta {v} exceeds xi {} at node {j}",
                xi.values[j]
            )));
        }
        c0 = c0.min(v / mesh.distance[j]);
    }
    Ok(TorsionDelta { xi_delta: xd, c0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::DomainSpec;

    fn unit(n: usize) -> Mesh {
        Mesh::build(DomainSpec::Interval(0.0, 1.0), n).unwrap()
    }

    /// Closed-form p = 3 torsion on (0,1): integrate -(|u'|u')' = 1.
    fn p3_torsion(x: f64) -> f64 {
        2.0 / 3.0 * (0.5f64.powf(1.5) - (x - 0.5).abs().powf(1.5))
    }

    #[test]
    fn poisson_torsion_is_nodally_exact() {
        let m = unit(64);
        let p = ExponentField::constant(&m, 2.0).unwrap();
        let xi = torsion(&m, &p, &SolverOptions::default()).unwrap();
        for (x, v) in m.nodes.iter().zip(&xi.values) {
            assert!((v - x[0] * (1.0 - x[0]) / 2.0).abs() < 1e-13);
        }
        assert!((xi.values[32] - 0.125).abs() < 1e-13);
    }

    #[test]
    fn p3_torsion_matches_closed_form() {
        let m = unit(256);
        let p = ExponentField::constant(&m, 3.0).unwrap();
        let r = solve_dirichlet(&m, &p, &constant_source(&m, 1.0), &SolverOptions::default()).unwrap();
        assert!(r.converged, "residual {}", r.residual);
        let err = m
            .nodes
            .iter()
            .zip(&r.u.values)
            .map(|(x, v)| (v - p3_torsion(x[0])).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-4, "err {err}");
        assert!((r.u.values[128] - 2.0 / 3.0 * 0.5f64.powf(1.5)).abs() < 1e-4);
    }

    #[test]
    fn zero_source_gives_zero() {
        let m = unit(32);
        let p = ExponentField::constant(&m, 2.0).unwrap();
        let r = solve_dirichlet(&m, &p, &constant_source(&m, 0.0), &SolverOptions::default()).unwrap();
        assert!(r.converged && r.u.max_abs() == 0.0);
    }

    #[test]
    fn strip_torsion_closed_form() {
        // -u'' = -1 on d < 0.1, +1 elsewhere: u = 0.3x + x^2/2 near 0
        let m = unit(640);
        let p = ExponentField::constant(&m, 2.0).unwrap();
        let td = torsion_delta(&m, &p, 0.1, &SolverOptions::default()).unwrap();
        let exact = |x: f64| {
            let y = x.min(1.0 - x);
            if y <= 0.1 {
                0.3 * y + y * y / 2.0
            } else {
                0.035 + 0.5 * (y - 0.1) - (y * y - 0.01) / 2.0
            }
        };
        for (x, v) in m.nodes.iter().zip(&td.xi_delta.values) {
            assert!((v - exact(x[0])).abs() < 1e-12, "{} {} {}", x[0], v, exact(x[0]));
        }
        // u/d is smallest at the midpoint: 0.115 / 0.5
        assert!((td.c0 - 0.23).abs() < 1e-12, "{}", td.c0);
    }

    #[test]
    fn strip_torsion_c0_for_small_delta() {
        let m = unit(1000);
        let p = ExponentField::constant(&m, 2.0).unwrap();
        let td = torsion_delta(&m, &p, 0.05, &SolverOptions::default()).unwrap();
        // midpoint value 0.1225 over d = 0.5
        assert!((td.c0 - 0.245).abs() < 1e-9, "{}", td.c0);
    }

    #[test]
    fn strip_too_wide_loses_positivity() {
        let m = unit(128);
        let p = ExponentField::constant(&m, 2.0).unwrap();
        assert!(matches!(
            torsion_delta(&m, &p, 0.4, &SolverOptions::default()),
            Err(Error::Positivity(_))
        ));
    }

    #[test]
    fn residual_examples() {
        let m = unit(64);
        let p = ExponentField::constant(&m, 2.0).unwrap();
        let one = constant_source(&m, 1.0);
        let r0 = weak_residual(&m, &p, &GridFunction::zeros(m.num_nodes()), &one).unwrap();
        assert!((r0 - m.h / 2.0).abs() < 1e-14);

        let p = ExponentField::from_fn(&m, |x| 2.0 + x[0]).unwrap();
        let sol = solve_dirichlet(&m, &p, &one, &SolverOptions::default()).unwrap();
        assert!(sol.residual <= 1e-11);
        let mut bumped = sol.u.clone();
        bumped.values[32] += 0.1;
        assert!(weak_residual(&m, &p, &bumped, &one).unwrap() > sol.residual);
    }

    #[test]
    fn energy_decreases() {
        let m = unit(128);
        let p = ExponentField::from_fn(&m, |x| 1.5 + 2.0 * x[0]).unwrap();
        let r = solve_dirichlet(&m, &p, &constant_source(&m, 3.0), &SolverOptions::default()).unwrap();
        assert!(r.converged);
        for w in r.energy_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * w[0].abs());
        }
    }

    #[test]
    fn works_in_two_dimensions() {
        let m = Mesh::build(DomainSpec::Rectangle(0.0, 1.0, 0.0, 1.0), 16).unwrap();
        let p = ExponentField::from_fn(&m, |x| 2.5 + 0.5 * x[1]).unwrap();
        let r = solve_dirichlet(&m, &p, &constant_source(&m, 1.0), &SolverOptions::default()).unwrap();
        assert!(r.converged, "residual {}", r.residual);
        assert!(m.interior_nodes().all(|j| r.u.values[j] > 0.0));
    }

    #[test]
    fn rejects_bad_input() {
        let m = unit(16);
        let p = ExponentField::constant(&m, 1.0).unwrap();
        assert!(solve_dirichlet(&m, &p, &constant_source(&m, 1.0), &SolverOptions::default()).is_err());
        let p = ExponentField::constant(&m, 2.0).unwrap();
        let opts = SolverOptions {
            eps_reg: 0.0,
            ..SolverOptions::default()
        };
        assert!(solve_dirichlet(&m, &p, &constant_source(&m, 1.0), &opts).is_err());
        let mut h = constant_source(&m, 1.0);
        h.values[0] = f64::NAN;
        assert!(solve_dirichlet(&m, &p, &h, &SolverOptions::default()).is_err());
    }
}
