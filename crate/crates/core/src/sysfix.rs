//! The fixed-point map of the decoupled auxiliary system: freeze `(z1, z2)`,
//! solve `-Delta_{p_i} u_i = f_i(x, z1, z2, grad z1, grad z2)` for each
//! component, and iterate `z <- (1 - theta) z + theta T(z)` inside the
//! barrier set.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::barriers::{sign_class, BarrierPair, ProblemSpec, QuadCoeffs, SignClass};
use crate::error::{Error, Result};
use crate::expspace::{lebesgue_norm, luxemburg_norm_cellwise, ExponentField};
use crate::grid::{GridFunction, Mesh, QuadField, VectorField};
use crate::plaplace::{self, SolverOptions};
use crate::verify::{self, branch_power};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IterationOptions {
    pub theta: f64,
    pub tol_step: f64,
    pub tol_residual: f64,
    pub max_iters: usize,
    /// 0 disables Anderson mixing.
    pub anderson_depth: usize,
}

impl Default for IterationOptions {
    fn default() -> Self {
        IterationOptions {
            theta: 0.7,
            tol_step: 1e-8,
            tol_residual: 1e-6,
            max_iters: 500,
            anderson_depth: 0,
        }
    }
}

impl IterationOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(Error::OutOfRange(format!(
                "theta must lie in (0,1], got {}",
                self.theta
            )));
        }
        if !(self.tol_step > 0.0 && self.tol_residual > 0.0) {
            return Err(Error::OutOfRange("iteration tolerances must be positive".into()));
        }
        if self.anderson_depth > 8 {
            return Err(Error::OutOfRange(format!(
                "anderson_depth {} too large (max 8)",
                self.anderson_depth
            )));
        }
        Ok(())
    }
}

/// The closed convex set the iterates live in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KSet {
    /// `under <= z <= over`, `||grad z||_inf <= gradient_cap` (= C R).
    Positive { gradient_cap: f64 },
    /// `under <= z <= l`, `||grad z||_{p(x)} <= l_tilde`.
    Tilde { l: f64, l_tilde: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Membership {
    pub member: bool,
    pub sandwich: bool,
    pub gradient: bool,
    pub sandwich_violation: f64,
    pub gradient_violation: f64,
    pub worst_violation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub z: [GridFunction; 2],
    pub grad_z: [VectorField; 2],
    pub in_k: bool,
    pub grad_inf_norm: [f64; 2],
    pub grad_lux_norm: [f64; 2],
}

impl SystemState {
    pub fn new(mesh: &Mesh, spec: &ProblemSpec, z: [GridFunction; 2], pair: &BarrierPair, k: &KSet) -> Result<Self> {
        let grad_z = [mesh.gradient(&z[0])?, mesh.gradient(&z[1])?];
        let grad_inf_norm = [grad_z[0].max_norm(), grad_z[1].max_norm()];
        let grad_lux_norm = [
            luxemburg_norm_cellwise(&grad_z[0], &spec.p[0], mesh)?,
            luxemburg_norm_cellwise(&grad_z[1], &spec.p[1], mesh)?,
        ];
        let in_k = membership_check(mesh, spec, &z, pair, k)?.member;
        Ok(SystemState {
            z,
            grad_z,
            in_k,
            grad_inf_norm,
            grad_lux_norm,
        })
    }
}

fn upper(pair: &BarrierPair, k: &KSet, i: usize, j: usize) -> f64 {
    match *k {
        KSet::Positive { .. } => pair.over[i].values[j],
        KSet::Tilde { l, .. } => l,
    }
}

fn member_tol(pair: &BarrierPair, k: &KSet) -> f64 {
    let scale = match *k {
        KSet::Positive { .. } => pair.over[0].max_abs().max(pair.over[1].max_abs()),
        KSet::Tilde { l, .. } => l,
    };
    1e-9 * scale.max(1.0)
}

pub fn membership_check(
    mesh: &Mesh,
    spec: &ProblemSpec,
    z: &[GridFunction; 2],
    pair: &BarrierPair,
    k: &KSet,
) -> Result<Membership> {
    let tol = member_tol(pair, k);
    let mut sw = 0.0f64;
    for i in 0..2 {
        mesh.check_nodal(z[i].len(), "iterate nodes")?;
        for j in 0..mesh.num_nodes() {
            let v = z[i].values[j];
            sw = sw.max(pair.under[i].values[j] - v).max(v - upper(pair, k, i, j));
        }
    }
    let mut gv = 0.0f64;
    let mut gtol = 0.0;
    for i in 0..2 {
        let g = mesh.gradient(&z[i])?;
        match *k {
            KSet::Positive { gradient_cap } => {
                gv = gv.max(g.max_norm() - gradient_cap);
                gtol = 1e-9 * gradient_cap.max(1.0);
            }
            KSet::Tilde { l_tilde, .. } => {
                gv = gv.max(luxemburg_norm_cellwise(&g, &spec.p[i], mesh)? - l_tilde);
                gtol = 1e-9 * l_tilde.max(1.0);
            }
        }
    }
    let sandwich = sw <= tol;
    let gradient = gv <= gtol;
    Ok(Membership {
        member: sandwich && gradient,
        sandwich,
        gradient,
        sandwich_violation: sw.max(0.0),
        gradient_violation: gv.max(0.0),
        worst_violation: sw.max(gv).max(0.0),
    })
}

/// Per-quadrature-point gradient magnitudes (constant on each cell).
fn grad_at_quad(mesh: &Mesh, u: &GridFunction) -> Result<Vec<f64>> {
    let g = mesh.gradient(u)?.norms();
    let nq = mesh.nq();
    Ok((0..mesh.num_qpoints()).map(|q| g[q / nq]).collect())
}

/// Right-hand sides `f_i(x, max(z, under), grad z)` at the quadrature points.
pub fn freeze_rhs(
    mesh: &Mesh,
    spec: &ProblemSpec,
    coeffs: &QuadCoeffs,
    z: &[GridFunction; 2],
    pair: &BarrierPair,
) -> Result<[QuadField; 2]> {
    let mut s: Vec<Vec<f64>> = Vec::with_capacity(2);
    let mut g: Vec<Vec<f64>> = Vec::with_capacity(2);
    for i in 0..2 {
        z[i].check_finite("iterate")?;
        let zq = mesh.interpolate(&z[i].values).values;
        let uq = mesh.interpolate(&pair.under[i].values).values;
        s.push(zq.iter().zip(&uq).map(|(a, b)| a.max(*b)).collect());
        g.push(grad_at_quad(mesh, &z[i])?);
    }
    Ok([
        spec.eval_rhs(0, mesh, coeffs, [&s[0], &s[1]], [&g[0], &g[1]])?,
        spec.eval_rhs(1, mesh, coeffs, [&s[0], &s[1]], [&g[0], &g[1]])?,
    ])
}

#[derive(Debug, Clone, PartialEq)]
pub struct TOutput {
    pub u: [GridFunction; 2],
    pub residual: [f64; 2],
    pub newton_iters: [usize; 2],
}

fn solve_component(
    mesh: &Mesh,
    p: &ExponentField,
    h: &QuadField,
    solver: &SolverOptions,
    warm: Option<&GridFunction>,
) -> Result<plaplace::ScalarSolveResult> {
    plaplace::solve_dirichlet_from(mesh, p, h, solver, warm)?.into_converged()
}

/// `T(z)`: the two decoupled component solves (run concurrently).
pub fn apply_t(
    mesh: &Mesh,
    spec: &ProblemSpec,
    coeffs: &QuadCoeffs,
    z: &[GridFunction; 2],
    pair: &BarrierPair,
    solver: &SolverOptions,
    warm: Option<&[GridFunction; 2]>,
) -> Result<TOutput> {
    let h = freeze_rhs(mesh, spec, coeffs, z, pair)?;
    let (a, b) = rayon::join(
        || solve_component(mesh, &spec.p[0], &h[0], solver, warm.map(|w| &w[0])),
        || solve_component(mesh, &spec.p[1], &h[1], solver, warm.map(|w| &w[1])),
    );
    let (a, b) = (a?, b?);
    Ok(TOutput {
        residual: [a.residual, b.residual],
        newton_iters: [a.newton_iters, b.newton_iters],
        u: [a.u, b.u],
    })
}

/// Weak residuals of the coupled system with the right-hand side evaluated
/// at `u` itself.
pub fn coupled_residual(
    mesh: &Mesh,
    spec: &ProblemSpec,
    coeffs: &QuadCoeffs,
    u: &[GridFunction; 2],
    pair: &BarrierPair,
) -> Result<[f64; 2]> {
    let h = freeze_rhs(mesh, spec, coeffs, u, pair)?;
    Ok([
        plaplace::weak_residual(mesh, &spec.p[0], &u[0], &h[0])?,
        plaplace::weak_residual(mesh, &spec.p[1], &u[1], &h[1])?,
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationReport {
    pub iters: usize,
    pub step_norms: Vec<[f64; 2]>,
    pub residuals: Vec<f64>,
    /// Membership of each `T(z^k)` in the set.
    pub membership_trace: Vec<bool>,
    /// Gradient part of the membership of each clamped iterate.
    pub gradient_cap_trace: Vec<bool>,
    pub worst_violation_trace: Vec<f64>,
    pub converged: bool,
    pub damping_used: f64,
    pub anderson_depth: usize,
    pub final_membership: Option<Membership>,
    pub note: Option<String>,
}

impl IterationReport {
    pub fn final_residual(&self) -> f64 {
        self.residuals.last().copied().unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone)]
pub struct FixedPoint {
    pub z: [GridFunction; 2],
    pub report: IterationReport,
}

fn clamp_into(z: &mut [GridFunction; 2], pair: &BarrierPair, k: &KSet) {
    for i in 0..2 {
        for (j, v) in z[i].values.iter_mut().enumerate() {
            let hi = upper(pair, k, i, j);
            *v = v.max(pair.under[i].values[j]).min(hi);
        }
    }
}

fn flatten(z: &[GridFunction; 2]) -> Vec<f64> {
    z[0].values.iter().chain(&z[1].values).copied().collect()
}

fn unflatten(v: &[f64], n: usize) -> [GridFunction; 2] {
    [GridFunction::new(v[..n].to_vec()), GridFunction::new(v[n..].to_vec())]
}

/// Small dense least squares `min |g - dG c|` through regularized normal
/// equations (at most a handful of columns).
fn anderson_coefficients(dg: &[Vec<f64>], g: &[f64]) -> Option<Vec<f64>> {
    let m = dg.len();
    let mut a = vec![vec![0.0; m + 1]; m];
    for r in 0..m {
        for c in 0..m {
            a[r][c] = dg[r].iter().zip(&dg[c]).map(|(x, y)| x * y).sum();
        }
        a[r][m] = dg[r].iter().zip(g).map(|(x, y)| x * y).sum();
    }
    let scale = (0..m).map(|r| a[r][r]).fold(0.0, f64::max);
    if !(scale > 0.0) {
        return None;
    }
    for (r, row) in a.iter_mut().enumerate() {
        row[r] += 1e-12 * scale;
    }
    for col in 0..m {
        let piv = (col..m).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        a.swap(col, piv);
        if a[col][col].abs() < 1e-300 {
            return None;
        }
        for r in col + 1..m {
            let f = a[r][col] / a[col][col];
            for c in col..=m {
                a[r][c] -= f * a[col][c];
            }
        }
    }
    let mut x = vec![0.0; m];
    for r in (0..m).rev() {
        let s: f64 = (r + 1..m).map(|c| a[r][c] * x[c]).sum();
        x[r] = (a[r][m] - s) / a[r][r];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Damped Picard (optionally Anderson-mixed) iteration from `init`, clamped
/// into the nodewise part of `k` after every step.
#[allow(clippy::too_many_arguments)]
pub fn fixed_point_iterate(
    mesh: &Mesh,
    spec: &ProblemSpec,
    pair: &BarrierPair,
    k: &KSet,
    init: [GridFunction; 2],
    solver: &SolverOptions,
    opts: &IterationOptions,
) -> Result<FixedPoint> {
    opts.validate()?;
    let coeffs = spec.quad_coeffs(mesh)?;
    let n = mesh.num_nodes();
    let mut z = init;
    clamp_into(&mut z, pair, k);
    let mut report = IterationReport {
        iters: 0,
        step_norms: Vec::new(),
        residuals: Vec::new(),
        membership_trace: Vec::new(),
        gradient_cap_trace: Vec::new(),
        worst_violation_trace: Vec::new(),
        converged: false,
        damping_used: opts.theta,
        anderson_depth: opts.anderson_depth,
        final_membership: None,
        note: None,
    };
    let mut hist_z: Vec<Vec<f64>> = Vec::new();
    let mut hist_g: Vec<Vec<f64>> = Vec::new();
    let mut warm: Option<[GridFunction; 2]> = None;
    for it in 1..=opts.max_iters {
        let t = match apply_t(mesh, spec, &coeffs, &z, pair, solver, warm.as_ref()) {
            Ok(t) => t,
            Err(e @ Error::NotConverged { .. }) => {
                report.final_membership = Some(membership_check(mesh, spec, &z, pair, k)?);
                report.note = Some(format!("component solve failed at iteration {it}: {e}"));
                return Ok(FixedPoint { z, report });
            }
            Err(e) => return Err(e),
        };
        let mt = membership_check(mesh, spec, &t.u, pair, k)?;
        report.membership_trace.push(mt.member);

        let zf = flatten(&z);
        let tf = flatten(&t.u);
        let g: Vec<f64> = tf.iter().zip(&zf).map(|(a, b)| a - b).collect();
        let mut next: Vec<f64> = zf.iter().zip(&g).map(|(a, b)| a + opts.theta * b).collect();
        if opts.anderson_depth > 0 {
            hist_z.push(zf.clone());
            hist_g.push(g.clone());
            if hist_z.len() > opts.anderson_depth + 1 {
                hist_z.remove(0);
                hist_g.remove(0);
            }
            let m = hist_z.len() - 1;
            if m > 0 {
                let dz: Vec<Vec<f64>> = (0..m)
                    .map(|c| hist_z[c + 1].iter().zip(&hist_z[c]).map(|(a, b)| a - b).collect())
                    .collect();
                let dg: Vec<Vec<f64>> = (0..m)
                    .map(|c| hist_g[c + 1].iter().zip(&hist_g[c]).map(|(a, b)| a - b).collect())
                    .collect();
                if let Some(gamma) = anderson_coefficients(&dg, &g) {
                    for (c, gc) in gamma.iter().enumerate() {
                        for j in 0..next.len() {
                            next[j] -= gc * (dz[c][j] + opts.theta * dg[c][j]);
                        }
                    }
                }
            }
        }
        let mut zn = unflatten(&next, n);
        clamp_into(&mut zn, pair, k);
        let step = [
            zn[0]
                .values
                .iter()
                .zip(&z[0].values)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs())),
            zn[1]
                .values
                .iter()
                .zip(&z[1].values)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs())),
        ];
        let res = coupled_residual(mesh, spec, &coeffs, &zn, pair)?;
        let res = res[0].max(res[1]);
        let mz = membership_check(mesh, spec, &zn, pair, k)?;
        report.iters = it;
        report.step_norms.push(step);
        report.residuals.push(res);
        report.gradient_cap_trace.push(mz.gradient);
        report.worst_violation_trace.push(mz.worst_violation);
        z = zn;
        warm = Some(t.u);
        if step[0].max(step[1]) <= opts.tol_step && res <= opts.tol_residual {
            report.converged = mz.member;
            if !mz.member {
                report.note = Some(format!(
                    "stationary iterate outside the set (worst violation {:e})",
                    mz.worst_violation
                ));
            }
            report.final_membership = Some(mz);
            return Ok(FixedPoint { z, report });
        }
    }
    report.final_membership = Some(membership_check(mesh, spec, &z, pair, k)?);
    report.note = Some(format!("no convergence within {} iterations", opts.max_iters));
    Ok(FixedPoint { z, report })
}

/// Candidate constants of the sup-norm and gradient bounds for one exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeasuredConstants {
    /// `||u||_inf <= c_linf ||h||_{L^N}^{1/(p^+- - 1)}`.
    pub c_linf: f64,
    /// `\int h u <= c_embed ||h||_{L^N} ||grad u||_{p(x)}`.
    pub c_embed: f64,
}

pub const CONSTANT_SAFETY: f64 = 2.0;

/// Measures the constants over the family `{s, s d^{-0.3}}`,
/// `s in {1e-2, 1, 1e2}`, times a safety factor.
pub fn measure_constants(
    mesh: &Mesh,
    p: &ExponentField,
    n_dim: usize,
    solver: &SolverOptions,
) -> Result<MeasuredConstants> {
    let bases = [
        plaplace::constant_source(mesh, 1.0),
        mesh.sample(|q| q.distance.powf(-0.3)),
    ];
    let scales = [1e-2, 1.0, 1e2];
    let mut c_linf = 0.0f64;
    let mut c_embed = 0.0f64;
    for b in &bases {
        let a = verify::linfty_estimate_audit(mesh, p, b, &scales, n_dim, solver)?;
        c_linf = c_linf.max(a.measured_ratio);
        for &s in &scales {
            let h = QuadField {
                values: b.values.iter().map(|v| v * s).collect(),
            };
            c_embed = c_embed.max(verify::embedding_ratio(mesh, p, &h, n_dim, solver)?);
        }
    }
    Ok(MeasuredConstants {
        c_linf: CONSTANT_SAFETY * c_linf,
        c_embed: CONSTANT_SAFETY * c_embed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TildeBounds {
    pub l: f64,
    pub l_tilde: f64,
    pub constants: [MeasuredConstants; 2],
    /// Bound on `||f_i(z)||_{L^N}` over the set at the accepted `(L, L~)`.
    pub rhs_bound: [f64; 2],
    pub doublings: usize,
}

/// `||f_i(z)||_{L^N}` bound for `under <= z <= L`, `||grad z||_p <= L~`:
/// `M_i (||Pi_i||_N + 2 + T^{gamma_i^+} + T^{gammabar_i^+})` with
/// `T = (1 + |Omega|) L~` and `Pi_i` the product envelope.
fn rhs_bound(
    mesh: &Mesh,
    spec: &ProblemSpec,
    coeffs: &QuadCoeffs,
    pair: &BarrierPair,
    l: f64,
    lt: f64,
    i: usize,
) -> Result<f64> {
    let under = [
        mesh.interpolate(&pair.under[0].values),
        mesh.interpolate(&pair.under[1].values),
    ];
    let ca = sign_class(&spec.alpha[i], "alpha")?;
    let cb = sign_class(&spec.beta[i], "beta")?;
    let fac = |class: SignClass, u: f64, e: f64| match class {
        SignClass::Negative => u.powf(e),
        SignClass::Nonnegative => l.powf(e),
    };
    let pi = QuadField {
        values: (0..mesh.num_qpoints())
            .map(|q| {
                fac(ca, under[0].values[q], coeffs.alpha[i].values[q])
                    * fac(cb, under[1].values[q], coeffs.beta[i].values[q])
            })
            .collect(),
    };
    let t = (1.0 + mesh.measure()) * lt;
    Ok(spec.big_m[i]
        * (lebesgue_norm(&pi, spec.n_dim as f64, mesh)?
            + 2.0
            + t.powf(spec.gamma[i].p_plus())
            + t.powf(spec.gamma_bar[i].p_plus())))
}

/// Doubling search for `L` (sup bound) and `L~` (gradient bound) that close
/// the a priori estimates for the given barrier pair.
pub fn tilde_bounds(
    mesh: &Mesh,
    spec: &ProblemSpec,
    pair: &BarrierPair,
    consts: &[MeasuredConstants; 2],
) -> Result<TildeBounds> {
    let coeffs = spec.quad_coeffs(mesh)?;
    let mut lt = 1.0;
    let mut doublings = 0;
    for _ in 0..200 {
        let mut l = 2.0;
        let mut g = [0.0; 2];
        let mut closed = false;
        for _ in 0..200 {
            let mut need = 0.0f64;
            for i in 0..2 {
                g[i] = rhs_bound(mesh, spec, &coeffs, pair, l, lt, i)?;
                need = need.max(consts[i].c_linf * g[i].powf(branch_power(g[i], &spec.p[i])));
            }
            if l >= need {
                closed = true;
                break;
            }
            l *= 2.0;
            doublings += 1;
        }
        if !closed {
            return Err(Error::Infeasible("sup bound L did not close".into()));
        }
        let grad_ok = (0..2).all(|i| {
            let b = (consts[i].c_embed * g[i]).powf(1.0 / (spec.p[i].p_minus() - 1.0));
            b.max(1.0) <= lt
        });
        if grad_ok {
            return Ok(TildeBounds {
                l,
                l_tilde: lt,
                constants: *consts,
                rhs_bound: g,
                doublings,
            });
        }
        lt *= 2.0;
        doublings += 1;
    }
    Err(Error::Infeasible("gradient bound L~ did not close".into()))
}

/// Random members of the set: convex combinations of the barriers (or of
/// `under` and `L`) plus smooth sandwich-relative noise, re-clamped; noise is
/// halved until the gradient condition holds.
pub fn sample_members(
    mesh: &Mesh,
    spec: &ProblemSpec,
    pair: &BarrierPair,
    k: &KSet,
    count: usize,
    seed: u64,
) -> Result<Vec<[GridFunction; 2]>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dmax = mesh.max_distance();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut lam: [f64; 2] = [rng.gen(), rng.gen()];
        let eta: [f64; 2] = [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)];
        let freq: [f64; 2] = [rng.gen_range(1..=4) as f64, rng.gen_range(1..=4) as f64];
        let mut amp = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let mut z: [GridFunction; 2] = [GridFunction::zeros(0), GridFunction::zeros(0)];
            for i in 0..2 {
                z[i] = GridFunction::new(
                    (0..mesh.num_nodes())
                        .map(|j| {
                            let lo = pair.under[i].values[j];
                            let hi = upper(pair, k, i, j);
                            let s = (freq[i] * std::f64::consts::PI * mesh.distance[j] / dmax).sin();
                            lam[i] * lo + (1.0 - lam[i]) * hi + amp * eta[i] * (hi - lo) * s
                        })
                        .collect(),
                );
                for &b in &mesh.boundary_nodes {
                    z[i].values[b] = 0.0;
                }
            }
            clamp_into(&mut z, pair, k);
            if membership_check(mesh, spec, &z, pair, k)?.member {
                accepted = Some(z);
                break;
            }
            // retreat toward the lower barrier, which is itself a member
            amp *= 0.5;
            lam = lam.map(|l| 0.5 * (1.0 + l));
        }
        match accepted {
            Some(z) => out.push(z),
            None => {
                return Err(Error::Infeasible(
                    "could not sample a member of the set (barriers violate the gradient cap)".into(),
                ))
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvarianceReport {
    pub samples: usize,
    pub violations: usize,
    pub sandwich_violations: usize,
    pub gradient_violations: usize,
    pub worst_violation: f64,
    pub pass: bool,
}

/// Maps random members through `T` and counts outputs leaving the set.
#[allow(clippy::too_many_arguments)]
pub fn invariance_audit(
    mesh: &Mesh,
    spec: &ProblemSpec,
    pair: &BarrierPair,
    k: &KSet,
    count: usize,
    seed: u64,
    solver: &SolverOptions,
) -> Result<InvarianceReport> {
    let coeffs = spec.quad_coeffs(mesh)?;
    let samples = sample_members(mesh, spec, pair, k, count, seed)?;
    let results: Vec<Membership> = samples
        .par_iter()
        .map(|z| {
            let t = apply_t(mesh, spec, &coeffs, z, pair, solver, None)?;
            membership_check(mesh, spec, &t.u, pair, k)
        })
        .collect::<Result<Vec<_>>>()?;
    let violations = results.iter().filter(|m| !m.member).count();
    Ok(InvarianceReport {
        samples: count,
        violations,
        sandwich_violations: results.iter().filter(|m| !m.sandwich).count(),
        gradient_violations: results.iter().filter(|m| !m.gradient).count(),
        worst_violation: results.iter().map(|m| m.worst_violation).fold(0.0, f64::max),
        pass: violations == 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barriers::{self, tests::constant_spec, validate_hypotheses, CalibrationOptions, F_VARS};
    use crate::expr::Expr;
    use crate::grid::DomainSpec;

    fn unit(n: usize) -> Mesh {
        Mesh::build(DomainSpec::Interval(0.0, 1.0), n).unwrap()
    }

    fn trivial(m: &Mesh) -> ProblemSpec {
        let mut s = constant_spec(m, [2.0, 2.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [1.0; 2], [1.0; 2]);
        let one = Expr::parse("1", F_VARS).unwrap();
        s.f = [one.clone(), one];
        s
    }

    #[test]
    fn constant_map_converges_in_two_steps() {
        let m = unit(128);
        let s = trivial(&m);
        let pair = barriers::build_barriers(&m, &s, 2.0, 0.05, &SolverOptions::default()).unwrap();
        let k = KSet::Tilde { l: 10.0, l_tilde: 10.0 };
        let opts = IterationOptions {
            theta: 1.0,
            ..IterationOptions::default()
        };
        let fp = fixed_point_iterate(&m, &s, &pair, &k, pair.under.clone(), &SolverOptions::default(), &opts).unwrap();
        assert!(fp.report.converged);
        assert!(fp.report.iters <= 2);
        assert!(fp.report.final_residual() <= 1e-10);
        for (j, x) in m.nodes.iter().enumerate() {
            assert!((fp.z[0].values[j] - x[0] * (1.0 - x[0]) / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_components_agree() {
        let m = unit(128);
        let mut s = constant_spec(&m, [2.5, 2.5], [0.2, 0.2], [0.2, 0.2], [0.3, 0.3], [1.0; 2], [1.0; 2]);
        s.f = [
            Expr::parse("s1^alpha*s2^beta + 0.5*(g1^gamma + g2^gammabar)", F_VARS).unwrap(),
            Expr::parse("s1^alpha*s2^beta + 0.5*(g1^gamma + g2^gammabar)", F_VARS).unwrap(),
        ];
        let pair = barriers::build_barriers(&m, &s, 4.0, 0.05, &SolverOptions::default()).unwrap();
        let coeffs = s.quad_coeffs(&m).unwrap();
        let z = [pair.under[0].clone(), pair.under[0].clone()];
        let t = apply_t(&m, &s, &coeffs, &z, &pair, &SolverOptions::default(), None).unwrap();
        assert_eq!(t.u[0], t.u[1]);
    }

    #[test]
    fn freeze_clamp_is_identity_on_the_floor() {
        let m = unit(64);
        let s = constant_spec(&m, [2.0, 2.0], [-0.2, -0.2], [0.3, 0.3], [0.1, 0.1], [1.0; 2], [1.0; 2]);
        let pair = barriers::build_barriers(&m, &s, 2.0, 0.05, &SolverOptions::default()).unwrap();
        let coeffs = s.quad_coeffs(&m).unwrap();
        let at = freeze_rhs(&m, &s, &coeffs, &pair.under, &pair).unwrap();
        let below = [pair.under[0].scaled(0.5), pair.under[1].scaled(0.5)];
        // gradients differ, so compare only the value part with alpha < 0
        let mut s0 = s.clone();
        s0.f = [
            Expr::parse("s1^alpha*s2^beta", F_VARS).unwrap(),
            Expr::parse("s1^alpha*s2^beta", F_VARS).unwrap(),
        ];
        let a = freeze_rhs(&m, &s0, &coeffs, &pair.under, &pair).unwrap();
        let b = freeze_rhs(&m, &s0, &coeffs, &below, &pair).unwrap();
        assert_eq!(a[0], b[0]);
        assert!(at[0].values.iter().all(|v| v.is_finite() && *v > 0.0));
    }

    #[test]
    fn singular_rhs_matches_distance_power() {
        // s1^{-0.2} at the floor under = xi_delta / C with p = 2, delta
        // chosen so the strip solution is linear near the wall
        let m = unit(1000);
        let mut s = constant_spec(&m, [2.0, 2.0], [-0.2, -0.2], [0.0, 0.0], [0.0, 0.0], [1.0; 2], [1.0; 2]);
        s.f = [
            Expr::parse("s1^alpha", F_VARS).unwrap(),
            Expr::parse("s1^alpha", F_VARS).unwrap(),
        ];
        let pair = barriers::build_barriers(&m, &s, 2.0, 0.1, &SolverOptions::default()).unwrap();
        let coeffs = s.quad_coeffs(&m).unwrap();
        let h = freeze_rhs(&m, &s, &coeffs, &pair.under, &pair).unwrap();
        // near the wall under = (0.3 y + y^2/2) / 2 exactly at nodes
        let q = 1; // interior point of the first cell
        let pt = m.qpoint(q);
        let y = pt.x[0];
        let a = m.nodes[1][0];
        let ua = (0.3 * a + a * a / 2.0) / 2.0;
        let uq = ua * y / a;
        assert!((h[0].values[q] - uq.powf(-0.2)).abs() < 1e-12 * uq.powf(-0.2));
    }

    #[test]
    fn membership_examples() {
        let m = unit(64);
        let s = constant_spec(&m, [2.0, 2.0], [0.3, 0.3], [0.3, 0.3], [0.1, 0.1], [1.0; 2], [1.0; 2]);
        let pair = barriers::build_barriers(&m, &s, 2.0, 0.05, &SolverOptions::default()).unwrap();
        let k = KSet::Positive {
            gradient_cap: pair.c * pair.r,
        };
        let r = membership_check(&m, &s, &pair.under, &pair, &k).unwrap();
        assert!(r.member && r.worst_violation == 0.0);
        let big = [pair.over[0].scaled(2.0), pair.over[1].scaled(2.0)];
        let r = membership_check(&m, &s, &big, &pair, &k).unwrap();
        assert!(!r.member);
        assert!((r.sandwich_violation - pair.over[0].max_abs()).abs() < 1e-15);
    }

    #[test]
    fn solve_order_does_not_matter() {
        let m = unit(128);
        let mut s = constant_spec(&m, [2.2, 2.4], [0.3, -0.1], [-0.1, 0.3], [0.5, 0.5], [1.0; 2], [1.0; 2]);
        let f = Expr::parse("s1^alpha*s2^beta + 0.5*(g1^gamma + g2^gammabar)", F_VARS).unwrap();
        s.f = [f.clone(), f];
        let pair = barriers::build_barriers(&m, &s, 4.0, 0.05, &SolverOptions::default()).unwrap();
        let coeffs = s.quad_coeffs(&m).unwrap();
        let h = freeze_rhs(&m, &s, &coeffs, &pair.under, &pair).unwrap();
        let opts = SolverOptions::default();
        let a1 = solve_component(&m, &s.p[0], &h[0], &opts, None).unwrap().u;
        let a2 = solve_component(&m, &s.p[1], &h[1], &opts, None).unwrap().u;
        let b2 = solve_component(&m, &s.p[1], &h[1], &opts, None).unwrap().u;
        let b1 = solve_component(&m, &s.p[0], &h[0], &opts, None).unwrap().u;
        assert_eq!(a1, b1);
        assert_eq!(a2, b2);
        let t = apply_t(&m, &s, &coeffs, &pair.under, &pair, &opts, None).unwrap();
        assert_eq!(t.u[0], a1);
        assert_eq!(t.u[1], a2);
    }

    #[test]
    fn cooperative_iterates_increase() {
        let m = unit(128);
        let s = constant_spec(&m, [2.0, 2.0], [0.3, 0.3], [0.3, 0.3], [0.1, 0.1], [1.0; 2], [1.0; 2]);
        let r = validate_hypotheses(&s, 1).unwrap();
        let cal = barriers::calibrate_c(
            &m,
            &s,
            &r,
            &SolverOptions::default(),
            &CalibrationOptions::default(),
            None,
        )
        .unwrap();
        let pair = cal.pair;
        let k = KSet::Positive {
            gradient_cap: pair.c * pair.r,
        };
        let coeffs = s.quad_coeffs(&m).unwrap();
        let opts = SolverOptions::default();
        let mut z = pair.under.clone();
        for _ in 0..6 {
            let t = apply_t(&m, &s, &coeffs, &z, &pair, &opts, None).unwrap();
            let mut zn = [GridFunction::zeros(0), GridFunction::zeros(0)];
            for i in 0..2 {
                zn[i] = GridFunction::new(
                    z[i].values
                        .iter()
                        .zip(&t.u[i].values)
                        .map(|(a, b)| 0.3 * a + 0.7 * b)
                        .collect(),
                );
                for j in 0..m.num_nodes() {
                    assert!(zn[i].values[j] >= z[i].values[j] - 1e-12);
                }
            }
            z = zn;
        }
        let fp = fixed_point_iterate(
            &m,
            &s,
            &pair,
            &k,
            pair.under.clone(),
            &opts,
            &IterationOptions::default(),
        )
        .unwrap();
        assert!(fp.report.converged, "{:?}", fp.report.note);
        assert!(fp.report.membership_trace.iter().all(|b| *b));
    }

    #[test]
    fn anderson_agrees_with_picard() {
        let m = unit(128);
        let mut s = constant_spec(&m, [2.2, 2.4], [0.3, -0.1], [-0.1, 0.3], [0.5, 0.5], [1.0; 2], [1.0; 2]);
        let f = Expr::parse("s1^alpha*s2^beta + 0.5*(g1^gamma + g2^gammabar)", F_VARS).unwrap();
        s.f = [f.clone(), f];
        let r = validate_hypotheses(&s, 1).unwrap();
        let cal = barriers::calibrate_c(
            &m,
            &s,
            &r,
            &SolverOptions::default(),
            &CalibrationOptions::default(),
            None,
        )
        .unwrap();
        let pair = cal.pair;
        let k = KSet::Positive {
            gradient_cap: pair.c * pair.r,
        };
        let opts = SolverOptions::default();
        let a = fixed_point_iterate(
            &m,
            &s,
            &pair,
            &k,
            pair.under.clone(),
            &opts,
            &IterationOptions::default(),
        )
        .unwrap();
        let it = IterationOptions {
            anderson_depth: 3,
            ..IterationOptions::default()
        };
        let b = fixed_point_iterate(&m, &s, &pair, &k, pair.under.clone(), &opts, &it).unwrap();
        assert!(a.report.converged && b.report.converged);
        for i in 0..2 {
            for j in 0..m.num_nodes() {
                assert!((a.z[i].values[j] - b.z[i].values[j]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn tilde_bounds_close() {
        let m = unit(128);
        let s = constant_spec(
            &m,
            [3.0, 3.0],
            [-0.05, -0.05],
            [-0.06, -0.06],
            [0.5, 0.5],
            [1.0; 2],
            [1.0; 2],
        );
        let pair = barriers::build_barriers(&m, &s, 4.0, 0.05, &SolverOptions::default()).unwrap();
        let c = measure_constants(&m, &s.p[0], 2, &SolverOptions::default()).unwrap();
        assert!(c.c_linf > 0.0 && c.c_embed > 0.0);
        let b = tilde_bounds(&m, &s, &pair, &[c, c]).unwrap();
        assert!(b.l > 1.0 && b.l_tilde >= 1.0);
        assert!(b.l >= c.c_linf * b.rhs_bound[0].powf(branch_power(b.rhs_bound[0], &s.p[0])));
    }
}
