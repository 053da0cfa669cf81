//! Audits of the a priori estimates: gradient and sup-norm bounds under
//! scaling of the data, the mean-value identity for weighted fluxes, and the
//! distance sandwich `c0 d <= u <= c1 d`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expspace::{lebesgue_norm, luxemburg_norm_cellwise, ExponentField};
use crate::grid::{DomainSpec, GridFunction, Mesh, QuadField};
use crate::plaplace::{self, SolverOptions};

mod certificate;
pub use certificate::*;

/// Relative spread allowed for constant exponents (exact homogeneity).
pub const SPREAD_TOL: f64 = 0.10;
/// Relative tolerance for the sandwich constants under refinement.
pub const SANDWICH_TOL: f64 = 0.20;
/// Quadrature contribution to the mean-value tolerance.
pub const MVT_QUAD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Verdict {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn passed(self) -> bool {
        self == Verdict::Pass
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateAudit {
    pub name: String,
    /// Largest ratio over the family: the measured candidate constant.
    pub measured_ratio: f64,
    pub scale_family: Vec<(f64, f64)>,
    pub spread: f64,
    pub verdict: Verdict,
    pub tolerance: f64,
    pub notes: Vec<String>,
}

/// Exponent `1/(p^- - 1)` when `norm > 1`, else `1/(p^+ - 1)`.
pub fn branch_power(norm: f64, p: &ExponentField) -> f64 {
    if norm > 1.0 {
        1.0 / (p.p_minus() - 1.0)
    } else {
        1.0 / (p.p_plus() - 1.0)
    }
}

fn family_verdict(ratios: &[f64], constant_p: bool) -> (Verdict, f64) {
    let max = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let spread = if max > 0.0 { (max - min) / max } else { f64::INFINITY };
    let finite = ratios.iter().all(|r| r.is_finite() && *r > 0.0);
    // monotone growth: strictly increasing along the whole family and by
    // more than the spread tolerance overall
    let growing = ratios.len() >= 3
        && ratios.windows(2).all(|w| w[1] > w[0])
        && ratios[ratios.len() - 1] > (1.0 + SPREAD_TOL) * ratios[0];
    let mut ok = finite && !growing;
    if constant_p {
        ok &= spread < SPREAD_TOL;
    }
    (Verdict::from_bool(ok), spread)
}

fn check_sign_constant(h: &QuadField) -> Result<()> {
    let pos = h.values.iter().any(|v| *v > 0.0);
    let neg = h.values.iter().any(|v| *v < 0.0);
    if pos && neg {
        return Err(Error::OutOfRange("data must be sign-constant".into()));
    }
    if !pos && !neg {
        return Err(Error::OutOfRange("data must be nontrivial".into()));
    }
    Ok(())
}

fn scaled(h: &QuadField, s: f64) -> QuadField {
    QuadField {
        values: h.values.iter().map(|v| v * s).collect(),
    }
}

/// Ratio `||grad u||_inf / ||h||_inf^{1/(p^+- - 1)}` across `h = s h_base`.
pub fn gradient_estimate_audit(
    mesh: &Mesh,
    p: &ExponentField,
    h_base: &QuadField,
    scales: &[f64],
    opts: &SolverOptions,
) -> Result<EstimateAudit> {
    check_sign_constant(h_base)?;
    let mut family = Vec::with_capacity(scales.len());
    for &s in scales {
        let h = scaled(h_base, s);
        let u = plaplace::solve_dirichlet(mesh, p, &h, opts)?.into_converged()?.u;
        let g = mesh.gradient(&u)?.max_norm();
        let hn = h.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        family.push((s, g / hn.powf(branch_power(hn, p))));
    }
    let ratios: Vec<f64> = family.iter().map(|r| r.1).collect();
    let (verdict, spread) = family_verdict(&ratios, p.is_constant());
    Ok(EstimateAudit {
        name: "gradient_estimate".into(),
        measured_ratio: ratios.iter().cloned().fold(0.0, f64::max),
        scale_family: family,
        spread,
        verdict,
        tolerance: SPREAD_TOL,
        notes: Vec::new(),
    })
}

/// Ratio `||u||_inf / ||h||_{L^N}^{1/(p^+- - 1)}` across `h = s h_base`.
/// `n_dim` is the N of the estimate (2 is used on 1D meshes).
pub fn linfty_estimate_audit(
    mesh: &Mesh,
    p: &ExponentField,
    h_base: &QuadField,
    scales: &[f64],
    n_dim: usize,
    opts: &SolverOptions,
) -> Result<EstimateAudit> {
    check_sign_constant(h_base)?;
    let mut notes = Vec::new();
    if mesh.dim < 2 {
        notes.push(format!("1D mesh: N = {n_dim} used for the L^N norm and exponent"));
    }
    let mut family = Vec::with_capacity(scales.len());
    for &s in scales {
        let h = scaled(h_base, s);
        let u = plaplace::solve_dirichlet(mesh, p, &h, opts)?.into_converged()?.u;
        let hn = lebesgue_norm(&h, n_dim as f64, mesh)?;
        family.push((s, u.max_abs() / hn.powf(branch_power(hn, p))));
    }
    let ratios: Vec<f64> = family.iter().map(|r| r.1).collect();
    let (verdict, spread) = family_verdict(&ratios, p.is_constant());
    Ok(EstimateAudit {
        name: "linfty_estimate".into(),
        measured_ratio: ratios.iter().cloned().fold(0.0, f64::max),
        scale_family: family,
        spread,
        verdict,
        tolerance: SPREAD_TOL,
        notes,
    })
}

/// `\int h u / (||h||_{L^N} ||grad u||_{p(x)})` for the solve with data `h`:
/// the constant of the duality-plus-embedding step of the gradient bound.
pub fn embedding_ratio(
    mesh: &Mesh,
    p: &ExponentField,
    h: &QuadField,
    n_dim: usize,
    opts: &SolverOptions,
) -> Result<f64> {
    let u = plaplace::solve_dirichlet(mesh, p, h, opts)?.into_converged()?.u;
    let uq = mesh.interpolate(&u.values);
    let hu: f64 = h
        .values
        .iter()
        .zip(&uq.values)
        .zip(mesh.qweights())
        .map(|((a, b), w)| w * a * b)
        .sum();
    let g = luxemburg_norm_cellwise(&mesh.gradient(&u)?, p, mesh)?;
    Ok(hu / (lebesgue_norm(h, n_dim as f64, mesh)? * g))
}

/// `gamma = \int f |grad u|^{p-2} grad u . grad phi / \int h phi`.
pub fn mvt_ratio(
    mesh: &Mesh,
    p: &ExponentField,
    u: &GridFunction,
    h: &QuadField,
    f: &QuadField,
    phi: &GridFunction,
) -> Result<f64> {
    mesh.check_nodal(u.len(), "solution nodes")?;
    mesh.check_nodal(phi.len(), "test function nodes")?;
    mesh.check_quad(h.values.len(), "source values")?;
    mesh.check_quad(f.values.len(), "weight values")?;
    let pq = p.at_quadrature(mesh)?;
    let gu = mesh.gradient(u)?;
    let gp = mesh.gradient(phi)?;
    let nq = mesh.nq();
    let w = mesh.qweights();
    let mut num = 0.0;
    for c in 0..mesh.num_cells() {
        let g = gu.values[c];
        let s = g[0].hypot(g[1]);
        if s == 0.0 {
            continue;
        }
        let dot = g[0] * gp.values[c][0] + g[1] * gp.values[c][1];
        for k in 0..nq {
            let q = c * nq + k;
            num += w[q] * f.values[q] * s.powf(pq.values[q] - 2.0) * dot;
        }
    }
    let phiq = mesh.interpolate(&phi.values);
    let den: f64 = h
        .values
        .iter()
        .zip(&phiq.values)
        .zip(w)
        .map(|((a, b), w)| w * a * b)
        .sum();
    if den.abs() < 1e-14 {
        return Err(Error::Degenerate(format!("\\int h phi = {den:e}")));
    }
    Ok(num / den)
}

/// Normalized coordinates of `x` in the domain's bounding box.
fn unit_coords(domain: &DomainSpec, x: [f64; 2]) -> [f64; 2] {
    match *domain {
        DomainSpec::Interval(a, b) => [(x[0] - a) / (b - a), 0.5],
        DomainSpec::Rectangle(ax, bx, ay, by) => [(x[0] - ax) / (bx - ax), (x[1] - ay) / (by - ay)],
    }
}

/// Random Lipschitz weight: piecewise (bi)linear on a coarse random knot
/// grid, rescaled so its range is exactly `[m, big_m]` on the knots.
pub fn random_weight(mesh: &Mesh, m: f64, big_m: f64, rng: &mut ChaCha8Rng) -> QuadField {
    let kx = rng.gen_range(4..=16usize);
    let ky = if mesh.dim == 2 { rng.gen_range(4..=16usize) } else { 1 };
    let mut v: Vec<f64> = (0..(kx + 1) * (ky + 1)).map(|_| rng.gen::<f64>()).collect();
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for x in &mut v {
        *x = m + (big_m - m) * (*x - lo) / (hi - lo);
    }
    let domain = mesh.domain;
    mesh.sample(|q| {
        let t = unit_coords(&domain, q.x);
        let fx = (t[0] * kx as f64).min(kx as f64 - 1e-12);
        let i = fx.floor() as usize;
        let a = fx - i as f64;
        if ky == 1 {
            return v[i] * (1.0 - a) + v[i + 1] * a;
        }
        let fy = (t[1] * ky as f64).min(ky as f64 - 1e-12);
        let j = fy.floor() as usize;
        let b = fy - j as f64;
        let at = |i: usize, j: usize| v[j * (kx + 1) + i];
        (1.0 - b) * ((1.0 - a) * at(i, j) + a * at(i + 1, j)) + b * ((1.0 - a) * at(i, j + 1) + a * at(i + 1, j + 1))
    })
}

/// Random positive zero-trace test function
/// `phi = s^a exp(sum_k c_k sin(k pi t))`, `s` the normalized sine bubble.
pub fn random_test_function(mesh: &Mesh, rng: &mut ChaCha8Rng) -> GridFunction {
    let a = rng.gen_range(0.5..2.0);
    let modes: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            let kx = rng.gen_range(1..=3) as f64;
            let ky = rng.gen_range(1..=3) as f64;
            let c = 0.5 * sample_normal(rng);
            (kx, ky, c)
        })
        .collect();
    let domain = mesh.domain;
    let dim = mesh.dim;
    let mut phi = mesh.nodal(|x| {
        let t = unit_coords(&domain, x);
        let pi = std::f64::consts::PI;
        let bubble = if dim == 1 {
            (pi * t[0]).sin()
        } else {
            (pi * t[0]).sin() * (pi * t[1]).sin()
        };
        let mut e = 0.0;
        for &(kx, ky, c) in &modes {
            let s = if dim == 1 {
                (kx * pi * t[0]).sin()
            } else {
                (kx * pi * t[0]).sin() * (ky * pi * t[1]).sin()
            };
            e += c * s;
        }
        bubble.max(0.0).powf(a) * e.exp()
    });
    for &b in &mesh.boundary_nodes {
        phi.values[b] = 0.0;
    }
    phi
}

fn sample_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MvtAudit {
    pub name: String,
    pub samples: usize,
    pub violations: usize,
    pub tolerance: f64,
    pub min_gamma: f64,
    pub max_gamma: f64,
    /// Largest distance outside `[m, M]` beyond the tolerance.
    pub worst_excess: f64,
    pub verdict: Verdict,
}

/// `tol_mvt = 5 (solver residual + quadrature tolerance)`, scaled to the
/// weight range.
pub fn mvt_tolerance(residual: f64, m: f64, big_m: f64) -> f64 {
    5.0 * (residual + MVT_QUAD_TOL) * m.abs().max(big_m.abs()).max(1.0)
}

/// Mean-value check on `count` random (weight, test function) pairs for the
/// problem `-Delta_p u = h`.
#[allow(clippy::too_many_arguments)]
pub fn mvt_random_audit(
    name: &str,
    mesh: &Mesh,
    p: &ExponentField,
    h: &QuadField,
    m: f64,
    big_m: f64,
    count: usize,
    seed: u64,
    opts: &SolverOptions,
) -> Result<MvtAudit> {
    if !(m <= big_m) {
        return Err(Error::OutOfRange(format!("need m <= M, got [{m}, {big_m}]")));
    }
    check_sign_constant(h)?;
    let sol = plaplace::solve_dirichlet(mesh, p, h, opts)?.into_converged()?;
    let tol = mvt_tolerance(sol.residual, m, big_m);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    let (mut lo, mut hi, mut worst) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
    for _ in 0..count {
        let f = random_weight(mesh, m, big_m, &mut rng);
        let phi = random_test_function(mesh, &mut rng);
        let g = mvt_ratio(mesh, p, &sol.u, h, &f, &phi)?;
        lo = lo.min(g);
        hi = hi.max(g);
        let excess = (m - g).max(g - big_m);
        if excess > tol {
            violations += 1;
            worst = worst.max(excess - tol);
        }
    }
    Ok(MvtAudit {
        name: name.to_string(),
        samples: count,
        violations,
        tolerance: tol,
        min_gamma: lo,
        max_gamma: hi,
        worst_excess: worst,
        verdict: Verdict::from_bool(violations == 0),
    })
}

/// `(min u/d, max u/d)` over interior nodes.
pub fn sandwich_constants(mesh: &Mesh, u: &GridFunction) -> Result<(f64, f64)> {
    mesh.check_nodal(u.len(), "solution nodes")?;
    let mut c0 = f64::INFINITY;
    let mut c1 = f64::NEG_INFINITY;
    for j in mesh.interior_nodes() {
        let r = u.values[j] / mesh.distance[j];
        c0 = c0.min(r);
        c1 = c1.max(r);
    }
    Ok((c0, c1))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SandwichReport {
    pub c0: [f64; 2],
    pub c1: [f64; 2],
    pub c0_refined: Option<[f64; 2]>,
    pub c1_refined: Option<[f64; 2]>,
    pub tolerance: f64,
    pub verdict: Verdict,
}

/// Sandwich constants of a solution pair, compared against a refined run
/// when one is supplied.
pub fn sandwich_audit(
    mesh: &Mesh,
    u: [&GridFunction; 2],
    refined: Option<(&Mesh, [&GridFunction; 2])>,
) -> Result<SandwichReport> {
    let a = [sandwich_constants(mesh, u[0])?, sandwich_constants(mesh, u[1])?];
    let c0 = [a[0].0, a[1].0];
    let c1 = [a[0].1, a[1].1];
    let mut ok = c0.iter().all(|&c| c > 0.0) && c1.iter().all(|c| c.is_finite());
    let (mut c0r, mut c1r) = (None, None);
    if let Some((fm, fu)) = refined {
        let b = [sandwich_constants(fm, fu[0])?, sandwich_constants(fm, fu[1])?];
        let r0 = [b[0].0, b[1].0];
        let r1 = [b[0].1, b[1].1];
        let stable = |x: f64, y: f64| (x - y).abs() <= SANDWICH_TOL * x.abs();
        for i in 0..2 {
            ok &= r0[i] > 0.0 && stable(c0[i], r0[i]) && stable(c1[i], r1[i]);
        }
        c0r = Some(r0);
        c1r = Some(r1);
    }
    Ok(SandwichReport {
        c0,
        c1,
        c0_refined: c0r,
        c1_refined: c1r,
        tolerance: SANDWICH_TOL,
        verdict: Verdict::from_bool(ok),
    })
}
