//! Variable-exponent Lebesgue machinery: modulars, Luxemburg norms and the
//! power relations between them.
//!
//! All integrals are evaluated with the mesh quadrature; field values and
//! exponents are P1-interpolated to the quadrature points. Cellwise
//! quantities (gradient magnitudes) are constant over each cell.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{DomainSpec, GridFunction, Mesh, QuadField, VectorField};

/// Relative tolerance for the modular/norm power bounds.
pub const BOUND_RTOL: f64 = 1e-6;
/// Bisection stops once the bracket's relative width drops below this.
pub const BISECTION_RTOL: f64 = 1e-12;

/// A spatially varying exponent sampled at the mesh nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ExponentField {
    values: Vec<f64>,
    p_minus: f64,
    p_plus: f64,
}

impl ExponentField {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidExponent("empty exponent field".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidExponent(format!("non-finite value at node {i}")));
        }
        let (lo, hi) = extremes(&values);
        Ok(ExponentField {
            values,
            p_minus: lo,
            p_plus: hi,
        })
    }

    pub fn constant(mesh: &Mesh, p: f64) -> Result<Self> {
        Self::new(vec![p; mesh.num_nodes()])
    }

    pub fn from_fn(mesh: &Mesh, f: impl Fn([f64; 2]) -> f64) -> Result<Self> {
        Self::new(mesh.nodes.iter().map(|&x| f(x)).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn p_minus(&self) -> f64 {
        self.p_minus
    }

    pub fn p_plus(&self) -> f64 {
        self.p_plus
    }

    pub fn is_constant(&self) -> bool {
        self.p_minus == self.p_plus
    }

    /// Replaces the nodal values; the extremes are recomputed.
    pub fn set_values(&mut self, values: Vec<f64>) -> Result<()> {
        *self = Self::new(values)?;
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.values.iter().map(|&v| f(v)).collect())
    }

    /// Checks the requirements on a p_i: `1 < p^- <= p^+ < inf`.
    pub fn validate_as_p(&self, name: &str) -> Result<()> {
        if self.p_minus > 1.0 {
            Ok(())
        } else {
            Err(Error::InvalidExponent(format!(
                "{name}: need p^- > 1, got {}",
                self.p_minus
            )))
        }
    }

    /// Hölder conjugate `p' = p / (p - 1)`.
    pub fn conjugate(&self) -> Result<Self> {
        self.validate_as_p("conjugate")?;
        self.map(|p| p / (p - 1.0))
    }

    pub fn at_quadrature(&self, mesh: &Mesh) -> Result<QuadField> {
        mesh.check_nodal(self.values.len(), "exponent nodes")?;
        Ok(mesh.interpolate(&self.values))
    }
}

fn extremes(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
        (lo.min(x), hi.max(x))
    })
}

/// Quadrature samples of `|u|` with their exponents and weights.
#[derive(Debug, Clone)]
pub struct Samples {
    pub values: Vec<f64>,
    pub exps: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Samples {
    pub fn nodal(mesh: &Mesh, u: &GridFunction, p: &ExponentField) -> Result<Self> {
        mesh.check_nodal(u.len(), "field nodes")?;
        u.check_finite("field")?;
        Ok(Samples {
            values: mesh.interpolate(&u.values).values.iter().map(|v| v.abs()).collect(),
            exps: p.at_quadrature(mesh)?.values,
            weights: mesh.qweights().to_vec(),
        })
    }

    /// Cellwise `|g|` for a piecewise-constant vector field.
    pub fn cellwise(mesh: &Mesh, g: &VectorField, p: &ExponentField) -> Result<Self> {
        if g.values.len() != mesh.num_cells() {
            return Err(Error::MeshMismatch {
                what: "cells",
                expected: mesh.num_cells(),
                got: g.values.len(),
            });
        }
        let nq = mesh.nq();
        let norms = g.norms();
        if norms.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("vector field".into()));
        }
        Ok(Samples {
            values: (0..mesh.num_qpoints()).map(|q| norms[q / nq]).collect(),
            exps: p.at_quadrature(mesh)?.values,
            weights: mesh.qweights().to_vec(),
        })
    }

    pub fn quad(mesh: &Mesh, f: &QuadField, p: &ExponentField) -> Result<Self> {
        mesh.check_quad(f.values.len(), "quadrature values")?;
        f.check_finite("quadrature field")?;
        Ok(Samples {
            values: f.values.iter().map(|v| v.abs()).collect(),
            exps: p.at_quadrature(mesh)?.values,
            weights: mesh.qweights().to_vec(),
        })
    }

    fn exp_range(&self) -> (f64, f64) {
        extremes(&self.exps)
    }

    /// `sum w |u/tau|^p`.
    pub fn modular_scaled(&self, tau: f64) -> f64 {
        self.values
            .iter()
            .zip(&self.exps)
            .zip(&self.weights)
            .map(|((&u, &p), &w)| if u == 0.0 { 0.0 } else { w * (u / tau).powf(p) })
            .sum()
    }

    pub fn modular(&self) -> f64 {
        self.modular_scaled(1.0)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Luxemburg norm by bisection on the decreasing map `tau -> rho(u/tau)`.
    /// Valid for any strictly positive exponent.
    pub fn luxemburg(&self) -> Result<f64> {
        if self.is_zero() {
            return Ok(0.0);
        }
        let (pmin, _) = self.exp_range();
        if !(pmin > 0.0) {
            return Err(Error::InvalidExponent(format!(
                "Luxemburg norm needs a positive exponent, got min {pmin}"
            )));
        }
        let umax = self.values.iter().cloned().fold(0.0, f64::max);
        let omega: f64 = self.weights.iter().sum();
        let mut lo = f64::EPSILON;
        let mut hi = umax * omega.powf(1.0 / pmin) + 1.0;
        let mut grow = 0;
        while !(self.modular_scaled(hi) <= 1.0) {
            lo = hi;
            hi *= 2.0;
            grow += 1;
            if grow > 2000 || !hi.is_finite() {
                return Err(Error::Bisection("could not bracket the unit modular".into()));
            }
        }
        let mut iters = 0;
        while hi - lo > BISECTION_RTOL * hi {
            let mid = 0.5 * (lo + hi);
            let r = self.modular_scaled(mid);
            if r.is_nan() {
                return Err(Error::Bisection(format!("modular is NaN at tau = {mid}")));
            }
            if r > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            iters += 1;
            if iters > 400 {
                return Err(Error::Bisection(format!(
                    "no convergence after {iters} halvings (bracket [{lo}, {hi}])"
                )));
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// `rho_p(u) = \int |u|^{p(x)} dx`.
pub fn modular(u: &GridFunction, p: &ExponentField, mesh: &Mesh) -> Result<f64> {
    Ok(Samples::nodal(mesh, u, p)?.modular())
}

pub fn luxemburg_norm(u: &GridFunction, p: &ExponentField, mesh: &Mesh) -> Result<f64> {
    p.validate_as_p("luxemburg exponent")?;
    Samples::nodal(mesh, u, p)?.luxemburg()
}

/// Luxemburg norm of the cellwise magnitude `|g|`.
pub fn luxemburg_norm_cellwise(g: &VectorField, p: &ExponentField, mesh: &Mesh) -> Result<f64> {
    p.validate_as_p("luxemburg exponent")?;
    Samples::cellwise(mesh, g, p)?.luxemburg()
}

/// Classical `L^q` norm of quadrature values, constant `q >= 1`.
pub fn lebesgue_norm(f: &QuadField, q: f64, mesh: &Mesh) -> Result<f64> {
    mesh.check_quad(f.values.len(), "quadrature values")?;
    let s: f64 = f
        .values
        .iter()
        .zip(mesh.qweights())
        .map(|(v, w)| w * v.abs().powf(q))
        .sum();
    if !s.is_finite() {
        return Err(Error::NonFinite("L^q integrand".into()));
    }
    Ok(s.powf(1.0 / q))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NormSide {
    NormGtOne,
    NormLeOne,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModularReport {
    pub modular: f64,
    pub norm: f64,
    pub side: NormSide,
    pub lower_bound: f64,
    pub upper_bound: f64,
}

/// Computes modular and norm and asserts the two-sided power bounds:
/// `|u|^{p+} <= rho <= |u|^{p-}` for norm <= 1, reversed powers for norm > 1.
pub fn modular_norm_bounds(u: &GridFunction, p: &ExponentField, mesh: &Mesh) -> Result<ModularReport> {
    p.validate_as_p("modular exponent")?;
    let s = Samples::nodal(mesh, u, p)?;
    report_from_samples(&s, p.p_minus(), p.p_plus())
}

pub(crate) fn report_from_samples(s: &Samples, pm: f64, pp: f64) -> Result<ModularReport> {
    let modular = s.modular();
    let norm = s.luxemburg()?;
    let (side, lower_bound, upper_bound) = if norm > 1.0 {
        (NormSide::NormGtOne, norm.powf(pm), norm.powf(pp))
    } else {
        (NormSide::NormLeOne, norm.powf(pp), norm.powf(pm))
    };
    let slack = BOUND_RTOL * upper_bound.max(1e-300);
    if modular < lower_bound - slack || modular > upper_bound + slack {
        return Err(Error::BoundViolation(format!(
            "modular {modular} outside [{lower_bound}, {upper_bound}] at norm {norm}"
        )));
    }
    Ok(ModularReport {
        modular,
        norm,
        side,
        lower_bound,
        upper_bound,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerNormReport {
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

/// `|| |u|^{m(x)} ||_{k(x)/m(x)}` bracketed by the powers `m^-`, `m^+` of
/// `||u||_{k(x)}`. The value equals `||u||^{m(x0)}` for some point, so the
/// closed power interval must contain it.
pub fn power_norm_identity(
    u: &GridFunction,
    m: &ExponentField,
    k: &ExponentField,
    mesh: &Mesh,
) -> Result<PowerNormReport> {
    if !(m.p_minus() > 0.0) {
        return Err(Error::InvalidExponent(format!(
            "power exponent needs m^- > 0, got {}",
            m.p_minus()
        )));
    }
    if !(k.p_minus() > 0.0) {
        return Err(Error::InvalidExponent(format!(
            "integrability exponent needs k^- > 0, got {}",
            k.p_minus()
        )));
    }
    let base = Samples::nodal(mesh, u, k)?;
    if !base.modular().is_finite() {
        return Err(Error::NonFinite("modular of u".into()));
    }
    let norm_u = base.luxemburg()?;
    let mq = m.at_quadrature(mesh)?.values;
    let powered = Samples {
        values: base.values.iter().zip(&mq).map(|(v, e)| v.powf(*e)).collect(),
        exps: base.exps.iter().zip(&mq).map(|(kk, mm)| kk / mm).collect(),
        weights: base.weights.clone(),
    };
    let value = powered.luxemburg()?;
    let a = norm_u.powf(m.p_minus());
    let b = norm_u.powf(m.p_plus());
    let (lo, hi) = (a.min(b), a.max(b));
    if value < lo * (1.0 - BOUND_RTOL) || value > hi * (1.0 + BOUND_RTOL) {
        return Err(Error::BoundViolation(format!(
            "power norm {value} outside [{lo}, {hi}]"
        )));
    }
    Ok(PowerNormReport { value, lo, hi })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DistancePowerReport {
    /// Extrapolated value of `\int d^{e(x)}`; infinite when divergent.
    pub value: f64,
    /// The graded sequence has a geometric (convergent) tail.
    pub finite: bool,
    /// `min e > -1` over the boundary nodes.
    pub analytic_finite: bool,
    /// Ratio of the last two level increments.
    pub tail_ratio: f64,
    /// Partial sum excluding the innermost boundary layer.
    pub partial: f64,
}

const GL8: [(f64, f64); 8] = [
    (-0.960_289_856_497_536_2, 0.101_228_536_290_376_26),
    (-0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (-0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (-0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (0.960_289_856_497_536_2, 0.101_228_536_290_376_26),
];

/// 1D composite Gauss rule on `[a, b]` with geometric grading (ratio 1/2)
/// inside the two boundary cells; each point carries its grading level
/// (0 = ungraded). The innermost `[a, a + h 2^-levels]` layers are omitted.
fn graded_rule(a: f64, b: f64, n: usize, levels: usize) -> Vec<(f64, f64, usize)> {
    let h = (b - a) / n as f64;
    let mut breaks: Vec<f64> = (0..=n).map(|i| a + h * i as f64).collect();
    let mid = 0.5 * (a + b);
    if n % 2 == 1 {
        breaks.push(mid);
        breaks.sort_by(|x, y| x.partial_cmp(y).unwrap());
    }
    let mut out = Vec::new();
    let mut push = |l: f64, r: f64, level: usize| {
        let (c, half) = (0.5 * (l + r), 0.5 * (r - l));
        for (t, w) in GL8 {
            out.push((c + half * t, half * w, level));
        }
    };
    for win in breaks.windows(2) {
        let (l, r) = (win[0], win[1]);
        let len = r - l;
        if l == a {
            for k in 1..=levels {
                let s = len * 0.5f64.powi(k as i32);
                push(a + s, a + 2.0 * s, k);
            }
        } else if r == b {
            for k in 1..=levels {
                let s = len * 0.5f64.powi(k as i32);
                push(b - 2.0 * s, b - s, k);
            }
        } else {
            push(l, r, 0);
        }
    }
    out
}

/// `\int d(x)^{e(x)} dx` with boundary-graded quadrature. Each grading level
/// adds one geometric layer toward the boundary; the level increments form a
/// geometric sequence whose ratio decides finiteness (ratio < 1 iff the
/// boundary exponent exceeds -1), and the tail is summed in closed form.
pub fn distance_power_modular(e: &ExponentField, mesh: &Mesh, refinement_levels: usize) -> DistancePowerReport {
    let levels = refinement_levels.max(3);
    let ev = e.values();
    let mut by_level = vec![0.0; levels + 1];
    match mesh.domain {
        DomainSpec::Interval(a, b) => {
            for (x, w, l) in graded_rule(a, b, mesh.n, levels) {
                let pt = [x, 0.0];
                let d = mesh.domain.distance(pt);
                by_level[l] += w * d.powf(mesh.interpolate_at(ev, pt));
            }
        }
        DomainSpec::Rectangle(ax, bx, ay, by) => {
            let rx = graded_rule(ax, bx, mesh.n, levels);
            let ry = graded_rule(ay, by, mesh.n, levels);
            for &(y, wy, ly) in &ry {
                for &(x, wx, lx) in &rx {
                    let pt = [x, y];
                    let d = mesh.domain.distance(pt);
                    by_level[lx.max(ly)] += wx * wy * d.powf(mesh.interpolate_at(ev, pt));
                }
            }
        }
    }
    let analytic_finite = mesh.boundary_nodes.iter().all(|&i| ev[i] > -1.0);

    let partial: f64 = by_level.iter().sum();
    let last = by_level[levels];
    let prev = by_level[levels - 1];
    let prev2 = by_level[levels - 2];
    let ratio = last / prev;
    let ratio_prev = prev / prev2;
    let extrapolate = |sum: f64, inc: f64, r: f64| sum + inc * r / (1.0 - r);
    let finite = ratio.is_finite() && ratio < 1.0 - 1e-9 && ratio_prev < 1.0 - 1e-9 && {
        let e_now = extrapolate(partial, last, ratio);
        let e_prev = extrapolate(partial - last, prev, ratio_prev);
        (e_now - e_prev).abs() <= 1e-6 * e_now.abs().max(1e-300)
    };
    let value = if finite {
        extrapolate(partial, last, ratio)
    } else {
        f64::INFINITY
    };
    DistancePowerReport {
        value,
        finite,
        analytic_finite,
        tail_ratio: ratio,
        partial,
    }
}
