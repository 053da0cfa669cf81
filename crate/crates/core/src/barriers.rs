//! Problem description, hypothesis validation and the sub/supersolution pair
//! `under_i = xi_{i,delta} / C`, `over_i = C xi_i`.
//!
//! Differential inequalities for barriers are checked in the weak sense:
//! `-Delta_p u <= g` means `\int |grad u|^{p-2} grad u . grad phi <= \int g phi`
//! for every interior nodal hat `phi`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::expspace::ExponentField;
use crate::grid::{GridFunction, Mesh, QuadField};
use crate::plaplace::{self, SolverOptions};

/// Variables visible to nonlinearity expressions, in slot order. `alpha`,
/// `beta`, `gamma` and `gammabar` bind to the component being evaluated.
pub const F_VARS: &[&str] = &[
    "x", "y", "s1", "s2", "g1", "g2", "d", "alpha", "beta", "gamma", "gammabar", "p1", "p2",
];

pub const INEQ_ABS_TOL: f64 = 1e-8;
pub const INEQ_REL_TOL: f64 = 1e-6;
/// Relative slack separating strict from non-strict hypothesis comparisons.
pub const HYP_RTOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub p: [ExponentField; 2],
    pub alpha: [ExponentField; 2],
    pub beta: [ExponentField; 2],
    pub gamma: [ExponentField; 2],
    pub gamma_bar: [ExponentField; 2],
    pub m: [f64; 2],
    pub big_m: [f64; 2],
    pub f: [Expr; 2],
    pub n_dim: usize,
}

/// Coefficients of a [`ProblemSpec`] interpolated to the quadrature points.
#[derive(Debug, Clone)]
pub struct QuadCoeffs {
    pub p: [QuadField; 2],
    pub alpha: [QuadField; 2],
    pub beta: [QuadField; 2],
    pub gamma: [QuadField; 2],
    pub gamma_bar: [QuadField; 2],
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        for i in 0..2 {
            self.p[i].validate_as_p(&format!("p{}", i + 1))?;
            let (m, big) = (self.m[i], self.big_m[i]);
            if !(m > 0.0 && m.is_finite() && big.is_finite()) {
                return Err(Error::OutOfRange(format!("m{} must be finite and > 0, got {m}", i + 1)));
            }
            if m > big {
                return Err(Error::OutOfRange(format!("m{0} = {m} exceeds M{0} = {big}", i + 1)));
            }
        }
        if self.n_dim == 0 {
            return Err(Error::OutOfRange("N must be positive".into()));
        }
        Ok(())
    }

    pub fn quad_coeffs(&self, mesh: &Mesh) -> Result<QuadCoeffs> {
        let q = |e: &[ExponentField; 2]| -> Result<[QuadField; 2]> {
            Ok([e[0].at_quadrature(mesh)?, e[1].at_quadrature(mesh)?])
        };
        Ok(QuadCoeffs {
            p: q(&self.p)?,
            alpha: q(&self.alpha)?,
            beta: q(&self.beta)?,
            gamma: q(&self.gamma)?,
            gamma_bar: q(&self.gamma_bar)?,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn slots(&self, i: usize, c: &QuadCoeffs, q: usize, x: [f64; 2], d: f64, s: [f64; 2], g: [f64; 2]) -> [f64; 13] {
        [
            x[0],
            x[1],
            s[0],
            s[1],
            g[0],
            g[1],
            d,
            c.alpha[i].values[q],
            c.beta[i].values[q],
            c.gamma[i].values[q],
            c.gamma_bar[i].values[q],
            c.p[0].values[q],
            c.p[1].values[q],
        ]
    }

    /// `f_i(x, s1, s2, |g1|, |g2|)` at every quadrature point. `s` are
    /// quadrature values, `g` quadrature gradient magnitudes.
    pub fn eval_rhs(&self, i: usize, mesh: &Mesh, c: &QuadCoeffs, s: [&[f64]; 2], g: [&[f64]; 2]) -> Result<QuadField> {
        let values = (0..mesh.num_qpoints())
            .map(|q| {
                let pt = mesh.qpoint(q);
                let v = self.f[i].eval(&self.slots(i, c, q, pt.x, pt.distance, [s[0][q], s[1][q]], [g[0][q], g[1][q]]));
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::NonFinite(format!("f{} at quadrature point {:?}", i + 1, pt.x)))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(QuadField { values })
    }

    /// Samples the growth envelope
    /// `m s1^a s2^b <= f <= M (s1^a s2^b + |g1|^c + |g2|^cbar)` at random
    /// quadrature points and arguments.
    pub fn check_envelope(&self, mesh: &Mesh, seed: u64, samples: usize) -> Result<()> {
        let c = self.quad_coeffs(mesh)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nq = mesh.num_qpoints();
        let draw_g = |rng: &mut ChaCha8Rng| {
            if rng.gen_bool(0.1) {
                0.0
            } else {
                10f64.powf(rng.gen_range(-4.0..3.0))
            }
        };
        for _ in 0..samples {
            let q = rng.gen_range(0..nq);
            let pt = mesh.qpoint(q);
            let s = [
                10f64.powf(rng.gen_range(-4.0..4.0)),
                10f64.powf(rng.gen_range(-4.0..4.0)),
            ];
            let g = [draw_g(&mut rng), draw_g(&mut rng)];
            for i in 0..2 {
                let v = self.f[i].eval(&self.slots(i, &c, q, pt.x, pt.distance, s, g));
                let prod = s[0].powf(c.alpha[i].values[q]) * s[1].powf(c.beta[i].values[q]);
                let lo = self.m[i] * prod;
                let hi = self.big_m[i] * (prod + g[0].powf(c.gamma[i].values[q]) + g[1].powf(c.gamma_bar[i].values[q]));
                let slack = 1e-10 * hi.abs().max(1e-300);
                if !v.is_finite() || v < lo - slack {
                    return Err(Error::Hypothesis {
                        name: format!("H_f.lower[{}] at x={:?}, s={s:?}, |g|={g:?}", i + 1, pt.x),
                        lhs: lo,
                        rhs: v,
                    });
                }
                if v > hi + slack {
                    return Err(Error::Hypothesis {
                        name: format!("H_f.upper[{}] at x={:?}, s={s:?}, |g|={g:?}", i + 1, pt.x),
                        lhs: v,
                        rhs: hi,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Sign class of an exponent over the whole domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SignClass {
    Nonnegative,
    Negative,
}

pub fn sign_class(e: &ExponentField, name: &str) -> Result<SignClass> {
    if e.p_minus() >= 0.0 {
        Ok(SignClass::Nonnegative)
    } else if e.p_plus() < 0.0 {
        Ok(SignClass::Negative)
    } else {
        Err(Error::InvalidExponent(format!(
            "{name} changes sign on the domain (range [{}, {}]); sign-constant exponents required",
            e.p_minus(),
            e.p_plus()
        )))
    }
}

/// `e^-` for nonnegative, `e^+` for negative exponents.
pub fn signed_extreme(e: &ExponentField, class: SignClass) -> f64 {
    match class {
        SignClass::Nonnegative => e.p_minus(),
        SignClass::Negative => e.p_plus(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regime {
    #[serde(rename = "H_positive")]
    HPositive,
    #[serde(rename = "H_tilde")]
    HTilde,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub lhs: f64,
    pub relation: &'static str,
    pub rhs: f64,
    pub pass: bool,
}

impl Check {
    fn new(name: String, lhs: f64, relation: &'static str, rhs: f64) -> Check {
        // decimal inputs: p = 2.2 gives p - 1 = 1.2000000000000002, so an
        // equality that is exact on paper must not slip through either way
        let tol = HYP_RTOL * lhs.abs().max(rhs.abs()).max(1.0);
        let pass = match relation {
            "<" => lhs < rhs - tol,
            "<=" => lhs <= rhs + tol,
            ">=" => lhs >= rhs - tol,
            _ => unreachable!("unknown relation"),
        };
        Check {
            name,
            lhs,
            relation,
            rhs,
            pass,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisReport {
    pub regime: Regime,
    pub n_dim: usize,
    pub alpha_class: [SignClass; 2],
    pub beta_class: [SignClass; 2],
    pub checks: Vec<Check>,
    /// Recorded deviations from the continuous setting (not failures).
    pub flags: Vec<String>,
}

impl HypothesisReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// First failing check as an error.
    pub fn require(&self) -> Result<()> {
        match self.checks.iter().find(|c| !c.pass) {
            None => Ok(()),
            Some(c) => Err(Error::Hypothesis {
                name: format!("{} ({} {} {})", c.name, c.lhs, c.relation, c.rhs),
                lhs: c.lhs,
                rhs: c.rhs,
            }),
        }
    }
}

pub fn validate_hypotheses(spec: &ProblemSpec, mesh_dim: usize) -> Result<HypothesisReport> {
    spec.validate()?;
    let n = spec.n_dim as f64;
    let mut checks = Vec::new();
    let mut flags = Vec::new();
    if mesh_dim < 2 {
        flags.push(format!(
            "mesh dimension {mesh_dim} < 2: N = {} used in exponent arithmetic",
            spec.n_dim
        ));
    }
    let mut alpha_class = [SignClass::Nonnegative; 2];
    let mut beta_class = [SignClass::Nonnegative; 2];
    let mut sums = [0.0; 2];
    for i in 0..2 {
        let k = i + 1;
        alpha_class[i] = sign_class(&spec.alpha[i], &format!("alpha{k}"))?;
        beta_class[i] = sign_class(&spec.beta[i], &format!("beta{k}"))?;
        let a = signed_extreme(&spec.alpha[i], alpha_class[i]);
        let b = signed_extreme(&spec.beta[i], beta_class[i]);
        sums[i] = a + b;
        let pm = spec.p[i].p_minus();
        if spec.p[i].p_plus() >= n {
            flags.push(format!("p{k}+ = {} >= N = {}", spec.p[i].p_plus(), spec.n_dim));
        }
        checks.push(Check::new(
            format!("H_abg.exponent_sum[{k}]"),
            a.abs() + b.abs(),
            "<",
            pm - 1.0,
        ));
        let gmin = spec.gamma[i].p_minus().min(spec.gamma_bar[i].p_minus());
        let gmax = spec.gamma[i].p_plus().max(spec.gamma_bar[i].p_plus());
        checks.push(Check::new(format!("H_abg.gamma_min[{k}]"), gmin, ">=", 0.0));
        checks.push(Check::new(format!("H_abg.gamma_max[{k}]"), gmax, "<", pm - 1.0));
    }
    let regime = if sums.iter().all(|&s| s > 0.0) {
        Regime::HPositive
    } else if sums.iter().all(|&s| s <= 0.0) {
        Regime::HTilde
    } else {
        return Err(Error::InvalidExponent(format!(
            "components fall in different regimes (alpha+beta extremes {sums:?})"
        )));
    };
    if regime == Regime::HTilde {
        for i in 0..2 {
            let k = i + 1;
            let a = signed_extreme(&spec.alpha[i], alpha_class[i]);
            let b = signed_extreme(&spec.beta[i], beta_class[i]);
            let pm = spec.p[i].p_minus();
            let conj_plus = pm / (pm - 1.0);
            checks.push(Check::new(
                format!("H_tilde.exponent_sum[{k}]"),
                a.abs() + b.abs(),
                "<=",
                1.0 / (n * conj_plus),
            ));
            // pointwise caps gamma_i <= p_1 / (N p_i'), gammabar_i <= p_2 / (N p_i')
            let pi = spec.p[i].values();
            let cap = |e: &ExponentField, pj: &[f64]| {
                e.values()
                    .iter()
                    .zip(pi)
                    .zip(pj)
                    .map(|((&g, &p), &q)| g - q * (p - 1.0) / (n * p))
                    .fold(f64::NEG_INFINITY, f64::max)
            };
            checks.push(Check::new(
                format!("H_tilde.gamma_cap[{k}]"),
                cap(&spec.gamma[i], spec.p[0].values()),
                "<=",
                0.0,
            ));
            checks.push(Check::new(
                format!("H_tilde.gammabar_cap[{k}]"),
                cap(&spec.gamma_bar[i], spec.p[1].values()),
                "<=",
                0.0,
            ));
        }
    }
    Ok(HypothesisReport {
        regime,
        n_dim: spec.n_dim,
        alpha_class,
        beta_class,
        checks,
        flags,
    })
}

/// Torsion data shared by every barrier pair at a given `delta`.
#[derive(Debug, Clone)]
pub struct Torsions {
    pub delta: f64,
    pub xi: [GridFunction; 2],
    pub xi_delta: [GridFunction; 2],
    /// `min xi_{i,delta} / d`.
    pub c0: [f64; 2],
    /// `max xi_i / d`.
    pub c1: [f64; 2],
    /// Discrete C^1 size: max nodal value + max cell gradient norm.
    pub k: [f64; 2],
}

pub fn torsions(mesh: &Mesh, spec: &ProblemSpec, delta: f64, opts: &SolverOptions) -> Result<Torsions> {
    let mut xi: Vec<GridFunction> = Vec::new();
    let mut xd: Vec<GridFunction> = Vec::new();
    let mut c0 = [0.0; 2];
    let mut c1 = [0.0; 2];
    let mut k = [0.0; 2];
    for i in 0..2 {
        if i == 1 && spec.p[1] == spec.p[0] {
            xi.push(xi[0].clone());
            xd.push(xd[0].clone());
            c0[1] = c0[0];
            c1[1] = c1[0];
            k[1] = k[0];
            continue;
        }
        let t = plaplace::torsion(mesh, &spec.p[i], opts)?;
        let td = plaplace::torsion_delta_with(mesh, &spec.p[i], delta, opts, &t)?;
        c0[i] = td.c0;
        c1[i] = mesh
            .interior_nodes()
            .map(|j| t.values[j] / mesh.distance[j])
            .fold(0.0, f64::max);
        let size = |u: &GridFunction| -> Result<f64> { Ok(u.max_abs() + mesh.gradient(u)?.max_norm()) };
        k[i] = size(&t)?.max(size(&td.xi_delta)?);
        xi.push(t);
        xd.push(td.xi_delta);
    }
    let [x0, x1]: [GridFunction; 2] = xi.try_into().expect("two components");
    let [d0, d1]: [GridFunction; 2] = xd.try_into().expect("two components");
    Ok(Torsions {
        delta,
        xi: [x0, x1],
        xi_delta: [d0, d1],
        c0,
        c1,
        k,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BarrierPair {
    #[serde(skip)]
    pub under: [GridFunction; 2],
    #[serde(skip)]
    pub over: [GridFunction; 2],
    #[serde(rename = "C")]
    pub c: f64,
    pub delta: f64,
    #[serde(rename = "R")]
    pub r: f64,
    pub c0_measured: f64,
    pub c1_measured: f64,
}

impl BarrierPair {
    pub fn from_torsions(mesh: &Mesh, t: &Torsions, c: f64) -> Result<BarrierPair> {
        if !(c > 1.0) || !c.is_finite() {
            return Err(Error::OutOfRange(format!("barrier constant C must exceed 1, got {c}")));
        }
        let under = [t.xi_delta[0].scaled(1.0 / c), t.xi_delta[1].scaled(1.0 / c)];
        let over = [t.xi[0].scaled(c), t.xi[1].scaled(c)];
        for i in 0..2 {
            if let Some(j) = (0..mesh.num_nodes()).find(|&j| under[i].values[j] > over[i].values[j]) {
                return Err(Error::Ordering(format!(
                    "under{0} > over{0} at node {j} with C = {c}",
                    i + 1
                )));
            }
        }
        let r = t.k.iter().fold(1.0f64, |a, &b| a.max(b));
        Ok(BarrierPair {
            under,
            over,
            c,
            delta: t.delta,
            r,
            c0_measured: t.c0[0].min(t.c0[1]) / c,
            c1_measured: t.c1[0].max(t.c1[1]) * c,
        })
    }

    /// Smallest nodewise gap `over - under` over interior nodes.
    pub fn ordering_margin(&self, mesh: &Mesh) -> f64 {
        (0..2)
            .flat_map(|i| mesh.interior_nodes().map(move |j| (i, j)))
            .map(|(i, j)| self.over[i].values[j] - self.under[i].values[j])
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn build_barriers(
    mesh: &Mesh,
    spec: &ProblemSpec,
    c: f64,
    delta: f64,
    opts: &SolverOptions,
) -> Result<BarrierPair> {
    let t = torsions(mesh, spec, delta, opts)?;
    BarrierPair::from_torsions(mesh, &t, c)
}

/// Outcome of a family of tested inequalities `small_j <= big_j`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InequalityReport {
    pub name: String,
    pub tested: usize,
    pub violations: usize,
    /// `min_j (big_j - small_j)`.
    pub min_margin: f64,
    /// Worst violation beyond tolerance (0 when none).
    pub worst_excess: f64,
    pub pass: bool,
}

fn compare(name: String, mesh: &Mesh, small: &[f64], big: &[f64]) -> InequalityReport {
    let mut tested = 0;
    let mut violations = 0;
    let mut min_margin = f64::INFINITY;
    let mut worst = 0.0f64;
    for j in mesh.interior_nodes() {
        tested += 1;
        let margin = big[j] - small[j];
        min_margin = min_margin.min(margin);
        let tol = INEQ_ABS_TOL + INEQ_REL_TOL * small[j].abs().max(big[j].abs());
        if !(margin >= -tol) {
            violations += 1;
            worst = worst.max(-margin - tol);
        }
    }
    InequalityReport {
        name,
        tested,
        violations,
        min_margin,
        worst_excess: worst,
        pass: violations == 0,
    }
}

/// Which barrier enters a product factor.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Pick {
    Under,
    Over,
    /// The constant `L^{e^-}` of the H_tilde table.
    Bound(f64),
}

fn factor(mesh: &Mesh, pair: &BarrierPair, comp: usize, pick: Pick, e: &QuadField, e_min: f64) -> Vec<f64> {
    match pick {
        Pick::Bound(l) => vec![l.powf(e_min); mesh.num_qpoints()],
        Pick::Under | Pick::Over => {
            let g = if pick == Pick::Under {
                &pair.under[comp]
            } else {
                &pair.over[comp]
            };
            mesh.interpolate(&g.values)
                .values
                .iter()
                .zip(&e.values)
                .map(|(v, ex)| v.powf(*ex))
                .collect()
        }
    }
}

fn product(
    mesh: &Mesh,
    spec: &ProblemSpec,
    c: &QuadCoeffs,
    pair: &BarrierPair,
    i: usize,
    picks: [Pick; 2],
) -> QuadField {
    let a = factor(mesh, pair, 0, picks[0], &c.alpha[i], spec.alpha[i].p_minus());
    let b = factor(mesh, pair, 1, picks[1], &c.beta[i], spec.beta[i].p_minus());
    QuadField {
        values: a.iter().zip(&b).map(|(x, y)| x * y).collect(),
    }
}

fn classes(spec: &ProblemSpec, i: usize) -> Result<(SignClass, SignClass)> {
    Ok((sign_class(&spec.alpha[i], "alpha")?, sign_class(&spec.beta[i], "beta")?))
}

fn flip(p: Pick) -> Pick {
    match p {
        Pick::Under => Pick::Over,
        Pick::Over => Pick::Under,
        b => b,
    }
}

/// Lower-barrier pick of the subsolution table: the factor that makes the
/// product smallest on the sandwich.
fn lower_pick(class: SignClass) -> Pick {
    match class {
        SignClass::Nonnegative => Pick::Under,
        SignClass::Negative => Pick::Over,
    }
}

/// Weak checks of the subsolution and supersolution inequalities in the
/// H_positive regime: `-Delta under_i <= m_i (table)` and
/// `-Delta over_i >= 2 M_i (RC)^{max(gamma_i^+, gammabar_i^+)} + M_i (table)`.
pub fn check_p2_inequalities(mesh: &Mesh, spec: &ProblemSpec, pair: &BarrierPair) -> Result<Vec<InequalityReport>> {
    let c = spec.quad_coeffs(mesh)?;
    let mut out = Vec::new();
    for i in 0..2 {
        let (ca, cb) = classes(spec, i)?;
        let low = [lower_pick(ca), lower_pick(cb)];
        let high = [flip(low[0]), flip(low[1])];

        let flux_under = plaplace::tested_flux(mesh, &c.p[i], &pair.under[i]);
        let mut g = product(mesh, spec, &c, pair, i, low);
        g.values.iter_mut().for_each(|v| *v *= spec.m[i]);
        let rhs = plaplace::load_vector(mesh, &g);
        out.push(compare(format!("P2.sub[{}]", i + 1), mesh, &flux_under, &rhs));

        let gmax = spec.gamma[i].p_plus().max(spec.gamma_bar[i].p_plus());
        let k = 2.0 * spec.big_m[i] * (pair.r * pair.c).powf(gmax);
        let mut g = product(mesh, spec, &c, pair, i, high);
        g.values.iter_mut().for_each(|v| *v = k + spec.big_m[i] * *v);
        let lhs = plaplace::load_vector(mesh, &g);
        let flux_over = plaplace::tested_flux(mesh, &c.p[i], &pair.over[i]);
        out.push(compare(format!("P2.super[{}]", i + 1), mesh, &lhs, &flux_over));
    }
    Ok(out)
}

/// Weak check of `-Delta under_i <= m_i (table)` in the H_tilde regime, with
/// negative exponents replaced by the constant `L^{e^-}`.
pub fn check_p6_inequalities(
    mesh: &Mesh,
    spec: &ProblemSpec,
    pair: &BarrierPair,
    l: f64,
) -> Result<Vec<InequalityReport>> {
    if !(l > 1.0) {
        return Err(Error::OutOfRange(format!("L must exceed 1, got {l}")));
    }
    let c = spec.quad_coeffs(mesh)?;
    let mut out = Vec::new();
    for i in 0..2 {
        let (ca, cb) = classes(spec, i)?;
        let pick = |cl: SignClass| match cl {
            SignClass::Nonnegative => Pick::Under,
            SignClass::Negative => Pick::Bound(l),
        };
        let flux_under = plaplace::tested_flux(mesh, &c.p[i], &pair.under[i]);
        let mut g = product(mesh, spec, &c, pair, i, [pick(ca), pick(cb)]);
        g.values.iter_mut().for_each(|v| *v *= spec.m[i]);
        let rhs = plaplace::load_vector(mesh, &g);
        out.push(compare(format!("P6.sub[{}]", i + 1), mesh, &flux_under, &rhs));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CalibrationOptions {
    pub c_start: f64,
    pub c_max: f64,
    /// Initial `delta` as a fraction of `max d`.
    pub delta_fraction: f64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions {
            c_start: 2.0,
            c_max: 1048576.0,
            delta_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationStep {
    #[serde(rename = "C")]
    pub c: f64,
    pub delta: f64,
    pub ordered: bool,
    pub min_margin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Calibration {
    pub pair: BarrierPair,
    pub reports: Vec<InequalityReport>,
    /// `L` used for the H_tilde checks.
    pub l: Option<f64>,
    pub trajectory: Vec<CalibrationStep>,
    #[serde(skip)]
    pub torsions: Torsions,
}

/// Callback giving the L-infinity bound of the tilde set for a candidate pair.
pub type LFor<'a> = &'a mut dyn FnMut(&BarrierPair) -> Result<f64>;

/// Doubling search over `C` with `delta` halving on positivity failure.
/// In the H_tilde regime `l_for` supplies `L` for each candidate pair.
pub fn calibrate_c(
    mesh: &Mesh,
    spec: &ProblemSpec,
    report: &HypothesisReport,
    solver: &SolverOptions,
    opts: &CalibrationOptions,
    mut l_for: Option<LFor<'_>>,
) -> Result<Calibration> {
    report.require()?;
    if report.regime == Regime::HTilde && l_for.is_none() {
        return Err(Error::OutOfRange("H_tilde calibration needs an L provider".into()));
    }
    let floor = mesh.h;
    let mut delta = (opts.delta_fraction * mesh.max_distance()).max(floor);
    let mut trajectory = Vec::new();
    let mut last_err = None;
    while delta >= floor {
        let t = match torsions(mesh, spec, delta, solver) {
            Ok(t) => t,
            Err(e @ Error::Positivity(_)) | Err(e @ Error::Ordering(_)) => {
                last_err = Some(e);
                delta *= 0.5;
                continue;
            }
            Err(e) => return Err(e),
        };
        let mut c = opts.c_start;
        while c <= opts.c_max {
            let pair = match BarrierPair::from_torsions(mesh, &t, c) {
                Ok(p) => p,
                Err(Error::Ordering(_)) => {
                    trajectory.push(CalibrationStep {
                        c,
                        delta,
                        ordered: false,
                        min_margin: f64::NEG_INFINITY,
                        pass: false,
                    });
                    c *= 2.0;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let (reports, l) = match report.regime {
                Regime::HPositive => (check_p2_inequalities(mesh, spec, &pair)?, None),
                Regime::HTilde => {
                    let l = (l_for.as_mut().expect("checked above"))(&pair)?;
                    (check_p6_inequalities(mesh, spec, &pair, l)?, Some(l))
                }
            };
            let pass = reports.iter().all(|r| r.pass);
            trajectory.push(CalibrationStep {
                c,
                delta,
                ordered: true,
                min_margin: reports.iter().map(|r| r.min_margin).fold(f64::INFINITY, f64::min),
                pass,
            });
            if pass {
                return Ok(Calibration {
                    pair,
                    reports,
                    l,
                    trajectory,
                    torsions: t,
                });
            }
            c *= 2.0;
        }
        delta *= 0.5;
    }
    Err(Error::Infeasible(format!(
        "no C <= {} with delta >= {floor} passed the barrier checks at n = {}{}",
        opts.c_max,
        mesh.n,
        last_err
            .map(|e| format!(" (last torsion failure: {e})"))
            .unwrap_or_default()
    )))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::grid::DomainSpec;

    pub(crate) fn constant_spec(
        mesh: &Mesh,
        p: [f64; 2],
        a: [f64; 2],
        b: [f64; 2],
        g: [f64; 2],
        m: [f64; 2],
        big: [f64; 2],
    ) -> ProblemSpec {
        let k = |v: f64| ExponentField::constant(mesh, v).unwrap();
        let f = Expr::parse("s1^alpha * s2^beta", F_VARS).unwrap();
        ProblemSpec {
            p: [k(p[0]), k(p[1])],
            alpha: [k(a[0]), k(a[1])],
            beta: [k(b[0]), k(b[1])],
            gamma: [k(g[0]), k(g[1])],
            gamma_bar: [k(g[0]), k(g[1])],
            m,
            big_m: big,
            f: [f.clone(), f],
            n_dim: 2,
        }
    }

    fn unit(n: usize) -> Mesh {
        Mesh::build(DomainSpec::Interval(0.0, 1.0), n).unwrap()
    }

    #[test]
    fn positive_regime_example() {
        let m = unit(8);
        let s = constant_spec(&m, [2.0, 2.0], [-0.2, -0.2], [0.3, 0.3], [0.4, 0.4], [1.0; 2], [1.0; 2]);
        let r = validate_hypotheses(&s, 1).unwrap();
        assert_eq!(r.regime, Regime::HPositive);
        let c = &r.checks[0];
        assert_eq!(c.name, "H_abg.exponent_sum[1]");
        assert!((c.lhs - 0.5).abs() < 1e-15 && c.rhs == 1.0 && c.pass);
        assert!(r.passed());
        assert!(!r.flags.is_empty());
    }

    #[test]
    fn tilde_sum_cap_fails() {
        // p' = 2 (p = 2), N = 2: need |a|+|b| <= 1/4
        let m = unit(8);
        let s = constant_spec(
            &m,
            [2.0, 2.0],
            [-0.3, -0.3],
            [-0.25, -0.25],
            [0.1, 0.1],
            [1.0; 2],
            [1.0; 2],
        );
        let r = validate_hypotheses(&s, 2).unwrap();
        assert_eq!(r.regime, Regime::HTilde);
        let c = r.checks.iter().find(|c| c.name == "H_tilde.exponent_sum[1]").unwrap();
        assert!((c.lhs - 0.55).abs() < 1e-15 && (c.rhs - 0.25).abs() < 1e-15 && !c.pass);
        assert!(r.require().is_err());
    }

    #[test]
    fn tilde_example_passes() {
        let m = unit(8);
        let s = constant_spec(
            &m,
            [3.0, 3.0],
            [-0.05, -0.05],
            [-0.06, -0.06],
            [0.9, 0.9],
            [1.0; 2],
            [1.0; 2],
        );
        let r = validate_hypotheses(&s, 2).unwrap();
        assert_eq!(r.regime, Regime::HTilde);
        assert!(r.passed(), "{:?}", r.checks);
        let c = r.checks.iter().find(|c| c.name == "H_tilde.exponent_sum[1]").unwrap();
        assert!((c.lhs - 0.11).abs() < 1e-15 && (c.rhs - 1.0 / 3.0).abs() < 1e-15);
        let c = r.checks.iter().find(|c| c.name == "H_tilde.gamma_cap[1]").unwrap();
        assert!((c.lhs - (0.9 - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn gamma_at_boundary_rejected() {
        let m = unit(8);
        let s = constant_spec(&m, [2.0, 2.0], [0.3, 0.3], [0.3, 0.3], [1.0, 0.5], [1.0; 2], [1.0; 2]);
        let r = validate_hypotheses(&s, 2).unwrap();
        let c = r.checks.iter().find(|c| c.name == "H_abg.gamma_max[1]").unwrap();
        assert!(!c.pass);
    }

    #[test]
    fn mixed_sign_rejected() {
        let m = unit(8);
        let mut s = constant_spec(&m, [2.0, 2.0], [0.3, 0.3], [0.3, 0.3], [0.1, 0.1], [1.0; 2], [1.0; 2]);
        s.alpha[0] = ExponentField::from_fn(&m, |x| x[0] - 0.5).unwrap();
        assert!(matches!(validate_hypotheses(&s, 1), Err(Error::InvalidExponent(_))));
    }

    #[test]
    fn validation_is_pure() {
        let m = unit(8);
        let s = constant_spec(&m, [2.0, 2.5], [0.3, -0.1], [-0.1, 0.3], [0.5, 0.5], [1.0; 2], [1.0; 2]);
        let a = serde_json::to_string(&validate_hypotheses(&s, 1).unwrap()).unwrap();
        let b = serde_json::to_string(&validate_hypotheses(&s, 1).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn envelope_sampling() {
        let m = unit(16);
        let mut s = constant_spec(&m, [2.0, 2.0], [0.3, 0.3], [0.3, 0.3], [0.5, 0.5], [1.0; 2], [1.0; 2]);
        s.f[0] = Expr::parse("s1^alpha*s2^beta + 0.5*(g1^gamma + g2^gammabar)", F_VARS).unwrap();
        s.check_envelope(&m, 7, 2000).unwrap();
        s.f[1] = Expr::parse("2*s1^alpha*s2^beta + g1^gamma + g2^gammabar", F_VARS).unwrap();
        assert!(matches!(s.check_envelope(&m, 7, 2000), Err(Error::Hypothesis { .. })));
        s.f[1] = Expr::parse("0.5*s1^alpha*s2^beta", F_VARS).unwrap();
        assert!(s.check_envelope(&m, 7, 2000).is_err());
    }

    #[test]
    fn barriers_from_closed_form() {
        let m = unit(640);
        let s = constant_spec(&m, [2.0, 2.0], [0.3, 0.3], [0.3, 0.3], [0.1, 0.1], [1.0; 2], [1.0; 2]);
        let pair = build_barriers(&m, &s, 2.0, 0.1, &SolverOptions::default()).unwrap();
        let strip = |x: f64| {
            let y = x.min(1.0 - x);
            if y <= 0.1 {
                0.3 * y + y * y / 2.0
            } else {
                0.035 + 0.5 * (y - 0.1) - (y * y - 0.01) / 2.0
            }
        };
        for (j, x) in m.nodes.iter().enumerate() {
            assert!((pair.under[0].values[j] - strip(x[0]) / 2.0).abs() < 1e-12);
            assert!((pair.over[1].values[j] - x[0] * (1.0 - x[0])).abs() < 1e-12);
            assert!(pair.under[0].values[j] <= pair.over[0].values[j]);
        }
        for &b in &m.boundary_nodes {
            assert_eq!(pair.under[0].values[b], 0.0);
            assert_eq!(pair.over[0].values[b], 0.0);
        }
        // midpoint ratio 0.115 / 0.5 halved by C
        assert!((pair.c0_measured - 0.115).abs() < 1e-9);
        // R: xi has max 1/8 and slope 1/2 at the wall
        assert!(pair.r == 1.0);
    }

    #[test]
    fn ordering_margin_grows_with_c() {
        let m = unit(256);
        let s = constant_spec(&m, [2.0, 2.5], [0.3, 0.3], [0.3, 0.3], [0.1, 0.1], [1.0; 2], [1.0; 2]);
        let t = torsions(&m, &s, 0.05, &SolverOptions::default()).unwrap();
        let margins: Vec<f64> = [2.0, 4.0, 8.0]
            .iter()
            .map(|&c| BarrierPair::from_torsions(&m, &t, c).unwrap().ordering_margin(&m))
            .collect();
        assert!(margins[0] > 0.0 && margins[0] < margins[1] && margins[1] < margins[2]);
    }

    fn cooperative(m: &Mesh, small: f64) -> ProblemSpec {
        constant_spec(m, [2.0, 2.0], [0.3, 0.3], [0.3, 0.3], [0.1, 0.1], [small; 2], [1.0; 2])
    }

    #[test]
    fn calibration_finds_c() {
        let m = unit(256);
        let s = cooperative(&m, 1.0);
        let r = validate_hypotheses(&s, 1).unwrap();
        let cal = calibrate_c(
            &m,
            &s,
            &r,
            &SolverOptions::default(),
            &CalibrationOptions::default(),
            None,
        )
        .unwrap();
        assert!(cal.pair.c <= 1048576.0);
        assert!(cal.reports.iter().all(|r| r.pass));
        let bad = BarrierPair::from_torsions(&m, &cal.torsions, 1.01).unwrap();
        let reps = check_p2_inequalities(&m, &s, &bad).unwrap();
        assert!(reps.iter().any(|r| !r.pass));

        let weak = cooperative(&m, 0.01);
        let r = validate_hypotheses(&weak, 1).unwrap();
        let cal_weak = calibrate_c(
            &m,
            &weak,
            &r,
            &SolverOptions::default(),
            &CalibrationOptions::default(),
            None,
        )
        .unwrap();
        assert!(cal_weak.pair.c >= cal.pair.c, "{} vs {}", cal_weak.pair.c, cal.pair.c);
    }

    #[test]
    fn p6_with_growing_l() {
        let m = unit(256);
        // nonnegative exponents: L does not enter, and the check is the
        // plain strip-torsion inequality
        let s = constant_spec(&m, [3.0, 3.0], [0.0, 0.0], [0.0, 0.0], [0.5, 0.5], [1.0; 2], [1.0; 2]);
        let pair = build_barriers(&m, &s, 4.0, 0.05, &SolverOptions::default()).unwrap();
        let a = check_p6_inequalities(&m, &s, &pair, 2.0).unwrap();
        assert!(a.iter().all(|r| r.pass));
        // negative exponents: right side m L^{a^- + b^-} shrinks with L
        let s = constant_spec(
            &m,
            [3.0, 3.0],
            [-0.05, -0.05],
            [-0.06, -0.06],
            [0.5, 0.5],
            [1.0; 2],
            [1.0; 2],
        );
        let small = check_p6_inequalities(&m, &s, &pair, 2.0).unwrap()[0].min_margin;
        let big = check_p6_inequalities(&m, &s, &pair, 1e6).unwrap()[0].min_margin;
        assert!(big < small);
    }

    #[test]
    fn infeasible_spec_not_searched() {
        let m = unit(32);
        let s = constant_spec(&m, [2.0, 2.0], [0.3, 0.3], [0.3, 0.3], [1.0, 1.0], [1.0; 2], [1.0; 2]);
        let r = validate_hypotheses(&s, 1).unwrap();
        assert!(matches!(
            calibrate_c(
                &m,
                &s,
                &r,
                &SolverOptions::default(),
                &CalibrationOptions::default(),
                None
            ),
            Err(Error::Hypothesis { .. })
        ));
    }
}
