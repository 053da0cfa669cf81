//! The machine-readable report of a completed run.

use serde::Serialize;

use super::{
    gradient_estimate_audit, linfty_estimate_audit, mvt_ratio, mvt_tolerance, sandwich_audit, SandwichReport, Verdict,
    SPREAD_TOL,
};
use crate::barriers::{BarrierPair, HypothesisReport, InequalityReport, ProblemSpec, Regime};
use crate::error::Result;
use crate::grid::{DomainSpec, GridFunction, Mesh, QuadField};
use crate::plaplace::{self, SolverOptions};
use crate::sysfix::{
    coupled_residual, freeze_rhs, membership_check, InvarianceReport, IterationReport, KSet, Membership,
};

pub const CERTIFICATE_SCHEMA: u32 = 1;

/// Default scales for the estimate audits.
pub const AUDIT_SCALES: [f64; 6] = [1e-2, 1e-1, 1.0, 10.0, 100.0, 1e3];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeshInfo {
    pub dim: usize,
    pub n: usize,
    pub h: f64,
    pub nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualAudit {
    pub coupled: [f64; 2],
    pub max: f64,
    pub tolerance: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditEntry {
    pub name: String,
    /// `(scale, ratio)` pairs.
    pub ratios: Vec<(f64, f64)>,
    pub measured: f64,
    pub spread: f64,
    pub tolerance: f64,
    pub verdict: Verdict,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MvtCheck {
    pub name: String,
    pub component: usize,
    pub gamma: f64,
    pub m: f64,
    #[serde(rename = "M")]
    pub big_m: f64,
    pub tolerance: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationSummary {
    pub converged: bool,
    pub iters: usize,
    pub final_residual: f64,
    pub membership_trace_all: bool,
    pub gradient_cap_trace_all: bool,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tolerances {
    pub residual: f64,
    pub mvt_factor: f64,
    pub spread: f64,
    pub sandwich: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Certificate {
    pub schema_version: u32,
    pub mesh: MeshInfo,
    pub regime: Regime,
    pub hypothesis_report: HypothesisReport,
    pub barriers: BarrierPair,
    /// Weak sub/supersolution inequalities of the barrier pair.
    pub barrier_checks: Vec<InequalityReport>,
    pub k_set: KSet,
    pub iteration: IterationSummary,
    pub residuals: ResidualAudit,
    pub membership: Membership,
    pub sandwich: SandwichReport,
    pub audits: Vec<AuditEntry>,
    pub mvt_checks: Vec<MvtCheck>,
    pub invariance: Option<InvarianceReport>,
    pub flags: Vec<String>,
    pub tolerances: Tolerances,
    pub all_pass: bool,
}

impl Certificate {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("certificate serializes");
        s.push('\n');
        s
    }
}

/// Everything a certificate is computed from.
pub struct CertificateInputs<'a> {
    pub mesh: &'a Mesh,
    pub spec: &'a ProblemSpec,
    pub hypotheses: &'a HypothesisReport,
    pub solution: &'a [GridFunction; 2],
    pub pair: &'a BarrierPair,
    pub barrier_checks: &'a [InequalityReport],
    pub k: &'a KSet,
    pub iteration: &'a IterationReport,
    pub solver: &'a SolverOptions,
    pub tol_residual: f64,
    pub refined: Option<(&'a Mesh, [&'a GridFunction; 2])>,
    pub scales: &'a [f64],
    pub invariance: Option<InvarianceReport>,
}

fn entry(a: super::EstimateAudit) -> AuditEntry {
    AuditEntry {
        name: a.name,
        ratios: a.scale_family,
        measured: a.measured_ratio,
        spread: a.spread,
        tolerance: a.tolerance,
        verdict: a.verdict,
        notes: a.notes,
    }
}

/// Deterministic Lipschitz weights with range `[1, 2]`.
fn spot_weights(mesh: &Mesh) -> Vec<(&'static str, QuadField)> {
    let dmax = mesh.max_distance();
    let lo = match mesh.domain {
        DomainSpec::Interval(a, b) => (a, b),
        DomainSpec::Rectangle(ax, bx, _, _) => (ax, bx),
    };
    vec![
        ("1+x", mesh.sample(|q| 1.0 + (q.x[0] - lo.0) / (lo.1 - lo.0))),
        ("2-d/dmax", mesh.sample(|q| 2.0 - q.distance / dmax)),
    ]
}

/// Residual, membership, sandwich, estimate and mean-value audits of an
/// accepted pair.
pub fn solution_certificate(inp: &CertificateInputs) -> Result<Certificate> {
    let mesh = inp.mesh;
    let spec = inp.spec;
    let coeffs = spec.quad_coeffs(mesh)?;
    let coupled = coupled_residual(mesh, spec, &coeffs, inp.solution, inp.pair)?;
    let max = coupled[0].max(coupled[1]);
    let residuals = ResidualAudit {
        coupled,
        max,
        tolerance: inp.tol_residual,
        verdict: Verdict::from_bool(max <= inp.tol_residual),
    };
    let membership = membership_check(mesh, spec, inp.solution, inp.pair, inp.k)?;
    let sandwich = sandwich_audit(mesh, [&inp.solution[0], &inp.solution[1]], inp.refined)?;

    let h = freeze_rhs(mesh, spec, &coeffs, inp.solution, inp.pair)?;
    let mut audits = Vec::new();
    let mut mvt_checks = Vec::new();
    for i in 0..2 {
        let mut g = gradient_estimate_audit(mesh, &spec.p[i], &h[i], inp.scales, inp.solver)?;
        g.name = format!("gradient_estimate[{}]", i + 1);
        audits.push(entry(g));
        let mut l = linfty_estimate_audit(mesh, &spec.p[i], &h[i], inp.scales, spec.n_dim, inp.solver)?;
        l.name = format!("linfty_estimate[{}]", i + 1);
        audits.push(entry(l));

        // the component equation with its right-hand side frozen at the solution
        let sol = plaplace::solve_dirichlet(mesh, &spec.p[i], &h[i], inp.solver)?.into_converged()?;
        let tol = mvt_tolerance(sol.residual, 1.0, 2.0);
        for (name, f) in spot_weights(mesh) {
            let gamma = mvt_ratio(mesh, &spec.p[i], &sol.u, &h[i], &f, &sol.u)?;
            let ok = gamma >= 1.0 - tol && gamma <= 2.0 + tol;
            mvt_checks.push(MvtCheck {
                name: format!("mvt[{}] f={name} phi=u", i + 1),
                component: i + 1,
                gamma,
                m: 1.0,
                big_m: 2.0,
                tolerance: tol,
                verdict: Verdict::from_bool(ok),
            });
        }
    }

    let it = inp.iteration;
    let iteration = IterationSummary {
        converged: it.converged,
        iters: it.iters,
        final_residual: it.final_residual(),
        membership_trace_all: it.membership_trace.iter().all(|b| *b),
        gradient_cap_trace_all: it.gradient_cap_trace.iter().all(|b| *b),
        note: it.note.clone(),
    };
    let flags = inp.hypotheses.flags.clone();
    let all_pass = iteration.converged
        && residuals.verdict.passed()
        && membership.member
        && inp.barrier_checks.iter().all(|r| r.pass)
        && sandwich.verdict.passed()
        && audits.iter().all(|a| a.verdict.passed())
        && mvt_checks.iter().all(|c| c.verdict.passed())
        && inp.invariance.as_ref().is_none_or(|r| r.pass);
    Ok(Certificate {
        schema_version: CERTIFICATE_SCHEMA,
        mesh: MeshInfo {
            dim: mesh.dim,
            n: mesh.n,
            h: mesh.h,
            nodes: mesh.num_nodes(),
        },
        regime: inp.hypotheses.regime,
        hypothesis_report: inp.hypotheses.clone(),
        barriers: inp.pair.clone(),
        barrier_checks: inp.barrier_checks.to_vec(),
        k_set: *inp.k,
        iteration,
        residuals,
        membership,
        sandwich,
        audits,
        mvt_checks,
        invariance: inp.invariance.clone(),
        flags,
        tolerances: Tolerances {
            residual: inp.tol_residual,
            mvt_factor: 5.0,
            spread: SPREAD_TOL,
            sandwich: super::SANDWICH_TOL,
        },
        all_pass,
    })
}
