//! Run orchestration: mesh, hypotheses, barriers, fixed-point iteration,
//! audits and artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::barriers::{
    self, calibrate_c, check_p2_inequalities, check_p6_inequalities, BarrierPair, CalibrationOptions, CalibrationStep,
    InequalityReport, LFor, Regime,
};
use crate::config::{prepare, set_path, Prepared, RunConfig};
use crate::error::{Error, Result};
use crate::grid::{GridFunction, Mesh};
use crate::sysfix::{
    fixed_point_iterate, invariance_audit, measure_constants, tilde_bounds, InvarianceReport, IterationReport, KSet,
    MeasuredConstants, TildeBounds,
};
use crate::verify::{solution_certificate, Certificate, CertificateInputs, Verdict};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_UNCERTIFIED: i32 = 2;

pub const TRACE_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Directory that relative output paths are resolved against.
    pub out_dir: Option<PathBuf>,
    /// Skip writing files (sweeps).
    pub no_artifacts: bool,
    /// Overrides `audits.invariance_samples`.
    pub invariance_samples: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BarrierTrace {
    pub pair: BarrierPair,
    pub calibrated: bool,
    pub trajectory: Vec<CalibrationStep>,
    pub inequalities: Vec<InequalityReport>,
    pub l: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Trace {
    pub schema_version: u32,
    pub regime: Regime,
    pub barriers: Option<BarrierTrace>,
    pub tilde_bounds: Option<TildeBounds>,
    pub iteration: Option<IterationReport>,
    pub refined_iteration: Option<IterationReport>,
    pub error: Option<String>,
}

impl Trace {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("trace serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub mesh: Mesh,
    pub trace: Trace,
    pub certificate: Option<Certificate>,
    pub solution: Option<[GridFunction; 2]>,
    pub pair: Option<BarrierPair>,
    /// Max nodal error against `reference` expressions, when given.
    pub reference_error: Option<f64>,
}

impl RunOutcome {
    pub fn converged(&self) -> bool {
        self.trace.iteration.as_ref().is_some_and(|r| r.converged)
    }
}

struct Solved {
    pair: BarrierPair,
    k: KSet,
    barrier_trace: BarrierTrace,
    tilde: Option<TildeBounds>,
    z: [GridFunction; 2],
    report: IterationReport,
}

fn constants(prep: &Prepared, cfg: &RunConfig) -> Result<[MeasuredConstants; 2]> {
    let (mesh, spec) = (&prep.mesh, &prep.spec);
    let c1 = measure_constants(mesh, &spec.p[0], spec.n_dim, &cfg.solver)?;
    let c2 = if spec.p[1] == spec.p[0] {
        c1
    } else {
        measure_constants(mesh, &spec.p[1], spec.n_dim, &cfg.solver)?
    };
    Ok([c1, c2])
}

/// Barriers (fixed or calibrated), the iteration set, and the fixed point.
fn solve(prep: &Prepared, cfg: &RunConfig) -> Result<Solved> {
    let (mesh, spec) = (&prep.mesh, &prep.spec);
    let tilde = prep.hypotheses.regime == Regime::HTilde;
    let consts = if tilde { Some(constants(prep, cfg)?) } else { None };
    let mut l_for = |pair: &BarrierPair| -> Result<f64> {
        Ok(tilde_bounds(mesh, spec, pair, consts.as_ref().expect("tilde regime"))?.l)
    };
    let barrier_trace = match cfg.barriers.c {
        Some(c) => {
            let delta = cfg
                .barriers
                .delta
                .unwrap_or(cfg.barriers.delta_fraction * mesh.max_distance());
            let pair = barriers::build_barriers(mesh, spec, c, delta, &cfg.solver)?;
            let (inequalities, l) = if tilde {
                let l = l_for(&pair)?;
                (check_p6_inequalities(mesh, spec, &pair, l)?, Some(l))
            } else {
                (check_p2_inequalities(mesh, spec, &pair)?, None)
            };
            BarrierTrace {
                pair,
                calibrated: false,
                trajectory: Vec::new(),
                inequalities,
                l,
            }
        }
        None => {
            let opts = CalibrationOptions {
                c_start: cfg.barriers.c_start,
                c_max: cfg.barriers.c_max,
                delta_fraction: cfg.barriers.delta_fraction,
            };
            let lf: Option<LFor> = if tilde { Some(&mut l_for) } else { None };
            let cal = calibrate_c(mesh, spec, &prep.hypotheses, &cfg.solver, &opts, lf)?;
            BarrierTrace {
                pair: cal.pair,
                calibrated: true,
                trajectory: cal.trajectory,
                inequalities: cal.reports,
                l: cal.l,
            }
        }
    };
    let pair = barrier_trace.pair.clone();
    let (k, tb) = match &consts {
        Some(c) => {
            let b = tilde_bounds(mesh, spec, &pair, c)?;
            (
                KSet::Tilde {
                    l: b.l,
                    l_tilde: b.l_tilde,
                },
                Some(b),
            )
        }
        None => (
            KSet::Positive {
                gradient_cap: pair.c * pair.r,
            },
            None,
        ),
    };
    let fp = fixed_point_iterate(mesh, spec, &pair, &k, pair.under.clone(), &cfg.solver, &cfg.iteration)?;
    Ok(Solved {
        pair,
        k,
        barrier_trace,
        tilde: tb,
        z: fp.z,
        report: fp.report,
    })
}

fn resolve(out_dir: &Option<PathBuf>, p: &str) -> PathBuf {
    match out_dir {
        Some(d) if Path::new(p).is_relative() => d.join(p),
        _ => PathBuf::from(p),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::Io(format!("{}: {e}", parent.display())))?;
        }
    }
    fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn write_fields(path: &Path, mesh: &Mesh, z: &[GridFunction; 2], pair: &BarrierPair) -> Result<()> {
    let mut buf = Vec::new();
    mesh.write_csv(
        &mut buf,
        &[
            ("u1", &z[0].values),
            ("u2", &z[1].values),
            ("d", &mesh.distance),
            ("under1", &pair.under[0].values),
            ("over1", &pair.over[0].values),
            ("under2", &pair.under[1].values),
            ("over2", &pair.over[1].values),
        ],
    )?;
    write_file(path, &String::from_utf8(buf).expect("csv is utf-8"))
}

fn reference_error(cfg: &RunConfig, mesh: &Mesh, z: &[GridFunction; 2]) -> Result<Option<f64>> {
    let refs = cfg.reference()?;
    let mut err: Option<f64> = None;
    for i in 0..2 {
        if let Some(e) = &refs[i] {
            let m = mesh
                .nodes
                .iter()
                .zip(&z[i].values)
                .map(|(x, u)| (u - e.eval(&[x[0], x[1]])).abs())
                .fold(0.0, f64::max);
            err = Some(err.unwrap_or(0.0).max(m));
        }
    }
    Ok(err)
}

/// Runs the full pipeline. `Err` means a config or hypothesis failure (exit
/// 1, nothing solved); every other outcome is reported through the exit code
/// with artifacts written.
pub fn run(cfg: &RunConfig, opts: &RunOptions) -> Result<RunOutcome> {
    let prep = prepare(cfg)?;
    let mut trace = Trace {
        schema_version: TRACE_SCHEMA,
        regime: prep.hypotheses.regime,
        barriers: None,
        tilde_bounds: None,
        iteration: None,
        refined_iteration: None,
        error: None,
    };
    let trace_path = resolve(&opts.out_dir, &cfg.outputs.trace_json);
    let solved = match solve(&prep, cfg) {
        Ok(s) => s,
        Err(e) => {
            trace.error = Some(e.to_string());
            if !opts.no_artifacts {
                write_file(&trace_path, &trace.to_json())?;
            }
            return Ok(RunOutcome {
                exit_code: EXIT_UNCERTIFIED,
                mesh: prep.mesh,
                trace,
                certificate: None,
                solution: None,
                pair: None,
                reference_error: None,
            });
        }
    };
    trace.barriers = Some(solved.barrier_trace.clone());
    trace.tilde_bounds = solved.tilde.clone();
    trace.iteration = Some(solved.report.clone());

    let mesh = &prep.mesh;
    let mut refine_failed = false;
    let refined = if cfg.audits.refine && solved.report.converged {
        let mut fine = cfg.clone();
        fine.resolution = cfg.resolution * 2;
        let fp = prepare(&fine).and_then(|p| solve(&p, &fine).map(|s| (p, s)));
        match fp {
            Ok((p, s)) => {
                trace.refined_iteration = Some(s.report.clone());
                if s.report.converged {
                    Some((p.mesh, s.z))
                } else {
                    refine_failed = true;
                    None
                }
            }
            Err(e) => {
                trace.error = Some(format!("refined run: {e}"));
                refine_failed = true;
                None
            }
        }
    } else {
        None
    };

    let samples = opts.invariance_samples.unwrap_or(cfg.audits.invariance_samples);
    let invariance = if samples > 0 {
        match invariance_audit(
            mesh,
            &prep.spec,
            &solved.pair,
            &solved.k,
            samples,
            cfg.seed,
            &cfg.solver,
        ) {
            Ok(r) => Some(r),
            Err(e) => {
                trace.error = Some(format!("invariance audit: {e}"));
                Some(InvarianceReport {
                    samples: 0,
                    violations: 0,
                    sandwich_violations: 0,
                    gradient_violations: 0,
                    worst_violation: 0.0,
                    pass: false,
                })
            }
        }
    } else {
        None
    };
    let mut certificate = solution_certificate(&CertificateInputs {
        mesh,
        spec: &prep.spec,
        hypotheses: &prep.hypotheses,
        solution: &solved.z,
        pair: &solved.pair,
        barrier_checks: &solved.barrier_trace.inequalities,
        k: &solved.k,
        iteration: &solved.report,
        solver: &cfg.solver,
        tol_residual: cfg.iteration.tol_residual,
        refined: refined.as_ref().map(|(m, z)| (m, [&z[0], &z[1]])),
        scales: &cfg.audits.scales,
        invariance,
    })?;
    if refine_failed {
        certificate.sandwich.verdict = Verdict::Fail;
        certificate.all_pass = false;
    }

    if !opts.no_artifacts {
        write_fields(
            &resolve(&opts.out_dir, &cfg.outputs.fields_csv),
            mesh,
            &solved.z,
            &solved.pair,
        )?;
        write_file(&trace_path, &trace.to_json())?;
        write_file(
            &resolve(&opts.out_dir, &cfg.outputs.certificate_json),
            &certificate.to_json(),
        )?;
    }
    let exit_code = if certificate.all_pass {
        EXIT_OK
    } else {
        EXIT_UNCERTIFIED
    };
    Ok(RunOutcome {
        exit_code,
        reference_error: reference_error(cfg, mesh, &solved.z)?,
        mesh: prep.mesh,
        trace,
        certificate: Some(certificate),
        solution: Some(solved.z),
        pair: Some(solved.pair),
    })
}

/// Names accepted by [`audit_section`].
pub const AUDIT_NAMES: &[&str] = &[
    "residuals",
    "membership",
    "sandwich",
    "audits",
    "mvt_checks",
    "invariance",
    "hypothesis_report",
    "barriers",
    "barrier_checks",
];

/// One section of the certificate as JSON, with its pass/fail status.
pub fn audit_section(cert: &Certificate, name: &str) -> Result<(serde_json::Value, bool)> {
    let value = serde_json::to_value(cert).expect("certificate serializes");
    let section = value.get(name).cloned().ok_or_else(|| Error::Config {
        path: "--only".into(),
        msg: format!("unknown audit '{name}' (known: {})", AUDIT_NAMES.join(", ")),
    })?;
    let pass = match name {
        "residuals" => cert.residuals.verdict.passed(),
        "membership" => cert.membership.member,
        "sandwich" => cert.sandwich.verdict.passed(),
        "audits" => cert.audits.iter().all(|a| a.verdict.passed()),
        "mvt_checks" => cert.mvt_checks.iter().all(|c| c.verdict.passed()),
        "invariance" => cert.invariance.as_ref().is_some_and(|r| r.pass),
        "hypothesis_report" => cert.hypothesis_report.passed(),
        "barrier_checks" => cert.barrier_checks.iter().all(|r| r.pass),
        _ => cert.all_pass,
    };
    Ok((section, pass))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: String,
    pub converged: bool,
    pub iters: Option<usize>,
    pub c0: Option<f64>,
    pub c1: Option<f64>,
    pub residual: Option<f64>,
    pub membership: Option<bool>,
    /// Whether the sub/supersolution inequalities held for the barriers used.
    pub barrier_checks: Option<bool>,
    pub error: Option<f64>,
    pub exit_code: i32,
    pub message: String,
}

fn sweep_row(base: &serde_json::Value, param: &str, raw: &str, opts: &RunOptions) -> SweepRow {
    let mut row = SweepRow {
        value: raw.to_string(),
        converged: false,
        iters: None,
        c0: None,
        c1: None,
        residual: None,
        membership: None,
        barrier_checks: None,
        error: None,
        exit_code: EXIT_CONFIG,
        message: String::new(),
    };
    let new: serde_json::Value = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.into()));
    let mut value = base.clone();
    let outcome = set_path(&mut value, param, new)
        .and_then(|_| crate::config::from_value(value))
        .and_then(|cfg| run(&cfg, opts));
    match outcome {
        Ok(o) => {
            row.exit_code = o.exit_code;
            row.converged = o.converged();
            row.error = o.reference_error;
            if let Some(b) = &o.trace.barriers {
                row.barrier_checks = Some(b.inequalities.iter().all(|r| r.pass));
            }
            if let Some(it) = &o.trace.iteration {
                row.iters = Some(it.iters);
                row.membership = Some(it.membership_trace.iter().all(|b| *b));
            }
            if let Some(c) = &o.certificate {
                row.c0 = Some(c.sandwich.c0[0].min(c.sandwich.c0[1]));
                row.c1 = Some(c.sandwich.c1[0].max(c.sandwich.c1[1]));
                row.residual = Some(c.residuals.max);
            }
            row.message = o.trace.error.unwrap_or_default();
        }
        Err(e) => row.message = e.to_string(),
    }
    row
}

/// Runs the pipeline once per value (rows in parallel). Row failures are
/// recorded, never fatal.
pub fn sweep(base: &serde_json::Value, param: &str, values: &[String], opts: &RunOptions) -> Vec<SweepRow> {
    let opts = RunOptions {
        no_artifacts: true,
        ..opts.clone()
    };
    values.par_iter().map(|v| sweep_row(base, param, v, &opts)).collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "value",
        "converged",
        "iters",
        "c0",
        "c1",
        "residual",
        "membership",
        "barrier_checks",
        "error",
        "exit_code",
        "message",
    ])
    .map_err(|e| Error::Io(e.to_string()))?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.value.clone(),
            r.converged.to_string(),
            r.iters.map(|i| i.to_string()).unwrap_or_default(),
            opt(r.c0),
            opt(r.c1),
            opt(r.residual),
            r.membership.map(|b| b.to_string()).unwrap_or_default(),
            r.barrier_checks.map(|b| b.to_string()).unwrap_or_default(),
            opt(r.error),
            r.exit_code.to_string(),
            r.message.clone(),
        ])
        .map_err(|e| Error::Io(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::from_value;

    fn trivial() -> serde_json::Value {
        serde_json::json!({
            "schema_version": 1,
            "domain": {"interval": [0, 1]},
            "resolution": 64,
            "spec": {
                "p": [2, 2], "alpha": [0, 0], "beta": [0, 0],
                "gamma": [0, 0], "gamma_bar": [0, 0],
                "m": [1, 1], "M": [1, 1], "f": ["1", "1"]
            },
            "iteration": {"theta": 1.0}
        })
    }

    #[test]
    fn trivial_run_certifies_without_artifacts() {
        let cfg = from_value(trivial()).unwrap();
        let o = run(
            &cfg,
            &RunOptions {
                no_artifacts: true,
                ..RunOptions::default()
            },
        )
        .unwrap();
        assert_eq!(o.exit_code, EXIT_OK);
        let c = o.certificate.unwrap();
        assert!(c.residuals.max <= 1e-10);
        assert_eq!(c.regime, Regime::HTilde);
    }

    #[test]
    fn empty_sweep_is_empty() {
        let rows = sweep(&trivial(), "resolution", &[], &RunOptions::default());
        assert!(rows.is_empty());
        assert_eq!(sweep_csv(&rows).unwrap().lines().count(), 1);
    }

    #[test]
    fn sweep_rows_fail_independently() {
        let vals = vec!["8".to_string(), "32".to_string()];
        let rows = sweep(&trivial(), "resolution", &vals, &RunOptions::default());
        assert_eq!(rows[0].exit_code, EXIT_CONFIG);
        assert!(rows[0].message.contains("resolution"));
        assert_eq!(rows[1].exit_code, EXIT_OK);
        assert!(rows[1].converged);
    }

    #[test]
    fn unknown_audit_name() {
        let cfg = from_value(trivial()).unwrap();
        let o = run(
            &cfg,
            &RunOptions {
                no_artifacts: true,
                ..RunOptions::default()
            },
        )
        .unwrap();
        let c = o.certificate.unwrap();
        assert!(audit_section(&c, "residuals").unwrap().1);
        assert!(audit_section(&c, "bogus").is_err());
    }
}
