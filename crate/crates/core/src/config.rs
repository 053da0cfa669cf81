//! Run configuration: JSON schema, validation and materialization on a mesh.
//!
//! Coefficients are numbers or closed-form expressions in `x` (and `y`);
//! nonlinearities are expressions over [`F_VARS`](crate::barriers::F_VARS).
//! Every error names the offending key.

use serde::{Deserialize, Serialize};

use crate::barriers::{validate_hypotheses, HypothesisReport, ProblemSpec, F_VARS};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::expspace::ExponentField;
use crate::grid::{DomainSpec, Mesh};
use crate::plaplace::SolverOptions;
use crate::sysfix::IterationOptions;
use crate::verify::AUDIT_SCALES;

pub const CONFIG_SCHEMA: u32 = 1;
pub const MIN_RESOLUTION: usize = 16;

/// Variables visible to coefficient expressions.
pub const COEFF_VARS: &[&str] = &["x", "y"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coefficient {
    Number(f64),
    Formula(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecConfig {
    pub p: [Coefficient; 2],
    pub alpha: [Coefficient; 2],
    pub beta: [Coefficient; 2],
    pub gamma: [Coefficient; 2],
    pub gamma_bar: [Coefficient; 2],
    pub m: [f64; 2],
    #[serde(rename = "M")]
    pub big_m: [f64; 2],
    pub f: [String; 2],
    /// Exponent `N` of the `L^N` norms; defaults to `max(dim, 2)`.
    #[serde(default)]
    pub n_dim: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BarrierConfig {
    /// Fixed barrier constant; calibrated when absent.
    #[serde(rename = "C")]
    pub c: Option<f64>,
    pub delta: Option<f64>,
    pub c_start: f64,
    pub c_max: f64,
    pub delta_fraction: f64,
}

impl Default for BarrierConfig {
    fn default() -> Self {
        let d = crate::barriers::CalibrationOptions::default();
        BarrierConfig {
            c: None,
            delta: None,
            c_start: d.c_start,
            c_max: d.c_max,
            delta_fraction: d.delta_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub scales: Vec<f64>,
    /// Re-solve at `2n` for the sandwich stability check.
    pub refine: bool,
    pub invariance_samples: usize,
    pub envelope_samples: usize,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            scales: AUDIT_SCALES.to_vec(),
            refine: false,
            invariance_samples: 0,
            envelope_samples: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub fields_csv: String,
    pub certificate_json: String,
    pub trace_json: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            fields_csv: "fields.csv".into(),
            certificate_json: "certificate.json".into(),
            trace_json: "trace.json".into(),
        }
    }
}

/// Known exact solution components, as expressions in `x` (and `y`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceConfig {
    pub u1: Option<String>,
    pub u2: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub domain: DomainSpec,
    pub resolution: usize,
    pub spec: SpecConfig,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub iteration: IterationOptions,
    #[serde(default)]
    pub barriers: BarrierConfig,
    #[serde(default)]
    pub audits: AuditConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub reference: ReferenceConfig,
}

fn config_err(path: impl Into<String>, msg: impl ToString) -> Error {
    Error::Config {
        path: path.into(),
        msg: msg.to_string(),
    }
}

/// Schema-level parse of a JSON value; errors carry the path to the key.
pub fn from_value(value: serde_json::Value) -> Result<RunConfig> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        config_err(if path == "." { "$".to_string() } else { path }, e.into_inner())
    })
}

/// Parses and fully validates a config: schema, ranges, expressions,
/// growth envelope and the structural hypotheses.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| config_err("$", e))?;
    let cfg = from_value(value)?;
    prepare(&cfg)?;
    Ok(cfg)
}

/// A validated config materialized on its mesh.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub mesh: Mesh,
    pub spec: ProblemSpec,
    pub hypotheses: HypothesisReport,
}

fn coefficient(mesh: &Mesh, c: &Coefficient, path: &str) -> Result<ExponentField> {
    let values = match c {
        Coefficient::Number(v) => vec![*v; mesh.num_nodes()],
        Coefficient::Formula(text) => {
            let e = Expr::parse(text, COEFF_VARS).map_err(|e| config_err(path, e))?;
            mesh.nodes.iter().map(|x| e.eval(&[x[0], x[1]])).collect()
        }
    };
    ExponentField::new(values).map_err(|e| config_err(path, e))
}

fn pair(mesh: &Mesh, c: &[Coefficient; 2], key: &str) -> Result<[ExponentField; 2]> {
    Ok([
        coefficient(mesh, &c[0], &format!("spec.{key}[0]"))?,
        coefficient(mesh, &c[1], &format!("spec.{key}[1]"))?,
    ])
}

impl RunConfig {
    /// Checks that need no mesh.
    pub fn check_ranges(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA {
            return Err(config_err(
                "schema_version",
                format!("unsupported version {} (expected {CONFIG_SCHEMA})", self.schema_version),
            ));
        }
        if self.resolution < MIN_RESOLUTION {
            return Err(config_err(
                "resolution",
                format!("{} is below the minimum {MIN_RESOLUTION}", self.resolution),
            ));
        }
        self.solver.validate().map_err(|e| config_err("solver", e))?;
        self.iteration.validate().map_err(|e| config_err("iteration", e))?;
        let b = &self.barriers;
        if let Some(c) = b.c {
            if !(c > 1.0 && c.is_finite()) {
                return Err(config_err("barriers.C", format!("must be finite and > 1, got {c}")));
            }
        }
        if let Some(d) = b.delta {
            if !(d > 0.0 && d.is_finite()) {
                return Err(config_err("barriers.delta", format!("must be positive, got {d}")));
            }
        }
        if !(b.c_start > 1.0 && b.c_max >= b.c_start && b.c_max.is_finite()) {
            return Err(config_err("barriers", "need 1 < c_start <= c_max < inf"));
        }
        if !(b.delta_fraction > 0.0 && b.delta_fraction < 1.0) {
            return Err(config_err("barriers.delta_fraction", "must lie in (0,1)"));
        }
        if self.audits.scales.is_empty() || self.audits.scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(config_err("audits.scales", "need a non-empty list of positive scales"));
        }
        if self.spec.n_dim == Some(0) {
            return Err(config_err("spec.n_dim", "must be positive"));
        }
        for (k, o) in [
            ("outputs.fields_csv", &self.outputs.fields_csv),
            ("outputs.certificate_json", &self.outputs.certificate_json),
            ("outputs.trace_json", &self.outputs.trace_json),
        ] {
            if o.is_empty() {
                return Err(config_err(k, "empty path"));
            }
        }
        Ok(())
    }

    pub fn n_dim(&self) -> usize {
        self.spec.n_dim.unwrap_or(self.domain.dim().max(2))
    }

    pub fn reference(&self) -> Result<[Option<Expr>; 2]> {
        let parse = |t: &Option<String>, path: &str| -> Result<Option<Expr>> {
            t.as_ref()
                .map(|t| Expr::parse(t, COEFF_VARS).map_err(|e| config_err(path, e)))
                .transpose()
        };
        Ok([
            parse(&self.reference.u1, "reference.u1")?,
            parse(&self.reference.u2, "reference.u2")?,
        ])
    }
}

/// Builds the mesh, materializes coefficients and runs the envelope and
/// hypothesis checks. No solve happens here.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    cfg.check_ranges()?;
    let mesh = Mesh::build(cfg.domain, cfg.resolution).map_err(|e| config_err("domain", e))?;
    let s = &cfg.spec;
    let f = [
        Expr::parse(&s.f[0], F_VARS).map_err(|e| config_err("spec.f[0]", e))?,
        Expr::parse(&s.f[1], F_VARS).map_err(|e| config_err("spec.f[1]", e))?,
    ];
    let spec = ProblemSpec {
        p: pair(&mesh, &s.p, "p")?,
        alpha: pair(&mesh, &s.alpha, "alpha")?,
        beta: pair(&mesh, &s.beta, "beta")?,
        gamma: pair(&mesh, &s.gamma, "gamma")?,
        gamma_bar: pair(&mesh, &s.gamma_bar, "gamma_bar")?,
        m: s.m,
        big_m: s.big_m,
        f,
        n_dim: cfg.n_dim(),
    };
    let hypotheses = validate_hypotheses(&spec, mesh.dim).map_err(|e| match e {
        Error::InvalidExponent(m) | Error::OutOfRange(m) => config_err("spec", m),
        e => e,
    })?;
    hypotheses.require()?;
    spec.check_envelope(&mesh, cfg.seed, cfg.audits.envelope_samples)?;
    cfg.reference()?;
    Ok(Prepared { mesh, spec, hypotheses })
}

/// Sets the scalar at `path` (`a.b[0]` or `a.b.0`) in a JSON config value.
/// Missing object keys are created; the schema check happens afterwards.
pub fn set_path(value: &mut serde_json::Value, path: &str, new: serde_json::Value) -> Result<()> {
    let normalized = path.replace('[', ".").replace(']', "");
    let parts: Vec<&str> = normalized.split('.').filter(|s| !s.is_empty()).collect();
    if parts.is_empty() {
        return Err(config_err(path, "empty parameter path"));
    }
    let mut cur = value;
    for part in &parts {
        cur = match cur {
            serde_json::Value::Object(map) => map.entry(part.to_string()).or_insert(serde_json::Value::Null),
            serde_json::Value::Array(items) => part
                .parse::<usize>()
                .ok()
                .and_then(|i| items.get_mut(i))
                .ok_or_else(|| config_err(path, format!("bad index '{part}'")))?,
            serde_json::Value::Null => {
                *cur = serde_json::Value::Object(Default::default());
                match cur {
                    serde_json::Value::Object(map) => map.entry(part.to_string()).or_insert(serde_json::Value::Null),
                    _ => unreachable!(),
                }
            }
            _ => return Err(config_err(path, format!("'{part}' is below a scalar"))),
        };
    }
    if cur.is_object() || cur.is_array() {
        return Err(config_err(path, "parameter must address a scalar"));
    }
    *cur = new;
    Ok(())
}
