use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use varpx::config::{from_value, prepare, RunConfig};
use varpx::pipeline::{self, RunOptions, EXIT_CONFIG, EXIT_OK, EXIT_UNCERTIFIED};
use varpx::Error;

#[derive(Parser)]
#[command(name = "varpx", version, about = "Solve and certify p(x)-Laplacian systems")]
struct Cli {
    /// Override the config's mesh resolution.
    #[arg(long, global = true)]
    mesh_n: Option<usize>,
    /// Directory for output files (relative output paths resolve here).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the full pipeline and write fields, trace and certificate.
    Solve { config: PathBuf },
    /// Run once per value of a scalar config parameter; prints a CSV summary.
    Sweep {
        config: PathBuf,
        /// Dotted path to the parameter, e.g. `resolution` or `spec.m[0]`.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
    },
    /// Run the pipeline and print one certificate section.
    Audit {
        config: PathBuf,
        #[arg(long)]
        only: String,
        /// Sample count for the invariance audit.
        #[arg(long, default_value_t = 200)]
        samples: usize,
    },
}

fn load(path: &PathBuf, mesh_n: Option<usize>) -> Result<serde_json::Value, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Config {
        path: "$".into(),
        msg: e.to_string(),
    })?;
    if let Some(n) = mesh_n {
        varpx::config::set_path(&mut value, "resolution", n.into())?;
    }
    Ok(value)
}

fn config(path: &PathBuf, mesh_n: Option<usize>) -> Result<RunConfig, Error> {
    let cfg = from_value(load(path, mesh_n)?)?;
    prepare(&cfg)?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<i32, Error> {
    let opts = RunOptions {
        out_dir: cli.out_dir.clone(),
        ..RunOptions::default()
    };
    match &cli.cmd {
        Cmd::Solve { config: path } => {
            let cfg = config(path, cli.mesh_n)?;
            let out = pipeline::run(&cfg, &opts)?;
            let status = match out.exit_code {
                EXIT_OK => "certified",
                EXIT_UNCERTIFIED if out.converged() => "converged, audits failed",
                _ => "not converged",
            };
            eprintln!(
                "{status}: iterations {}, residual {:e}",
                out.trace.iteration.as_ref().map_or(0, |r| r.iters),
                out.certificate.as_ref().map_or(f64::NAN, |c| c.residuals.max)
            );
            if let Some(e) = &out.trace.error {
                eprintln!("note: {e}");
            }
            Ok(out.exit_code)
        }
        Cmd::Sweep {
            config: path,
            param,
            values,
        } => {
            let base = load(path, cli.mesh_n)?;
            let rows = pipeline::sweep(&base, param, values, &opts);
            let csv = pipeline::sweep_csv(&rows)?;
            match &cli.out_dir {
                Some(d) => {
                    std::fs::create_dir_all(d)?;
                    std::fs::write(d.join("sweep.csv"), &csv)?;
                }
                None => print!("{csv}"),
            }
            Ok(EXIT_OK)
        }
        Cmd::Audit {
            config: path,
            only,
            samples,
        } => {
            let cfg = config(path, cli.mesh_n)?;
            if !pipeline::AUDIT_NAMES.contains(&only.as_str()) {
                return Err(Error::Config {
                    path: "--only".into(),
                    msg: format!("unknown audit '{only}' (known: {})", pipeline::AUDIT_NAMES.join(", ")),
                });
            }
            let run_opts = RunOptions {
                no_artifacts: true,
                invariance_samples: (only == "invariance").then_some(*samples),
                ..opts
            };
            let out = pipeline::run(&cfg, &run_opts)?;
            let Some(cert) = &out.certificate else {
                eprintln!(
                    "no solution: {}",
                    out.trace.error.as_deref().unwrap_or("unknown failure")
                );
                return Ok(EXIT_UNCERTIFIED);
            };
            let (section, pass) = pipeline::audit_section(cert, only)?;
            println!("{}", serde_json::to_string_pretty(&section).expect("json value"));
            Ok(if pass { EXIT_OK } else { EXIT_UNCERTIFIED })
        }
    }
}

fn main() -> ExitCode {
    if let Some(n) = std::env::var("VARPX_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        // only fails if a pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG as u8)
        }
    }
}
