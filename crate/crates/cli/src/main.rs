use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use normflow::config::load_config;
use normflow::experiment::{self, DEFAULT_OUT, EXIT_FAILURE, OUT_ENV};
use normflow::geometry::{Geometry, GeometryKind};
use normflow::io;
use normflow::oracles::{self, ShootStatus};

/// Experiments with norm-preserving non-local heat flows.
#[derive(Debug, Parser)]
#[command(name = "normflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment config. Exit 0 ok, 2 blow-up, 1 failure.
    Run {
        config: PathBuf,
        /// Output root; the experiment writes into `<out>/<name>` unless the
        /// config sets `output_dir`.
        #[arg(long, env = OUT_ENV, default_value = DEFAULT_OUT)]
        out: PathBuf,
    },
    /// Run every `*.toml` config in a directory and write `suite_report.json`.
    Suite {
        dir: PathBuf,
        #[arg(long, env = OUT_ENV, default_value = DEFAULT_OUT)]
        out: PathBuf,
    },
    /// Shoot the radial Lane–Emden profile with a zero at radius R.
    Shoot {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        p: f64,
        #[arg(long = "R", alias = "radius")]
        radius: f64,
        #[arg(long, default_value_t = oracles::SHOOT_TOL)]
        tol: f64,
        /// Write the `r,u` profile here (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Smallest nonzero eigenvalue of the discrete Laplacian.
    Eig {
        #[arg(long)]
        kind: String,
        /// Lengths (or the radius), comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        extents: Vec<f64>,
        #[arg(long)]
        resolution: usize,
        /// Ambient dimension; defaults to the geometry's own.
        #[arg(long)]
        dimension: Option<usize>,
        /// Write the eigenvector in the field CSV format.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn fail(message: impl std::fmt::Display) -> ExitCode {
    eprintln!("normflow: {message}");
    ExitCode::from(EXIT_FAILURE as u8)
}

fn code(c: i32) -> ExitCode {
    ExitCode::from(c as u8)
}

fn write_or_print(out: Option<&Path>, text: &str) -> normflow::Result<()> {
    match out {
        Some(path) => io::write_text(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, out } => {
            let cfg = match load_config(&config) {
                Ok(cfg) => cfg,
                Err(e) => return fail(format!("{}: {e}", config.display())),
            };
            let dir = experiment::output_dir(&cfg, Some(&out));
            match experiment::run_experiment(&cfg, &dir) {
                Ok(res) => {
                    let s = &res.summary;
                    let status = s.status.map_or("error".to_string(), |st| st.to_string());
                    println!("{}: {status} at t = {:.6} (λ = {:.10}), outputs in {}", s.name, s.final_time, s.final_lambda, dir.display());
                    for (name, verdict) in &s.checks {
                        println!("  {name}: {verdict}");
                    }
                    if let Some(err) = &s.error {
                        eprintln!("normflow: {err}");
                    }
                    code(s.exit_code)
                }
                Err(e) => fail(e),
            }
        }
        Command::Suite { dir, out } => match experiment::run_suite(&dir, &out) {
            Ok(report) => {
                for e in &report.experiments {
                    let status = e.status.map_or("error".to_string(), |s| s.to_string());
                    let mark = if e.as_expected { "ok" } else { "UNEXPECTED" };
                    println!("{mark:>10}  {}  {status}", e.name.as_deref().unwrap_or(&e.config));
                    if let Some(err) = &e.error {
                        println!("            {err}");
                    }
                }
                println!("{} of {} as expected; report in {}", report.experiments.len() - report.unexpected, report.experiments.len(), out.join("suite_report.json").display());
                code(report.exit_code())
            }
            Err(e) => fail(e),
        },
        Command::Shoot { n, p, radius, tol, out } => {
            let profile = match oracles::lane_emden_shoot(n, p, radius, tol) {
                Ok(profile) => profile,
                Err(e) => return fail(e),
            };
            eprintln!("{} (v(0) = {:.12})", profile.status, profile.central_value());
            if profile.status == ShootStatus::StayedPositive {
                eprintln!("no zero before r = {}; the profile is not a Dirichlet steady state", oracles::SHOOT_HORIZON);
            }
            // the integrator's last step overshoots the zero; end the table on it
            let end = profile.extent();
            let keep = profile.radii().iter().take_while(|&&r| r < end).count();
            let mut radii = profile.radii()[..keep].to_vec();
            let mut values = profile.values()[..keep].to_vec();
            if let ShootStatus::HitZeroAt(r) = profile.status {
                radii.push(r);
                values.push(0.0);
            }
            let csv = io::columns_to_csv(["r", "u"], &radii, &values);
            match csv.and_then(|text| write_or_print(out.as_deref(), &text)) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => fail(e),
            }
        }
        Command::Eig { kind, extents, resolution, dimension, out } => {
            let Some(kind) = GeometryKind::from_name(&kind) else {
                return fail(format!("unknown geometry kind `{kind}`"));
            };
            let dimension = dimension.unwrap_or(kind.grid_dim());
            let result = Geometry::build(kind, &extents, dimension, resolution).and_then(|geom| {
                let (mu, phi) = oracles::principal_eigenpair(&geom)?;
                println!("{mu:.15e}");
                match &out {
                    Some(path) => io::write_text(path, &io::field_to_csv(&geom, &phi)?),
                    None => Ok(()),
                }
            });
            match result {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => fail(e),
            }
        }
    }
}
