use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use pmfem::config::{Mode, SimulationConfig};
use pmfem_cli::{run, Overrides};

/// Periodic finite-element micromagnetics.
#[derive(Debug, Parser)]
#[command(name = "pmfem", version)]
struct Args {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Mesh file, replacing the one named in the config.
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// relax, dynamics, hysteresis, fieldcheck, pgf-selftest or oracle-check.
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    /// Write an operator as triplets, e.g. `--dump-operator laplace L.txt`.
    #[arg(long, num_args = 2, value_names = ["KIND", "PATH"])]
    dump_operator: Option<Vec<String>>,
    /// Write M and the field terms as a legacy-VTK file.
    #[arg(long)]
    dump_fields: Option<PathBuf>,
    /// Shorthand for `--mode oracle-check`.
    #[arg(long, conflicts_with_all = ["mode", "pgf_selftest"])]
    oracle_check: bool,
    /// Shorthand for `--mode pgf-selftest`.
    #[arg(long, conflicts_with = "mode")]
    pgf_selftest: bool,
    #[arg(long)]
    baim_points_per_box: Option<f64>,
    #[arg(long)]
    baim_rer_scale: Option<f64>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    match try_main(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn try_main(args: Args) -> anyhow::Result<()> {
    let mut cfg = match &args.config {
        Some(p) => SimulationConfig::load(p)?,
        None => SimulationConfig::default(),
    };
    let mode = if args.oracle_check {
        Some(Mode::OracleCheck)
    } else if args.pgf_selftest {
        Some(Mode::PgfSelftest)
    } else {
        args.mode
    };
    let overrides = Overrides {
        mesh: args.mesh,
        mode,
        out: args.out,
        threads: args.threads,
        dump_operator: args
            .dump_operator
            .map(|v| (v[0].clone(), PathBuf::from(&v[1]))),
        dump_fields: args.dump_fields,
        points_per_box: args.baim_points_per_box,
        rer_scale: args.baim_rer_scale,
    };
    overrides.apply(&mut cfg);
    let report = run(&cfg)?;
    // a closed pipe on stdout is not a run failure
    let mut out = std::io::stdout().lock();
    for line in &report.lines {
        let _ = writeln!(out, "{line}");
    }
    for o in &report.outputs {
        let _ = writeln!(out, "wrote {}", o.display());
    }
    Ok(())
}
