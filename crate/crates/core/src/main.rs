use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use fblgp::cli::{execute, parse_cases, parse_config, validate, RunConfig};

/// Simulate the adaptive feedback-linearization cases and write traces plus a
/// metrics report.
#[derive(Parser, Debug)]
#[command(name = "fblgp", version)]
struct Args {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated subset of cases, e.g. `a,b,e`.
    #[arg(long)]
    cases: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Integration step in seconds.
    #[arg(long)]
    h: Option<f64>,
    /// Train the GP on the opposite-sign residual.
    #[arg(long)]
    paper_literal_gp_sign: bool,
}

fn load(args: &Args) -> fblgp::Result<RunConfig> {
    let mut rc = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| fblgp::Error::io(path, e))?;
            parse_config(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(c) = &args.cases {
        rc.cases = parse_cases(c)?;
    }
    if let Some(o) = &args.out {
        rc.out_dir = o.clone();
    }
    if let Some(s) = args.seed {
        rc.seed = s;
    }
    if let Some(h) = args.h {
        rc.sim.h = h;
    }
    if args.paper_literal_gp_sign {
        rc.sim.paper_literal_gp_sign = true;
    }
    validate(&rc)?;
    Ok(rc)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let rc = match load(&args) {
        Ok(rc) => rc,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match execute(&rc) {
        Ok(report) => {
            print!("{}", report.table);
            println!("wrote {}", rc.out_dir.display());
            if report.all_passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
