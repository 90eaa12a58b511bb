use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use diskflow::cli::{self, PRESETS, THREADS_ENV};

#[derive(Parser)]
#[command(name = "diskflow", version, about = "Rigid disk in a 2D viscous fluid: Stokes and Navier-Stokes experiments")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run { config: PathBuf },
    /// List the shipped initial-data presets.
    ListPresets,
    /// Print a closed-form decay exponent: kind is semigroup, gradient, div-forcing, ell-decay or ns-diff.
    PrintExpected {
        kind: String,
        p: f64,
        q: f64,
        #[arg(long, default_value = "long")]
        regime: String,
    },
}

fn init_threads() -> Result<(), String> {
    let Ok(v) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = v.trim().parse().map_err(|_| format!("{THREADS_ENV} must be a positive integer, got `{v}`"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    match args.command {
        Command::ListPresets => {
            for p in PRESETS.iter() {
                let role = match (p.heat, p.field) {
                    (true, true) => "heat+field",
                    (true, false) => "heat",
                    _ => "field",
                };
                println!("{:<18} {:<10} {}", p.name, role, p.summary);
            }
            ExitCode::SUCCESS
        }
        Command::PrintExpected { kind, p, q, regime } => match cli::print_expected(&kind, p, q, &regime) {
            Ok(s) => {
                println!("{s}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        },
        Command::Run { config } => match cli::run(&config) {
            Ok(out) => {
                for (k, v) in &out.summary {
                    println!("{k} = {v}");
                }
                if out.check_requested {
                    for c in &out.checks {
                        println!("check {}: {} ({})", c.name, if c.passed { "pass" } else { "fail" }, c.detail);
                    }
                    if !out.all_passed() {
                        return ExitCode::from(2);
                    }
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        },
    }
}
