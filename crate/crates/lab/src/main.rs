use clap::Parser;
use std::path::PathBuf;
use std::process::ExitCode;
use yamabe_lab::runner::{threads_from_env, EXIT_ERROR};
use yamabe_lab::{exit_code, parse_config, run_scenario, Command, RunOptions};

/// Zero-scalar-curvature metrics and Yamabe flow on radial manifolds.
#[derive(Debug, Parser)]
#[command(name = "yamabe-lab", version)]
struct Cli {
    /// geometry, poisson, flow, stability, decay, riccati or report
    command: Command,
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: ./out/<scenario name>)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for the randomized checks; recorded in the manifest.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let scenario = match parse_config(&cli.config, Some(cli.command)) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{}: {e}", cli.config.display());
            return ExitCode::from(EXIT_ERROR as u8);
        }
    };
    let out = cli.out.unwrap_or_else(|| PathBuf::from("out").join(&scenario.name));
    let opts = RunOptions { out, seed: cli.seed, threads: threads_from_env() };
    let result = run_scenario(&scenario, &opts);
    match &result {
        Ok(s) if s.passed() => println!("{} {}: pass ({})", scenario.command, scenario.name, opts.out.display()),
        Ok(s) => {
            for f in &s.failures {
                eprintln!("assertion failed: {f}");
            }
            println!("{} {}: FAIL ({})", scenario.command, scenario.name, opts.out.display());
        }
        Err(e) => eprintln!("error: {e}"),
    }
    ExitCode::from(exit_code(&result) as u8)
}
