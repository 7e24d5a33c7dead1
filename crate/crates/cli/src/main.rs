use std::path::PathBuf;
use std::process::ExitCode;

use cascade_cli::{dispatch, exit_status, load_config, Command, Options};
use clap::Parser;

/// Steady Stokes flow through one period of a profile cascade.
///
/// Exit status: 0 when the command passes its checks, 1 when a check fails,
/// 2 on any error.
#[derive(Debug, Parser)]
#[command(name = "cascade", version)]
struct Cli {
    command: Command,
    /// Run configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `[output] directory`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads. The solver is sequential, so every value gives
    /// byte-identical output; 1 is the documented deterministic mode.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    threads: u32,
    /// Refinement level of the base mesh.
    #[arg(long, default_value_t = 0)]
    level: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = load_config(&cli.config)
        .and_then(|cfg| dispatch(cli.command, &cfg, &Options { level: cli.level, out: cli.out.clone() }));
    match &result {
        Ok(report) => {
            for line in &report.lines {
                println!("{line}");
            }
            for path in &report.artifacts {
                println!("wrote {}", path.display());
            }
            println!("{} {}", cli.command.name(), if report.passed { "passed" } else { "FAILED" });
        }
        Err(e) => eprintln!("error: {e}"),
    }
    ExitCode::from(exit_status(&result))
}
