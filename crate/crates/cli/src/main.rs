use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use pathhjb_cli::{run, Overrides, Task};

/// Runs one experiment task from a JSON config.
///
/// Exit status: 0 all checks pass, 1 a check failed, 2 config or parameter
/// error, 3 cap exceeded, 4 numeric failure, 5 i/o failure.
#[derive(Parser)]
#[command(name = "pathhjb", version)]
struct Cli {
    task: Task,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides both the table and the lattice caps.
    #[arg(long)]
    cap: Option<u64>,
    /// Sandwich parameters halved along the sweep, e.g. `eps,delta`.
    #[arg(long, value_delimiter = ',')]
    sweep: Option<Vec<String>>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let over = Overrides { seed: cli.seed, out: cli.out, cap: cli.cap, sweep: cli.sweep };
    match run(cli.task, &cli.config, &over) {
        Ok(rep) => {
            for c in &rep.checks {
                println!(
                    "{:<28} {}  value {:.3e}  bound {:.3e}  ({})",
                    c.name,
                    if c.pass { "PASS" } else { "FAIL" },
                    c.value,
                    c.bound,
                    c.file
                );
            }
            for (k, v) in &rep.summary {
                println!("{k} = {v}");
            }
            println!("{} files in {} ({:.2}s)", rep.files.len(), rep.out_dir.display(), rep.wall_time_s);
            if rep.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("pathhjb: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
