use std::time::Duration;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "minigo", about = "Go-subset interpreter and test runner")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Type-check every package under a directory.
    Build {
        dir: String,
    },
    /// Run tests. Selector: dir[:TestFunc[/case]]
    Test {
        selector: String,
        /// Repeat the tests this many times.
        #[arg(long, default_value_t = 1)]
        count: u32,
        /// Enable scheduling perturbation (mimics the race detector).
        #[arg(long, default_value_t = false)]
        race: bool,
        /// Per-run wall-clock timeout in seconds.
        #[arg(long, default_value_t = 300)]
        timeout: u64,
        /// RNG seed; falls back to MINIGO_SEED, then 0.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() {
    let cli = Cli::parse();
    let code = match cli.cmd {
        Cmd::Build { dir } => minigo::run_build(&dir),
        Cmd::Test { selector, count, race, timeout, seed } => {
            let seed = seed
                .or_else(|| std::env::var("MINIGO_SEED").ok().and_then(|s| s.parse().ok()))
                .unwrap_or(0);
            minigo::run_tests(&minigo::RunOptions {
                selector,
                count,
                race,
                timeout: Duration::from_secs(timeout),
                seed,
            })
        }
    };
    std::process::exit(code);
}
