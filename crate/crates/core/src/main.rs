use clap::Parser;

use taen_core::cli::{self, Cli};

fn main() {
    let cli = Cli::parse();
    let threads = if cli.deterministic {
        Some(1)
    } else {
        std::env::var("TAEN_THREADS").ok().and_then(|v| v.parse::<usize>().ok())
    };
    if let Some(n) = threads {
        // Only fails if a pool already exists, which cannot happen this early.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    if let Err(e) = cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(cli::exit_code(&e));
    }
}
