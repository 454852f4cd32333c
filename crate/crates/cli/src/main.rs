mod args;
mod commands;
mod error;
mod manifest;
mod svg;

use clap::Parser;

use crate::args::{Cli, Command};
use crate::error::CliError;

/// Worker threads are capped by PREFIQS_THREADS; the cap never changes any
/// output bytes, only how the per-sample work is spread.
fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("PREFIQS_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw.parse().map_err(|_| {
        CliError::Usage(format!("PREFIQS_THREADS must be a positive integer, got {raw:?}"))
    })?;
    if threads == 0 {
        return Err(CliError::Usage(
            "PREFIQS_THREADS must be a positive integer".into(),
        ));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Domain(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => commands::cmd_synth(a),
        Command::Prune(a) => commands::cmd_prune(a),
        Command::Score(a) => commands::cmd_score(a),
        Command::Jvp(a) => commands::cmd_jvp(a),
        Command::Edc(a) => commands::cmd_edc(a),
        Command::Verify(a) => commands::cmd_verify(a),
        Command::Embed(a) => commands::cmd_embed(a),
        Command::Pairs(a) => commands::cmd_pairs(a),
    }
}

fn main() {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| run(cli));
    if let Err(e) = result {
        eprintln!("error: {}", e.message());
        std::process::exit(e.exit_code());
    }
}
