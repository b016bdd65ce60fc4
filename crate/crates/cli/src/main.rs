//! `adsm` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error,
//! 3 internal error.

mod args;
mod commands;
mod config;
mod error;
mod output;

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use serde_json::json;

use args::{Cli, Command, LogLevel};
use commands::Context;
use config::RunConfig;
use error::CliError;

fn run(cli: Cli) -> Result<(), CliError> {
    let config = match &cli.global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let level = cli
        .global
        .log_level
        .or(config.log_level)
        .unwrap_or(LogLevel::Info);
    env_logger::Builder::new()
        .filter_level(level.filter())
        .init();

    if let Some(workers) = cli.global.workers.or(config.workers) {
        if workers == 0 {
            return Err(CliError::Usage("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    let ctx = Context {
        seed: cli.global.seed.or(config.seed).unwrap_or(0),
        config,
        config_path: cli.global.config.clone(),
    };
    match &cli.command {
        Command::Extract(a) => commands::extract(&ctx, a),
        Command::TrainVocab(a) => commands::train_vocab(&ctx, a),
        Command::Embed(a) => commands::embed(&ctx, a),
        Command::Autotag(a) => commands::autotag_cmd(&ctx, a),
        Command::Evaluate(a) => commands::evaluate(&ctx, a),
        Command::Sweep(a) => commands::sweep_cmd(&ctx, a),
        Command::ValidateConfig(a) => commands::validate_config(&ctx, a),
        Command::Demo(a) => commands::demo_cmd(&ctx, a),
    }
}

fn report(err: &CliError, json_errors: bool) {
    if json_errors {
        let obj = json!({
            "error": {
                "kind": err.kind(),
                "exit_code": err.exit_code(),
                "message": err.to_string(),
            }
        });
        eprintln!("{obj}");
    } else {
        eprintln!("error: {err}");
    }
}

fn main() -> ExitCode {
    let json_errors = std::env::args().any(|a| a == "--json-errors");
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            if json_errors {
                report(&CliError::Usage(e.to_string().trim_end().to_owned()), true);
            } else {
                let _ = e.print();
            }
            return ExitCode::from(1);
        }
    };
    if json_errors {
        // the JSON report replaces the default panic message
        panic::set_hook(Box::new(|_| {}));
    }
    let outcome = panic::catch_unwind(AssertUnwindSafe(|| run(cli))).unwrap_or_else(|payload| {
        let msg = payload
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(CliError::Internal(msg))
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e, json_errors);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
