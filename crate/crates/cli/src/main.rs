mod args;
mod config;
mod run;
mod source;

use std::io::Write;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches};
use magic_mps::MagicError;
use serde_json::json;

use args::Cli;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_NOT_CONVERGED: u8 = 4;

fn exit_code(e: &MagicError) -> u8 {
    match e {
        MagicError::NotConverged { .. } => EXIT_NOT_CONVERGED,
        MagicError::TruncationAbort { .. }
        | MagicError::Numerical(_)
        | MagicError::NotNormalized { .. }
        | MagicError::Linalg(_)
        | MagicError::Inconsistent(_) => EXIT_NUMERICAL,
        _ => EXIT_CONFIG,
    }
}

fn kind(e: &MagicError) -> &'static str {
    match e {
        MagicError::ShapeMismatch(_) => "shape_mismatch",
        MagicError::InvalidArgument(_) => "invalid_argument",
        MagicError::NotNormalized { .. } => "not_normalized",
        MagicError::Linalg(_) => "linalg",
        MagicError::TruncationAbort { .. } => "truncation_abort",
        MagicError::Numerical(_) => "numerical",
        MagicError::NotConverged { .. } => "not_converged",
        MagicError::Inconsistent(_) => "inconsistent",
        MagicError::Parse(_) => "parse",
        MagicError::Io(_) => "io",
        MagicError::Json(_) => "json",
    }
}

fn fail(kind: &str, message: String, code: u8) -> ExitCode {
    let e = json!({"error": kind, "message": message, "exit_code": code});
    eprintln!("{e}");
    ExitCode::from(code)
}

fn set_jobs(jobs: Option<usize>) -> Result<(), MagicError> {
    let jobs = match jobs {
        Some(j) => Some(j),
        None => match std::env::var("MAGIC_MPS_JOBS") {
            Ok(s) => Some(s.trim().parse().map_err(|_| MagicError::InvalidArgument(format!("MAGIC_MPS_JOBS='{s}'")))?),
            Err(_) => None,
        },
    };
    if let Some(j) = jobs {
        if j == 0 {
            return Err(MagicError::InvalidArgument("--jobs must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| MagicError::InvalidArgument(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let raw: Vec<String> = std::env::args().collect();
    let argv = match config::expand_config(raw) {
        Ok(a) => a,
        Err(e) => return fail(kind(&e), e.to_string(), EXIT_CONFIG),
    };
    let matches = Cli::command().mut_subcommands(|s| s.args_override_self(true)).try_get_matches_from(argv);
    let cli = match matches.and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            return fail("invalid_argument", e.render().to_string().trim().to_string(), EXIT_CONFIG);
        }
    };
    let out = &cli.command.base().output;
    if let Err(e) = set_jobs(out.jobs) {
        return fail(kind(&e), e.to_string(), EXIT_CONFIG);
    }
    let outcome = match run::execute(&cli.command) {
        Ok(o) => o,
        Err(e) => return fail(kind(&e), e.to_string(), exit_code(&e)),
    };
    let mut text = String::new();
    match &outcome.csv {
        Some(csv) => text.push_str(csv),
        None => {
            for r in &outcome.records {
                text.push_str(&r.to_string());
                text.push('\n');
            }
        }
    }
    let written = match &out.output {
        Some(path) => std::fs::write(path, text.as_bytes()),
        None => std::io::stdout().lock().write_all(text.as_bytes()),
    };
    if let Err(e) = written {
        return fail("io", e.to_string(), EXIT_CONFIG);
    }
    match outcome.failure {
        Some(e) => fail(kind(&e), e.to_string(), exit_code(&e)),
        None => ExitCode::SUCCESS,
    }
}
