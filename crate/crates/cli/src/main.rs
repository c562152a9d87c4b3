mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::Cli;

/// A failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

pub const BAD_ARGS: u8 = 2;
pub const MALFORMED_INPUT: u8 = 3;
pub const BAD_CONFIG: u8 = 4;
pub const RUNTIME: u8 = 5;

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

impl From<octlat::Error> for Failure {
    fn from(e: octlat::Error) -> Self {
        use octlat::Error as E;
        let code = match e.root() {
            E::Config(_) | E::Indivisible { .. } => BAD_CONFIG,
            E::InvalidParameter(_) => BAD_ARGS,
            E::BadMagic { .. }
            | E::Version(_)
            | E::Truncated { .. }
            | E::LabelOutOfRange { .. }
            | E::Malformed(_)
            | E::UnknownParam(_)
            | E::Json(_)
            | E::Io(_)
            | E::CoordinateRange { .. }
            | E::DecisionLength { .. }
            | E::OverlappingCubes { .. }
            | E::IncompleteSiblings { .. } => MALFORMED_INPUT,
            _ => RUNTIME,
        };
        Failure::new(code, e.to_string())
    }
}

fn init_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("OCTLAT_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::new(BAD_ARGS, format!("OCTLAT_THREADS: expected a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::new(RUNTIME, format!("OCTLAT_THREADS: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_threads().and_then(|()| commands::run(cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
