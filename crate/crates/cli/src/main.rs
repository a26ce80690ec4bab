//! `sknn`: generate data, train TestNet, run verification suites, check
//! gradients and inspect checkpoints.

mod args;
mod commands;
mod fmt;

use std::process::ExitCode;

use clap::Parser;

use args::Cli;

/// Everything a subcommand can fail with, mapped onto exit codes.
#[derive(Debug)]
pub enum Failure {
    /// A check ran and did not pass.
    Check(String),
    /// Bad flags or inputs.
    Usage(String),
    Runtime(sknn::Error),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Check(_) | Failure::Runtime(_) => 1,
            Failure::Usage(_) => 2,
        }
    }
}

impl From<sknn::Error> for Failure {
    fn from(e: sknn::Error) -> Self {
        use sknn::Error as E;
        match e {
            E::InvalidArgument(_) | E::Geometry(_) | E::Shape { .. } | E::Mode { .. } => {
                Failure::Usage(e.to_string())
            }
            other => Failure::Runtime(other),
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Check(m) | Failure::Usage(m) => f.write_str(m),
            Failure::Runtime(e) => write!(f, "{e}"),
        }
    }
}

pub type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
