//! `structconv` command-line tool.
//!
//! Exit codes: 0 on success, 1 for usage and validation errors, 2 for
//! numerical failures (a singular basis, a failed verification property or
//! paths that disagree in `bench`).

mod args;
mod bench;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

/// Why a command stopped.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Library(structconv::Error),
    Numerical(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Library(structconv::Error::SingularBasis(_)) => 2,
            Failure::Library(_) => 1,
            Failure::Numerical(_) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(msg) => write!(f, "usage error: {msg}"),
            Failure::Library(e) => write!(f, "{e}"),
            Failure::Numerical(msg) => write!(f, "numerical failure: {msg}"),
        }
    }
}

impl From<structconv::Error> for Failure {
    fn from(e: structconv::Error) -> Self {
        Failure::Library(e)
    }
}

pub type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version go to stdout with status 0; the rest are usage errors
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    let result = match &cli.command {
        Command::Basis(a) => commands::basis(&cli.global, a),
        Command::Conv(a) => commands::conv(&cli.global, a),
        Command::Attn(a) => commands::attn(&cli.global, a),
        Command::Plan(a) => commands::plan(a),
        Command::Verify(a) => commands::verify(&cli.global, a),
        Command::Bench(a) => bench::run(&cli.global, a),
        Command::Random(a) => commands::random(&cli.global, a),
        Command::Convert(a) => commands::convert(&cli.global, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
