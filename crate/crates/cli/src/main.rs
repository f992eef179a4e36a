mod args;
mod commands;
mod config;

use std::ffi::OsString;
use std::process::ExitCode;

use clap::{CommandFactory, Parser};
use vager_core::Error;

use args::{Cli, Command};
use commands::{Output, StageError};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn env_flag(name: &str) -> bool {
    std::env::var(name).is_ok_and(|v| !v.is_empty() && v != "0")
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("VAGER_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| format!("VAGER_THREADS must be a positive integer, got {raw:?}"))?;
    if n == 0 {
        return Err("VAGER_THREADS must be >= 1".into());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| format!("thread pool: {e}"))
}

fn exit_code(e: &StageError) -> u8 {
    match e.error {
        Error::Numerical(_) => EXIT_NUMERICAL,
        _ => EXIT_DATA,
    }
}

fn run(cli: Cli, out: &Output) -> Result<(), StageError> {
    match &cli.command {
        Command::Synth(c) => commands::synth(c, out),
        Command::TrainBase(c) => commands::train_base(c, out),
        Command::Embed(c) => commands::embed(c, out),
        Command::Transfer(c) => commands::transfer(c, out),
        Command::Fuse(c) => commands::fuse_cmd(c, out),
        Command::Eval(c) => commands::eval(c, out),
        Command::Pipeline(c) => commands::pipeline(c, out),
    }
}

fn main() -> ExitCode {
    let mut argv: Vec<OsString> = std::env::args_os().collect();
    let merged = config::find_config(&argv).and_then(|path| match path {
        Some(p) => config::merge(std::mem::take(&mut argv), p.as_ref(), &Cli::command()),
        None => Ok(std::mem::take(&mut argv)),
    });
    let argv = match merged {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {}", e.0);
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_USAGE);
    }
    let out = Output::new(env_flag("VAGER_QUIET"));
    match run(cli, &out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
