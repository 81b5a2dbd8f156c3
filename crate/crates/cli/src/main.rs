mod args;
mod commands;
mod config;
mod manifest;

use std::process::ExitCode;

use clap::Parser;

use args::Cli;

const EXIT_INPUT: u8 = 2;
const EXIT_PRECONDITION: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    let precondition = err
        .chain()
        .filter_map(|e| e.downcast_ref::<rollout_stab::Error>())
        .any(|e| e.is_precondition());
    if precondition {
        EXIT_PRECONDITION
    } else {
        EXIT_INPUT
    }
}

fn init_threads() -> anyhow::Result<()> {
    let Ok(text) = std::env::var("ROLLOUT_STAB_THREADS") else {
        return Ok(());
    };
    let n: usize = text
        .trim()
        .parse()
        .map_err(|_| anyhow::anyhow!("ROLLOUT_STAB_THREADS must be a positive integer, got `{text}`"))?;
    if n == 0 {
        anyhow::bail!("ROLLOUT_STAB_THREADS must be a positive integer, got 0");
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn fail(err: anyhow::Error) -> ExitCode {
    eprintln!("error: {err:#}");
    ExitCode::from(exit_code(&err))
}

fn main() -> ExitCode {
    let argv = match config::expand(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => return fail(e),
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT } else { 0 });
        }
    };
    if let Err(e) = init_threads() {
        return fail(e);
    }
    match commands::run(&cli.command, cli.config.as_deref()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}
