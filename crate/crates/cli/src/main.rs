mod args;
mod commands;
mod config;
mod output;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command, Mode};
use commands::{Ctx, DEFAULT_SEED};
use config::Layered;
use output::{CliError, OutDir, EXIT_FAIL, EXIT_PASS};

const THREADS_ENV: &str = "LAMINATE_FORGE_THREADS";

fn threads(cfg: &mut Layered, flag: Option<usize>) -> Result<Option<usize>, CliError> {
    if let Some(t) = cfg.opt("threads", flag)? {
        return Ok(Some(t));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn mode(cfg: &mut Layered, flag: Option<Mode>) -> Result<Mode, CliError> {
    if let Some(m) = flag {
        cfg.opt::<String>("mode", None)?;
        return Ok(m);
    }
    match cfg.opt::<String>("mode", None)?.as_deref() {
        None | Some("exact") => Ok(Mode::Exact),
        Some("approx") => Ok(Mode::Approx),
        Some(other) => Err(CliError::Usage(format!("mode must be exact or approx, got {other:?}"))),
    }
}

fn run(cli: Cli) -> Result<bool, CliError> {
    let mut cfg = Layered::load(cli.config.as_deref())?;
    if let Some(t) = threads(&mut cfg, cli.threads)? {
        if t == 0 {
            return Err(CliError::Usage("thread count must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot size thread pool: {e}")))?;
    }
    let ctx = Ctx {
        mode: mode(&mut cfg, cli.mode)?,
        seed: cfg.get("seed", cli.seed, DEFAULT_SEED)?,
        out: OutDir::new(cfg.opt("out", cli.out)?)?,
    };
    let passed = match cli.command {
        Command::Staircase(a) => commands::staircase(&ctx, &mut cfg, a)?,
        Command::Constants(a) => commands::constants(&ctx, &mut cfg, a)?,
        Command::Lamlem(a) => commands::lamlem(&ctx, &mut cfg, a)?,
        Command::Bridge(a) => commands::bridge(&ctx, &mut cfg, a)?,
        Command::Realize(a) => commands::realize(&ctx, &mut cfg, a)?,
        Command::Pipeline(a) => commands::pipeline(&ctx, &mut cfg, a)?,
        Command::Verify(a) => commands::verify(&ctx, &mut cfg, a)?,
    };
    Ok(passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::from(EXIT_PASS),
        Ok(false) => ExitCode::from(EXIT_FAIL),
        Err(e) => {
            eprintln!("laminate-forge: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
