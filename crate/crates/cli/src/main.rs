use std::process::ExitCode;

use clap::Parser;
use log::{error, warn, LevelFilter};
use sscan_cli::{run, Cli, EXIT_OK};

fn configure_threads() {
    let Ok(value) = std::env::var("SSCAN_THREADS") else {
        return;
    };
    match value.parse::<usize>() {
        Ok(n) if n > 0 => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                warn!("SSCAN_THREADS ignored: {e}");
            }
        }
        _ => warn!("SSCAN_THREADS={value:?} is not a positive integer; ignored"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet {
        LevelFilter::Warn
    } else if cli.verbose {
        LevelFilter::Debug
    } else {
        LevelFilter::Info
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
    configure_threads();
    match run(cli.command) {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
