//! `rfsplat` command-line driver.

mod args;
mod commands;
mod settings;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

fn threads(cmd: &Command) -> Option<u64> {
    let common = match cmd {
        Command::GenData(a) => &a.common,
        Command::Train(a) => &a.common,
        Command::Render(a) => &a.common,
        Command::Eval(a) => &a.common,
        Command::Bench(a) => &a.common,
        Command::Rssi(a) => &a.common,
    };
    common.threads
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    if let Some(n) = threads(&cli.command) {
        rayon::ThreadPoolBuilder::new().num_threads(n as usize).build_global()?;
    }
    match &cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train_cmd(a),
        Command::Render(a) => commands::render(a),
        Command::Eval(a) => commands::eval(a),
        Command::Bench(a) => commands::bench(a),
        Command::Rssi(a) => commands::rssi(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
