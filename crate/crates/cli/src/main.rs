mod args;
mod commands;
mod manifest;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            std::process::exit(0);
        }
        Err(e) => {
            eprint!("{e}");
            std::process::exit(1);
        }
    };

    // clap cannot tie an option to a boolean switch, so this pairing is
    // checked here; it is a usage error like any other flag conflict.
    if let Command::TrainDenoiser(a) = &cli.command {
        if !a.toy && (a.emit_corpus.is_some() || a.emit_assays.is_some()) {
            eprintln!("error: --emit-corpus and --emit-assays require --toy");
            std::process::exit(1);
        }
    }

    // threads = 0 leaves rayon's default pool; any N gives identical output.
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("error[threads]: {e}");
            std::process::exit(2);
        }
    }

    let result = match &cli.command {
        Command::TrainDenoiser(a) => commands::run_train_denoiser(a, cli.threads),
        Command::TrainOracle(a) => commands::run_train_oracle(a, cli.threads),
        Command::Sample(a) => commands::run_sample(a, cli.threads),
        Command::Guide(a) => commands::run_guide(a, cli.threads),
        Command::Evaluate(a) => commands::run_evaluate(a, cli.threads),
        Command::Report(a) => commands::run_report(a, cli.threads),
        Command::Replay(a) => commands::run_replay(a, cli.threads),
    };
    if let Err(e) = result {
        eprintln!("{e}");
        std::process::exit(2);
    }
}
