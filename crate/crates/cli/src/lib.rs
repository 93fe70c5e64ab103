//! The `setloss` command line: data generation, training, grids, gradient
//! checks and replay of recorded runs.

pub mod args;
pub mod commands;
pub mod config_file;
pub mod error;
pub mod grid;
pub mod manifest;
pub mod pool;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};
pub use error::{CliError, Exit};

/// Parses already expanded arguments (program name excluded) and runs them.
pub fn dispatch(args: Vec<String>) -> Result<(), CliError> {
    let cli = match Cli::try_parse_from(std::iter::once("setloss".to_owned()).chain(args.iter().cloned())) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => Ok(()),
                _ => Err(CliError::usage(String::new())),
            };
        }
    };
    match &cli.command {
        Command::GenData(a) => commands::gen_data(a, &args),
        Command::Train(a) => commands::train(a, &args),
        Command::Grid(a) => commands::grid(a, &args),
        Command::Gradcheck(a) => commands::gradcheck(a, &args),
        Command::Replay(a) => commands::replay(a),
    }
}

/// Runs the command line and returns the exit status.
pub fn run(args: Vec<String>) -> Exit {
    match config_file::expand(&args).and_then(dispatch) {
        Ok(()) => Exit::Ok,
        Err(e) => {
            if !e.message.is_empty() {
                eprintln!("error: {e}");
            }
            e.exit
        }
    }
}
