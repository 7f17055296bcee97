use std::process::exit;

use clap::Parser;

use seqrec::cli::{run, Cli};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // clap routes --help/--version through the error path too
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            exit(code);
        }
    };
    match run(&cli.command) {
        Ok(code) => exit(code),
        Err(err) => {
            eprintln!("error: {err}");
            exit(err.exit_code());
        }
    }
}
