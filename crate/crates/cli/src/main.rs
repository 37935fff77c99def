use clap::Parser;
use evpark_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(outcome) => outcome as i32,
        Err(err) => {
            eprintln!("error: {err}");
            err.outcome as i32
        }
    };
    std::process::exit(code);
}
