use clap::Parser;
use optmarket_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(report) => print!("{report}"),
        Err(e) => {
            eprintln!("optmarket: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
