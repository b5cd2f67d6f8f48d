use clap::Parser;

use krein_lab::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("krein-lab: {e}");
        std::process::exit(e.exit_code());
    }
}
