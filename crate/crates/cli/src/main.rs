use clap::Parser;

use flfosr_cli::config::Cli;

fn main() {
    let cli = Cli::parse();
    if let Err(e) = flfosr_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(flfosr_cli::exit_code(&e));
    }
}
