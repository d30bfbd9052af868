use clap::Parser;
use dfszeno_cli::commands::{execute, Cli};

fn main() {
    let cli = Cli::parse();
    let mut stdout = std::io::stdout().lock();
    if let Err(e) = execute(&cli, &mut stdout) {
        eprintln!("dfszeno: {e}");
        std::process::exit(e.exit_code());
    }
}
