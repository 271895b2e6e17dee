use clap::Parser;
use exitrack_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(text) => print!("{text}"),
        Err(e) => {
            eprintln!("exitrack: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
