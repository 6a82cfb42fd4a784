use clap::Parser;
use labelforge_cli::{execute, exit_code, Cli};

fn main() {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    if let Err(err) = execute(cli, &mut out) {
        eprintln!("error: {err:#}");
        std::process::exit(exit_code(&err));
    }
}
