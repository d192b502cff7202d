use clap::Parser;
use figpriv_cli::args::Cli;
use tracing_subscriber::EnvFilter;

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("FIGPRIV_LOG").unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    if let Err(e) = figpriv_cli::run(&cli) {
        eprintln!("figpriv: {e}");
        std::process::exit(e.exit_code());
    }
}
