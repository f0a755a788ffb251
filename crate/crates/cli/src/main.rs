use clap::Parser;
use tracing_subscriber::EnvFilter;

fn main() {
    let cli = trajkit_cli::Cli::parse();
    let filter = trajkit_cli::log_filter(&cli).unwrap_or_else(|_| "info".into());
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_new(&filter).unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    if let Err(e) = trajkit_cli::run(cli) {
        eprintln!("{}", trajkit_cli::error_report(&e));
        std::process::exit(1);
    }
}
