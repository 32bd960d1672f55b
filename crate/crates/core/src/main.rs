use clap::Parser;
use lio_core::cli::{main_with, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = main_with(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
