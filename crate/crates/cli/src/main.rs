use clap::Parser;
use ptinfer_cli::{exit_code, run, RunConfig};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cfg = RunConfig::parse();
    if let Err(e) = run(&cfg) {
        log::error!("{e}");
        std::process::exit(exit_code(&e));
    }
}
