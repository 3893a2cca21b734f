use clap::Parser;
use trocar_service::cli::{run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter("TROCAR_DOCK_LOG")).init();
    std::process::exit(run(Cli::parse()));
}
