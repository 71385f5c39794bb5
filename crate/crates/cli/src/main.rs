fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    std::process::exit(swiss_cheese_cli::run_cli(std::env::args().collect()));
}
