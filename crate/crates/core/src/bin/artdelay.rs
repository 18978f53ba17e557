use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = artdelay::cli::Args::parse();
    std::process::exit(artdelay::cli::main_with(args));
}
