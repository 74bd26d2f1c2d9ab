use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = decnas_cli::Cli::parse();
    if let Err(e) = decnas_cli::run(cli, &mut std::io::stdout()) {
        eprintln!("error: {e:#}");
        std::process::exit(e.exit_code());
    }
}
