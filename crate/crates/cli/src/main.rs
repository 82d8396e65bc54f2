use clap::Parser;

fn main() {
    let cli = chaosode_cli::Cli::parse();
    if let Err(e) = chaosode_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
