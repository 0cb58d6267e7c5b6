use clap::Parser;

fn main() {
    let cli = rpred_cli::Cli::parse();
    if let Err(e) = rpred_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
