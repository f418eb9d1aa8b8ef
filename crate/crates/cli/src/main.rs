use clap::Parser;

fn main() {
    let cli = lpa_cli::Cli::parse();
    if let Err(e) = lpa_cli::execute(&cli) {
        eprintln!("lpa: {e}");
        std::process::exit(e.exit_code());
    }
}
