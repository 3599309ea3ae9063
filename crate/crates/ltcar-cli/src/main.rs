use clap::Parser;

fn main() {
    let cli = ltcar_cli::Cli::parse();
    if let Err(e) = ltcar_cli::run(&cli) {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}
