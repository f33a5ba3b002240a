use clap::Parser;

fn main() {
    let cli = dogen::cli::Cli::parse();
    if let Err(e) = dogen::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
