use clap::Parser;

fn main() {
    let cli = qdiff_cli::Cli::parse();
    if let Err(e) = qdiff_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(qdiff_cli::exit_code(&e));
    }
}
