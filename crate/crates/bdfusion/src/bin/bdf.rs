use clap::Parser;

fn main() {
    let cli = bdfusion::cli::Cli::parse();
    std::process::exit(bdfusion::cli::run(&cli));
}
