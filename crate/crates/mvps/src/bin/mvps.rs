use clap::Parser;

fn main() {
    let cli = mvps::cli::Cli::parse();
    std::process::exit(mvps::cli::run(&cli));
}
