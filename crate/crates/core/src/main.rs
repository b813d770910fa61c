use clap::Parser;

fn main() {
    let cli = fsqkd::cli::Cli::parse();
    std::process::exit(fsqkd::cli::dispatch(&cli));
}
