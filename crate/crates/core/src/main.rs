use clap::Parser;

fn main() {
    std::process::exit(ccsynth::cli::run(ccsynth::cli::Cli::parse()));
}
