use clap::Parser;

fn main() {
    let cli = covsteer::cli::Cli::parse();
    std::process::exit(covsteer::cli::run(&cli));
}
