use clap::Parser;

fn main() {
    std::process::exit(mdlm_lab_cli::run(mdlm_lab_cli::Cli::parse()));
}
