use clap::Parser;

fn main() -> std::process::ExitCode {
    std::process::ExitCode::from(wpfm_cli::run(wpfm_cli::Cli::parse()))
}
