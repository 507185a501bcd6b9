use clap::Parser;

fn main() -> std::process::ExitCode {
    msse::cli::main_with(msse::cli::Cli::parse())
}
