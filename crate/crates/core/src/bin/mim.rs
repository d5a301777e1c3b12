use std::process::ExitCode;

fn main() -> ExitCode {
    mim::cli::main_with_args(std::env::args_os())
}
