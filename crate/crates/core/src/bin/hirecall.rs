use std::process::ExitCode;

fn main() -> ExitCode {
    hirecall::cli::main_with_args(std::env::args_os())
}
