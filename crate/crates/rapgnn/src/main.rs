use std::process::ExitCode;

fn main() -> ExitCode {
    rapgnn::cli::main_with_args(std::env::args_os())
}
