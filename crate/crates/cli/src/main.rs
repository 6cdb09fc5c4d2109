use std::process::ExitCode;

fn main() -> ExitCode {
    naq_cli::main_with_args(std::env::args_os())
}
