use std::process::ExitCode;

fn main() -> ExitCode {
    scoregen::cli::main(std::env::args_os())
}
