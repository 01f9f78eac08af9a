use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(sgvad::cli::run(std::env::args_os()) as u8)
}
