use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(nonsmooth_fem_cli::run(std::env::args_os()) as u8)
}
