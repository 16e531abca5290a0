use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(flowlab::cli::run() as u8)
}
