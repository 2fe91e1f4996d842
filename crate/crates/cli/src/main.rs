use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(pcsim_cli::run(std::env::args_os()))
}
