use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(voxelforge::cli::run(std::env::args_os()) as u8)
}
