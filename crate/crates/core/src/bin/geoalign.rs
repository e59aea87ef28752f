use std::process::ExitCode;

fn main() -> ExitCode {
    geoalign::cli::run(std::env::args_os())
}
