use std::process::ExitCode;

fn main() -> ExitCode {
    gconv_cli::run(std::env::args_os())
}
