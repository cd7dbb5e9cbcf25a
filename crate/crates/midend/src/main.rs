use std::process::ExitCode;

fn main() -> ExitCode {
    midend::cli::main()
}
