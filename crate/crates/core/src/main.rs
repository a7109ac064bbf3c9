use std::process::ExitCode;

fn main() -> ExitCode {
    osca::cli::main()
}
