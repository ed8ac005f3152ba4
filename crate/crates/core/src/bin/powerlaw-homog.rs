use std::process::ExitCode;

fn main() -> ExitCode {
    powerlaw_homog::cli::main()
}
