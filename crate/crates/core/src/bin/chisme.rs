//! `chisme` command-line entry point.

fn main() -> std::process::ExitCode {
    chisme_core::cli::main()
}
