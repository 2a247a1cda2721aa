fn main() -> std::process::ExitCode {
    mitoscope::cli::main()
}
