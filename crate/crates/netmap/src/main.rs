fn main() -> std::process::ExitCode {
    netmap::cli::main()
}
