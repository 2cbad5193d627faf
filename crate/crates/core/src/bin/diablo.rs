fn main() -> std::process::ExitCode {
    diablo::cli::main()
}
