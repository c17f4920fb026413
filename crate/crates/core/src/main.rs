fn main() -> std::process::ExitCode {
    fbl::cli::main()
}
