fn main() -> std::process::ExitCode {
    sfms::cli::main()
}
