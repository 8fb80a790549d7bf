fn main() -> std::process::ExitCode {
    collage_forge::cli::main()
}
