fn main() -> std::process::ExitCode {
    env_logger::init();
    cmas::cli::main()
}
