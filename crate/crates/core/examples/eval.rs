//! `cmas eval` as an example target: `cargo run --release --example eval -- --help`.

fn main() -> std::process::ExitCode {
    env_logger::init();
    cmas::cli::run_subcommand("eval", std::env::args().skip(1))
}
