//! `cmas lift` as an example target: `cargo run --release --example lift -- --help`.

fn main() -> std::process::ExitCode {
    env_logger::init();
    cmas::cli::run_subcommand("lift", std::env::args().skip(1))
}
