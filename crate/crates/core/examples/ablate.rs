//! `cmas ablate` as an example target: `cargo run --release --example ablate -- --help`.

fn main() -> std::process::ExitCode {
    env_logger::init();
    cmas::cli::run_subcommand("ablate", std::env::args().skip(1))
}
