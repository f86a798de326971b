//! `cmas synth` as an example target: `cargo run --release --example synth -- --help`.

fn main() -> std::process::ExitCode {
    env_logger::init();
    cmas::cli::run_subcommand("synth", std::env::args().skip(1))
}
