//! `cmas fit-prior` as an example target: `cargo run --release --example fit_prior -- --help`.

fn main() -> std::process::ExitCode {
    env_logger::init();
    cmas::cli::run_subcommand("fit-prior", std::env::args().skip(1))
}
