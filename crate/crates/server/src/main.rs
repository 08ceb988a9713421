use std::process::ExitCode;

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "parley=info,warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    parley_server::cli::main_with(std::env::args_os())
}
