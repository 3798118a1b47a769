use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let args: Vec<String> = std::env::args().collect();
    let code = fpsrl_cli::cli::run(&args, &mut std::io::stdout());
    ExitCode::from(code as u8)
}
