use std::process::ExitCode;

fn main() -> ExitCode {
    let cli = match panoweave_cli::parse(std::env::args_os()) {
        Ok(c) => c,
        Err(code) => return ExitCode::from(code as u8),
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let env = |k: &str| std::env::var(k).ok();
    ExitCode::from(panoweave_cli::run_parsed(&cli, &env) as u8)
}
