use std::process::ExitCode;

fn main() -> ExitCode {
    let seed_env = std::env::var("PIXIU_SEED").ok();
    let code = pixiu_cli::main_with(std::env::args_os(), seed_env.as_deref(), &mut std::io::stdout());
    ExitCode::from(code)
}
