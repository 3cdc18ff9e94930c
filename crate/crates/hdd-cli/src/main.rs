use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    hdd_core::util::init_thread_pool();
    ExitCode::from(hdd_cli::run_cli(std::env::args()) as u8)
}
