use orthoroberta::cli;

fn main() {
    let parsed = match cli::parse(std::env::args_os()) {
        Ok(c) => c,
        Err(code) => std::process::exit(code),
    };
    let level = match parsed.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    std::process::exit(cli::run_parsed(&parsed));
}
