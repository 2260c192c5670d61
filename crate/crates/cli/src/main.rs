use std::io::Write;

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let mut out = std::io::stdout().lock();
    let code = corgi_cli::main_with(std::env::args_os(), &mut out, &mut std::io::stderr());
    out.flush().ok();
    std::process::exit(code);
}
