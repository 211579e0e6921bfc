use clap::Parser;
use landmark_cloud::cli::{error_line, run, Cli};
use landmark_cloud::{Error, ErrorKind};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LANDMARKS_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let first = e.to_string().lines().next().unwrap_or_default().trim_start_matches("error: ").to_string();
            eprintln!("{}", error_line(&Error::Usage(first)));
            std::process::exit(ErrorKind::Usage.exit_code());
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("{}", error_line(&e));
        std::process::exit(e.kind().exit_code());
    }
}
