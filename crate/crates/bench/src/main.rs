use std::process::ExitCode;

use clap::Parser;

use hbs_nd_bench::{run, write_rows, Cli, EXIT_BAD_ARGS, EXIT_BUILD_FAILED};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let raw: Vec<String> = std::env::args().collect();
    let cli = match Cli::parse().merge_config(&raw) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_BAD_ARGS as u8);
        }
    };
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_BAD_ARGS as u8);
        }
    }
    let (rows, code) = match run(&cli) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                hbs_nd::Error::InvalidArgument(_)
                | hbs_nd::Error::UnknownProblem(_)
                | hbs_nd::Error::Parse(_)
                | hbs_nd::Error::LoadNotInterior { .. }
                | hbs_nd::Error::DuplicateLoad { .. }
                | hbs_nd::Error::Io(_) => EXIT_BAD_ARGS,
                _ => EXIT_BUILD_FAILED,
            };
            return ExitCode::from(code as u8);
        }
    };
    let written = match &cli.csv {
        Some(path) => std::fs::File::create(path)
            .map_err(hbs_nd::Error::from)
            .and_then(|f| write_rows(f, &rows)),
        None => write_rows(std::io::stdout().lock(), &rows),
    };
    if let Err(e) = written {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_BAD_ARGS as u8);
    }
    ExitCode::from(code as u8)
}
