use std::process::ExitCode;

use clap::Parser;
use proximal_cli::artifacts::CliError;
use proximal_cli::cli::{resolve, Action, Cli};

fn main() -> ExitCode {
    let args = Cli::parse();
    if let Some(jobs) = args.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            return fail(CliError::config(format!("--jobs: {e}")));
        }
    }
    let result = resolve(&args.command).and_then(|action| match action {
        Action::Execute(config) => proximal_cli::run(&config),
        Action::Replay(manifest) => {
            let (summary, changed) = proximal_cli::replay(&manifest)?;
            if changed.is_empty() {
                Ok(format!("{summary}\nall artifacts reproduced"))
            } else {
                Err(CliError::runtime(format!("artifacts differ from the manifest: {}", changed.join(", ")))
                    .in_file(manifest))
            }
        }
    });
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(e),
    }
}

fn fail(e: CliError) -> ExitCode {
    eprintln!("{}", e.to_json());
    ExitCode::from(e.exit_code() as u8)
}
