use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use dds::cli::{self, Cli};

fn main() -> ExitCode {
    let args = Cli::parse();
    let result = cli::thread_cap().and_then(|cap| {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = cap {
            builder = builder.num_threads(n);
        }
        builder
            .build()
            .map_err(|e| dds::DdsError::config(format!("thread pool: {e}")))?
            .install(|| cli::run(&args))
    });
    match result {
        Ok(text) => {
            let mut stdout = std::io::stdout().lock();
            let _ = stdout.write_all(text.as_bytes());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
