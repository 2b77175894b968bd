use std::process::ExitCode;

/// Coarse error class for the one-line failure message.
fn kind(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<dpaa::formats::FormatError>() {
            return match e {
                dpaa::formats::FormatError::Io { .. } => "io",
                _ => "format",
            };
        }
        if cause.is::<std::io::Error>() {
            return "io";
        }
        if cause.is::<dpaa_core::Error>() || cause.is::<toml::de::Error>() {
            return "config";
        }
        if cause.is::<clap::Error>() {
            return "usage";
        }
    }
    "error"
}

fn main() -> ExitCode {
    let mut stdout = std::io::stdout().lock();
    match dpaa::cli::run(std::env::args_os(), &mut stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            if let Some(e) = err.downcast_ref::<clap::Error>() {
                if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) {
                    let _ = e.print();
                    return ExitCode::SUCCESS;
                }
            }
            let message = format!("{err:#}").split_whitespace().collect::<Vec<_>>().join(" ");
            eprintln!("error kind={} message={:?}", kind(&err), message);
            ExitCode::FAILURE
        }
    }
}
