use std::process::ExitCode;

use bdsde::Error;

fn main() -> ExitCode {
    let mut stdout = std::io::stdout().lock();
    match bdsde::cli::run_from_args(std::env::args_os(), &mut stdout) {
        Err(clap_err) => {
            let _ = clap_err.print();
            ExitCode::from(clap_err.exit_code() as u8)
        }
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidArgument(_) | Error::Config { .. } => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
