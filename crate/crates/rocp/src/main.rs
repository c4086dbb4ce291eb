use std::process::ExitCode;

use rocp::cli::CliError;

fn main() -> ExitCode {
    let result = rocp::cli::run(std::env::args_os());
    let Err(err) = result else {
        return ExitCode::SUCCESS;
    };
    match &err {
        CliError::Usage(e) => {
            let _ = e.print();
        }
        CliError::Run(e) => eprintln!("error: {e}"),
    }
    ExitCode::from(err.exit_code() as u8)
}
