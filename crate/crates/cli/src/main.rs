//! Binary entry point. Exit codes: 0 success, 2 usage errors, 1 domain
//! errors with a one-line machine-parsable category on stderr.

use clap::Parser;
use rsfiqa_cli::commands::{Cli, run};

fn main() {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests land here too; they are not errors.
            let code = if e.use_stderr() { 2 } else { 0 };
            e.print().expect("writing usage text");
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {}: {e}", e.category());
        std::process::exit(1);
    }
}
