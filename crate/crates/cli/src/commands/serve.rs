use std::io::BufWriter;

use craeg::trace_io::serve_stream;

use super::load_table;
use crate::config::{RunConfig, ServeArgs};
use crate::error::{CliError, CliResult};

pub fn run(args: &ServeArgs, run: &RunConfig) -> CliResult<()> {
    let table = load_table(&args.table)?;
    log::info!(
        "serving with tau {}, epsilon {}, {:?}, {:?}",
        run.craeg.tau,
        run.craeg.epsilon,
        run.craeg.weighting,
        run.craeg.lambda_mode
    );
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    let summary = serve_stream(stdin.lock(), BufWriter::new(stdout.lock()), &table, &run.craeg)
        .map_err(|e| CliError::io("<stdio>", e))?;
    log::info!(
        "answered {} requests ({} errors)",
        summary.requests,
        summary.errors
    );
    Ok(())
}
