mod analyze;
mod metrics;
mod reweight;
mod serve;
mod simulate;

use std::path::Path;

use craeg::trace_io::{load_embedding_table, EmbeddingFileError};
use craeg::EmbeddingTable;

use crate::config::{Command, FileConfig, RunConfig};
use crate::error::{CliError, CliResult};

pub fn run(command: &Command, run: &RunConfig, file: &FileConfig) -> CliResult<()> {
    match command {
        Command::Reweight(args) => reweight::run(args, run),
        Command::Analyze(args) => analyze::run(args, run),
        Command::Metrics(args) => metrics::run(args, run),
        Command::Simulate(args) => simulate::run(args, run, file),
        Command::Serve(args) => serve::run(args, run),
    }
}

fn load_table(path: &Path) -> CliResult<EmbeddingTable> {
    let table = load_embedding_table(path).map_err(|source| match source {
        EmbeddingFileError::Io(e) => CliError::io(path, e),
        source => CliError::Embedding {
            path: path.to_path_buf(),
            source,
        },
    })?;
    log::info!(
        "loaded {} x {} embedding table from {}",
        table.vocab_size(),
        table.dim(),
        path.display()
    );
    Ok(table)
}
