//! Artifact writers. Floats are written in shortest round-trip form, so
//! every value reads back bit-identically.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Where a command's artifacts go, if anywhere.
pub struct Artifacts {
    dir: Option<PathBuf>,
    written: Vec<PathBuf>,
}

impl Artifacts {
    pub fn new(dir: Option<PathBuf>) -> CliResult<Self> {
        if let Some(d) = &dir {
            std::fs::create_dir_all(d).map_err(|e| CliError::io(d, e))?;
        }
        Ok(Self {
            dir,
            written: Vec::new(),
        })
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let Some(path) = self.path(name) else {
            return Ok(());
        };
        let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        let mut out = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut out, value)
            .map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?;
        out.write_all(b"\n")
            .and_then(|_| out.flush())
            .map_err(|e| CliError::io(&path, e))?;
        self.written.push(path);
        Ok(())
    }

    pub fn csv<T, I>(&mut self, name: &str, rows: I) -> CliResult<()>
    where
        T: Serialize,
        I: IntoIterator<Item = T>,
    {
        let Some(path) = self.path(name) else {
            return Ok(());
        };
        let fail = |e: csv::Error| CliError::Output(format!("{}: {e}", path.display()));
        let mut writer = csv::Writer::from_path(&path).map_err(fail)?;
        for row in rows {
            writer.serialize(row).map_err(fail)?;
        }
        writer.flush().map_err(|e| CliError::io(&path, e))?;
        self.written.push(path);
        Ok(())
    }

    fn path(&self, name: &str) -> Option<PathBuf> {
        self.dir.as_deref().map(|d| d.join(name))
    }

    pub fn finish(self) {
        match &self.dir {
            Some(dir) => log::info!("wrote {} files to {}", self.written.len(), dir.display()),
            None => log::info!("no --out-dir given; only the summary was printed"),
        }
    }
}

/// Machine-readable summary on stdout.
pub fn print_summary<T: Serialize>(value: &T) -> CliResult<()> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    serde_json::to_writer_pretty(&mut out, value)
        .map_err(|e| CliError::Output(e.to_string()))?;
    writeln!(out).map_err(|e| CliError::io(Path::new("<stdout>"), e))
}
