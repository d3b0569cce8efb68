//! Files and commands around the loop: configuration, datasets, inference
//! records, CSV tables, reports and the operations behind the CLI.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod records;
pub mod report;
pub mod tables;

use std::fs::{File, OpenOptions, TryLockError};
use std::path::Path;

use crate::error::{Error, Result};

pub use commands::{cmd_eval, cmd_gen, cmd_report, cmd_run, cmd_select, GenOptions, RunOptions, RunSummary, SelectOptions};
pub use config::{DatasetSource, ExperimentConfig, DEFAULT_CONFIG_TOML, SCHEMA_VERSION};

pub const LOCK_FILE: &str = "run.lock";

/// Exclusive advisory lock on a run directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    _file: File,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        match file.try_lock() {
            Ok(()) => Ok(Self { _file: file }),
            Err(TryLockError::WouldBlock) => Err(Error::Locked(dir.to_path_buf())),
            Err(TryLockError::Error(e)) => Err(Error::io(&path, e)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn second_lock_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let first = RunLock::acquire(dir.path()).unwrap();
        assert!(matches!(RunLock::acquire(dir.path()), Err(Error::Locked(_))));
        drop(first);
        RunLock::acquire(dir.path()).unwrap();
    }
}
