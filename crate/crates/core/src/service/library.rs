//! Permanent routine store: one canonical CSV file per routine in a data
//! directory.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::trajectory::{Routine, TrajectoryError};

pub const DATA_DIR_ENV: &str = "WRISTLAB_DATA_DIR";

#[derive(Debug, Error)]
pub enum LibraryError {
    #[error("invalid routine name `{0}`: use 1-64 characters from [A-Za-z0-9_-]")]
    InvalidName(String),
    #[error("routine `{0}` already exists")]
    Exists(String),
    #[error("routine `{0}` not found")]
    NotFound(String),
    #[error("routine `{name}`: {source}")]
    Parse {
        name: String,
        source: TrajectoryError,
    },
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

pub fn validate_name(name: &str) -> Result<(), LibraryError> {
    let ok = (1..=64).contains(&name.len())
        && name
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-');
    if ok {
        Ok(())
    } else {
        Err(LibraryError::InvalidName(name.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct RoutineLibrary {
    dir: PathBuf,
}

impl RoutineLibrary {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, name: &str) -> Result<PathBuf, LibraryError> {
        validate_name(name)?;
        Ok(self.dir.join(format!("{name}.csv")))
    }

    /// Writes `routine` under `name` in canonical form and returns what was
    /// stored, which is exactly what a later `load` yields.
    pub fn save(
        &self,
        name: &str,
        routine: &Routine,
        overwrite: bool,
    ) -> Result<Routine, LibraryError> {
        let path = self.path_for(name)?;
        if path.exists() && !overwrite {
            return Err(LibraryError::Exists(name.to_string()));
        }
        fs::create_dir_all(&self.dir)?;
        let mut stored = routine.clone().canonicalized();
        stored.set_name(name);
        let tmp = self.dir.join(format!(".{name}.csv.tmp"));
        fs::write(&tmp, stored.serialize())?;
        fs::rename(&tmp, &path)?;
        Ok(stored)
    }

    pub fn load(&self, name: &str) -> Result<Routine, LibraryError> {
        let path = self.path_for(name)?;
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(LibraryError::NotFound(name.to_string()))
            }
            Err(e) => return Err(e.into()),
        };
        Routine::parse_bytes(&bytes).map_err(|source| LibraryError::Parse {
            name: name.to_string(),
            source,
        })
    }

    /// Sorted names of the stored routines.
    pub fn list(&self) -> Result<Vec<String>, LibraryError> {
        let entries = match fs::read_dir(&self.dir) {
            Ok(e) => e,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        let mut names = Vec::new();
        for entry in entries {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("csv") {
                continue;
            }
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                if validate_name(stem).is_ok() {
                    names.push(stem.to_string());
                }
            }
        }
        names.sort();
        Ok(names)
    }
}
