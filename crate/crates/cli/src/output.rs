//! All-or-nothing artifact writing.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::CliError;

/// Named files produced by a command, held in memory until every one of
/// them is ready.
#[derive(Debug, Default)]
pub struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    pub fn add(&mut self, name: &str, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.to_string(), bytes.into()));
    }

    /// Writes every file under `dir`. Each file goes to a temporary name
    /// first; nothing is renamed into place unless all writes succeeded.
    pub fn commit(self, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let mut staged = Vec::new();
        for (name, bytes) in &self.files {
            let tmp = dir.join(format!(".{name}.partial"));
            if let Err(e) = write_file(&tmp, bytes) {
                cleanup(&staged);
                let _ = fs::remove_file(&tmp);
                return Err(e);
            }
            staged.push((tmp, dir.join(name)));
        }
        for (tmp, dest) in &staged {
            fs::rename(tmp, dest).map_err(|e| CliError::io(dest, e))?;
        }
        Ok(staged.into_iter().map(|(_, d)| d).collect())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let mut f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    f.sync_all().map_err(|e| CliError::io(path, e))
}

fn cleanup(staged: &[(PathBuf, PathBuf)]) {
    for (tmp, _) in staged {
        let _ = fs::remove_file(tmp);
    }
}

/// Writes one file atomically, or to stdout when `path` is `None`.
pub fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match path {
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|e| CliError::Io(format!("stdout: {e}"))),
        Some(p) => {
            let name = p
                .file_name()
                .and_then(|n| n.to_str())
                .ok_or_else(|| CliError::Validation(format!("{}: not a file path", p.display())))?;
            let dir = match p.parent() {
                Some(d) if !d.as_os_str().is_empty() => d,
                _ => Path::new("."),
            };
            let mut a = Artifacts::default();
            a.add(name, bytes);
            a.commit(dir).map(|_| ())
        }
    }
}
