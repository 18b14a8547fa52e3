use std::fs;
use std::path::{Path, PathBuf};

use crate::error::CliError;

/// Files produced by one command.
///
/// Each file is staged next to its destination and only renamed into place by
/// [`OutputSet::commit`]; dropping an uncommitted set removes the staged files, so a failed
/// command leaves earlier outputs untouched and no partial files behind.
#[derive(Debug, Default)]
pub struct OutputSet {
    staged: Vec<(PathBuf, PathBuf)>,
}

fn staging_path(dest: &Path) -> PathBuf {
    let mut name = dest.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    dest.with_file_name(name)
}

impl OutputSet {
    pub fn new() -> Self {
        OutputSet::default()
    }

    pub fn write(&mut self, dest: impl Into<PathBuf>, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
        let dest = dest.into();
        if let Some(dir) = dest.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        let tmp = staging_path(&dest);
        // record first so a failed write is still cleaned up
        self.staged.push((tmp.clone(), dest));
        fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))
    }

    pub fn commit(mut self) -> Result<Vec<PathBuf>, CliError> {
        let staged = std::mem::take(&mut self.staged);
        let mut done = Vec::with_capacity(staged.len());
        for (i, (tmp, dest)) in staged.iter().enumerate() {
            if let Err(e) = fs::rename(tmp, dest) {
                for (t, _) in &staged[i..] {
                    let _ = fs::remove_file(t);
                }
                return Err(CliError::io(dest, e));
            }
            done.push(dest.clone());
        }
        Ok(done)
    }
}

impl Drop for OutputSet {
    fn drop(&mut self) {
        for (tmp, _) in &self.staged {
            let _ = fs::remove_file(tmp);
        }
    }
}
