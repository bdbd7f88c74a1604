use std::fs;
use std::path::Path;

use adaptseg::tensor::io::write_atomic;

use crate::error::{CliError, CliResult};

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    Ok(write_atomic(path, text.as_bytes())?)
}

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

/// Make `dir` exist and be empty of everything this tool writes there.
///
/// A non-empty directory is refused unless `force`; even then, entries not
/// named in `owned` are left alone and refused, so `--force` never deletes
/// files the tool did not create.
pub fn prepare_dir(dir: &Path, owned: &[&str], force: bool) -> CliResult<()> {
    let entries: Vec<fs::DirEntry> = match fs::read_dir(dir) {
        Ok(rd) => rd.collect::<Result<_, _>>().map_err(|e| CliError::io(dir, e))?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return create_dir(dir),
        Err(e) => return Err(CliError::io(dir, e)),
    };
    if entries.is_empty() {
        return Ok(());
    }
    if !force {
        return Err(CliError::Usage(format!("{} is not empty; pass --force to replace it", dir.display())));
    }
    let foreign: Vec<String> = entries
        .iter()
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| !owned.contains(&n.as_str()) && !(n.starts_with('.') && n.ends_with(".tmp")))
        .collect();
    if !foreign.is_empty() {
        return Err(CliError::Usage(format!(
            "{} holds files this tool did not write ({}); refusing to replace it",
            dir.display(),
            foreign.join(", ")
        )));
    }
    for e in entries {
        let p = e.path();
        let removed = if p.is_dir() { fs::remove_dir_all(&p) } else { fs::remove_file(&p) };
        removed.map_err(|err| CliError::io(&p, err))?;
    }
    Ok(())
}
