use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};

pub const TOOL: &str = concat!("smallgain ", env!("CARGO_PKG_VERSION"));

/// Writes `contents` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(contents).map_err(|e| CliError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

/// CSV text: `#` comment lines, a header row, then rows.
pub struct Csv {
    buf: String,
}

impl Csv {
    pub fn new(comments: &[String], columns: &[&str]) -> Self {
        let mut buf = String::new();
        for c in comments {
            let _ = writeln!(buf, "# {c}");
        }
        let _ = writeln!(buf, "{}", columns.join(","));
        Self { buf }
    }

    pub fn row(&mut self, cells: &[String]) {
        let _ = writeln!(self.buf, "{}", cells.join(","));
    }

    pub fn numbers(&mut self, cells: &[f64]) {
        let cells: Vec<String> = cells.iter().map(|v| fmt_num(*v)).collect();
        self.row(&cells);
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.buf.as_bytes())
    }

    pub fn as_str(&self) -> &str {
        &self.buf
    }
}

/// Shortest round-trip form, in exponent notation for very small or large magnitudes.
pub fn fmt_num(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e16).contains(&a) {
        format!("{v:e}")
    } else {
        v.to_string()
    }
}

pub fn out_path(dir: &Path, file: &str) -> PathBuf {
    dir.join(file)
}
