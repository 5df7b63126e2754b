//! Output formatting and report files.
//!
//! Every run writes a `resolved_config` file holding the subcommand, all
//! resolved options (defaults included), and the seed, so outputs are
//! reproducible byte for byte from their own record.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Decimal serialization with 17 significant digits; round-trips f64 exactly.
pub fn g17(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else if v.is_infinite() {
        if v > 0.0 {
            "inf".to_string()
        } else {
            "-inf".to_string()
        }
    } else {
        format!("{v:.16e}")
    }
}

pub struct OutDir {
    dir: PathBuf,
}

impl OutDir {
    pub fn create(dir: &Path) -> Result<Self, String> {
        fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        Ok(OutDir {
            dir: dir.to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&self, name: &str, content: &str) -> Result<PathBuf, String> {
        let path = self.path(name);
        let mut f = fs::File::create(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        f.write_all(content.as_bytes())
            .map_err(|e| format!("{}: {e}", path.display()))?;
        Ok(path)
    }
}

/// Builder for the resolved-config report.
pub struct ResolvedConfig {
    lines: Vec<String>,
}

impl ResolvedConfig {
    pub fn new(command: &str) -> Self {
        ResolvedConfig {
            lines: vec![format!("command = {command}")],
        }
    }

    pub fn set(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        self.lines.push(format!("{key} = {value}"));
        self
    }

    pub fn set_f64(&mut self, key: &str, value: f64) -> &mut Self {
        self.lines.push(format!("{key} = {}", g17(value)));
        self
    }

    pub fn render(&self) -> String {
        let mut s = self.lines.join("\n");
        s.push('\n');
        s
    }
}

/// A simple CSV writer: header plus formatted rows.
pub fn csv_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for row in rows {
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}
