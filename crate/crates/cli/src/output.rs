use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

/// Full-precision float formatting for CSV cells.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("cannot create output directory {}", root.display()))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn csv(&self, name: &str) -> Result<csv::Writer<fs::File>> {
        let path = self.path(name);
        csv::Writer::from_path(&path).with_context(|| format!("cannot write {}", path.display()))
    }

    pub fn jsonl(&self, name: &str) -> Result<JsonLines> {
        let path = self.path(name);
        let file = fs::File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(JsonLines {
            out: std::io::BufWriter::new(file),
        })
    }

    pub fn write_bytes(&self, name: &str, bytes: &[u8]) -> Result<String> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(name.to_string())
    }

    /// Writes the configuration with all defaults filled in.
    pub fn effective_config<T: Serialize>(&self, config: &T) -> Result<()> {
        let text = toml::to_string_pretty(config).context("cannot serialize the effective configuration")?;
        fs::write(self.path("effective_config.toml"), text).context("cannot write the effective configuration")?;
        Ok(())
    }
}

pub struct JsonLines {
    out: std::io::BufWriter<fs::File>,
}

impl JsonLines {
    pub fn write<T: Serialize>(&mut self, value: &T) -> Result<()> {
        serde_json::to_writer(&mut self.out, value)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}
