//! Output directory handling. Every artifact carries the run configuration:
//! `run_config.json` sits next to the outputs and each CSV opens with a
//! `# run_config=<json>` comment line.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;

pub struct Output {
    dir: PathBuf,
    config: Value,
}

impl Output {
    pub fn create(dir: &Path, config: Value) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let out = Self {
            dir: dir.to_path_buf(),
            config,
        };
        out.json("run_config.json", &out.config)?;
        Ok(out)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn csv<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<PathBuf> {
        let path = self.path(name);
        let file = File::create(&path).with_context(|| format!("writing {}", path.display()))?;
        let mut buf = BufWriter::new(file);
        writeln!(buf, "# run_config={}", self.config)?;
        let mut w = csv::Writer::from_writer(buf);
        for row in rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(path)
    }
}
