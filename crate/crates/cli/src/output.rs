//! Output directory with manifest-stamped files.

use anyhow::{Context, Result};
use serde_json::{Map, Value};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::config::{RunConfig, SCHEMA_VERSION};

pub struct Output {
    dir: PathBuf,
    hash: String,
}

impl Output {
    /// Creates `dir` and writes `manifest.json` into it.
    pub fn create(dir: &Path, config: &RunConfig) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let hash = config.sha256()?;
        let mut manifest = serde_json::to_value(config)?;
        manifest["manifest_sha256"] = Value::String(hash.clone());
        let out = Self {
            dir: dir.to_path_buf(),
            hash,
        };
        out.write_text("manifest.json", &(serde_json::to_string_pretty(&manifest)? + "\n"))?;
        Ok(out)
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn file(&self, name: &str) -> Result<BufWriter<File>> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        Ok(BufWriter::new(
            File::create(&path).with_context(|| format!("creating {}", path.display()))?,
        ))
    }

    /// CSV writer whose first line is `# manifest_sha256=<hash>`.
    pub fn csv(&self, name: &str) -> Result<csv::Writer<BufWriter<File>>> {
        let mut f = self.file(name)?;
        writeln!(f, "# manifest_sha256={}", self.hash)?;
        Ok(csv::Writer::from_writer(f))
    }

    /// Writes `body` (an object) with `schema_version` and
    /// `manifest_sha256` added.
    pub fn json(&self, name: &str, body: Value) -> Result<()> {
        let mut obj = Map::new();
        obj.insert("schema_version".into(), SCHEMA_VERSION.into());
        obj.insert("manifest_sha256".into(), Value::String(self.hash.clone()));
        match body {
            Value::Object(m) => obj.extend(m),
            other => {
                obj.insert("data".into(), other);
            }
        }
        self.write_text(name, &(serde_json::to_string_pretty(&Value::Object(obj))? + "\n"))
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<()> {
        let mut f = self.file(name)?;
        f.write_all(text.as_bytes())?;
        f.flush()?;
        Ok(())
    }
}
