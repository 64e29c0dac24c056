use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    pub config: Value,
}

impl Provenance {
    pub fn new(command: &'static str, seed: u64, config: Value) -> Self {
        Provenance {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed,
            config,
        }
    }

    /// Comment lines, each prefixed `#`.
    pub fn header(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# tool: gevma {}", self.version);
        let _ = writeln!(s, "# command: {}", self.command);
        let _ = writeln!(s, "# seed: {}", self.seed);
        let _ = writeln!(s, "# config: {}", self.config);
        s
    }
}

/// Writes files into one directory, each stamped with the provenance.
pub struct OutDir {
    dir: PathBuf,
    prov: Provenance,
}

impl OutDir {
    pub fn create(dir: &Path, prov: Provenance) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(OutDir { dir: dir.to_path_buf(), prov })
    }

    fn put(&mut self, name: &str, body: String) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    pub fn csv(&mut self, name: &str, body: &str) -> Result<()> {
        let text = self.prov.header() + body;
        self.put(name, text)
    }

    pub fn markdown(&mut self, name: &str, body: &str) -> Result<()> {
        let text = format!("<!--\n{}-->\n\n{body}", self.prov.header());
        self.put(name, text)
    }

    /// Objects get a `provenance` member; other values are wrapped.
    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let prov = serde_json::to_value(&self.prov)?;
        let v = match serde_json::to_value(value)? {
            Value::Object(mut m) => {
                m.insert("provenance".into(), prov);
                Value::Object(m)
            }
            other => serde_json::json!({ "provenance": prov, "data": other }),
        };
        let mut text = serde_json::to_string_pretty(&v)?;
        text.push('\n');
        self.put(name, text)
    }
}

pub fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

pub fn join(v: &[f64], sep: &str) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(sep)
}
