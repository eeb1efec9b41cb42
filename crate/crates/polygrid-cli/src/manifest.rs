//! Run manifests: a plain-text `key=value` snapshot of every run, enough
//! to reproduce it (command, effective configuration, seed, paths) plus
//! outcome fields (wall time, final metrics).

use std::fmt::Display;
use std::io::Write;
use std::path::Path;

pub struct RunManifest {
    entries: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new(command: &str) -> RunManifest {
        let mut m = RunManifest { entries: Vec::new() };
        m.put("command", command);
        m
    }

    pub fn put(&mut self, key: &str, value: impl Display) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn write_to(&self, path: &Path) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        for (k, v) in &self.entries {
            writeln!(w, "{k}={v}")?;
        }
        w.flush()
    }
}
