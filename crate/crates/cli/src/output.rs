//! Output directory handling: atomic writes and run manifests.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Provenance record written next to every command's outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: Vec<String>,
    /// sha256 over the command name, resolved options and input bytes.
    pub config_hash: String,
    pub version: String,
    pub outputs: Vec<String>,
}

pub struct Outputs {
    dir: PathBuf,
    command: &'static str,
    inputs: Vec<(String, Vec<u8>)>,
    options: Value,
    written: Vec<String>,
}

impl Outputs {
    pub fn new(dir: &Path, command: &'static str) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            command,
            inputs: Vec::new(),
            options: Value::Null,
            written: Vec::new(),
        })
    }

    /// Read an input file, remembering its bytes for the config hash.
    pub fn read_input(&mut self, path: &Path) -> Result<String, CliError> {
        let bytes =
            fs::read(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        let text = String::from_utf8(bytes.clone())
            .map_err(|_| CliError::Parse(format!("{} is not UTF-8", path.display())))?;
        self.inputs.push((path.display().to_string(), bytes));
        Ok(text)
    }

    /// Resolved options that change the outputs (not the output directory).
    pub fn set_options(&mut self, options: Value) {
        self.options = options;
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Write `name` atomically: a temp file in the same directory, then rename.
    pub fn write_with(
        &mut self,
        name: &str,
        fill: impl FnOnce(&mut Vec<u8>) -> Result<(), CliError>,
    ) -> Result<PathBuf, CliError> {
        let mut buf = Vec::new();
        fill(&mut buf)?;
        let target = self.dir.join(name);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(|e| CliError::io(&self.dir, e))?;
        tmp.write_all(&buf).map_err(|e| CliError::io(&target, e))?;
        tmp.flush().map_err(|e| CliError::io(&target, e))?;
        tmp.persist(&target).map_err(|e| CliError::io(&target, e.error))?;
        self.written.push(name.to_string());
        Ok(target)
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<PathBuf, CliError> {
        self.write_with(name, |buf| {
            buf.extend_from_slice(text.as_bytes());
            Ok(())
        })
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Numeric(e.to_string()))?;
        text.push('\n');
        self.write_text(name, &text)
    }

    pub fn config_hash(&self) -> String {
        let mut h = Sha256::new();
        let mut field = |bytes: &[u8]| {
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(bytes);
        };
        field(self.command.as_bytes());
        field(self.options.to_string().as_bytes());
        for (_, bytes) in &self.inputs {
            field(bytes);
        }
        hex::encode(h.finalize())
    }

    /// Write `<command>.manifest.json` and return its path.
    pub fn finish(mut self) -> Result<PathBuf, CliError> {
        let manifest = RunManifest {
            command: self.command.to_string(),
            inputs: self.inputs.iter().map(|(p, _)| p.clone()).collect(),
            config_hash: self.config_hash(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            outputs: self.written.clone(),
        };
        let name = format!("{}.manifest.json", self.command);
        self.write_json(&name, &manifest)
    }
}
