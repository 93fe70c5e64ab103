//! Run manifests: what was run, on which data, producing which files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_NAME: &str = "manifest.json";

/// Content hash in the style of git blobs: `sha256("blob <len>\0" + bytes)`.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

pub fn hash_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    Ok(blob_hash(&bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name with any config file expanded,
    /// enough to run the command again.
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seed: u64,
    /// Input files and their content hashes.
    pub inputs: BTreeMap<String, String>,
    /// Files written, relative to `out_dir`, and their content hashes.
    pub outputs: BTreeMap<String, String>,
    pub out_dir: PathBuf,
    pub started_unix: u64,
    pub wall_clock_seconds: f64,
    pub version: String,
}

impl RunManifest {
    /// The manifest minus wall-clock fields and the output location.
    pub fn reproducible_part(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("manifest serializes");
        let obj = v.as_object_mut().expect("object");
        for key in ["started_unix", "wall_clock_seconds", "out_dir", "argv"] {
            obj.remove(key);
        }
        v
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
    }
}

/// Collects the pieces of a manifest while a command runs.
pub struct Recorder {
    started: Instant,
    started_unix: u64,
    command: String,
    argv: Vec<String>,
    seed: u64,
    out_dir: PathBuf,
    inputs: BTreeMap<String, String>,
    outputs: Vec<PathBuf>,
}

impl Recorder {
    pub fn new(command: &str, argv: &[String], seed: u64, out_dir: &Path) -> Self {
        let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        Self {
            started: Instant::now(),
            started_unix,
            command: command.to_owned(),
            argv: argv.to_vec(),
            seed,
            out_dir: out_dir.to_owned(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        self.inputs.insert(path.display().to_string(), hash_file(path)?);
        Ok(())
    }

    /// Writes `bytes` under the output directory and records the file.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.out_dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::data(format!("{}: {e}", parent.display())))?;
        }
        fs::write(&path, bytes).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        self.outputs.push(PathBuf::from(name));
        Ok(path)
    }

    /// Records a file some other writer created under the output directory.
    pub fn written(&mut self, name: &str) {
        self.outputs.push(PathBuf::from(name));
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    /// Hashes every output and writes `manifest_name` next to them.
    pub fn finish(self, manifest_name: &str, config: serde_json::Value) -> Result<RunManifest, CliError> {
        let mut outputs = BTreeMap::new();
        for rel in &self.outputs {
            outputs.insert(rel.display().to_string(), hash_file(&self.out_dir.join(rel))?);
        }
        let manifest = RunManifest {
            command: self.command,
            argv: self.argv,
            config,
            seed: self.seed,
            inputs: self.inputs,
            outputs,
            out_dir: self.out_dir.clone(),
            started_unix: self.started_unix,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        let path = self.out_dir.join(manifest_name);
        fs::write(&path, text + "\n").map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_hash_matches_git_construction() {
        // `printf 'hello\n' | git hash-object --object-format=sha256 --stdin`
        assert_eq!(
            blob_hash(b"hello\n"),
            "2cf8d83d9ee29543b34a87727421fdecb7e3f3a183d337639025de576db9ebb4"
        );
        assert_ne!(blob_hash(b""), blob_hash(b"\0"));
    }

    #[test]
    fn records_outputs_and_drops_clock_fields() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = Recorder::new("train", &["train".into()], 3, dir.path());
        r.write("a/b.csv", b"x\n").unwrap();
        let m = r.finish(MANIFEST_NAME, serde_json::json!({"k": 1})).unwrap();
        assert_eq!(m.outputs["a/b.csv"], blob_hash(b"x\n"));
        let loaded = RunManifest::load(&dir.path().join(MANIFEST_NAME)).unwrap();
        assert_eq!(loaded, m);
        let part = m.reproducible_part();
        assert!(part.get("wall_clock_seconds").is_none() && part.get("seed").is_some());
    }
}
