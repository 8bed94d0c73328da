//! Run manifests and all-or-nothing output directories for the CLI.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_NAME: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: impl AsRef<Path>) -> std::io::Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub path: String,
    pub sha256: String,
}

/// What a command read, what it wrote, and with which settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    pub config_digest: String,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<ArtifactRef>,
    pub artifacts: Vec<ArtifactRef>,
}

impl RunManifest {
    /// `config` is hashed in its canonical JSON form.
    pub fn new(command: &str, config: &impl Serialize) -> serde_json::Result<Self> {
        Ok(RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_digest: sha256_hex(serde_json::to_string(config)?.as_bytes()),
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            artifacts: Vec::new(),
        })
    }

    pub fn seed(&mut self, name: &str, value: u64) -> &mut Self {
        self.seeds.insert(name.to_string(), value);
        self
    }

    pub fn input(&mut self, path: &Path) -> std::io::Result<&mut Self> {
        self.inputs.push(ArtifactRef { path: path.display().to_string(), sha256: sha256_file(path)? });
        Ok(self)
    }

    /// Records a produced file under its path relative to `root`.
    pub fn artifact(&mut self, root: &Path, path: &Path) -> std::io::Result<&mut Self> {
        let rel = path.strip_prefix(root).unwrap_or(path);
        self.artifacts.push(ArtifactRef { path: rel.display().to_string(), sha256: sha256_file(path)? });
        Ok(self)
    }

    /// Recomputes every artifact hash; returns the paths that differ.
    pub fn verify(&self, root: &Path) -> std::io::Result<Vec<String>> {
        let mut bad = Vec::new();
        for a in &self.artifacts {
            if sha256_file(root.join(&a.path))? != a.sha256 {
                bad.push(a.path.clone());
            }
        }
        Ok(bad)
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)
    }

    pub fn read(path: &Path) -> std::io::Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Tracks files a command creates and deletes them again unless committed.
#[derive(Debug)]
pub struct OutputSet {
    root: PathBuf,
    created_root: Option<PathBuf>,
    files: Vec<PathBuf>,
    committed: bool,
}

impl OutputSet {
    pub fn create(root: &Path) -> std::io::Result<Self> {
        let mut created_root = None;
        if !root.exists() {
            let mut top = root.to_path_buf();
            while let Some(parent) = top.parent() {
                if parent.as_os_str().is_empty() || parent.exists() {
                    break;
                }
                top = parent.to_path_buf();
            }
            std::fs::create_dir_all(root)?;
            created_root = Some(top);
        }
        Ok(OutputSet { root: root.to_path_buf(), created_root, files: Vec::new(), committed: false })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Registers `rel` (relative to the root) and returns its full path.
    pub fn path(&mut self, rel: impl AsRef<Path>) -> PathBuf {
        let p = self.root.join(rel);
        self.files.push(p.clone());
        p
    }

    pub fn files(&self) -> &[PathBuf] {
        &self.files
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for OutputSet {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for f in self.files.iter().rev() {
            if f.is_dir() {
                let _ = std::fs::remove_dir_all(f);
            } else {
                let _ = std::fs::remove_file(f);
            }
        }
        if let Some(top) = &self.created_root {
            let _ = std::fs::remove_dir_all(top);
        }
    }
}
