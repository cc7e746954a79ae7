use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.toml";

/// Output files held in memory until they are either written or checked.
#[derive(Debug, Default)]
pub struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: Vec<ManifestEntry>,
}

fn digest(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}

impl Artifacts {
    pub fn add(&mut self, path: impl Into<String>, data: impl Into<Vec<u8>>) {
        self.files.push((path.into(), data.into()));
    }

    /// Nest another set of artifacts under `dir`.
    pub fn extend_under(&mut self, dir: &str, other: Artifacts) {
        for (p, d) in other.files {
            self.files.push((format!("{dir}/{p}"), d));
        }
    }

    pub fn manifest(&self) -> Manifest {
        let mut files: Vec<ManifestEntry> = self
            .files
            .iter()
            .map(|(p, d)| ManifestEntry { path: p.clone(), sha256: digest(d), bytes: d.len() })
            .collect();
        files.sort_by(|a, b| a.path.cmp(&b.path));
        Manifest { files }
    }

    pub fn write(&self, root: &Path) -> Result<Vec<PathBuf>> {
        let mut written = Vec::with_capacity(self.files.len() + 1);
        for (p, d) in &self.files {
            let path = root.join(p);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
            }
            fs::write(&path, d).with_context(|| format!("writing {}", path.display()))?;
            written.push(path);
        }
        let manifest = toml::to_string(&self.manifest())?;
        let path = root.join(MANIFEST);
        fs::write(&path, manifest).with_context(|| format!("writing {}", path.display()))?;
        written.push(path);
        Ok(written)
    }

    /// Differences between these artifacts and the manifest stored under `root`.
    pub fn check(&self, root: &Path) -> Result<Vec<String>> {
        let path = root.join(MANIFEST);
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let stored: Manifest = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let fresh = self.manifest();
        let mut problems = Vec::new();
        for e in &fresh.files {
            match stored.files.iter().find(|s| s.path == e.path) {
                None => problems.push(format!("{}: not in manifest", e.path)),
                Some(s) if s.sha256 != e.sha256 => {
                    problems.push(format!("{}: sha256 {} differs from manifest {}", e.path, e.sha256, s.sha256))
                }
                Some(_) => {}
            }
        }
        for s in &stored.files {
            if !fresh.files.iter().any(|e| e.path == s.path) {
                problems.push(format!("{}: listed in manifest but not produced", s.path));
            }
        }
        Ok(problems)
    }
}
