use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::StructureError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub split: Split,
    #[serde(default)]
    pub frame: u64,
}

/// JSON array of `{path, split, frame}` entries.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Parses manifest JSON without touching the filesystem.
    pub fn from_json(text: &str) -> Result<Self, StructureError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Loads a manifest file. Relative entry paths are resolved against the
    /// manifest's directory and must exist.
    pub fn load(path: &Path) -> Result<Self, StructureError> {
        let text = std::fs::read_to_string(path)?;
        let mut manifest = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for entry in &mut manifest.entries {
            if entry.path.is_relative() {
                entry.path = base.join(&entry.path);
            }
            if !entry.path.exists() {
                return Err(StructureError::MissingPath {
                    path: entry.path.clone(),
                });
            }
        }
        Ok(manifest)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }
}
