use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{cg_to_structure, create_dir, read_text, select_model, write_file, write_json, PipelineError};
use crate::geometry::{cartesian_to_internal, TopologyTable};
use crate::protein_io::{
    coarse_grain, filter_structure, parse_pdb, write_pdb, DatasetManifest, FilterConfig, FilterDecision, ManifestEntry,
    Split,
};

pub const PREPARED_MANIFEST: &str = "manifest.json";
pub const REJECTIONS: &str = "rejections.json";

/// One accepted structure and its cached derived files, relative to the
/// prepared directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreparedEntry {
    pub name: String,
    pub split: Split,
    pub source: PathBuf,
    pub structure: PathBuf,
    pub cg: PathBuf,
    pub ic: PathBuf,
    pub residues: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreparedDataset {
    pub entries: Vec<PreparedEntry>,
}

impl PreparedDataset {
    pub fn load(dir: &Path) -> Result<Self, PipelineError> {
        let path = dir.join(PREPARED_MANIFEST);
        if !path.exists() {
            return Err(PipelineError::Config(format!(
                "{} not found; run prepare first",
                path.display()
            )));
        }
        serde_json::from_str(&read_text(&path)?).map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &PreparedEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub source: PathBuf,
    pub frame: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareSummary {
    pub accepted: usize,
    pub rejected: usize,
}

/// File-name stem, made unique by a numeric suffix.
fn unique_name(entry: &ManifestEntry, used: &mut BTreeMap<String, usize>) -> String {
    let stem = entry
        .path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "entry".into());
    let stem = if entry.frame > 0 {
        format!("{stem}_f{}", entry.frame)
    } else {
        stem
    };
    let count = used.entry(stem.clone()).or_insert(0);
    *count += 1;
    if *count == 1 {
        stem
    } else {
        format!("{stem}_{}", *count - 1)
    }
}

fn prepare_entry(
    entry: &ManifestEntry,
    name: &str,
    rules: &FilterConfig,
    out: &Path,
) -> Result<Result<PreparedEntry, String>, PipelineError> {
    let text = match read_text(&entry.path) {
        Ok(t) => t,
        Err(e) => return Ok(Err(e.to_string())),
    };
    let Some(text) = select_model(&text, entry.frame) else {
        return Ok(Err(format!("frame {} not present", entry.frame)));
    };
    let structure = match parse_pdb(&text, true) {
        Ok(s) => s,
        Err(e) => return Ok(Err(e.to_string())),
    };
    if let FilterDecision::Reject(reason) = filter_structure(&structure, rules) {
        return Ok(Err(reason.to_string()));
    }
    let cg = match coarse_grain(&structure) {
        Ok(cg) => cg,
        Err(e) => return Ok(Err(e.to_string())),
    };
    let ic = match cartesian_to_internal(&structure, &cg, TopologyTable::standard()) {
        Ok(ic) => ic,
        Err(e) => return Ok(Err(e.to_string())),
    };
    let files = PreparedEntry {
        name: name.to_string(),
        split: entry.split,
        source: entry.path.clone(),
        structure: format!("{name}.pdb").into(),
        cg: format!("{name}.cg.pdb").into(),
        ic: format!("{name}.ic").into(),
        residues: cg.len(),
    };
    write_file(&out.join(&files.structure), write_pdb(&structure)?.as_bytes())?;
    write_file(&out.join(&files.cg), write_pdb(&cg_to_structure(&cg)?)?.as_bytes())?;
    write_file(&out.join(&files.ic), &ic.to_bytes())?;
    Ok(Ok(files))
}

/// Filters every manifest entry and caches the accepted ones. Per-entry
/// problems become rejections; only output failures abort.
pub fn prepare(manifest_path: &Path, filter: Option<&Path>, out: &Path) -> Result<PrepareSummary, PipelineError> {
    let manifest = DatasetManifest::load(manifest_path)?;
    let rules = match filter {
        Some(path) => FilterConfig::from_json(&read_text(path)?)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?,
        None => FilterConfig::default(),
    };
    create_dir(out)?;
    let mut used = BTreeMap::new();
    let mut dataset = PreparedDataset::default();
    let mut rejections = Vec::new();
    for entry in &manifest.entries {
        let name = unique_name(entry, &mut used);
        match prepare_entry(entry, &name, &rules, out)? {
            Ok(prepared) => {
                log::info!("accepted {}", entry.path.display());
                dataset.entries.push(prepared);
            }
            Err(reason) => {
                log::warn!("rejected {}: {reason}", entry.path.display());
                rejections.push(Rejection {
                    source: entry.path.clone(),
                    frame: entry.frame,
                    reason,
                });
            }
        }
    }
    write_json(&out.join(PREPARED_MANIFEST), &dataset)?;
    write_json(&out.join(REJECTIONS), &rejections)?;
    Ok(PrepareSummary {
        accepted: dataset.entries.len(),
        rejected: rejections.len(),
    })
}
