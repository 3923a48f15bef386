use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::backmap::{pdb_inputs, structure_stem};
use super::{read_text, write_file, write_json, PipelineError};
use crate::metrics::{evaluate_ensemble, MetricReport};
use crate::protein_io::{parse_pdb, AllAtomStructure};

/// Aggregate over every sample plus one report per reference structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationReport {
    pub aggregate: MetricReport,
    pub proteins: BTreeMap<String, MetricReport>,
}

impl EvaluationReport {
    pub fn to_table(&self) -> String {
        let mut out = format!("aggregate\n{}", self.aggregate.to_table());
        for (name, report) in &self.proteins {
            out.push_str(&format!("\n{name}\n{}", report.to_table()));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplePair {
    pub protein: String,
    pub generated: PathBuf,
    pub reference: PathBuf,
}

/// Reference stem a generated stem belongs to: `{ref}_sNN` or `{ref}`.
fn reference_stem<'a>(stem: &'a str, references: &BTreeMap<String, PathBuf>) -> Option<&'a str> {
    if let Some((base, index)) = stem.rsplit_once("_s") {
        if !index.is_empty() && index.bytes().all(|b| b.is_ascii_digit()) && references.contains_key(base) {
            return Some(base);
        }
    }
    references.contains_key(stem).then_some(stem)
}

/// Pairs every generated file with its reference. Generated files without a
/// reference are an error; references without samples are skipped.
pub fn pair_files(generated: &[PathBuf], references: &[PathBuf]) -> Result<Vec<SamplePair>, PipelineError> {
    let mut by_stem = BTreeMap::new();
    for r in references {
        if r.file_name().is_some_and(|n| n.to_string_lossy().ends_with(".cg.pdb")) {
            continue;
        }
        by_stem.insert(structure_stem(r), r.clone());
    }
    let mut pairs = Vec::new();
    let mut unpaired = Vec::new();
    for g in generated {
        let stem = structure_stem(g);
        match reference_stem(&stem, &by_stem) {
            Some(base) => pairs.push(SamplePair {
                protein: base.to_string(),
                generated: g.clone(),
                reference: by_stem[base].clone(),
            }),
            None => unpaired.push(g.display().to_string()),
        }
    }
    if !unpaired.is_empty() {
        return Err(PipelineError::UnpairedFiles(unpaired));
    }
    Ok(pairs)
}

/// Scores generated structures against their references and writes the
/// JSON report to `out` and a text table next to it.
pub fn evaluate(gen_dir: &Path, ref_dir: &Path, out: &Path) -> Result<EvaluationReport, PipelineError> {
    let generated = pdb_inputs(gen_dir)?;
    if generated.is_empty() {
        return Err(PipelineError::Data(format!("no .pdb files in {}", gen_dir.display())));
    }
    let pairs = pair_files(&generated, &pdb_inputs(ref_dir)?)?;
    let mut per_protein: BTreeMap<String, (Vec<_>, Vec<_>)> = BTreeMap::new();
    let mut reference_cache: BTreeMap<PathBuf, AllAtomStructure> = BTreeMap::new();
    for pair in &pairs {
        let generated = parse_pdb(&read_text(&pair.generated)?, true)?;
        let reference = match reference_cache.get(&pair.reference) {
            Some(r) => r.clone(),
            None => {
                let r = parse_pdb(&read_text(&pair.reference)?, true)?;
                reference_cache.insert(pair.reference.clone(), r.clone());
                r
            }
        };
        let slot = per_protein.entry(pair.protein.clone()).or_default();
        slot.0.push(generated);
        slot.1.push(reference);
    }
    let mut all = Vec::new();
    let mut proteins = BTreeMap::new();
    for (name, (generated, references)) in &per_protein {
        let (report, metrics) = evaluate_ensemble(generated, references)?;
        all.extend(metrics);
        proteins.insert(name.clone(), report);
    }
    let report = EvaluationReport {
        aggregate: MetricReport::from_pairs(&all),
        proteins,
    };
    write_json(out, &report)?;
    write_file(&out.with_extension("txt"), report.to_table().as_bytes())?;
    Ok(report)
}
