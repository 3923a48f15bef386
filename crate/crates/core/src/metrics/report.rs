use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{clash_score, gdr_from_graphs, ged_ratio, interaction_score, MetricError};
use crate::geometry::rmsd_direct;
use crate::protein_io::{build_bond_graph, AllAtomStructure, DEFAULT_BOND_TOLERANCE};

/// Mean, sample standard deviation and the per-structure values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    pub per_structure: Vec<f64>,
}

impl MetricSummary {
    pub fn from_values(values: Vec<f64>) -> Self {
        let n = values.len();
        let mean = if n == 0 {
            0.0
        } else {
            values.iter().sum::<f64>() / n as f64
        };
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self {
            mean,
            std,
            per_structure: values,
        }
    }
}

/// Metrics of one generated structure against its reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub rmsd: f64,
    pub ged_ratio: f64,
    pub clash_permille: f64,
    pub interaction_score: f64,
    pub gdr_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rmsd: MetricSummary,
    pub ged_ratio: MetricSummary,
    pub clash_permille: MetricSummary,
    pub interaction_score: MetricSummary,
    pub gdr_percent: MetricSummary,
}

impl MetricReport {
    pub fn from_pairs(pairs: &[PairMetrics]) -> Self {
        let column = |f: fn(&PairMetrics) -> f64| MetricSummary::from_values(pairs.iter().map(f).collect());
        Self {
            rmsd: column(|p| p.rmsd),
            ged_ratio: column(|p| p.ged_ratio),
            clash_permille: column(|p| p.clash_permille),
            interaction_score: column(|p| p.interaction_score),
            gdr_percent: column(|p| p.gdr_percent),
        }
    }

    pub fn rows(&self) -> [(&'static str, &MetricSummary); 5] {
        [
            ("RMSD (Å)", &self.rmsd),
            ("GED ratio", &self.ged_ratio),
            ("Clash (‰)", &self.clash_permille),
            ("Interaction", &self.interaction_score),
            ("GDR (%)", &self.gdr_percent),
        ]
    }

    /// Aligned plain-text table with one row per metric.
    pub fn to_table(&self) -> String {
        let rows = self.rows();
        let name_width = rows.iter().map(|(n, _)| n.chars().count()).max().unwrap_or(0);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<name_width$}  {:>12}  {:>12}  {:>5}",
            "Metric", "Mean", "Std", "N"
        );
        for (name, s) in rows {
            let pad = name_width - name.chars().count();
            let _ = writeln!(
                out,
                "{name}{}  {:>12.4}  {:>12.4}  {:>5}",
                " ".repeat(pad),
                s.mean,
                s.std,
                s.per_structure.len()
            );
        }
        out
    }
}

/// Restricts both structures to the atoms they share, keyed by residue
/// position and atom name, in reference order.
pub fn match_atoms(
    generated: &AllAtomStructure,
    reference: &AllAtomStructure,
) -> Result<(AllAtomStructure, AllAtomStructure), MetricError> {
    let map = structure_keys(generated);
    let mut gen_atoms = Vec::new();
    let mut ref_atoms = Vec::new();
    let mut segments = Vec::new();
    let residue_of = reference.atom_residue_map();
    for (i, atom) in reference.atoms().iter().enumerate() {
        if let Some(&g) = map.get(&(residue_of[i], atom.atom_name.as_str())) {
            gen_atoms.push(generated.atoms()[g].clone());
            ref_atoms.push(atom.clone());
            segments.push(reference.residues()[residue_of[i]].segment);
        }
    }
    if ref_atoms.is_empty() {
        return Err(MetricError::NoCommonAtoms);
    }
    let build = |atoms| {
        AllAtomStructure::from_atoms(atoms, Some(&segments))
            .map_err(|e| MetricError::Geometry(crate::geometry::GeometryError::DegenerateGeometry(e.to_string())))
    };
    Ok((build(gen_atoms)?, build(ref_atoms)?))
}

fn structure_keys(s: &AllAtomStructure) -> HashMap<(usize, &str), usize> {
    let residue_of = s.atom_residue_map();
    s.atoms()
        .iter()
        .enumerate()
        .map(|(i, a)| ((residue_of[i], a.atom_name.as_str()), i))
        .collect()
}

fn pair_metrics(generated: &AllAtomStructure, reference: &AllAtomStructure) -> Result<PairMetrics, MetricError> {
    let (generated, reference) = match_atoms(generated, reference)?;
    let gen_bonds = build_bond_graph(&generated, DEFAULT_BOND_TOLERANCE);
    let ref_bonds = build_bond_graph(&reference, DEFAULT_BOND_TOLERANCE);
    Ok(PairMetrics {
        rmsd: rmsd_direct(&generated.positions(), &reference.positions())?,
        ged_ratio: ged_ratio(&gen_bonds, &ref_bonds)?,
        clash_permille: clash_score(&generated)?,
        interaction_score: interaction_score(&generated),
        gdr_percent: gdr_from_graphs(&gen_bonds, &ref_bonds)?,
    })
}

/// Metrics for each `(generated[i], references[i])` pair, summarized. RMSD is
/// taken without superposition since both share the Cα frame.
pub fn evaluate_ensemble(
    generated: &[AllAtomStructure],
    references: &[AllAtomStructure],
) -> Result<(MetricReport, Vec<PairMetrics>), MetricError> {
    if generated.len() != references.len() {
        return Err(MetricError::LengthMismatch {
            generated: generated.len(),
            references: references.len(),
        });
    }
    let pairs = generated
        .iter()
        .zip(references)
        .map(|(g, r)| pair_metrics(g, r))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((MetricReport::from_pairs(&pairs), pairs))
}
