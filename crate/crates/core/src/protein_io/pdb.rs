//! Fixed-column PDB reader and writer (ATOM/HETATM/TER/END subset).
//!
//! Column positions follow the v3.3 layout. Only the first model of a
//! multi-model file is read.

use std::collections::HashSet;
use std::fmt::Write as _;

use super::types::{AllAtomStructure, AtomRecord, Element};
use super::{ResidueType, StructureError};

/// Returns the 1-based inclusive column range `[from, to]` of `line`, or `None`
/// when the line is too short or the range splits a multi-byte character.
fn columns(line: &str, from: usize, to: usize) -> Option<&str> {
    let end = to.min(line.len());
    if from > end {
        return None;
    }
    line.get(from - 1..end)
}

fn malformed(line: usize, reason: impl Into<String>) -> StructureError {
    StructureError::MalformedRecord {
        line,
        reason: reason.into(),
    }
}

fn parse_coord(line: &str, line_no: usize, from: usize, axis: &str) -> Result<f64, StructureError> {
    let field = columns(line, from, from + 7)
        .filter(|s| s.len() == 8)
        .ok_or_else(|| malformed(line_no, format!("truncated {axis} coordinate")))?;
    let value: f64 = field
        .trim()
        .parse()
        .map_err(|_| malformed(line_no, format!("unparseable {axis} coordinate {field:?}")))?;
    if !value.is_finite() {
        return Err(malformed(line_no, format!("non-finite {axis} coordinate")));
    }
    Ok(value)
}

/// Element from columns 77-78, falling back to the first letter of the atom name.
fn element_symbol<'a>(line: &'a str, atom_name: &'a str) -> &'a str {
    if let Some(sym) = columns(line, 77, 78).map(str::trim) {
        if !sym.is_empty() {
            return sym;
        }
    }
    let trimmed = atom_name.trim_start_matches(|c: char| c.is_ascii_digit());
    trimmed.get(..1).unwrap_or("")
}

/// Parses PDB text into an [`AllAtomStructure`].
///
/// HETATM records and alternate locations other than blank or `A` are skipped.
/// The C-terminal `OXT` oxygen is dropped, since the residue topology only
/// carries backbone `O`. Hydrogens are dropped when `drop_hydrogens` is set and
/// rejected otherwise.
pub fn parse_pdb(text: &str, drop_hydrogens: bool) -> Result<AllAtomStructure, StructureError> {
    let mut atoms = Vec::new();
    let mut segments = Vec::new();
    let mut segment = 0usize;
    let mut seen_in_segment = false;
    let mut seen_names: HashSet<(usize, char, i32, String)> = HashSet::new();

    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let record = line.get(..6.min(line.len())).unwrap_or("");
        let record = record.trim_end();
        match record {
            "END" | "ENDMDL" => break,
            "TER" => {
                if seen_in_segment {
                    segment += 1;
                    seen_in_segment = false;
                }
                continue;
            }
            "ATOM" => {}
            _ => continue,
        }
        if line.len() < 54 {
            return Err(malformed(line_no, "ATOM record shorter than 54 columns"));
        }
        let field = |from, to, what: &str| {
            columns(line, from, to).ok_or_else(|| malformed(line_no, format!("bad {what} field")))
        };
        let alt_loc = field(17, 17, "altLoc")?;
        if !matches!(alt_loc, " " | "A") {
            continue;
        }
        let atom_name = field(13, 16, "atom name")?.trim().to_string();
        if atom_name.is_empty() {
            return Err(malformed(line_no, "empty atom name"));
        }
        let symbol = element_symbol(line, &atom_name).to_ascii_uppercase();
        if symbol == "H" || symbol == "D" {
            if drop_hydrogens {
                continue;
            }
            return Err(StructureError::UnknownElement { line: line_no, symbol });
        }
        let element = Element::from_symbol(&symbol).ok_or_else(|| StructureError::UnknownElement {
            line: line_no,
            symbol: symbol.clone(),
        })?;
        let res_name = field(18, 20, "residue name")?.trim();
        let residue_name: ResidueType = res_name.parse().map_err(|_| StructureError::NonCanonicalResidue {
            line: line_no,
            name: res_name.to_string(),
        })?;
        if atom_name == "OXT" {
            continue;
        }
        let serial_field = field(7, 11, "serial")?.trim();
        let serial: u32 = if serial_field.is_empty() {
            atoms.len() as u32 + 1
        } else {
            serial_field
                .parse()
                .map_err(|_| malformed(line_no, format!("unparseable serial {serial_field:?}")))?
        };
        let chain_id = field(22, 22, "chain id")?.chars().next().unwrap_or(' ');
        let seq_field = field(23, 26, "residue sequence number")?.trim();
        let residue_index: i32 = seq_field
            .parse()
            .map_err(|_| malformed(line_no, format!("unparseable residue number {seq_field:?}")))?;
        let insertion = field(27, 27, "insertion code")?.chars().next().unwrap_or(' ');
        if insertion != ' ' {
            return Err(malformed(line_no, "insertion codes are not supported"));
        }
        let x = parse_coord(line, line_no, 31, "x")?;
        let y = parse_coord(line, line_no, 39, "y")?;
        let z = parse_coord(line, line_no, 47, "z")?;

        // Blank and 'A' variants of the same atom: keep the first seen.
        let key = (segment, chain_id, residue_index, atom_name.clone());
        if !seen_names.insert(key) {
            continue;
        }
        atoms.push(AtomRecord {
            serial,
            atom_name,
            element,
            residue_name,
            residue_index,
            chain_id,
            position: [x, y, z],
        });
        segments.push(segment);
        seen_in_segment = true;
    }
    AllAtomStructure::from_atoms(atoms, Some(&segments))
}

fn format_atom_name(name: &str) -> String {
    if name.len() >= 4 {
        name[..4].to_string()
    } else {
        format!(" {name:<3}")
    }
}

/// Serializes a structure as PDB text with 3-decimal coordinates, a TER record
/// after each chain segment and a closing END.
pub fn write_pdb(structure: &AllAtomStructure) -> Result<String, StructureError> {
    if structure.atom_count() == 0 {
        return Err(StructureError::EmptyStructure);
    }
    let mut out = String::with_capacity(structure.atom_count() * 81);
    let residues = structure.residues();
    for (r, res) in residues.iter().enumerate() {
        for atom in structure.residue_atoms(r) {
            let [x, y, z] = atom.position;
            writeln!(
                out,
                "ATOM  {:>5} {} {:>3} {}{:>4}    {:>8.3}{:>8.3}{:>8.3}{:>6.2}{:>6.2}          {:>2}",
                atom.serial % 100_000,
                format_atom_name(&atom.atom_name),
                atom.residue_name.code(),
                atom.chain_id,
                atom.residue_index,
                x,
                y,
                z,
                1.0,
                0.0,
                atom.element.symbol(),
            )
            .unwrap();
        }
        let last_of_segment = residues.get(r + 1).is_none_or(|n| n.segment != res.segment);
        if last_of_segment {
            out.push_str("TER\n");
        }
    }
    out.push_str("END\n");
    Ok(out)
}
