use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::StructureError;
use crate::geometry::Vec3;

/// Heavy-atom elements that occur in the twenty canonical amino acids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Element {
    C,
    N,
    O,
    S,
}

impl Element {
    pub const ALL: [Element; 4] = [Element::C, Element::N, Element::O, Element::S];

    /// Single-bond covalent radius in Å.
    pub fn covalent_radius(self) -> f64 {
        match self {
            Element::C => 0.76,
            Element::N => 0.71,
            Element::O => 0.66,
            Element::S => 1.05,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::S => "S",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_symbol(symbol: &str) -> Option<Self> {
        match symbol.trim().to_ascii_uppercase().as_str() {
            "C" => Some(Element::C),
            "N" => Some(Element::N),
            "O" => Some(Element::O),
            "S" => Some(Element::S),
            _ => None,
        }
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// The twenty canonical amino acids, in alphabetical order of their
/// three-letter codes. The discriminant doubles as the one-hot index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ResidueType {
    Ala,
    Arg,
    Asn,
    Asp,
    Cys,
    Gln,
    Glu,
    Gly,
    His,
    Ile,
    Leu,
    Lys,
    Met,
    Phe,
    Pro,
    Ser,
    Thr,
    Trp,
    Tyr,
    Val,
}

impl ResidueType {
    pub const COUNT: usize = 20;

    pub const ALL: [ResidueType; 20] = [
        ResidueType::Ala,
        ResidueType::Arg,
        ResidueType::Asn,
        ResidueType::Asp,
        ResidueType::Cys,
        ResidueType::Gln,
        ResidueType::Glu,
        ResidueType::Gly,
        ResidueType::His,
        ResidueType::Ile,
        ResidueType::Leu,
        ResidueType::Lys,
        ResidueType::Met,
        ResidueType::Phe,
        ResidueType::Pro,
        ResidueType::Ser,
        ResidueType::Thr,
        ResidueType::Trp,
        ResidueType::Tyr,
        ResidueType::Val,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn code(self) -> &'static str {
        match self {
            ResidueType::Ala => "ALA",
            ResidueType::Arg => "ARG",
            ResidueType::Asn => "ASN",
            ResidueType::Asp => "ASP",
            ResidueType::Cys => "CYS",
            ResidueType::Gln => "GLN",
            ResidueType::Glu => "GLU",
            ResidueType::Gly => "GLY",
            ResidueType::His => "HIS",
            ResidueType::Ile => "ILE",
            ResidueType::Leu => "LEU",
            ResidueType::Lys => "LYS",
            ResidueType::Met => "MET",
            ResidueType::Phe => "PHE",
            ResidueType::Pro => "PRO",
            ResidueType::Ser => "SER",
            ResidueType::Thr => "THR",
            ResidueType::Trp => "TRP",
            ResidueType::Tyr => "TYR",
            ResidueType::Val => "VAL",
        }
    }

    /// One-letter amino-acid code.
    pub fn one_letter(self) -> char {
        b"ARNDCQEGHILKMFPSTWYV"[self.index()] as char
    }

    pub fn from_one_letter(c: char) -> Option<Self> {
        let c = c.to_ascii_uppercase();
        Self::ALL.iter().copied().find(|r| r.one_letter() == c)
    }

    pub fn is_aromatic(self) -> bool {
        matches!(
            self,
            ResidueType::Phe | ResidueType::Tyr | ResidueType::Trp | ResidueType::His
        )
    }
}

impl FromStr for ResidueType {
    type Err = StructureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let code = s.trim().to_ascii_uppercase();
        ResidueType::ALL
            .iter()
            .copied()
            .find(|r| r.code() == code)
            .ok_or(StructureError::NonCanonicalResidue { line: 0, name: code })
    }
}

impl fmt::Display for ResidueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtomRecord {
    pub serial: u32,
    pub atom_name: String,
    pub element: Element,
    pub residue_name: ResidueType,
    pub residue_index: i32,
    pub chain_id: char,
    pub position: Vec3,
}

/// A contiguous run of atoms sharing one residue.
#[derive(Debug, Clone, PartialEq)]
pub struct Residue {
    pub residue_type: ResidueType,
    pub chain_id: char,
    pub seq_num: i32,
    /// Half-open atom range `start..end`.
    pub start: usize,
    pub end: usize,
    /// Index of the chain segment this residue belongs to (TER starts a new one).
    pub segment: usize,
}

impl Residue {
    pub fn span(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

/// All-atom protein structure: atoms in file order, grouped into residues.
#[derive(Debug, Clone, PartialEq)]
pub struct AllAtomStructure {
    atoms: Vec<AtomRecord>,
    residues: Vec<Residue>,
}

impl AllAtomStructure {
    /// Groups `atoms` into residues by consecutive `(segment, chain, residue_index)`
    /// runs. `segments[i]` gives the chain segment of atom `i`; pass `None` to
    /// segment on chain id alone.
    pub fn from_atoms(atoms: Vec<AtomRecord>, segments: Option<&[usize]>) -> Result<Self, StructureError> {
        if atoms.is_empty() {
            return Err(StructureError::EmptyStructure);
        }
        let mut residues: Vec<Residue> = Vec::new();
        let mut segment = 0usize;
        for (i, atom) in atoms.iter().enumerate() {
            let atom_segment = match segments {
                Some(s) => s[i],
                None => {
                    if let Some(last) = residues.last() {
                        if last.chain_id != atom.chain_id {
                            segment += 1;
                        }
                    }
                    segment
                }
            };
            let same = residues.last().is_some_and(|r| {
                r.segment == atom_segment
                    && r.chain_id == atom.chain_id
                    && r.seq_num == atom.residue_index
                    && r.residue_type == atom.residue_name
            });
            if same {
                residues.last_mut().unwrap().end = i + 1;
            } else {
                residues.push(Residue {
                    residue_type: atom.residue_name,
                    chain_id: atom.chain_id,
                    seq_num: atom.residue_index,
                    start: i,
                    end: i + 1,
                    segment: atom_segment,
                });
            }
        }
        let structure = Self { atoms, residues };
        for (r, _) in structure.residues.iter().enumerate() {
            if structure.ca_index(r).is_none() {
                let res = &structure.residues[r];
                return Err(StructureError::MissingCa {
                    residue: format!("{}{}{}", res.residue_type, res.chain_id, res.seq_num),
                });
            }
        }
        Ok(structure)
    }

    pub fn atoms(&self) -> &[AtomRecord] {
        &self.atoms
    }

    pub fn residues(&self) -> &[Residue] {
        &self.residues
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn residue_count(&self) -> usize {
        self.residues.len()
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.atoms.iter().map(|a| a.position).collect()
    }

    pub fn residue_atoms(&self, residue: usize) -> &[AtomRecord] {
        &self.atoms[self.residues[residue].span()]
    }

    /// Global index of the named atom within `residue`.
    pub fn find_atom(&self, residue: usize, name: &str) -> Option<usize> {
        let res = &self.residues[residue];
        res.span().find(|&i| self.atoms[i].atom_name == name)
    }

    pub fn ca_index(&self, residue: usize) -> Option<usize> {
        self.find_atom(residue, "CA")
    }

    /// Residue index owning each atom.
    pub fn atom_residue_map(&self) -> Vec<usize> {
        let mut map = vec![0; self.atoms.len()];
        for (r, res) in self.residues.iter().enumerate() {
            for slot in &mut map[res.span()] {
                *slot = r;
            }
        }
        map
    }

    /// Whether residue `r` starts or ends its chain segment.
    pub fn is_terminal(&self, r: usize) -> bool {
        let seg = self.residues[r].segment;
        r == 0
            || r + 1 == self.residues.len()
            || self.residues[r - 1].segment != seg
            || self.residues[r + 1].segment != seg
    }

    /// Applies `f` to every atom position.
    pub fn map_positions(&self, mut f: impl FnMut(Vec3) -> Vec3) -> Self {
        let mut out = self.clone();
        for atom in &mut out.atoms {
            atom.position = f(atom.position);
        }
        out
    }

    pub fn segment_count(&self) -> usize {
        self.residues
            .iter()
            .map(|r| r.segment)
            .collect::<std::collections::BTreeSet<_>>()
            .len()
    }
}
