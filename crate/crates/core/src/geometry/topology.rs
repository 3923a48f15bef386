//! Heavy-atom placement order for the twenty amino acids.
//!
//! Every non-Cα heavy atom is placed from three reference points
//! `[parent, grandparent, great-grandparent]`. Backbone N and C hang off the
//! Cα triplet of the chain; O hangs off C; side chains grow from (N, Cα, C).

use std::sync::OnceLock;

use crate::protein_io::{AllAtomStructure, BondGraph, Element, ResidueType};

/// A reference point used when placing an atom.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtomRef {
    /// An earlier slot of the same residue.
    Slot(usize),
    /// The residue's own Cα bead.
    Ca,
    /// The preceding anchor bead (Cα of residue i-1, or a substitute at termini).
    PrevCa,
    /// The following anchor bead (Cα of residue i+1, or a substitute at termini).
    NextCa,
}

#[derive(Debug, Clone)]
pub struct TopologyAtom {
    pub name: &'static str,
    pub element: Element,
    /// `[parent, grandparent, great-grandparent]`.
    pub refs: [AtomRef; 3],
}

#[derive(Debug, Clone)]
pub struct ResidueTopology {
    pub residue_type: ResidueType,
    /// Placement order; the slot index is the position in this list.
    pub atoms: Vec<TopologyAtom>,
    /// Ring-closing bonds not implied by the parent links, as slot pairs.
    pub ring_closures: Vec<(usize, usize)>,
}

impl ResidueTopology {
    pub fn slot_of(&self, name: &str) -> Option<usize> {
        self.atoms.iter().position(|a| a.name == name)
    }

    pub fn slot_count(&self) -> usize {
        self.atoms.len()
    }

    /// Intra-residue covalent bonds as name pairs, Cα included.
    pub fn bonds(&self) -> Vec<(&'static str, &'static str)> {
        let mut out = Vec::new();
        for atom in &self.atoms {
            let parent = match atom.refs[0] {
                AtomRef::Slot(s) => self.atoms[s].name,
                AtomRef::Ca => "CA",
                AtomRef::PrevCa | AtomRef::NextCa => unreachable!("parent is always local"),
            };
            out.push((parent, atom.name));
        }
        for &(a, b) in &self.ring_closures {
            out.push((self.atoms[a].name, self.atoms[b].name));
        }
        out
    }

    /// Names of the aromatic ring members, if any.
    pub fn ring_atoms(&self) -> &'static [&'static str] {
        match self.residue_type {
            ResidueType::Phe | ResidueType::Tyr => &["CG", "CD1", "CD2", "CE1", "CE2", "CZ"],
            ResidueType::His => &["CG", "ND1", "CD2", "CE1", "NE2"],
            ResidueType::Trp => &["CG", "CD1", "CD2", "NE1", "CE2", "CE3", "CZ2", "CZ3", "CH2"],
            _ => &[],
        }
    }
}

/// Lookup table over all twenty residue types.
#[derive(Debug, Clone)]
pub struct TopologyTable {
    residues: Vec<ResidueTopology>,
}

/// Side-chain spec: `(name, element, parent, grandparent, great-grandparent)`
/// with references given by atom name.
type SideChainSpec = &'static [(&'static str, Element, &'static str, &'static str, &'static str)];

fn side_chain(residue: ResidueType) -> (SideChainSpec, &'static [(&'static str, &'static str)]) {
    use Element::*;
    match residue {
        ResidueType::Ala => (&[("CB", C, "CA", "N", "C")], &[]),
        ResidueType::Arg => (
            &[
                ("CB", C, "CA", "N", "C"),
                ("CG", C, "CB", "CA", "N"),
                ("CD", C, "CG", "CB", "CA"),
                ("NE", N, "CD", "CG", "CB"),
                ("CZ", C, "NE", "CD", "CG"),
                ("NH1", N, "CZ", "NE", "CD"),
                ("NH2", N, "CZ", "NE", "CD"),
            ],
            &[],
        ),
        ResidueType::Asn => (
            &[
                ("CB", C, "CA", "N", "C"),
                ("CG", C, "CB", "CA", "N"),
                ("OD1", O, "CG", "CB", "CA"),
                ("ND2", N, "CG", "CB", "CA"),
            ],
            &[],
        ),
        ResidueType::Asp => (
            &[
                ("CB", C, "CA", "N", "C"),
                ("CG", C, "CB", "CA", "N"),
                ("OD1", O, "CG", "CB", "CA"),
                ("OD2", O, "CG", "CB", "CA"),
            ],
            &[],
        ),
        ResidueType::Cys => (&[("CB", C, "CA", "N", "C"), ("SG", S, "CB", "CA", "N")], &[]),
        ResidueType::Gln => (
            &[
                ("CB", C, "CA", "N", "C"),
                ("CG", C, "CB", "CA", "N"),
                ("CD", C, "CG", "CB", "CA"),
                ("OE1", O, "CD", "CG", "CB"),
                ("NE2", N, "CD", "CG", "CB"),
            ],
            &[],
        ),
        ResidueType::Glu => (
            &[
                ("CB", C, "CA", "N", "C"),
                ("CG", C, "CB", "CA", "N"),
                ("CD", C, "CG", "CB", "CA"),
                ("OE1", O, "CD", "CG", "CB"),
                ("OE2", O, "CD", "CG", "CB"),
            ],
            &[],
        ),
        ResidueType::Gly => (&[], &[]),
        ResidueType::His => (
            &[
                ("CB", C, "CA", "N", "C"),
                ("CG", C, "CB", "CA", "N"),
                ("ND1", N, "CG", "CB", "CA"),
                ("CD2", C, "CG", "CB", "CA"),
                ("CE1", C, "ND1", "CG", "CB"),
                ("NE2", N, "CD2", "CG", "CB"),
            ],
            &[("CE1", "NE2")],
        ),
        ResidueType::Ile => (
            &[
                ("CB", C, "CA", "N", "C"),
                ("CG1", C, "CB", "CA", "N"),
                ("CG2", C, "CB", "CA", "N"),
                ("CD1", C, "CG1", "CB", "CA"),
            ],
            &[],
        ),
        ResidueType::Leu => (
            &[
                ("CB", C, "CA", "N", "C"),
                ("CG", C, "CB", "CA", "N"),
                ("CD1", C, "CG", "CB", "CA"),
                ("CD2", C, "CG", "CB", "CA"),
            ],
            &[],
        ),
        ResidueType::Lys => (
            &[
                ("CB", C, "CA", "N", "C"),
                ("CG", C, "CB", "CA", "N"),
                ("CD", C, "CG", "CB", "CA"),
                ("CE", C, "CD", "CG", "CB"),
                ("NZ", N, "CE", "CD", "CG"),
            ],
            &[],
        ),
        ResidueType::Met => (
            &[
                ("CB", C, "CA", "N", "C"),
                ("CG", C, "CB", "CA", "N"),
                ("SD", S, "CG", "CB", "CA"),
                ("CE", C, "SD", "CG", "CB"),
            ],
            &[],
        ),
        ResidueType::Phe => (
            &[
                ("CB", C, "CA", "N", "C"),
                ("CG", C, "CB", "CA", "N"),
                ("CD1", C, "CG", "CB", "CA"),
                ("CD2", C, "CG", "CB", "CA"),
                ("CE1", C, "CD1", "CG", "CB"),
                ("CE2", C, "CD2", "CG", "CB"),
                ("CZ", C, "CE1", "CD1", "CG"),
            ],
            &[("CE2", "CZ")],
        ),
        ResidueType::Pro => (
            &[
                ("CB", C, "CA", "N", "C"),
                ("CG", C, "CB", "CA", "N"),
                ("CD", C, "CG", "CB", "CA"),
            ],
            &[("N", "CD")],
        ),
        ResidueType::Ser => (&[("CB", C, "CA", "N", "C"), ("OG", O, "CB", "CA", "N")], &[]),
        ResidueType::Thr => (
            &[
                ("CB", C, "CA", "N", "C"),
                ("OG1", O, "CB", "CA", "N"),
                ("CG2", C, "CB", "CA", "N"),
            ],
            &[],
        ),
        ResidueType::Trp => (
            &[
                ("CB", C, "CA", "N", "C"),
                ("CG", C, "CB", "CA", "N"),
                ("CD1", C, "CG", "CB", "CA"),
                ("CD2", C, "CG", "CB", "CA"),
                ("NE1", N, "CD1", "CG", "CB"),
                ("CE2", C, "CD2", "CG", "CB"),
                ("CE3", C, "CD2", "CG", "CB"),
                ("CZ2", C, "CE2", "CD2", "CG"),
                ("CZ3", C, "CE3", "CD2", "CG"),
                ("CH2", C, "CZ2", "CE2", "CD2"),
            ],
            &[("NE1", "CE2"), ("CZ3", "CH2")],
        ),
        ResidueType::Tyr => (
            &[
                ("CB", C, "CA", "N", "C"),
                ("CG", C, "CB", "CA", "N"),
                ("CD1", C, "CG", "CB", "CA"),
                ("CD2", C, "CG", "CB", "CA"),
                ("CE1", C, "CD1", "CG", "CB"),
                ("CE2", C, "CD2", "CG", "CB"),
                ("CZ", C, "CE1", "CD1", "CG"),
                ("OH", O, "CZ", "CE1", "CD1"),
            ],
            &[("CE2", "CZ")],
        ),
        ResidueType::Val => (
            &[
                ("CB", C, "CA", "N", "C"),
                ("CG1", C, "CB", "CA", "N"),
                ("CG2", C, "CB", "CA", "N"),
            ],
            &[],
        ),
    }
}

fn build_residue(residue: ResidueType) -> ResidueTopology {
    let mut atoms = vec![
        TopologyAtom {
            name: "N",
            element: Element::N,
            refs: [AtomRef::Ca, AtomRef::PrevCa, AtomRef::NextCa],
        },
        TopologyAtom {
            name: "C",
            element: Element::C,
            refs: [AtomRef::Ca, AtomRef::NextCa, AtomRef::PrevCa],
        },
        TopologyAtom {
            name: "O",
            element: Element::O,
            refs: [AtomRef::Slot(1), AtomRef::Ca, AtomRef::NextCa],
        },
    ];
    let (chain, closures) = side_chain(residue);
    let resolve = |atoms: &[TopologyAtom], name: &str| -> AtomRef {
        if name == "CA" {
            return AtomRef::Ca;
        }
        let slot = atoms
            .iter()
            .position(|a| a.name == name)
            .unwrap_or_else(|| panic!("{residue}: reference {name} placed before use"));
        AtomRef::Slot(slot)
    };
    for &(name, element, p, gp, ggp) in chain {
        let refs = [resolve(&atoms, p), resolve(&atoms, gp), resolve(&atoms, ggp)];
        atoms.push(TopologyAtom { name, element, refs });
    }
    let ring_closures = closures
        .iter()
        .map(|&(a, b)| {
            let slot = |n: &str| atoms.iter().position(|x| x.name == n).unwrap();
            (slot(a), slot(b))
        })
        .collect();
    ResidueTopology {
        residue_type: residue,
        atoms,
        ring_closures,
    }
}

impl TopologyTable {
    /// The canonical table, built once.
    pub fn standard() -> &'static TopologyTable {
        static TABLE: OnceLock<TopologyTable> = OnceLock::new();
        TABLE.get_or_init(|| TopologyTable {
            residues: ResidueType::ALL.iter().map(|&r| build_residue(r)).collect(),
        })
    }

    pub fn residue(&self, residue: ResidueType) -> &ResidueTopology {
        &self.residues[residue.index()]
    }

    /// Boolean slot mask of a residue type, padded to 13 slots.
    pub fn slot_mask(&self, residue: ResidueType) -> [bool; super::SLOTS_PER_RESIDUE] {
        let mut mask = [false; super::SLOTS_PER_RESIDUE];
        for m in mask.iter_mut().take(self.residue(residue).slot_count()) {
            *m = true;
        }
        mask
    }
}

/// Covalent bonds implied by residue templates plus peptide bonds between
/// consecutive residues of a chain segment. Atoms absent from the structure
/// are skipped.
pub fn topology_bond_graph(structure: &AllAtomStructure, topo: &TopologyTable) -> BondGraph {
    let mut graph = BondGraph::new(structure.atom_count());
    let residues = structure.residues();
    for (r, res) in residues.iter().enumerate() {
        for (a, b) in topo.residue(res.residue_type).bonds() {
            if let (Some(i), Some(j)) = (structure.find_atom(r, a), structure.find_atom(r, b)) {
                graph.add_edge(i, j);
            }
        }
        if residues.get(r + 1).is_some_and(|n| n.segment == res.segment) {
            if let (Some(i), Some(j)) = (structure.find_atom(r, "C"), structure.find_atom(r + 1, "N")) {
                graph.add_edge(i, j);
            }
        }
    }
    graph
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SLOTS_PER_RESIDUE;

    #[test]
    fn slot_counts_match_heavy_atom_counts() {
        let t = TopologyTable::standard();
        assert_eq!(t.residue(ResidueType::Gly).slot_count(), 3);
        assert_eq!(t.residue(ResidueType::Trp).slot_count(), SLOTS_PER_RESIDUE);
        assert_eq!(t.residue(ResidueType::Ala).slot_count(), 4);
        assert_eq!(t.residue(ResidueType::Tyr).slot_count(), 11);
        for r in ResidueType::ALL {
            assert!(t.residue(r).slot_count() <= SLOTS_PER_RESIDUE);
        }
    }

    #[test]
    fn references_precede_their_atoms() {
        let t = TopologyTable::standard();
        for r in ResidueType::ALL {
            for (slot, atom) in t.residue(r).atoms.iter().enumerate() {
                for rf in atom.refs {
                    if let AtomRef::Slot(s) = rf {
                        assert!(s < slot, "{r} {}: ref slot {s}", atom.name);
                    }
                }
                assert!(matches!(atom.refs[0], AtomRef::Slot(_) | AtomRef::Ca));
            }
        }
    }

    #[test]
    fn bond_count_is_heavy_atoms_minus_one_plus_rings() {
        let t = TopologyTable::standard();
        // A tree over the slots plus CA has one edge per slot.
        assert_eq!(t.residue(ResidueType::Phe).bonds().len(), 10 + 1);
        assert_eq!(t.residue(ResidueType::Trp).bonds().len(), 13 + 2);
        assert_eq!(t.residue(ResidueType::Gly).bonds().len(), 3);
    }
}
