//! Idealized peptides built from standard bond geometry.

use std::collections::HashMap;

use super::topology::TopologyTable;
use super::{distance, place_atom, GeometryError, Vec3};
use crate::protein_io::{AllAtomStructure, AtomRecord, Element, ResidueType};

/// Backbone torsions in degrees, shared by every residue except proline,
/// whose φ is fixed at -65°.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackboneAngles {
    pub phi: f64,
    pub psi: f64,
    pub omega: f64,
}

impl BackboneAngles {
    pub const EXTENDED: BackboneAngles = BackboneAngles {
        phi: -120.0,
        psi: 130.0,
        omega: 180.0,
    };
    pub const HELIX: BackboneAngles = BackboneAngles {
        phi: -57.0,
        psi: -47.0,
        omega: 180.0,
    };
}

const N_CA: f64 = 1.458;
const CA_C: f64 = 1.525;
const C_N: f64 = 1.329;
const C_O: f64 = 1.231;
const N_CA_C: f64 = 111.2;
const CA_C_N: f64 = 116.2;
const C_N_CA: f64 = 121.7;
const CA_C_O: f64 = 120.5;
const PRO_PHI: f64 = -65.0;

/// `(name, bond, angle°, torsion°)` for side-chain atoms after CB.
fn side_chain_geometry(residue: ResidueType) -> &'static [(&'static str, f64, f64, f64)] {
    use ResidueType::*;
    match residue {
        Ala | Gly => &[],
        Arg => &[
            ("CG", 1.52, 114.1, -60.0),
            ("CD", 1.52, 111.3, 180.0),
            ("NE", 1.46, 112.0, 180.0),
            ("CZ", 1.33, 124.2, 180.0),
            ("NH1", 1.33, 120.0, 0.0),
            ("NH2", 1.33, 120.0, 180.0),
        ],
        Asn => &[
            ("CG", 1.52, 112.6, -60.0),
            ("OD1", 1.23, 120.8, -60.0),
            ("ND2", 1.33, 116.4, 120.0),
        ],
        Asp => &[
            ("CG", 1.52, 113.0, -60.0),
            ("OD1", 1.25, 119.0, -60.0),
            ("OD2", 1.25, 119.0, 120.0),
        ],
        Cys => &[("SG", 1.81, 114.0, -60.0)],
        Gln => &[
            ("CG", 1.52, 114.0, -60.0),
            ("CD", 1.52, 112.6, 180.0),
            ("OE1", 1.23, 120.8, -60.0),
            ("NE2", 1.33, 116.4, 120.0),
        ],
        Glu => &[
            ("CG", 1.52, 114.0, -60.0),
            ("CD", 1.52, 113.0, 180.0),
            ("OE1", 1.25, 119.0, -60.0),
            ("OE2", 1.25, 119.0, 120.0),
        ],
        His => &[
            ("CG", 1.50, 113.7, -60.0),
            ("ND1", 1.36, 126.0, 90.0),
            ("CD2", 1.36, 126.0, -90.0),
            ("CE1", 1.36, 108.0, 180.0),
            ("NE2", 1.36, 108.0, 180.0),
        ],
        Ile => &[
            ("CG1", 1.53, 110.4, -60.0),
            ("CG2", 1.53, 110.5, 180.0),
            ("CD1", 1.52, 113.8, 180.0),
        ],
        Leu => &[
            ("CG", 1.53, 116.3, -60.0),
            ("CD1", 1.52, 110.5, 180.0),
            ("CD2", 1.52, 110.5, 60.0),
        ],
        Lys => &[
            ("CG", 1.52, 114.0, -60.0),
            ("CD", 1.52, 111.0, 180.0),
            ("CE", 1.52, 111.0, 180.0),
            ("NZ", 1.49, 111.9, 180.0),
        ],
        Met => &[
            ("CG", 1.52, 114.0, -60.0),
            ("SD", 1.81, 112.7, 180.0),
            ("CE", 1.79, 100.9, 180.0),
        ],
        Phe => &[
            ("CG", 1.50, 114.0, -60.0),
            ("CD1", 1.39, 120.0, 90.0),
            ("CD2", 1.39, 120.0, -90.0),
            ("CE1", 1.39, 120.0, 180.0),
            ("CE2", 1.39, 120.0, 180.0),
            ("CZ", 1.39, 120.0, 0.0),
        ],
        // CD torsion is solved for ring closure.
        Pro => &[("CG", 1.50, 104.5, 30.0), ("CD", 1.50, 105.5, f64::NAN)],
        Ser => &[("OG", 1.42, 111.0, -60.0)],
        Thr => &[("OG1", 1.43, 109.5, -60.0), ("CG2", 1.52, 111.5, 180.0)],
        Trp => &[
            ("CG", 1.50, 114.0, -60.0),
            ("CD1", 1.40, 126.0, 90.0),
            ("CD2", 1.40, 126.0, -90.0),
            ("NE1", 1.40, 108.0, 180.0),
            ("CE2", 1.40, 108.0, 180.0),
            ("CE3", 1.40, 132.0, 0.0),
            ("CZ2", 1.40, 120.0, 180.0),
            ("CZ3", 1.40, 120.0, 180.0),
            ("CH2", 1.40, 120.0, 0.0),
        ],
        Tyr => &[
            ("CG", 1.50, 114.0, -60.0),
            ("CD1", 1.39, 120.0, 90.0),
            ("CD2", 1.39, 120.0, -90.0),
            ("CE1", 1.39, 120.0, 180.0),
            ("CE2", 1.39, 120.0, 180.0),
            ("CZ", 1.39, 120.0, 0.0),
            ("OH", 1.36, 120.0, 180.0),
        ],
        Val => &[("CG1", 1.53, 110.5, 180.0), ("CG2", 1.53, 110.5, -60.0)],
    }
}

/// Parses a one-letter sequence such as `"ACDEF"`.
pub fn parse_sequence(seq: &str) -> Option<Vec<ResidueType>> {
    seq.chars().map(ResidueType::from_one_letter).collect()
}

/// Builds a single-chain peptide (chain `A`, residues numbered from 1) with
/// ideal bond lengths and angles and the given backbone torsions.
pub fn ideal_peptide(sequence: &[ResidueType], backbone: BackboneAngles) -> Result<AllAtomStructure, GeometryError> {
    let rad = f64::to_radians;
    let topo = TopologyTable::standard();
    let mut atoms = Vec::new();
    let mut prev: Option<(Vec3, Vec3, Vec3)> = None;
    for (i, &residue) in sequence.iter().enumerate() {
        let phi = if residue == ResidueType::Pro {
            PRO_PHI
        } else {
            backbone.phi
        };
        let (n, ca, c) = match prev {
            None => {
                let n = [0.0, 0.0, 0.0];
                let ca = [N_CA, 0.0, 0.0];
                let t = rad(180.0 - N_CA_C);
                let c = [N_CA + CA_C * t.cos(), CA_C * t.sin(), 0.0];
                (n, ca, c)
            }
            Some((pn, pca, pc)) => {
                let n = place_atom(pn, pca, pc, C_N, rad(CA_C_N), rad(backbone.psi))?;
                let ca = place_atom(pca, pc, n, N_CA, rad(C_N_CA), rad(backbone.omega))?;
                let c = place_atom(pc, n, ca, CA_C, rad(N_CA_C), rad(phi))?;
                (n, ca, c)
            }
        };
        let o = place_atom(n, ca, c, C_O, rad(CA_C_O), rad(backbone.psi + 180.0))?;
        let mut pos: HashMap<&str, Vec3> = HashMap::from([("N", n), ("CA", ca), ("C", c), ("O", o)]);
        if residue != ResidueType::Gly {
            pos.insert("CB", place_atom(n, c, ca, 1.53, rad(109.5), rad(122.686))?);
        }
        let template = topo.residue(residue);
        let name_of = |r: super::AtomRef| match r {
            super::AtomRef::Slot(s) => template.atoms[s].name,
            super::AtomRef::Ca => "CA",
            _ => unreachable!("side chains reference local atoms only"),
        };
        for &(name, bond, angle, torsion) in side_chain_geometry(residue) {
            let atom = &template.atoms[template.slot_of(name).expect("template atom")];
            let [p, gp, ggp] = atom.refs.map(|r| pos[name_of(r)]);
            let placed = if torsion.is_nan() {
                close_ring(ggp, gp, p, bond, rad(angle), n)?
            } else {
                place_atom(ggp, gp, p, bond, rad(angle), rad(torsion))?
            };
            pos.insert(name, placed);
        }
        let mut emit = |name: &str, element: Element| {
            atoms.push(AtomRecord {
                serial: atoms.len() as u32 + 1,
                atom_name: name.to_string(),
                element,
                residue_name: residue,
                residue_index: i as i32 + 1,
                chain_id: 'A',
                position: pos[name],
            });
        };
        emit("N", Element::N);
        emit("CA", Element::C);
        for atom in &template.atoms[1..] {
            emit(atom.name, atom.element);
        }
        prev = Some((n, ca, c));
    }
    AllAtomStructure::from_atoms(atoms, None).map_err(|e| GeometryError::DegenerateGeometry(e.to_string()))
}

/// Places the last ring atom at the torsion that brings it closest to a
/// single-bond distance from `target`.
fn close_ring(a: Vec3, b: Vec3, c: Vec3, bond: f64, angle: f64, target: Vec3) -> Result<Vec3, GeometryError> {
    const RING_BOND: f64 = 1.47;
    let mut best = (f64::INFINITY, c);
    for step in 0..3600 {
        let tau = (step as f64 / 10.0 - 180.0).to_radians();
        let p = place_atom(a, b, c, bond, angle, tau)?;
        let err = (distance(p, target) - RING_BOND).abs();
        if err < best.0 {
            best = (err, p);
        }
    }
    Ok(best.1)
}
