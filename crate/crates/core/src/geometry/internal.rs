use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::topology::{AtomRef, TopologyTable};
use super::{add, bond_angle, cross, dihedral, distance, dot, norm, place_atom, scale, sub, GeometryError, Vec3};
use crate::protein_io::{AllAtomStructure, AtomRecord, CgStructure};

/// Slots per residue: every heavy atom except Cα; tryptophan fills all of them.
pub const SLOTS_PER_RESIDUE: usize = 13;

/// Bond length (Å), bond angle and dihedral (radians) of one atom relative to
/// its three reference points.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct IcSlot {
    pub d: f64,
    pub theta: f64,
    pub tau: f64,
    pub valid: bool,
}

impl IcSlot {
    pub const MASKED: IcSlot = IcSlot {
        d: 0.0,
        theta: 0.0,
        tau: 0.0,
        valid: false,
    };

    fn check(&self) -> Result<(), String> {
        if !self.valid {
            if self.d != 0.0 || self.theta != 0.0 || self.tau != 0.0 {
                return Err("masked slot carries non-zero values".into());
            }
            return Ok(());
        }
        if !(self.d > 0.0 && self.d.is_finite()) {
            return Err(format!("bond length {} not positive", self.d));
        }
        if !(self.theta > 0.0 && self.theta < PI) {
            return Err(format!("bond angle {} outside (0, pi)", self.theta));
        }
        if !(self.tau > -PI && self.tau <= PI) {
            return Err(format!("dihedral {} outside (-pi, pi]", self.tau));
        }
        Ok(())
    }
}

/// Per-residue internal coordinates, [`SLOTS_PER_RESIDUE`] slots each, in
/// topology placement order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InternalCoordinates {
    pub residues: Vec<[IcSlot; SLOTS_PER_RESIDUE]>,
}

#[derive(Serialize, Deserialize)]
struct IcJson {
    #[serde(rename = "N")]
    n: usize,
    slots: Vec<Vec<[f64; 4]>>,
}

impl InternalCoordinates {
    pub fn len(&self) -> usize {
        self.residues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residues.is_empty()
    }

    /// Checks the per-slot range invariants.
    pub fn validate(&self) -> Result<(), GeometryError> {
        for (r, slots) in self.residues.iter().enumerate() {
            for (s, slot) in slots.iter().enumerate() {
                slot.check()
                    .map_err(|e| GeometryError::Decode(format!("residue {r}, slot {s}: {e}")))?;
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let doc = IcJson {
            n: self.residues.len(),
            slots: self
                .residues
                .iter()
                .map(|slots| {
                    slots
                        .iter()
                        .map(|s| [s.d, s.theta, s.tau, if s.valid { 1.0 } else { 0.0 }])
                        .collect()
                })
                .collect(),
        };
        serde_json::to_string(&doc).expect("internal coordinates serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, GeometryError> {
        let doc: IcJson = serde_json::from_str(text).map_err(|e| GeometryError::Decode(e.to_string()))?;
        if doc.slots.len() != doc.n {
            return Err(GeometryError::Decode(format!(
                "N = {} but {} residues present",
                doc.n,
                doc.slots.len()
            )));
        }
        let mut residues = Vec::with_capacity(doc.n);
        for (r, row) in doc.slots.iter().enumerate() {
            if row.len() != SLOTS_PER_RESIDUE {
                return Err(GeometryError::Decode(format!("residue {r} has {} slots", row.len())));
            }
            let mut slots = [IcSlot::MASKED; SLOTS_PER_RESIDUE];
            for (slot, v) in slots.iter_mut().zip(row) {
                *slot = slot_from_values(v[0], v[1], v[2], v[3])?;
            }
            residues.push(slots);
        }
        let ic = Self { residues };
        ic.validate()?;
        Ok(ic)
    }

    /// Little-endian binary form: `u64` residue count, then `N × 13 × 4` `f64`
    /// values `(d, theta, tau, valid)`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.residues.len() * SLOTS_PER_RESIDUE * 32);
        out.extend_from_slice(&(self.residues.len() as u64).to_le_bytes());
        for slots in &self.residues {
            for s in slots {
                for v in [s.d, s.theta, s.tau, if s.valid { 1.0 } else { 0.0 }] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, GeometryError> {
        let header: [u8; 8] = bytes
            .get(..8)
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| GeometryError::Decode("missing length header".into()))?;
        let n = u64::from_le_bytes(header);
        let per_residue = (SLOTS_PER_RESIDUE * 4 * 8) as u64;
        let expected = n
            .checked_mul(per_residue)
            .and_then(|b| b.checked_add(8))
            .ok_or_else(|| GeometryError::Decode("residue count overflows".into()))?;
        if expected != bytes.len() as u64 {
            return Err(GeometryError::Decode(format!(
                "expected {expected} bytes for {n} residues, found {}",
                bytes.len()
            )));
        }
        let mut values = bytes[8..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut residues = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let mut slots = [IcSlot::MASKED; SLOTS_PER_RESIDUE];
            for slot in &mut slots {
                let mut next = || values.next().unwrap();
                *slot = slot_from_values(next(), next(), next(), next())?;
            }
            residues.push(slots);
        }
        let ic = Self { residues };
        ic.validate()?;
        Ok(ic)
    }
}

fn slot_from_values(d: f64, theta: f64, tau: f64, valid: f64) -> Result<IcSlot, GeometryError> {
    let valid = if valid == 1.0 {
        true
    } else if valid == 0.0 {
        false
    } else {
        return Err(GeometryError::Decode(format!("valid flag {valid} is not 0 or 1")));
    };
    Ok(IcSlot { d, theta, tau, valid })
}

/// Point 3.8 Å from `origin`, 120° away from `axis_point`, in a plane chosen
/// from the coordinate axes. Only used for chains too short to supply a real
/// Cα triplet, so it is not rigid-motion invariant.
fn virtual_anchor(origin: Vec3, axis_point: Option<Vec3>) -> Vec3 {
    let u = match axis_point {
        Some(q) if distance(q, origin) > 1e-9 => scale(sub(q, origin), 1.0 / distance(q, origin)),
        _ => [1.0, 0.0, 0.0],
    };
    let axes = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let e = axes
        .iter()
        .copied()
        .min_by(|a, b| dot(*a, u).abs().total_cmp(&dot(*b, u).abs()))
        .unwrap();
    let w = sub(e, scale(u, dot(e, u)));
    let w = scale(w, 1.0 / norm(w));
    add(origin, scale(add(scale(u, -0.5), scale(w, 0.75f64.sqrt())), 3.8))
}

/// Anchor beads `(prev, next)` for residue `i`.
///
/// Interior residues use their chain neighbors. At a chain end the missing
/// neighbor is replaced by the bead two steps inward, which keeps the three
/// anchors non-collinear; chains shorter than three beads fall back to a
/// synthetic anchor.
pub fn anchor_points(cg: &CgStructure, i: usize) -> (Vec3, Vec3) {
    let beads = &cg.beads;
    let seg = beads[i].segment;
    let mut start = i;
    while start > 0 && beads[start - 1].segment == seg {
        start -= 1;
    }
    let mut end = i + 1;
    while end < beads.len() && beads[end].segment == seg {
        end += 1;
    }
    let len = end - start;
    let k = i - start;
    let pos = |j: usize| beads[j].position;
    let ca = pos(i);
    match len {
        1 => {
            let next = add(ca, [3.8, 0.0, 0.0]);
            (virtual_anchor(ca, Some(next)), next)
        }
        2 => {
            if k == 0 {
                let next = pos(i + 1);
                (virtual_anchor(ca, Some(next)), next)
            } else {
                let prev = pos(i - 1);
                (prev, virtual_anchor(ca, Some(prev)))
            }
        }
        _ => {
            let prev = if k >= 1 { pos(i - 1) } else { pos(i + 2) };
            let next = if k + 1 < len { pos(i + 1) } else { pos(i - 2) };
            (prev, next)
        }
    }
}

fn resolve(r: AtomRef, ca: Vec3, prev: Vec3, next: Vec3, placed: &[Option<Vec3>; SLOTS_PER_RESIDUE]) -> Option<Vec3> {
    match r {
        AtomRef::Slot(s) => placed[s],
        AtomRef::Ca => Some(ca),
        AtomRef::PrevCa => Some(prev),
        AtomRef::NextCa => Some(next),
    }
}

/// Measures every non-Cα heavy atom against its topology references.
///
/// Atoms missing from a terminal residue yield masked slots (as does any atom
/// whose references are missing); a missing atom anywhere else is an error.
pub fn cartesian_to_internal(
    structure: &AllAtomStructure,
    cg: &CgStructure,
    topo: &TopologyTable,
) -> Result<InternalCoordinates, GeometryError> {
    if structure.residue_count() != cg.len() {
        return Err(GeometryError::LengthMismatch {
            left: structure.residue_count(),
            right: cg.len(),
        });
    }
    let atoms = structure.atoms();
    let mut residues = Vec::with_capacity(cg.len());
    for r in 0..cg.len() {
        let template = topo.residue(cg.beads[r].residue_type);
        let ca = cg.beads[r].position;
        let (prev, next) = anchor_points(cg, r);
        let terminal = structure.is_terminal(r);
        let mut placed: [Option<Vec3>; SLOTS_PER_RESIDUE] = [None; SLOTS_PER_RESIDUE];
        let mut slots = [IcSlot::MASKED; SLOTS_PER_RESIDUE];
        for (s, atom) in template.atoms.iter().enumerate() {
            let Some(idx) = structure.find_atom(r, atom.name) else {
                if terminal {
                    continue;
                }
                return Err(GeometryError::MissingAtom {
                    residue: r,
                    atom: atom.name.to_string(),
                });
            };
            let pos = atoms[idx].position;
            placed[s] = Some(pos);
            let refs = atom.refs.map(|rf| resolve(rf, ca, prev, next, &placed));
            let [Some(c), Some(b), Some(a)] = refs else {
                continue;
            };
            slots[s] = IcSlot {
                d: distance(c, pos),
                theta: bond_angle(b, c, pos)?,
                tau: dihedral(a, b, c, pos)?,
                valid: true,
            };
        }
        residues.push(slots);
    }
    Ok(InternalCoordinates { residues })
}

/// Rebuilds all-atom coordinates from internal coordinates anchored on the Cα
/// beads. Cα positions are copied verbatim; atoms are emitted per residue in
/// PDB order (N, CA, C, O, side chain).
pub fn internal_to_cartesian(
    ic: &InternalCoordinates,
    cg: &CgStructure,
    topo: &TopologyTable,
) -> Result<AllAtomStructure, GeometryError> {
    if ic.len() != cg.len() {
        return Err(GeometryError::LengthMismatch {
            left: ic.len(),
            right: cg.len(),
        });
    }
    let mut atoms: Vec<AtomRecord> = Vec::new();
    let mut segments = Vec::new();
    for (r, slots) in ic.residues.iter().enumerate() {
        let bead = &cg.beads[r];
        let template = topo.residue(bead.residue_type);
        let (prev, next) = anchor_points(cg, r);
        let mut placed: [Option<Vec3>; SLOTS_PER_RESIDUE] = [None; SLOTS_PER_RESIDUE];
        for (s, slot) in slots.iter().enumerate() {
            if !slot.valid {
                continue;
            }
            let Some(atom) = template.atoms.get(s) else {
                return Err(GeometryError::MaskMismatch { residue: r, slot: s });
            };
            let refs = atom.refs.map(|rf| resolve(rf, bead.position, prev, next, &placed));
            let [Some(c), Some(b), Some(a)] = refs else {
                return Err(GeometryError::MaskMismatch { residue: r, slot: s });
            };
            if !(slot.d > 0.0 && slot.d.is_finite() && slot.theta > 0.0 && slot.theta < PI) {
                return Err(GeometryError::DegenerateGeometry(format!(
                    "residue {r}, slot {s}: internal coordinate out of range"
                )));
            }
            placed[s] = Some(place_atom(a, b, c, slot.d, slot.theta, slot.tau)?);
        }
        let mut emit = |name: &str, element, position| {
            atoms.push(AtomRecord {
                serial: atoms.len() as u32 + 1,
                atom_name: name.to_string(),
                element,
                residue_name: bead.residue_type,
                residue_index: bead.seq_num,
                chain_id: bead.chain_id,
                position,
            });
            segments.push(bead.segment);
        };
        for (s, atom) in template.atoms.iter().enumerate() {
            if s == 1 {
                emit("CA", crate::protein_io::Element::C, bead.position);
            }
            if let Some(p) = placed[s] {
                emit(atom.name, atom.element, p);
            }
        }
    }
    AllAtomStructure::from_atoms(atoms, Some(&segments)).map_err(|e| GeometryError::DegenerateGeometry(e.to_string()))
}

/// Signed volume of the tetrad `(a - o, b - o, c - o)`.
pub fn signed_volume(o: Vec3, a: Vec3, b: Vec3, c: Vec3) -> f64 {
    dot(sub(a, o), cross(sub(b, o), sub(c, o)))
}
