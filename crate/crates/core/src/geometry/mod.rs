//! Cartesian ↔ internal-coordinate conversion and the small amount of vector
//! geometry it needs: measurements, NeRF placement, rigid alignment and
//! neighbor search.

mod ideal;
mod internal;
mod kabsch;
pub mod neighbors;
mod topology;

pub use ideal::{ideal_peptide, parse_sequence, BackboneAngles};
pub use internal::{
    anchor_points, cartesian_to_internal, internal_to_cartesian, signed_volume, IcSlot, InternalCoordinates,
    SLOTS_PER_RESIDUE,
};
pub use kabsch::{kabsch_align, rmsd_direct, Alignment};
pub use topology::{topology_bond_graph, AtomRef, ResidueTopology, TopologyAtom, TopologyTable};

pub type Vec3 = [f64; 3];

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("residue {residue} is missing atom {atom}")]
    MissingAtom { residue: usize, atom: String },
    #[error("valid-slot mask does not match residue topology at residue {residue}, slot {slot}")]
    MaskMismatch { residue: usize, slot: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("internal coordinate decode: {0}")]
    Decode(String),
}

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn distance(a: Vec3, b: Vec3) -> f64 {
    norm(sub(a, b))
}

fn unit(a: Vec3, what: &str) -> Result<Vec3, GeometryError> {
    let n = norm(a);
    if n < 1e-12 || !n.is_finite() {
        return Err(GeometryError::DegenerateGeometry(format!("zero-length {what}")));
    }
    Ok(scale(a, 1.0 / n))
}

/// Relative sine below which two bond vectors count as collinear.
const COLLINEAR_EPS: f64 = 1e-10;

/// Angle at `p2` formed by `p1-p2-p3`, in `[0, π]`.
pub fn bond_angle(p1: Vec3, p2: Vec3, p3: Vec3) -> Result<f64, GeometryError> {
    let u = sub(p1, p2);
    let v = sub(p3, p2);
    if norm(u) < 1e-12 || norm(v) < 1e-12 {
        return Err(GeometryError::DegenerateGeometry(
            "angle vertex coincides with an endpoint".into(),
        ));
    }
    Ok(norm(cross(u, v)).atan2(dot(u, v)))
}

/// Signed torsion of `p1-p2-p3-p4` in `(-π, π]`, IUPAC sign convention.
pub fn dihedral(p1: Vec3, p2: Vec3, p3: Vec3, p4: Vec3) -> Result<f64, GeometryError> {
    let b1 = sub(p2, p1);
    let b2 = sub(p3, p2);
    let b3 = sub(p4, p3);
    let (n1, n2, n3) = (norm(b1), norm(b2), norm(b3));
    if n1 < 1e-12 || n2 < 1e-12 || n3 < 1e-12 {
        return Err(GeometryError::DegenerateGeometry(
            "coincident consecutive dihedral points".into(),
        ));
    }
    let c12 = cross(b1, b2);
    let c23 = cross(b2, b3);
    if norm(c12) < COLLINEAR_EPS * n1 * n2 || norm(c23) < COLLINEAR_EPS * n2 * n3 {
        return Err(GeometryError::DegenerateGeometry("collinear dihedral points".into()));
    }
    let y = n2 * dot(b1, c23);
    let x = dot(c12, c23);
    Ok(wrap_angle(y.atan2(x)))
}

/// Maps an angle onto `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut w = a % (2.0 * PI);
    if w <= -PI {
        w += 2.0 * PI;
    } else if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Gaussian radial basis of a distance: `bins` centers evenly spaced over
/// `[0, max]`, width equal to the spacing.
pub fn gaussian_rbf(d: f64, bins: usize, max: f64) -> impl Iterator<Item = f64> {
    let spacing = if bins > 1 { max / (bins - 1) as f64 } else { max };
    let width = spacing.max(1e-12);
    (0..bins).map(move |k| {
        let x = (d - k as f64 * spacing) / width;
        (-0.5 * x * x).exp()
    })
}

/// NeRF placement: returns `d` such that `|c - d| = bond`, `angle(b, c, d) = theta`
/// and `dihedral(a, b, c, d) = tau`.
pub fn place_atom(a: Vec3, b: Vec3, c: Vec3, bond: f64, theta: f64, tau: f64) -> Result<Vec3, GeometryError> {
    let bc = unit(sub(c, b), "reference bond")?;
    let ab = sub(b, a);
    let n = cross(ab, bc);
    if norm(n) < COLLINEAR_EPS * norm(ab) {
        return Err(GeometryError::DegenerateGeometry(
            "collinear placement references".into(),
        ));
    }
    let n = unit(n, "reference plane normal")?;
    let m = cross(n, bc);
    let local = [
        -bond * theta.cos(),
        bond * theta.sin() * tau.cos(),
        bond * theta.sin() * tau.sin(),
    ];
    Ok([
        c[0] + local[0] * bc[0] + local[1] * m[0] + local[2] * n[0],
        c[1] + local[0] * bc[1] + local[1] * m[1] + local[2] * n[1],
        c[2] + local[0] * bc[2] + local[1] * m[2] + local[2] * n[2],
    ])
}

/// Orthonormal frame with rows `e1, e2, e3` of `rotation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame {
    pub origin: Vec3,
    pub rotation: [[f64; 3]; 3],
}

impl LocalFrame {
    /// Frame at `origin` with `e1` along `axis - origin` and `e2` in the plane
    /// of `plane - origin`.
    pub fn from_points(origin: Vec3, axis: Vec3, plane: Vec3) -> Result<Self, GeometryError> {
        let e1 = unit(sub(axis, origin), "frame axis")?;
        let v = sub(plane, origin);
        let e2 = unit(sub(v, scale(e1, dot(v, e1))), "frame plane vector")?;
        let e3 = cross(e1, e2);
        Ok(Self {
            origin,
            rotation: [e1, e2, e3],
        })
    }

    pub fn to_local(&self, p: Vec3) -> Vec3 {
        let d = sub(p, self.origin);
        [
            dot(self.rotation[0], d),
            dot(self.rotation[1], d),
            dot(self.rotation[2], d),
        ]
    }

    pub fn to_global(&self, p: Vec3) -> Vec3 {
        let r = &self.rotation;
        add(
            self.origin,
            [
                r[0][0] * p[0] + r[1][0] * p[1] + r[2][0] * p[2],
                r[0][1] * p[0] + r[1][1] * p[1] + r[2][1] * p[2],
                r[0][2] * p[0] + r[1][2] * p[1] + r[2][2] * p[2],
            ],
        )
    }

    pub fn determinant(&self) -> f64 {
        let r = &self.rotation;
        dot(r[0], cross(r[1], r[2]))
    }
}

/// Applies `rotation · p + translation`.
pub fn transform(rotation: &[[f64; 3]; 3], translation: Vec3, p: Vec3) -> Vec3 {
    add(
        [dot(rotation[0], p), dot(rotation[1], p), dot(rotation[2], p)],
        translation,
    )
}
