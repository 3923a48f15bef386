use nalgebra::{Matrix3, Vector3};

use super::{cross, norm, sub, transform, GeometryError, Vec3};

/// Least-squares rigid superposition mapping `P` onto `Q`: `Q ≈ R·P + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    pub rotation: [[f64; 3]; 3],
    pub translation: Vec3,
    pub rmsd: f64,
}

fn centroid(points: &[Vec3]) -> Vec3 {
    let mut c = [0.0; 3];
    for p in points {
        for k in 0..3 {
            c[k] += p[k];
        }
    }
    let n = points.len() as f64;
    [c[0] / n, c[1] / n, c[2] / n]
}

/// Kabsch superposition with a proper (det = +1) rotation.
pub fn kabsch_align(p: &[Vec3], q: &[Vec3]) -> Result<Alignment, GeometryError> {
    if p.len() != q.len() {
        return Err(GeometryError::LengthMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    if p.len() < 3 {
        return Err(GeometryError::DegenerateGeometry(
            "alignment needs at least three points".into(),
        ));
    }
    let cp = centroid(p);
    let cq = centroid(q);
    // P must span a plane for the rotation to be determined.
    let far = p
        .iter()
        .map(|a| sub(*a, cp))
        .max_by(|a, b| norm(*a).total_cmp(&norm(*b)))
        .unwrap();
    let spread = p.iter().map(|b| norm(cross(far, sub(*b, cp)))).fold(0.0, f64::max);
    if spread < 1e-10 * norm(far).max(1e-300) {
        return Err(GeometryError::DegenerateGeometry("collinear point set".into()));
    }
    let mut h = Matrix3::<f64>::zeros();
    for (a, b) in p.iter().zip(q) {
        let pa = Vector3::from(sub(*a, cp));
        let qb = Vector3::from(sub(*b, cq));
        h += pa * qb.transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u.expect("svd computes u");
    let v_t = svd.v_t.expect("svd computes v_t");
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let r = v * correction * u.transpose();
    let rotation = [
        [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
        [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
        [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
    ];
    let rc = transform(&rotation, [0.0; 3], cp);
    let translation = sub(cq, rc);
    let sq: f64 = p
        .iter()
        .zip(q)
        .map(|(a, b)| {
            let moved = transform(&rotation, translation, *a);
            let diff = sub(moved, *b);
            diff[0] * diff[0] + diff[1] * diff[1] + diff[2] * diff[2]
        })
        .sum();
    Ok(Alignment {
        rotation,
        translation,
        rmsd: (sq / p.len() as f64).sqrt(),
    })
}

/// Root-mean-square deviation without superposition.
pub fn rmsd_direct(p: &[Vec3], q: &[Vec3]) -> Result<f64, GeometryError> {
    if p.len() != q.len() {
        return Err(GeometryError::LengthMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    if p.is_empty() {
        return Ok(0.0);
    }
    let sq: f64 = p
        .iter()
        .zip(q)
        .map(|(a, b)| {
            let d = sub(*a, *b);
            d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
        })
        .sum();
    Ok((sq / p.len() as f64).sqrt())
}
