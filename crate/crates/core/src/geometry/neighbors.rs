//! Cell-list enumeration of point pairs within a cutoff.

use std::collections::HashMap;

use super::{distance, Vec3};

/// All pairs `(i, j, d)` with `i < j` and `d <= cutoff`, sorted by `(i, j)`.
///
/// Distances are computed with [`distance`], so results match an O(n²) scan
/// bit for bit.
pub fn pairs_within(points: &[Vec3], cutoff: f64) -> Vec<(usize, usize, f64)> {
    if points.len() < 64 || !(cutoff > 0.0) {
        return brute_force(points, cutoff);
    }
    let cell = |p: Vec3| -> [i64; 3] {
        [
            (p[0] / cutoff).floor() as i64,
            (p[1] / cutoff).floor() as i64,
            (p[2] / cutoff).floor() as i64,
        ]
    };
    let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (i, &p) in points.iter().enumerate() {
        grid.entry(cell(p)).or_default().push(i);
    }
    let mut out = Vec::new();
    for (i, &p) in points.iter().enumerate() {
        let c = cell(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(bucket) = grid.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) else {
                        continue;
                    };
                    for &j in bucket {
                        if j <= i {
                            continue;
                        }
                        let d = distance(p, points[j]);
                        if d <= cutoff {
                            out.push((i, j, d));
                        }
                    }
                }
            }
        }
    }
    out.sort_by_key(|a| (a.0, a.1));
    out
}

/// O(n²) reference enumeration.
pub fn brute_force(points: &[Vec3], cutoff: f64) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d = distance(points[i], points[j]);
            if d <= cutoff {
                out.push((i, j, d));
            }
        }
    }
    out
}
