//! Vietoris–Rips filtration up to the 2-skeleton, in radius units
//! (an edge enters at half its length, a triangle with its longest edge).

use crate::complex::{FilteredComplex, Simplex};
use crate::error::{Result, TopoError};

/// Largest filtration value kept in a Rips complex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RipsCap {
    /// Half the diameter of the point set: the full 2-skeleton, so every
    /// one-dimensional class dies.
    Auto,
    Radius(f64),
}

pub fn dist3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Half the largest pairwise distance.
pub fn half_diameter(points: &[[f64; 3]]) -> f64 {
    let mut best: f64 = 0.0;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            best = best.max(dist3(&points[i], &points[j]));
        }
    }
    best / 2.0
}

/// Smallest radius at which some vertex is joined to every other vertex:
/// half the minimum eccentricity. From there on every 1-cycle bounds the
/// cone over that vertex, so truncating at this radius loses only
/// zero-persistence one-dimensional pairs relative to [`RipsCap::Auto`].
pub fn cone_radius(points: &[[f64; 3]]) -> f64 {
    let mut best = f64::INFINITY;
    for p in points {
        let ecc = points.iter().map(|q| dist3(p, q)).fold(0.0, f64::max);
        best = best.min(ecc);
    }
    if best.is_finite() {
        best / 2.0
    } else {
        0.0
    }
}

pub fn rips_filtration(points: &[[f64; 3]], cap: RipsCap) -> Result<FilteredComplex> {
    if points.is_empty() {
        return Err(TopoError::InvalidInput("empty point set".into()));
    }
    if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
        return Err(TopoError::InvalidInput(format!("point {i} has non-finite coordinates")));
    }
    let n = points.len();
    let mut half = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = dist3(&points[i], &points[j]) / 2.0;
            half[i * n + j] = d;
            half[j * n + i] = d;
        }
    }
    let r_max = match cap {
        RipsCap::Auto => half.iter().copied().fold(0.0, f64::max),
        RipsCap::Radius(r) if r.is_finite() && r >= 0.0 => r,
        RipsCap::Radius(r) => return Err(TopoError::InvalidInput(format!("invalid Rips radius {r}"))),
    };

    let mut simplices: Vec<Simplex> = (0..n as u32).map(Simplex::vertex).collect();
    let mut values = vec![0.0; n];
    for i in 0..n {
        for j in i + 1..n {
            let dij = half[i * n + j];
            if dij > r_max {
                continue;
            }
            simplices.push(Simplex::edge(i as u32, j as u32));
            values.push(dij);
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            let dij = half[i * n + j];
            if dij > r_max {
                continue;
            }
            for k in j + 1..n {
                let v = dij.max(half[i * n + k]).max(half[j * n + k]);
                if v <= r_max {
                    simplices.push(Simplex::triangle(i as u32, j as u32, k as u32));
                    values.push(v);
                }
            }
        }
    }
    Ok(FilteredComplex::new(simplices, values))
}
