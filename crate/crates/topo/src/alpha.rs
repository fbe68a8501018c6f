//! Alpha filtration of a planar point set, in radius units.
//!
//! Triangles enter at their circumradius. A Delaunay edge whose open
//! diametral disk is empty (Gabriel) enters at half its length; otherwise it
//! enters with its earliest incident triangle.

use std::collections::BTreeMap;

use crate::complex::{FilteredComplex, Simplex};
use crate::delaunay::{circumradius, dedup_points, delaunay_2d, dist};
use crate::error::{Result, TopoError};

const GABRIEL_EPS: f64 = 1e-12;

/// Alpha filtration of `points`. Exact duplicates are dropped before
/// triangulation; vertex indices refer to the first occurrence in `points`.
pub fn alpha_filtration_2d(points: &[[f64; 2]]) -> Result<FilteredComplex> {
    if let Some(i) = points.iter().position(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(TopoError::InvalidInput(format!("point {i} has non-finite coordinates")));
    }
    let (kept, _) = dedup_points(points);
    match kept.len() {
        0 => return Err(TopoError::DegenerateInput("empty point set".into())),
        1 => return Ok(FilteredComplex::new(vec![Simplex::vertex(kept[0] as u32)], vec![0.0])),
        2 => {
            let (a, b) = (kept[0], kept[1]);
            return Ok(FilteredComplex::new(
                vec![Simplex::vertex(a as u32), Simplex::vertex(b as u32), Simplex::edge(a as u32, b as u32)],
                vec![0.0, 0.0, dist(points[a], points[b]) / 2.0],
            ));
        }
        _ => {}
    }
    let tris = delaunay_2d(points)?;

    let mut simplices: Vec<Simplex> = kept.iter().map(|&v| Simplex::vertex(v as u32)).collect();
    let mut values = vec![0.0; simplices.len()];

    // Edge -> (opposite apices, smallest incident circumradius).
    let mut edges: BTreeMap<(usize, usize), (Vec<usize>, f64)> = BTreeMap::new();
    for t in &tris {
        let r = circumradius(points[t[0]], points[t[1]], points[t[2]]);
        simplices.push(Simplex::triangle(t[0] as u32, t[1] as u32, t[2] as u32));
        values.push(r);
        for i in 0..3 {
            let (a, b, c) = (t[i], t[(i + 1) % 3], t[(i + 2) % 3]);
            let key = if a < b { (a, b) } else { (b, a) };
            let entry = edges.entry(key).or_insert((Vec::new(), f64::INFINITY));
            entry.0.push(c);
            entry.1 = entry.1.min(r);
        }
    }
    for ((a, b), (apices, min_tri)) in edges {
        let (pa, pb) = (points[a], points[b]);
        let gabriel = apices.iter().all(|&c| {
            let pc = points[c];
            let u = [pa[0] - pc[0], pa[1] - pc[1]];
            let v = [pb[0] - pc[0], pb[1] - pc[1]];
            // Obtuse angle at c means c is strictly inside the diametral disk.
            let dot = u[0] * v[0] + u[1] * v[1];
            dot >= -GABRIEL_EPS * u[0].hypot(u[1]) * v[0].hypot(v[1])
        });
        simplices.push(Simplex::edge(a as u32, b as u32));
        // Half the length never exceeds an incident circumradius; the min
        // absorbs rounding when the apex lies on the diametral circle.
        values.push(if gabriel { (dist(pa, pb) / 2.0).min(min_tri) } else { min_tri });
    }
    Ok(FilteredComplex::new(simplices, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::complex::validate_filtration;

    fn hexagon() -> Vec<[f64; 2]> {
        (0..6)
            .map(|k| {
                let t = std::f64::consts::PI / 3.0 * k as f64;
                [t.cos(), t.sin()]
            })
            .collect()
    }

    #[test]
    fn unit_square_values() {
        let p = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let fc = alpha_filtration_2d(&p).unwrap();
        validate_filtration(&fc).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        for (s, v) in fc.iter_filtration() {
            match s.dim() {
                0 => assert_eq!(v, 0.0),
                1 => {
                    let [a, b] = [s.vertices()[0] as usize, s.vertices()[1] as usize];
                    let expect = dist(p[a], p[b]) / 2.0;
                    assert!((v - expect).abs() < 1e-12, "{s:?} {v}");
                }
                _ => assert!((v - h).abs() < 1e-12),
            }
        }
        assert_eq!(fc.count_dim(1), 5);
        assert_eq!(fc.count_dim(2), 2);
    }

    #[test]
    fn rounded_hexagon_orders_faces_first() {
        let p: Vec<[f64; 2]> = (0..6)
            .map(|k| {
                let t = k as f64 * std::f64::consts::FRAC_PI_3;
                [t.cos(), t.sin()]
            })
            .collect();
        let fc = alpha_filtration_2d(&p).unwrap();
        validate_filtration(&fc).unwrap();
        crate::persistence::persistence_diagram(&fc).unwrap();
    }

    #[test]
    fn hexagon_values() {
        let p = hexagon();
        let fc = alpha_filtration_2d(&p).unwrap();
        validate_filtration(&fc).unwrap();
        for (s, v) in fc.iter_filtration() {
            match s.dim() {
                0 => assert_eq!(v, 0.0),
                1 => {
                    let [a, b] = [s.vertices()[0] as usize, s.vertices()[1] as usize];
                    let boundary = (b - a) == 1 || (b - a) == 5;
                    let expect = if boundary { 0.5 } else { 1.0 };
                    assert!((v - expect).abs() < 1e-12, "{s:?} {v}");
                }
                _ => assert!((v - 1.0).abs() < 1e-12),
            }
        }
    }

    #[test]
    fn two_points_and_one_point() {
        let fc = alpha_filtration_2d(&[[0.0, 0.0], [3.0, 4.0]]).unwrap();
        assert_eq!(fc.len(), 3);
        assert_eq!(fc.value_of(&Simplex::edge(0, 1)), Some(2.5));
        let fc = alpha_filtration_2d(&[[1.0, 1.0]]).unwrap();
        assert_eq!(fc.len(), 1);
    }

    #[test]
    fn duplicates_are_dropped() {
        let p = [[0.0, 0.0], [1.0, 0.0], [0.0, 0.0], [0.0, 1.0]];
        let fc = alpha_filtration_2d(&p).unwrap();
        assert_eq!(fc.count_dim(0), 3);
        assert!(fc.simplices().iter().all(|s| !s.vertices().contains(&2)));
    }

    #[test]
    fn obtuse_triangle_long_edge_is_attached() {
        let p = [[0.0, 0.0], [2.0, 0.0], [1.0, 0.2]];
        let fc = alpha_filtration_2d(&p).unwrap();
        validate_filtration(&fc).unwrap();
        let r = circumradius(p[0], p[1], p[2]);
        assert_eq!(fc.value_of(&Simplex::edge(0, 1)), Some(r));
        assert!(r > 1.0);
    }
}
