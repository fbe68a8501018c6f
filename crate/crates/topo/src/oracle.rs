//! Brute-force persistent Betti numbers, used to cross-check the reduction.
//!
//! For prefixes `K_i ⊆ K_j` of the filtration,
//! `β₁^{i,j} = dim Z₁(K_i) − dim(Z₁(K_i) ∩ B₁(K_j))`. Every boundary is a
//! cycle, so `Z₁(K_i) ∩ B₁(K_j) = B₁(K_j) ∩ C₁(K_i)`, whose dimension is
//! `rank ∂₂|K_j` minus the rank of those boundaries projected onto the edges
//! of `K_j` outside `K_i`. All ranks are plain GF(2) eliminations.

use std::collections::HashMap;

use crate::complex::{FilteredComplex, Simplex};
use crate::error::{Result, TopoError};

pub const ORACLE_CAP: usize = 200;

/// Rank over GF(2) of a set of bit-vectors.
fn gf2_rank(mut rows: Vec<Vec<u64>>) -> usize {
    let mut rank = 0;
    let words = rows.first().map_or(0, Vec::len);
    for bit in 0..words * 64 {
        let (w, m) = (bit / 64, 1u64 << (bit % 64));
        let Some(p) = (rank..rows.len()).find(|&r| rows[r][w] & m != 0) else {
            continue;
        };
        rows.swap(rank, p);
        let pivot = rows[rank].clone();
        for (r, row) in rows.iter_mut().enumerate() {
            if r != rank && row[w] & m != 0 {
                for (x, y) in row.iter_mut().zip(&pivot) {
                    *x ^= y;
                }
            }
        }
        rank += 1;
    }
    rank
}

fn bitvec(len: usize, ones: impl IntoIterator<Item = usize>) -> Vec<u64> {
    let mut v = vec![0u64; len.div_ceil(64).max(1)];
    for i in ones {
        v[i / 64] |= 1 << (i % 64);
    }
    v
}

/// Rank of `H₁` from the first `i` simplices into the first `j` simplices
/// (filtration order). Requires `i ≤ j ≤ len` and `len ≤ 200`.
pub fn betti_bruteforce(fc: &FilteredComplex, i: usize, j: usize) -> Result<usize> {
    if fc.len() > ORACLE_CAP {
        return Err(TopoError::OracleTooLarge { size: fc.len(), cap: ORACLE_CAP });
    }
    if i > j || j > fc.len() {
        return Err(TopoError::InvalidInput(format!("prefix pair ({i}, {j}) out of range")));
    }
    let (simplices, _) = fc.sorted();
    let prefix_j = &simplices[..j];

    let mut vert_pos: HashMap<u32, usize> = HashMap::new();
    let mut edge_pos: HashMap<Simplex, usize> = HashMap::new();
    for (k, s) in prefix_j.iter().enumerate() {
        match s.dim() {
            0 => {
                let n = vert_pos.len();
                vert_pos.insert(s.vertices()[0], n);
            }
            1 => {
                edge_pos.insert(*s, k);
            }
            _ => {}
        }
    }

    let edges_i: Vec<&Simplex> = simplices[..i].iter().filter(|s| s.dim() == 1).collect();
    let d1: Vec<Vec<u64>> =
        edges_i.iter().map(|e| bitvec(vert_pos.len(), e.vertices().iter().map(|v| vert_pos[v]))).collect();
    let z_i = edges_i.len() - gf2_rank(d1);

    // Columns: edges of K_j, indexed by filtration position.
    let tris_j: Vec<&Simplex> = prefix_j.iter().filter(|s| s.dim() == 2).collect();
    let boundary = |t: &Simplex| -> Vec<usize> { t.facets().iter().map(|f| edge_pos[f]).collect() };
    let b_j = gf2_rank(tris_j.iter().map(|t| bitvec(j, boundary(t))).collect());
    let outside = gf2_rank(tris_j.iter().map(|t| bitvec(j, boundary(t).into_iter().filter(|&e| e >= i))).collect());
    Ok(z_i - (b_j - outside))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alpha::alpha_filtration_2d;

    fn hexagon() -> Vec<[f64; 2]> {
        (0..6)
            .map(|k| {
                let t = std::f64::consts::PI / 3.0 * k as f64;
                [t.cos(), t.sin()]
            })
            .collect()
    }

    #[test]
    fn hexagon_loop_lives_then_dies() {
        let fc = alpha_filtration_2d(&hexagon()).unwrap();
        let after_sides = fc.iter_filtration().take_while(|(_, v)| *v <= 0.5 + 1e-9).count();
        assert_eq!(after_sides, 12);
        assert_eq!(betti_bruteforce(&fc, after_sides, after_sides).unwrap(), 1);
        assert_eq!(betti_bruteforce(&fc, after_sides, fc.len()).unwrap(), 0);
        assert_eq!(betti_bruteforce(&fc, 6, 6).unwrap(), 0);
    }

    #[test]
    fn rank_of_dependent_rows() {
        let rows = vec![bitvec(3, [0, 1]), bitvec(3, [1, 2]), bitvec(3, [0, 2])];
        assert_eq!(gf2_rank(rows), 2);
    }

    #[test]
    fn cap_and_range_errors() {
        let big: Vec<[f64; 2]> = (0..80).map(|k| [k as f64, ((k * 7) % 13) as f64]).collect();
        let fc = alpha_filtration_2d(&big).unwrap();
        assert!(matches!(betti_bruteforce(&fc, 0, 0), Err(TopoError::OracleTooLarge { .. })));
        let fc = alpha_filtration_2d(&hexagon()).unwrap();
        assert!(betti_bruteforce(&fc, 5, 4).is_err());
    }
}
