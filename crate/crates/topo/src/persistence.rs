//! Boundary matrices over GF(2) and their column reduction.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::complex::{FilteredComplex, Simplex};
use crate::error::{Result, TopoError};

/// Boundary matrix in filtration order. Column `j` holds the sorted
/// filtration indices of the codimension-one faces of simplex `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryMatrix {
    columns: Vec<Vec<u32>>,
    dims: Vec<u8>,
    values: Vec<f64>,
}

impl BoundaryMatrix {
    pub fn columns(&self) -> &[Vec<u32>] {
        &self.columns
    }

    pub fn dims(&self) -> &[u8] {
        &self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }
}

pub fn boundary_matrix(fc: &FilteredComplex) -> Result<BoundaryMatrix> {
    let (simplices, values) = fc.sorted();
    let max_vertex = simplices.iter().flat_map(|s| s.vertices().iter()).copied().max().unwrap_or(0) as usize;
    let mut vertex_pos = vec![u32::MAX; max_vertex + 1];
    let mut edge_pos: HashMap<(u32, u32), u32> = HashMap::new();
    let mut columns = Vec::with_capacity(simplices.len());
    let mut dims = Vec::with_capacity(simplices.len());
    for (j, s) in simplices.iter().enumerate() {
        let v = s.vertices();
        let col = match s.dim() {
            0 => {
                vertex_pos[v[0] as usize] = j as u32;
                Vec::new()
            }
            1 => {
                edge_pos.insert((v[0], v[1]), j as u32);
                let mut col = Vec::with_capacity(2);
                for &x in v {
                    let p = vertex_pos[x as usize];
                    if p == u32::MAX {
                        return Err(missing(j, Simplex::vertex(x)));
                    }
                    col.push(p);
                }
                col
            }
            _ => {
                let mut col = Vec::with_capacity(3);
                for (a, b) in [(v[0], v[1]), (v[0], v[2]), (v[1], v[2])] {
                    match edge_pos.get(&(a, b)) {
                        Some(&p) => col.push(p),
                        None => return Err(missing(j, Simplex::edge(a, b))),
                    }
                }
                col
            }
        };
        let mut col = col;
        col.sort_unstable();
        columns.push(col);
        dims.push(s.dim() as u8);
    }
    Ok(BoundaryMatrix { columns, dims, values })
}

fn missing(simplex: usize, face: Simplex) -> TopoError {
    TopoError::InconsistentComplex { simplex, face: face.vertices().to_vec() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReduceOptions {
    /// Process dimensions top-down and zero the columns of simplices that
    /// are already known to be negative.
    pub clearing: bool,
}

impl Default for ReduceOptions {
    fn default() -> Self {
        Self { clearing: true }
    }
}

/// Index-level persistence pairing, zero-persistence pairs included.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pairing {
    /// `(birth, death)` filtration indices.
    pub pairs: Vec<(usize, usize)>,
    /// Filtration indices of positive simplices never paired.
    pub essential: Vec<usize>,
}

/// `target ^= other` for sorted index vectors; `scratch` is reused storage.
fn add_into(target: &mut Vec<u32>, other: &[u32], scratch: &mut Vec<u32>) {
    scratch.clear();
    scratch.reserve(target.len() + other.len());
    let (mut a, mut b) = (0, 0);
    while a < target.len() && b < other.len() {
        match target[a].cmp(&other[b]) {
            std::cmp::Ordering::Less => {
                scratch.push(target[a]);
                a += 1;
            }
            std::cmp::Ordering::Greater => {
                scratch.push(other[b]);
                b += 1;
            }
            std::cmp::Ordering::Equal => {
                a += 1;
                b += 1;
            }
        }
    }
    scratch.extend_from_slice(&target[a..]);
    scratch.extend_from_slice(&other[b..]);
    std::mem::swap(target, scratch);
}

/// Standard left-to-right reduction with lowest-one collisions.
///
/// With clearing, dimensions are processed top-down and the column of every
/// simplex found as a pivot is zeroed without reduction.
pub fn reduce_pairing(bm: &BoundaryMatrix, opts: ReduceOptions) -> Pairing {
    let n = bm.len();
    let mut cols = bm.columns.clone();
    let mut pivot_owner: Vec<u32> = vec![u32::MAX; n];
    let mut cleared = vec![false; n];
    let mut scratch = Vec::new();
    let top = bm.dims.iter().copied().max().unwrap_or(0);

    let dim_order: Vec<Option<u8>> = if opts.clearing { (0..=top).rev().map(Some).collect() } else { vec![None] };
    for dim in dim_order {
        for j in 0..n {
            if dim.is_some_and(|d| bm.dims[j] != d) {
                continue;
            }
            if cleared[j] {
                cols[j].clear();
                continue;
            }
            while let Some(&low) = cols[j].last() {
                let owner = pivot_owner[low as usize];
                if owner == u32::MAX {
                    pivot_owner[low as usize] = j as u32;
                    cleared[low as usize] = opts.clearing;
                    break;
                }
                let (head, tail) = cols.split_at_mut(j);
                add_into(&mut tail[0], &head[owner as usize], &mut scratch);
            }
        }
    }

    let mut pairs = Vec::new();
    let mut negative = vec![false; n];
    for (i, &owner) in pivot_owner.iter().enumerate() {
        if owner != u32::MAX {
            pairs.push((i, owner as usize));
            negative[owner as usize] = true;
        }
    }
    let essential = (0..n).filter(|&i| !negative[i] && pivot_owner[i] == u32::MAX).collect();
    Pairing { pairs, essential }
}

/// Relative tolerance under which a pair counts as zero persistence;
/// absorbs rounding differences between values that are equal exactly
/// (e.g. circumradii of cocircular triangles).
pub const ZERO_PERSISTENCE_RTOL: f64 = 1e-12;

fn is_zero_persistence(birth: f64, death: f64) -> bool {
    death - birth <= ZERO_PERSISTENCE_RTOL * birth.abs().max(death.abs())
}

/// A finite point of a persistence diagram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagramPoint {
    pub birth: f64,
    pub death: f64,
    pub dim: usize,
}

impl DiagramPoint {
    pub fn new(birth: f64, death: f64, dim: usize) -> Self {
        Self { birth, death, dim }
    }

    pub fn persistence(&self) -> f64 {
        self.death - self.birth
    }
}

/// Finite pairs with `death > birth` plus never-dying classes `(birth, dim)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PersistenceDiagram {
    pub points: Vec<DiagramPoint>,
    pub essential: Vec<(f64, usize)>,
}

impl PersistenceDiagram {
    pub fn from_pairing(bm: &BoundaryMatrix, pairing: &Pairing) -> Self {
        let mut points: Vec<DiagramPoint> = pairing
            .pairs
            .iter()
            .filter(|&&(b, d)| !is_zero_persistence(bm.values[b], bm.values[d]))
            .map(|&(b, d)| DiagramPoint::new(bm.values[b], bm.values[d], bm.dims[b] as usize))
            .collect();
        points.sort_by(|a, b| a.dim.cmp(&b.dim).then(a.birth.total_cmp(&b.birth)).then(a.death.total_cmp(&b.death)));
        let essential = pairing.essential.iter().map(|&i| (bm.values[i], bm.dims[i] as usize)).collect();
        Self { points, essential }
    }

    /// Finite points of one dimension.
    pub fn in_dim(&self, dim: usize) -> Vec<DiagramPoint> {
        self.points.iter().filter(|p| p.dim == dim).copied().collect()
    }

    pub fn essential_in_dim(&self, dim: usize) -> usize {
        self.essential.iter().filter(|e| e.1 == dim).count()
    }

    /// CSV with header `birth,death,dim`, shortest round-trip decimal form.
    pub fn to_csv(&self) -> String {
        points_to_csv(&self.points)
    }
}

pub fn points_to_csv(points: &[DiagramPoint]) -> String {
    let mut out = String::from("birth,death,dim\n");
    for p in points {
        let _ = writeln!(out, "{:?},{:?},{}", p.birth, p.death, p.dim);
    }
    out
}

/// Parses `birth,death,dim` rows (header required). A missing `dim`
/// column defaults to 1.
pub fn points_from_csv(text: &str) -> Result<Vec<DiagramPoint>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| TopoError::InvalidInput("empty diagram CSV".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let find = |name: &str| cols.iter().position(|c| *c == name);
    let (Some(bi), Some(di)) = (find("birth"), find("death")) else {
        return Err(TopoError::InvalidInput(format!("diagram CSV header lacks birth/death: {header}")));
    };
    let dim_i = find("dim");
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let num = |k: usize| -> Result<f64> {
            f.get(k)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| TopoError::InvalidInput(format!("bad diagram row {}: {line}", n + 2)))
        };
        let dim = match dim_i {
            Some(k) => num(k)? as usize,
            None => 1,
        };
        out.push(DiagramPoint::new(num(bi)?, num(di)?, dim));
    }
    Ok(out)
}

/// Full pipeline: boundary matrix, clearing reduction, diagram.
pub fn persistence_diagram(fc: &FilteredComplex) -> Result<PersistenceDiagram> {
    let bm = boundary_matrix(fc)?;
    let pairing = reduce_pairing(&bm, ReduceOptions::default());
    let pd = PersistenceDiagram::from_pairing(&bm, &pairing);
    if pd.essential_in_dim(1) > 0 {
        log::warn!("{} essential one-dimensional classes; excluded from features", pd.essential_in_dim(1));
    }
    Ok(pd)
}

/// Reduces with default options.
pub fn reduce(bm: &BoundaryMatrix) -> PersistenceDiagram {
    PersistenceDiagram::from_pairing(bm, &reduce_pairing(bm, ReduceOptions::default()))
}
