//! Planar Delaunay triangulation by lexicographic sweep followed by Lawson flips.
//!
//! Predicates run on coordinates rescaled to the unit box, with a `1e-12`
//! guard on determinant signs. Exact in-circle ties are broken by lifting
//! each site by an infinitesimal amount that decreases with its index, which
//! makes the result unique and deterministic on cocircular input.

use std::collections::HashMap;

use crate::error::{Result, TopoError};

pub const PREDICATE_EPS: f64 = 1e-12;

/// Indices of the first occurrence of every distinct point, in input order,
/// and the number of exact duplicates dropped.
pub fn dedup_points(points: &[[f64; 2]]) -> (Vec<usize>, usize) {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&i, &j| lex_cmp(&points[i], &points[j]).then(i.cmp(&j)));
    let mut keep = vec![false; points.len()];
    let mut dropped = 0;
    for (k, &i) in idx.iter().enumerate() {
        if k > 0 && points[idx[k - 1]] == points[i] {
            dropped += 1;
        } else {
            keep[i] = true;
        }
    }
    ((0..points.len()).filter(|&i| keep[i]).collect(), dropped)
}

fn lex_cmp(a: &[f64; 2], b: &[f64; 2]) -> std::cmp::Ordering {
    a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1]))
}

/// Twice the signed area of `abc`; positive when counter-clockwise.
pub fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn sign(x: f64) -> i32 {
    if x > PREDICATE_EPS {
        1
    } else if x < -PREDICATE_EPS {
        -1
    } else {
        0
    }
}

/// In-circle determinant for counter-clockwise `abc`: positive when `d`
/// lies strictly inside the circumcircle.
pub fn incircle(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> f64 {
    let row = |p: [f64; 2]| {
        let x = p[0] - d[0];
        let y = p[1] - d[1];
        (x, y, x * x + y * y)
    };
    let (ax, ay, az) = row(a);
    let (bx, by, bz) = row(b);
    let (cx, cy, cz) = row(c);
    ax * (by * cz - bz * cy) - ay * (bx * cz - bz * cx) + az * (bx * cy - by * cx)
}

/// Sign of the in-circle test with symbolic perturbation. `pts` and `ids`
/// list `a, b, c, d` (with `abc` counter-clockwise) and their global indices.
/// Never returns 0 unless all four perturbation cofactors vanish too.
pub fn incircle_perturbed(pts: [[f64; 2]; 4], ids: [usize; 4]) -> i32 {
    let s = sign(incircle(pts[0], pts[1], pts[2], pts[3]));
    if s != 0 {
        return s;
    }
    // The lifted 4x4 determinant is linear in each site's height; the
    // coefficient of row r is (-1)^r times the orientation of the other rows.
    let mut rows = [0usize, 1, 2, 3];
    rows.sort_by_key(|&r| ids[r]);
    for r in rows {
        let others: Vec<[f64; 2]> = (0..4).filter(|&k| k != r).map(|k| pts[k]).collect();
        let cof = orient(others[0], others[1], others[2]);
        let cof = if r % 2 == 0 { cof } else { -cof };
        let s = sign(cof);
        if s != 0 {
            return s;
        }
    }
    0
}

struct Mesh {
    tris: Vec<[usize; 3]>,
    edges: HashMap<(usize, usize), usize>,
}

impl Mesh {
    fn add(&mut self, t: [usize; 3]) {
        let id = self.tris.len();
        self.tris.push(t);
        self.link(id);
    }

    fn link(&mut self, id: usize) {
        let [a, b, c] = self.tris[id];
        self.edges.insert((a, b), id);
        self.edges.insert((b, c), id);
        self.edges.insert((c, a), id);
    }

    fn apex(&self, t: usize, a: usize, b: usize) -> usize {
        *self.tris[t].iter().find(|&&v| v != a && v != b).expect("triangle has a third corner")
    }
}

/// Delaunay triangulation of the convex hull of `points`. Triangles are
/// returned counter-clockwise, each rotated to start at its smallest index,
/// sorted. Exact duplicates are ignored (the first occurrence is used).
pub fn delaunay_2d(points: &[[f64; 2]]) -> Result<Vec<[usize; 3]>> {
    if let Some(i) = points.iter().position(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(TopoError::InvalidInput(format!("point {i} has non-finite coordinates")));
    }
    let (kept, _) = dedup_points(points);
    if kept.len() < 3 {
        return Err(TopoError::DegenerateInput(format!("need at least 3 distinct points, got {}", kept.len())));
    }

    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for &i in &kept {
        for k in 0..2 {
            lo[k] = lo[k].min(points[i][k]);
            hi[k] = hi[k].max(points[i][k]);
        }
    }
    let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let q: Vec<[f64; 2]> = points.iter().map(|p| [(p[0] - lo[0]) / extent, (p[1] - lo[1]) / extent]).collect();

    let mut order = kept;
    order.sort_by(|&i, &j| lex_cmp(&q[i], &q[j]).then(i.cmp(&j)));

    let mut mesh = Mesh { tris: Vec::new(), edges: HashMap::new() };

    // Seed: the initial collinear run plus the first point off its line.
    let (p0, p1) = (order[0], order[1]);
    let Some(k) = (2..order.len()).find(|&k| sign(orient(q[p0], q[p1], q[order[k]])) != 0) else {
        return Err(TopoError::DegenerateInput("all points are collinear".into()));
    };
    let apex = order[k];
    let left = orient(q[p0], q[p1], q[apex]) > 0.0;
    for w in order[..k].windows(2) {
        if left {
            mesh.add([w[0], w[1], apex]);
        } else {
            mesh.add([w[1], w[0], apex]);
        }
    }
    let mut hull: Vec<usize> = if left {
        order[..=k].to_vec()
    } else {
        std::iter::once(p0).chain(std::iter::once(apex)).chain(order[1..k].iter().rev().copied()).collect()
    };

    for &p in &order[k + 1..] {
        let h = hull.len();
        let visible = |i: usize, hull: &[usize]| {
            let (a, b) = (hull[i], hull[(i + 1) % h]);
            sign(orient(q[a], q[b], q[p])) < 0
        };
        let Some(start) = (0..h).find(|&i| visible(i, &hull) && !visible((i + h - 1) % h, &hull)) else {
            // Lexicographically last point is always outside the hull; only
            // reachable when everything it sees is within the sign guard.
            log::warn!("delaunay: point {p} sees no hull edge, skipped");
            continue;
        };
        let mut end = start;
        while visible(end, &hull) {
            let (a, b) = (hull[end], hull[(end + 1) % h]);
            mesh.add([b, a, p]);
            end = (end + 1) % h;
            if end == start {
                break;
            }
        }
        // Vertices strictly between `start` and `end` leave the hull.
        let mut next = Vec::with_capacity(h + 1);
        let mut i = end;
        loop {
            next.push(hull[i]);
            if i == start {
                break;
            }
            i = (i + 1) % h;
        }
        next.push(p);
        hull = next;
    }

    lawson_flip(&mut mesh, &q);

    let mut out: Vec<[usize; 3]> = mesh
        .tris
        .iter()
        .map(|t| {
            let m = (0..3).min_by_key(|&i| t[i]).unwrap();
            [t[m], t[(m + 1) % 3], t[(m + 2) % 3]]
        })
        .collect();
    out.sort_unstable();
    Ok(out)
}

fn lawson_flip(mesh: &mut Mesh, q: &[[f64; 2]]) {
    let mut stack: Vec<(usize, usize)> = Vec::new();
    for t in &mesh.tris {
        for i in 0..3 {
            let (a, b) = (t[i], t[(i + 1) % 3]);
            if a < b {
                stack.push((a, b));
            }
        }
    }
    let budget = 64 * mesh.tris.len() * mesh.tris.len() + 1024;
    let mut flips = 0usize;
    while let Some((a, b)) = stack.pop() {
        let (Some(&t1), Some(&t2)) = (mesh.edges.get(&(a, b)), mesh.edges.get(&(b, a))) else {
            continue;
        };
        let c = mesh.apex(t1, a, b);
        let d = mesh.apex(t2, a, b);
        if incircle_perturbed([q[a], q[b], q[c], q[d]], [a, b, c, d]) <= 0 {
            continue;
        }
        if sign(orient(q[a], q[d], q[c])) <= 0 || sign(orient(q[d], q[b], q[c])) <= 0 {
            continue;
        }
        mesh.edges.remove(&(a, b));
        mesh.edges.remove(&(b, a));
        mesh.tris[t1] = [a, d, c];
        mesh.tris[t2] = [d, b, c];
        mesh.link(t1);
        mesh.link(t2);
        stack.extend([(a, d), (d, b), (b, c), (c, a)]);
        flips += 1;
        if flips > budget {
            log::warn!("delaunay: flip budget exhausted, triangulation may not be Delaunay");
            break;
        }
    }
}

/// Circumradius of a planar triangle.
pub fn circumradius(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    let ab = dist(a, b);
    let bc = dist(b, c);
    let ca = dist(c, a);
    ab * bc * ca / (2.0 * orient(a, b, c).abs())
}

pub fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}
