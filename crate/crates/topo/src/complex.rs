//! Filtered simplicial complexes of dimension at most two.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;

const EMPTY: u32 = u32::MAX;

/// A vertex, edge or triangle given by its strictly increasing vertex indices.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Simplex {
    verts: [u32; 3],
    dim: u8,
}

impl Simplex {
    pub fn vertex(v: u32) -> Self {
        Self { verts: [v, EMPTY, EMPTY], dim: 0 }
    }

    /// Builds an edge; the endpoints may be given in any order.
    pub fn edge(a: u32, b: u32) -> Self {
        assert!(a != b, "edge endpoints must differ");
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        Self { verts: [a, b, EMPTY], dim: 1 }
    }

    /// Builds a triangle; the corners may be given in any order.
    pub fn triangle(a: u32, b: u32, c: u32) -> Self {
        let mut v = [a, b, c];
        v.sort_unstable();
        assert!(v[0] != v[1] && v[1] != v[2], "triangle corners must differ");
        Self { verts: v, dim: 2 }
    }

    /// Builds a simplex from a vertex list of length 1..=3.
    pub fn from_vertices(vs: &[u32]) -> Option<Self> {
        match *vs {
            [a] => Some(Self::vertex(a)),
            [a, b] if a != b => Some(Self::edge(a, b)),
            [a, b, c] if a != b && b != c && a != c => Some(Self::triangle(a, b, c)),
            _ => None,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn vertices(&self) -> &[u32] {
        &self.verts[..=self.dim as usize]
    }

    /// Codimension-one faces, in lexicographic order.
    pub fn facets(&self) -> Vec<Simplex> {
        let [a, b, c] = self.verts;
        match self.dim {
            0 => Vec::new(),
            1 => vec![Self::vertex(a), Self::vertex(b)],
            _ => vec![Self::edge(a, b), Self::edge(a, c), Self::edge(b, c)],
        }
    }
}

impl fmt::Debug for Simplex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.vertices())
    }
}

/// Total order used for filtrations: value, then dimension, then vertices.
pub fn filtration_cmp(a: (f64, &Simplex), b: (f64, &Simplex)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.dim.cmp(&b.1.dim)).then_with(|| a.1.vertices().cmp(b.1.vertices()))
}

/// Simplices with the value at which each enters, plus the filtration order.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredComplex {
    simplices: Vec<Simplex>,
    values: Vec<f64>,
    order: Vec<usize>,
}

impl FilteredComplex {
    /// Stores the simplices as given and sorts a permutation by
    /// (value, dimension, lexicographic vertices).
    pub fn new(simplices: Vec<Simplex>, values: Vec<f64>) -> Self {
        assert_eq!(simplices.len(), values.len(), "one value per simplex");
        let mut order: Vec<usize> = (0..simplices.len()).collect();
        order.sort_by(|&i, &j| filtration_cmp((values[i], &simplices[i]), (values[j], &simplices[j])));
        Self { simplices, values, order }
    }

    /// Builds a complex whose order is taken verbatim, without sorting.
    /// Used for hand-built complexes and tests of the validator.
    pub fn with_order(simplices: Vec<Simplex>, values: Vec<f64>, order: Vec<usize>) -> Self {
        assert_eq!(simplices.len(), values.len());
        assert_eq!(simplices.len(), order.len());
        Self { simplices, values, order }
    }

    pub fn empty() -> Self {
        Self::new(Vec::new(), Vec::new())
    }

    pub fn len(&self) -> usize {
        self.simplices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.simplices.is_empty()
    }

    pub fn simplices(&self) -> &[Simplex] {
        &self.simplices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Indices into [`simplices`](Self::simplices) in filtration order.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Iterates `(simplex, value)` in filtration order.
    pub fn iter_filtration(&self) -> impl Iterator<Item = (&Simplex, f64)> + '_ {
        self.order.iter().map(move |&i| (&self.simplices[i], self.values[i]))
    }

    /// Simplices in filtration order, paired with their values.
    pub fn sorted(&self) -> (Vec<Simplex>, Vec<f64>) {
        self.iter_filtration().map(|(s, v)| (*s, v)).unzip()
    }

    pub fn count_dim(&self, dim: usize) -> usize {
        self.simplices.iter().filter(|s| s.dim() == dim).count()
    }

    pub fn value_of(&self, s: &Simplex) -> Option<f64> {
        self.simplices.iter().position(|t| t == s).map(|i| self.values[i])
    }

    /// Multiplies every value by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        let values = self.values.iter().map(|v| v * s).collect();
        Self { simplices: self.simplices.clone(), values, order: self.order.clone() }
    }
}

/// First problem found by [`validate_filtration`].
#[derive(Debug, Clone, PartialEq)]
pub enum FiltrationViolation {
    /// `simplex` has a face that is not part of the complex.
    MissingFace { simplex: usize, face: Simplex },
    /// `face` enters strictly after its coface `simplex`.
    NonMonotone { simplex: usize, face: usize },
    /// `face` is listed after its coface `simplex` in the order.
    FaceAfterCoface { simplex: usize, face: usize },
    /// The order is not a permutation of the simplex indices.
    BadPermutation,
    /// A value is NaN or infinite.
    NonFinite { simplex: usize },
    /// The same simplex appears twice.
    Duplicate { first: usize, second: usize },
}

/// Checks face monotonicity and that the order is a valid filtration.
/// Indices in the report refer to positions in `fc.simplices()`.
pub fn validate_filtration(fc: &FilteredComplex) -> Result<(), FiltrationViolation> {
    let n = fc.len();
    let mut position = vec![usize::MAX; n];
    for (pos, &i) in fc.order.iter().enumerate() {
        if i >= n || position[i] != usize::MAX {
            return Err(FiltrationViolation::BadPermutation);
        }
        position[i] = pos;
    }
    let mut index: HashMap<Simplex, usize> = HashMap::with_capacity(n);
    for (i, s) in fc.simplices.iter().enumerate() {
        if !fc.values[i].is_finite() {
            return Err(FiltrationViolation::NonFinite { simplex: i });
        }
        if let Some(first) = index.insert(*s, i) {
            return Err(FiltrationViolation::Duplicate { first, second: i });
        }
    }
    for (i, s) in fc.simplices.iter().enumerate() {
        for face in s.facets() {
            let Some(&f) = index.get(&face) else {
                return Err(FiltrationViolation::MissingFace { simplex: i, face });
            };
            if fc.values[f] > fc.values[i] {
                return Err(FiltrationViolation::NonMonotone { simplex: i, face: f });
            }
            if position[f] > position[i] {
                return Err(FiltrationViolation::FaceAfterCoface { simplex: i, face: f });
            }
        }
    }
    Ok(())
}
