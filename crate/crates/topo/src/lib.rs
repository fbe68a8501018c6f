//! Filtered complexes and one-dimensional persistent homology for point clouds.
//!
//! Planar clouds use the alpha filtration of their Delaunay triangulation;
//! spatial clouds use a Vietoris–Rips filtration capped at the 2-skeleton.
//! Both report filtration values in radius units so their diagrams share
//! one scale.

pub mod alpha;
pub mod complex;
pub mod delaunay;
pub mod error;
pub mod oracle;
pub mod persistence;
pub mod rips;

pub use alpha::alpha_filtration_2d;
pub use complex::{validate_filtration, FilteredComplex, FiltrationViolation, Simplex};
pub use delaunay::{dedup_points, delaunay_2d};
pub use error::{Result, TopoError};
pub use oracle::betti_bruteforce;
pub use persistence::{
    boundary_matrix, persistence_diagram, reduce, reduce_pairing, BoundaryMatrix, DiagramPoint, Pairing,
    PersistenceDiagram, ReduceOptions,
};
pub use rips::{cone_radius, half_diameter, rips_filtration, RipsCap};
