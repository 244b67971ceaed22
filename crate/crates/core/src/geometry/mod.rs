//! Exact affine-region partition of a 2D domain and the local observables
//! defined on it.
//!
//! The enumerator walks the op list once, keeping for every current cell the
//! affine map `y ↦ A·y + q` of the features up to the current op. Each
//! activation module splits every cell by the zero lines of its units, after
//! which the pattern at the child centroid decides which rows of `(A, q)` get
//! zeroed (ReLU) or scaled (LeakyReLU).

mod enumerate;
mod local;
mod polygon;

pub use enumerate::{
    enumerate_regions, enumerate_with, local_hyperplane, local_pre_activation_maps, AffineCell, EnumerateOptions,
    HyperplaneTrace, LocalMap, PartitionAtlas,
};
pub use local::{
    directional_thickness, distance_profile, hyperplane_distance, local_counts, local_counts_with, local_neighborhood,
    parent_cell, DistanceProfile, LocalCounts, NeighborhoodShape, ProfileScope, LOG_DISTANCE_FLOOR,
};
pub use polygon::ConvexPolygon;

pub(crate) use local::cells_meeting;

use crate::net::NetError;

pub type Point = [f64; 2];

/// Numerical tolerances; the defaults are the ones every test and the CLI use.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Tolerances {
    /// Point-on-line distance.
    pub geo: f64,
    /// Normals at or below this length are degenerate.
    pub normal: f64,
    /// Cells at or below this area are dropped.
    pub area_min: f64,
    /// Affine-map consistency.
    pub affine: f64,
    /// Relative tiling error allowed for the whole atlas.
    pub tiling: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { geo: 1e-9, normal: 1e-12, area_min: 1e-12, affine: 1e-8, tiling: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("polygon is not convex, counter-clockwise and non-degenerate")]
    NotConvex,
    #[error("normal vector is degenerate")]
    DegenerateNormal,
    #[error("batch norm must be folded before enumeration")]
    UnfoldedBatchNorm,
    #[error("network input dimension is {0}, enumeration needs 2")]
    NotPlanar(usize),
    #[error("cells cover area {covered}, domain area is {domain}")]
    Tiling { covered: f64, domain: f64 },
    #[error("point lies within tolerance of a cell boundary")]
    OnBoundary,
    #[error("point lies outside the domain")]
    OutsideDomain,
    #[error("point is not strictly inside the polygon")]
    NotInterior,
    #[error("zero direction vector")]
    ZeroDirection,
    #[error("neighborhood radius must be positive")]
    NonPositiveRadius,
    #[error("neighborhood is empty")]
    EmptyNeighborhood,
    #[error("atlas was enumerated without hyperplane traces")]
    MissingTraces,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Net(#[from] NetError),
}
