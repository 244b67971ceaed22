use alloc::vec::Vec;

use super::{local_pre_activation_maps, AffineCell, ConvexPolygon, GeometryError, PartitionAtlas, Point};
use crate::net::CpaGraph;

/// Distances are clamped here before taking logs.
pub const LOG_DISTANCE_FLOOR: f64 = 1e-12;

/// `|z| / ‖a‖`.
pub fn hyperplane_distance(z: f64, a: [f64; 2], tol_normal: f64) -> Result<f64, GeometryError> {
    let n = libm::hypot(a[0], a[1]);
    if !(n > tol_normal) {
        return Err(GeometryError::DegenerateNormal);
    }
    Ok(z.abs() / n)
}

/// Largest `t` such that `x ± s·v/‖v‖` stays in `poly` for all `|s| ≤ t`.
pub fn directional_thickness(poly: &ConvexPolygon, x: Point, v: [f64; 2], tol_geo: f64) -> Result<f64, GeometryError> {
    let n = libm::hypot(v[0], v[1]);
    if n == 0.0 {
        return Err(GeometryError::ZeroDirection);
    }
    if !poly.contains_strict(x, tol_geo) {
        return Err(GeometryError::NotInterior);
    }
    let u = [v[0] / n, v[1] / n];
    let (lo, hi) = poly.line_interval(x, u, 0.0).ok_or(GeometryError::NotInterior)?;
    Ok(hi.min(-lo))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum NeighborhoodShape {
    /// Axis-aligned square, clipped to the domain.
    #[default]
    Square,
    /// The square intersected with the parent cell of `x`.
    ParentClip,
}

pub fn local_neighborhood(
    atlas: &PartitionAtlas,
    x: Point,
    eps: f64,
    shape: NeighborhoodShape,
) -> Result<ConvexPolygon, GeometryError> {
    if !(eps > 0.0) {
        return Err(GeometryError::NonPositiveRadius);
    }
    if !atlas.domain.contains_strict(x, 0.0) {
        return Err(GeometryError::OutsideDomain);
    }
    let square = ConvexPolygon::square(x, eps);
    let clipped = match shape {
        NeighborhoodShape::Square => square.intersect(&atlas.domain),
        NeighborhoodShape::ParentClip => square.intersect(&parent_cell(atlas, x)?.polygon),
    };
    clipped.filter(|p| p.area() > atlas.tolerances.area_min).ok_or(GeometryError::EmptyNeighborhood)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalCounts {
    /// `(module, unit)` pairs whose zero set meets the interior, sorted.
    pub intersecting: Vec<(usize, usize)>,
    pub i_eps: usize,
    pub n_eps: usize,
}

/// Intersecting units and cells meeting `p`, using the atlas tolerances.
pub fn local_counts(atlas: &PartitionAtlas, p: &ConvexPolygon) -> Result<LocalCounts, GeometryError> {
    local_counts_with(atlas, p, atlas.tolerances.geo, atlas.tolerances.area_min)
}

/// As [`local_counts`], with explicit interior margin and area threshold.
pub fn local_counts_with(
    atlas: &PartitionAtlas,
    p: &ConvexPolygon,
    margin: f64,
    area_min: f64,
) -> Result<LocalCounts, GeometryError> {
    if !atlas.has_traces {
        return Err(GeometryError::MissingTraces);
    }
    if p.area() <= area_min {
        return Err(GeometryError::EmptyNeighborhood);
    }
    let mut intersecting: Vec<(usize, usize)> = atlas
        .traces
        .iter()
        .filter(|t| p.segment_hits_interior(&t.segment, margin))
        .map(|t| (t.module, t.unit))
        .collect();
    intersecting.sort_unstable();
    intersecting.dedup();
    let n_eps = cells_meeting(atlas, p, area_min).count();
    Ok(LocalCounts { i_eps: intersecting.len(), intersecting, n_eps })
}

/// Cells whose overlap with `p` has area above `area_min`, with that overlap.
pub(crate) fn cells_meeting<'a>(
    atlas: &'a PartitionAtlas,
    p: &'a ConvexPolygon,
    area_min: f64,
) -> impl Iterator<Item = (usize, ConvexPolygon)> + 'a {
    atlas
        .cells
        .iter()
        .enumerate()
        .filter_map(move |(i, c)| c.polygon.intersect(p).filter(|o| o.area() > area_min).map(|o| (i, o)))
}

/// The cell strictly containing `x`.
pub fn parent_cell(atlas: &PartitionAtlas, x: Point) -> Result<&AffineCell, GeometryError> {
    if !atlas.domain.contains_strict(x, -atlas.tolerances.geo) {
        return Err(GeometryError::OutsideDomain);
    }
    atlas.cells.iter().find(|c| c.polygon.contains_strict(x, atlas.tolerances.geo)).ok_or(GeometryError::OnBoundary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ProfileScope {
    AllNeurons,
    IntersectNeurons,
}

/// Natural-log data-to-hyperplane distances for one module.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DistanceProfile {
    pub module: usize,
    pub all: Vec<f64>,
    pub intersect: Vec<f64>,
    /// Unit/sample pairs with a degenerate local normal, excluded from both scopes.
    pub degenerate: usize,
    /// Distances clamped to the floor.
    pub clamped: usize,
    /// Samples whose neighborhood could not be formed; they contribute to `all` only.
    pub no_neighborhood: usize,
}

impl DistanceProfile {
    pub fn scope(&self, scope: ProfileScope) -> &[f64] {
        match scope {
            ProfileScope::AllNeurons => &self.all,
            ProfileScope::IntersectNeurons => &self.intersect,
        }
    }
}

/// `log d_{ℓ,i}(x)` for every sample and unit of `module`; the intersect scope
/// keeps units whose zero set crosses the sample's neighborhood.
pub fn distance_profile(
    net: &CpaGraph,
    atlas: &PartitionAtlas,
    points: &[Point],
    module: usize,
    eps: f64,
    shape: NeighborhoodShape,
) -> Result<DistanceProfile, GeometryError> {
    let modules = net.num_modules();
    if module == 0 || module > modules {
        return Err(GeometryError::DimensionMismatch { expected: modules, found: module });
    }
    let tol = atlas.tolerances;
    let mut out = DistanceProfile { module, ..DistanceProfile::default() };
    for &x in points {
        let maps = local_pre_activation_maps(net, x)?;
        let map = &maps[module - 1];
        let hits = match local_neighborhood(atlas, x, eps, shape).and_then(|p| local_counts(atlas, &p)) {
            Ok(c) => Some(c.intersecting),
            Err(GeometryError::MissingTraces) => return Err(GeometryError::MissingTraces),
            Err(_) => {
                out.no_neighborhood += 1;
                None
            }
        };
        for unit in 0..map.c.len() {
            let Ok(d) = hyperplane_distance(map.eval(unit, x), map.normal(unit), tol.normal) else {
                out.degenerate += 1;
                continue;
            };
            if d < LOG_DISTANCE_FLOOR {
                out.clamped += 1;
            }
            let log_d = libm::log(d.max(LOG_DISTANCE_FLOOR));
            out.all.push(log_d);
            if hits.as_ref().is_some_and(|h| h.binary_search(&(module, unit)).is_ok()) {
                out.intersect.push(log_d);
            }
        }
    }
    Ok(out)
}
