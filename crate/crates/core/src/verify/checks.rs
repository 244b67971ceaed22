use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{
    augment_with_unit, general_position_audit, planar_arrangement_bound, Check, Instance, NewUnit, Reproducer,
    VerificationRecord, VerifyError, VerifyOptions,
};
use crate::geometry::{
    cells_meeting, directional_thickness, enumerate_regions, local_counts_with, local_neighborhood,
    local_pre_activation_maps, AffineCell, ConvexPolygon, GeometryError, LocalCounts, NeighborhoodShape,
    PartitionAtlas, Point,
};
use crate::linalg::Matrix;
use crate::net::{CpaGraph, Mode};

fn ensure_same(net: &CpaGraph, atlas: &PartitionAtlas) -> Result<(), VerifyError> {
    if atlas.net_fingerprint != net.fingerprint() {
        return Err(VerifyError::AtlasMismatch);
    }
    Ok(())
}

/// Geometry failures that describe the instance rather than a bug.
fn degenerate_instance(e: &GeometryError) -> Option<&'static str> {
    match e {
        GeometryError::EmptyNeighborhood => Some("neighborhood has no area"),
        GeometryError::OutsideDomain => Some("x outside the domain"),
        GeometryError::OnBoundary => Some("x on a cell boundary"),
        GeometryError::NotInterior => Some("x not interior to P"),
        GeometryError::DegenerateNormal => Some("degenerate normal"),
        _ => None,
    }
}

macro_rules! or_skip {
    ($rec:expr, $e:expr) => {
        match $e {
            Ok(v) => v,
            Err(err) => match degenerate_instance(&err) {
                Some(why) => return Ok($rec.skip(why)),
                None => return Err(err.into()),
            },
        }
    };
}

/// `(I_ε, N_ε)` under both tolerance settings, or `None` when they disagree.
fn settled_counts(
    atlas: &PartitionAtlas,
    p: &ConvexPolygon,
    opts: &VerifyOptions,
) -> Result<Option<LocalCounts>, GeometryError> {
    let loose = local_counts_with(atlas, p, opts.tol.geo, opts.tol.area_min)?;
    let robust = local_counts_with(atlas, p, opts.robust_margin, opts.robust_area)?;
    Ok((loose.i_eps == robust.i_eps && loose.n_eps == robust.n_eps).then_some(loose))
}

fn reproducer(net: &CpaGraph, atlas: &PartitionAtlas, p: &ConvexPolygon, added: Option<&NewUnit>) -> Reproducer {
    Reproducer {
        net: net.clone(),
        added_unit: added.cloned(),
        domain: atlas.domain.clone(),
        neighborhood: Some(p.clone()),
        tolerances: atlas.tolerances,
    }
}

fn base_record(check: Check, net: &CpaGraph, x: Point, eps: f64, shape: NeighborhoodShape) -> VerificationRecord {
    let mut inst = Instance::new(net);
    inst.x = Some(x);
    inst.eps = Some(eps);
    inst.shape = Some(shape);
    VerificationRecord::new(check, inst)
}

/// `N_ε ≥ 1 + I_ε` on `P_ε(x)`.
pub fn check_lower_bound(
    net: &CpaGraph,
    atlas: &PartitionAtlas,
    x: Point,
    eps: f64,
    shape: NeighborhoodShape,
    opts: &VerifyOptions,
) -> Result<VerificationRecord, VerifyError> {
    ensure_same(net, atlas)?;
    let rec = base_record(Check::LowerBound, net, x, eps, shape);
    let p = or_skip!(rec, local_neighborhood(atlas, x, eps, shape));
    let Some(counts) = or_skip!(rec, settled_counts(atlas, &p, opts)) else {
        return Ok(rec.skip("margin-ambiguous counts"));
    };
    let mut rec = rec;
    rec.i_eps = Some(counts.i_eps);
    rec.n_eps = Some(counts.n_eps);
    rec.bound = Some((1 + counts.i_eps) as f64);
    let holds = counts.n_eps > counts.i_eps;
    Ok(rec
        .decide(holds, format!("N={} vs 1+I={}", counts.n_eps, 1 + counts.i_eps), || reproducer(net, atlas, &p, None)))
}

/// `Σ_{k≤2} C(I, k)` as a float for the record.
pub fn upper_bound_value(i_eps: usize) -> f64 {
    planar_arrangement_bound(i_eps) as f64
}

/// `N_ε ≤ Σ_{k≤2} C(I_ε, k)` on the square neighborhood, for instances
/// whose intersecting traces pass the general-position audit.
pub fn check_upper_bound(
    net: &CpaGraph,
    atlas: &PartitionAtlas,
    x: Point,
    eps: f64,
    opts: &VerifyOptions,
) -> Result<VerificationRecord, VerifyError> {
    ensure_same(net, atlas)?;
    let rec = base_record(Check::UpperBound, net, x, eps, NeighborhoodShape::Square);
    let p = or_skip!(rec, local_neighborhood(atlas, x, eps, NeighborhoodShape::Square));
    let Some(counts) = or_skip!(rec, settled_counts(atlas, &p, opts)) else {
        return Ok(rec.skip("margin-ambiguous counts"));
    };
    let mut rec = rec;
    rec.i_eps = Some(counts.i_eps);
    rec.n_eps = Some(counts.n_eps);
    let audit = general_position_audit(net, atlas, &p, opts)?;
    if !audit.is_clean() {
        let mut flags: Vec<&str> = Vec::new();
        if !audit.coincident_traces.is_empty() {
            flags.push("coincident");
        }
        if !audit.concurrent_triple_inside_p.is_empty() {
            flags.push("concurrent");
        }
        if !audit.fold_trace_suspected.is_empty() {
            flags.push("fold");
        }
        if !audit.redundant_trace.is_empty() {
            flags.push("redundant");
        }
        if !audit.non_affine_trace.is_empty() {
            flags.push("non-affine");
        }
        return Ok(rec.skip(format!("not in general position: {}", flags.join(", "))));
    }
    let bound = planar_arrangement_bound(counts.i_eps);
    rec.bound = Some(bound as f64);
    let holds = counts.n_eps as u128 <= bound;
    Ok(rec.decide(holds, format!("N={} vs bound {bound}", counts.n_eps), || reproducer(net, atlas, &p, None)))
}

/// Whether a candidate unit cuts some cell of the partition inside `P`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutCondition {
    /// Both signs occur beyond the robust margin in cell `cell`.
    Met { cell: usize },
    /// No cell sees both signs even at the atlas tolerance.
    Unmet,
    /// Both signs occur only within the robust margin.
    Ambiguous,
}

/// Evaluates the cut condition for the unit appended to `augmented`
/// (the last unit of its module) against the cells of `atlas` meeting `p`.
pub fn cut_condition(
    augmented: &CpaGraph,
    unit: &NewUnit,
    atlas: &PartitionAtlas,
    p: &ConvexPolygon,
    opts: &VerifyOptions,
) -> Result<CutCondition, VerifyError> {
    let index = augmented.module_widths()[unit.module - 1] - 1;
    let mut ambiguous = false;
    for (cell, overlap) in cells_meeting(atlas, p, opts.tol.area_min) {
        let maps = local_pre_activation_maps(augmented, atlas.cells[cell].polygon.centroid())?;
        let map = &maps[unit.module - 1];
        let a = map.normal(index);
        let norm = libm::hypot(a[0], a[1]);
        if norm <= opts.tol.normal {
            continue;
        }
        let (lo, hi) = overlap
            .vertices()
            .iter()
            .map(|&v| map.eval(index, v) / norm)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s), hi.max(s)));
        if lo < -opts.robust_margin && hi > opts.robust_margin {
            return Ok(CutCondition::Met { cell });
        }
        if lo < -opts.tol.geo && hi > opts.tol.geo {
            ambiguous = true;
        }
    }
    Ok(if ambiguous { CutCondition::Ambiguous } else { CutCondition::Unmet })
}

/// Adds `unit` and checks `N_after ≥ N_before + 1` on the square `P_ε(x)`.
pub fn check_monotone_growth(
    net: &CpaGraph,
    atlas_before: &PartitionAtlas,
    unit: &NewUnit,
    x: Point,
    eps: f64,
    opts: &VerifyOptions,
) -> Result<VerificationRecord, VerifyError> {
    ensure_same(net, atlas_before)?;
    let mut rec = base_record(Check::MonotoneGrowth, net, x, eps, NeighborhoodShape::Square);
    let augmented = augment_with_unit(net, unit)?;
    rec.instance.unit = Some((unit.module, augmented.module_widths()[unit.module - 1] - 1));
    let p = or_skip!(rec, local_neighborhood(atlas_before, x, eps, NeighborhoodShape::Square));
    match cut_condition(&augmented, unit, atlas_before, &p, opts)? {
        CutCondition::Met { .. } => {}
        CutCondition::Unmet => return Ok(rec.skip("cut condition unmet")),
        CutCondition::Ambiguous => return Ok(rec.skip("cut condition within margin")),
    }
    let before = or_skip!(rec, settled_counts(atlas_before, &p, opts));
    let atlas_after = enumerate_regions(&augmented, &atlas_before.domain, &atlas_before.tolerances)?;
    let after = or_skip!(rec, settled_counts(&atlas_after, &p, opts));
    let (Some(before), Some(after)) = (before, after) else {
        return Ok(rec.skip("margin-ambiguous counts"));
    };
    rec.i_eps = Some(before.i_eps);
    rec.n_eps = Some(before.n_eps);
    rec.n_after = Some(after.n_eps);
    rec.bound = Some((before.n_eps + 1) as f64);
    let holds = after.n_eps > before.n_eps;
    Ok(rec.decide(holds, format!("N {} → {}", before.n_eps, after.n_eps), || {
        reproducer(net, atlas_before, &p, Some(unit))
    }))
}

/// If `|z(x)| < δ_ε(x; a)·‖a‖` (minus the strictness margin), the unit's
/// zero line must cross `int(P)` and the foot point
/// `y* = x − sign(z)·(|z|/‖a‖)·a/‖a‖` must lie in `int(P)` on the line.
///
/// `cell` must be a cell on which the unit's pre-activation is affine, i.e. a
/// cell of the partition induced by the modules before `unit.0`.
pub fn check_intersection_sufficiency(
    net: &CpaGraph,
    cell: &AffineCell,
    unit: (usize, usize),
    x: Point,
    p: &ConvexPolygon,
    opts: &VerifyOptions,
) -> Result<VerificationRecord, VerifyError> {
    let (module, index) = unit;
    let tol = &opts.tol;
    let mut inst = Instance::new(net);
    inst.x = Some(x);
    inst.unit = Some(unit);
    inst.shape = Some(NeighborhoodShape::ParentClip);
    let rec = VerificationRecord::new(Check::IntersectionSufficiency, inst);
    if module == 0 || module > net.num_modules() || index >= net.module_widths()[module - 1] {
        return Err(GeometryError::DimensionMismatch { expected: net.num_modules(), found: module }.into());
    }
    if cell.pattern.len() + 1 < module {
        return Ok(rec.skip("cell coarser than the unit's input partition"));
    }
    if p.vertices().iter().any(|&v| cell.polygon.boundary_clearance(v) < -tol.geo) {
        return Ok(rec.skip("P not inside the parent cell"));
    }
    if !p.contains_strict(x, tol.geo) {
        return Ok(rec.skip("x not interior to P"));
    }
    let maps = local_pre_activation_maps(net, cell.polygon.centroid())?;
    let map = &maps[module - 1];
    let a = map.normal(index);
    let c = map.c[index];
    let norm = libm::hypot(a[0], a[1]);
    if norm <= tol.normal {
        return Ok(rec.skip("degenerate normal"));
    }
    let mut rec = rec;
    let z = map.eval(index, x);
    let delta = or_skip!(rec, directional_thickness(p, x, a, tol.geo));
    let threshold = delta * norm;
    rec.z = Some(z);
    rec.threshold = Some(threshold);
    if z.abs() >= threshold - opts.strict_factor * tol.geo * norm {
        let why = if z.abs() >= threshold { "condition not met" } else { "within strictness margin" };
        return Ok(rec.skip(why));
    }
    let d = z.abs() / norm;
    let sign = if z > 0.0 {
        1.0
    } else if z < 0.0 {
        -1.0
    } else {
        0.0
    };
    let y = [x[0] - sign * d * a[0] / norm, x[1] - sign * d * a[1] / norm];
    let residual = (a[0] * y[0] + a[1] * y[1] + c).abs();
    rec.witness = Some(y);
    rec.witness_residual = Some(residual);

    let mut failures: Vec<String> = Vec::new();
    let crosses =
        p.chord(a, c).is_some_and(|[s, e]| p.contains_strict([0.5 * (s[0] + e[0]), 0.5 * (s[1] + e[1])], 0.0));
    if !crosses {
        failures.push("zero line misses int(P)".into());
    }
    if !p.contains_strict(y, 0.0) {
        failures.push("witness outside int(P)".into());
    }
    if !(residual < tol.geo) {
        failures.push(format!("witness residual {residual:e}"));
    }
    let actual = net.forward_with(&Matrix::from_vec(1, 2, y.to_vec()), Mode::Eval)?.pre_activation(module)[(0, index)];
    if !(actual.abs() <= tol.affine * norm.max(1.0)) {
        failures.push(format!("network pre-activation at witness {actual:e}"));
    }
    let reason =
        if failures.is_empty() { format!("|z|={:.3e} < {threshold:.3e}", z.abs()) } else { failures.join("; ") };
    Ok(rec.decide(failures.is_empty(), reason, || Reproducer {
        net: net.clone(),
        added_unit: None,
        domain: cell.polygon.clone(),
        neighborhood: Some(p.clone()),
        tolerances: *tol,
    }))
}
