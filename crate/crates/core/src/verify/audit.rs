use alloc::vec::Vec;

use super::{VerifyError, VerifyOptions};
use crate::geometry::{ConvexPolygon, GeometryError, PartitionAtlas, Point};
use crate::linalg::Matrix;
use crate::net::{CpaGraph, Mode};

/// A unit's zero set on one pre-layer cell, clipped to the neighborhood.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TracePiece {
    pub module: usize,
    pub unit: usize,
    /// Unit normal and offset: the piece lies on `n·y + h = 0`.
    pub n: [f64; 2],
    pub h: f64,
    pub segment: [Point; 2],
}

impl TracePiece {
    fn id(&self) -> (usize, usize) {
        (self.module, self.unit)
    }

    fn at(&self, t: f64) -> Point {
        let [p, q] = self.segment;
        [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
    }

    fn length(&self) -> f64 {
        let [p, q] = self.segment;
        libm::hypot(q[0] - p[0], q[1] - p[1])
    }

    fn distance_to(&self, y: Point) -> f64 {
        let [p, q] = self.segment;
        let d = [q[0] - p[0], q[1] - p[1]];
        let len2 = d[0] * d[0] + d[1] * d[1];
        let t = if len2 > 0.0 { (((y[0] - p[0]) * d[0] + (y[1] - p[1]) * d[1]) / len2).clamp(0.0, 1.0) } else { 0.0 };
        let c = self.at(t);
        libm::hypot(y[0] - c[0], y[1] - c[1])
    }

    fn same_line(&self, other: &TracePiece, tol: f64) -> bool {
        let close = |s: f64| {
            (self.n[0] - s * other.n[0]).abs() <= tol
                && (self.n[1] - s * other.n[1]).abs() <= tol
                && (self.h - s * other.h).abs() <= tol
        };
        close(1.0) || close(-1.0)
    }
}

/// Trace pieces meeting the interior of `p` shrunk by `margin`.
pub fn trace_pieces(atlas: &PartitionAtlas, p: &ConvexPolygon, margin: f64) -> Result<Vec<TracePiece>, GeometryError> {
    if !atlas.has_traces {
        return Err(GeometryError::MissingTraces);
    }
    let mut out = Vec::new();
    for t in &atlas.traces {
        if !p.segment_hits_interior(&t.segment, margin) {
            continue;
        }
        let [s0, s1] = t.segment;
        let v = [s1[0] - s0[0], s1[1] - s0[1]];
        let Some((lo, hi)) = p.line_interval(s0, v, 0.0) else {
            continue;
        };
        let (lo, hi) = (lo.max(0.0), hi.min(1.0));
        let norm = libm::hypot(t.a[0], t.a[1]);
        out.push(TracePiece {
            module: t.module,
            unit: t.unit,
            n: [t.a[0] / norm, t.a[1] / norm],
            h: t.c / norm,
            segment: [[s0[0] + lo * v[0], s0[1] + lo * v[1]], [s0[0] + hi * v[0], s0[1] + hi * v[1]]],
        });
    }
    Ok(out)
}

/// Local non-degeneracy flags for the traces crossing a neighborhood.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GeneralPositionReport {
    /// Distinct units sharing a line over a stretch inside `P`.
    pub coincident_traces: Vec<[(usize, usize); 2]>,
    /// Three distinct units through one interior point.
    pub concurrent_triple_inside_p: Vec<[(usize, usize); 3]>,
    /// Units whose zero set shows no sign change at any sample.
    pub fold_trace_suspected: Vec<(usize, usize)>,
    /// Units whose sampled trace lies entirely on other traces.
    pub redundant_trace: Vec<(usize, usize)>,
    /// Units whose trace inside `P` bends (more than one line).
    pub non_affine_trace: Vec<(usize, usize)>,
}

impl GeneralPositionReport {
    pub fn is_clean(&self) -> bool {
        self.coincident_traces.is_empty()
            && self.concurrent_triple_inside_p.is_empty()
            && self.fold_trace_suspected.is_empty()
            && self.redundant_trace.is_empty()
            && self.non_affine_trace.is_empty()
    }
}

/// Intersection of two pieces' segments, if the lines cross within both.
fn crossing(a: &TracePiece, b: &TracePiece) -> Option<Point> {
    let det = a.n[0] * b.n[1] - a.n[1] * b.n[0];
    if det.abs() < 1e-12 {
        return None;
    }
    let y = [(-a.h * b.n[1] + b.h * a.n[1]) / det, (-b.h * a.n[0] + a.h * b.n[0]) / det];
    let slack = 1e-9;
    (a.distance_to(y) <= slack && b.distance_to(y) <= slack).then_some(y)
}

/// Audits the traces of `atlas` crossing `p`.
pub fn general_position_audit(
    net: &CpaGraph,
    atlas: &PartitionAtlas,
    p: &ConvexPolygon,
    opts: &VerifyOptions,
) -> Result<GeneralPositionReport, VerifyError> {
    if atlas.net_fingerprint != net.fingerprint() {
        return Err(VerifyError::AtlasMismatch);
    }
    let pieces = trace_pieces(atlas, p, opts.tol.geo)?;
    audit_pieces(net, &pieces, p, opts)
}

pub(crate) fn audit_pieces(
    net: &CpaGraph,
    pieces: &[TracePiece],
    p: &ConvexPolygon,
    opts: &VerifyOptions,
) -> Result<GeneralPositionReport, VerifyError> {
    let line_tol = 1e-8;
    let point_tol = 1e-8;
    let mut report = GeneralPositionReport::default();
    let mut units: Vec<(usize, usize)> = pieces.iter().map(TracePiece::id).collect();
    units.sort_unstable();
    units.dedup();

    for &u in &units {
        let own: Vec<&TracePiece> = pieces.iter().filter(|t| t.id() == u).collect();
        if own.iter().any(|t| !t.same_line(own[0], line_tol)) {
            report.non_affine_trace.push(u);
        }
    }

    for (i, a) in pieces.iter().enumerate() {
        for b in &pieces[i + 1..] {
            if a.id() == b.id() || !a.same_line(b, line_tol) {
                continue;
            }
            let overlap = (0..=8).filter(|&k| b.distance_to(a.at(k as f64 / 8.0)) <= point_tol).count() >= 2;
            let pair = [a.id().min(b.id()), a.id().max(b.id())];
            if overlap && !report.coincident_traces.contains(&pair) {
                report.coincident_traces.push(pair);
            }
        }
    }

    for (i, a) in pieces.iter().enumerate() {
        for (j, b) in pieces.iter().enumerate().skip(i + 1) {
            if a.id() == b.id() {
                continue;
            }
            let Some(y) = crossing(a, b) else { continue };
            if !p.contains_strict(y, opts.tol.geo) {
                continue;
            }
            for c in pieces.iter().skip(j + 1) {
                if c.id() == a.id() || c.id() == b.id() || c.distance_to(y) > point_tol {
                    continue;
                }
                let mut triple = [a.id(), b.id(), c.id()];
                triple.sort_unstable();
                if !report.concurrent_triple_inside_p.contains(&triple) {
                    report.concurrent_triple_inside_p.push(triple);
                }
            }
        }
    }

    let samples = opts.audit_samples.max(1);
    for &u in &units {
        let own: Vec<&TracePiece> = pieces.iter().filter(|t| t.id() == u).collect();
        let total: f64 = own.iter().map(|t| t.length()).sum();
        let pts = sample_along(&own, total, samples);
        if pts.is_empty() {
            continue;
        }
        let covered = pts.iter().all(|&(y, _)| pieces.iter().any(|t| t.id() != u && t.distance_to(y) <= point_tol));
        if covered {
            report.redundant_trace.push(u);
        }
        if is_fold(net, u, &pts)? {
            report.fold_trace_suspected.push(u);
        }
    }
    Ok(report)
}

/// `count` points spread by arc length over the pieces, with each point's normal.
fn sample_along(pieces: &[&TracePiece], total: f64, count: usize) -> Vec<(Point, [f64; 2])> {
    if !(total > 0.0) {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let mut s = (k as f64 + 0.5) / count as f64 * total;
        for t in pieces {
            let len = t.length();
            if s <= len || core::ptr::eq(*t, *pieces.last().unwrap()) {
                out.push((t.at((s / len).min(1.0)), t.n));
                break;
            }
            s -= len;
        }
    }
    out
}

/// True when the unit's pre-activation keeps one sign across every sample.
fn is_fold(net: &CpaGraph, (module, unit): (usize, usize), pts: &[(Point, [f64; 2])]) -> Result<bool, VerifyError> {
    let step = 1e-7;
    let mut data = Vec::with_capacity(pts.len() * 4);
    for &(y, n) in pts {
        data.extend_from_slice(&[y[0] + step * n[0], y[1] + step * n[1], y[0] - step * n[0], y[1] - step * n[1]]);
    }
    let batch = Matrix::from_vec(pts.len() * 2, 2, data);
    let trace = net.forward_with(&batch, Mode::Eval)?;
    let z = trace.pre_activation(module);
    let changes = (0..pts.len()).any(|k| {
        let (plus, minus) = (z[(2 * k, unit)], z[(2 * k + 1, unit)]);
        (plus > 0.0) != (minus > 0.0)
    });
    Ok(!changes)
}
