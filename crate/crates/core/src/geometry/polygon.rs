use alloc::vec::Vec;

use super::{GeometryError, Point, Tolerances};

#[inline]
pub(crate) fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

#[inline]
fn lerp(p: Point, q: Point, t: f64) -> Point {
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Convex polygon with counter-clockwise vertices.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConvexPolygon {
    vertices: Vec<Point>,
}

impl ConvexPolygon {
    /// Checks orientation and convexity (consecutive edge cross products ≥ −`tol`).
    pub fn new(vertices: Vec<Point>, tol: f64) -> Result<Self, GeometryError> {
        let n = vertices.len();
        if n < 3 {
            return Err(GeometryError::NotConvex);
        }
        for i in 0..n {
            if vertices[i] == vertices[(i + 1) % n] {
                return Err(GeometryError::NotConvex);
            }
            if cross(vertices[i], vertices[(i + 1) % n], vertices[(i + 2) % n]) < -tol {
                return Err(GeometryError::NotConvex);
            }
        }
        let poly = ConvexPolygon { vertices };
        if poly.signed_area() <= 0.0 {
            return Err(GeometryError::NotConvex);
        }
        Ok(poly)
    }

    pub fn rect(min: Point, max: Point) -> Self {
        ConvexPolygon { vertices: alloc::vec![min, [max[0], min[1]], max, [min[0], max[1]]] }
    }

    /// Axis-aligned square of half-width `half` centred at `center`.
    pub fn square(center: Point, half: f64) -> Self {
        Self::rect([center[0] - half, center[1] - half], [center[0] + half, center[1] + half])
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    fn signed_area(&self) -> f64 {
        0.5 * self.edges().map(|(p, q)| p[0] * q[1] - q[0] * p[1]).sum::<f64>()
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    pub fn perimeter(&self) -> f64 {
        self.edges().map(|(p, q)| libm::hypot(q[0] - p[0], q[1] - p[1])).sum()
    }

    /// Area centroid; falls back to the vertex mean for degenerate polygons.
    pub fn centroid(&self) -> Point {
        let a = self.signed_area();
        if a.abs() < 1e-300 {
            let n = self.vertices.len() as f64;
            let s = self.vertices.iter().fold([0.0, 0.0], |s, v| [s[0] + v[0], s[1] + v[1]]);
            return [s[0] / n, s[1] / n];
        }
        // shift to the first vertex for accuracy on small cells far from the origin
        let o = self.vertices[0];
        let (mut cx, mut cy, mut a2) = (0.0, 0.0, 0.0);
        for (p, q) in self.edges() {
            let (px, py, qx, qy) = (p[0] - o[0], p[1] - o[1], q[0] - o[0], q[1] - o[1]);
            let w = px * qy - qx * py;
            a2 += w;
            cx += (px + qx) * w;
            cy += (py + qy) * w;
        }
        [o[0] + cx / (3.0 * a2), o[1] + cy / (3.0 * a2)]
    }

    pub fn bbox(&self) -> (Point, Point) {
        self.vertices.iter().fold(([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]), |(lo, hi), v| {
            ([lo[0].min(v[0]), lo[1].min(v[1])], [hi[0].max(v[0]), hi[1].max(v[1])])
        })
    }

    /// Edge half-planes `n·y ≤ h` with unit outward normals.
    pub fn halfplanes(&self) -> impl Iterator<Item = ([f64; 2], f64)> + '_ {
        self.edges().map(|(p, q)| {
            let (dx, dy) = (q[0] - p[0], q[1] - p[1]);
            let len = libm::hypot(dx, dy);
            let n = [dy / len, -dx / len];
            (n, n[0] * p[0] + n[1] * p[1])
        })
    }

    /// Signed clearance of `x` from the boundary: positive inside.
    pub fn boundary_clearance(&self, x: Point) -> f64 {
        self.halfplanes().map(|(n, h)| h - n[0] * x[0] - n[1] * x[1]).fold(f64::INFINITY, f64::min)
    }

    /// True when `x` is inside with clearance strictly greater than `margin`.
    pub fn contains_strict(&self, x: Point, margin: f64) -> bool {
        self.boundary_clearance(x) > margin
    }

    /// Splits along `a·y + c = 0` into the `≤ 0` and `≥ 0` parts.
    ///
    /// Vertices within `tol.geo` of the line go to both sides; parts with area
    /// at most `tol.area_min` are dropped.
    pub fn split(
        &self,
        a: [f64; 2],
        c: f64,
        tol: &Tolerances,
    ) -> Result<(Option<ConvexPolygon>, Option<ConvexPolygon>), GeometryError> {
        let norm = libm::hypot(a[0], a[1]);
        if !(norm > tol.normal) {
            return Err(GeometryError::DegenerateNormal);
        }
        let s: Vec<f64> = self.vertices.iter().map(|v| (a[0] * v[0] + a[1] * v[1] + c) / norm).collect();
        if s.iter().all(|&v| v <= tol.geo) {
            return Ok((Some(self.clone()), None));
        }
        if s.iter().all(|&v| v >= -tol.geo) {
            return Ok((None, Some(self.clone())));
        }
        let n = self.vertices.len();
        let mut neg = Vec::with_capacity(n + 2);
        let mut pos = Vec::with_capacity(n + 2);
        for i in 0..n {
            let j = (i + 1) % n;
            let (vi, si, sj) = (self.vertices[i], s[i], s[j]);
            if si <= tol.geo {
                neg.push(vi);
            }
            if si >= -tol.geo {
                pos.push(vi);
            }
            if (si < -tol.geo && sj > tol.geo) || (si > tol.geo && sj < -tol.geo) {
                let p = lerp(vi, self.vertices[j], si / (si - sj));
                neg.push(p);
                pos.push(p);
            }
        }
        let keep = |v: Vec<Point>| {
            let poly = ConvexPolygon { vertices: dedup_ring(v) };
            (poly.vertices.len() >= 3 && poly.area() > tol.area_min).then_some(poly)
        };
        Ok((keep(neg), keep(pos)))
    }

    /// Intersection with the half-plane `n·y ≤ h`.
    pub fn clip_halfplane(&self, n: [f64; 2], h: f64) -> Option<ConvexPolygon> {
        let s: Vec<f64> = self.vertices.iter().map(|v| n[0] * v[0] + n[1] * v[1] - h).collect();
        if s.iter().all(|&v| v <= 0.0) {
            return Some(self.clone());
        }
        if s.iter().all(|&v| v >= 0.0) {
            return None;
        }
        let len = self.vertices.len();
        let mut out = Vec::with_capacity(len + 1);
        for i in 0..len {
            let j = (i + 1) % len;
            if s[i] <= 0.0 {
                out.push(self.vertices[i]);
            }
            if (s[i] < 0.0 && s[j] > 0.0) || (s[i] > 0.0 && s[j] < 0.0) {
                out.push(lerp(self.vertices[i], self.vertices[j], s[i] / (s[i] - s[j])));
            }
        }
        let out = dedup_ring(out);
        (out.len() >= 3).then_some(ConvexPolygon { vertices: out })
    }

    /// Intersection of two convex polygons.
    pub fn intersect(&self, other: &ConvexPolygon) -> Option<ConvexPolygon> {
        let (lo, hi) = self.bbox();
        let (olo, ohi) = other.bbox();
        if lo[0] > ohi[0] || olo[0] > hi[0] || lo[1] > ohi[1] || olo[1] > hi[1] {
            return None;
        }
        let mut cur = self.clone();
        for (n, h) in other.halfplanes() {
            cur = cur.clip_halfplane(n, h)?;
        }
        Some(cur)
    }

    /// Parameter interval of the line `x + t·v` inside the polygon shrunk by
    /// `margin`, or `None` when it misses.
    pub fn line_interval(&self, x: Point, v: [f64; 2], margin: f64) -> Option<(f64, f64)> {
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for (n, h) in self.halfplanes() {
            let rate = n[0] * v[0] + n[1] * v[1];
            let slack = h - margin - (n[0] * x[0] + n[1] * x[1]);
            if rate.abs() < 1e-300 {
                if slack < 0.0 {
                    return None;
                }
                continue;
            }
            let t = slack / rate;
            if rate > 0.0 {
                hi = hi.min(t);
            } else {
                lo = lo.max(t);
            }
        }
        (lo <= hi).then_some((lo, hi))
    }

    /// The chord of `a·y + c = 0` through the polygon, if it crosses with
    /// positive length.
    pub fn chord(&self, a: [f64; 2], c: f64) -> Option<[Point; 2]> {
        let nn = a[0] * a[0] + a[1] * a[1];
        if nn == 0.0 {
            return None;
        }
        let foot = [-c * a[0] / nn, -c * a[1] / nn];
        let dir = [-a[1], a[0]];
        let (t0, t1) = self.line_interval(foot, dir, 0.0)?;
        (t1 > t0).then(|| {
            [lerp(foot, [foot[0] + dir[0], foot[1] + dir[1]], t0), lerp(foot, [foot[0] + dir[0], foot[1] + dir[1]], t1)]
        })
    }

    /// Whether the closed segment `p–q` meets the polygon interior shrunk by
    /// `margin` in a piece of positive length.
    pub fn segment_hits_interior(&self, seg: &[Point; 2], margin: f64) -> bool {
        let v = [seg[1][0] - seg[0][0], seg[1][1] - seg[0][1]];
        match self.line_interval(seg[0], v, margin) {
            Some((lo, hi)) => hi.min(1.0) > lo.max(0.0),
            None => false,
        }
    }
}

/// Drops consecutive (and wrap-around) duplicate points.
fn dedup_ring(mut v: Vec<Point>) -> Vec<Point> {
    v.dedup();
    while v.len() > 1 && v.first() == v.last() {
        v.pop();
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> ConvexPolygon {
        ConvexPolygon::square([0.0, 0.0], 1.0)
    }

    #[test]
    fn square_basics() {
        let p = unit();
        assert_eq!(p.area(), 4.0);
        assert_eq!(p.centroid(), [0.0, 0.0]);
        assert!(p.contains_strict([0.99, 0.0], 0.0));
        assert!(!p.contains_strict([1.0, 0.0], 0.0));
        assert!(ConvexPolygon::new(p.vertices().to_vec(), 1e-12).is_ok());
        let mut cw = p.vertices().to_vec();
        cw.reverse();
        assert_eq!(ConvexPolygon::new(cw, 1e-12), Err(GeometryError::NotConvex));
    }

    #[test]
    fn split_through_middle() {
        let (neg, pos) = unit().split([1.0, 0.0], 0.0, &Tolerances::default()).unwrap();
        assert_eq!(neg.unwrap().area(), 2.0);
        assert_eq!(pos.unwrap().area(), 2.0);
    }

    #[test]
    fn split_missing_line() {
        let (neg, pos) = unit().split([1.0, 0.0], -5.0, &Tolerances::default()).unwrap();
        assert_eq!(neg.unwrap(), unit());
        assert!(pos.is_none());
    }

    #[test]
    fn split_through_vertex_conserves_area() {
        // line through (1, 1) and (−1, 0): x − 2y + 1 = 0
        let (neg, pos) = unit().split([1.0, -2.0], 1.0, &Tolerances::default()).unwrap();
        let (neg, pos) = (neg.unwrap(), pos.unwrap());
        assert!((neg.area() + pos.area() - 4.0).abs() < 1e-12);
        assert!((neg.area() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn split_rejects_degenerate_normal() {
        assert_eq!(unit().split([0.0, 0.0], 1.0, &Tolerances::default()), Err(GeometryError::DegenerateNormal));
    }

    #[test]
    fn chord_and_segment_tests() {
        let p = unit();
        let ch = p.chord([1.0, 0.0], -0.5).unwrap();
        assert!((ch[0][0] - 0.5).abs() < 1e-15 && (ch[1][0] - 0.5).abs() < 1e-15);
        assert!((ch[0][1] - ch[1][1]).abs() > 1.99);
        assert!(p.chord([1.0, 0.0], -2.0).is_none());
        assert!(p.segment_hits_interior(&[[0.0, 0.0], [3.0, 0.0]], 1e-9));
        assert!(!p.segment_hits_interior(&[[1.0, -2.0], [1.0, 2.0]], 1e-9));
        assert!(!p.segment_hits_interior(&[[2.0, 0.0], [3.0, 0.0]], 1e-9));
    }

    #[test]
    fn intersect_overlapping_squares() {
        let a = unit();
        let b = ConvexPolygon::square([1.0, 1.0], 1.0);
        assert!((a.intersect(&b).unwrap().area() - 1.0).abs() < 1e-15);
        assert!(a.intersect(&ConvexPolygon::square([5.0, 5.0], 1.0)).is_none());
    }
}
