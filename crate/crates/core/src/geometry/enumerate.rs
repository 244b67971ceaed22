use alloc::vec;
use alloc::vec::Vec;

use super::{ConvexPolygon, GeometryError, Point, Tolerances};
use crate::linalg::{dot, Matrix};
use crate::net::{CpaGraph, Op};
use crate::rng::Rng;

/// A convex cell together with the affine map of the features on it.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AffineCell {
    pub polygon: ConvexPolygon,
    /// `m × 2`; features are `a·y + q` on the polygon.
    pub a: Matrix,
    pub q: Vec<f64>,
    /// Per activation module, `true` where the unit's pre-activation is positive.
    pub pattern: Vec<Vec<bool>>,
    /// Number of ops the map accounts for.
    pub frontier: usize,
}

impl AffineCell {
    /// Applies the cell's affine map at `y`.
    pub fn eval(&self, y: Point) -> Vec<f64> {
        self.a.iter_rows().zip(&self.q).map(|(r, q)| r[0] * y[0] + r[1] * y[1] + q).collect()
    }

    /// Pattern flattened to a `0`/`1` string, modules in order.
    pub fn pattern_bits(&self) -> alloc::string::String {
        self.pattern.iter().flatten().map(|&b| if b { '1' } else { '0' }).collect()
    }
}

/// One piece of a unit's zero set: its line on one cell of the partition the
/// previous modules induce, clipped to that cell.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HyperplaneTrace {
    /// 1-based activation module.
    pub module: usize,
    pub unit: usize,
    pub a: [f64; 2],
    pub c: f64,
    pub segment: [Point; 2],
    /// Index of the owning cell among the cells present when the module was reached.
    pub owner: usize,
}

/// Every full-dimensional cell the network induces on a domain.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PartitionAtlas {
    pub domain: ConvexPolygon,
    pub cells: Vec<AffineCell>,
    pub traces: Vec<HyperplaneTrace>,
    /// Unit/cell pairs skipped because the local normal was degenerate.
    pub degenerate_normals: usize,
    pub net_fingerprint: u64,
    pub tolerances: Tolerances,
    /// Whether `traces` was populated.
    pub has_traces: bool,
}

impl PartitionAtlas {
    pub fn count(&self) -> usize {
        self.cells.len()
    }

    pub fn covered_area(&self) -> f64 {
        self.cells.iter().map(|c| c.polygon.area()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnumerateOptions {
    pub tol: Tolerances,
    pub collect_traces: bool,
    /// Stop after this many activation modules.
    pub max_modules: Option<usize>,
    /// Shuffle the unit split order within each module with this seed.
    pub shuffle_units: Option<u64>,
}

impl Default for EnumerateOptions {
    fn default() -> Self {
        EnumerateOptions { tol: Tolerances::default(), collect_traces: true, max_modules: None, shuffle_units: None }
    }
}

/// `a = Aᵀw`, `c = wᵀq + b`: the unit `(w, b)` as a line on the cell.
pub fn local_hyperplane(cell: &AffineCell, w: &[f64], b: f64) -> Result<([f64; 2], f64), GeometryError> {
    if w.len() != cell.q.len() {
        return Err(GeometryError::DimensionMismatch { expected: cell.q.len(), found: w.len() });
    }
    let a = cell.a.apply_t(w);
    Ok(([a[0], a[1]], dot(w, &cell.q) + b))
}

struct WorkCell {
    poly: ConvexPolygon,
    a: Matrix,
    q: Vec<f64>,
    pattern: Vec<Vec<bool>>,
    skips: Vec<(u32, Matrix, Vec<f64>)>,
}

fn apply_linear(a: &Matrix, q: &[f64], weight: &Matrix, bias: &[f64]) -> (Matrix, Vec<f64>) {
    let new_a = weight.matmul(a);
    let mut new_q = weight.apply(q);
    for (v, b) in new_q.iter_mut().zip(bias) {
        *v += b;
    }
    (new_a, new_q)
}

fn apply_diag(a: &mut Matrix, q: &mut [f64], scale: &[f64], shift: &[f64]) {
    for (i, (s, t)) in scale.iter().zip(shift).enumerate() {
        a.row_mut(i).iter_mut().for_each(|v| *v *= s);
        q[i] = q[i] * s + t;
    }
}

fn check_planar(net: &CpaGraph) -> Result<(), GeometryError> {
    if net.input_dim() != 2 {
        return Err(GeometryError::NotPlanar(net.input_dim()));
    }
    if net.has_batch_norm() {
        return Err(GeometryError::UnfoldedBatchNorm);
    }
    Ok(())
}

pub fn enumerate_regions(
    net: &CpaGraph,
    domain: &ConvexPolygon,
    tol: &Tolerances,
) -> Result<PartitionAtlas, GeometryError> {
    enumerate_with(net, domain, &EnumerateOptions { tol: *tol, ..EnumerateOptions::default() })
}

pub fn enumerate_with(
    net: &CpaGraph,
    domain: &ConvexPolygon,
    opts: &EnumerateOptions,
) -> Result<PartitionAtlas, GeometryError> {
    check_planar(net)?;
    let tol = &opts.tol;
    if domain.area() <= tol.area_min {
        return Err(GeometryError::NotConvex);
    }
    let mut shuffle_rng = opts.shuffle_units.map(Rng::seed_from_u64);
    let mut cells = vec![WorkCell {
        poly: domain.clone(),
        a: Matrix::identity(2),
        q: vec![0.0, 0.0],
        pattern: Vec::new(),
        skips: Vec::new(),
    }];
    let mut traces = Vec::new();
    let mut degenerate = 0;
    let mut frontier = 0;
    let mut modules_done = 0;
    for op in net.ops() {
        if opts.max_modules.is_some_and(|k| modules_done >= k) {
            break;
        }
        frontier += 1;
        match op {
            Op::Linear(l) => {
                for cell in &mut cells {
                    let (a, q) = apply_linear(&cell.a, &cell.q, &l.weight, &l.bias);
                    cell.a = a;
                    cell.q = q;
                }
            }
            Op::NormAffine(n) => {
                for cell in &mut cells {
                    apply_diag(&mut cell.a, &mut cell.q, &n.scale, &n.shift);
                }
            }
            Op::BatchNorm(_) => return Err(GeometryError::UnfoldedBatchNorm),
            Op::SkipBegin { tag } => {
                for cell in &mut cells {
                    cell.skips.push((*tag, cell.a.clone(), cell.q.clone()));
                }
            }
            Op::SkipAdd { tag } => {
                for cell in &mut cells {
                    let pos = cell
                        .skips
                        .iter()
                        .position(|(t, _, _)| t == tag)
                        .ok_or(GeometryError::Net(crate::net::NetError::SkipMismatch { tag: *tag }))?;
                    let (_, sa, sq) = cell.skips.remove(pos);
                    cell.a.add_assign(&sa);
                    cell.q.iter_mut().zip(&sq).for_each(|(v, s)| *v += s);
                }
            }
            Op::Activation { kind, module } => {
                let width = cells[0].q.len();
                if opts.collect_traces {
                    for (owner, cell) in cells.iter().enumerate() {
                        for unit in 0..width {
                            let a = [cell.a[(unit, 0)], cell.a[(unit, 1)]];
                            let c = cell.q[unit];
                            if libm::hypot(a[0], a[1]) <= tol.normal {
                                degenerate += 1;
                                continue;
                            }
                            if let Some(segment) = cell.poly.chord(a, c) {
                                traces.push(HyperplaneTrace { module: *module, unit, a, c, segment, owner });
                            }
                        }
                    }
                }
                let mut order: Vec<usize> = (0..width).collect();
                if let Some(rng) = shuffle_rng.as_mut() {
                    rng.shuffle(&mut order);
                }
                for &unit in &order {
                    let mut next = Vec::with_capacity(cells.len() + cells.len() / 4);
                    for cell in cells {
                        let a = [cell.a[(unit, 0)], cell.a[(unit, 1)]];
                        if libm::hypot(a[0], a[1]) <= tol.normal {
                            if !opts.collect_traces {
                                degenerate += 1;
                            }
                            next.push(cell);
                            continue;
                        }
                        match cell.poly.split(a, cell.q[unit], tol)? {
                            (Some(neg), Some(pos)) => {
                                next.push(WorkCell {
                                    poly: neg,
                                    a: cell.a.clone(),
                                    q: cell.q.clone(),
                                    pattern: cell.pattern.clone(),
                                    skips: cell.skips.clone(),
                                });
                                next.push(WorkCell { poly: pos, ..cell });
                            }
                            (Some(only), None) | (None, Some(only)) => next.push(WorkCell { poly: only, ..cell }),
                            (None, None) => {}
                        }
                    }
                    cells = next;
                }
                let slope = kind.negative_slope();
                for cell in &mut cells {
                    let centre = cell.poly.centroid();
                    let mut signs = Vec::with_capacity(width);
                    for unit in 0..width {
                        let z = cell.a[(unit, 0)] * centre[0] + cell.a[(unit, 1)] * centre[1] + cell.q[unit];
                        let positive = z > 0.0;
                        if !positive {
                            cell.a.row_mut(unit).iter_mut().for_each(|v| *v *= slope);
                            cell.q[unit] *= slope;
                        }
                        signs.push(positive);
                    }
                    cell.pattern.push(signs);
                }
                modules_done += 1;
            }
        }
    }
    let cells: Vec<AffineCell> = cells
        .into_iter()
        .map(|c| AffineCell { polygon: c.poly, a: c.a, q: c.q, pattern: c.pattern, frontier })
        .collect();
    let atlas = PartitionAtlas {
        domain: domain.clone(),
        cells,
        traces,
        degenerate_normals: degenerate,
        net_fingerprint: net.fingerprint(),
        tolerances: *tol,
        has_traces: opts.collect_traces,
    };
    let covered = atlas.covered_area();
    let domain_area = domain.area();
    if (covered - domain_area).abs() > tol.tiling * domain_area {
        return Err(GeometryError::Tiling { covered, domain: domain_area });
    }
    Ok(atlas)
}

/// Pre-activation map `u_ℓ(y) = a·y + c` of one module around a point.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalMap {
    /// `n_ℓ × 2`.
    pub a: Matrix,
    pub c: Vec<f64>,
}

impl LocalMap {
    pub fn normal(&self, unit: usize) -> [f64; 2] {
        [self.a[(unit, 0)], self.a[(unit, 1)]]
    }

    pub fn eval(&self, unit: usize, y: Point) -> f64 {
        self.a[(unit, 0)] * y[0] + self.a[(unit, 1)] * y[1] + self.c[unit]
    }
}

/// The affine pre-activation maps of every module on the cell containing
/// `at`, with the activation pattern read off at `at`.
pub fn local_pre_activation_maps(net: &CpaGraph, at: Point) -> Result<Vec<LocalMap>, GeometryError> {
    check_planar(net)?;
    let mut a = Matrix::identity(2);
    let mut q = vec![0.0, 0.0];
    let mut skips: Vec<(u32, Matrix, Vec<f64>)> = Vec::new();
    let mut out = Vec::new();
    for op in net.ops() {
        match op {
            Op::Linear(l) => (a, q) = apply_linear(&a, &q, &l.weight, &l.bias),
            Op::NormAffine(n) => apply_diag(&mut a, &mut q, &n.scale, &n.shift),
            Op::BatchNorm(_) => return Err(GeometryError::UnfoldedBatchNorm),
            Op::SkipBegin { tag } => skips.push((*tag, a.clone(), q.clone())),
            Op::SkipAdd { tag } => {
                let pos = skips
                    .iter()
                    .position(|(t, _, _)| t == tag)
                    .ok_or(GeometryError::Net(crate::net::NetError::SkipMismatch { tag: *tag }))?;
                let (_, sa, sq) = skips.remove(pos);
                a.add_assign(&sa);
                q.iter_mut().zip(&sq).for_each(|(v, s)| *v += s);
            }
            Op::Activation { kind, .. } => {
                out.push(LocalMap { a: a.clone(), c: q.clone() });
                let slope = kind.negative_slope();
                for unit in 0..q.len() {
                    let z = a[(unit, 0)] * at[0] + a[(unit, 1)] * at[1] + q[unit];
                    if z <= 0.0 {
                        a.row_mut(unit).iter_mut().for_each(|v| *v *= slope);
                        q[unit] *= slope;
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{build_mlp_widths, ActivationKind, Init, Linear, Mode, NetSpec};

    fn domain() -> ConvexPolygon {
        ConvexPolygon::square([0.0, 0.0], 1.0)
    }

    fn line_net(w: [f64; 2], b: f64) -> CpaGraph {
        CpaGraph::new(
            2,
            vec![
                Op::Linear(Linear { weight: Matrix::from_rows(&[&w]), bias: vec![b] }),
                Op::Activation { kind: ActivationKind::Relu, module: 1 },
            ],
        )
        .unwrap()
    }

    fn random_net(seed: u64, widths: &[usize]) -> CpaGraph {
        let spec = NetSpec { init: Init::FanInUniformBias { half_width: 0.5 }, ..NetSpec::default() };
        build_mlp_widths(&spec, widths, &mut Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn no_activation_single_cell() {
        let net = CpaGraph::new(
            2,
            vec![Op::Linear(Linear { weight: Matrix::from_rows(&[&[1.0, 2.0], &[0.0, 1.0]]), bias: vec![0.5, 0.0] })],
        )
        .unwrap();
        let atlas = enumerate_regions(&net, &domain(), &Tolerances::default()).unwrap();
        assert_eq!(atlas.count(), 1);
        assert_eq!(atlas.cells[0].eval([1.0, 1.0]), vec![3.5, 1.0]);
    }

    #[test]
    fn single_unit_two_cells() {
        let atlas = enumerate_regions(&line_net([1.0, 1.0], 0.3), &domain(), &Tolerances::default()).unwrap();
        assert_eq!(atlas.count(), 2);
        assert_eq!(atlas.traces.len(), 1);
        let outside = enumerate_regions(&line_net([1.0, 0.0], -3.0), &domain(), &Tolerances::default()).unwrap();
        assert_eq!(outside.count(), 1);
    }

    #[test]
    fn local_hyperplane_examples() {
        let cell =
            AffineCell { polygon: domain(), a: Matrix::identity(2), q: vec![0.0, 0.0], pattern: vec![], frontier: 0 };
        assert_eq!(local_hyperplane(&cell, &[1.0, 0.0], 0.0).unwrap(), ([1.0, 0.0], 0.0));
        let mut two = Matrix::identity(2);
        two.scale(2.0);
        let cell = AffineCell { a: two, q: vec![1.0, 1.0], ..cell };
        assert_eq!(local_hyperplane(&cell, &[1.0, 1.0], 0.0).unwrap(), ([2.0, 2.0], 2.0));
        assert!(local_hyperplane(&cell, &[1.0], 0.0).is_err());
    }

    #[test]
    fn local_hyperplane_matches_forward() {
        let net = random_net(3, &[6, 5]);
        let atlas =
            enumerate_with(&net, &domain(), &EnumerateOptions { max_modules: Some(1), ..Default::default() }).unwrap();
        // weights of module 2's units, i.e. the second linear layer
        let Op::Linear(second) = &net.ops()[2] else { panic!() };
        let mut rng = Rng::seed_from_u64(4);
        for cell in atlas.cells.iter().take(5) {
            for unit in 0..5 {
                let (a, c) = local_hyperplane(cell, second.weight.row(unit), second.bias[unit]).unwrap();
                for _ in 0..10 {
                    // random convex combination of the vertices stays interior
                    let w: Vec<f64> = cell.polygon.vertices().iter().map(|_| rng.uniform() + 1e-3).collect();
                    let s: f64 = w.iter().sum();
                    let y = cell
                        .polygon
                        .vertices()
                        .iter()
                        .zip(&w)
                        .fold([0.0, 0.0], |acc, (v, wi)| [acc[0] + v[0] * wi / s, acc[1] + v[1] * wi / s]);
                    let t = net.forward_with(&Matrix::from_vec(1, 2, y.to_vec()), Mode::Eval).unwrap();
                    let z = t.pre_activation(2)[(0, unit)];
                    assert!((a[0] * y[0] + a[1] * y[1] + c - z).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn unit_order_does_not_change_partition() {
        let net = random_net(7, &[8, 8]);
        let base = enumerate_regions(&net, &domain(), &Tolerances::default()).unwrap();
        let mut want: Vec<_> = base.cells.iter().map(|c| c.pattern_bits()).collect();
        want.sort();
        for seed in 0..3 {
            let opts = EnumerateOptions { shuffle_units: Some(seed), ..Default::default() };
            let other = enumerate_with(&net, &domain(), &opts).unwrap();
            let mut got: Vec<_> = other.cells.iter().map(|c| c.pattern_bits()).collect();
            got.sort();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn rejects_unfolded_batchnorm() {
        let spec = NetSpec { norm: crate::net::Norm::BatchNorm, ..NetSpec::default() };
        let net = crate::net::build_mlp(&spec, 3, 1, &mut Rng::seed_from_u64(0)).unwrap();
        assert_eq!(enumerate_regions(&net, &domain(), &Tolerances::default()), Err(GeometryError::UnfoldedBatchNorm));
        assert!(enumerate_regions(&net.fold_batchnorm().unwrap(), &domain(), &Tolerances::default()).is_ok());
    }

    #[test]
    fn local_maps_reproduce_pre_activations() {
        let net = random_net(9, &[5, 4, 3]);
        let mut rng = Rng::seed_from_u64(1);
        for _ in 0..20 {
            let x = [rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0)];
            let maps = local_pre_activation_maps(&net, x).unwrap();
            let t = net.forward_with(&Matrix::from_vec(1, 2, x.to_vec()), Mode::Eval).unwrap();
            for (ell, map) in maps.iter().enumerate() {
                for unit in 0..map.c.len() {
                    assert!((map.eval(unit, x) - t.pre_activation(ell + 1)[(0, unit)]).abs() < 1e-12);
                }
            }
        }
    }
}
