use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{Check, Instance, Reproducer, VerificationRecord, VerifyError};
use crate::geometry::{enumerate_regions, ConvexPolygon, GeometryError, PartitionAtlas, Tolerances};
use crate::linalg::Matrix;
use crate::net::{CpaGraph, Mode};

/// Resolution ladder for [`stabilized_oracle`].
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OracleConfig {
    pub start_resolution: usize,
    pub max_resolution: usize,
    pub min_component_nodes: usize,
    /// The smallest exact cell must cover at least this many grid cells.
    pub area_factor: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { start_resolution: 64, max_resolution: 2048, min_component_nodes: 2, area_factor: 8.0 }
    }
}

struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n as u32).collect(), size: vec![1; n] }
    }

    fn find(&mut self, mut i: u32) -> u32 {
        while self.parent[i as usize] != i {
            let p = self.parent[i as usize];
            self.parent[i as usize] = self.parent[p as usize];
            i = p;
        }
        i
    }

    fn union(&mut self, a: u32, b: u32) {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.size[ra as usize] < self.size[rb as usize] {
            core::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb as usize] = ra;
        self.size[ra as usize] += self.size[rb as usize];
    }
}

/// Sign bits of every pre-activation, `words` u64s per row of `batch`.
fn patterns(net: &CpaGraph, batch: &Matrix, words: usize) -> Result<Vec<u64>, VerifyError> {
    let trace = net.forward_with(batch, Mode::Eval)?;
    let mut out = vec![0u64; batch.rows() * words];
    let mut bit = 0;
    for u in trace.pre_activations() {
        for r in 0..u.rows() {
            for (j, &v) in u.row(r).iter().enumerate() {
                if v > 0.0 {
                    let b = bit + j;
                    out[r * words + b / 64] |= 1 << (b % 64);
                }
            }
        }
        bit += u.cols();
    }
    Ok(out)
}

/// Node-grid counts behind [`grid_oracle_regions_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridCount {
    /// 4-neighbour components of equal-pattern nodes, before merging.
    pub components: usize,
    /// Components merged by pattern, keeping groups of at least
    /// `min_component_nodes` nodes.
    pub regions: usize,
}

/// Samples the activation pattern on a `resolution × resolution` node grid
/// over the domain's bounding box, joins equal-pattern 4-neighbours, then
/// merges components that share a pattern. The set of inputs with a fixed
/// pattern is convex, so such components are pieces of one cell that the
/// grid staircase cut apart, typically at an acute corner. Nodes outside the
/// domain are ignored.
pub fn grid_oracle_count(
    net: &CpaGraph,
    domain: &ConvexPolygon,
    resolution: usize,
    min_component_nodes: usize,
) -> Result<GridCount, VerifyError> {
    if net.input_dim() != 2 {
        return Err(GeometryError::NotPlanar(net.input_dim()).into());
    }
    let res = resolution.max(2);
    let words = net.module_widths().iter().sum::<usize>().div_ceil(64).max(1);
    let (lo, hi) = domain.bbox();
    let step = [(hi[0] - lo[0]) / (res - 1) as f64, (hi[1] - lo[1]) / (res - 1) as f64];
    let scale = f64::max(hi[0] - lo[0], hi[1] - lo[1]);
    let mut uf = UnionFind::new(res * res);
    let mut inside = vec![false; res * res];
    let mut pattern_of: Vec<u32> = vec![u32::MAX; res * res];
    let mut ids: BTreeMap<Vec<u64>, u32> = BTreeMap::new();
    let mut prev: Vec<u64> = Vec::new();
    for r in 0..res {
        let y = lo[1] + step[1] * r as f64;
        let mut batch = Vec::with_capacity(2 * res);
        for c in 0..res {
            batch.push(lo[0] + step[0] * c as f64);
            batch.push(y);
        }
        let batch = Matrix::from_vec(res, 2, batch);
        let cur = patterns(net, &batch, words)?;
        for c in 0..res {
            let node = r * res + c;
            inside[node] = domain.boundary_clearance([batch[(c, 0)], batch[(c, 1)]]) >= -1e-12 * scale;
            if !inside[node] {
                continue;
            }
            let pat = &cur[c * words..(c + 1) * words];
            pattern_of[node] = match ids.get(pat) {
                Some(&id) => id,
                None => {
                    let id = ids.len() as u32;
                    ids.insert(pat.to_vec(), id);
                    id
                }
            };
            if c > 0 && inside[node - 1] && pat == &cur[(c - 1) * words..c * words] {
                uf.union(node as u32, (node - 1) as u32);
            }
            if r > 0 && inside[node - res] && pat == &prev[c * words..(c + 1) * words] {
                uf.union(node as u32, (node - res) as u32);
            }
        }
        prev = cur;
    }
    let mut components = 0;
    let mut nodes_per_pattern = vec![0usize; ids.len()];
    for node in 0..res * res {
        if inside[node] && uf.find(node as u32) == node as u32 {
            components += 1;
            nodes_per_pattern[pattern_of[node] as usize] += uf.size[node] as usize;
        }
    }
    let regions = nodes_per_pattern.iter().filter(|&&n| n >= min_component_nodes.max(1)).count();
    Ok(GridCount { components, regions })
}

/// Region count of [`grid_oracle_count`].
pub fn grid_oracle_regions_with(
    net: &CpaGraph,
    domain: &ConvexPolygon,
    resolution: usize,
    min_component_nodes: usize,
) -> Result<usize, VerifyError> {
    Ok(grid_oracle_count(net, domain, resolution, min_component_nodes)?.regions)
}

/// [`grid_oracle_regions_with`] with `min_component_nodes = 2`.
pub fn grid_oracle_regions(net: &CpaGraph, domain: &ConvexPolygon, resolution: usize) -> Result<usize, VerifyError> {
    grid_oracle_regions_with(net, domain, resolution, 2)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OracleOutcome {
    /// `(resolution, count)` for every rung evaluated.
    pub history: Vec<(usize, usize)>,
    /// The count shared by the last three rungs, if the ladder settled.
    pub stable_count: Option<usize>,
    /// Whether the final grid was fine enough for the smallest cell.
    pub resolved: bool,
}

impl OracleOutcome {
    pub fn final_resolution(&self) -> usize {
        self.history.last().map_or(0, |h| h.0)
    }
}

/// Doubles the resolution until the last three counts agree and the smallest
/// exact cell covers `area_factor` grid cells, or the ladder tops out. When
/// even the finest rung cannot resolve the smallest cell, no grid is sampled.
pub fn stabilized_oracle(
    net: &CpaGraph,
    domain: &ConvexPolygon,
    atlas: &PartitionAtlas,
    cfg: &OracleConfig,
) -> Result<OracleOutcome, VerifyError> {
    let smallest = atlas.cells.iter().map(|c| c.polygon.area()).fold(f64::INFINITY, f64::min);
    let (lo, hi) = domain.bbox();
    let mut history: Vec<(usize, usize)> = Vec::new();
    let mut res = cfg.start_resolution.max(2);
    let resolves = |res: usize| {
        let cell_area = (hi[0] - lo[0]) * (hi[1] - lo[1]) / ((res - 1) * (res - 1)) as f64;
        cell_area * cfg.area_factor <= smallest
    };
    let mut top = res;
    while top * 2 <= cfg.max_resolution {
        top *= 2;
    }
    if !resolves(top) {
        return Ok(OracleOutcome { history, stable_count: None, resolved: false });
    }
    loop {
        history.push((res, grid_oracle_regions_with(net, domain, res, cfg.min_component_nodes)?));
        let n = history.len();
        let settled = n >= 3 && history[n - 1].1 == history[n - 2].1 && history[n - 2].1 == history[n - 3].1;
        let resolved = resolves(res);
        if settled && resolved {
            return Ok(OracleOutcome { stable_count: Some(history[n - 1].1), history, resolved });
        }
        if res * 2 > cfg.max_resolution {
            return Ok(OracleOutcome { stable_count: settled.then(|| history[n - 1].1), history, resolved });
        }
        res *= 2;
    }
}

/// Exact count versus the settled grid oracle. Instances whose ladder does
/// not settle, or whose thinnest cell is below the finest grid, are skipped.
pub fn check_oracle_equivalence(
    net: &CpaGraph,
    domain: &ConvexPolygon,
    tol: &Tolerances,
    cfg: &OracleConfig,
) -> Result<VerificationRecord, VerifyError> {
    let atlas = enumerate_regions(net, domain, tol)?;
    let mut rec = VerificationRecord::new(Check::Oracle, Instance::new(net));
    rec.n_eps = Some(atlas.count());
    let outcome = stabilized_oracle(net, domain, &atlas, cfg)?;
    rec.oracle_resolution = Some(outcome.final_resolution());
    rec.oracle_count = outcome.history.last().map(|h| h.1);
    let Some(stable) = outcome.stable_count.filter(|_| outcome.resolved) else {
        let why = if !outcome.resolved { "smallest cell below grid resolution" } else { "oracle did not settle" };
        return Ok(rec.skip(why));
    };
    let exact = atlas.count();
    Ok(rec.decide(stable == exact, format!("exact {exact}, oracle {stable}"), || Reproducer {
        net: net.clone(),
        added_unit: None,
        domain: domain.clone(),
        neighborhood: None,
        tolerances: *tol,
    }))
}
