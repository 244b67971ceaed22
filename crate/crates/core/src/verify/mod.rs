//! Randomized checks of the local region-growth bounds and a brute-force
//! grid oracle for the exact enumerator.
//!
//! Every check returns a [`VerificationRecord`]. Counting checks evaluate
//! `(I_ε, N_ε)` twice, once with the atlas tolerances and once with the
//! coarser [`VerifyOptions::robust_margin`] / [`VerifyOptions::robust_area`];
//! instances where the two disagree sit on a numerical tie and are reported
//! as skipped rather than adjudicated.

mod audit;
mod checks;
mod oracle;
mod suite;

pub use audit::{general_position_audit, trace_pieces, GeneralPositionReport, TracePiece};
pub use checks::{
    check_intersection_sufficiency, check_lower_bound, check_monotone_growth, check_upper_bound, cut_condition,
    upper_bound_value, CutCondition,
};
pub use oracle::{
    check_oracle_equivalence, grid_oracle_count, grid_oracle_regions, grid_oracle_regions_with, stabilized_oracle,
    GridCount, OracleConfig, OracleOutcome,
};
pub use suite::{instance_seed, run_instance, run_suite, run_suite_with, SuiteConfig, SuiteKind, SuiteReport};

use alloc::string::String;
use alloc::vec::Vec;

use crate::geometry::{ConvexPolygon, GeometryError, NeighborhoodShape, Point, Tolerances};
use crate::net::{build_mlp_widths, ActivationKind, CpaGraph, Init, Linear, NetError, NetSpec, Norm, Op};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VerifyError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("atlas was enumerated from a different network")]
    AtlasMismatch,
    #[error("module {0} is not a plain linear → activation → linear block")]
    NotAugmentable(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Check {
    Oracle,
    LowerBound,
    UpperBound,
    MonotoneGrowth,
    IntersectionSufficiency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Verdict {
    Holds,
    Violated,
    SkippedDegenerate,
}

/// What was checked and where.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Instance {
    pub id: usize,
    pub seed: u64,
    pub net_hash: u64,
    pub x: Option<Point>,
    pub eps: Option<f64>,
    pub shape: Option<NeighborhoodShape>,
    /// `(module, unit)` for single-unit checks.
    pub unit: Option<(usize, usize)>,
}

impl Instance {
    fn new(net: &CpaGraph) -> Self {
        Instance { id: 0, seed: 0, net_hash: net.fingerprint(), x: None, eps: None, shape: None, unit: None }
    }
}

/// Everything needed to replay a violation.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Reproducer {
    pub net: CpaGraph,
    pub added_unit: Option<NewUnit>,
    pub domain: ConvexPolygon,
    pub neighborhood: Option<ConvexPolygon>,
    pub tolerances: Tolerances,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VerificationRecord {
    pub check: Check,
    pub instance: Instance,
    pub i_eps: Option<usize>,
    pub n_eps: Option<usize>,
    /// `N_ε` after augmentation (growth check).
    pub n_after: Option<usize>,
    /// Right-hand side of the inequality being checked.
    pub bound: Option<f64>,
    /// Grid oracle count (oracle check).
    pub oracle_count: Option<usize>,
    pub oracle_resolution: Option<usize>,
    /// `z(x)` and `δ_ε(x; a)·‖a‖` (intersection check).
    pub z: Option<f64>,
    pub threshold: Option<f64>,
    pub witness: Option<Point>,
    pub witness_residual: Option<f64>,
    pub verdict: Verdict,
    pub reason: String,
    pub reproducer: Option<Reproducer>,
}

impl VerificationRecord {
    fn new(check: Check, instance: Instance) -> Self {
        VerificationRecord {
            check,
            instance,
            i_eps: None,
            n_eps: None,
            n_after: None,
            bound: None,
            oracle_count: None,
            oracle_resolution: None,
            z: None,
            threshold: None,
            witness: None,
            witness_residual: None,
            verdict: Verdict::SkippedDegenerate,
            reason: String::new(),
            reproducer: None,
        }
    }

    fn skip(mut self, reason: impl Into<String>) -> Self {
        self.verdict = Verdict::SkippedDegenerate;
        self.reason = reason.into();
        self
    }

    fn decide(mut self, holds: bool, reason: impl Into<String>, repro: impl FnOnce() -> Reproducer) -> Self {
        self.reason = reason.into();
        if holds {
            self.verdict = Verdict::Holds;
        } else {
            self.verdict = Verdict::Violated;
            self.reproducer = Some(repro());
        }
        self
    }
}

/// Knobs shared by the counting checks.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VerifyOptions {
    pub tol: Tolerances,
    /// Interior margin of the second, coarser count.
    pub robust_margin: f64,
    /// Area threshold of the second, coarser count.
    pub robust_area: f64,
    /// Strictness margin on the intersection inequality, in units of `tol.geo`.
    pub strict_factor: f64,
    /// Points sampled per trace by the redundancy and fold audits.
    pub audit_samples: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            tol: Tolerances::default(),
            robust_margin: 1e-5,
            robust_area: 1e-10,
            strict_factor: 10.0,
            audit_samples: 64,
        }
    }
}

/// Shape of the random networks drawn by the suites.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NetSampler {
    pub max_width: usize,
    pub max_depth: usize,
    pub bias_half_width: f64,
    pub activation: ActivationKind,
}

impl Default for NetSampler {
    fn default() -> Self {
        NetSampler { max_width: 16, max_depth: 3, bias_half_width: 0.5, activation: ActivationKind::Relu }
    }
}

/// Plain MLP with depth and widths uniform in `1..=max`, fan-in weights and
/// uniform biases.
pub fn random_verification_net(rng: &mut Rng, sampler: &NetSampler) -> CpaGraph {
    let depth = 1 + rng.index(sampler.max_depth.max(1));
    let widths: Vec<usize> = (0..depth).map(|_| 1 + rng.index(sampler.max_width.max(1))).collect();
    let spec = NetSpec {
        input_dim: 2,
        classes: 2,
        norm: Norm::None,
        activation: sampler.activation,
        init: Init::FanInUniformBias { half_width: sampler.bias_half_width },
    };
    build_mlp_widths(&spec, &widths, rng).expect("positive widths and depth")
}

/// A unit appended to module `module` with zero outgoing weights, so it adds
/// a zero set without changing any other pre-activation.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NewUnit {
    pub module: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl NewUnit {
    /// Fan-in weights and a uniform bias for module `module` of `net`.
    pub fn random(net: &CpaGraph, module: usize, bias_half_width: f64, rng: &mut Rng) -> Result<NewUnit, VerifyError> {
        let (lin, _) = augmentable(net, module)?;
        let fan_in = match &net.ops()[lin] {
            Op::Linear(l) => l.weight.cols(),
            _ => unreachable!(),
        };
        let bound = libm::sqrt(1.0 / fan_in as f64);
        Ok(NewUnit {
            module,
            weights: (0..fan_in).map(|_| rng.uniform_in(-bound, bound)).collect(),
            bias: rng.uniform_in(-bias_half_width, bias_half_width),
        })
    }
}

/// Indices of the linear op feeding module `module` and the one reading it.
fn augmentable(net: &CpaGraph, module: usize) -> Result<(usize, usize), VerifyError> {
    let ops = net.ops();
    let act = ops
        .iter()
        .position(|op| matches!(op, Op::Activation { module: m, .. } if *m == module))
        .ok_or(VerifyError::NotAugmentable(module))?;
    let before = act.checked_sub(1).filter(|&k| matches!(ops[k], Op::Linear(_)));
    let after = Some(act + 1).filter(|&k| matches!(ops.get(k), Some(Op::Linear(_))));
    before.zip(after).ok_or(VerifyError::NotAugmentable(module))
}

/// `net` with `unit` appended to its module.
pub fn augment_with_unit(net: &CpaGraph, unit: &NewUnit) -> Result<CpaGraph, VerifyError> {
    let (lin, next) = augmentable(net, unit.module)?;
    let mut ops = net.ops().to_vec();
    if let Op::Linear(l) = &mut ops[lin] {
        if unit.weights.len() != l.weight.cols() {
            return Err(
                NetError::DimensionMismatch { op: lin, expected: l.weight.cols(), found: unit.weights.len() }.into()
            );
        }
        let mut data = l.weight.as_slice().to_vec();
        data.extend_from_slice(&unit.weights);
        let mut bias = l.bias.clone();
        bias.push(unit.bias);
        *l = Linear { weight: crate::Matrix::from_vec(l.weight.rows() + 1, l.weight.cols(), data), bias };
    }
    if let Op::Linear(l) = &mut ops[next] {
        let (rows, cols) = l.weight.shape();
        let mut data = Vec::with_capacity(rows * (cols + 1));
        for r in l.weight.iter_rows() {
            data.extend_from_slice(r);
            data.push(0.0);
        }
        *l = Linear { weight: crate::Matrix::from_vec(rows, cols + 1, data), bias: l.bias.clone() };
    }
    let mut out = CpaGraph::new(net.input_dim(), ops)?;
    out.set_mode(net.mode());
    Ok(out)
}

/// `Σ_{k≤2} C(n, k)`.
pub fn planar_arrangement_bound(n: usize) -> u128 {
    let n = n as u128;
    1 + n + n * n.saturating_sub(1) / 2
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::net::Mode;

    #[test]
    fn augmentation_preserves_outputs() {
        let mut rng = Rng::seed_from_u64(5);
        let net = random_verification_net(&mut rng, &NetSampler { max_depth: 3, ..NetSampler::default() });
        for module in 1..=net.num_modules() {
            let unit = NewUnit::random(&net, module, 0.5, &mut rng).unwrap();
            let aug = augment_with_unit(&net, &unit).unwrap();
            let mut widths = net.module_widths();
            widths[module - 1] += 1;
            assert_eq!(aug.module_widths(), widths);
            let x = Matrix::from_rows(&[&[0.1, -0.4], &[0.9, 0.3], &[-0.7, -0.2]]);
            let a = net.forward_with(&x, Mode::Eval).unwrap();
            let b = aug.forward_with(&x, Mode::Eval).unwrap();
            assert_eq!(a.logits(), b.logits());
        }
    }

    #[test]
    fn binomial_bound_values() {
        assert_eq!(planar_arrangement_bound(0), 1);
        assert_eq!(planar_arrangement_bound(1), 2);
        assert_eq!(planar_arrangement_bound(3), 7);
        assert_eq!(planar_arrangement_bound(10), 56);
    }

    #[test]
    fn sampler_respects_limits() {
        let mut rng = Rng::seed_from_u64(1);
        for _ in 0..50 {
            let net = random_verification_net(&mut rng, &NetSampler::default());
            assert!((1..=3).contains(&net.num_modules()));
            assert!(net.module_widths().iter().all(|&w| (1..=16).contains(&w)));
            for op in net.ops() {
                if let Op::Linear(l) = op {
                    assert!(l.bias.iter().all(|b| b.abs() <= 0.5));
                }
            }
        }
    }
}
