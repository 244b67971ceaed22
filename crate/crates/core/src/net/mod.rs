//! Continuous piecewise-affine networks as flat op lists.
//!
//! A [`CpaGraph`] is an ordered sequence of primitive ops. Every op maps a
//! `batch × width` matrix to another, except the skip markers which capture
//! and re-add an earlier activation. Activation ops carry a 1-based module
//! index `ℓ` numbered in forward order; the pre-activation entering module `ℓ`
//! is what the seeding penalty acts on and what the enumerator splits on.

mod adam;
mod backward;
mod build;
mod forward;
mod loss;

pub use adam::{AdamConfig, AdamState};
pub use backward::{Gradients, OpGrad};
pub use build::{build_mlp, build_mlp_widths, build_residual, Init, NetSpec, Norm};
pub use forward::ForwardTrace;
pub use loss::{accuracy, softmax_cross_entropy};

use alloc::vec::Vec;
use core::hash::Hasher;

use crate::linalg::Matrix;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_VAR_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetError {
    #[error("{what} must be at least 1")]
    ZeroSize { what: &'static str },
    #[error("op {op}: expected input width {expected}, found {found}")]
    DimensionMismatch { op: usize, expected: usize, found: usize },
    #[error("skip tag {tag}: unmatched or width mismatch")]
    SkipMismatch { tag: u32 },
    #[error("activation op {op} carries module index {found}, expected {expected}")]
    ModuleOrder { op: usize, expected: usize, found: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("batch norm must be in eval mode to fold")]
    TrainModeFold,
    #[error("trace does not belong to this network/batch")]
    StaleTrace,
    #[error("empty batch")]
    EmptyBatch,
    #[error("parameter/gradient shape mismatch")]
    ShapeMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case", tag = "kind"))]
pub enum ActivationKind {
    Relu,
    LeakyRelu { slope: f64 },
}

impl ActivationKind {
    #[inline]
    pub fn apply(self, u: f64) -> f64 {
        match self {
            ActivationKind::Relu => {
                if u > 0.0 {
                    u
                } else {
                    0.0
                }
            }
            ActivationKind::LeakyRelu { slope } => {
                if u > 0.0 {
                    u
                } else {
                    slope * u
                }
            }
        }
    }

    /// Slope used on the negative side; 0 for ReLU.
    #[inline]
    pub fn negative_slope(self) -> f64 {
        match self {
            ActivationKind::Relu => 0.0,
            ActivationKind::LeakyRelu { slope } => slope,
        }
    }

    /// Derivative, taking the negative-side branch at exactly zero.
    #[inline]
    pub fn derivative(self, u: f64) -> f64 {
        if u > 0.0 {
            1.0
        } else {
            self.negative_slope()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Linear {
    /// `out × in`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Per-unit `y = scale·x + shift`; what an eval-mode batch norm folds into.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NormAffine {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

/// 1D batch norm with affine parameters and running statistics.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(width: usize) -> Self {
        BatchNorm {
            gamma: alloc::vec![1.0; width],
            beta: alloc::vec![0.0; width],
            running_mean: alloc::vec![0.0; width],
            running_var: alloc::vec![1.0; width],
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        }
    }

    /// The eval-mode action as a per-unit affine map.
    pub fn folded(&self) -> NormAffine {
        let scale: Vec<f64> = self
            .gamma
            .iter()
            .zip(&self.running_var)
            .map(|(g, v)| g / libm::sqrt(v.max(BN_VAR_FLOOR) + self.eps))
            .collect();
        let shift = self.beta.iter().zip(&self.running_mean).zip(&scale).map(|((b, m), s)| b - m * s).collect();
        NormAffine { scale, shift }
    }

    pub fn width(&self) -> usize {
        self.gamma.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Op {
    Linear(Linear),
    NormAffine(NormAffine),
    BatchNorm(BatchNorm),
    Activation { kind: ActivationKind, module: usize },
    SkipBegin { tag: u32 },
    SkipAdd { tag: u32 },
}

impl Op {
    fn output_width(&self, input: usize) -> usize {
        match self {
            Op::Linear(l) => l.weight.rows(),
            _ => input,
        }
    }

    fn expected_input(&self) -> Option<usize> {
        match self {
            Op::Linear(l) => Some(l.weight.cols()),
            Op::NormAffine(n) => Some(n.scale.len()),
            Op::BatchNorm(b) => Some(b.width()),
            _ => None,
        }
    }
}

/// Batch-norm behaviour during `forward`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Mode {
    /// Normalize with batch statistics.
    Train,
    /// Normalize with running statistics.
    #[default]
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "RawGraph"))]
pub struct CpaGraph {
    input_dim: usize,
    output_dim: usize,
    ops: Vec<Op>,
    mode: Mode,
}

/// Unvalidated wire form; deserialization goes through [`CpaGraph::new`].
#[cfg(feature = "serde")]
#[derive(serde::Deserialize)]
struct RawGraph {
    input_dim: usize,
    output_dim: usize,
    ops: Vec<Op>,
    #[serde(default)]
    mode: Mode,
}

#[cfg(feature = "serde")]
impl TryFrom<RawGraph> for CpaGraph {
    type Error = NetError;

    fn try_from(raw: RawGraph) -> Result<Self, NetError> {
        let mut g = CpaGraph::new(raw.input_dim, raw.ops)?;
        if g.output_dim != raw.output_dim {
            return Err(NetError::DimensionMismatch { op: g.ops.len(), expected: raw.output_dim, found: g.output_dim });
        }
        g.mode = raw.mode;
        Ok(g)
    }
}

impl CpaGraph {
    /// Validates the width chain, skip pairing and module numbering.
    pub fn new(input_dim: usize, ops: Vec<Op>) -> Result<Self, NetError> {
        if input_dim == 0 {
            return Err(NetError::ZeroSize { what: "input dimension" });
        }
        let mut width = input_dim;
        let mut skips: Vec<(u32, usize)> = Vec::new();
        let mut next_module = 1;
        for (k, op) in ops.iter().enumerate() {
            if let Some(expected) = op.expected_input() {
                if expected != width {
                    return Err(NetError::DimensionMismatch { op: k, expected, found: width });
                }
            }
            match op {
                Op::Linear(l) if l.bias.len() != l.weight.rows() || l.weight.rows() == 0 => {
                    return Err(NetError::DimensionMismatch { op: k, expected: l.weight.rows(), found: l.bias.len() });
                }
                Op::NormAffine(n) if n.shift.len() != n.scale.len() => {
                    return Err(NetError::DimensionMismatch { op: k, expected: n.scale.len(), found: n.shift.len() });
                }
                Op::BatchNorm(b)
                    if [b.beta.len(), b.running_mean.len(), b.running_var.len()].iter().any(|&l| l != b.width()) =>
                {
                    return Err(NetError::DimensionMismatch { op: k, expected: b.width(), found: b.beta.len() });
                }
                Op::Activation { module, .. } => {
                    if *module != next_module {
                        return Err(NetError::ModuleOrder { op: k, expected: next_module, found: *module });
                    }
                    next_module += 1;
                }
                Op::SkipBegin { tag } => {
                    if skips.iter().any(|(t, _)| t == tag) {
                        return Err(NetError::SkipMismatch { tag: *tag });
                    }
                    skips.push((*tag, width));
                }
                Op::SkipAdd { tag } => match skips.iter().position(|(t, _)| t == tag) {
                    Some(pos) if skips[pos].1 == width => {
                        skips.remove(pos);
                    }
                    _ => return Err(NetError::SkipMismatch { tag: *tag }),
                },
                _ => {}
            }
            width = op.output_width(width);
        }
        if let Some((tag, _)) = skips.first() {
            return Err(NetError::SkipMismatch { tag: *tag });
        }
        Ok(CpaGraph { input_dim, output_dim: width, ops, mode: Mode::Eval })
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    #[inline]
    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    #[inline]
    pub fn ops(&self) -> &[Op] {
        &self.ops
    }

    #[inline]
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn has_batch_norm(&self) -> bool {
        self.ops.iter().any(|op| matches!(op, Op::BatchNorm(_)))
    }

    /// Number of activation modules `L`.
    pub fn num_modules(&self) -> usize {
        self.ops.iter().filter(|op| matches!(op, Op::Activation { .. })).count()
    }

    /// Width `n_ℓ` of every activation module, in module order.
    pub fn module_widths(&self) -> Vec<usize> {
        let mut width = self.input_dim;
        let mut out = Vec::new();
        for op in &self.ops {
            if let Op::Activation { .. } = op {
                out.push(width);
            }
            width = op.output_width(width);
        }
        out
    }

    /// Trainable parameter tensors in a fixed order.
    pub fn parameters(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for op in &self.ops {
            match op {
                Op::Linear(l) => {
                    out.push(l.weight.as_slice());
                    out.push(&l.bias);
                }
                Op::NormAffine(n) => {
                    out.push(&n.scale);
                    out.push(&n.shift);
                }
                Op::BatchNorm(b) => {
                    out.push(&b.gamma);
                    out.push(&b.beta);
                }
                _ => {}
            }
        }
        out
    }

    /// Same order as [`CpaGraph::parameters`].
    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for op in &mut self.ops {
            match op {
                Op::Linear(l) => {
                    out.push(l.weight.as_mut_slice());
                    out.push(&mut l.bias);
                }
                Op::NormAffine(n) => {
                    out.push(&mut n.scale);
                    out.push(&mut n.shift);
                }
                Op::BatchNorm(b) => {
                    out.push(&mut b.gamma);
                    out.push(&mut b.beta);
                }
                _ => {}
            }
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    /// FNV-1a over the op structure and the bit patterns of every stored value,
    /// running statistics included.
    pub fn fingerprint(&self) -> u64 {
        let mut h = fnv::FnvHasher::default();
        h.write_u64(self.input_dim as u64);
        let floats = |h: &mut fnv::FnvHasher, xs: &[f64]| {
            h.write_u64(xs.len() as u64);
            for x in xs {
                h.write_u64(x.to_bits());
            }
        };
        for op in &self.ops {
            match op {
                Op::Linear(l) => {
                    h.write_u8(1);
                    h.write_u64(l.weight.rows() as u64);
                    floats(&mut h, l.weight.as_slice());
                    floats(&mut h, &l.bias);
                }
                Op::NormAffine(n) => {
                    h.write_u8(2);
                    floats(&mut h, &n.scale);
                    floats(&mut h, &n.shift);
                }
                Op::BatchNorm(b) => {
                    h.write_u8(3);
                    floats(&mut h, &b.gamma);
                    floats(&mut h, &b.beta);
                    floats(&mut h, &b.running_mean);
                    floats(&mut h, &b.running_var);
                    floats(&mut h, &[b.momentum, b.eps]);
                }
                Op::Activation { kind, module } => {
                    h.write_u8(4);
                    h.write_u64(*module as u64);
                    floats(&mut h, &[kind.negative_slope()]);
                }
                Op::SkipBegin { tag } => {
                    h.write_u8(5);
                    h.write_u32(*tag);
                }
                Op::SkipAdd { tag } => {
                    h.write_u8(6);
                    h.write_u32(*tag);
                }
            }
        }
        h.finish()
    }

    /// Replaces every batch norm with its eval-mode affine map.
    pub fn fold_batchnorm(&self) -> Result<CpaGraph, NetError> {
        if self.mode == Mode::Train && self.has_batch_norm() {
            return Err(NetError::TrainModeFold);
        }
        let ops = self
            .ops
            .iter()
            .map(|op| match op {
                Op::BatchNorm(b) => Op::NormAffine(b.folded()),
                other => other.clone(),
            })
            .collect();
        Ok(CpaGraph { input_dim: self.input_dim, output_dim: self.output_dim, ops, mode: Mode::Eval })
    }

    /// Folds the batch statistics recorded in a train-mode trace into the
    /// running estimates (unbiased variance, floored).
    pub fn update_running_stats(&mut self, trace: &ForwardTrace) -> Result<(), NetError> {
        if trace.num_ops() != self.ops.len() {
            return Err(NetError::StaleTrace);
        }
        let n = trace.batch_size();
        for (k, op) in self.ops.iter_mut().enumerate() {
            let (Op::BatchNorm(bn), Some(stats)) = (op, trace.batch_stats(k)) else {
                continue;
            };
            if stats.mean.len() != bn.width() {
                return Err(NetError::StaleTrace);
            }
            let correction = if n > 1 { n as f64 / (n - 1) as f64 } else { 1.0 };
            for u in 0..bn.width() {
                bn.running_mean[u] = (1.0 - bn.momentum) * bn.running_mean[u] + bn.momentum * stats.mean[u];
                let v = (1.0 - bn.momentum) * bn.running_var[u] + bn.momentum * stats.var[u] * correction;
                bn.running_var[u] = v.max(BN_VAR_FLOOR);
            }
        }
        Ok(())
    }

    #[cfg(test)]
    pub(crate) fn ops_mut(&mut self) -> &mut [Op] {
        &mut self.ops
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use alloc::vec;

    #[test]
    fn rejects_width_chain_break() {
        let ops = vec![
            Op::Linear(Linear { weight: Matrix::zeros(3, 2), bias: vec![0.0; 3] }),
            Op::Linear(Linear { weight: Matrix::zeros(1, 4), bias: vec![0.0] }),
        ];
        assert_eq!(CpaGraph::new(2, ops), Err(NetError::DimensionMismatch { op: 1, expected: 4, found: 3 }));
    }

    #[test]
    fn rejects_out_of_order_modules() {
        let ops = vec![Op::Activation { kind: ActivationKind::Relu, module: 2 }];
        assert!(matches!(CpaGraph::new(2, ops), Err(NetError::ModuleOrder { .. })));
    }

    #[test]
    fn rejects_unclosed_skip() {
        let ops = vec![Op::SkipBegin { tag: 0 }];
        assert_eq!(CpaGraph::new(2, ops), Err(NetError::SkipMismatch { tag: 0 }));
        let ops = vec![
            Op::SkipBegin { tag: 0 },
            Op::Linear(Linear { weight: Matrix::zeros(3, 2), bias: vec![0.0; 3] }),
            Op::SkipAdd { tag: 0 },
        ];
        assert_eq!(CpaGraph::new(2, ops), Err(NetError::SkipMismatch { tag: 0 }));
    }

    #[test]
    fn fold_identity_and_arithmetic_cases() {
        let mut bn = BatchNorm::new(1);
        bn.eps = 0.0;
        let f = bn.folded();
        assert_eq!((f.scale[0], f.shift[0]), (1.0, 0.0));

        bn.gamma[0] = 2.0;
        bn.beta[0] = 1.0;
        bn.running_mean[0] = 3.0;
        bn.running_var[0] = 4.0;
        let f = bn.folded();
        assert_eq!((f.scale[0], f.shift[0]), (1.0, -2.0));
    }

    #[test]
    fn fold_refuses_train_mode() {
        let spec = NetSpec { norm: Norm::BatchNorm, ..NetSpec::default() };
        let mut net = build_mlp(&spec, 4, 2, &mut Rng::seed_from_u64(0)).unwrap();
        net.set_mode(Mode::Train);
        assert_eq!(net.fold_batchnorm(), Err(NetError::TrainModeFold));
        net.set_mode(Mode::Eval);
        let folded = net.fold_batchnorm().unwrap();
        assert!(!folded.has_batch_norm());
        assert_eq!(folded.num_modules(), 2);
    }

    #[test]
    fn fingerprint_tracks_parameters() {
        let net = build_mlp(&NetSpec::default(), 4, 2, &mut Rng::seed_from_u64(0)).unwrap();
        let mut other = net.clone();
        assert_eq!(net.fingerprint(), other.fingerprint());
        other.parameters_mut()[0][0] += 1e-15;
        assert_ne!(net.fingerprint(), other.fingerprint());
    }
}
