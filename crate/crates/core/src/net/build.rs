use alloc::vec;
use alloc::vec::Vec;

use super::{ActivationKind, BatchNorm, CpaGraph, Linear, NetError, Op};
use crate::linalg::Matrix;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Norm {
    #[default]
    None,
    BatchNorm,
}

/// Parameter initialization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Weights and biases uniform in `±√(1/fan_in)`.
    FanIn,
    /// Fan-in weights, biases uniform in `±half_width`.
    FanInUniformBias { half_width: f64 },
}

/// Shape shared by every builder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetSpec {
    pub input_dim: usize,
    pub classes: usize,
    pub norm: Norm,
    pub activation: ActivationKind,
    pub init: Init,
}

impl Default for NetSpec {
    fn default() -> Self {
        NetSpec { input_dim: 2, classes: 2, norm: Norm::None, activation: ActivationKind::Relu, init: Init::FanIn }
    }
}

fn linear(out: usize, inp: usize, init: Init, rng: &mut Rng) -> Linear {
    let bound = libm::sqrt(1.0 / inp as f64);
    let weight = Matrix::from_vec(out, inp, (0..out * inp).map(|_| rng.uniform_in(-bound, bound)).collect());
    let bias_bound = match init {
        Init::FanIn => bound,
        Init::FanInUniformBias { half_width } => half_width,
    };
    let bias = (0..out).map(|_| rng.uniform_in(-bias_bound, bias_bound)).collect();
    Linear { weight, bias }
}

/// `d → [Linear(w) → Norm? → Act] per hidden width → Linear(classes)`.
pub fn build_mlp_widths(spec: &NetSpec, widths: &[usize], rng: &mut Rng) -> Result<CpaGraph, NetError> {
    if widths.is_empty() {
        return Err(NetError::ZeroSize { what: "depth" });
    }
    if widths.contains(&0) {
        return Err(NetError::ZeroSize { what: "width" });
    }
    if spec.classes == 0 {
        return Err(NetError::ZeroSize { what: "class count" });
    }
    let mut ops = Vec::new();
    let mut prev = spec.input_dim;
    for (l, &w) in widths.iter().enumerate() {
        ops.push(Op::Linear(linear(w, prev, spec.init, rng)));
        if spec.norm == Norm::BatchNorm {
            ops.push(Op::BatchNorm(BatchNorm::new(w)));
        }
        ops.push(Op::Activation { kind: spec.activation, module: l + 1 });
        prev = w;
    }
    ops.push(Op::Linear(linear(spec.classes, prev, spec.init, rng)));
    CpaGraph::new(spec.input_dim, ops)
}

pub fn build_mlp(spec: &NetSpec, width: usize, depth: usize, rng: &mut Rng) -> Result<CpaGraph, NetError> {
    if width == 0 {
        return Err(NetError::ZeroSize { what: "width" });
    }
    if depth == 0 {
        return Err(NetError::ZeroSize { what: "depth" });
    }
    build_mlp_widths(spec, &vec![width; depth], rng)
}

/// Input projection followed by `blocks` residual blocks
/// `x ↦ Act(x + F(x))`, `F = Linear → Norm → Act → Linear → Norm`.
pub fn build_residual(spec: &NetSpec, width: usize, blocks: usize, rng: &mut Rng) -> Result<CpaGraph, NetError> {
    if width == 0 {
        return Err(NetError::ZeroSize { what: "width" });
    }
    if blocks == 0 {
        return Err(NetError::ZeroSize { what: "blocks" });
    }
    if spec.classes == 0 {
        return Err(NetError::ZeroSize { what: "class count" });
    }
    let mut ops = Vec::new();
    let mut module = 0;
    let norm = |ops: &mut Vec<Op>| {
        if spec.norm == Norm::BatchNorm {
            ops.push(Op::BatchNorm(BatchNorm::new(width)));
        }
    };
    let mut act = |ops: &mut Vec<Op>| {
        module += 1;
        ops.push(Op::Activation { kind: spec.activation, module });
    };
    ops.push(Op::Linear(linear(width, spec.input_dim, spec.init, rng)));
    norm(&mut ops);
    act(&mut ops);
    for b in 0..blocks {
        let tag = b as u32;
        ops.push(Op::SkipBegin { tag });
        ops.push(Op::Linear(linear(width, width, spec.init, rng)));
        norm(&mut ops);
        act(&mut ops);
        ops.push(Op::Linear(linear(width, width, spec.init, rng)));
        norm(&mut ops);
        ops.push(Op::SkipAdd { tag });
        act(&mut ops);
    }
    ops.push(Op::Linear(linear(spec.classes, width, spec.init, rng)));
    CpaGraph::new(spec.input_dim, ops)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Mode;

    fn rng() -> Rng {
        Rng::seed_from_u64(11)
    }

    #[test]
    fn mlp_module_layout() {
        let net = build_mlp(&NetSpec::default(), 32, 5, &mut rng()).unwrap();
        assert_eq!(net.num_modules(), 5);
        assert_eq!(net.module_widths(), vec![32; 5]);
        assert_eq!(net.output_dim(), 2);

        let tiny = build_mlp(&NetSpec::default(), 1, 1, &mut rng()).unwrap();
        assert_eq!(tiny.module_widths(), vec![1]);
    }

    #[test]
    fn mlp_param_count_with_batchnorm() {
        let spec = NetSpec { norm: Norm::BatchNorm, ..NetSpec::default() };
        let net = build_mlp(&spec, 8, 3, &mut rng()).unwrap();
        // hand count: first linear, two hidden linears, three BN (γ, β), readout
        let expected = (2 * 8 + 8) + 2 * (8 * 8 + 8) + 3 * (2 * 8) + (8 * 2 + 2);
        assert_eq!(net.num_params(), expected);
    }

    #[test]
    fn rejects_zero_sizes() {
        let spec = NetSpec::default();
        assert!(build_mlp(&spec, 0, 3, &mut rng()).is_err());
        assert!(build_mlp(&spec, 3, 0, &mut rng()).is_err());
        assert!(build_residual(&spec, 4, 0, &mut rng()).is_err());
    }

    #[test]
    fn residual_module_counts() {
        let spec = NetSpec::default();
        assert_eq!(build_residual(&spec, 32, 3, &mut rng()).unwrap().num_modules(), 7);
        assert_eq!(build_residual(&spec, 32, 1, &mut rng()).unwrap().num_modules(), 3);
    }

    #[test]
    fn zero_residual_branch_is_relu_of_input() {
        let mut net = build_residual(&NetSpec::default(), 4, 1, &mut rng()).unwrap();
        // zero both block linears: F ≡ 0
        let mut seen = 0;
        for op in net.ops_mut() {
            if let Op::Linear(l) = op {
                seen += 1;
                if seen == 2 || seen == 3 {
                    l.weight.as_mut_slice().fill(0.0);
                    l.bias.fill(0.0);
                }
            }
        }
        let x = Matrix::from_rows(&[&[0.3, -0.7], &[-1.0, 0.2]]);
        let trace = net.forward_with(&x, Mode::Eval).unwrap();
        // module 1 output feeds the block; module 3 (post-add) sees exactly that
        let h1 = trace.pre_activation(1).map(|u| u.max(0.0));
        assert_eq!(trace.pre_activation(3), &h1);
    }

    #[test]
    fn fan_in_bounds_hold() {
        let net = build_mlp(&NetSpec::default(), 16, 2, &mut rng()).unwrap();
        for op in net.ops() {
            if let Op::Linear(l) = op {
                let b = libm::sqrt(1.0 / l.weight.cols() as f64);
                assert!(l.weight.as_slice().iter().chain(&l.bias).all(|w| w.abs() <= b));
            }
        }
    }
}
