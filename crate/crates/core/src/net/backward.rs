use alloc::vec;
use alloc::vec::Vec;

use super::{CpaGraph, ForwardTrace, NetError, Op};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub enum OpGrad {
    None,
    Linear {
        weight: Matrix,
        bias: Vec<f64>,
    },
    /// Scale/shift of a `NormAffine`, or γ/β of a batch norm.
    Affine {
        scale: Vec<f64>,
        shift: Vec<f64>,
    },
}

/// Parameter gradients, one entry per op.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub ops: Vec<OpGrad>,
}

impl Gradients {
    /// Same order as [`CpaGraph::parameters`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for g in &self.ops {
            match g {
                OpGrad::None => {}
                OpGrad::Linear { weight, bias } => {
                    out.push(weight.as_slice());
                    out.push(bias);
                }
                OpGrad::Affine { scale, shift } => {
                    out.push(scale);
                    out.push(shift);
                }
            }
        }
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }
}

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut s = vec![0.0; m.cols()];
    for row in m.iter_rows() {
        for (a, b) in s.iter_mut().zip(row) {
            *a += b;
        }
    }
    s
}

impl CpaGraph {
    /// Reverse-mode gradients of `task + penalty` through one shared forward pass.
    ///
    /// `loss_grad` is `∂L_task/∂logits`; `penalty_grads[ℓ − 1]`, when given, is
    /// `∂R/∂u_ℓ` and is injected at the input of activation module `ℓ`.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        loss_grad: &Matrix,
        penalty_grads: Option<&[Matrix]>,
    ) -> Result<Gradients, NetError> {
        if trace.fingerprint() != self.fingerprint() || trace.num_ops() != self.ops().len() {
            return Err(NetError::StaleTrace);
        }
        if loss_grad.shape() != trace.logits().shape() {
            return Err(NetError::StaleTrace);
        }
        if let Some(p) = penalty_grads {
            if p.len() != trace.num_modules()
                || p.iter().zip(trace.pre_activations()).any(|(g, u)| g.shape() != u.shape())
            {
                return Err(NetError::StaleTrace);
            }
        }
        let n = trace.batch_size();
        let mut grads = vec![OpGrad::None; self.ops().len()];
        let mut skip_grads: Vec<(u32, Matrix)> = Vec::new();
        let mut g = loss_grad.clone();
        for (k, op) in self.ops().iter().enumerate().rev() {
            let x = trace.op_input(k);
            g = match op {
                Op::Linear(l) => {
                    grads[k] = OpGrad::Linear { weight: g.t_matmul(x), bias: column_sums(&g) };
                    g.matmul(&l.weight)
                }
                Op::NormAffine(a) => {
                    let mut ds = vec![0.0; a.scale.len()];
                    let mut gin = g.clone();
                    for r in 0..n {
                        for u in 0..a.scale.len() {
                            ds[u] += g[(r, u)] * x[(r, u)];
                            gin[(r, u)] = g[(r, u)] * a.scale[u];
                        }
                    }
                    grads[k] = OpGrad::Affine { scale: ds, shift: column_sums(&g) };
                    gin
                }
                Op::BatchNorm(b) => {
                    let cache = trace.bn_cache(k).ok_or(NetError::StaleTrace)?;
                    let width = b.width();
                    let xh = &cache.normalized;
                    let mut dgamma = vec![0.0; width];
                    for r in 0..n {
                        for u in 0..width {
                            dgamma[u] += g[(r, u)] * xh[(r, u)];
                        }
                    }
                    let dbeta = column_sums(&g);
                    let mut gin = Matrix::zeros(n, width);
                    if cache.train {
                        // dx = inv_std/n · (n·dx̂ − Σdx̂ − x̂·Σ(dx̂·x̂)), dx̂ = γ·g
                        let nf = n as f64;
                        for u in 0..width {
                            let sum_dxh = b.gamma[u] * dbeta[u];
                            let sum_dxh_xh = b.gamma[u] * dgamma[u];
                            for r in 0..n {
                                let dxh = b.gamma[u] * g[(r, u)];
                                gin[(r, u)] = cache.inv_std[u] / nf * (nf * dxh - sum_dxh - xh[(r, u)] * sum_dxh_xh);
                            }
                        }
                    } else {
                        for r in 0..n {
                            for u in 0..width {
                                gin[(r, u)] = g[(r, u)] * b.gamma[u] * cache.inv_std[u];
                            }
                        }
                    }
                    grads[k] = OpGrad::Affine { scale: dgamma, shift: dbeta };
                    gin
                }
                Op::Activation { kind, module } => {
                    let mut gin = g.clone();
                    for (gv, &u) in gin.as_mut_slice().iter_mut().zip(x.as_slice()) {
                        *gv *= kind.derivative(u);
                    }
                    if let Some(p) = penalty_grads {
                        gin.add_assign(&p[module - 1]);
                    }
                    gin
                }
                Op::SkipAdd { tag } => {
                    skip_grads.push((*tag, g.clone()));
                    g
                }
                Op::SkipBegin { tag } => {
                    let pos =
                        skip_grads.iter().position(|(t, _)| t == tag).ok_or(NetError::SkipMismatch { tag: *tag })?;
                    let (_, extra) = skip_grads.remove(pos);
                    let mut gin = g;
                    gin.add_assign(&extra);
                    gin
                }
            };
        }
        Ok(Gradients { ops: grads })
    }
}
