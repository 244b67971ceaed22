use alloc::vec;
use alloc::vec::Vec;

use super::{CpaGraph, Mode, NetError, Op, BN_VAR_FLOOR};
use crate::linalg::Matrix;

/// Batch statistics of one batch-norm op, as used by that forward pass.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BnCache {
    /// Batch mean in train mode, running mean in eval mode.
    pub mean: Vec<f64>,
    /// Biased batch variance in train mode, running variance in eval mode.
    pub var: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub normalized: Matrix,
    pub train: bool,
}

/// Everything a forward pass produced that backward or the penalty needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// Input of op `k`.
    inputs: Vec<Matrix>,
    logits: Matrix,
    bn: Vec<Option<BnCache>>,
    /// Op index of activation module `ℓ` at position `ℓ − 1`.
    module_ops: Vec<usize>,
    fingerprint: u64,
}

impl ForwardTrace {
    pub fn batch_size(&self) -> usize {
        self.logits.rows()
    }

    pub fn logits(&self) -> &Matrix {
        &self.logits
    }

    pub fn num_modules(&self) -> usize {
        self.module_ops.len()
    }

    /// `u_ℓ`, the `|B| × n_ℓ` tensor entering activation module `ℓ` (1-based).
    pub fn pre_activation(&self, module: usize) -> &Matrix {
        &self.inputs[self.module_ops[module - 1]]
    }

    pub fn pre_activations(&self) -> impl Iterator<Item = &Matrix> {
        self.module_ops.iter().map(move |&k| &self.inputs[k])
    }

    pub(crate) fn op_input(&self, k: usize) -> &Matrix {
        &self.inputs[k]
    }

    pub(crate) fn num_ops(&self) -> usize {
        self.inputs.len()
    }

    pub(crate) fn batch_stats(&self, k: usize) -> Option<&BnCache> {
        self.bn[k].as_ref().filter(|c| c.train)
    }

    pub(crate) fn bn_cache(&self, k: usize) -> Option<&BnCache> {
        self.bn[k].as_ref()
    }

    pub(crate) fn fingerprint(&self) -> u64 {
        self.fingerprint
    }
}

impl CpaGraph {
    /// Forward pass in the graph's current mode.
    pub fn forward(&self, batch: &Matrix) -> Result<ForwardTrace, NetError> {
        self.forward_with(batch, self.mode())
    }

    pub fn forward_with(&self, batch: &Matrix, mode: Mode) -> Result<ForwardTrace, NetError> {
        if batch.cols() != self.input_dim() {
            return Err(NetError::DimensionMismatch { op: 0, expected: self.input_dim(), found: batch.cols() });
        }
        if batch.rows() == 0 {
            return Err(NetError::EmptyBatch);
        }
        let n = batch.rows();
        let mut inputs = Vec::with_capacity(self.ops().len());
        let mut bn = vec![None; self.ops().len()];
        let mut module_ops = Vec::new();
        let mut saved: Vec<(u32, Matrix)> = Vec::new();
        let mut x = batch.clone();
        for (k, op) in self.ops().iter().enumerate() {
            let y = match op {
                Op::Linear(l) => {
                    let mut y = x.matmul_t(&l.weight);
                    for r in 0..n {
                        for (v, b) in y.row_mut(r).iter_mut().zip(&l.bias) {
                            *v += b;
                        }
                    }
                    y
                }
                Op::NormAffine(a) => {
                    let mut y = x.clone();
                    for r in 0..n {
                        for ((v, s), t) in y.row_mut(r).iter_mut().zip(&a.scale).zip(&a.shift) {
                            *v = *v * s + t;
                        }
                    }
                    y
                }
                Op::BatchNorm(b) => {
                    let width = b.width();
                    let (mean, var, train) = match mode {
                        Mode::Train => {
                            let mut mean = vec![0.0; width];
                            for row in x.iter_rows() {
                                for (m, v) in mean.iter_mut().zip(row) {
                                    *m += v;
                                }
                            }
                            mean.iter_mut().for_each(|m| *m /= n as f64);
                            let mut var = vec![0.0; width];
                            for row in x.iter_rows() {
                                for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                                    *s += (v - m) * (v - m);
                                }
                            }
                            var.iter_mut().for_each(|s| *s /= n as f64);
                            (mean, var, true)
                        }
                        Mode::Eval => {
                            (b.running_mean.clone(), b.running_var.iter().map(|v| v.max(BN_VAR_FLOOR)).collect(), false)
                        }
                    };
                    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / libm::sqrt(v + b.eps)).collect();
                    let mut normalized = x.clone();
                    let mut y = x.clone();
                    for r in 0..n {
                        for u in 0..width {
                            let xh = (x[(r, u)] - mean[u]) * inv_std[u];
                            normalized[(r, u)] = xh;
                            y[(r, u)] = b.gamma[u] * xh + b.beta[u];
                        }
                    }
                    bn[k] = Some(BnCache { mean, var, inv_std, normalized, train });
                    y
                }
                Op::Activation { kind, .. } => {
                    module_ops.push(k);
                    x.map(|u| kind.apply(u))
                }
                Op::SkipBegin { tag } => {
                    saved.push((*tag, x.clone()));
                    x.clone()
                }
                Op::SkipAdd { tag } => {
                    let pos = saved.iter().position(|(t, _)| t == tag).ok_or(NetError::SkipMismatch { tag: *tag })?;
                    let (_, skip) = saved.remove(pos);
                    let mut y = x.clone();
                    y.add_assign(&skip);
                    y
                }
            };
            inputs.push(core::mem::replace(&mut x, y));
        }
        Ok(ForwardTrace { inputs, logits: x, bn, module_ops, fingerprint: self.fingerprint() })
    }

    /// Eval-mode logits for a single point.
    pub fn eval_point(&self, x: &[f64]) -> Result<Vec<f64>, NetError> {
        let t = self.forward_with(&Matrix::from_vec(1, x.len(), x.to_vec()), Mode::Eval)?;
        Ok(t.logits.row(0).to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{build_mlp, ActivationKind, Linear, NetSpec, Norm};
    use crate::rng::Rng;

    fn single_unit() -> CpaGraph {
        CpaGraph::new(
            2,
            vec![
                Op::Linear(Linear { weight: Matrix::from_rows(&[&[1.0, 0.0]]), bias: vec![0.0] }),
                Op::Activation { kind: ActivationKind::Relu, module: 1 },
            ],
        )
        .unwrap()
    }

    #[test]
    fn single_unit_positive_and_negative() {
        let net = single_unit();
        let t = net.forward(&Matrix::from_rows(&[&[2.0, 3.0], &[-2.0, 3.0]])).unwrap();
        assert_eq!(t.pre_activation(1).as_slice(), &[2.0, -2.0]);
        assert_eq!(t.logits().as_slice(), &[2.0, 0.0]);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let net = single_unit();
        assert!(matches!(net.forward(&Matrix::zeros(1, 3)), Err(NetError::DimensionMismatch { .. })));
    }

    /// Independent dense evaluation: explicit loops over weights, no `Matrix` products.
    fn dense_eval(net: &CpaGraph, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for op in net.ops() {
            match op {
                Op::Linear(l) => {
                    let mut out = l.bias.clone();
                    for (i, o) in out.iter_mut().enumerate() {
                        for (j, hj) in h.iter().enumerate() {
                            *o += l.weight.as_slice()[i * h.len() + j] * hj;
                        }
                    }
                    h = out;
                }
                Op::Activation { .. } => h.iter_mut().for_each(|v| *v = if *v > 0.0 { *v } else { 0.0 }),
                _ => unreachable!(),
            }
        }
        h
    }

    #[test]
    fn matches_dense_oracle() {
        let mut rng = Rng::seed_from_u64(5);
        let net = build_mlp(&NetSpec::default(), 8, 1, &mut rng).unwrap();
        let rows: Vec<f64> = (0..20).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let batch = Matrix::from_vec(10, 2, rows);
        let t = net.forward(&batch).unwrap();
        for r in 0..10 {
            let want = dense_eval(&net, batch.row(r));
            for (a, b) in t.logits().row(r).iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn replay_is_bit_identical() {
        let spec = NetSpec { norm: Norm::BatchNorm, ..NetSpec::default() };
        let mut rng = Rng::seed_from_u64(9);
        let net = build_mlp(&spec, 6, 3, &mut rng).unwrap();
        let batch = Matrix::from_vec(7, 2, (0..14).map(|_| rng.normal()).collect());
        for mode in [Mode::Train, Mode::Eval] {
            assert_eq!(net.forward_with(&batch, mode).unwrap(), net.forward_with(&batch, mode).unwrap());
        }
    }

    #[test]
    fn train_mode_running_stats_move_toward_batch() {
        let spec = NetSpec { norm: Norm::BatchNorm, ..NetSpec::default() };
        let mut rng = Rng::seed_from_u64(2);
        let mut net = build_mlp(&spec, 3, 1, &mut rng).unwrap();
        let batch = Matrix::from_vec(4, 2, (0..8).map(|_| 3.0 + rng.normal()).collect());
        let t = net.forward_with(&batch, Mode::Train).unwrap();
        let stats = t.batch_stats(1).unwrap().clone();
        net.update_running_stats(&t).unwrap();
        let Op::BatchNorm(bn) = &net.ops()[1] else { panic!() };
        for u in 0..3 {
            assert!((bn.running_mean[u] - 0.1 * stats.mean[u]).abs() < 1e-15);
            assert!((bn.running_var[u] - (0.9 + 0.1 * stats.var[u] * 4.0 / 3.0)).abs() < 1e-15);
        }
    }
}
