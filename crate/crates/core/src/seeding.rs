//! Region-seeding penalty on the pre-activations entering each activation module.
//!
//! Per module: `R_ℓ = (1/|B|) Σ_b ‖u_ℓ(x_b)‖₂ / n_ℓ`, with `n_ℓ` the element
//! count (not its square root). Modules are combined as
//! `R = α · η(t) · Σ_ℓ λ_ℓ R_ℓ`, where `λ_ℓ` weights depth and `η(t)` anneals
//! the term over epochs.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{norm2, Matrix};
use crate::net::ForwardTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum WeightMode {
    /// `λ_ℓ = 4 (L − ℓ + 1)/(L + 1)`.
    #[default]
    Decay,
    /// `λ_ℓ = 1`.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum AnnealMode {
    /// `η(t) = max(0, 1 − t/t_max)`.
    #[default]
    Linear,
    /// `η(t) = 1`.
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct PenaltyConfig {
    pub alpha: f64,
    pub weight_mode: WeightMode,
    pub anneal_mode: AnnealMode,
    pub t_max: u32,
    pub enabled: bool,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        PenaltyConfig {
            alpha: 1e-2,
            weight_mode: WeightMode::Decay,
            anneal_mode: AnnealMode::Linear,
            t_max: 1000,
            enabled: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum PenaltyError {
    #[error("alpha must be finite and nonnegative, got {0}")]
    NegativeAlpha(f64),
    #[error("t_max must be at least 1")]
    ZeroHorizon,
    #[error("penalty needs a nonempty batch and at least one unit per module")]
    EmptyBatch,
}

impl PenaltyConfig {
    /// No penalty at all; the baseline arm.
    pub fn disabled() -> Self {
        PenaltyConfig { alpha: 0.0, enabled: false, ..PenaltyConfig::default() }
    }

    pub fn validate(&self) -> Result<(), PenaltyError> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(PenaltyError::NegativeAlpha(self.alpha));
        }
        if self.t_max == 0 {
            return Err(PenaltyError::ZeroHorizon);
        }
        Ok(())
    }

    /// `α·η(t)`, zero when disabled.
    pub fn scale(&self, epoch: u32) -> f64 {
        if self.enabled {
            self.alpha * anneal(epoch, self.t_max, self.anneal_mode)
        } else {
            0.0
        }
    }
}

/// Every term of one penalty evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyReport {
    /// `R_ℓ`, module order.
    pub per_layer: Vec<f64>,
    /// `λ_ℓ`.
    pub weights: Vec<f64>,
    pub eta: f64,
    /// `α·η·Σ λ_ℓ R_ℓ`, or 0 when disabled.
    pub total: f64,
}

/// Batchwise penalty of one module, `u` being `|B| × n_ℓ`.
pub fn layer_penalty(u: &Matrix) -> Result<f64, PenaltyError> {
    let (batch, n) = u.shape();
    if batch == 0 || n == 0 {
        return Err(PenaltyError::EmptyBatch);
    }
    let sum: f64 = u.iter_rows().map(norm2).sum();
    Ok(sum / n as f64 / batch as f64)
}

pub fn layer_weights(modules: usize, mode: WeightMode) -> Vec<f64> {
    match mode {
        WeightMode::Uniform => vec![1.0; modules],
        WeightMode::Decay => {
            let l = modules as f64;
            (1..=modules).map(|ell| 4.0 * (l - ell as f64 + 1.0) / (l + 1.0)).collect()
        }
    }
}

/// Annealing factor for integer epoch `t` (0-based).
pub fn anneal(t: u32, t_max: u32, mode: AnnealMode) -> f64 {
    match mode {
        AnnealMode::Constant => 1.0,
        AnnealMode::Linear => {
            let t_max = t_max.max(1);
            f64::max(0.0, 1.0 - t as f64 / t_max as f64)
        }
    }
}

pub fn total_penalty(trace: &ForwardTrace, cfg: &PenaltyConfig, epoch: u32) -> Result<PenaltyReport, PenaltyError> {
    cfg.validate()?;
    let per_layer = trace.pre_activations().map(layer_penalty).collect::<Result<Vec<_>, _>>()?;
    let weights = layer_weights(per_layer.len(), cfg.weight_mode);
    let eta = anneal(epoch, cfg.t_max, cfg.anneal_mode);
    let weighted: f64 = per_layer.iter().zip(&weights).map(|(r, w)| r * w).sum();
    let total = if cfg.enabled { cfg.alpha * eta * weighted } else { 0.0 };
    Ok(PenaltyReport { per_layer, weights, eta, total })
}

/// `∂R/∂u_ℓ` for every module; zero rows where `‖u_ℓ(x_b)‖ = 0`.
pub fn penalty_gradients(trace: &ForwardTrace, cfg: &PenaltyConfig, epoch: u32) -> Result<Vec<Matrix>, PenaltyError> {
    cfg.validate()?;
    let scale = cfg.scale(epoch);
    let weights = layer_weights(trace.num_modules(), cfg.weight_mode);
    trace
        .pre_activations()
        .zip(weights)
        .map(|(u, lambda)| {
            let (batch, n) = u.shape();
            if batch == 0 || n == 0 {
                return Err(PenaltyError::EmptyBatch);
            }
            let mut g = Matrix::zeros(batch, n);
            if scale == 0.0 {
                return Ok(g);
            }
            let coef = scale * lambda / (batch as f64 * n as f64);
            for r in 0..batch {
                let norm = norm2(u.row(r));
                if norm > 0.0 {
                    for (gv, uv) in g.row_mut(r).iter_mut().zip(u.row(r)) {
                        *gv = coef * uv / norm;
                    }
                }
            }
            Ok(g)
        })
        .collect()
}

/// Task loss plus penalty.
#[inline]
pub fn seeded_loss(task: f64, penalty: f64) -> f64 {
    task + penalty
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{ActivationKind, CpaGraph, Linear, Op};

    /// Identity-weight single module so that `u` equals the input batch.
    fn passthrough(batch: &Matrix) -> ForwardTrace {
        let n = batch.cols();
        let net = CpaGraph::new(
            n,
            vec![
                Op::Linear(Linear { weight: Matrix::identity(n), bias: vec![0.0; n] }),
                Op::Activation { kind: ActivationKind::Relu, module: 1 },
            ],
        )
        .unwrap();
        net.forward(batch).unwrap()
    }

    #[test]
    fn layer_penalty_examples() {
        assert_eq!(layer_penalty(&Matrix::from_rows(&[&[3.0, 4.0]])).unwrap(), 2.5);
        assert_eq!(layer_penalty(&Matrix::zeros(3, 4)).unwrap(), 0.0);
        assert_eq!(layer_penalty(&Matrix::from_rows(&[&[3.0, 4.0], &[0.0, 0.0]])).unwrap(), 1.25);
        assert_eq!(layer_penalty(&Matrix::zeros(0, 2)), Err(PenaltyError::EmptyBatch));
    }

    #[test]
    fn decay_weights() {
        let w = layer_weights(5, WeightMode::Decay);
        let want = [10.0 / 3.0, 8.0 / 3.0, 2.0, 4.0 / 3.0, 2.0 / 3.0];
        for (a, b) in w.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(layer_weights(1, WeightMode::Decay), vec![2.0]);
        assert_eq!(layer_weights(5, WeightMode::Uniform), vec![1.0; 5]);
    }

    #[test]
    fn anneal_endpoints() {
        assert_eq!(anneal(0, 1000, AnnealMode::Linear), 1.0);
        assert_eq!(anneal(1000, 1000, AnnealMode::Linear), 0.0);
        assert_eq!(anneal(1500, 1000, AnnealMode::Linear), 0.0);
        assert_eq!(anneal(500, 1000, AnnealMode::Linear), 0.5);
        assert_eq!(anneal(900, 10, AnnealMode::Constant), 1.0);
    }

    #[test]
    fn composed_total() {
        let trace = passthrough(&Matrix::from_rows(&[&[3.0, 4.0]]));
        let cfg = PenaltyConfig { alpha: 1e-2, ..PenaltyConfig::default() };
        let rep = total_penalty(&trace, &cfg, 0).unwrap();
        assert!((rep.total - 0.05).abs() < 1e-15);
        assert_eq!(rep.per_layer, vec![2.5]);

        let zero_alpha = PenaltyConfig { alpha: 0.0, ..cfg };
        assert_eq!(total_penalty(&trace, &zero_alpha, 0).unwrap().total, 0.0);
        assert_eq!(total_penalty(&trace, &cfg, 1000).unwrap().total, 0.0);

        let off = PenaltyConfig::disabled();
        let rep = total_penalty(&trace, &off, 0).unwrap();
        assert_eq!(rep.total, 0.0);
        assert_eq!(rep.per_layer, vec![2.5]);
    }

    #[test]
    fn gradient_examples() {
        let trace = passthrough(&Matrix::from_rows(&[&[3.0, 4.0]]));
        let cfg = PenaltyConfig {
            alpha: 1.0,
            weight_mode: WeightMode::Uniform,
            anneal_mode: AnnealMode::Constant,
            ..Default::default()
        };
        let g = penalty_gradients(&trace, &cfg, 0).unwrap();
        // u/(n·‖u‖) = (3, 4)/10
        assert!((g[0][(0, 0)] - 0.3).abs() < 1e-15);
        assert!((g[0][(0, 1)] - 0.4).abs() < 1e-15);

        let zero = passthrough(&Matrix::zeros(2, 3));
        assert!(penalty_gradients(&zero, &cfg, 0).unwrap()[0].as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = crate::rng::Rng::seed_from_u64(8);
        let cfg = PenaltyConfig { alpha: 0.7, t_max: 10, ..PenaltyConfig::default() };
        for _ in 0..5 {
            let mut u = Matrix::from_vec(4, 3, (0..12).map(|_| rng.normal()).collect());
            let g = penalty_gradients(&passthrough(&u), &cfg, 3).unwrap();
            let h = 1e-6;
            for i in 0..12 {
                let orig = u.as_slice()[i];
                u.as_mut_slice()[i] = orig + h;
                let p = total_penalty(&passthrough(&u), &cfg, 3).unwrap().total;
                u.as_mut_slice()[i] = orig - h;
                let m = total_penalty(&passthrough(&u), &cfg, 3).unwrap().total;
                u.as_mut_slice()[i] = orig;
                let fd = (p - m) / (2.0 * h);
                let a = g[0].as_slice()[i];
                assert!((fd - a).abs() <= 1e-6 * a.abs().max(1e-4), "{fd} vs {a}");
            }
        }
    }

    #[test]
    fn validation() {
        let bad = PenaltyConfig { alpha: -1.0, ..PenaltyConfig::default() };
        assert_eq!(bad.validate(), Err(PenaltyError::NegativeAlpha(-1.0)));
        let bad = PenaltyConfig { t_max: 0, ..PenaltyConfig::default() };
        assert_eq!(bad.validate(), Err(PenaltyError::ZeroHorizon));
    }

    #[test]
    fn seeded_loss_is_a_sum() {
        assert_eq!(seeded_loss(0.7, 0.05), 0.75);
        assert_eq!(seeded_loss(1.25, 0.0), 1.25);
        let total = seeded_loss(0.7, 0.05);
        assert!((total - 0.05 - 0.7).abs() < 1e-15);
    }
}
