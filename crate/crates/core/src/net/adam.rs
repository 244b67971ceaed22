use alloc::vec;
use alloc::vec::Vec;

use super::{CpaGraph, Gradients, NetError};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment estimates, shaped like the parameter tensors.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(net: &CpaGraph) -> Self {
        let shapes: Vec<usize> = net.parameters().iter().map(|p| p.len()).collect();
        AdamState {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    /// One bias-corrected Adam update over parallel tensor lists.
    pub fn update(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>, cfg: &AdamConfig) -> Result<(), NetError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(NetError::ShapeMismatch);
        }
        if params.iter().zip(&grads).zip(&self.m).any(|((p, g), m)| p.len() != m.len() || g.len() != m.len()) {
            return Err(NetError::ShapeMismatch);
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - libm::pow(cfg.beta1, t as f64);
        let c2 = 1.0 - libm::pow(cfg.beta2, t as f64);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= cfg.lr * m_hat / (libm::sqrt(v_hat) + cfg.eps);
            }
        }
        Ok(())
    }

    pub fn step_net(&mut self, net: &mut CpaGraph, grads: &Gradients, cfg: &AdamConfig) -> Result<(), NetError> {
        self.update(net.parameters_mut(), grads.tensors(), cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![0.5, -1.5];
        let mut st = AdamState { m: vec![vec![0.0; 2]], v: vec![vec![0.0; 2]], step: 0 };
        for _ in 0..50 {
            st.update(vec![&mut p], vec![&[0.0, 0.0]], &AdamConfig::default()).unwrap();
        }
        assert_eq!(p, vec![0.5, -1.5]);
        assert_eq!(st.step, 50);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = g, v̂ = g², so the step is lr·g/(|g| + eps)
        let cfg = AdamConfig::default();
        let g = [0.3, -2.0];
        let mut p = vec![0.0, 0.0];
        let mut st = AdamState { m: vec![vec![0.0; 2]], v: vec![vec![0.0; 2]], step: 0 };
        st.update(vec![&mut p], vec![&g], &cfg).unwrap();
        for (pi, gi) in p.iter().zip(g) {
            let want = -cfg.lr * gi / (gi.abs() + cfg.eps);
            assert!((pi - want).abs() < 1e-18);
            assert!((pi.abs() - cfg.lr).abs() < 1e-10);
        }
    }

    #[test]
    fn defaults_follow_toy_table() {
        let cfg = AdamConfig::default();
        assert_eq!((cfg.lr, cfg.beta1, cfg.beta2, cfg.eps), (1e-4, 0.9, 0.999, 1e-8));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = vec![0.0; 3];
        let mut st = AdamState { m: vec![vec![0.0; 2]], v: vec![vec![0.0; 2]], step: 0 };
        assert_eq!(st.update(vec![&mut p], vec![&[0.0; 3]], &AdamConfig::default()), Err(NetError::ShapeMismatch));
    }
}
