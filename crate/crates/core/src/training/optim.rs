use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::tensor::{GradBuffer, ParamStore, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled: applied as `θ -= lr·wd·θ`, outside the adaptive term.
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moments per parameter entry plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState<F> {
    pub cfg: AdamWConfig,
    pub m: Vec<Vec<F>>,
    pub v: Vec<Vec<F>>,
    pub t: u64,
}

impl<F: Real> OptimState<F> {
    pub fn new(params: &ParamStore<F>, cfg: AdamWConfig) -> Self {
        let zeros: Vec<Vec<F>> = params.ids().map(|id| vec![F::zero(); params.get(id).len()]).collect();
        Self {
            cfg,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One AdamW update:
/// `θ ← θ − lr·m̂/(√v̂ + eps) − lr·wd·θ` with bias-corrected moments.
pub fn adamw_step<F: Real>(
    params: &mut ParamStore<F>,
    grads: &GradBuffer<F>,
    state: &mut OptimState<F>,
    lr: f64,
) -> Result<(), TrainError> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(TrainError::ShapeMismatch(format!(
            "{} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    let ids: Vec<_> = params.ids().collect();
    for (slot, &id) in ids.iter().enumerate() {
        let n = params.get(id).len();
        if grads.get(id).len() != n || state.m[slot].len() != n {
            return Err(TrainError::ShapeMismatch(format!(
                "parameter `{}` has {n} entries",
                params.name(id)
            )));
        }
    }
    state.t += 1;
    let c = state.cfg;
    let f = F::from_f64_lossy;
    let (b1, b2) = (f(c.beta1), f(c.beta2));
    let bc1 = f(1.0 - c.beta1.powi(state.t as i32));
    let bc2 = f(1.0 - c.beta2.powi(state.t as i32));
    let (lr_f, eps, decay) = (f(lr), f(c.eps), f(lr * c.weight_decay));
    let one = F::one();
    for (slot, id) in ids.into_iter().enumerate() {
        let g = grads.get(id);
        let m = &mut state.m[slot];
        let v = &mut state.v[slot];
        let theta = params.get_mut(id).data_mut();
        for j in 0..theta.len() {
            m[j] = b1 * m[j] + (one - b1) * g[j];
            v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            theta[j] = theta[j] - lr_f * (m_hat / (v_hat.sqrt() + eps)) - decay * theta[j];
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("theta", Tensor::vector(vec![v]));
        s
    }

    #[test]
    fn one_scalar_step_by_hand() {
        let mut p = scalar_store(1.0);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let mut st = OptimState::new(&p, cfg);
        adamw_step(&mut p, &GradBuffer::from_vecs(vec![vec![1.0]]), &mut st, 0.1).unwrap();
        // m̂ = v̂ = 1 at t = 1
        let expected = 1.0 - 0.1 * (1.0 / (1.0 + 1e-8));
        assert!((p.get(p.ids().next().unwrap()).data()[0] - expected).abs() < 1e-12);
        assert!((expected - 0.9).abs() < 1e-8);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn zero_grad_zero_decay_is_identity() {
        let mut p = scalar_store(0.37);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let mut st = OptimState::new(&p, cfg);
        for _ in 0..5 {
            adamw_step(&mut p, &GradBuffer::from_vecs(vec![vec![0.0]]), &mut st, 0.1).unwrap();
        }
        assert_eq!(p.get(p.ids().next().unwrap()).data()[0], 0.37);
    }

    #[test]
    fn pure_decoupled_decay() {
        let mut p = scalar_store(2.0);
        let mut st = OptimState::new(&p, AdamWConfig::default());
        adamw_step(&mut p, &GradBuffer::from_vecs(vec![vec![0.0]]), &mut st, 0.1).unwrap();
        assert!((p.get(p.ids().next().unwrap()).data()[0] - 2.0 * (1.0 - 0.1 * 0.01)).abs() < 1e-15);
    }

    #[test]
    fn mismatched_grads() {
        let mut p = scalar_store(1.0);
        let mut st = OptimState::new(&p, AdamWConfig::default());
        assert!(adamw_step(&mut p, &GradBuffer::from_vecs(vec![vec![0.0, 1.0]]), &mut st, 0.1).is_err());
        assert!(adamw_step(&mut p, &GradBuffer::from_vecs(vec![]), &mut st, 0.1).is_err());
        assert_eq!(st.t, 0);
    }

    #[test]
    fn second_moment_stays_nonnegative() {
        let mut p = scalar_store(0.5);
        let mut st = OptimState::new(&p, AdamWConfig::default());
        for g in [-3.0, 2.0, -0.5, 0.0, 7.0] {
            adamw_step(&mut p, &GradBuffer::from_vecs(vec![vec![g]]), &mut st, 1e-3).unwrap();
            assert!(st.v[0][0] >= 0.0);
        }
        assert_eq!(st.t, 5);
    }
}
