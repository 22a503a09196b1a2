use crate::{DiffError, ParamStore, Real, Result};

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// One Adam update with bias correction for step `t` (1-based).
///
/// The weight decay term is added to the gradient before the moment
/// updates (L2 penalty). Gradients are zeroed afterwards. If any gradient is
/// non-finite nothing is updated.
pub fn adam_step<T: Real>(store: &mut ParamStore<T>, cfg: &AdamConfig, t: u64) -> Result<()> {
    if t == 0 {
        return Err(DiffError::Invalid("adam step count starts at 1".into()));
    }
    if let Some(p) = store.iter().find(|p| !p.grad.all_finite()) {
        return Err(DiffError::NonFiniteGradient(p.name.clone()));
    }
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for p in store.iter_mut() {
        let n = p.value.numel();
        let value = p.value.data_mut();
        let grad = p.grad.data_mut();
        let m = p.adam_m.data_mut();
        let v = p.adam_v.data_mut();
        for i in 0..n {
            let w = value[i].to_f64();
            let g = grad[i].to_f64() + cfg.weight_decay * w;
            let mi = cfg.beta1 * m[i].to_f64() + (1.0 - cfg.beta1) * g;
            let vi = cfg.beta2 * v[i].to_f64() + (1.0 - cfg.beta2) * g * g;
            m[i] = T::from_f64(mi);
            v[i] = T::from_f64(vi);
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            value[i] = T::from_f64(w - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps));
            grad[i] = T::ZERO;
        }
    }
    Ok(())
}

/// Adam with an internal step counter.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam { config, t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step<T: Real>(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        adam_step(store, &self.config, self.t + 1)?;
        self.t += 1;
        Ok(())
    }
}
