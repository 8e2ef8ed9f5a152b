//! Learning-rate schedule, global-norm gradient clipping and Adam.

use crate::autodiff::ParamStore;
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::tensor::Real;

/// Learning rate for optimizer step `n` (1-based) in `epoch` (0-based).
///
/// Warmup (`n <= num_warmups`): `k1 * d_model^-0.5 * n * num_warmups^-1.5`.
/// Afterwards: `k2 * lr_decay^floor(epoch / decay_every_epochs)`.
pub fn lr_at(n: usize, epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if n < 1 {
        return Err(Error::Usage("learning-rate step counter starts at 1".into()));
    }
    Ok(if n <= cfg.num_warmups {
        cfg.k1 * (cfg.d_model as f64).powf(-0.5) * n as f64 * (cfg.num_warmups as f64).powf(-1.5)
    } else {
        let decays = (epoch / cfg.decay_every_epochs) as i32;
        cfg.k2 * cfg.lr_decay.powi(decays)
    })
}

/// Global L2 norm over every gradient in the store.
pub fn grad_norm<T: Real>(store: &ParamStore<T>) -> f64 {
    store
        .ids()
        .flat_map(|id| store.grad(id).iter())
        .map(|g| g.as_f64().powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients so their global norm is at most `max_norm` and
/// returns the factor applied (1 when no clipping happened).
pub fn clip_gradients<T: Real>(store: &mut ParamStore<T>, max_norm: f64) -> f64 {
    let norm = grad_norm(store);
    if norm <= max_norm || norm == 0.0 {
        return 1.0;
    }
    let scale = max_norm / norm;
    let s = T::lit(scale);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        store.grad_mut(id).iter_mut().for_each(|g| *g *= s);
    }
    scale
}

/// Adam with bias correction. Moment buffers are kept in double precision.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self::new(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    }

    /// Applies update number `t` (1-based) using the gradients in `store`.
    pub fn step<T: Real>(&mut self, store: &mut ParamStore<T>, lr: f64, t: usize) -> Result<()> {
        if t < 1 {
            return Err(Error::Usage("Adam step counter starts at 1".into()));
        }
        if self.m.len() != store.len() {
            self.m = store.ids().map(|id| vec![0.0; store.value(id).len()]).collect();
            self.v = self.m.clone();
        }
        let c1 = 1.0 - self.beta1.powi(t as i32);
        let c2 = 1.0 - self.beta2.powi(t as i32);
        let ids: Vec<_> = store.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let (value, grad) = store.value_and_grad_mut(id);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (k, (p, g)) in value.data_mut().iter_mut().zip(grad.iter()).enumerate() {
                let g = g.as_f64();
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let update = lr * (m[k] / c1) / ((v[k] / c2).sqrt() + self.eps);
                *p = T::lit(p.as_f64() - update);
            }
        }
        Ok(())
    }
}
