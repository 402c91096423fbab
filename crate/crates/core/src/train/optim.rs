//! AdamW with decoupled weight decay.

use crate::error::{Error, Result};
use crate::param::{ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// One coordinate at step `t >= 1`: returns `(w, m, v)` after the update.
///
/// Decay `w -= lr * wd * w` happens first and independently of the gradient,
/// then `w -= lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adamw_update(w: f64, g: f64, m: f64, v: f64, t: u64, cfg: &AdamWConfig) -> (f64, f64, f64) {
    let m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    let v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
    let m_hat = m / (1.0 - cfg.beta1.powf(t as f64));
    let v_hat = v / (1.0 - cfg.beta2.powf(t as f64));
    let w = w - cfg.lr * cfg.weight_decay * w;
    (w - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps), m, v)
}

#[derive(Clone, Debug)]
struct Moments<T> {
    m: Tensor<T>,
    v: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    step: u64,
    moments: Vec<Option<Moments<T>>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter that has a gradient. Nothing is
    /// modified if any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, Tensor<T>)]) -> Result<()> {
        for (id, g) in grads {
            if !g.is_finite() {
                return Err(Error::Numeric(format!("non-finite gradient for {}", store.get(*id).name)));
            }
            g.expect_same_shape(store.value(*id), &store.get(*id).name)?;
        }
        self.step += 1;
        let t = self.step;
        let cfg = self.config;
        let (b1, b2) = (T::from_f64(cfg.beta1), T::from_f64(cfg.beta2));
        let (c1, c2) = (
            T::from_f64(1.0 - cfg.beta1.powf(t as f64)),
            T::from_f64(1.0 - cfg.beta2.powf(t as f64)),
        );
        let (lr, decay, eps) = (T::from_f64(cfg.lr), T::from_f64(cfg.lr * cfg.weight_decay), T::from_f64(cfg.eps));
        if self.moments.len() < store.len() {
            self.moments.resize(store.len(), None);
        }
        for (id, g) in grads {
            let shape = g.shape();
            let mom = self.moments[id.index()].get_or_insert_with(|| Moments {
                m: Tensor::zeros(shape),
                v: Tensor::zeros(shape),
            });
            let w = store.value_mut(*id).data_mut();
            for (((w, &g), m), v) in w
                .iter_mut()
                .zip(g.data())
                .zip(mom.m.data_mut())
                .zip(mom.v.data_mut())
            {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                *w -= decay * *w;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(value: f64) -> (ParamStore<f64>, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::from_f64(&[1], &[value]).unwrap(), true).unwrap();
        (s, id)
    }

    fn grad(id: ParamId, g: f64) -> Vec<(ParamId, Tensor<f64>)> {
        vec![(id, Tensor::from_f64(&[1], &[g]).unwrap())]
    }

    #[test]
    fn zero_gradient_only_decays() {
        let (mut s, id) = one(1.0);
        AdamW::new(AdamWConfig::default()).step(&mut s, &grad(id, 0.0)).unwrap();
        assert!((s.value(id).item() - (1.0 - 1e-8)).abs() < 1e-18);
    }

    #[test]
    fn first_step_magnitude() {
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let (mut s, id) = one(0.0);
        AdamW::new(cfg).step(&mut s, &grad(id, 1.0)).unwrap();
        assert!((s.value(id).item() + 1e-4 / (1.0 + 1e-8)).abs() < 1e-18);
    }

    #[test]
    fn no_gradient_no_decay_is_identity() {
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let (mut s, id) = one(0.7);
        let mut opt = AdamW::new(cfg);
        for _ in 0..3 {
            opt.step(&mut s, &grad(id, 0.0)).unwrap();
        }
        assert_eq!(s.value(id).item(), 0.7);
    }

    #[test]
    fn matches_reference_formula_over_steps() {
        let cfg = AdamWConfig {
            lr: 1e-2,
            ..AdamWConfig::default()
        };
        let (mut s, id) = one(0.5);
        let mut opt = AdamW::new(cfg);
        let (mut w, mut m, mut v) = (0.5, 0.0, 0.0);
        for (t, g) in [0.3, -1.2, 0.05, 2.0].into_iter().enumerate() {
            opt.step(&mut s, &grad(id, g)).unwrap();
            (w, m, v) = adamw_update(w, g, m, v, t as u64 + 1, &cfg);
            assert!((s.value(id).item() - w).abs() < 1e-15);
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let (mut s, id) = one(1.0);
        let err = AdamW::new(AdamWConfig::default()).step(&mut s, &grad(id, f64::NAN)).unwrap_err();
        assert!(matches!(&err, Error::Numeric(m) if m.contains('w')));
        assert_eq!(s.value(id).item(), 1.0);
    }
}
