//! Named parameter storage, initializers, and running-statistic updates.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::ops::norm::{BatchStats, BN_MOMENTUM};
use crate::tensor::{Scalar, Tensor};

/// Handle into a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// Buffers (BN running statistics) are saved but never optimized.
    pub trainable: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::config(format!("duplicate parameter name {name:?}")));
        }
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        self.params.push(Param {
            name,
            value,
            trainable,
        });
        Ok(ParamId(id))
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<T>> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect()
    }

    /// Element count over trainable parameters.
    pub fn count_trainable(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }

    /// Replaces a value, keeping the registered shape.
    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let slot = &mut self.params[id.0];
        if slot.value.shape() != value.shape() {
            return Err(Error::dim(format!(
                "{}: shape {:?}, got {:?}",
                slot.name,
                slot.value.shape(),
                value.shape()
            )));
        }
        slot.value = value;
        Ok(())
    }

    /// Folds batch statistics into running buffers with momentum.
    pub fn apply_stat_updates(&mut self, updates: &[StatUpdate<T>]) {
        let m = T::from_f64(BN_MOMENTUM);
        let keep = T::one() - m;
        for u in updates {
            for (r, b) in self.params[u.mean.0].value.data_mut().iter_mut().zip(&u.batch.mean) {
                *r = keep * *r + m * *b;
            }
            for (r, b) in self.params[u.var.0]
                .value
                .data_mut()
                .iter_mut()
                .zip(&u.batch.var_unbiased)
            {
                *r = keep * *r + m * *b;
            }
        }
    }
}

/// Pending running-statistic update recorded by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct StatUpdate<T> {
    pub mean: ParamId,
    pub var: ParamId,
    pub batch: BatchStats<T>,
}

/// Uniform samples in `[-bound, bound)`.
pub fn uniform<T: Scalar>(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64(rng.gen_range(-bound..bound))).collect();
    Tensor::new(shape, data).expect("shape product matches")
}

/// Kaiming-uniform for SiLU/ReLU-style nets: bound `sqrt(6 / fan_in)`.
pub fn kaiming_uniform<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    uniform(shape, (6.0 / fan_in as f64).sqrt(), rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::<f32>::new();
        s.add("a", Tensor::zeros(&[2]), true).unwrap();
        assert!(matches!(s.add("a", Tensor::zeros(&[2]), true), Err(Error::Config(_))));
    }

    #[test]
    fn counts_only_trainable() {
        let mut s = ParamStore::<f32>::new();
        s.add("w", Tensor::zeros(&[2, 10]), true).unwrap();
        s.add("b", Tensor::zeros(&[2]), true).unwrap();
        s.add("running", Tensor::zeros(&[7]), false).unwrap();
        assert_eq!(s.count_trainable(), 22);
    }

    #[test]
    fn momentum_update() {
        let mut s = ParamStore::<f64>::new();
        let mean = s.add("m", Tensor::zeros(&[1]), false).unwrap();
        let var = s.add("v", Tensor::full(&[1], 1.0), false).unwrap();
        s.apply_stat_updates(&[StatUpdate {
            mean,
            var,
            batch: BatchStats {
                mean: vec![2.0],
                var_unbiased: vec![3.0],
            },
        }]);
        assert!((s.value(mean).item() - 0.2).abs() < 1e-15);
        assert!((s.value(var).item() - 1.2).abs() < 1e-15);
    }

    #[test]
    fn kaiming_bound_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t: Tensor<f64> = kaiming_uniform(&[8, 4, 3, 3], 36, &mut rng);
        let bound = (6.0f64 / 36.0).sqrt();
        assert!(t.data().iter().all(|v| v.abs() <= bound));
    }
}
