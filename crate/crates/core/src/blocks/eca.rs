use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::ops::Activation;
use crate::param::{uniform, ParamId, ParamStore};
use crate::tensor::Scalar;

use super::Cost;

/// Adaptive 1-D kernel size for `channels`: `t = floor((log2 C + 1) / 2)`,
/// bumped to odd, at least 3, and never wider than the largest odd `<= C`.
pub fn eca_kernel_size(channels: usize) -> usize {
    let t = (((channels.max(1) as f64).log2() + 1.0) / 2.0).floor() as usize;
    let k = if t % 2 == 1 { t } else { t + 1 };
    let cap = if channels % 2 == 1 { channels } else { channels.saturating_sub(1) }.max(1);
    k.max(3).min(cap)
}

/// Efficient channel attention: GAP, 1-D conv across channels, sigmoid, rescale.
#[derive(Clone, Debug)]
pub struct Eca {
    pub weight: ParamId,
    pub kernel: usize,
    pub channels: usize,
}

impl Eca {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, rng: &mut impl Rng, name: &str, channels: usize) -> Result<Self> {
        Self::with_kernel(store, rng, name, channels, eca_kernel_size(channels))
    }

    pub fn with_kernel<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        channels: usize,
        kernel: usize,
    ) -> Result<Self> {
        if kernel.is_multiple_of(2) || kernel > channels {
            return Err(Error::config(format!(
                "ECA kernel must be odd and <= {channels}, got {kernel}"
            )));
        }
        let weight = store.add(
            format!("{name}.weight"),
            uniform(&[kernel], 1.0 / (kernel as f64).sqrt(), rng),
            true,
        )?;
        Ok(Self {
            weight,
            kernel,
            channels,
        })
    }

    pub fn cost(&self) -> Cost {
        Cost::new(self.kernel, self.kernel * self.channels)
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let pooled = g.global_avg_pool(x)?;
        let w = g.param(self.weight)?;
        let mixed = g.channel_conv1d(pooled, w)?;
        let scale = g.activation(mixed, Activation::Sigmoid)?;
        g.scale_channels(x, scale)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Mode;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn adaptive_kernel_sizes() {
        assert_eq!(eca_kernel_size(64), 3);
        assert_eq!(eca_kernel_size(128), 5);
        assert_eq!(eca_kernel_size(256), 5);
        assert_eq!(eca_kernel_size(16), 3);
        assert_eq!(eca_kernel_size(2), 1);
    }

    #[test]
    fn even_kernel_rejected() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            Eca::with_kernel(&mut store, &mut rng, "eca", 8, 4),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn zero_weights_halve_the_input() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let eca = Eca::new(&mut store, &mut rng, "eca", 8).unwrap();
        store.set(eca.weight, Tensor::zeros(&[eca.kernel])).unwrap();
        let mut g = Graph::with_params(&store, Mode::Infer);
        let data: Vec<f64> = (0..2 * 8 * 9).map(|i| i as f64 - 40.0).collect();
        let x = g.constant(Tensor::from_f64(&[2, 8, 3, 3], &data).unwrap());
        let y = eca.forward(&mut g, x).unwrap();
        assert!(g.value(y).max_abs_diff(&g.value(x).scale(0.5)) < 1e-15);
    }

    #[test]
    fn identical_channels_get_uniform_interior_scales() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let eca = Eca::new(&mut store, &mut rng, "eca", 6).unwrap();
        let mut g = Graph::with_params(&store, Mode::Infer);
        let x = g.constant(Tensor::full(&[1, 6, 2, 2], 0.7));
        let y = eca.forward(&mut g, x).unwrap();
        let out = g.value(y);
        // zero padding only touches the edge channels
        let k = eca.kernel / 2;
        let interior: Vec<f64> = (k..6 - k).map(|c| out.at(&[0, c, 0, 0])).collect();
        assert!(interior.windows(2).all(|p| p[0] == p[1]));
        let w: f64 = store.value(eca.weight).sum();
        let expected = 0.7 * crate::ops::activation::sigmoid(w * 0.7);
        assert!((interior[0] - expected).abs() < 1e-15);
    }
}
