//! Ready-made gradient checks: every graph op on small random inputs, and
//! the loss of a whole (reduced) network.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_inputs, check_params, GradCheckReport};
use crate::error::Result;
use crate::graph::{Graph, Mode, RunningStats, Var};
use crate::model::{ModelConfig, MpoxMamba};
use crate::ops::{Activation, Conv2dSpec};
use crate::param::ParamStore;
use crate::tensor::Tensor;
use crate::vision_mamba::ScanDirection;

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_f64(shape, &v).expect("sized")
}

fn signed(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    uniform(shape, -1.0, 1.0, rng)
}

/// `sum(y * w)` with fixed pseudo-random `w` so every output element matters.
fn project(g: &mut Graph<'_, f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = signed(g.value(y).shape(), &mut rng);
    g.weighted_sum(y, w)
}

/// One named report per op.
pub fn op_suite(seed: u64, tolerance: f64) -> Result<Vec<(String, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut push = |name: &str, r: GradCheckReport| out.push((name.to_string(), r));

    let x = signed(&[1, 2, 5, 5], &mut rng);
    let w = signed(&[3, 2, 3, 3], &mut rng);
    let b = signed(&[3], &mut rng);
    push(
        "conv2d",
        check_inputs(&[("x", x.clone()), ("w", w), ("b", b)], tolerance, |g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), Conv2dSpec::new(2, 1, 1))?;
            project(g, y, 1)
        })?,
    );
    let dw = signed(&[2, 1, 3, 3], &mut rng);
    push(
        "depthwise_conv2d",
        check_inputs(&[("x", x), ("w", dw)], tolerance, |g, v| {
            let y = g.conv2d(v[0], v[1], None, Conv2dSpec::new(1, 1, 2))?;
            project(g, y, 2)
        })?,
    );

    let x = signed(&[2, 3, 4], &mut rng);
    let w = signed(&[2, 4], &mut rng);
    let b = signed(&[2], &mut rng);
    push(
        "linear",
        check_inputs(&[("x", x), ("w", w), ("b", b)], tolerance, |g, v| {
            let y = g.linear(v[0], v[1], Some(v[2]))?;
            project(g, y, 3)
        })?,
    );

    let mut store = ParamStore::<f64>::new();
    let running = RunningStats {
        mean: store.add("running_mean", signed(&[3], &mut rng), false)?,
        var: store.add("running_var", uniform(&[3], 0.5, 2.0, &mut rng), false)?,
    };
    let px = store.add("x", signed(&[2, 3, 2, 3], &mut rng), true)?;
    let pg = store.add("gamma", uniform(&[3], 0.5, 1.5, &mut rng), true)?;
    let pb = store.add("beta", signed(&[3], &mut rng), true)?;
    let coords: Vec<_> = (0..36)
        .map(|i| (px, i))
        .chain((0..3).flat_map(|i| [(pg, i), (pb, i)]))
        .collect();
    for (mode, name) in [(Mode::Train, "batch_norm_train"), (Mode::Infer, "batch_norm_infer")] {
        let r = check_params(&mut store, mode, &coords, tolerance, |g| {
            let (x, ga, be) = (g.param(px)?, g.param(pg)?, g.param(pb)?);
            let y = g.batch_norm(x, ga, be, running)?;
            project(g, y, 4)
        })?;
        push(name, r);
    }

    let x = signed(&[2, 4, 2, 2], &mut rng);
    let gamma = uniform(&[4], 0.5, 1.5, &mut rng);
    let beta = signed(&[4], &mut rng);
    push(
        "layer_norm",
        check_inputs(&[("x", x), ("gamma", gamma), ("beta", beta)], tolerance, |g, v| {
            let y = g.layer_norm_channels(v[0], v[1], v[2])?;
            project(g, y, 5)
        })?,
    );

    // magnitudes bounded away from zero keep relu off its kink
    let mag = uniform(&[3, 4], 0.05, 1.0, &mut rng);
    let sign = signed(&[3, 4], &mut rng);
    let x = mag.zip_map(&sign, |m, s| if s < 0.0 { -m } else { m })?;
    for (act, name) in [
        (Activation::Silu, "silu"),
        (Activation::Sigmoid, "sigmoid"),
        (Activation::Softplus, "softplus"),
        (Activation::Relu, "relu"),
    ] {
        push(
            name,
            check_inputs(&[("x", x.clone())], tolerance, |g, v| {
                let y = g.activation(v[0], act)?;
                project(g, y, 6)
            })?,
        );
    }
    push(
        "softmax",
        check_inputs(&[("x", x.clone())], tolerance, |g, v| {
            let y = g.softmax(v[0])?;
            project(g, y, 7)
        })?,
    );
    push(
        "neg_exp",
        check_inputs(&[("x", x)], tolerance, |g, v| {
            let y = g.neg_exp(v[0])?;
            project(g, y, 8)
        })?,
    );

    let x = signed(&[2, 5, 2, 2], &mut rng);
    push(
        "global_avg_pool",
        check_inputs(&[("x", x.clone())], tolerance, |g, v| {
            let y = g.global_avg_pool(v[0])?;
            project(g, y, 9)
        })?,
    );
    let s = signed(&[2, 5], &mut rng);
    push(
        "scale_channels",
        check_inputs(&[("x", x.clone()), ("s", s)], tolerance, |g, v| {
            let y = g.scale_channels(v[0], v[1])?;
            project(g, y, 10)
        })?,
    );
    let d = signed(&[2, 5], &mut rng);
    let k = signed(&[3], &mut rng);
    push(
        "channel_conv1d",
        check_inputs(&[("d", d), ("k", k)], tolerance, |g, v| {
            let y = g.channel_conv1d(v[0], v[1])?;
            project(g, y, 11)
        })?,
    );
    let other = signed(&[2, 2, 2, 2], &mut rng);
    push(
        "concat_narrow_add",
        check_inputs(&[("a", x), ("b", other)], tolerance, |g, v| {
            let c = g.concat_channels(&[v[0], v[1]])?;
            let n = g.narrow_channels(c, 3, 3)?;
            let s = g.add(n, n)?;
            project(g, s, 12)
        })?,
    );

    let x = signed(&[1, 2, 3, 2], &mut rng);
    push(
        "cross_scan_merge",
        check_inputs(&[("x", x)], tolerance, |g, v| {
            let mut seqs = Vec::with_capacity(4);
            for dir in ScanDirection::ALL {
                let s = g.cross_scan(v[0], dir)?;
                seqs.push(g.softmax(s)?);
            }
            let y = g.cross_merge([seqs[0], seqs[1], seqs[2], seqs[3]], 3, 2)?;
            project(g, y, 13)
        })?,
    );

    for (name, lo, hi) in [("selective_scan", 0.05, 0.8), ("selective_scan_small_delta", 1e-4, 5e-4)] {
        let (n, len, d, s) = (2, 5, 3, 2);
        let inputs = [
            ("x", signed(&[n, len, d], &mut rng)),
            ("delta", uniform(&[n, len, d], lo, hi, &mut rng)),
            ("a_log", signed(&[d, s], &mut rng)),
            ("b", signed(&[n, len, s], &mut rng)),
            ("c", signed(&[n, len, s], &mut rng)),
            ("d_skip", signed(&[d], &mut rng)),
        ];
        push(
            name,
            check_inputs(&inputs, tolerance, |g, v| {
                let a = g.neg_exp(v[2])?;
                let y = g.selective_scan(v[0], v[1], a, v[3], v[4], v[5])?;
                project(g, y, 14)
            })?,
        );
    }

    let logits = signed(&[4, 3], &mut rng).scale(3.0);
    push(
        "cross_entropy",
        check_inputs(&[("logits", logits)], tolerance, |g, v| g.cross_entropy(v[0], &[0, 2, 1, 2]))?,
    );
    Ok(out)
}

/// Cross-entropy of a train-mode forward pass on two random images, checked
/// at `samples` coordinates drawn from distinct parameter tensors.
pub fn model_gradcheck(config: ModelConfig, samples: usize, seed: u64, tolerance: f64) -> Result<GradCheckReport> {
    let mut model = MpoxMamba::<f64>::build(config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let s = model.config.input_size;
    let x = uniform(&[2, model.config.in_channels, s, s], 0.0, 1.0, &mut rng);
    let targets: Vec<usize> = (0..2).map(|i| i % model.config.num_classes).collect();
    let mut ids = model.store.trainable_ids();
    ids.shuffle(&mut rng);
    let coords: Vec<_> = ids
        .iter()
        .cycle()
        .take(samples)
        .map(|&id| (id, rng.gen_range(0..model.store.value(id).len())))
        .collect();
    let net = model.clone();
    check_params(&mut model.store, Mode::Train, &coords, tolerance, |g| {
        let xv = g.constant(x.clone());
        let out = net.forward(g, xv)?;
        g.cross_entropy(out.logits, &targets)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_passes() {
        for (name, r) in op_suite(3, 1e-4).unwrap() {
            assert!(r.passed(), "{name}: {:e} at {:?}", r.max_rel_error(), r.worst());
        }
    }
}
