//! Recorded forward tape with analytic reverse-mode gradients.
//!
//! Every forward method evaluates its kernel eagerly, checks the result is
//! finite, and appends a node remembering its inputs plus whatever the
//! backward kernel needs. [`Graph::backward`] walks the tape in reverse.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ops::activation::{self, Activation};
use crate::ops::channel;
use crate::ops::conv::{self, Conv2dSpec};
use crate::ops::linear;
use crate::ops::norm::{self, NormCache, BN_EPS, LN_EPS};
use crate::param::{ParamId, ParamStore, StatUpdate};
use crate::ssm::{scan_backward, scan_forward, ScanDims};
use crate::tensor::{Scalar, Tensor};
use crate::vision_mamba::scan::{merge_batched, scan_batched, unscan_batched, ScanDirection};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in BN, running-stat updates recorded.
    Train,
    /// Running statistics in BN.
    Infer,
}

/// Running-statistic buffers of one batch-norm layer.
#[derive(Clone, Copy, Debug)]
pub struct RunningStats {
    pub mean: ParamId,
    pub var: ParamId,
}

enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        spec: Conv2dSpec,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        cache: NormCache<T>,
        batch_stats: bool,
    },
    LayerNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        cache: NormCache<T>,
    },
    Activation {
        input: Var,
        act: Activation,
    },
    NegExp {
        input: Var,
    },
    Softmax {
        input: Var,
    },
    GlobalAvgPool {
        input: Var,
    },
    Add {
        lhs: Var,
        rhs: Var,
    },
    ScaleChannels {
        input: Var,
        scale: Var,
    },
    ChannelConv1d {
        input: Var,
        kernel: Var,
    },
    Concat {
        parts: Vec<Var>,
    },
    Narrow {
        input: Var,
        start: usize,
    },
    CrossScan {
        input: Var,
        dir: ScanDirection,
    },
    CrossMerge {
        parts: [Var; 4],
    },
    SelectiveScan {
        x: Var,
        delta: Var,
        a: Var,
        b: Var,
        c: Var,
        d_skip: Var,
        states: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Tensor<T>,
    },
    WeightedSum {
        input: Var,
        weights: Tensor<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<'p, T> {
    store: Option<&'p ParamStore<T>>,
    mode: Mode,
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
    stat_updates: Vec<StatUpdate<T>>,
}

impl<'p, T: Scalar> Graph<'p, T> {
    /// A tape without a parameter store (leaves only).
    pub fn new(mode: Mode) -> Self {
        Self {
            store: None,
            mode,
            nodes: Vec::new(),
            params: HashMap::new(),
            stat_updates: Vec::new(),
        }
    }

    pub fn with_params(store: &'p ParamStore<T>, mode: Mode) -> Self {
        Self {
            store: Some(store),
            ..Self::new(mode)
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn store(&self) -> Result<&'p ParamStore<T>> {
        self.store
            .ok_or_else(|| Error::config("graph has no parameter store attached"))
    }

    /// Leaf for a stored parameter; repeated calls return the same node so
    /// gradients from every use accumulate.
    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        if let Some(&v) = self.params.get(&id) {
            return Ok(v);
        }
        let p = self.store()?.get(id);
        let v = self.leaf(p.value.clone(), p.trainable);
        self.params.insert(id, v);
        Ok(v)
    }

    /// Running-statistic updates collected in training mode.
    pub fn take_stat_updates(&mut self) -> Vec<StatUpdate<T>> {
        std::mem::take(&mut self.stat_updates)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, what: &str) -> Result<Var> {
        value.check_finite(what)?;
        let requires_grad = inputs(&op).iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, spec: Conv2dSpec) -> Result<Var> {
        let out = conv::conv2d(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            spec,
        )?;
        self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                spec,
            },
            "conv2d",
        )
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let out = linear::linear(self.value(input), self.value(weight), bias.map(|b| self.value(b)))?;
        self.push(
            out,
            Op::Linear {
                input,
                weight,
                bias,
            },
            "linear",
        )
    }

    /// Batch norm; the statistics used depend on [`Graph::mode`].
    pub fn batch_norm(&mut self, input: Var, gamma: Var, beta: Var, running: RunningStats) -> Result<Var> {
        let (out, cache, batch_stats) = match self.mode {
            Mode::Train => {
                let (out, cache, stats) =
                    norm::batch_norm_train(self.value(input), self.value(gamma), self.value(beta), BN_EPS)?;
                self.stat_updates.push(StatUpdate {
                    mean: running.mean,
                    var: running.var,
                    batch: stats,
                });
                (out, cache, true)
            }
            Mode::Infer => {
                let store = self.store()?;
                let (out, cache) = norm::batch_norm_infer(
                    self.value(input),
                    self.value(gamma),
                    self.value(beta),
                    store.value(running.mean),
                    store.value(running.var),
                    BN_EPS,
                )?;
                (out, cache, false)
            }
        };
        self.push(
            out,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                cache,
                batch_stats,
            },
            "batch norm",
        )
    }

    /// Layer norm across channels of an NCHW map.
    pub fn layer_norm_channels(&mut self, input: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (out, cache) =
            norm::layer_norm_channels(self.value(input), self.value(gamma), self.value(beta), LN_EPS)?;
        self.push(
            out,
            Op::LayerNorm {
                input,
                gamma,
                beta,
                cache,
            },
            "layer norm",
        )
    }

    pub fn activation(&mut self, input: Var, act: Activation) -> Result<Var> {
        let out = act.forward(self.value(input));
        self.push(out, Op::Activation { input, act }, "activation")
    }

    pub fn silu(&mut self, input: Var) -> Result<Var> {
        self.activation(input, Activation::Silu)
    }

    /// `-exp(x)`, the negative-definite state matrix from its log.
    pub fn neg_exp(&mut self, input: Var) -> Result<Var> {
        let out = self.value(input).map(|v| -v.exp());
        self.push(out, Op::NegExp { input }, "neg_exp")
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, input: Var) -> Result<Var> {
        let out = activation::softmax_lastdim(self.value(input))?;
        self.push(out, Op::Softmax { input }, "softmax")
    }

    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let out = channel::global_avg_pool(self.value(input))?;
        self.push(out, Op::GlobalAvgPool { input }, "global avg pool")
    }

    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        let out = self.value(lhs).zip_map(self.value(rhs), |a, b| a + b)?;
        self.push(out, Op::Add { lhs, rhs }, "add")
    }

    /// `x[n,c,:,:] * scale[n,c]`.
    pub fn scale_channels(&mut self, input: Var, scale: Var) -> Result<Var> {
        let out = channel::scale_channels(self.value(input), self.value(scale))?;
        self.push(out, Op::ScaleChannels { input, scale }, "scale channels")
    }

    pub fn channel_conv1d(&mut self, input: Var, kernel: Var) -> Result<Var> {
        let out = channel::channel_conv1d(self.value(input), self.value(kernel))?;
        self.push(out, Op::ChannelConv1d { input, kernel }, "channel conv1d")
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor<T>> = parts.iter().map(|&v| self.value(v)).collect();
        let out = channel::concat_channels(&refs)?;
        self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
            },
            "concat",
        )
    }

    pub fn narrow_channels(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let out = channel::narrow_channels(self.value(input), start, len)?;
        self.push(out, Op::Narrow { input, start }, "narrow")
    }

    /// `[n, c, h, w] -> [n, h*w, c]` along `dir`.
    pub fn cross_scan(&mut self, input: Var, dir: ScanDirection) -> Result<Var> {
        let out = scan_batched(self.value(input), dir)?;
        self.push(out, Op::CrossScan { input, dir }, "cross scan")
    }

    /// Sum of four `[n, h*w, c]` sequences (in [`ScanDirection::ALL`] order)
    /// mapped back onto an `[n, c, h, w]` grid.
    pub fn cross_merge(&mut self, parts: [Var; 4], h: usize, w: usize) -> Result<Var> {
        let out = merge_batched(parts.map(|v| self.value(v)), h, w)?;
        self.push(out, Op::CrossMerge { parts }, "cross merge")
    }

    /// Batched selective scan. `x`, `delta`: `[n, len, d]`; `a`: `[d, s]`;
    /// `b`, `c`: `[n, len, s]`; `d_skip`: `[d]`.
    pub fn selective_scan(&mut self, x: Var, delta: Var, a: Var, b: Var, c: Var, d_skip: Var) -> Result<Var> {
        let (n, len, d_inner) = self.value(x).dims3()?;
        let (d_a, d_state) = self.value(a).dims2()?;
        let seq_shape = [n, len, d_state];
        if self.value(delta).shape() != [n, len, d_inner]
            || d_a != d_inner
            || self.value(b).shape() != seq_shape
            || self.value(c).shape() != seq_shape
            || self.value(d_skip).shape() != [d_inner]
        {
            return Err(Error::dim(format!(
                "selective scan: x {:?}, delta {:?}, A {:?}, B {:?}, C {:?}, D {:?}",
                self.value(x).shape(),
                self.value(delta).shape(),
                self.value(a).shape(),
                self.value(b).shape(),
                self.value(c).shape(),
                self.value(d_skip).shape()
            )));
        }
        let dims = ScanDims {
            len,
            d_inner,
            d_state,
        };
        let (seq_x, seq_s, state_len) = (len * d_inner, len * d_state, len * d_inner * d_state);
        let (xv, dv, av, bv, cv, sv) = (
            self.value(x).data(),
            self.value(delta).data(),
            self.value(a).data(),
            self.value(b).data(),
            self.value(c).data(),
            self.value(d_skip).data(),
        );
        let mut states = vec![T::zero(); n * state_len];
        let ys: Vec<Vec<T>> = states
            .par_chunks_mut(state_len)
            .enumerate()
            .map(|(i, st)| {
                scan_forward(
                    dims,
                    &xv[i * seq_x..][..seq_x],
                    &dv[i * seq_x..][..seq_x],
                    av,
                    &bv[i * seq_s..][..seq_s],
                    &cv[i * seq_s..][..seq_s],
                    sv,
                    Some(st),
                )
            })
            .collect::<Result<_>>()?;
        let out = Tensor::new(&[n, len, d_inner], ys.concat())?;
        self.push(
            out,
            Op::SelectiveScan {
                x,
                delta,
                a,
                b,
                c,
                d_skip,
                states,
            },
            "selective scan",
        )
    }

    /// Mean cross-entropy of `[n, k]` logits against class indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (n, k) = self.value(logits).dims2()?;
        if targets.len() != n {
            return Err(Error::dim(format!("{} targets for {n} rows", targets.len())));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::Domain(format!("target class {t} out of range for {k} classes")));
        }
        let probs = activation::softmax_lastdim(self.value(logits))?;
        let loss = cross_entropy_value(self.value(logits), targets);
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            "cross entropy",
        )
    }

    /// `sum(x * weights)` with constant weights.
    pub fn weighted_sum(&mut self, input: Var, weights: Tensor<T>) -> Result<Var> {
        let value = self.value(input);
        value.expect_same_shape(&weights, "weighted sum")?;
        let s = value.data().iter().zip(weights.data()).map(|(a, b)| *a * *b).sum();
        self.push(Tensor::scalar(s), Op::WeightedSum { input, weights }, "weighted sum")
    }

    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        self.backward_retaining(loss, &[])
    }

    /// Reverse pass from a scalar `loss`. Gradients are kept for leaves and
    /// for the extra nodes in `retain`.
    pub fn backward_retaining(&self, loss: Var, retain: &[Var]) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::dim(format!(
                "backward needs a scalar, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads)?;
            if matches!(node.op, Op::Leaf) || retain.contains(&Var(i)) {
                grads[i] = Some(g);
            }
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
        if !self.nodes[v.0].requires_grad {
            return Ok(());
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => {
                *slot = Some(g);
                Ok(())
            }
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                spec,
            } => {
                let r = conv::conv2d_backward(self.value(*input), self.value(*weight), bias.is_some(), g, *spec)?;
                self.accumulate(grads, *input, r.input)?;
                self.accumulate(grads, *weight, r.weight)?;
                if let (Some(b), Some(gb)) = (bias, r.bias) {
                    self.accumulate(grads, *b, gb)?;
                }
            }
            Op::Linear { input, weight, bias } => {
                let r = linear::linear_backward(self.value(*input), self.value(*weight), bias.is_some(), g)?;
                self.accumulate(grads, *input, r.input)?;
                self.accumulate(grads, *weight, r.weight)?;
                if let (Some(b), Some(gb)) = (bias, r.bias) {
                    self.accumulate(grads, *b, gb)?;
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                cache,
                batch_stats,
            } => {
                let r = norm::batch_norm_backward(self.value(*gamma), cache, g, *batch_stats)?;
                self.accumulate(grads, *input, r.input)?;
                self.accumulate(grads, *gamma, r.gamma)?;
                self.accumulate(grads, *beta, r.beta)?;
            }
            Op::LayerNorm {
                input,
                gamma,
                beta,
                cache,
            } => {
                let r = norm::layer_norm_channels_backward(self.value(*gamma), cache, g)?;
                self.accumulate(grads, *input, r.input)?;
                self.accumulate(grads, *gamma, r.gamma)?;
                self.accumulate(grads, *beta, r.beta)?;
            }
            Op::Activation { input, act } => {
                let dx = act.backward(self.value(*input), g)?;
                self.accumulate(grads, *input, dx)?;
            }
            Op::NegExp { input } => {
                let dx = node.value.zip_map(g, |y, gy| y * gy)?;
                self.accumulate(grads, *input, dx)?;
            }
            Op::Softmax { input } => {
                let dx = activation::softmax_backward(&node.value, g)?;
                self.accumulate(grads, *input, dx)?;
            }
            Op::GlobalAvgPool { input } => {
                let dx = channel::global_avg_pool_backward(self.value(*input).shape(), g)?;
                self.accumulate(grads, *input, dx)?;
            }
            Op::Add { lhs, rhs } => {
                self.accumulate(grads, *lhs, g.clone())?;
                self.accumulate(grads, *rhs, g.clone())?;
            }
            Op::ScaleChannels { input, scale } => {
                let (dx, ds) = channel::scale_channels_backward(self.value(*input), self.value(*scale), g)?;
                self.accumulate(grads, *input, dx)?;
                self.accumulate(grads, *scale, ds)?;
            }
            Op::ChannelConv1d { input, kernel } => {
                let (dx, dk) = channel::channel_conv1d_backward(self.value(*input), self.value(*kernel), g)?;
                self.accumulate(grads, *input, dx)?;
                self.accumulate(grads, *kernel, dk)?;
            }
            Op::Concat { parts } => {
                let mut start = 0;
                for &p in parts {
                    let len = self.value(p).shape()[1];
                    if self.needs(p) {
                        self.accumulate(grads, p, channel::narrow_channels(g, start, len)?)?;
                    }
                    start += len;
                }
            }
            Op::Narrow { input, start } => {
                let dx = channel::narrow_channels_backward(self.value(*input).shape(), *start, g)?;
                self.accumulate(grads, *input, dx)?;
            }
            Op::CrossScan { input, dir } => {
                let (_, _, h, w) = self.value(*input).dims4()?;
                self.accumulate(grads, *input, unscan_batched(g, *dir, h, w)?)?;
            }
            Op::CrossMerge { parts } => {
                for (&p, dir) in parts.iter().zip(ScanDirection::ALL) {
                    if self.needs(p) {
                        self.accumulate(grads, p, scan_batched(g, dir)?)?;
                    }
                }
            }
            Op::SelectiveScan {
                x,
                delta,
                a,
                b,
                c,
                d_skip,
                states,
            } => self.scan_backward_node(grads, g, [*x, *delta, *a, *b, *c, *d_skip], states)?,
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let (n, k) = probs.dims2()?;
                let scale = g.item() / T::from_usize(n);
                let mut dl = probs.data().to_vec();
                for (row, &t) in targets.iter().enumerate() {
                    dl[row * k + t] -= T::one();
                }
                for v in &mut dl {
                    *v *= scale;
                }
                self.accumulate(grads, *logits, Tensor::new(&[n, k], dl)?)?;
            }
            Op::WeightedSum { input, weights } => {
                self.accumulate(grads, *input, weights.scale(g.item()))?;
            }
        }
        Ok(())
    }

    fn scan_backward_node(
        &self,
        grads: &mut [Option<Tensor<T>>],
        g: &Tensor<T>,
        [x, delta, a, b, c, d_skip]: [Var; 6],
        states: &[T],
    ) -> Result<()> {
        let (n, len, d_inner) = self.value(x).dims3()?;
        let (_, d_state) = self.value(a).dims2()?;
        let dims = ScanDims {
            len,
            d_inner,
            d_state,
        };
        let (seq_x, seq_s, state_len) = (len * d_inner, len * d_state, len * d_inner * d_state);
        let (xv, dv, av, bv, cv, sv) = (
            self.value(x).data(),
            self.value(delta).data(),
            self.value(a).data(),
            self.value(b).data(),
            self.value(c).data(),
            self.value(d_skip).data(),
        );
        let per_sample: Vec<_> = (0..n)
            .into_par_iter()
            .map(|i| {
                scan_backward(
                    dims,
                    &xv[i * seq_x..][..seq_x],
                    &dv[i * seq_x..][..seq_x],
                    av,
                    &bv[i * seq_s..][..seq_s],
                    &cv[i * seq_s..][..seq_s],
                    sv,
                    &states[i * state_len..][..state_len],
                    &g.data()[i * seq_x..][..seq_x],
                )
            })
            .collect();
        let mut dx = Vec::with_capacity(n * seq_x);
        let mut ddelta = Vec::with_capacity(n * seq_x);
        let mut db = Vec::with_capacity(n * seq_s);
        let mut dc = Vec::with_capacity(n * seq_s);
        let mut da = vec![T::zero(); d_inner * d_state];
        let mut dd = vec![T::zero(); d_inner];
        for s in per_sample {
            dx.extend(s.x);
            ddelta.extend(s.delta);
            db.extend(s.b);
            dc.extend(s.c);
            da.iter_mut().zip(&s.a).for_each(|(acc, v)| *acc += *v);
            dd.iter_mut().zip(&s.d_skip).for_each(|(acc, v)| *acc += *v);
        }
        self.accumulate(grads, x, Tensor::new(&[n, len, d_inner], dx)?)?;
        self.accumulate(grads, delta, Tensor::new(&[n, len, d_inner], ddelta)?)?;
        self.accumulate(grads, a, Tensor::new(&[d_inner, d_state], da)?)?;
        self.accumulate(grads, b, Tensor::new(&[n, len, d_state], db)?)?;
        self.accumulate(grads, c, Tensor::new(&[n, len, d_state], dc)?)?;
        self.accumulate(grads, d_skip, Tensor::new(&[d_inner], dd)?)?;
        Ok(())
    }
}

fn inputs<T>(op: &Op<T>) -> Vec<Var> {
    match op {
        Op::Leaf => vec![],
        Op::Conv2d { input, weight, bias, .. } | Op::Linear { input, weight, bias } => {
            let mut v = vec![*input, *weight];
            v.extend(bias);
            v
        }
        Op::BatchNorm { input, gamma, beta, .. } | Op::LayerNorm { input, gamma, beta, .. } => {
            vec![*input, *gamma, *beta]
        }
        Op::Activation { input, .. }
        | Op::NegExp { input }
        | Op::Softmax { input }
        | Op::GlobalAvgPool { input }
        | Op::Narrow { input, .. }
        | Op::CrossScan { input, .. }
        | Op::WeightedSum { input, .. } => vec![*input],
        Op::CrossEntropy { logits, .. } => vec![*logits],
        Op::Add { lhs, rhs } => vec![*lhs, *rhs],
        Op::ScaleChannels { input, scale } => vec![*input, *scale],
        Op::ChannelConv1d { input, kernel } => vec![*input, *kernel],
        Op::Concat { parts } => parts.clone(),
        Op::CrossMerge { parts } => parts.to_vec(),
        Op::SelectiveScan {
            x,
            delta,
            a,
            b,
            c,
            d_skip,
            ..
        } => vec![*x, *delta, *a, *b, *c, *d_skip],
    }
}

/// Mean `-log softmax(logits)[target]`, max-subtracted per row.
pub fn cross_entropy_value<T: Scalar>(logits: &Tensor<T>, targets: &[usize]) -> T {
    let k = *logits.shape().last().expect("rank >= 1");
    let n = logits.len() / k;
    let total: T = logits
        .data()
        .chunks(k)
        .zip(targets)
        .map(|(row, &t)| {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            lse - row[t]
        })
        .sum();
    total / T::from_usize(n)
}

/// Result of a reverse pass.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: HashMap<ParamId, Var>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf (or retained node). `None` if it received none.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id).and_then(|&v| self.wrt(v))
    }

    /// Parameter gradients sorted by parameter id.
    pub fn into_param_grads(mut self) -> Vec<(ParamId, Tensor<T>)> {
        let mut out: Vec<(ParamId, Tensor<T>)> = self
            .params
            .iter()
            .filter_map(|(&id, &v)| self.grads[v.0].take().map(|g| (id, g)))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_examples() {
        let uniform = Tensor::<f64>::zeros(&[1, 4]);
        assert!((cross_entropy_value(&uniform, &[2]) - 4f64.ln()).abs() < 1e-12);
        let l = Tensor::<f64>::from_f64(&[1, 2], &[2.0, 0.0]).unwrap();
        let expected = (1.0 + (-2.0f64).exp()).ln();
        assert!((cross_entropy_value(&l, &[0]) - expected).abs() < 1e-12);
        assert!((expected - 0.1269).abs() < 1e-4);
        let confident = Tensor::<f64>::from_f64(&[1, 2], &[800.0, 0.0]).unwrap();
        assert!(cross_entropy_value(&confident, &[0]).abs() < 1e-300);
    }

    #[test]
    fn shared_leaf_accumulates() {
        let mut g = Graph::<f64>::new(Mode::Infer);
        let x = g.leaf(Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap(), true);
        let y = g.add(x, x).unwrap();
        let s = g.weighted_sum(y, Tensor::from_f64(&[2], &[1.0, 3.0]).unwrap()).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[2.0, 6.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::<f64>::new(Mode::Infer);
        let x = g.constant(Tensor::full(&[3], 1.0));
        let w = g.leaf(Tensor::full(&[3], 2.0), true);
        let y = g.add(x, w).unwrap();
        let s = g.weighted_sum(y, Tensor::full(&[3], 1.0)).unwrap();
        let grads = g.backward(s).unwrap();
        assert!(grads.wrt(x).is_none());
        assert_eq!(grads.wrt(w).unwrap().data(), &[1.0; 3]);
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut g = Graph::<f64>::new(Mode::Infer);
        let x = g.leaf(Tensor::full(&[1], 800.0), true);
        assert!(matches!(g.neg_exp(x), Err(Error::Numeric(_))));
    }

    #[test]
    fn backward_needs_scalar() {
        let mut g = Graph::<f64>::new(Mode::Infer);
        let x = g.leaf(Tensor::full(&[2], 1.0), true);
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn bad_target_is_domain_error() {
        let mut g = Graph::<f64>::new(Mode::Infer);
        let x = g.leaf(Tensor::zeros(&[1, 2]), true);
        assert!(matches!(g.cross_entropy(x, &[2]), Err(Error::Domain(_))));
    }
}
