//! Parameter state, whole-network forward and backward passes, prediction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layers::{self as ops, RnnTrace};
use super::loss::softmax;
use super::spec::{architecture_spec, ArchOptions, Architecture, LayerSpec, NetworkSpec};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::optim::OptimizerSlots;
use crate::tensor::Tensor;

/// Forward-pass mode. Training draws dropout masks from `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train { seed: u64 },
    Infer,
}

/// Trainable state of a network: parameters in layer order, optimizer
/// moments, and the count of training batches consumed so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub params: Vec<Tensor>,
    pub slots: Option<OptimizerSlots>,
    pub batches_trained: u64,
}

impl NetworkState {
    /// Kaiming-uniform weights, zero biases.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        for layer in &spec.layers {
            init_layer(layer, &mut rng, &mut params);
        }
        NetworkState {
            params,
            slots: None,
            batches_trained: 0,
        }
    }

    /// Checks that every parameter tensor has the shape `spec` lists.
    pub fn check(&self, spec: &NetworkSpec) -> Result<()> {
        let shapes = spec.param_shapes();
        if shapes.len() != self.params.len() {
            return Err(Error::shape(format!(
                "spec needs {} parameter tensors, state has {}",
                shapes.len(),
                self.params.len()
            )));
        }
        for (i, (s, p)) in shapes.iter().zip(&self.params).enumerate() {
            if s.as_slice() != p.shape() {
                return Err(Error::shape(format!(
                    "parameter {i}: expected {s:?}, found {:?}",
                    p.shape()
                )));
            }
        }
        Ok(())
    }
}

fn kaiming(shape: &[usize], fan_in: usize, gain: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = gain * (3.0 / fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::from_vec(shape, data).expect("init shape")
}

fn init_layer(layer: &LayerSpec, rng: &mut ChaCha8Rng, out: &mut Vec<Tensor>) {
    let relu_gain = std::f64::consts::SQRT_2;
    match layer {
        LayerSpec::Conv1d {
            in_channels,
            out_channels,
            kernel_size,
            ..
        } => {
            out.push(kaiming(
                &[*out_channels, *in_channels, *kernel_size],
                in_channels * kernel_size,
                relu_gain,
                rng,
            ));
            out.push(Tensor::zeros(&[*out_channels]));
        }
        LayerSpec::Dense { in_width, out_width } => {
            out.push(kaiming(&[*in_width, *out_width], *in_width, relu_gain, rng));
            out.push(Tensor::zeros(&[*out_width]));
        }
        LayerSpec::Rnn {
            input_size,
            hidden_size,
            layers,
        } => {
            for l in 0..*layers {
                let input = if l == 0 { *input_size } else { *hidden_size };
                out.push(kaiming(&[input, *hidden_size], input, 1.0, rng));
                out.push(kaiming(&[*hidden_size, *hidden_size], *hidden_size, 1.0, rng));
                out.push(Tensor::zeros(&[*hidden_size]));
            }
        }
        LayerSpec::ConcatBranches { branches } => {
            for branch in branches {
                for l in branch {
                    init_layer(l, rng, out);
                }
            }
        }
        LayerSpec::Maxpool1d { .. } | LayerSpec::Relu | LayerSpec::Dropout { .. } | LayerSpec::Flatten => {}
    }
}

/// Builds a built-in architecture and its freshly initialised state.
pub fn build_network(
    architecture: Architecture,
    input_features: usize,
    class_count: usize,
    options: &ArchOptions,
    seed: u64,
) -> Result<(NetworkSpec, NetworkState)> {
    let spec = architecture_spec(architecture, input_features, class_count, options)?;
    let state = NetworkState::init(&spec, seed);
    Ok((spec, state))
}

/// Intermediates kept by [`forward`] for [`backward`].
#[derive(Debug)]
pub struct Cache {
    layers: Vec<LayerCache>,
    input_shape: Vec<usize>,
}

#[derive(Debug)]
enum LayerCache {
    Conv {
        input: Tensor,
    },
    Pool {
        input_shape: Vec<usize>,
        argmax: Vec<usize>,
    },
    Dense {
        input: Tensor,
    },
    Relu {
        output: Tensor,
    },
    Dropout {
        mask: Option<Vec<f64>>,
    },
    Flatten {
        input_shape: Vec<usize>,
    },
    Concat {
        branches: Vec<(Vec<LayerCache>, Vec<usize>)>,
        len: usize,
    },
    Rnn {
        input: Tensor,
        trace: RnnTrace,
    },
}

/// Accepts `[b, p]` or `[b, 1, p]` input and returns logits `[b, classes]`.
pub fn forward(spec: &NetworkSpec, state: &NetworkState, batch: &Tensor, mode: Mode) -> Result<(Tensor, Cache)> {
    let x = normalize_input(spec, batch)?;
    let input_shape = x.shape().to_vec();
    let mut rng = match mode {
        Mode::Train { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        Mode::Infer => None,
    };
    let (logits, layers) = forward_layers(&spec.layers, &state.params, x, rng.as_mut())?;
    Ok((logits, Cache { layers, input_shape }))
}

fn normalize_input(spec: &NetworkSpec, batch: &Tensor) -> Result<Tensor> {
    let p = spec.input_features;
    match batch.shape() {
        [b, w] if *w == p => Tensor::from_vec(&[*b, 1, p], batch.data().to_vec()),
        [_, 1, w] if *w == p => Ok(batch.clone()),
        other => Err(Error::shape(format!(
            "batch shape {other:?} does not match {p} input features"
        ))),
    }
}

fn forward_layers(
    layers: &[LayerSpec],
    params: &[Tensor],
    input: Tensor,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<(Tensor, Vec<LayerCache>)> {
    let mut x = input;
    let mut caches = Vec::with_capacity(layers.len());
    let mut offset = 0;
    for layer in layers {
        let n = layer.param_tensor_count();
        let p = &params[offset..offset + n];
        offset += n;
        let (y, cache) = match layer {
            LayerSpec::Conv1d { stride, .. } => {
                let y = ops::conv1d_forward(&x, &p[0], &p[1], *stride);
                (y, LayerCache::Conv { input: x })
            }
            LayerSpec::Maxpool1d { window, stride } => {
                let (y, argmax) = ops::maxpool_forward(&x, *window, *stride);
                (
                    y,
                    LayerCache::Pool {
                        input_shape: x.shape().to_vec(),
                        argmax,
                    },
                )
            }
            LayerSpec::Dense { .. } => {
                let y = ops::dense_forward(&x, &p[0], &p[1]);
                (y, LayerCache::Dense { input: x })
            }
            LayerSpec::Relu => {
                let y = ops::relu_forward(x);
                (y.clone(), LayerCache::Relu { output: y })
            }
            LayerSpec::Dropout { rate } => match rng.as_deref_mut() {
                Some(r) if *rate > 0.0 => {
                    let mask = ops::dropout_mask(x.len(), *rate, r);
                    (ops::apply_mask(x, &mask), LayerCache::Dropout { mask: Some(mask) })
                }
                _ => (x, LayerCache::Dropout { mask: None }),
            },
            LayerSpec::Flatten => {
                let input_shape = x.shape().to_vec();
                let b = input_shape[0];
                let w = x.len() / b.max(1);
                (x.reshaped(&[b, w])?, LayerCache::Flatten { input_shape })
            }
            LayerSpec::ConcatBranches { branches } => {
                let mut outputs = Vec::with_capacity(branches.len());
                let mut branch_caches = Vec::with_capacity(branches.len());
                let mut boff = 0;
                for branch in branches {
                    let bn: usize = branch.iter().map(LayerSpec::param_tensor_count).sum();
                    let (y, c) = forward_layers(branch, &p[boff..boff + bn], x.clone(), rng.as_deref_mut())?;
                    boff += bn;
                    branch_caches.push((c, y.shape().to_vec()));
                    outputs.push(y);
                }
                let len = outputs.iter().map(|o| o.shape()[2]).min().unwrap_or(0);
                let y = concat_channels(&outputs, len);
                (
                    y,
                    LayerCache::Concat {
                        branches: branch_caches,
                        len,
                    },
                )
            }
            LayerSpec::Rnn {
                hidden_size, layers, ..
            } => {
                let (y, trace) = ops::rnn_forward(&x, p, *hidden_size, *layers);
                (y, LayerCache::Rnn { input: x, trace })
            }
        };
        caches.push(cache);
        x = y;
    }
    Ok((x, caches))
}

/// Joins `[b, c_i, len_i]` outputs on channels, keeping the first `len` steps.
fn concat_channels(outputs: &[Tensor], len: usize) -> Tensor {
    let batch = outputs[0].shape()[0];
    let channels: usize = outputs.iter().map(|o| o.shape()[1]).sum();
    let mut data = Vec::with_capacity(batch * channels * len);
    for b in 0..batch {
        for o in outputs {
            let (c, l) = (o.shape()[1], o.shape()[2]);
            for ch in 0..c {
                let start = (b * c + ch) * l;
                data.extend_from_slice(&o.data()[start..start + len]);
            }
        }
    }
    Tensor::from_vec(&[batch, channels, len], data).expect("concat shape")
}

/// Gradients for every parameter tensor, in parameter order.
pub fn backward(spec: &NetworkSpec, state: &NetworkState, cache: &Cache, dlogits: &Tensor) -> Result<Vec<Tensor>> {
    if cache.layers.len() != spec.layers.len() {
        return Err(Error::shape(format!(
            "cache holds {} layers, spec has {}",
            cache.layers.len(),
            spec.layers.len()
        )));
    }
    let (dx, grads) = backward_layers(&spec.layers, &state.params, &cache.layers, dlogits.clone())?;
    debug_assert_eq!(dx.shape(), cache.input_shape.as_slice());
    Ok(grads)
}

fn backward_layers(
    layers: &[LayerSpec],
    params: &[Tensor],
    caches: &[LayerCache],
    dout: Tensor,
) -> Result<(Tensor, Vec<Tensor>)> {
    let counts: Vec<usize> = layers.iter().map(LayerSpec::param_tensor_count).collect();
    let mut offsets = Vec::with_capacity(layers.len());
    let mut acc = 0;
    for &c in &counts {
        offsets.push(acc);
        acc += c;
    }
    let mut grads: Vec<Option<Tensor>> = vec![None; acc];
    let mut d = dout;
    for (i, (layer, cache)) in layers.iter().zip(caches).enumerate().rev() {
        let p = &params[offsets[i]..offsets[i] + counts[i]];
        let g = &mut grads[offsets[i]..offsets[i] + counts[i]];
        d = match (layer, cache) {
            (LayerSpec::Conv1d { stride, .. }, LayerCache::Conv { input }) => {
                let (dx, dw, db) = ops::conv1d_backward(input, &p[0], *stride, &d);
                g[0] = Some(dw);
                g[1] = Some(db);
                dx
            }
            (LayerSpec::Maxpool1d { .. }, LayerCache::Pool { input_shape, argmax }) => {
                ops::maxpool_backward(input_shape, argmax, &d)
            }
            (LayerSpec::Dense { .. }, LayerCache::Dense { input }) => {
                let (dx, dw, db) = ops::dense_backward(input, &p[0], &d);
                g[0] = Some(dw);
                g[1] = Some(db);
                dx
            }
            (LayerSpec::Relu, LayerCache::Relu { output }) => ops::relu_backward(output, d),
            (LayerSpec::Dropout { .. }, LayerCache::Dropout { mask }) => match mask {
                Some(m) => ops::apply_mask(d, m),
                None => d,
            },
            (LayerSpec::Flatten, LayerCache::Flatten { input_shape }) => d.reshaped(input_shape)?,
            (LayerSpec::ConcatBranches { branches }, LayerCache::Concat { branches: bc, len }) => {
                let batch = d.shape()[0];
                let total_c = d.shape()[1];
                let mut dx: Option<Tensor> = None;
                let mut c_off = 0;
                let mut boff = 0;
                for (branch, (caches, out_shape)) in branches.iter().zip(bc) {
                    let (c, l) = (out_shape[1], out_shape[2]);
                    let mut dy = Tensor::zeros(out_shape);
                    for b in 0..batch {
                        for ch in 0..c {
                            let src = (b * total_c + c_off + ch) * len;
                            let dst = (b * c + ch) * l;
                            dy.data_mut()[dst..dst + len].copy_from_slice(&d.data()[src..src + len]);
                        }
                    }
                    c_off += c;
                    let bn: usize = branch.iter().map(LayerSpec::param_tensor_count).sum();
                    let (bdx, bgrads) = backward_layers(branch, &p[boff..boff + bn], caches, dy)?;
                    for (slot, gr) in g[boff..boff + bn].iter_mut().zip(bgrads) {
                        *slot = Some(gr);
                    }
                    boff += bn;
                    dx = Some(match dx {
                        None => bdx,
                        Some(mut acc) => {
                            for (a, v) in acc.data_mut().iter_mut().zip(bdx.data()) {
                                *a += v;
                            }
                            acc
                        }
                    });
                }
                dx.ok_or_else(|| Error::shape("concat_branches has no branches"))?
            }
            (LayerSpec::Rnn { hidden_size, .. }, LayerCache::Rnn { input, trace }) => {
                let (dx, rg) = ops::rnn_backward(input, p, trace, *hidden_size, &d);
                for (slot, gr) in g.iter_mut().zip(rg) {
                    *slot = Some(gr);
                }
                dx
            }
            (layer, _) => {
                return Err(Error::shape(format!(
                    "cache does not match {} layer",
                    layer.kind_name()
                )));
            }
        };
    }
    let grads = grads
        .into_iter()
        .zip(params)
        .map(|(g, p)| g.unwrap_or_else(|| p.zeros_like()))
        .collect();
    Ok((d, grads))
}

/// Input tensor `[rows.len(), 1, p]` built from dataset rows.
pub fn batch_from_rows(data: &Dataset, rows: &[usize]) -> Tensor {
    let p = data.n_features();
    let mut flat = Vec::with_capacity(rows.len() * p);
    for &r in rows {
        flat.extend_from_slice(data.row(r));
    }
    Tensor::from_vec(&[rows.len(), 1, p], flat).expect("batch shape")
}

const INFER_CHUNK: usize = 512;

/// Class probabilities for every row, `[n, classes]` row-major.
pub fn predict_proba(spec: &NetworkSpec, state: &NetworkState, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    let all: Vec<usize> = (0..data.n_rows()).collect();
    let chunks: Vec<Vec<Vec<f64>>> = all
        .par_chunks(INFER_CHUNK)
        .map(|rows| {
            let (logits, _) = forward(spec, state, &batch_from_rows(data, rows), Mode::Infer)?;
            let probs = softmax(&logits);
            Ok(probs.data().chunks(spec.class_count).map(<[f64]>::to_vec).collect())
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Most probable class per row; ties go to the lower class index.
pub fn predict(spec: &NetworkSpec, state: &NetworkState, data: &Dataset) -> Result<Vec<usize>> {
    Ok(predict_proba(spec, state, data)?.iter().map(|p| argmax(p)).collect())
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
