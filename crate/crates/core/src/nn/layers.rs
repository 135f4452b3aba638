//! Per-layer forward and backward passes over batch tensors.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

/// `c = alpha * op(a) * op(b) + beta * c` on row-major buffers.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    alpha: f64,
    a: &[f64],
    (ar, ac): (usize, usize),
    trans_a: bool,
    b: &[f64],
    (br, bc): (usize, usize),
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
    (cr, cc): (usize, usize),
) {
    let a = ArrayView2::from_shape((ar, ac), a).expect("gemm a shape");
    let b = ArrayView2::from_shape((br, bc), b).expect("gemm b shape");
    let mut c = ArrayViewMut2::from_shape((cr, cc), c).expect("gemm c shape");
    let a = if trans_a { a.t() } else { a };
    let b = if trans_b { b.t() } else { b };
    general_mat_mul(alpha, &a, &b, beta, &mut c);
}

pub(crate) fn conv1d_forward(input: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize) -> Tensor {
    let (batch, cin, len) = dims3(input);
    let (cout, _, k) = dims3(weight);
    let out_len = (len - k) / stride + 1;
    let mut out = vec![0.0; batch * cout * out_len];
    let x = input.data();
    let w = weight.data();
    for b in 0..batch {
        for o in 0..cout {
            let dst = &mut out[(b * cout + o) * out_len..(b * cout + o + 1) * out_len];
            dst.fill(bias.data()[o]);
            for i in 0..cin {
                let xs = &x[(b * cin + i) * len..(b * cin + i + 1) * len];
                let ws = &w[(o * cin + i) * k..(o * cin + i + 1) * k];
                for (t, d) in dst.iter_mut().enumerate() {
                    let window = &xs[t * stride..t * stride + k];
                    *d += window.iter().zip(ws).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
    }
    Tensor::from_vec(&[batch, cout, out_len], out).expect("conv output shape")
}

/// Returns `(d_input, d_weight, d_bias)`.
pub(crate) fn conv1d_backward(
    input: &Tensor,
    weight: &Tensor,
    stride: usize,
    dout: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (batch, cin, len) = dims3(input);
    let (cout, _, k) = dims3(weight);
    let out_len = dout.shape()[2];
    let x = input.data();
    let w = weight.data();
    let dy = dout.data();
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; cout];
    for b in 0..batch {
        for o in 0..cout {
            let g = &dy[(b * cout + o) * out_len..(b * cout + o + 1) * out_len];
            db[o] += g.iter().sum::<f64>();
            for i in 0..cin {
                let xs = &x[(b * cin + i) * len..(b * cin + i + 1) * len];
                let dxs = &mut dx[(b * cin + i) * len..(b * cin + i + 1) * len];
                let ws = &w[(o * cin + i) * k..(o * cin + i + 1) * k];
                let dws = &mut dw[(o * cin + i) * k..(o * cin + i + 1) * k];
                for (t, &gt) in g.iter().enumerate() {
                    let start = t * stride;
                    for j in 0..k {
                        dws[j] += gt * xs[start + j];
                        dxs[start + j] += gt * ws[j];
                    }
                }
            }
        }
    }
    (
        Tensor::from_vec(input.shape(), dx).expect("dx"),
        Tensor::from_vec(weight.shape(), dw).expect("dw"),
        Tensor::from_vec(&[cout], db).expect("db"),
    )
}

/// Max over windows; the first maximal position wins ties. Returns the
/// output and the flat input index chosen for each output element.
pub(crate) fn maxpool_forward(input: &Tensor, window: usize, stride: usize) -> (Tensor, Vec<usize>) {
    let (batch, channels, len) = dims3(input);
    let out_len = (len - window) / stride + 1;
    let x = input.data();
    let mut out = Vec::with_capacity(batch * channels * out_len);
    let mut argmax = Vec::with_capacity(batch * channels * out_len);
    for row in 0..batch * channels {
        let base = row * len;
        for t in 0..out_len {
            let start = base + t * stride;
            let mut best = start;
            for p in start + 1..start + window {
                if x[p] > x[best] {
                    best = p;
                }
            }
            out.push(x[best]);
            argmax.push(best);
        }
    }
    (
        Tensor::from_vec(&[batch, channels, out_len], out).expect("pool output"),
        argmax,
    )
}

pub(crate) fn maxpool_backward(input_shape: &[usize], argmax: &[usize], dout: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&src, &g) in argmax.iter().zip(dout.data()) {
        d[src] += g;
    }
    dx
}

/// `y = x · W + b` with `W` stored `[in, out]`.
pub(crate) fn dense_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Tensor {
    let batch = input.shape()[0];
    let (din, dout) = (weight.shape()[0], weight.shape()[1]);
    let mut out = Vec::with_capacity(batch * dout);
    for _ in 0..batch {
        out.extend_from_slice(bias.data());
    }
    gemm(
        1.0,
        input.data(),
        (batch, din),
        false,
        weight.data(),
        (din, dout),
        false,
        1.0,
        &mut out,
        (batch, dout),
    );
    Tensor::from_vec(&[batch, dout], out).expect("dense output")
}

pub(crate) fn dense_backward(input: &Tensor, weight: &Tensor, dout: &Tensor) -> (Tensor, Tensor, Tensor) {
    let batch = input.shape()[0];
    let (din, dw_out) = (weight.shape()[0], weight.shape()[1]);
    let mut dw = vec![0.0; din * dw_out];
    gemm(
        1.0,
        input.data(),
        (batch, din),
        true,
        dout.data(),
        (batch, dw_out),
        false,
        0.0,
        &mut dw,
        (din, dw_out),
    );
    let mut db = vec![0.0; dw_out];
    for row in dout.data().chunks(dw_out) {
        for (d, g) in db.iter_mut().zip(row) {
            *d += g;
        }
    }
    let mut dx = vec![0.0; batch * din];
    gemm(
        1.0,
        dout.data(),
        (batch, dw_out),
        false,
        weight.data(),
        (din, dw_out),
        true,
        0.0,
        &mut dx,
        (batch, din),
    );
    (
        Tensor::from_vec(input.shape(), dx).expect("dx"),
        Tensor::from_vec(weight.shape(), dw).expect("dw"),
        Tensor::from_vec(&[dw_out], db).expect("db"),
    )
}

pub(crate) fn relu_forward(input: Tensor) -> Tensor {
    let mut out = input;
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Gradient passes where the forward output was positive.
pub(crate) fn relu_backward(output: &Tensor, dout: Tensor) -> Tensor {
    let mut dx = dout;
    for (g, &y) in dx.data_mut().iter_mut().zip(output.data()) {
        if y <= 0.0 {
            *g = 0.0;
        }
    }
    dx
}

/// Inverted dropout mask: each entry is 0 or `1 / (1 - rate)`.
pub(crate) fn dropout_mask(len: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    (0..len)
        .map(|_| if rng.gen::<f64>() < keep { scale } else { 0.0 })
        .collect()
}

pub(crate) fn apply_mask(t: Tensor, mask: &[f64]) -> Tensor {
    let mut t = t;
    for (v, m) in t.data_mut().iter_mut().zip(mask) {
        *v *= m;
    }
    t
}

/// Hidden states of one stacked tanh recurrence: `hidden[l][t]` is the
/// `[batch, hidden]` state of layer `l` after `t` steps (`t = 0` is zero).
#[derive(Debug)]
pub(crate) struct RnnTrace {
    pub hidden: Vec<Vec<Vec<f64>>>,
}

/// Input `[batch, features, steps]`; params per layer `(w_x, w_h, b)`.
pub(crate) fn rnn_forward(input: &Tensor, params: &[Tensor], hidden_size: usize, layers: usize) -> (Tensor, RnnTrace) {
    let (batch, features, steps) = dims3(input);
    let h = hidden_size;
    // Layer-0 inputs rearranged to step-major [steps][batch, features].
    let mut layer_input: Vec<Vec<f64>> = (0..steps)
        .map(|t| {
            let mut xt = Vec::with_capacity(batch * features);
            for b in 0..batch {
                for f in 0..features {
                    xt.push(input.data()[(b * features + f) * steps + t]);
                }
            }
            xt
        })
        .collect();
    let mut in_width = features;
    let mut hidden = Vec::with_capacity(layers);
    for l in 0..layers {
        let (wx, wh, bias) = (&params[3 * l], &params[3 * l + 1], &params[3 * l + 2]);
        let mut states = Vec::with_capacity(steps + 1);
        states.push(vec![0.0; batch * h]);
        for xt in layer_input.iter() {
            let mut a = Vec::with_capacity(batch * h);
            for _ in 0..batch {
                a.extend_from_slice(bias.data());
            }
            gemm(
                1.0,
                xt,
                (batch, in_width),
                false,
                wx.data(),
                (in_width, h),
                false,
                1.0,
                &mut a,
                (batch, h),
            );
            let prev = states.last().expect("initial state");
            gemm(
                1.0,
                prev,
                (batch, h),
                false,
                wh.data(),
                (h, h),
                false,
                1.0,
                &mut a,
                (batch, h),
            );
            for v in &mut a {
                *v = v.tanh();
            }
            states.push(a);
        }
        layer_input = states[1..].to_vec();
        in_width = h;
        hidden.push(states);
    }
    let last = hidden.last().and_then(|s| s.last()).cloned().unwrap_or_default();
    (
        Tensor::from_vec(&[batch, h], last).expect("rnn output"),
        RnnTrace { hidden },
    )
}

/// Backpropagation through time. Returns `(d_input, grads)` with grads in
/// parameter order.
pub(crate) fn rnn_backward(
    input: &Tensor,
    params: &[Tensor],
    trace: &RnnTrace,
    hidden_size: usize,
    dout: &Tensor,
) -> (Tensor, Vec<Tensor>) {
    let (batch, features, steps) = dims3(input);
    let h = hidden_size;
    let layers = trace.hidden.len();
    let mut grads: Vec<Tensor> = params.iter().map(Tensor::zeros_like).collect();

    // Gradient arriving at each step's output of the current layer.
    let mut d_seq: Vec<Vec<f64>> = vec![vec![0.0; batch * h]; steps];
    if steps > 0 {
        d_seq[steps - 1].copy_from_slice(dout.data());
    }
    let layer0_input: Vec<Vec<f64>> = (0..steps)
        .map(|t| {
            let mut xt = Vec::with_capacity(batch * features);
            for b in 0..batch {
                for f in 0..features {
                    xt.push(input.data()[(b * features + f) * steps + t]);
                }
            }
            xt
        })
        .collect();

    for l in (0..layers).rev() {
        let in_width = if l == 0 { features } else { h };
        let (wx, wh) = (&params[3 * l], &params[3 * l + 1]);
        let states = &trace.hidden[l];
        let mut d_below = vec![vec![0.0; batch * in_width]; steps];
        let mut dh_next = vec![0.0; batch * h];
        let (gx, rest) = grads[3 * l..3 * l + 3].split_at_mut(1);
        let (gh, gb) = rest.split_at_mut(1);
        for t in (0..steps).rev() {
            let ht = &states[t + 1];
            let h_prev = &states[t];
            let xt: &[f64] = if l == 0 {
                &layer0_input[t]
            } else {
                &trace.hidden[l - 1][t + 1]
            };
            let da: Vec<f64> = (0..batch * h)
                .map(|j| (d_seq[t][j] + dh_next[j]) * (1.0 - ht[j] * ht[j]))
                .collect();
            gemm(
                1.0,
                xt,
                (batch, in_width),
                true,
                &da,
                (batch, h),
                false,
                1.0,
                gx[0].data_mut(),
                (in_width, h),
            );
            gemm(
                1.0,
                h_prev,
                (batch, h),
                true,
                &da,
                (batch, h),
                false,
                1.0,
                gh[0].data_mut(),
                (h, h),
            );
            for row in da.chunks(h) {
                for (g, d) in gb[0].data_mut().iter_mut().zip(row) {
                    *g += d;
                }
            }
            gemm(
                1.0,
                &da,
                (batch, h),
                false,
                wx.data(),
                (in_width, h),
                true,
                0.0,
                &mut d_below[t],
                (batch, in_width),
            );
            gemm(
                1.0,
                &da,
                (batch, h),
                false,
                wh.data(),
                (h, h),
                true,
                0.0,
                &mut dh_next,
                (batch, h),
            );
        }
        d_seq = d_below;
    }

    let mut dx = vec![0.0; batch * features * steps];
    for (t, dt) in d_seq.iter().enumerate() {
        for b in 0..batch {
            for f in 0..features {
                dx[(b * features + f) * steps + t] = dt[b * features + f];
            }
        }
    }
    (Tensor::from_vec(input.shape(), dx).expect("rnn dx"), grads)
}

fn dims3(t: &Tensor) -> (usize, usize, usize) {
    let s = t.shape();
    (s[0], s[1], s[2])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn conv_pass_through_kernel() {
        let x = t(&[1, 1, 4], &[1.0, 2.0, 3.0, 4.0]);
        let out = conv1d_forward(&x, &t(&[1, 1, 2], &[1.0, 0.0]), &t(&[1], &[0.0]), 1);
        assert_eq!(out.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn conv_sum_kernel() {
        let x = t(&[1, 1, 4], &[1.0, 2.0, 3.0, 4.0]);
        let out = conv1d_forward(&x, &t(&[1, 1, 2], &[1.0, 1.0]), &t(&[1], &[0.0]), 1);
        assert_eq!(out.data(), &[3.0, 5.0, 7.0]);
        let strided = conv1d_forward(&x, &t(&[1, 1, 2], &[1.0, 1.0]), &t(&[1], &[0.5]), 2);
        assert_eq!(strided.data(), &[3.5, 7.5]);
    }

    #[test]
    fn maxpool_example() {
        let (out, argmax) = maxpool_forward(&t(&[1, 1, 4], &[3.0, 1.0, 4.0, 1.0]), 2, 2);
        assert_eq!(out.data(), &[3.0, 4.0]);
        assert_eq!(argmax, vec![0, 2]);
        let dx = maxpool_backward(&[1, 1, 4], &argmax, &t(&[1, 1, 2], &[0.5, -1.0]));
        assert_eq!(dx.data(), &[0.5, 0.0, -1.0, 0.0]);
    }

    #[test]
    fn dense_weight_gradient_is_input_transpose_times_dout() {
        let x = t(&[2, 3], &[1.0, 2.0, 3.0, -1.0, 0.5, 4.0]);
        let w = t(&[3, 2], &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let dy = t(&[2, 2], &[1.0, -2.0, 0.5, 3.0]);
        let (_, dw, db) = dense_backward(&x, &w, &dy);
        let mut expected = [0.0; 6];
        for i in 0..3 {
            for j in 0..2 {
                expected[i * 2 + j] = (0..2).map(|b| x.data()[b * 3 + i] * dy.data()[b * 2 + j]).sum();
            }
        }
        assert_eq!(dw.data(), &expected);
        assert_eq!(db.data(), &[1.5, 1.0]);
    }

    #[test]
    fn rnn_zero_weights_give_zero_states() {
        let x = t(&[2, 1, 5], &[1.0, 2.0, 3.0, 4.0, 5.0, -1.0, -2.0, 0.0, 1.0, 2.0]);
        let params = vec![Tensor::zeros(&[1, 4]), Tensor::zeros(&[4, 4]), Tensor::zeros(&[4])];
        let (out, trace) = rnn_forward(&x, &params, 4, 1);
        assert!(out.data().iter().all(|&v| v == 0.0));
        assert!(trace.hidden[0].iter().flatten().all(|&v| v == 0.0));
    }
}
