//! Forward and backward kernels, free of any graph bookkeeping.
//!
//! Every function here is a plain deterministic loop over row-major buffers.
//! The tape calls these to execute its nodes; value-only callers (the routing
//! loop, inference helpers) call them directly. Shape validation happens at
//! the tape boundary, kernels only debug_assert.

use super::{strides_for, Scalar, Tensor};

/// Norm guard used by squash and capsule-norm backward passes.
pub(crate) const NORM_EPS: f64 = 1e-9;

/// Output extent and leading pad for same-padding convolution.
///
/// Output is `ceil(in / stride)`; total padding is whatever makes the last
/// window fit, split with the smaller half first.
pub(crate) fn same_padding(in_size: usize, kernel: usize, stride: usize) -> (usize, usize) {
    debug_assert!(stride >= 1 && in_size >= 1 && kernel >= 1);
    let out = in_size.div_ceil(stride);
    let span = (out - 1) * stride + kernel;
    let pad_total = span.saturating_sub(in_size);
    (out, pad_total / 2)
}

pub(crate) fn conv2d_forward<F: Scalar>(
    input: &Tensor<F>,
    weight: &Tensor<F>,
    bias: &Tensor<F>,
    stride: usize,
) -> Tensor<F> {
    let [n_batch, in_ch, in_h, in_w] = dims4(input);
    let [out_ch, w_in_ch, k_h, k_w] = dims4(weight);
    debug_assert_eq!(in_ch, w_in_ch);
    debug_assert_eq!(bias.numel(), out_ch);
    let (out_h, pad_h) = same_padding(in_h, k_h, stride);
    let (out_w, pad_w) = same_padding(in_w, k_w, stride);

    let x = input.data();
    let w = weight.data();
    let b = bias.data();
    let mut out = Tensor::zeros(vec![n_batch, out_ch, out_h, out_w]);
    let o_data = out.data_mut();

    for n in 0..n_batch {
        for o in 0..out_ch {
            for oh in 0..out_h {
                let ih0 = (oh * stride) as isize - pad_h as isize;
                for ow in 0..out_w {
                    let iw0 = (ow * stride) as isize - pad_w as isize;
                    let mut acc = b[o];
                    for c in 0..in_ch {
                        let x_base = (n * in_ch + c) * in_h * in_w;
                        let w_base = (o * in_ch + c) * k_h * k_w;
                        for kh in 0..k_h {
                            let ih = ih0 + kh as isize;
                            if ih < 0 || ih >= in_h as isize {
                                continue;
                            }
                            let x_row = x_base + ih as usize * in_w;
                            let w_row = w_base + kh * k_w;
                            for kw in 0..k_w {
                                let iw = iw0 + kw as isize;
                                if iw < 0 || iw >= in_w as isize {
                                    continue;
                                }
                                acc += x[x_row + iw as usize] * w[w_row + kw as usize];
                            }
                        }
                    }
                    o_data[((n * out_ch + o) * out_h + oh) * out_w + ow] = acc;
                }
            }
        }
    }
    out
}

/// Gradients of conv2d. `grad_input` is skipped when `need_input` is false
/// (the first layer's input is data, not a parameter).
pub(crate) fn conv2d_backward<F: Scalar>(
    input: &Tensor<F>,
    weight: &Tensor<F>,
    stride: usize,
    grad_out: &Tensor<F>,
    need_input: bool,
) -> (Option<Tensor<F>>, Tensor<F>, Tensor<F>) {
    let [n_batch, in_ch, in_h, in_w] = dims4(input);
    let [out_ch, _, k_h, k_w] = dims4(weight);
    let [_, _, out_h, out_w] = dims4(grad_out);
    let (_, pad_h) = same_padding(in_h, k_h, stride);
    let (_, pad_w) = same_padding(in_w, k_w, stride);

    let x = input.data();
    let w = weight.data();
    let g = grad_out.data();
    let mut gi = if need_input {
        Some(Tensor::zeros(input.shape().to_vec()))
    } else {
        None
    };
    let mut gw = Tensor::zeros(weight.shape().to_vec());
    let mut gb = Tensor::zeros(vec![out_ch]);

    for n in 0..n_batch {
        for o in 0..out_ch {
            for oh in 0..out_h {
                let ih0 = (oh * stride) as isize - pad_h as isize;
                for ow in 0..out_w {
                    let iw0 = (ow * stride) as isize - pad_w as isize;
                    let go = g[((n * out_ch + o) * out_h + oh) * out_w + ow];
                    gb.data_mut()[o] += go;
                    for c in 0..in_ch {
                        let x_base = (n * in_ch + c) * in_h * in_w;
                        let w_base = (o * in_ch + c) * k_h * k_w;
                        for kh in 0..k_h {
                            let ih = ih0 + kh as isize;
                            if ih < 0 || ih >= in_h as isize {
                                continue;
                            }
                            let x_row = x_base + ih as usize * in_w;
                            let w_row = w_base + kh * k_w;
                            for kw in 0..k_w {
                                let iw = iw0 + kw as isize;
                                if iw < 0 || iw >= in_w as isize {
                                    continue;
                                }
                                let xi = x_row + iw as usize;
                                gw.data_mut()[w_row + kw] += go * x[xi];
                                if let Some(gi) = gi.as_mut() {
                                    gi.data_mut()[xi] += go * w[w_row + kw];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (gi, gw, gb)
}

pub(crate) fn linear_forward<F: Scalar>(
    input: &Tensor<F>,
    weight: &Tensor<F>,
    bias: &Tensor<F>,
) -> Tensor<F> {
    let (n_batch, in_dim) = (input.shape()[0], input.shape()[1]);
    let out_dim = weight.shape()[0];
    debug_assert_eq!(weight.shape()[1], in_dim);
    debug_assert_eq!(bias.numel(), out_dim);
    let mut out = Tensor::zeros(vec![n_batch, out_dim]);
    for n in 0..n_batch {
        let x_row = &input.data()[n * in_dim..(n + 1) * in_dim];
        for o in 0..out_dim {
            let w_row = &weight.data()[o * in_dim..(o + 1) * in_dim];
            let mut acc = bias.data()[o];
            for i in 0..in_dim {
                acc += x_row[i] * w_row[i];
            }
            out.data_mut()[n * out_dim + o] = acc;
        }
    }
    out
}

pub(crate) fn linear_backward<F: Scalar>(
    input: &Tensor<F>,
    weight: &Tensor<F>,
    grad_out: &Tensor<F>,
    need_input: bool,
) -> (Option<Tensor<F>>, Tensor<F>, Tensor<F>) {
    let (n_batch, in_dim) = (input.shape()[0], input.shape()[1]);
    let out_dim = weight.shape()[0];
    let mut gi = if need_input {
        Some(Tensor::zeros(input.shape().to_vec()))
    } else {
        None
    };
    let mut gw = Tensor::zeros(weight.shape().to_vec());
    let mut gb = Tensor::zeros(vec![out_dim]);
    for n in 0..n_batch {
        let x_row = &input.data()[n * in_dim..(n + 1) * in_dim];
        for o in 0..out_dim {
            let g = grad_out.data()[n * out_dim + o];
            gb.data_mut()[o] += g;
            let gw_row = &mut gw.data_mut()[o * in_dim..(o + 1) * in_dim];
            for i in 0..in_dim {
                gw_row[i] += g * x_row[i];
            }
        }
        if let Some(gi) = gi.as_mut() {
            let gi_row = &mut gi.data_mut()[n * in_dim..(n + 1) * in_dim];
            for o in 0..out_dim {
                let g = grad_out.data()[n * out_dim + o];
                let w_row = &weight.data()[o * in_dim..(o + 1) * in_dim];
                for i in 0..in_dim {
                    gi_row[i] += g * w_row[i];
                }
            }
        }
    }
    (gi, gw, gb)
}

/// Calls `f(start, step)` once per 1-D lane running along `axis`.
fn for_each_lane(shape: &[usize], axis: usize, mut f: impl FnMut(usize, usize)) {
    let strides = strides_for(shape);
    let len = shape[axis];
    let step = strides[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    for o in 0..outer {
        let base = o * len * inner;
        for i in 0..inner {
            f(base + i, step);
        }
    }
}

pub(crate) fn softmax_forward<F: Scalar>(x: &Tensor<F>, axis: usize) -> Tensor<F> {
    let mut out = x.clone();
    let len = x.shape()[axis];
    let data = out.data_mut();
    for_each_lane(x.shape(), axis, |start, step| {
        let mut max = data[start];
        for k in 1..len {
            max = max.max(data[start + k * step]);
        }
        let mut sum = F::zero();
        for k in 0..len {
            let i = start + k * step;
            data[i] = (data[i] - max).exp();
            sum += data[i];
        }
        for k in 0..len {
            data[start + k * step] /= sum;
        }
    });
    out
}

pub(crate) fn softmax_backward<F: Scalar>(
    y: &Tensor<F>,
    grad_out: &Tensor<F>,
    axis: usize,
) -> Tensor<F> {
    let mut gi = Tensor::zeros(y.shape().to_vec());
    let len = y.shape()[axis];
    let yd = y.data();
    let gd = grad_out.data();
    let out = gi.data_mut();
    for_each_lane(y.shape(), axis, |start, step| {
        let mut dot = F::zero();
        for k in 0..len {
            let i = start + k * step;
            dot += gd[i] * yd[i];
        }
        for k in 0..len {
            let i = start + k * step;
            out[i] = yd[i] * (gd[i] - dot);
        }
    });
    gi
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    /// Sum of squares, no square root.
    SqL2Norm,
}

pub(crate) fn reduce_forward<F: Scalar>(
    x: &Tensor<F>,
    kind: ReduceKind,
    axis: Option<usize>,
) -> Tensor<F> {
    match axis {
        None => {
            let mut acc = F::zero();
            for &v in x.data() {
                acc += match kind {
                    ReduceKind::SqL2Norm => v * v,
                    _ => v,
                };
            }
            if kind == ReduceKind::Mean {
                acc /= F::from_f64(x.numel() as f64);
            }
            Tensor::scalar(acc)
        }
        Some(axis) => {
            let len = x.shape()[axis];
            let mut out_shape = x.shape().to_vec();
            out_shape.remove(axis);
            let mut out = Tensor::zeros(out_shape);
            let xd = x.data();
            let od = out.data_mut();
            let mut lane = 0usize;
            for_each_lane(x.shape(), axis, |start, step| {
                let mut acc = F::zero();
                for k in 0..len {
                    let v = xd[start + k * step];
                    acc += match kind {
                        ReduceKind::SqL2Norm => v * v,
                        _ => v,
                    };
                }
                if kind == ReduceKind::Mean {
                    acc /= F::from_f64(len as f64);
                }
                od[lane] = acc;
                lane += 1;
            });
            out
        }
    }
}

pub(crate) fn reduce_backward<F: Scalar>(
    x: &Tensor<F>,
    kind: ReduceKind,
    axis: Option<usize>,
    grad_out: &Tensor<F>,
) -> Tensor<F> {
    let mut gi = Tensor::zeros(x.shape().to_vec());
    match axis {
        None => {
            let g = grad_out.item();
            let scale = match kind {
                ReduceKind::Sum => g,
                ReduceKind::Mean => g / F::from_f64(x.numel() as f64),
                ReduceKind::SqL2Norm => g,
            };
            for (o, &v) in gi.data_mut().iter_mut().zip(x.data()) {
                *o = match kind {
                    ReduceKind::SqL2Norm => scale * (v + v),
                    _ => scale,
                };
            }
        }
        Some(axis) => {
            let len = x.shape()[axis];
            let xd = x.data();
            let gd = grad_out.data();
            let od = gi.data_mut();
            let mut lane = 0usize;
            for_each_lane(x.shape(), axis, |start, step| {
                let g = gd[lane];
                lane += 1;
                let scale = match kind {
                    ReduceKind::Mean => g / F::from_f64(len as f64),
                    _ => g,
                };
                for k in 0..len {
                    let i = start + k * step;
                    od[i] = match kind {
                        ReduceKind::SqL2Norm => scale * (xd[i] + xd[i]),
                        _ => scale,
                    };
                }
            });
        }
    }
    gi
}

/// v = (‖s‖² / (1 + ‖s‖²)) · s / (‖s‖ + ε), per vector along the last axis.
pub(crate) fn squash_forward<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    let d = *x.shape().last().expect("squash needs rank >= 1");
    let eps = F::from_f64(NORM_EPS);
    let mut out = x.clone();
    for vec in out.data_mut().chunks_mut(d) {
        let mut n2 = F::zero();
        for &v in vec.iter() {
            n2 += v * v;
        }
        let scale = n2 / ((F::one() + n2) * (n2.sqrt() + eps));
        for v in vec.iter_mut() {
            *v *= scale;
        }
    }
    out
}

/// With f(n²) = n² / ((1+n²)(n+ε)), the Jacobian-vector product is
/// f·g + 2·f'·(g·s)·s where f' = ((n+ε) − n(1+n²)/2) / ((1+n²)(n+ε))².
/// Both factors stay finite at s = 0: f' grows like 1/ε there but is
/// multiplied by (g·s)·s = 0.
pub(crate) fn squash_backward<F: Scalar>(x: &Tensor<F>, grad_out: &Tensor<F>) -> Tensor<F> {
    let d = *x.shape().last().expect("squash needs rank >= 1");
    let eps = F::from_f64(NORM_EPS);
    let half = F::from_f64(0.5);
    let mut gi = Tensor::zeros(x.shape().to_vec());
    let xd = x.data();
    let gd = grad_out.data();
    for (base, out_vec) in gi.data_mut().chunks_mut(d).enumerate() {
        let s = &xd[base * d..(base + 1) * d];
        let g = &gd[base * d..(base + 1) * d];
        let mut n2 = F::zero();
        let mut dot = F::zero();
        for k in 0..d {
            n2 += s[k] * s[k];
            dot += g[k] * s[k];
        }
        let n = n2.sqrt();
        let denom = (F::one() + n2) * (n + eps);
        let f = n2 / denom;
        let fp = ((n + eps) - n * (F::one() + n2) * half) / (denom * denom);
        let two_fp_dot = (fp + fp) * dot;
        for k in 0..d {
            out_vec[k] = f * g[k] + two_fp_dot * s[k];
        }
    }
    gi
}

/// û[n,p,j,:] = W[j] · u[n,p,:] with u: [N,P,Din], w: [J,Dout,Din].
pub(crate) fn capsule_transform_forward<F: Scalar>(u: &Tensor<F>, w: &Tensor<F>) -> Tensor<F> {
    let [n_batch, p_caps, d_in] = dims3(u);
    let [j_caps, d_out, _] = dims3(w);
    let mut out = Tensor::zeros(vec![n_batch, p_caps, j_caps, d_out]);
    let ud = u.data();
    let wd = w.data();
    let od = out.data_mut();
    for n in 0..n_batch {
        for p in 0..p_caps {
            let u_vec = &ud[(n * p_caps + p) * d_in..(n * p_caps + p + 1) * d_in];
            let o_base = (n * p_caps + p) * j_caps * d_out;
            for j in 0..j_caps {
                for o in 0..d_out {
                    let w_row = &wd[(j * d_out + o) * d_in..(j * d_out + o + 1) * d_in];
                    let mut acc = F::zero();
                    for i in 0..d_in {
                        acc += w_row[i] * u_vec[i];
                    }
                    od[o_base + j * d_out + o] = acc;
                }
            }
        }
    }
    out
}

pub(crate) fn capsule_transform_backward<F: Scalar>(
    u: &Tensor<F>,
    w: &Tensor<F>,
    grad_out: &Tensor<F>,
    need_u: bool,
) -> (Option<Tensor<F>>, Tensor<F>) {
    let [n_batch, p_caps, d_in] = dims3(u);
    let [j_caps, d_out, _] = dims3(w);
    let mut gu = if need_u {
        Some(Tensor::zeros(u.shape().to_vec()))
    } else {
        None
    };
    let mut gw = Tensor::zeros(w.shape().to_vec());
    let ud = u.data();
    let wd = w.data();
    let gd = grad_out.data();
    for n in 0..n_batch {
        for p in 0..p_caps {
            let u_idx = (n * p_caps + p) * d_in;
            let u_vec = &ud[u_idx..u_idx + d_in];
            let g_base = (n * p_caps + p) * j_caps * d_out;
            for j in 0..j_caps {
                for o in 0..d_out {
                    let g = gd[g_base + j * d_out + o];
                    let row = (j * d_out + o) * d_in;
                    let gw_row = &mut gw.data_mut()[row..row + d_in];
                    for i in 0..d_in {
                        gw_row[i] += g * u_vec[i];
                    }
                    if let Some(gu) = gu.as_mut() {
                        let w_row = &wd[row..row + d_in];
                        let gu_vec = &mut gu.data_mut()[u_idx..u_idx + d_in];
                        for i in 0..d_in {
                            gu_vec[i] += g * w_row[i];
                        }
                    }
                }
            }
        }
    }
    (gu, gw)
}

/// s[n,j,:] = Σ_p c[n,p,j] · û[n,p,j,:] with fixed couplings c.
pub(crate) fn coupled_sum_forward<F: Scalar>(uhat: &Tensor<F>, c: &Tensor<F>) -> Tensor<F> {
    let [n_batch, p_caps, j_caps, d] = dims4(uhat);
    debug_assert_eq!(c.shape(), &[n_batch, p_caps, j_caps]);
    let mut out = Tensor::zeros(vec![n_batch, j_caps, d]);
    let ud = uhat.data();
    let cd = c.data();
    let od = out.data_mut();
    for n in 0..n_batch {
        for p in 0..p_caps {
            for j in 0..j_caps {
                let cc = cd[(n * p_caps + p) * j_caps + j];
                let u_base = ((n * p_caps + p) * j_caps + j) * d;
                let o_base = (n * j_caps + j) * d;
                for k in 0..d {
                    od[o_base + k] += cc * ud[u_base + k];
                }
            }
        }
    }
    out
}

pub(crate) fn coupled_sum_backward<F: Scalar>(
    uhat_shape: &[usize],
    c: &Tensor<F>,
    grad_out: &Tensor<F>,
) -> Tensor<F> {
    let [n_batch, p_caps, j_caps, d] = [
        uhat_shape[0],
        uhat_shape[1],
        uhat_shape[2],
        uhat_shape[3],
    ];
    let mut gi = Tensor::zeros(uhat_shape.to_vec());
    let cd = c.data();
    let gd = grad_out.data();
    let od = gi.data_mut();
    for n in 0..n_batch {
        for p in 0..p_caps {
            for j in 0..j_caps {
                let cc = cd[(n * p_caps + p) * j_caps + j];
                let u_base = ((n * p_caps + p) * j_caps + j) * d;
                let g_base = (n * j_caps + j) * d;
                for k in 0..d {
                    od[u_base + k] = cc * gd[g_base + k];
                }
            }
        }
    }
    gi
}

/// Euclidean norm along the last axis; [.., d] -> [..].
pub(crate) fn norm_last_axis_forward<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    let d = *x.shape().last().expect("norm needs rank >= 1");
    let out_shape = x.shape()[..x.rank() - 1].to_vec();
    let mut out = Tensor::zeros(out_shape);
    for (o, vec) in out.data_mut().iter_mut().zip(x.data().chunks(d)) {
        let mut n2 = F::zero();
        for &v in vec {
            n2 += v * v;
        }
        *o = n2.sqrt();
    }
    out
}

pub(crate) fn norm_last_axis_backward<F: Scalar>(
    x: &Tensor<F>,
    norms: &Tensor<F>,
    grad_out: &Tensor<F>,
) -> Tensor<F> {
    let d = *x.shape().last().unwrap();
    let eps = F::from_f64(NORM_EPS);
    let mut gi = Tensor::zeros(x.shape().to_vec());
    let xd = x.data();
    for (i, out_vec) in gi.data_mut().chunks_mut(d).enumerate() {
        let scale = grad_out.data()[i] / (norms.data()[i] + eps);
        for k in 0..d {
            out_vec[k] = scale * xd[i * d + k];
        }
    }
    gi
}

pub(crate) fn concat_channels_forward<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    let [n_batch, c1, h, w] = dims4(a);
    let [_, c2, _, _] = dims4(b);
    let plane = h * w;
    let mut out = Tensor::zeros(vec![n_batch, c1 + c2, h, w]);
    let od = out.data_mut();
    for n in 0..n_batch {
        let dst = n * (c1 + c2) * plane;
        od[dst..dst + c1 * plane].copy_from_slice(&a.data()[n * c1 * plane..(n + 1) * c1 * plane]);
        od[dst + c1 * plane..dst + (c1 + c2) * plane]
            .copy_from_slice(&b.data()[n * c2 * plane..(n + 1) * c2 * plane]);
    }
    out
}

pub(crate) fn concat_channels_backward<F: Scalar>(
    a_shape: &[usize],
    b_shape: &[usize],
    grad_out: &Tensor<F>,
) -> (Tensor<F>, Tensor<F>) {
    let (n_batch, c1, c2) = (a_shape[0], a_shape[1], b_shape[1]);
    let plane = a_shape[2] * a_shape[3];
    let mut ga = Tensor::zeros(a_shape.to_vec());
    let mut gb = Tensor::zeros(b_shape.to_vec());
    let gd = grad_out.data();
    for n in 0..n_batch {
        let src = n * (c1 + c2) * plane;
        ga.data_mut()[n * c1 * plane..(n + 1) * c1 * plane]
            .copy_from_slice(&gd[src..src + c1 * plane]);
        gb.data_mut()[n * c2 * plane..(n + 1) * c2 * plane]
            .copy_from_slice(&gd[src + c1 * plane..src + (c1 + c2) * plane]);
    }
    (ga, gb)
}

/// out[n,:] = x[n, indices[n], :] for x: [N,J,D].
pub(crate) fn select_capsule_forward<F: Scalar>(x: &Tensor<F>, indices: &[usize]) -> Tensor<F> {
    let [n_batch, j_caps, d] = dims3(x);
    debug_assert_eq!(indices.len(), n_batch);
    let mut out = Tensor::zeros(vec![n_batch, d]);
    for (n, &j) in indices.iter().enumerate() {
        debug_assert!(j < j_caps);
        out.data_mut()[n * d..(n + 1) * d]
            .copy_from_slice(&x.data()[(n * j_caps + j) * d..(n * j_caps + j + 1) * d]);
    }
    out
}

pub(crate) fn select_capsule_backward<F: Scalar>(
    x_shape: &[usize],
    indices: &[usize],
    grad_out: &Tensor<F>,
) -> Tensor<F> {
    let (j_caps, d) = (x_shape[1], x_shape[2]);
    let mut gi = Tensor::zeros(x_shape.to_vec());
    for (n, &j) in indices.iter().enumerate() {
        gi.data_mut()[(n * j_caps + j) * d..(n * j_caps + j + 1) * d]
            .copy_from_slice(&grad_out.data()[n * d..(n + 1) * d]);
    }
    gi
}

fn dims3<F: Scalar>(t: &Tensor<F>) -> [usize; 3] {
    debug_assert_eq!(t.rank(), 3);
    [t.shape()[0], t.shape()[1], t.shape()[2]]
}

fn dims4<F: Scalar>(t: &Tensor<F>) -> [usize; 4] {
    debug_assert_eq!(t.rank(), 4);
    [t.shape()[0], t.shape()[1], t.shape()[2], t.shape()[3]]
}
