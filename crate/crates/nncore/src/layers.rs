//! Layer kernels with explicit forward caches and hand-derived backward
//! passes, operating on one sample at a time (per-sample gradients fall out
//! of running each sample independently).

use crate::activation::Activation;
use crate::tensor::Tensor3;
use crate::NnError;

/// Additive variance guard inside group normalization; keeps constant
/// channels finite and the backward pass smooth.
pub const GROUP_NORM_EPS: f64 = 1e-5;

/// One node of the network graph. Parameterized layers carry their slice
/// offset into the model's flat parameter vector.
#[derive(Debug, Clone)]
pub(crate) enum Layer {
    /// 3×3 convolution, stride 1, zero padding 1, no bias.
    Conv3x3 {
        in_ch: usize,
        out_ch: usize,
        offset: usize,
    },
    /// Per-sample, per-group normalization with learned scale and shift.
    GroupNorm {
        channels: usize,
        groups: usize,
        offset: usize,
    },
    Act(Activation),
    /// 2×2 max pooling with stride 2 (trailing odd row/column dropped).
    MaxPool2,
    /// Spatial max over each channel, producing a flat feature vector.
    GlobalMaxPool,
    /// Fully connected layer with bias.
    Linear {
        in_f: usize,
        out_f: usize,
        offset: usize,
    },
    /// y = x + f(x) over an inner pipeline that preserves shape.
    Residual(Vec<Layer>),
}

/// Activations flowing between layers: spatial volumes until global pooling,
/// flat vectors after.
#[derive(Debug, Clone)]
pub(crate) enum Value {
    Spatial(Tensor3),
    Flat(Vec<f64>),
}

impl Value {
    fn spatial(self, what: &str) -> Result<Tensor3, NnError> {
        match self {
            Value::Spatial(t) => Ok(t),
            Value::Flat(_) => Err(NnError::ShapeMismatch(format!(
                "{what} expects a spatial input"
            ))),
        }
    }

    fn flat(self, what: &str) -> Result<Vec<f64>, NnError> {
        match self {
            Value::Flat(v) => Ok(v),
            Value::Spatial(_) => Err(NnError::ShapeMismatch(format!(
                "{what} expects a flat input"
            ))),
        }
    }
}

/// Saved forward state consumed by the matching backward call.
#[derive(Debug)]
pub(crate) enum Cache {
    Conv {
        input: Tensor3,
    },
    GroupNorm {
        input: Tensor3,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Act {
        input: Tensor3,
    },
    MaxPool {
        arg: Vec<usize>,
        in_h: usize,
        in_w: usize,
    },
    GlobalMaxPool {
        arg: Vec<usize>,
        in_h: usize,
        in_w: usize,
    },
    Linear {
        input: Vec<f64>,
    },
    Residual(Vec<Cache>),
}

pub(crate) fn forward_layer(
    layer: &Layer,
    params: &[f64],
    input: Value,
) -> Result<(Value, Cache), NnError> {
    match layer {
        Layer::Conv3x3 {
            in_ch,
            out_ch,
            offset,
        } => {
            let x = input.spatial("conv")?;
            if x.channels() != *in_ch {
                return Err(NnError::ShapeMismatch(format!(
                    "conv expects {in_ch} input channels, got {}",
                    x.channels()
                )));
            }
            let w = &params[*offset..*offset + out_ch * in_ch * 9];
            let y = conv3x3_forward(&x, w, *out_ch);
            Ok((Value::Spatial(y), Cache::Conv { input: x }))
        }
        Layer::GroupNorm {
            channels,
            groups,
            offset,
        } => {
            let x = input.spatial("group norm")?;
            if x.channels() != *channels {
                return Err(NnError::ShapeMismatch(format!(
                    "group norm expects {channels} channels, got {}",
                    x.channels()
                )));
            }
            let gamma = &params[*offset..*offset + channels];
            let beta = &params[*offset + channels..*offset + 2 * channels];
            let (y, mean, inv_std) = group_norm_forward(&x, *groups, gamma, beta);
            Ok((
                Value::Spatial(y),
                Cache::GroupNorm {
                    input: x,
                    mean,
                    inv_std,
                },
            ))
        }
        Layer::Act(a) => {
            let x = input.spatial("activation")?;
            let mut y = x.clone();
            for v in y.data_mut() {
                *v = a.apply(*v);
            }
            Ok((Value::Spatial(y), Cache::Act { input: x }))
        }
        Layer::MaxPool2 => {
            let x = input.spatial("max pool")?;
            let (y, arg) = max_pool2_forward(&x);
            Ok((
                Value::Spatial(y),
                Cache::MaxPool {
                    arg,
                    in_h: x.height(),
                    in_w: x.width(),
                },
            ))
        }
        Layer::GlobalMaxPool => {
            let x = input.spatial("global max pool")?;
            let plane = x.height() * x.width();
            let mut out = Vec::with_capacity(x.channels());
            let mut arg = Vec::with_capacity(x.channels());
            for c in 0..x.channels() {
                let ch = x.channel(c);
                let (mut best_i, mut best) = (0usize, ch[0]);
                for (i, &v) in ch.iter().enumerate().skip(1) {
                    if v > best {
                        best = v;
                        best_i = i;
                    }
                }
                out.push(best);
                arg.push(c * plane + best_i);
            }
            Ok((
                Value::Flat(out),
                Cache::GlobalMaxPool {
                    arg,
                    in_h: x.height(),
                    in_w: x.width(),
                },
            ))
        }
        Layer::Linear { in_f, out_f, offset } => {
            let x = input.flat("linear")?;
            if x.len() != *in_f {
                return Err(NnError::ShapeMismatch(format!(
                    "linear expects {in_f} features, got {}",
                    x.len()
                )));
            }
            let w = &params[*offset..*offset + out_f * in_f];
            let b = &params[*offset + out_f * in_f..*offset + out_f * in_f + out_f];
            let mut y = Vec::with_capacity(*out_f);
            for o in 0..*out_f {
                let row = &w[o * in_f..(o + 1) * in_f];
                let mut acc = b[o];
                for (wi, xi) in row.iter().zip(&x) {
                    acc += wi * xi;
                }
                y.push(acc);
            }
            Ok((Value::Flat(y), Cache::Linear { input: x }))
        }
        Layer::Residual(inner) => {
            let x = input.spatial("residual block")?;
            let mut v = Value::Spatial(x.clone());
            let mut caches = Vec::with_capacity(inner.len());
            for l in inner {
                let (nv, c) = forward_layer(l, params, v)?;
                v = nv;
                caches.push(c);
            }
            let mut y = v.spatial("residual inner output")?;
            if y.data().len() != x.data().len() {
                return Err(NnError::ShapeMismatch(
                    "residual inner pipeline must preserve shape".into(),
                ));
            }
            for (o, i) in y.data_mut().iter_mut().zip(x.data()) {
                *o += i;
            }
            Ok((Value::Spatial(y), Cache::Residual(caches)))
        }
    }
}

/// Propagates `grad_out` back through `layer`, accumulating parameter
/// gradients into `grad` and returning the gradient w.r.t. the layer input.
pub(crate) fn backward_layer(
    layer: &Layer,
    params: &[f64],
    cache: &Cache,
    grad_out: Value,
    grad: &mut [f64],
) -> Result<Value, NnError> {
    match (layer, cache) {
        (
            Layer::Conv3x3 {
                in_ch,
                out_ch,
                offset,
            },
            Cache::Conv { input },
        ) => {
            let dy = grad_out.spatial("conv backward")?;
            let w = &params[*offset..*offset + out_ch * in_ch * 9];
            let dw = &mut grad[*offset..*offset + out_ch * in_ch * 9];
            let dx = conv3x3_backward(input, w, &dy, *out_ch, dw);
            Ok(Value::Spatial(dx))
        }
        (
            Layer::GroupNorm {
                channels,
                groups,
                offset,
            },
            Cache::GroupNorm {
                input,
                mean,
                inv_std,
            },
        ) => {
            let dy = grad_out.spatial("group norm backward")?;
            let gamma = &params[*offset..*offset + channels];
            let dx = group_norm_backward(input, *groups, gamma, mean, inv_std, &dy, {
                let (dg, db) = grad[*offset..*offset + 2 * channels].split_at_mut(*channels);
                (dg, db)
            });
            Ok(Value::Spatial(dx))
        }
        (Layer::Act(a), Cache::Act { input }) => {
            let mut dy = grad_out.spatial("activation backward")?;
            for (g, &x) in dy.data_mut().iter_mut().zip(input.data()) {
                *g *= a.derivative(x);
            }
            Ok(Value::Spatial(dy))
        }
        (Layer::MaxPool2, Cache::MaxPool { arg, in_h, in_w }) => {
            let dy = grad_out.spatial("max pool backward")?;
            let mut dx = Tensor3::zeros(dy.channels(), *in_h, *in_w);
            for (cell, &src) in dy.data().iter().zip(arg) {
                dx.data_mut()[src] += cell;
            }
            Ok(Value::Spatial(dx))
        }
        (Layer::GlobalMaxPool, Cache::GlobalMaxPool { arg, in_h, in_w }) => {
            let dy = grad_out.flat("global max pool backward")?;
            let mut dx = Tensor3::zeros(dy.len(), *in_h, *in_w);
            for (&g, &src) in dy.iter().zip(arg) {
                dx.data_mut()[src] += g;
            }
            Ok(Value::Spatial(dx))
        }
        (Layer::Linear { in_f, out_f, offset }, Cache::Linear { input }) => {
            let dy = grad_out.flat("linear backward")?;
            let w = &params[*offset..*offset + out_f * in_f];
            let mut dx = vec![0.0; *in_f];
            for o in 0..*out_f {
                let g = dy[o];
                let row = &w[o * in_f..(o + 1) * in_f];
                let drow = &mut grad[*offset + o * in_f..*offset + (o + 1) * in_f];
                for i in 0..*in_f {
                    drow[i] += g * input[i];
                    dx[i] += g * row[i];
                }
            }
            let db = &mut grad[*offset + out_f * in_f..*offset + out_f * in_f + out_f];
            for (d, g) in db.iter_mut().zip(&dy) {
                *d += g;
            }
            Ok(Value::Flat(dx))
        }
        (Layer::Residual(inner), Cache::Residual(caches)) => {
            let dy = grad_out.spatial("residual backward")?;
            let mut v = Value::Spatial(dy.clone());
            for (l, c) in inner.iter().zip(caches).rev() {
                v = backward_layer(l, params, c, v, grad)?;
            }
            let mut dx = v.spatial("residual inner gradient")?;
            for (d, skip) in dx.data_mut().iter_mut().zip(dy.data()) {
                *d += skip;
            }
            Ok(Value::Spatial(dx))
        }
        _ => Err(NnError::ShapeMismatch(
            "forward cache does not match layer during backward".into(),
        )),
    }
}

fn conv3x3_forward(x: &Tensor3, w: &[f64], out_ch: usize) -> Tensor3 {
    let (c_in, h, wd) = (x.channels(), x.height(), x.width());
    let mut y = Tensor3::zeros(out_ch, h, wd);
    for o in 0..out_ch {
        for i in 0..c_in {
            let k = &w[(o * c_in + i) * 9..(o * c_in + i) * 9 + 9];
            let xin = x.channel(i);
            let plane = h * wd;
            let yout = &mut y.data_mut()[o * plane..(o + 1) * plane];
            for yy in 0..h {
                for xx in 0..wd {
                    let mut acc = 0.0;
                    for dy in 0..3usize {
                        let sy = yy as isize + dy as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for dx in 0..3usize {
                            let sx = xx as isize + dx as isize - 1;
                            if sx < 0 || sx >= wd as isize {
                                continue;
                            }
                            acc += k[dy * 3 + dx] * xin[sy as usize * wd + sx as usize];
                        }
                    }
                    yout[yy * wd + xx] += acc;
                }
            }
        }
    }
    y
}

fn conv3x3_backward(
    x: &Tensor3,
    w: &[f64],
    dy: &Tensor3,
    out_ch: usize,
    dw: &mut [f64],
) -> Tensor3 {
    let (c_in, h, wd) = (x.channels(), x.height(), x.width());
    let mut dx = Tensor3::zeros(c_in, h, wd);
    for o in 0..out_ch {
        let dout = dy.channel(o);
        for i in 0..c_in {
            let k = &w[(o * c_in + i) * 9..(o * c_in + i) * 9 + 9];
            let dk = &mut dw[(o * c_in + i) * 9..(o * c_in + i) * 9 + 9];
            let xin = x.channel(i);
            let plane = h * wd;
            let dxin = &mut dx.data_mut()[i * plane..(i + 1) * plane];
            for yy in 0..h {
                for xx in 0..wd {
                    let g = dout[yy * wd + xx];
                    if g == 0.0 {
                        continue;
                    }
                    for dyk in 0..3usize {
                        let sy = yy as isize + dyk as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for dxk in 0..3usize {
                            let sx = xx as isize + dxk as isize - 1;
                            if sx < 0 || sx >= wd as isize {
                                continue;
                            }
                            let idx = sy as usize * wd + sx as usize;
                            dk[dyk * 3 + dxk] += g * xin[idx];
                            dxin[idx] += g * k[dyk * 3 + dxk];
                        }
                    }
                }
            }
        }
    }
    dx
}

fn group_norm_forward(
    x: &Tensor3,
    groups: usize,
    gamma: &[f64],
    beta: &[f64],
) -> (Tensor3, Vec<f64>, Vec<f64>) {
    let (c, h, w) = (x.channels(), x.height(), x.width());
    let per_group = c / groups;
    let m = (per_group * h * w) as f64;
    let plane = h * w;
    let mut y = Tensor3::zeros(c, h, w);
    let mut means = Vec::with_capacity(groups);
    let mut inv_stds = Vec::with_capacity(groups);
    for g in 0..groups {
        let span = &x.data()[g * per_group * plane..(g + 1) * per_group * plane];
        let mean = span.iter().sum::<f64>() / m;
        let var = span.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
        let inv_std = 1.0 / (var + GROUP_NORM_EPS).sqrt();
        for cc in 0..per_group {
            let ch = g * per_group + cc;
            let xin = x.channel(ch);
            let yout = &mut y.data_mut()[ch * plane..(ch + 1) * plane];
            let (ga, be) = (gamma[ch], beta[ch]);
            for (o, &v) in yout.iter_mut().zip(xin) {
                *o = ga * (v - mean) * inv_std + be;
            }
        }
        means.push(mean);
        inv_stds.push(inv_std);
    }
    (y, means, inv_stds)
}

fn group_norm_backward(
    x: &Tensor3,
    groups: usize,
    gamma: &[f64],
    mean: &[f64],
    inv_std: &[f64],
    dy: &Tensor3,
    (dgamma, dbeta): (&mut [f64], &mut [f64]),
) -> Tensor3 {
    let (c, h, w) = (x.channels(), x.height(), x.width());
    let per_group = c / groups;
    let m = (per_group * h * w) as f64;
    let plane = h * w;
    let mut dx = Tensor3::zeros(c, h, w);
    for g in 0..groups {
        let (mu, istd) = (mean[g], inv_std[g]);
        // First pass: affine-parameter gradients and the two group sums of
        // dxhat and dxhat·xhat needed by the normalization backward.
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for cc in 0..per_group {
            let ch = g * per_group + cc;
            let xin = x.channel(ch);
            let dout = dy.channel(ch);
            let ga = gamma[ch];
            let mut dg = 0.0;
            let mut db = 0.0;
            for (&xv, &gv) in xin.iter().zip(dout) {
                let xhat = (xv - mu) * istd;
                dg += gv * xhat;
                db += gv;
                let dxhat = gv * ga;
                s1 += dxhat;
                s2 += dxhat * xhat;
            }
            dgamma[ch] += dg;
            dbeta[ch] += db;
        }
        let (c1, c2) = (s1 / m, s2 / m);
        for cc in 0..per_group {
            let ch = g * per_group + cc;
            let xin = x.channel(ch);
            let dout = dy.channel(ch);
            let ga = gamma[ch];
            let dxo = &mut dx.data_mut()[ch * plane..(ch + 1) * plane];
            for ((o, &xv), &gv) in dxo.iter_mut().zip(xin).zip(dout) {
                let xhat = (xv - mu) * istd;
                *o = istd * (gv * ga - c1 - xhat * c2);
            }
        }
    }
    dx
}

fn max_pool2_forward(x: &Tensor3) -> (Tensor3, Vec<usize>) {
    let (c, h, w) = (x.channels(), x.height(), x.width());
    let (oh, ow) = (h / 2, w / 2);
    let plane = h * w;
    let mut y = Tensor3::zeros(c, oh, ow);
    let mut arg = vec![0usize; c * oh * ow];
    for ch in 0..c {
        let xin = x.channel(ch);
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let idx = (oy * 2 + dy) * w + ox * 2 + dx;
                        if xin[idx] > best {
                            best = xin[idx];
                            best_idx = idx;
                        }
                    }
                }
                *y.at_mut(ch, oy, ox) = best;
                arg[(ch * oh + oy) * ow + ox] = ch * plane + best_idx;
            }
        }
    }
    (y, arg)
}
