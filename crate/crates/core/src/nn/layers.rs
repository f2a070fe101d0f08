use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Variance floor used by every group-normalization layer.
pub const GROUP_NORM_EPS: f64 = 1e-5;

/// Sigmoid inputs are saturated to this magnitude so outputs stay strictly
/// inside (0, 1) in double precision.
const LOGIT_LIMIT: f64 = 36.0;

/// One stage of the fixed layer chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Length-preserving convolution: stride 1, zero "same" padding, odd kernel.
    Conv1d {
        channels: usize,
        kernel: usize,
    },
    Relu,
    /// Non-overlapping mean over windows of `rate` positions.
    AvgPool1d {
        rate: usize,
    },
    /// Per-sample normalization over groups of channels, with per-channel
    /// learnable scale and shift.
    GroupNorm {
        groups: usize,
    },
    /// `y = x W + b` with `W` of shape `[inputs, outputs]`. A `[C, L]`
    /// activation is read as `C * L` features.
    FullyConnected {
        inputs: usize,
        outputs: usize,
    },
    Sigmoid,
    Flatten,
}

/// Per-sample shape of an activation between layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActivationShape {
    Sequence { channels: usize, length: usize },
    Features(usize),
}

impl ActivationShape {
    pub fn width(&self) -> usize {
        match *self {
            ActivationShape::Sequence { channels, length } => channels * length,
            ActivationShape::Features(n) => n,
        }
    }

    pub(crate) fn dims(&self) -> Vec<usize> {
        match *self {
            ActivationShape::Sequence { channels, length } => vec![channels, length],
            ActivationShape::Features(n) => vec![n],
        }
    }
}

/// Name, shape and fan-in of one parameter tensor.
pub(crate) struct ParamSpec {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub fan_in: usize,
    pub init: ParamInit,
}

#[derive(Clone, Copy)]
pub(crate) enum ParamInit {
    Uniform,
    Const(f64),
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::Relu => "relu",
            LayerSpec::AvgPool1d { .. } => "avg_pool1d",
            LayerSpec::GroupNorm { .. } => "group_norm",
            LayerSpec::FullyConnected { .. } => "fully_connected",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::Flatten => "flatten",
        }
    }

    /// Shape after this layer; `index` only labels errors.
    pub fn output_shape(&self, index: usize, input: ActivationShape) -> Result<ActivationShape> {
        let bad = |reason: String| Error::InvalidLayer { index, reason };
        let seq = |what: &str| match input {
            ActivationShape::Sequence { channels, length } => Ok((channels, length)),
            ActivationShape::Features(_) => Err(bad(format!("{what} needs a [channels, length] input"))),
        };
        match *self {
            LayerSpec::Conv1d { channels, kernel } => {
                let (_, length) = seq("conv1d")?;
                if channels == 0 || kernel == 0 {
                    return Err(bad("conv1d channels and kernel must be positive".into()));
                }
                if kernel % 2 == 0 {
                    return Err(bad(format!(
                        "conv1d kernel {kernel} is even; same padding needs odd kernels"
                    )));
                }
                Ok(ActivationShape::Sequence { channels, length })
            }
            LayerSpec::AvgPool1d { rate } => {
                let (channels, length) = seq("avg_pool1d")?;
                if rate == 0 || length % rate != 0 {
                    return Err(bad(format!("pool rate {rate} does not divide length {length}")));
                }
                Ok(ActivationShape::Sequence {
                    channels,
                    length: length / rate,
                })
            }
            LayerSpec::GroupNorm { groups } => {
                let (channels, _) = seq("group_norm")?;
                if groups == 0 || channels % groups != 0 {
                    return Err(bad(format!("{groups} groups do not divide {channels} channels")));
                }
                Ok(input)
            }
            LayerSpec::FullyConnected { inputs, outputs } => {
                if inputs == 0 || outputs == 0 {
                    return Err(bad("fully_connected sizes must be positive".into()));
                }
                if input.width() != inputs {
                    return Err(bad(format!(
                        "fully_connected expects {inputs} inputs, got {}",
                        input.width()
                    )));
                }
                Ok(ActivationShape::Features(outputs))
            }
            LayerSpec::Flatten => Ok(ActivationShape::Features(input.width())),
            LayerSpec::Relu | LayerSpec::Sigmoid => Ok(input),
        }
    }

    pub(crate) fn params(&self, input: ActivationShape) -> Vec<ParamSpec> {
        match *self {
            LayerSpec::Conv1d { channels, kernel } => {
                let in_channels = match input {
                    ActivationShape::Sequence { channels, .. } => channels,
                    ActivationShape::Features(_) => unreachable!("shape-checked"),
                };
                let fan_in = in_channels * kernel;
                vec![
                    ParamSpec {
                        name: "weight",
                        shape: vec![channels, in_channels, kernel],
                        fan_in,
                        init: ParamInit::Uniform,
                    },
                    ParamSpec {
                        name: "bias",
                        shape: vec![channels],
                        fan_in,
                        init: ParamInit::Uniform,
                    },
                ]
            }
            LayerSpec::GroupNorm { .. } => {
                let channels = match input {
                    ActivationShape::Sequence { channels, .. } => channels,
                    ActivationShape::Features(_) => unreachable!("shape-checked"),
                };
                vec![
                    ParamSpec {
                        name: "scale",
                        shape: vec![channels],
                        fan_in: 1,
                        init: ParamInit::Const(1.0),
                    },
                    ParamSpec {
                        name: "shift",
                        shape: vec![channels],
                        fan_in: 1,
                        init: ParamInit::Const(0.0),
                    },
                ]
            }
            LayerSpec::FullyConnected { inputs, outputs } => vec![
                ParamSpec {
                    name: "weight",
                    shape: vec![inputs, outputs],
                    fan_in: inputs,
                    init: ParamInit::Uniform,
                },
                ParamSpec {
                    name: "bias",
                    shape: vec![outputs],
                    fan_in: inputs,
                    init: ParamInit::Uniform,
                },
            ],
            LayerSpec::Relu | LayerSpec::AvgPool1d { .. } | LayerSpec::Sigmoid | LayerSpec::Flatten => Vec::new(),
        }
    }
}

/// What a layer keeps from its forward pass for the backward pass.
pub(crate) enum LayerCache {
    Input(Vec<f64>),
    GroupNorm { normalized: Vec<f64>, inv_std: Vec<f64> },
    Output(Vec<f64>),
    Nothing,
}

pub(crate) fn forward_layer(
    spec: &LayerSpec,
    input: ActivationShape,
    params: &[Tensor],
    x: Vec<f64>,
    batch: usize,
) -> (Vec<f64>, LayerCache) {
    match *spec {
        LayerSpec::Conv1d { channels, kernel } => {
            let (cin, len) = seq_dims(input);
            let y = conv1d_forward(
                &x,
                batch,
                cin,
                len,
                params[0].data(),
                params[1].data(),
                channels,
                kernel,
            );
            (y, LayerCache::Input(x))
        }
        LayerSpec::Relu => {
            let y = x.iter().map(|&v| v.max(0.0)).collect();
            (y, LayerCache::Input(x))
        }
        LayerSpec::AvgPool1d { rate } => {
            let y = avg_pool_forward(&x, rate);
            (y, LayerCache::Nothing)
        }
        LayerSpec::GroupNorm { groups } => {
            let (c, len) = seq_dims(input);
            let (normalized, inv_std) = normalize_groups(&x, batch, c, len, groups, GROUP_NORM_EPS);
            let y = scale_shift(&normalized, batch, c, len, params[0].data(), params[1].data());
            (y, LayerCache::GroupNorm { normalized, inv_std })
        }
        LayerSpec::FullyConnected { inputs, outputs } => {
            let y = linear_forward(&x, batch, inputs, outputs, params[0].data(), params[1].data());
            (y, LayerCache::Input(x))
        }
        LayerSpec::Sigmoid => {
            let y: Vec<f64> = x.iter().map(|&v| sigmoid(v)).collect();
            (y.clone(), LayerCache::Output(y))
        }
        LayerSpec::Flatten => (x, LayerCache::Nothing),
    }
}

/// Accumulates parameter gradients into `params` and returns the gradient
/// with respect to the layer input.
pub(crate) fn backward_layer(
    spec: &LayerSpec,
    input: ActivationShape,
    params: &mut [Tensor],
    cache: LayerCache,
    dy: Vec<f64>,
    batch: usize,
) -> Vec<f64> {
    match (*spec, cache) {
        (LayerSpec::Conv1d { channels, kernel }, LayerCache::Input(x)) => {
            let (cin, len) = seq_dims(input);
            let (w, rest) = params.split_at_mut(1);
            let wdata = w[0].data().to_vec();
            let mut dw = vec![0.0; wdata.len()];
            let mut db = vec![0.0; channels];
            let dx = conv1d_backward(&x, &dy, batch, cin, len, &wdata, channels, kernel, &mut dw, &mut db);
            add_into(w[0].grad_mut(), &dw);
            add_into(rest[0].grad_mut(), &db);
            dx
        }
        (LayerSpec::Relu, LayerCache::Input(x)) => x
            .iter()
            .zip(&dy)
            .map(|(&xv, &g)| if xv > 0.0 { g } else { 0.0 })
            .collect(),
        (LayerSpec::AvgPool1d { rate }, _) => {
            let inv = 1.0 / rate as f64;
            dy.iter().flat_map(|&g| std::iter::repeat_n(g * inv, rate)).collect()
        }
        (LayerSpec::GroupNorm { groups }, LayerCache::GroupNorm { normalized, inv_std }) => {
            let (c, len) = seq_dims(input);
            let (scale, shift) = params.split_at_mut(1);
            let gamma = scale[0].data().to_vec();
            let mut dgamma = vec![0.0; c];
            let mut dbeta = vec![0.0; c];
            let dx = group_norm_backward(
                &normalized,
                &inv_std,
                &dy,
                batch,
                c,
                len,
                groups,
                &gamma,
                &mut dgamma,
                &mut dbeta,
            );
            add_into(scale[0].grad_mut(), &dgamma);
            add_into(shift[0].grad_mut(), &dbeta);
            dx
        }
        (LayerSpec::FullyConnected { inputs, outputs }, LayerCache::Input(x)) => {
            let (w, rest) = params.split_at_mut(1);
            let wdata = w[0].data().to_vec();
            let mut dw = vec![0.0; wdata.len()];
            let mut db = vec![0.0; outputs];
            let dx = linear_backward(&x, &dy, batch, inputs, outputs, &wdata, &mut dw, &mut db);
            add_into(w[0].grad_mut(), &dw);
            add_into(rest[0].grad_mut(), &db);
            dx
        }
        (LayerSpec::Sigmoid, LayerCache::Output(y)) => y
            .iter()
            .zip(&dy)
            .map(|(&s, &g)| {
                if s <= sigmoid(-LOGIT_LIMIT) || s >= sigmoid(LOGIT_LIMIT) {
                    0.0
                } else {
                    g * s * (1.0 - s)
                }
            })
            .collect(),
        (LayerSpec::Flatten, _) => dy,
        (spec, _) => unreachable!("cache does not match layer {}", spec.name()),
    }
}

fn seq_dims(shape: ActivationShape) -> (usize, usize) {
    match shape {
        ActivationShape::Sequence { channels, length } => (channels, length),
        ActivationShape::Features(_) => unreachable!("shape-checked"),
    }
}

fn add_into(acc: &mut [f64], delta: &[f64]) {
    acc.iter_mut().zip(delta).for_each(|(a, d)| *a += d);
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    let v = v.clamp(-LOGIT_LIMIT, LOGIT_LIMIT);
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[allow(clippy::too_many_arguments)]
fn conv1d_forward(
    x: &[f64],
    batch: usize,
    cin: usize,
    len: usize,
    w: &[f64],
    bias: &[f64],
    cout: usize,
    kernel: usize,
) -> Vec<f64> {
    let pad = kernel / 2;
    let mut y = vec![0.0; batch * cout * len];
    for b in 0..batch {
        for o in 0..cout {
            let out = &mut y[(b * cout + o) * len..(b * cout + o + 1) * len];
            out.iter_mut().for_each(|v| *v = bias[o]);
            for i in 0..cin {
                let xs = &x[(b * cin + i) * len..(b * cin + i + 1) * len];
                let ws = &w[(o * cin + i) * kernel..(o * cin + i + 1) * kernel];
                for (k, &wv) in ws.iter().enumerate() {
                    // out[t] += wv * xs[t + k - pad] for every t that stays in range
                    let lo = pad.saturating_sub(k);
                    let hi = (len + pad).saturating_sub(k).min(len);
                    if lo >= hi {
                        continue;
                    }
                    let src = &xs[lo + k - pad..hi + k - pad];
                    out[lo..hi].iter_mut().zip(src).for_each(|(o, &s)| *o += wv * s);
                }
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn conv1d_backward(
    x: &[f64],
    dy: &[f64],
    batch: usize,
    cin: usize,
    len: usize,
    w: &[f64],
    cout: usize,
    kernel: usize,
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let pad = kernel / 2;
    let mut dx = vec![0.0; batch * cin * len];
    for b in 0..batch {
        for o in 0..cout {
            let g = &dy[(b * cout + o) * len..(b * cout + o + 1) * len];
            db[o] += g.iter().sum::<f64>();
            for i in 0..cin {
                let xs = &x[(b * cin + i) * len..(b * cin + i + 1) * len];
                let dxs = &mut dx[(b * cin + i) * len..(b * cin + i + 1) * len];
                let base = (o * cin + i) * kernel;
                for k in 0..kernel {
                    let lo = pad.saturating_sub(k);
                    let hi = (len + pad).saturating_sub(k).min(len);
                    if lo >= hi {
                        continue;
                    }
                    let wv = w[base + k];
                    let src = &xs[lo + k - pad..hi + k - pad];
                    let mut acc = 0.0;
                    for (gv, sv) in g[lo..hi].iter().zip(src) {
                        acc += gv * sv;
                    }
                    dw[base + k] += acc;
                    dxs[lo + k - pad..hi + k - pad]
                        .iter_mut()
                        .zip(&g[lo..hi])
                        .for_each(|(d, &gv)| *d += wv * gv);
                }
            }
        }
    }
    dx
}

fn avg_pool_forward(x: &[f64], rate: usize) -> Vec<f64> {
    let inv = 1.0 / rate as f64;
    x.chunks_exact(rate).map(|w| w.iter().sum::<f64>() * inv).collect()
}

/// Returns the normalized activations and one inverse standard deviation per
/// (sample, group).
fn normalize_groups(
    x: &[f64],
    batch: usize,
    channels: usize,
    len: usize,
    groups: usize,
    eps: f64,
) -> (Vec<f64>, Vec<f64>) {
    let span = channels / groups * len;
    let mut out = vec![0.0; x.len()];
    let mut inv_std = Vec::with_capacity(batch * groups);
    for (chunk, dst) in x.chunks_exact(span).zip(out.chunks_exact_mut(span)) {
        let n = span as f64;
        let mean = chunk.iter().sum::<f64>() / n;
        let var = chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + eps).sqrt();
        for (d, &v) in dst.iter_mut().zip(chunk) {
            *d = (v - mean) * inv;
        }
        inv_std.push(inv);
    }
    (out, inv_std)
}

fn scale_shift(xhat: &[f64], batch: usize, channels: usize, len: usize, scale: &[f64], shift: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; xhat.len()];
    for b in 0..batch {
        for c in 0..channels {
            let at = (b * channels + c) * len;
            for t in at..at + len {
                y[t] = scale[c] * xhat[t] + shift[c];
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn group_norm_backward(
    xhat: &[f64],
    inv_std: &[f64],
    dy: &[f64],
    batch: usize,
    channels: usize,
    len: usize,
    groups: usize,
    gamma: &[f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Vec<f64> {
    let per_group = channels / groups;
    let span = per_group * len;
    let n = span as f64;
    let mut dx = vec![0.0; xhat.len()];
    let mut dxhat = vec![0.0; span];
    for b in 0..batch {
        for g in 0..groups {
            let start = (b * channels + g * per_group) * len;
            let mut sum_d = 0.0;
            let mut sum_dx = 0.0;
            for (j, slot) in dxhat.iter_mut().enumerate() {
                let c = g * per_group + j / len;
                let t = start + j;
                dgamma[c] += dy[t] * xhat[t];
                dbeta[c] += dy[t];
                *slot = dy[t] * gamma[c];
                sum_d += *slot;
                sum_dx += *slot * xhat[t];
            }
            let inv = inv_std[b * groups + g];
            for (j, &d) in dxhat.iter().enumerate() {
                let t = start + j;
                dx[t] = inv / n * (n * d - sum_d - xhat[t] * sum_dx);
            }
        }
    }
    dx
}

fn linear_forward(x: &[f64], batch: usize, inputs: usize, outputs: usize, w: &[f64], bias: &[f64]) -> Vec<f64> {
    let mut y = Vec::with_capacity(batch * outputs);
    for b in 0..batch {
        let mut row = bias.to_vec();
        for (i, &xv) in x[b * inputs..(b + 1) * inputs].iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let wr = &w[i * outputs..(i + 1) * outputs];
            row.iter_mut().zip(wr).for_each(|(r, &wv)| *r += xv * wv);
        }
        y.extend(row);
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn linear_backward(
    x: &[f64],
    dy: &[f64],
    batch: usize,
    inputs: usize,
    outputs: usize,
    w: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; batch * inputs];
    for b in 0..batch {
        let g = &dy[b * outputs..(b + 1) * outputs];
        add_into(db, g);
        let xs = &x[b * inputs..(b + 1) * inputs];
        for i in 0..inputs {
            let wr = &w[i * outputs..(i + 1) * outputs];
            dx[b * inputs + i] = wr.iter().zip(g).map(|(a, b)| a * b).sum();
            let xv = xs[i];
            dw[i * outputs..(i + 1) * outputs]
                .iter_mut()
                .zip(g)
                .for_each(|(d, &gv)| *d += xv * gv);
        }
    }
    dx
}

/// Stand-alone group normalization of a `[B, C, L]` tensor.
pub fn group_norm_forward(x: &Tensor, groups: usize, scale: &[f64], shift: &[f64], eps: f64) -> Result<Tensor> {
    let [batch, channels, len] = x.shape() else {
        return Err(Error::dim(format!("group norm expects [B, C, L], got {:?}", x.shape())));
    };
    let (batch, channels, len) = (*batch, *channels, *len);
    if groups == 0 || channels % groups != 0 {
        return Err(Error::Config(format!(
            "{groups} groups do not divide {channels} channels"
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::arg("group norm eps must be positive"));
    }
    if scale.len() != channels || shift.len() != channels {
        return Err(Error::dim("scale and shift need one value per channel"));
    }
    let (xhat, _) = normalize_groups(x.data(), batch, channels, len, groups, eps);
    Tensor::new(
        x.shape().to_vec(),
        scale_shift(&xhat, batch, channels, len, scale, shift),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(channels: usize, length: usize) -> ActivationShape {
        ActivationShape::Sequence { channels, length }
    }

    #[test]
    fn constant_input_normalizes_to_zero() {
        let x = Tensor::filled(vec![2, 4, 3], 7.5);
        let y = group_norm_forward(&x, 2, &[1.0; 4], &[0.0; 4], GROUP_NORM_EPS).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_variance_pair_is_preserved() {
        let x = Tensor::new(vec![1, 1, 2], vec![1.0, -1.0]).unwrap();
        let y = group_norm_forward(&x, 1, &[1.0], &[0.0], 1e-12).unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-9);
        assert!((y.data()[1] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_scale_gives_shift() {
        let x = Tensor::new(vec![1, 2, 3], vec![0.3, -2.0, 5.0, 1.0, 1.5, 0.0]).unwrap();
        let y = group_norm_forward(&x, 2, &[0.0, 0.0], &[0.25, 0.25], GROUP_NORM_EPS).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn group_count_must_divide_channels() {
        let x = Tensor::zeros(vec![1, 3, 2]);
        assert!(matches!(
            group_norm_forward(&x, 2, &[1.0; 3], &[0.0; 3], GROUP_NORM_EPS),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn pool_must_divide_length() {
        let err = LayerSpec::AvgPool1d { rate: 3 }.output_shape(4, seq(2, 8)).unwrap_err();
        assert!(matches!(err, Error::InvalidLayer { index: 4, .. }));
        assert_eq!(
            LayerSpec::AvgPool1d { rate: 4 }.output_shape(0, seq(2, 8)).unwrap(),
            seq(2, 2)
        );
    }

    #[test]
    fn even_kernels_are_rejected() {
        assert!(LayerSpec::Conv1d { channels: 2, kernel: 4 }
            .output_shape(0, seq(1, 8))
            .is_err());
    }

    #[test]
    fn conv_identity_kernel_copies_input() {
        // kernel [0, 1, 0] with zero bias is the identity under same padding
        let x = vec![1.0, 2.0, 3.0, 4.0];
        let y = conv1d_forward(&x, 1, 1, 4, &[0.0, 1.0, 0.0], &[0.0], 1, 3);
        assert_eq!(y, x);
        // kernel [1, 0, 0] shifts right, padding with zero
        let y = conv1d_forward(&x, 1, 1, 4, &[1.0, 0.0, 0.0], &[0.0], 1, 3);
        assert_eq!(y, vec![0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn pooling_then_upsampling_keeps_window_sums() {
        let x: Vec<f64> = (0..12).map(|v| (v as f64).sin()).collect();
        let pooled = avg_pool_forward(&x, 4);
        let up: Vec<f64> = pooled.iter().flat_map(|&m| std::iter::repeat_n(m, 4)).collect();
        for (a, b) in x.chunks(4).zip(up.chunks(4)) {
            let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
            assert!((sa - sb).abs() < 1e-12);
        }
    }

    #[test]
    fn sigmoid_stays_open() {
        for v in [-1e6, -40.0, 0.0, 40.0, 1e6] {
            let s = sigmoid(v);
            assert!(s > 0.0 && s < 1.0, "{v} -> {s}");
        }
        assert_eq!(sigmoid(0.0), 0.5);
    }
}
