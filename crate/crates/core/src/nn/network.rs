//! Layer stack with a single flat parameter vector, batched forward pass and
//! reverse-mode gradients.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// One layer. Features are flattened channel-major (`c · length + t`) for the
/// convolutional layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum LayerSpec {
    /// `y = W x + b`; parameters: `W` row-major (outputs × inputs), then `b`.
    Dense { inputs: usize, outputs: usize },
    Tanh { width: usize },
    /// Unpadded 1-D transposed convolution,
    /// `y[o][t·stride + k] += x[c][t] · W[c][o][k]`, plus `b[o]`.
    /// Parameters: `W` as `[in_channels][out_channels][kernel]`, then `b`.
    TransposedConv1d {
        in_channels: usize,
        out_channels: usize,
        in_length: usize,
        kernel: usize,
        stride: usize,
    },
    /// Keeps the middle `out_length` samples of each channel.
    CenterCrop {
        channels: usize,
        in_length: usize,
        out_length: usize,
    },
}

impl LayerSpec {
    pub fn transposed_out_length(in_length: usize, kernel: usize, stride: usize) -> usize {
        (in_length - 1) * stride + kernel
    }

    pub fn input_width(&self) -> usize {
        match *self {
            LayerSpec::Dense { inputs, .. } => inputs,
            LayerSpec::Tanh { width } => width,
            LayerSpec::TransposedConv1d {
                in_channels,
                in_length,
                ..
            } => in_channels * in_length,
            LayerSpec::CenterCrop {
                channels,
                in_length,
                ..
            } => channels * in_length,
        }
    }

    pub fn output_width(&self) -> usize {
        match *self {
            LayerSpec::Dense { outputs, .. } => outputs,
            LayerSpec::Tanh { width } => width,
            LayerSpec::TransposedConv1d {
                out_channels,
                in_length,
                kernel,
                stride,
                ..
            } => out_channels * Self::transposed_out_length(in_length, kernel, stride),
            LayerSpec::CenterCrop {
                channels,
                out_length,
                ..
            } => channels * out_length,
        }
    }

    pub fn n_params(&self) -> usize {
        match *self {
            LayerSpec::Dense { inputs, outputs } => outputs * inputs + outputs,
            LayerSpec::TransposedConv1d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => in_channels * out_channels * kernel + out_channels,
            _ => 0,
        }
    }

    fn glorot_bound(&self) -> Option<f64> {
        match *self {
            LayerSpec::Dense { inputs, outputs } => Some((6.0 / (inputs + outputs) as f64).sqrt()),
            LayerSpec::TransposedConv1d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((6.0 / ((in_channels + out_channels) * kernel) as f64).sqrt()),
            _ => None,
        }
    }

    fn n_weights(&self) -> usize {
        self.n_params()
            - match *self {
                LayerSpec::Dense { outputs, .. } => outputs,
                LayerSpec::TransposedConv1d { out_channels, .. } => out_channels,
                _ => 0,
            }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            LayerSpec::TransposedConv1d {
                in_channels,
                out_channels,
                in_length,
                kernel,
                stride,
            } => ensure!(
                in_channels > 0 && out_channels > 0 && in_length > 0 && kernel > 0 && stride > 0,
                "transposed convolution dimensions must be positive"
            ),
            LayerSpec::CenterCrop {
                in_length,
                out_length,
                ..
            } => ensure!(
                out_length <= in_length,
                "crop to {out_length} exceeds input length {in_length}"
            ),
            _ => {}
        }
        ensure!(
            self.input_width() > 0 && self.output_width() > 0,
            "layer widths must be positive"
        );
        Ok(())
    }
}

/// Feed-forward network; `params` holds every layer's parameters in layer
/// order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<LayerSpec>,
    pub params: Vec<f64>,
}

impl Network {
    /// Zero-initialized network after checking that consecutive widths agree.
    pub fn zeros(layers: Vec<LayerSpec>) -> Result<Self> {
        ensure!(!layers.is_empty(), "a network needs at least one layer");
        for l in &layers {
            l.validate()?;
        }
        for pair in layers.windows(2) {
            ensure!(
                pair[0].output_width() == pair[1].input_width(),
                "layer output width {} does not match next input width {}",
                pair[0].output_width(),
                pair[1].input_width()
            );
        }
        let n = layers.iter().map(LayerSpec::n_params).sum();
        Ok(Self {
            layers,
            params: vec![0.0; n],
        })
    }

    /// Glorot-uniform weights scaled by `scale`, zero biases.
    pub fn initialized<R: Rng + ?Sized>(layers: Vec<LayerSpec>, rng: &mut R, scale: f64) -> Result<Self> {
        let mut net = Self::zeros(layers)?;
        let mut offset = 0;
        for l in &net.layers {
            if let Some(bound) = l.glorot_bound() {
                let b = bound * scale;
                for w in &mut net.params[offset..offset + l.n_weights()] {
                    *w = rng.random_range(-b..=b);
                }
            }
            offset += l.n_params();
        }
        Ok(net)
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].input_width()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().expect("non-empty").output_width()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        forward_all(&self.layers, &self.params, x).pop().expect("non-empty")
    }

    /// Gradient w.r.t. parameters and inputs for an upstream gradient `d_out`.
    pub fn backward(&self, x: ArrayView2<f64>, d_out: ArrayView2<f64>) -> (Vec<f64>, Array2<f64>) {
        let acts = forward_all(&self.layers, &self.params, x);
        backward_all(&self.layers, &self.params, &acts, d_out.to_owned())
    }
}

/// Activations of every layer: `[input, out_1, …, out_L]`.
pub(crate) fn forward_all(layers: &[LayerSpec], params: &[f64], x: ArrayView2<f64>) -> Vec<Array2<f64>> {
    let mut acts = Vec::with_capacity(layers.len() + 1);
    acts.push(x.to_owned());
    let mut offset = 0;
    for l in layers {
        let p = &params[offset..offset + l.n_params()];
        let y = layer_forward(l, p, acts.last().unwrap().view());
        acts.push(y);
        offset += l.n_params();
    }
    acts
}

/// Parameter gradient (flat) and input gradient.
pub(crate) fn backward_all(
    layers: &[LayerSpec],
    params: &[f64],
    acts: &[Array2<f64>],
    mut grad: Array2<f64>,
) -> (Vec<f64>, Array2<f64>) {
    let mut g_params = vec![0.0; params.len()];
    let mut end = params.len();
    for (i, l) in layers.iter().enumerate().rev() {
        let start = end - l.n_params();
        grad = layer_backward(
            l,
            &params[start..end],
            acts[i].view(),
            acts[i + 1].view(),
            grad.view(),
            &mut g_params[start..end],
        );
        end = start;
    }
    (g_params, grad)
}

fn dense_views(p: &[f64], inputs: usize, outputs: usize) -> (ArrayView2<'_, f64>, &[f64]) {
    let (w, b) = p.split_at(inputs * outputs);
    (
        ArrayView2::from_shape((outputs, inputs), w).expect("dense shape"),
        b,
    )
}

fn layer_forward(l: &LayerSpec, p: &[f64], x: ArrayView2<f64>) -> Array2<f64> {
    let batch = x.nrows();
    match *l {
        LayerSpec::Dense { inputs, outputs } => {
            let (w, b) = dense_views(p, inputs, outputs);
            let mut y = x.dot(&w.t());
            for mut row in y.rows_mut() {
                row.iter_mut().zip(b).for_each(|(v, bi)| *v += bi);
            }
            y
        }
        LayerSpec::Tanh { .. } => x.mapv(f64::tanh),
        LayerSpec::TransposedConv1d {
            in_channels,
            out_channels,
            in_length,
            kernel,
            stride,
        } => {
            let out_len = LayerSpec::transposed_out_length(in_length, kernel, stride);
            let (w, b) = p.split_at(in_channels * out_channels * kernel);
            let mut y = Array2::zeros((batch, out_channels * out_len));
            for (xr, mut yr) in x.rows().into_iter().zip(y.rows_mut()) {
                let yr = yr.as_slice_mut().expect("contiguous");
                for o in 0..out_channels {
                    yr[o * out_len..(o + 1) * out_len].fill(b[o]);
                }
                for c in 0..in_channels {
                    for t in 0..in_length {
                        let xv = xr[c * in_length + t];
                        for o in 0..out_channels {
                            let wk = &w[(c * out_channels + o) * kernel..][..kernel];
                            let base = o * out_len + t * stride;
                            for k in 0..kernel {
                                yr[base + k] += xv * wk[k];
                            }
                        }
                    }
                }
            }
            y
        }
        LayerSpec::CenterCrop {
            channels,
            in_length,
            out_length,
        } => {
            let off = (in_length - out_length) / 2;
            let mut y = Array2::zeros((batch, channels * out_length));
            for c in 0..channels {
                y.slice_mut(s![.., c * out_length..(c + 1) * out_length])
                    .assign(&x.slice(s![.., c * in_length + off..c * in_length + off + out_length]));
            }
            y
        }
    }
}

fn layer_backward(
    l: &LayerSpec,
    p: &[f64],
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    dy: ArrayView2<f64>,
    g: &mut [f64],
) -> Array2<f64> {
    let batch = x.nrows();
    match *l {
        LayerSpec::Dense { inputs, outputs } => {
            let (w, _) = dense_views(p, inputs, outputs);
            let dw = dy.t().dot(&x);
            let db = dy.sum_axis(Axis(0));
            let (gw, gb) = g.split_at_mut(inputs * outputs);
            gw.iter_mut().zip(dw.iter()).for_each(|(a, b)| *a += b);
            gb.iter_mut().zip(db.iter()).for_each(|(a, b)| *a += b);
            dy.dot(&w)
        }
        LayerSpec::Tanh { .. } => {
            let mut dx = dy.to_owned();
            dx.zip_mut_with(&y, |d, &yv| *d *= 1.0 - yv * yv);
            dx
        }
        LayerSpec::TransposedConv1d {
            in_channels,
            out_channels,
            in_length,
            kernel,
            stride,
        } => {
            let out_len = LayerSpec::transposed_out_length(in_length, kernel, stride);
            let n_w = in_channels * out_channels * kernel;
            let (w, _) = p.split_at(n_w);
            let (gw, gb) = g.split_at_mut(n_w);
            let mut dx = Array2::zeros((batch, in_channels * in_length));
            for ((xr, dyr), mut dxr) in x.rows().into_iter().zip(dy.rows()).zip(dx.rows_mut()) {
                for o in 0..out_channels {
                    gb[o] += dyr.slice(s![o * out_len..(o + 1) * out_len]).sum();
                }
                for c in 0..in_channels {
                    for t in 0..in_length {
                        let xv = xr[c * in_length + t];
                        let mut acc = 0.0;
                        for o in 0..out_channels {
                            let widx = (c * out_channels + o) * kernel;
                            let base = o * out_len + t * stride;
                            for k in 0..kernel {
                                let d = dyr[base + k];
                                gw[widx + k] += xv * d;
                                acc += w[widx + k] * d;
                            }
                        }
                        dxr[c * in_length + t] = acc;
                    }
                }
            }
            dx
        }
        LayerSpec::CenterCrop {
            channels,
            in_length,
            out_length,
        } => {
            let off = (in_length - out_length) / 2;
            let mut dx = Array2::zeros((batch, channels * in_length));
            for c in 0..channels {
                dx.slice_mut(s![.., c * in_length + off..c * in_length + off + out_length])
                    .assign(&dy.slice(s![.., c * out_length..(c + 1) * out_length]));
            }
            dx
        }
    }
}

/// Mean squared error over all entries and its gradient w.r.t. `pred`.
pub fn mse_with_grad(pred: &Array2<f64>, target: ArrayView2<f64>) -> (f64, Array2<f64>) {
    let n = pred.len() as f64;
    let mut d = pred - &target;
    let loss = d.iter().map(|e| e * e).sum::<f64>() / n;
    d.mapv_inplace(|e| 2.0 * e / n);
    (loss, d)
}

/// Loss and flat parameter gradient of `layers` with `params` on a batch.
pub fn loss_and_grad(
    layers: &[LayerSpec],
    params: &[f64],
    x: ArrayView2<f64>,
    target: ArrayView2<f64>,
) -> (f64, Vec<f64>, Array2<f64>) {
    let acts = forward_all(layers, params, x);
    let pred = acts.last().unwrap();
    let (loss, d) = mse_with_grad(pred, target);
    let (g, _) = backward_all(layers, params, &acts, d);
    (loss, g, acts.into_iter().last().unwrap())
}
