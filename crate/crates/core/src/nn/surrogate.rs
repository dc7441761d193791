//! Neural surrogate models of the mesh: the single-wavelength network and
//! the five multi-wavelength variants.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::network::{LayerSpec, Network};
use super::normalize::{voltage_features, MinMax, NormalizationSpec};
use super::train::{train_network, TrainOptions, TrainingData, TrainingHistory};
use crate::dataset::WeightDataset;
use crate::error::{ensure, Result};
use crate::mesh::{Voltages, Weights, MAX_VOLTAGE, N_MZI, N_WEIGHTS, WEIGHT_FLOOR_DB};
use crate::numopt::{bfgs_minimize, Problem, QuasiNewtonOptions};
use crate::wavelength::WavelengthGrid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SurrogateKind {
    /// One network at a single wavelength.
    #[serde(rename = "nn-sw")]
    NnSw,
    /// Single-wavelength core plus a per-channel dB offset.
    #[serde(rename = "nn-lambda-r")]
    NnLambdaR,
    /// One independent network per channel.
    #[serde(rename = "nn-lambda-s")]
    NnLambdaS,
    /// One network with the normalized wavelength as an extra input.
    #[serde(rename = "nn-lambda-g")]
    NnLambdaG,
    /// Dense layers followed by a transposed convolution emitting every
    /// channel at once.
    #[serde(rename = "tcnn")]
    Tcnn,
    /// The transposed-convolution model sized for 100 channels.
    #[serde(rename = "tcnn-100")]
    Tcnn100,
}

impl SurrogateKind {
    pub const ALL: [SurrogateKind; 6] = [
        SurrogateKind::NnSw,
        SurrogateKind::NnLambdaR,
        SurrogateKind::NnLambdaS,
        SurrogateKind::NnLambdaG,
        SurrogateKind::Tcnn,
        SurrogateKind::Tcnn100,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SurrogateKind::NnSw => "nn-sw",
            SurrogateKind::NnLambdaR => "nn-lambda-r",
            SurrogateKind::NnLambdaS => "nn-lambda-s",
            SurrogateKind::NnLambdaG => "nn-lambda-g",
            SurrogateKind::Tcnn => "tcnn",
            SurrogateKind::Tcnn100 => "tcnn-100",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn is_multi_wavelength(self) -> bool {
        self != SurrogateKind::NnSw
    }
}

/// Transposed-convolution output stage: the last hidden layer is read as
/// `in_channels` channels and expanded to 9 weight channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvStage {
    pub in_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateArchitecture {
    pub kind: SurrogateKind,
    /// Hidden dense layer widths, each followed by tanh.
    pub hidden: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conv: Option<ConvStage>,
}

impl SurrogateArchitecture {
    pub fn default_for(kind: SurrogateKind) -> Self {
        let conv = |in_channels, kernel| {
            Some(ConvStage {
                in_channels,
                kernel,
                stride: 2,
            })
        };
        match kind {
            SurrogateKind::NnSw | SurrogateKind::NnLambdaR | SurrogateKind::NnLambdaS => Self {
                kind,
                hidden: vec![64, 64],
                conv: None,
            },
            SurrogateKind::NnLambdaG => Self {
                kind,
                hidden: vec![96, 96],
                conv: None,
            },
            SurrogateKind::Tcnn => Self {
                kind,
                hidden: vec![54, 90],
                conv: conv(45, 8),
            },
            SurrogateKind::Tcnn100 => Self {
                kind,
                hidden: vec![128, 900],
                conv: conv(18, 4),
            },
        }
    }

    pub fn input_width(&self) -> usize {
        2 * N_MZI + usize::from(self.kind == SurrogateKind::NnLambdaG)
    }

    /// Layer stack for a grid of `n_channels` channels.
    pub fn layers(&self, n_channels: usize) -> Result<Vec<LayerSpec>> {
        ensure!(!self.hidden.is_empty(), "at least one hidden layer is required");
        let mut layers = Vec::new();
        let mut width = self.input_width();
        for &h in &self.hidden {
            layers.push(LayerSpec::Dense {
                inputs: width,
                outputs: h,
            });
            layers.push(LayerSpec::Tanh { width: h });
            width = h;
        }
        match (&self.conv, self.kind) {
            (Some(c), SurrogateKind::Tcnn | SurrogateKind::Tcnn100) => {
                ensure!(
                    width % c.in_channels == 0,
                    "last hidden width {} is not a multiple of {} channels",
                    width,
                    c.in_channels
                );
                let in_length = width / c.in_channels;
                let out_len = LayerSpec::transposed_out_length(in_length, c.kernel, c.stride);
                ensure!(
                    out_len >= n_channels,
                    "transposed convolution yields {out_len} samples for {n_channels} channels"
                );
                layers.push(LayerSpec::TransposedConv1d {
                    in_channels: c.in_channels,
                    out_channels: N_WEIGHTS,
                    in_length,
                    kernel: c.kernel,
                    stride: c.stride,
                });
                layers.push(LayerSpec::CenterCrop {
                    channels: N_WEIGHTS,
                    in_length: out_len,
                    out_length: n_channels,
                });
            }
            (None, SurrogateKind::Tcnn | SurrogateKind::Tcnn100) => {
                return Err(crate::Error::Contract(
                    "transposed-convolution models need a conv stage".into(),
                ))
            }
            (Some(_), _) => {
                return Err(crate::Error::Contract(format!(
                    "{} does not take a conv stage",
                    self.kind.name()
                )))
            }
            (None, _) => layers.push(LayerSpec::Dense {
                inputs: width,
                outputs: N_WEIGHTS,
            }),
        }
        Ok(layers)
    }
}

/// A network together with its input/output scaling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedNet {
    pub network: Network,
    pub normalization: NormalizationSpec,
}

impl TrainedNet {
    fn normalize_inputs(&self, rows: &[Vec<f64>]) -> Array2<f64> {
        let w = self.normalization.inputs.width();
        Array2::from_shape_fn((rows.len(), w), |(i, j)| {
            self.normalization.inputs.normalize(j, rows[i][j])
        })
    }

    /// Denormalized outputs, one row per input row.
    pub fn predict_rows(&self, rows: &[Vec<f64>]) -> Array2<f64> {
        let x = self.normalize_inputs(rows);
        let mut y = self.network.forward(x.view());
        let out = &self.normalization.outputs;
        for mut row in y.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = out.denormalize(j, *v);
            }
        }
        y
    }

    /// Gradient of `Σⱼ upstream[j]·outⱼ` w.r.t. the raw input features.
    pub fn input_vjp(&self, row: &[f64], upstream: &[f64]) -> Vec<f64> {
        let x = self.normalize_inputs(&[row.to_vec()]);
        let out = &self.normalization.outputs;
        let up = Array2::from_shape_fn((1, upstream.len()), |(_, j)| upstream[j] * out.half_range(j));
        let (_, dx) = self.network.backward(x.view(), up.view());
        let inp = &self.normalization.inputs;
        (0..row.len())
            .map(|j| {
                let h = inp.half_range(j);
                if h > 0.0 {
                    dx[(0, j)] / h
                } else {
                    0.0
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingProvenance {
    pub seed: u64,
    pub n_training: usize,
    pub n_validation: usize,
    pub training_hash: String,
    /// Best-checkpoint epoch of each network.
    pub best_epochs: Vec<usize>,
    pub best_validation_rmse_db: Vec<f64>,
}

/// A trained surrogate. Predictions are 9 × N_λ over `grid`, floored at
/// −60 dB.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedSurrogate {
    pub architecture: SurrogateArchitecture,
    pub grid: WavelengthGrid,
    /// Channel the single-wavelength core was trained on (NN-SW, NN-λR).
    pub reference_channel: usize,
    /// One network, or one per channel for NN-λS.
    pub nets: Vec<TrainedNet>,
    /// NN-λR per-channel dB offsets, zero at the reference channel.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub offsets_db: Vec<f64>,
    pub provenance: TrainingProvenance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateTrainOptions {
    pub train: TrainOptions,
    /// Channel for the single-wavelength core; the grid's reference channel
    /// when unset.
    pub channel: Option<usize>,
}

impl Default for SurrogateTrainOptions {
    fn default() -> Self {
        Self {
            train: TrainOptions::default(),
            channel: None,
        }
    }
}

fn feature_rows(ds: &WeightDataset) -> Vec<Vec<f64>> {
    ds.records.iter().map(|r| voltage_features(&r.voltages_v).to_vec()).collect()
}

fn weights_at(ds: &WeightDataset, k: usize) -> Vec<Vec<f64>> {
    ds.records
        .iter()
        .map(|r| r.at_channel(k).map(|w| w.max(WEIGHT_FLOOR_DB)).to_vec())
        .collect()
}

fn all_weights(ds: &WeightDataset) -> Vec<Vec<f64>> {
    ds.records
        .iter()
        .map(|r| r.weights_db.iter().flatten().map(|w| w.max(WEIGHT_FLOOR_DB)).collect())
        .collect()
}

fn with_wavelength(rows: &[Vec<f64>], grid: &WavelengthGrid) -> Vec<Vec<f64>> {
    rows.iter()
        .flat_map(|r| {
            (0..grid.n_channels).map(move |k| {
                let mut row = r.clone();
                row.push(grid.normalized(k));
                row
            })
        })
        .collect()
}

fn expand_weights(ds: &WeightDataset) -> Vec<Vec<f64>> {
    ds.records
        .iter()
        .flat_map(|r| (0..ds.n_channels()).map(move |k| r.at_channel(k).map(|w| w.max(WEIGHT_FLOOR_DB)).to_vec()))
        .collect()
}

fn normalized(mm: &MinMax, rows: &[Vec<f64>]) -> Array2<f64> {
    Array2::from_shape_fn((rows.len(), mm.width()), |(i, j)| mm.normalize(j, rows[i][j]))
}

/// Fits the scaling on the training rows, then trains one network.
fn fit_net(
    layers: &[LayerSpec],
    x_train: &[Vec<f64>],
    y_train: &[Vec<f64>],
    x_val: &[Vec<f64>],
    y_val: &[Vec<f64>],
    seed: u64,
    opts: &TrainOptions,
) -> Result<(TrainedNet, TrainingHistory)> {
    let inputs = MinMax::fit(x_train.iter().map(Vec::as_slice), x_train[0].len())?;
    let outputs = MinMax::fit(y_train.iter().map(Vec::as_slice), y_train[0].len())?;
    let (xt, yt) = (normalized(&inputs, x_train), normalized(&outputs, y_train));
    let (xv, yv) = (normalized(&inputs, x_val), normalized(&outputs, y_val));
    let half: Vec<f64> = (0..outputs.width()).map(|j| outputs.half_range(j)).collect();
    let (network, history) = train_network(
        layers,
        &TrainingData { x: xt.view(), y: yt.view() },
        &TrainingData { x: xv.view(), y: yv.view() },
        &half,
        seed,
        opts,
    )?;
    Ok((
        TrainedNet {
            network,
            normalization: NormalizationSpec { inputs, outputs },
        },
        history,
    ))
}

/// Trains a surrogate of the given architecture. The validation set drives
/// early stopping (and, for NN-λR, the per-channel offsets).
pub fn train_surrogate(
    arch: &SurrogateArchitecture,
    training: &WeightDataset,
    validation: &WeightDataset,
    seed: u64,
    opts: &SurrogateTrainOptions,
) -> Result<(TrainedSurrogate, Vec<TrainingHistory>)> {
    ensure!(!training.is_empty(), "training set is empty");
    ensure!(!validation.is_empty(), "validation set is empty");
    ensure!(
        training.grid == validation.grid,
        "training and validation sets use different wavelength grids"
    );
    let grid = training.grid.clone();
    let n_ch = grid.n_channels;
    let channel = opts.channel.unwrap_or(grid.reference_index);
    ensure!(channel < n_ch, "channel {channel} out of range for {n_ch} channels");
    if arch.kind.is_multi_wavelength() {
        ensure!(n_ch >= 2, "{} needs a multi-channel dataset", arch.kind.name());
    }
    let layers = arch.layers(if matches!(arch.kind, SurrogateKind::Tcnn | SurrogateKind::Tcnn100) {
        n_ch
    } else {
        1
    })?;
    let xt = feature_rows(training);
    let xv = feature_rows(validation);
    let o = &opts.train;

    let mut nets = Vec::new();
    let mut histories = Vec::new();
    let mut offsets = Vec::new();
    let mut model_grid = grid.clone();
    let mut reference_channel = channel;
    match arch.kind {
        SurrogateKind::NnSw => {
            let (net, h) = fit_net(&layers, &xt, &weights_at(training, channel), &xv, &weights_at(validation, channel), seed, o)?;
            nets.push(net);
            histories.push(h);
            model_grid = grid.channel(channel);
            reference_channel = 0;
        }
        SurrogateKind::NnLambdaR => {
            let (net, h) = fit_net(&layers, &xt, &weights_at(training, channel), &xv, &weights_at(validation, channel), seed, o)?;
            offsets = fit_offsets(&net, validation, channel)?;
            nets.push(net);
            histories.push(h);
        }
        SurrogateKind::NnLambdaS => {
            for k in 0..n_ch {
                let (net, h) = fit_net(&layers, &xt, &weights_at(training, k), &xv, &weights_at(validation, k), seed, o)?;
                nets.push(net);
                histories.push(h);
            }
        }
        SurrogateKind::NnLambdaG => {
            let (net, h) = fit_net(
                &layers,
                &with_wavelength(&xt, &grid),
                &expand_weights(training),
                &with_wavelength(&xv, &grid),
                &expand_weights(validation),
                seed,
                o,
            )?;
            nets.push(net);
            histories.push(h);
        }
        SurrogateKind::Tcnn | SurrogateKind::Tcnn100 => {
            let (net, h) = fit_net(&layers, &xt, &all_weights(training), &xv, &all_weights(validation), seed, o)?;
            nets.push(net);
            histories.push(h);
        }
    }
    let provenance = TrainingProvenance {
        seed,
        n_training: training.len(),
        n_validation: validation.len(),
        training_hash: training.content_hash(),
        best_epochs: histories.iter().map(|h| h.best_epoch).collect(),
        best_validation_rmse_db: histories.iter().map(|h| h.best_validation_rmse_db).collect(),
    };
    Ok((
        TrainedSurrogate {
            architecture: arch.clone(),
            grid: model_grid,
            reference_channel,
            nets,
            offsets_db: offsets,
            provenance,
        },
        histories,
    ))
}

/// Per-channel additive dB offsets minimizing the validation MSE of the
/// core network's (floored) predictions, with the reference channel pinned
/// at zero.
fn fit_offsets(core: &TrainedNet, validation: &WeightDataset, reference: usize) -> Result<Vec<f64>> {
    let pred = core.predict_rows(&feature_rows(validation));
    let n_ch = validation.n_channels();
    let mut offsets = vec![0.0; n_ch];
    for (k, slot) in offsets.iter_mut().enumerate() {
        if k == reference {
            continue;
        }
        let labels = weights_at(validation, k);
        let pairs: Vec<(f64, f64)> = pred
            .rows()
            .into_iter()
            .zip(&labels)
            .flat_map(|(p, l)| p.to_vec().into_iter().zip(l.clone()))
            .collect();
        let mean_residual = pairs.iter().map(|(p, l)| l - p).sum::<f64>() / pairs.len() as f64;
        let objective = |b: &[f64], g: &mut [f64]| {
            let mut f = 0.0;
            let mut d = 0.0;
            for &(p, l) in &pairs {
                let shifted = p + b[0];
                if shifted > WEIGHT_FLOOR_DB {
                    let e = shifted - l;
                    f += e * e;
                    d += 2.0 * e;
                } else {
                    let e = WEIGHT_FLOOR_DB - l;
                    f += e * e;
                }
            }
            let n = pairs.len() as f64;
            g[0] = d / n;
            f / n
        };
        let report = bfgs_minimize(Problem::new(vec![mean_residual], objective), &QuasiNewtonOptions::bfgs());
        *slot = report.x[0];
    }
    Ok(offsets)
}

fn check_voltages(v: &Voltages) -> Result<()> {
    ensure!(
        v.iter().all(|&x| (0.0..=MAX_VOLTAGE).contains(&x)),
        "heater voltages must lie in [0, {MAX_VOLTAGE}] V"
    );
    Ok(())
}

impl TrainedSurrogate {
    pub fn kind(&self) -> SurrogateKind {
        self.architecture.kind
    }

    pub fn n_channels(&self) -> usize {
        self.grid.n_channels
    }

    /// Predictions for many voltage vectors: `[record][weight][channel]`.
    pub fn predict_many(&self, vs: &[Voltages]) -> Result<Vec<Vec<Vec<f64>>>> {
        for v in vs {
            check_voltages(v)?;
        }
        let rows: Vec<Vec<f64>> = vs.iter().map(|v| voltage_features(v).to_vec()).collect();
        let n_ch = self.n_channels();
        let mut out = vec![vec![vec![0.0; n_ch]; N_WEIGHTS]; vs.len()];
        match self.kind() {
            SurrogateKind::NnSw | SurrogateKind::NnLambdaR => {
                let y = self.nets[0].predict_rows(&rows);
                for (r, row) in y.rows().into_iter().enumerate() {
                    for k in 0..n_ch {
                        let b = self.offsets_db.get(k).copied().unwrap_or(0.0);
                        for p in 0..N_WEIGHTS {
                            out[r][p][k] = row[p] + b;
                        }
                    }
                }
            }
            SurrogateKind::NnLambdaS => {
                for (k, net) in self.nets.iter().enumerate() {
                    let y = net.predict_rows(&rows);
                    for (r, row) in y.rows().into_iter().enumerate() {
                        for p in 0..N_WEIGHTS {
                            out[r][p][k] = row[p];
                        }
                    }
                }
            }
            SurrogateKind::NnLambdaG => {
                let y = self.nets[0].predict_rows(&with_wavelength(&rows, &self.grid));
                for (i, row) in y.rows().into_iter().enumerate() {
                    let (r, k) = (i / n_ch, i % n_ch);
                    for p in 0..N_WEIGHTS {
                        out[r][p][k] = row[p];
                    }
                }
            }
            SurrogateKind::Tcnn | SurrogateKind::Tcnn100 => {
                let y = self.nets[0].predict_rows(&rows);
                for (r, row) in y.rows().into_iter().enumerate() {
                    for p in 0..N_WEIGHTS {
                        for k in 0..n_ch {
                            out[r][p][k] = row[p * n_ch + k];
                        }
                    }
                }
            }
        }
        for w in out.iter_mut().flatten().flatten() {
            *w = w.max(WEIGHT_FLOOR_DB);
        }
        Ok(out)
    }

    /// 9 × N_λ prediction for one voltage vector.
    pub fn predict(&self, v: &Voltages) -> Result<Vec<Vec<f64>>> {
        Ok(self.predict_many(std::slice::from_ref(v))?.pop().unwrap())
    }

    pub fn predict_channel(&self, v: &Voltages, k: usize) -> Result<Weights> {
        ensure!(
            k < self.n_channels(),
            "channel {k} outside the model's {} channels",
            self.n_channels()
        );
        let all = self.predict(v)?;
        Ok(std::array::from_fn(|p| all[p][k]))
    }

    /// Prediction at channel `k` and the gradient of `Σₚ upstream[p]·wₚ`
    /// w.r.t. the voltages; floored outputs pass no gradient.
    pub fn predict_channel_with_vjp(&self, v: &Voltages, k: usize, upstream: &Weights) -> Result<(Weights, Voltages)> {
        let w = self.predict_channel(v, k)?;
        let n_ch = self.n_channels();
        let mut up = *upstream;
        for p in 0..N_WEIGHTS {
            if w[p] <= WEIGHT_FLOOR_DB {
                up[p] = 0.0;
            }
        }
        let mut row = voltage_features(v).to_vec();
        let (net, upstream_full): (&TrainedNet, Vec<f64>) = match self.kind() {
            SurrogateKind::NnSw | SurrogateKind::NnLambdaR => (&self.nets[0], up.to_vec()),
            SurrogateKind::NnLambdaS => (&self.nets[k], up.to_vec()),
            SurrogateKind::NnLambdaG => {
                row.push(self.grid.normalized(k));
                (&self.nets[0], up.to_vec())
            }
            SurrogateKind::Tcnn | SurrogateKind::Tcnn100 => {
                let mut full = vec![0.0; N_WEIGHTS * n_ch];
                for p in 0..N_WEIGHTS {
                    full[p * n_ch + k] = up[p];
                }
                (&self.nets[0], full)
            }
        };
        let du = net.input_vjp(&row, &upstream_full);
        let dv = std::array::from_fn(|m| du[m] + 2.0 * v[m] * du[N_MZI + m]);
        Ok((w, dv))
    }
}

/// Architecture sampled by [`hyperparameter_search`] and its score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchTrial {
    pub architecture: SurrogateArchitecture,
    pub validation_rmse_db: f64,
}

/// Random search over 1–3 hidden layers with log-uniform widths in
/// [16, 256], each trained with `opts` (typically a reduced epoch cap).
/// Returns the best architecture and every trial in sampling order.
pub fn hyperparameter_search(
    kind: SurrogateKind,
    budget: usize,
    training: &WeightDataset,
    validation: &WeightDataset,
    seed: u64,
    opts: &SurrogateTrainOptions,
) -> Result<(SurrogateArchitecture, Vec<SearchTrial>)> {
    use rand::Rng;
    ensure!(budget >= 1, "search budget must be at least 1");
    ensure!(
        !matches!(kind, SurrogateKind::Tcnn | SurrogateKind::Tcnn100),
        "hyperparameter search covers the dense architectures only"
    );
    let mut rng = crate::emulator::stream_rng(seed, 0x5ea7c4, 0);
    let mut trials = Vec::with_capacity(budget);
    for _ in 0..budget {
        let depth = rng.random_range(1..=3usize);
        let hidden = (0..depth)
            .map(|_| (rng.random_range(16f64.ln()..=256f64.ln())).exp().round() as usize)
            .collect();
        let arch = SurrogateArchitecture {
            kind,
            hidden,
            conv: None,
        };
        let (model, _) = train_surrogate(&arch, training, validation, seed, opts)?;
        let score = crate::eval::surrogate_rmse_db(&model, validation)?;
        trials.push(SearchTrial {
            architecture: arch,
            validation_rmse_db: score,
        });
    }
    let best = trials
        .iter()
        .min_by(|a, b| a.validation_rmse_db.total_cmp(&b.validation_rmse_db))
        .expect("budget ≥ 1")
        .architecture
        .clone();
    Ok((best, trials))
}
