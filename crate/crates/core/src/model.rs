//! A common interface over the analytic and neural forward models.

use serde::{Deserialize, Serialize};

use crate::analytic::{FitReport, SamModel, SamXtModel};
use crate::dataset::WeightDataset;
use crate::error::{ensure, Error, Result};
use crate::mesh::{
    extinction_field_ratio, power_term_with_ratio, MeshTopology, MziPhaseParams, Voltages,
    Weights, MAX_VOLTAGE, N_MZI, N_WEIGHTS,
};
use crate::nn::TrainedSurrogate;
use crate::wavelength::WavelengthGrid;

/// A fitted voltage→weight model. Analytic models describe one channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ForwardModel {
    Sam {
        grid: WavelengthGrid,
        model: SamModel,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fit: Option<FitReport>,
    },
    #[serde(rename = "samxt")]
    SamXt {
        grid: WavelengthGrid,
        model: SamXtModel,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fit: Option<FitReport>,
    },
    Surrogate { model: Box<TrainedSurrogate> },
}

impl ForwardModel {
    pub fn name(&self) -> &'static str {
        match self {
            ForwardModel::Sam { .. } => "sam",
            ForwardModel::SamXt { .. } => "samxt",
            ForwardModel::Surrogate { model } => model.kind().name(),
        }
    }

    pub fn grid(&self) -> &WavelengthGrid {
        match self {
            ForwardModel::Sam { grid, .. } | ForwardModel::SamXt { grid, .. } => grid,
            ForwardModel::Surrogate { model } => &model.grid,
        }
    }

    pub fn n_channels(&self) -> usize {
        self.grid().n_channels
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        crate::read_json(path)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::write_json(path, self)
    }

    /// Predictions `[record][weight][channel]` over the model's grid.
    pub fn predict_many(&self, vs: &[Voltages]) -> Result<Vec<Vec<Vec<f64>>>> {
        match self {
            ForwardModel::Surrogate { model } => model.predict_many(vs),
            _ => vs
                .iter()
                .map(|v| {
                    let w = self.predict_channel(v, 0)?;
                    Ok(w.iter().map(|&x| vec![x]).collect())
                })
                .collect(),
        }
    }

    pub fn predict_channel(&self, v: &Voltages, k: usize) -> Result<Weights> {
        ensure!(k < self.n_channels(), "channel {k} outside the model's {} channels", self.n_channels());
        match self {
            ForwardModel::Sam { model, .. } => {
                check_voltages(v)?;
                Ok(model.predict(v).weights_db)
            }
            ForwardModel::SamXt { model, .. } => {
                check_voltages(v)?;
                Ok(model.predict(v).weights_db)
            }
            ForwardModel::Surrogate { model } => model.predict_channel(v, k),
        }
    }

    /// Prediction at channel `k` and the gradient of `Σₚ upstream[p]·wₚ` (dB)
    /// with respect to the voltages. Floored weights pass no gradient.
    pub fn predict_channel_with_vjp(&self, v: &Voltages, k: usize, upstream: &Weights) -> Result<(Weights, Voltages)> {
        match self {
            ForwardModel::Sam { model, .. } => {
                check_voltages(v)?;
                Ok(analytic_vjp(&model.topology, &model.phase_params(), true, model.alpha.clone(), v, upstream))
            }
            ForwardModel::SamXt { model, .. } => {
                check_voltages(v)?;
                Ok(analytic_vjp(&model.topology, &model.params, false, model.alpha.clone(), v, upstream))
            }
            ForwardModel::Surrogate { model } => model.predict_channel_with_vjp(v, k, upstream),
        }
    }

    /// `ds` restricted to the model's channels: identical grids pass through,
    /// a single-channel model picks the matching channel of a wider dataset.
    pub fn align<'a>(&self, ds: &'a WeightDataset) -> Result<std::borrow::Cow<'a, WeightDataset>> {
        let grid = self.grid();
        if *grid == ds.grid {
            return Ok(std::borrow::Cow::Borrowed(ds));
        }
        if grid.n_channels == 1 {
            let lambda = grid.center_wavelengths_nm[0];
            let k = ds.grid.nearest_index(lambda);
            if (ds.grid.center_wavelengths_nm[k] - lambda).abs() <= 1e-6 {
                return Ok(std::borrow::Cow::Owned(ds.select_channel(k)));
            }
        }
        Err(Error::Contract(format!(
            "dataset grid ({} channels) does not contain the {} model's grid ({} channels)",
            ds.grid.n_channels,
            self.name(),
            grid.n_channels
        )))
    }
}

/// Which model to fit and how.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ModelKind {
    Sam,
    SamXt,
    Surrogate(crate::nn::SurrogateKind),
}

impl ModelKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sam" => Some(ModelKind::Sam),
            "samxt" | "sam+xt" => Some(ModelKind::SamXt),
            other => crate::nn::SurrogateKind::parse(other).map(ModelKind::Surrogate),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Sam => "sam",
            ModelKind::SamXt => "samxt",
            ModelKind::Surrogate(k) => k.name(),
        }
    }
}

impl TryFrom<String> for ModelKind {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        Self::parse(&s).ok_or_else(|| format!("unknown model kind `{s}`"))
    }
}

impl From<ModelKind> for String {
    fn from(k: ModelKind) -> String {
        k.name().to_string()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub analytic: crate::analytic::AnalyticFitOptions,
    pub surrogate: crate::nn::SurrogateTrainOptions,
    /// Hidden widths overriding the surrogate's default architecture.
    pub hidden: Option<Vec<usize>>,
    /// Transposed-convolution stage overriding the default of TCNN models.
    pub conv: Option<crate::nn::ConvStage>,
}

/// Fits `kind` on a dataset carrying the standard splits, using the first
/// `training_size` training records (all when `None`). Analytic models and
/// NN-SW are fitted at `opts.surrogate.channel` or the grid's reference
/// channel. SAM+XT runs the SAM stage first as its warm start.
pub fn fit_model(
    kind: &ModelKind,
    ds: &WeightDataset,
    training_size: Option<usize>,
    seed: u64,
    opts: &FitOptions,
) -> Result<(ForwardModel, Vec<crate::nn::TrainingHistory>)> {
    use crate::dataset::SplitName;
    let mut training = ds.split(SplitName::Training);
    if let Some(n) = training_size {
        ensure!(n >= 1, "training size must be at least 1");
        ensure!(
            n <= training.len(),
            "training size {n} exceeds the {} available training records",
            training.len()
        );
        training = training.head(n);
    }
    let channel = opts.surrogate.channel.unwrap_or(ds.grid.reference_index);
    ensure!(channel < ds.n_channels(), "channel {channel} out of range");
    let topology = MeshTopology::default();
    match kind {
        ModelKind::Sam | ModelKind::SamXt => {
            let sweep = ds.split(SplitName::Sweep);
            let (sam, mut report) = crate::analytic::fit_sam(&topology, &sweep, &training, channel, &opts.analytic)?;
            let grid = ds.grid.channel(channel);
            if *kind == ModelKind::Sam {
                return Ok((ForwardModel::Sam { grid, model: sam, fit: Some(report) }, Vec::new()));
            }
            let (xt, xt_report) = crate::analytic::fit_samxt(&sam, &training, channel, &opts.analytic)?;
            report.stages.extend(xt_report.stages);
            if let Some(w) = xt_report.warning {
                report.warning = Some(match report.warning.take() {
                    Some(prev) => format!("{prev}; {w}"),
                    None => w,
                });
            }
            Ok((ForwardModel::SamXt { grid, model: xt, fit: Some(report) }, Vec::new()))
        }
        ModelKind::Surrogate(k) => {
            let mut arch = crate::nn::SurrogateArchitecture::default_for(*k);
            if let Some(h) = &opts.hidden {
                arch.hidden = h.clone();
            }
            if let (Some(c), Some(_)) = (&opts.conv, &arch.conv) {
                arch.conv = Some(c.clone());
            }
            let validation = ds.split(SplitName::Validation);
            let mut sopts = opts.surrogate.clone();
            sopts.channel = Some(channel);
            let (model, hist) = crate::nn::train_surrogate(&arch, &training, &validation, seed, &sopts)?;
            Ok((ForwardModel::Surrogate { model: Box::new(model) }, hist))
        }
    }
}

fn check_voltages(v: &Voltages) -> Result<()> {
    ensure!(
        v.iter().all(|&x| (0.0..=MAX_VOLTAGE).contains(&x)),
        "heater voltages must lie in [0, {MAX_VOLTAGE}] V"
    );
    Ok(())
}

fn analytic_vjp(
    topology: &MeshTopology,
    params: &MziPhaseParams,
    diagonal_only: bool,
    alpha: crate::mesh::LossMatrix,
    v: &Voltages,
    upstream: &Weights,
) -> (Weights, Voltages) {
    let phases = if diagonal_only {
        params.phases_diagonal(v)
    } else {
        params.phases(v)
    };
    let pred = crate::mesh::weights_from_phases(topology, &phases, &[params.extinction_ratio_db; N_MZI], &alpha);
    let r = extinction_field_ratio(params.extinction_ratio_db);
    let db_per_ln = 10.0 / std::f64::consts::LN_10;
    // dL/dφₘ
    let mut d_phi = [0.0; N_MZI];
    for p in 0..N_WEIGHTS {
        if pred.floored[p] || upstream[p] == 0.0 {
            continue;
        }
        for step in topology.path(p) {
            let m = step.index();
            let t = power_term_with_ratio(phases[m], r, step.state);
            let dt = -0.5 * step.state.sign() * r * phases[m].sin();
            d_phi[m] += upstream[p] * db_per_ln * dt / t;
        }
    }
    let mut dv = [0.0; N_MZI];
    for (m, &g) in d_phi.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        if diagonal_only {
            dv[m] += g * 2.0 * params.phi2_rad_per_v2[m][m] * v[m];
        } else {
            for n in 0..N_MZI {
                dv[n] += g * 2.0 * params.phi2_rad_per_v2[m][n] * v[n];
            }
        }
    }
    (pred.weights_db, dv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emulator::{ChipGroundTruth, FabricationSpec};
    use crate::numopt::gradcheck::check_gradient;
    use crate::wavelength::REFERENCE_WAVELENGTH_NM;
    use rand::Rng;

    fn samxt_from_chip(seed: u64) -> ForwardModel {
        let chip = ChipGroundTruth::fabricate(&FabricationSpec::default(), seed).unwrap();
        ForwardModel::SamXt {
            grid: WavelengthGrid::single(REFERENCE_WAVELENGTH_NM, 50.0),
            model: SamXtModel {
                topology: chip.topology.clone(),
                params: chip.phase_params_at(REFERENCE_WAVELENGTH_NM),
                alpha: chip.losses.clone(),
            },
            fit: None,
        }
    }

    #[test]
    fn analytic_voltage_gradients_match_finite_differences() {
        for seed in 0..20u64 {
            let model = samxt_from_chip(seed);
            let sam = match &model {
                ForwardModel::SamXt { grid, model, .. } => ForwardModel::Sam {
                    grid: grid.clone(),
                    model: SamModel {
                        topology: model.topology.clone(),
                        phi0_rad: model.params.phi0_rad,
                        phi2_rad_per_v2: model.params.phi2_diag(),
                        er_db: model.params.extinction_ratio_db,
                        alpha: model.alpha.clone(),
                    },
                    fit: None,
                },
                _ => unreachable!(),
            };
            let mut rng = crate::emulator::stream_rng(seed, 7, 0);
            let v0: Vec<f64> = (0..N_MZI).map(|_| rng.random_range(0.3..1.7)).collect();
            let up: Weights = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            for m in [&model, &sam] {
                let mut f = |x: &[f64], g: &mut [f64]| {
                    let v: Voltages = std::array::from_fn(|i| x[i]);
                    let (w, dv) = m.predict_channel_with_vjp(&v, 0, &up).unwrap();
                    g.copy_from_slice(&dv);
                    w.iter().zip(&up).map(|(a, b)| a * b).sum()
                };
                let err = check_gradient(&mut f, &v0, 1e-6);
                assert!(err <= 1e-4, "seed {seed} {}: {err}", m.name());
            }
        }
    }

    #[test]
    fn model_json_round_trip() {
        let m = samxt_from_chip(3);
        let text = serde_json::to_string(&m).unwrap();
        assert!(text.contains("\"kind\":\"samxt\""));
        let back: ForwardModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn out_of_range_voltage_rejected() {
        let m = samxt_from_chip(1);
        assert!(m.predict_channel(&[2.5; N_MZI], 0).is_err());
        assert!(m.predict_channel(&[1.0; N_MZI], 1).is_err());
    }
}
