//! Demo state independent of the JavaScript bindings: one fabricated chip
//! and, once calibrated, an analytical model of it.

use omm_core::dataset::SplitName;
use omm_core::emulator::{emulate_measurement, generate_dataset, ChipGroundTruth, FabricationSpec, MeasurementNoiseSpec, SplitFractions};
use omm_core::eval::{model_rmse_db, rmse_db};
use omm_core::mesh::{Voltages, Weights, N_WEIGHTS};
use omm_core::model::{fit_model, FitOptions, ForwardModel, ModelKind};
use omm_core::program::{program_voltages, unflatten, ProgramOptions, ProgramRequest};
use omm_core::wavelength::{WavelengthGrid, REFERENCE_WAVELENGTH_NM};
use omm_core::{Error, Result};
use serde::Serialize;

pub struct Session {
    chip: ChipGroundTruth,
    /// The chip without measurement noise, for direct readout.
    clean: ChipGroundTruth,
    grid: WavelengthGrid,
    model: Option<ForwardModel>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Calibration {
    pub kind: String,
    pub n_records: usize,
    pub training_rmse_db: f64,
    pub testing_rmse_db: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Programmed {
    pub voltages_v: Voltages,
    pub predicted_db: Weights,
    pub measured_db: Weights,
    pub model_residual_db: f64,
    pub chip_residual_db: f64,
    pub reachable: bool,
}

fn voltages(v: &[f64]) -> Result<Voltages> {
    v.try_into()
        .map_err(|_| Error::Contract(format!("expected 9 voltages, got {}", v.len())))
}

impl Session {
    /// Fabricates a default chip with its crosstalk scaled by
    /// `crosstalk_scale`.
    pub fn new(seed: u64, crosstalk_scale: f64) -> Result<Self> {
        let base = FabricationSpec::default();
        let spec = FabricationSpec {
            crosstalk_nearest: base.crosstalk_nearest * crosstalk_scale,
            crosstalk_next_nearest: base.crosstalk_next_nearest * crosstalk_scale,
            ..base
        };
        let chip = ChipGroundTruth::fabricate(&spec, seed)?;
        let clean = ChipGroundTruth {
            noise: MeasurementNoiseSpec::noiseless(),
            ..chip.clone()
        };
        Ok(Self {
            chip,
            clean,
            grid: WavelengthGrid::single(REFERENCE_WAVELENGTH_NM, 50.0),
            model: None,
        })
    }

    pub fn chip(&self) -> &ChipGroundTruth {
        &self.chip
    }

    pub fn is_calibrated(&self) -> bool {
        self.model.is_some()
    }

    /// Noise-free weights of the chip at `v`, in dB.
    pub fn measure(&self, v: &[f64]) -> Result<Weights> {
        let v = voltages(v)?;
        let mut rng = omm_core::emulator::stream_rng(0, 0, 0);
        let w = emulate_measurement(&self.clean, &v, &self.grid, &mut rng)?;
        Ok(std::array::from_fn(|p| w[p][0]))
    }

    /// Measures the sweep plus `n_random` noisy random records and fits an
    /// analytical model (`sam` or `samxt`).
    pub fn calibrate(&mut self, n_random: usize, kind: &str) -> Result<Calibration> {
        let kind = match ModelKind::parse(kind) {
            Some(k @ (ModelKind::Sam | ModelKind::SamXt)) => k,
            _ => return Err(Error::Contract(format!("the demo fits sam or samxt, not `{kind}`"))),
        };
        let ds = generate_dataset(&self.chip, &self.grid, n_random, SplitFractions::default())?;
        let (model, _) = fit_model(&kind, &ds, None, self.chip.seed, &FitOptions::default())?;
        let out = Calibration {
            kind: kind.name().into(),
            n_records: ds.len(),
            training_rmse_db: model_rmse_db(&model, &ds.split(SplitName::Training))?,
            testing_rmse_db: model_rmse_db(&model, &ds.split(SplitName::Testing))?,
        };
        self.model = Some(model);
        Ok(out)
    }

    fn model(&self) -> Result<&ForwardModel> {
        self.model
            .as_ref()
            .ok_or_else(|| Error::Contract("calibrate the chip first".into()))
    }

    /// The calibrated model's weights at `v`, in dB.
    pub fn predict(&self, v: &[f64]) -> Result<Weights> {
        self.model()?.predict_channel(&voltages(v)?, 0)
    }

    /// Programs the flattened 3×3 `target` through the calibrated model and
    /// reads the chip back at the returned voltages.
    pub fn program(&self, target: &[f64], multistart: usize) -> Result<Programmed> {
        let target: Weights = target
            .try_into()
            .map_err(|_| Error::Contract(format!("expected {N_WEIGHTS} target weights, got {}", target.len())))?;
        let req = ProgramRequest {
            target_weights_db: unflatten(&target),
            options: ProgramOptions {
                multistart,
                seed: self.chip.seed,
                ..ProgramOptions::default()
            },
        };
        let res = program_voltages(self.model()?, &req)?;
        let v = res.rounded_voltages();
        let measured = self.measure(&v)?;
        Ok(Programmed {
            voltages_v: v,
            predicted_db: omm_core::program::flatten(&res.achieved_weights_db[0]),
            measured_db: measured,
            model_residual_db: res.residual_rmse_db,
            chip_residual_db: rmse_db(&measured, &target)?,
            reachable: res.reachable,
        })
    }
}
