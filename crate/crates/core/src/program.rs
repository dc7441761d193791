//! Inverse programming: heater voltages that make a forward model realize a
//! target weight matrix.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::eval::rmse_db;
use crate::mesh::{Voltages, Weights, MAX_VOLTAGE, N_MZI, N_PORTS, N_WEIGHTS, WEIGHT_FLOOR_DB};
use crate::model::ForwardModel;
use crate::numopt::{bfgs_minimize, Problem, QuasiNewtonOptions};

const STREAM_PROGRAM: u64 = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProgramOptions {
    /// Model channels the target must hold on; the model's reference channel
    /// when empty.
    pub channels: Vec<usize>,
    pub multistart: usize,
    pub seed: u64,
    pub unreachable_threshold_db: f64,
    pub optimizer: QuasiNewtonOptions,
}

impl Default for ProgramOptions {
    fn default() -> Self {
        Self {
            channels: Vec::new(),
            multistart: 8,
            seed: 0,
            unreachable_threshold_db: 1.0,
            optimizer: QuasiNewtonOptions::bfgs().with_max_iter(500),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProgramRequest {
    /// Target `w[i][j]` in dB, output port `i`, input port `j`.
    pub target_weights_db: [[f64; N_PORTS]; N_PORTS],
    #[serde(default)]
    pub options: ProgramOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProgramResult {
    pub voltages_v: Voltages,
    pub channels: Vec<usize>,
    /// Model prediction at the returned voltages, one matrix per channel.
    pub achieved_weights_db: Vec<[[f64; N_PORTS]; N_PORTS]>,
    pub residual_rmse_db: f64,
    pub reachable: bool,
    /// Final residual of every start, in start order.
    pub start_residuals_db: Vec<f64>,
}

impl ProgramResult {
    /// Voltages rounded to 4 decimals for reporting.
    pub fn rounded_voltages(&self) -> Voltages {
        self.voltages_v.map(|v| (v * 1e4).round() / 1e4)
    }
}

pub fn flatten(m: &[[f64; N_PORTS]; N_PORTS]) -> Weights {
    std::array::from_fn(|p| m[p / N_PORTS][p % N_PORTS])
}

pub fn unflatten(w: &Weights) -> [[f64; N_PORTS]; N_PORTS] {
    std::array::from_fn(|i| std::array::from_fn(|j| w[N_PORTS * i + j]))
}

fn voltages_from_z(z: &[f64]) -> Voltages {
    std::array::from_fn(|m| (1.0 + z[m].sin()).clamp(0.0, MAX_VOLTAGE))
}

/// Minimizes the dB RMSE between the model's prediction and the target over
/// `v = 1 + sin(z)` from `multistart` seeded uniform starts and returns the
/// best run.
pub fn program_voltages(model: &ForwardModel, req: &ProgramRequest) -> Result<ProgramResult> {
    let opts = &req.options;
    ensure!(opts.multistart >= 1, "multistart must be at least 1");
    let target = flatten(&req.target_weights_db);
    ensure!(
        target.iter().all(|t| t.is_finite() && *t >= WEIGHT_FLOOR_DB && *t <= 0.0),
        "target weights must lie in [{WEIGHT_FLOOR_DB}, 0] dB"
    );
    let channels = if opts.channels.is_empty() {
        vec![model.grid().reference_index]
    } else {
        opts.channels.clone()
    };
    for &k in &channels {
        ensure!(k < model.n_channels(), "channel {k} outside the model's {} channels", model.n_channels());
    }
    let n_terms = (channels.len() * N_WEIGHTS) as f64;

    let run = |start: usize| -> (Voltages, f64) {
        let mut rng = crate::emulator::stream_rng(opts.seed, STREAM_PROGRAM, start as u64);
        let z0: Vec<f64> = (0..N_MZI)
            .map(|_| (rng.random_range(0.0..MAX_VOLTAGE) - 1.0).asin())
            .collect();
        let objective = |z: &[f64], g: &mut [f64]| {
            let v = voltages_from_z(z);
            let mut f = 0.0;
            g.iter_mut().for_each(|x| *x = 0.0);
            for &k in &channels {
                let w = model.predict_channel(&v, k).expect("voltages within bounds");
                let up: Weights = std::array::from_fn(|p| 2.0 * (w[p] - target[p]) / n_terms);
                let (_, dv) = model
                    .predict_channel_with_vjp(&v, k, &up)
                    .expect("voltages within bounds");
                for p in 0..N_WEIGHTS {
                    f += (w[p] - target[p]).powi(2) / n_terms;
                }
                for m in 0..N_MZI {
                    g[m] += dv[m] * z[m].cos();
                }
            }
            f
        };
        let report = bfgs_minimize(Problem::new(z0, objective), &opts.optimizer);
        (voltages_from_z(&report.x), report.f.max(0.0).sqrt())
    };

    #[cfg(feature = "parallel")]
    let runs: Vec<(Voltages, f64)> = {
        use rayon::prelude::*;
        (0..opts.multistart).into_par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let runs: Vec<(Voltages, f64)> = (0..opts.multistart).map(run).collect();

    let best = runs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .expect("multistart ≥ 1");
    let voltages_v = runs[best].0;
    let mut achieved = Vec::with_capacity(channels.len());
    let mut pred = Vec::new();
    let mut labels = Vec::new();
    for &k in &channels {
        let w = model.predict_channel(&voltages_v, k)?;
        pred.extend_from_slice(&w);
        labels.extend_from_slice(&target);
        achieved.push(unflatten(&w));
    }
    let residual = rmse_db(&pred, &labels)?;
    Ok(ProgramResult {
        voltages_v,
        channels,
        achieved_weights_db: achieved,
        residual_rmse_db: residual,
        reachable: residual <= opts.unreachable_threshold_db,
        start_residuals_db: runs.iter().map(|r| r.1).collect(),
    })
}
