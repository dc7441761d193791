//! Fitting the analytic mesh models: the simple analytical model (SAM, self
//! heating only) from the sweep set, its crosstalk-augmented refinement
//! (SAM+XT) on training data, and per-wavelength SAM fits with a linear
//! regression of φ⁽²⁾ against wavelength.

use std::f64::consts::{LN_10, PI};

use serde::{Deserialize, Serialize};

use crate::dataset::WeightDataset;
use crate::error::{ensure, Error, Result};
use crate::mesh::{
    extinction_field_ratio, extinction_field_ratio_grad, samxt_forward, LossMatrix, MeshTopology,
    MziPhaseParams, Voltages, WeightPrediction, Weights, N_MZI, N_PORTS, N_WEIGHTS,
    WEIGHT_FLOOR_DB,
};
use crate::numopt::{bfgs_minimize, Problem, QuasiNewtonOptions, Termination};

const DB_PER_LN: f64 = 10.0 / LN_10;

/// Path loss assumed for paths whose labels never rise above the floor.
const DEFAULT_PATH_LOSS_DB: f64 = -10.0;

/// Simple analytical model: φₘ = φ⁽⁰⁾ₘ + φ⁽²⁾ₘ vₘ².
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamModel {
    pub topology: MeshTopology,
    pub phi0_rad: [f64; N_MZI],
    pub phi2_rad_per_v2: [f64; N_MZI],
    pub er_db: f64,
    pub alpha: LossMatrix,
}

impl SamModel {
    pub fn phase_params(&self) -> MziPhaseParams {
        MziPhaseParams::diagonal(self.phi0_rad, self.phi2_rad_per_v2, self.er_db)
    }

    pub fn predict(&self, v: &Voltages) -> WeightPrediction {
        crate::mesh::sam_forward(&self.topology, &self.phase_params(), &self.alpha, v)
    }

    /// Equivalent crosstalk model with zero off-diagonal terms.
    pub fn to_samxt(&self) -> SamXtModel {
        SamXtModel {
            topology: self.topology.clone(),
            params: self.phase_params(),
            alpha: self.alpha.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.phase_params().validate()?;
        self.alpha.validate()
    }
}

/// Crosstalk-augmented model: φₘ = φ⁽⁰⁾ₘ + Σₙ φ⁽²⁾ₘₙ vₙ².
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamXtModel {
    pub topology: MeshTopology,
    pub params: MziPhaseParams,
    pub alpha: LossMatrix,
}

impl SamXtModel {
    pub fn predict(&self, v: &Voltages) -> WeightPrediction {
        samxt_forward(&self.topology, &self.params, &self.alpha, v)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.alpha.validate()
    }
}

/// Outcome of one optimization stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub n_records: usize,
    pub initial_rmse_db: f64,
    pub rmse_db: f64,
    pub iterations: usize,
    pub termination: Termination,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub stages: Vec<StageReport>,
    /// Set when an optimizer stopped without meeting its convergence test;
    /// the model then holds the best parameters found.
    pub warning: Option<String>,
}

impl FitReport {
    fn push(&mut self, stage: StageReport) {
        if matches!(
            stage.termination,
            Termination::MaxIterations | Termination::LineSearchFailure
        ) && stage.rmse_db > 1e-6
        {
            let msg = format!("{} stopped with {:?}", stage.stage, stage.termination);
            self.warning = Some(match self.warning.take() {
                Some(w) => format!("{w}; {msg}"),
                None => msg,
            });
        }
        self.stages.push(stage);
    }

    pub fn final_rmse_db(&self) -> Option<f64> {
        self.stages.last().map(|s| s.rmse_db)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalyticFitOptions {
    /// Upper bound on training records used by the training-set stages.
    pub training_cap: Option<usize>,
    /// φ⁽⁰⁾ candidates per MZI in the coarse initialization scan (0 disables).
    pub phi0_grid: usize,
    pub phi0_grid_passes: usize,
    /// Rounds of local (φ⁽⁰⁾, φ⁽²⁾) rescans, each followed by another sweep
    /// stage optimization, to escape nearby local minima.
    pub basin_hops: usize,
    pub optimizer: QuasiNewtonOptions,
}

impl Default for AnalyticFitOptions {
    fn default() -> Self {
        Self {
            training_cap: Some(1000),
            phi0_grid: 16,
            phi0_grid_passes: 2,
            basin_hops: 3,
            optimizer: QuasiNewtonOptions::bfgs(),
        }
    }
}

/// Voltages and floored labels at one channel.
#[derive(Clone, Debug)]
pub struct Samples {
    pub voltages: Vec<Voltages>,
    pub weights_db: Vec<Weights>,
}

impl Samples {
    pub fn from_dataset(ds: &WeightDataset, channel: usize) -> Result<Self> {
        ensure!(
            channel < ds.n_channels(),
            "channel {} out of range for {} channels",
            channel,
            ds.n_channels()
        );
        Ok(Self {
            voltages: ds.voltages(),
            weights_db: ds
                .records
                .iter()
                .map(|r| r.at_channel(channel).map(|w| w.max(WEIGHT_FLOOR_DB)))
                .collect(),
        })
    }

    fn head(&self, n: Option<usize>) -> Samples {
        let n = n.unwrap_or(usize::MAX).min(self.voltages.len());
        Samples {
            voltages: self.voltages[..n].to_vec(),
            weights_db: self.weights_db[..n].to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.voltages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voltages.is_empty()
    }
}

/// Every analytic-model parameter; the fits optimize subsets of it.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalyticParams {
    pub phi0: [f64; N_MZI],
    pub phi2: [[f64; N_MZI]; N_MZI],
    pub er_db: f64,
    pub alpha_db: [f64; N_WEIGHTS],
}

/// Which blocks of [`AnalyticParams`] are free.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamMask {
    pub phi0: bool,
    pub phi2: Phi2Mask,
    pub er: bool,
    pub alpha: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phi2Mask {
    Fixed,
    Diagonal,
    Full,
}

impl ParamMask {
    pub const SAM_SWEEP: Self = Self {
        phi0: true,
        phi2: Phi2Mask::Diagonal,
        er: true,
        alpha: true,
    };
    pub const LOSSES: Self = Self {
        phi0: false,
        phi2: Phi2Mask::Fixed,
        er: false,
        alpha: true,
    };
    pub const SAMXT: Self = Self {
        phi0: true,
        phi2: Phi2Mask::Full,
        er: true,
        alpha: true,
    };
}

impl AnalyticParams {
    pub fn from_sam(m: &SamModel) -> Self {
        Self::from_samxt(&m.to_samxt())
    }

    pub fn from_samxt(m: &SamXtModel) -> Self {
        let db = m.alpha.to_db();
        Self {
            phi0: m.params.phi0_rad,
            phi2: m.params.phi2_rad_per_v2,
            er_db: m.params.extinction_ratio_db,
            alpha_db: std::array::from_fn(|p| db[p / N_PORTS][p % N_PORTS]),
        }
    }

    fn alpha(&self) -> LossMatrix {
        let db = std::array::from_fn(|i| std::array::from_fn(|j| self.alpha_db[i * N_PORTS + j].min(0.0)));
        LossMatrix::from_db(&db)
    }

    fn wrapped_phi0(&self) -> [f64; N_MZI] {
        self.phi0.map(|p| p.rem_euclid(2.0 * PI))
    }

    pub fn to_sam(&self, topology: &MeshTopology) -> SamModel {
        SamModel {
            topology: topology.clone(),
            phi0_rad: self.wrapped_phi0(),
            phi2_rad_per_v2: std::array::from_fn(|m| self.phi2[m][m]),
            er_db: self.er_db,
            alpha: self.alpha(),
        }
    }

    pub fn to_samxt(&self, topology: &MeshTopology) -> SamXtModel {
        SamXtModel {
            topology: topology.clone(),
            params: MziPhaseParams {
                phi0_rad: self.wrapped_phi0(),
                phi2_rad_per_v2: self.phi2,
                extinction_ratio_db: self.er_db,
            },
            alpha: self.alpha(),
        }
    }

    pub fn pack(&self, mask: ParamMask) -> Vec<f64> {
        let mut x = Vec::new();
        if mask.phi0 {
            x.extend_from_slice(&self.phi0);
        }
        match mask.phi2 {
            Phi2Mask::Fixed => {}
            Phi2Mask::Diagonal => x.extend((0..N_MZI).map(|m| self.phi2[m][m])),
            Phi2Mask::Full => x.extend(self.phi2.iter().flatten()),
        }
        if mask.er {
            x.push(self.er_db);
        }
        if mask.alpha {
            x.extend_from_slice(&self.alpha_db);
        }
        x
    }

    pub fn unpack(&mut self, mask: ParamMask, x: &[f64]) {
        let mut it = x.iter().copied();
        if mask.phi0 {
            self.phi0.iter_mut().for_each(|p| *p = it.next().unwrap());
        }
        match mask.phi2 {
            Phi2Mask::Fixed => {}
            Phi2Mask::Diagonal => (0..N_MZI).for_each(|m| self.phi2[m][m] = it.next().unwrap()),
            Phi2Mask::Full => self.phi2.iter_mut().flatten().for_each(|p| *p = it.next().unwrap()),
        }
        if mask.er {
            self.er_db = it.next().unwrap();
        }
        if mask.alpha {
            self.alpha_db.iter_mut().for_each(|p| *p = it.next().unwrap());
        }
        debug_assert!(it.next().is_none());
    }

    /// Gradient of a full-parameter gradient restricted to the mask, in
    /// [`pack`](Self::pack) order.
    fn pack_grad(g: &AnalyticParams, mask: ParamMask) -> Vec<f64> {
        g.pack(mask)
    }

    pub fn zeros() -> Self {
        Self {
            phi0: [0.0; N_MZI],
            phi2: [[0.0; N_MZI]; N_MZI],
            er_db: 0.0,
            alpha_db: [0.0; N_WEIGHTS],
        }
    }
}

/// Mean squared dB error of the analytic model over `samples`, with the
/// floor applied to predictions. When `grad` is given it receives the full
/// parameter gradient; floored predictions contribute zero.
pub fn analytic_mse(
    topology: &MeshTopology,
    params: &AnalyticParams,
    samples: &Samples,
    mut grad: Option<&mut AnalyticParams>,
) -> f64 {
    let r = extinction_field_ratio(params.er_db);
    let dr_der = extinction_field_ratio_grad(params.er_db);
    let n = (samples.len() * N_WEIGHTS) as f64;
    let mut loss = 0.0;
    if let Some(g) = grad.as_deref_mut() {
        *g = AnalyticParams::zeros();
    }
    for (v, label) in samples.voltages.iter().zip(&samples.weights_db) {
        let v2 = v.map(|x| x * x);
        let phases: [f64; N_MZI] = std::array::from_fn(|m| {
            params.phi0[m] + params.phi2[m].iter().zip(&v2).map(|(c, p)| c * p).sum::<f64>()
        });
        let (cos, sin): ([f64; N_MZI], [f64; N_MZI]) =
            (phases.map(f64::cos), phases.map(f64::sin));
        let mut dphase = [0.0; N_MZI];
        let mut dr = 0.0;
        for p in 0..N_WEIGHTS {
            let mut pred = params.alpha_db[p];
            for step in topology.path(p) {
                let m = step.index();
                let s = step.state.sign();
                let t = 0.25 * (1.0 + r * r + 2.0 * s * r * cos[m]);
                pred += DB_PER_LN * t.ln();
            }
            if pred < WEIGHT_FLOOR_DB {
                let e = WEIGHT_FLOOR_DB - label[p];
                loss += e * e;
                continue;
            }
            let e = pred - label[p];
            loss += e * e;
            if let Some(g) = grad.as_deref_mut() {
                let c = 2.0 * e / n;
                g.alpha_db[p] += c;
                for step in topology.path(p) {
                    let m = step.index();
                    let s = step.state.sign();
                    let t = 0.25 * (1.0 + r * r + 2.0 * s * r * cos[m]);
                    dphase[m] += c * DB_PER_LN * (-0.5 * s * r * sin[m]) / t;
                    dr += c * DB_PER_LN * 0.5 * (r + s * cos[m]) / t;
                }
            }
        }
        if let Some(g) = grad.as_deref_mut() {
            for m in 0..N_MZI {
                g.phi0[m] += dphase[m];
                for k in 0..N_MZI {
                    g.phi2[m][k] += dphase[m] * v2[k];
                }
                dphase[m] = 0.0;
            }
            g.er_db += dr * dr_der;
        }
    }
    loss / n
}

fn rmse(mse: f64) -> f64 {
    mse.max(0.0).sqrt()
}

/// Minimizes the mean squared dB error over the free blocks of `params`.
fn run_stage(
    name: &str,
    topology: &MeshTopology,
    params: &mut AnalyticParams,
    mask: ParamMask,
    samples: &Samples,
    opts: &QuasiNewtonOptions,
) -> StageReport {
    let base = params.clone();
    let initial = analytic_mse(topology, params, samples, None);
    let objective = |x: &[f64], g: &mut [f64]| {
        let mut p = base.clone();
        p.unpack(mask, x);
        let mut full = AnalyticParams::zeros();
        let f = analytic_mse(topology, &p, samples, Some(&mut full));
        g.copy_from_slice(&AnalyticParams::pack_grad(&full, mask));
        f
    };
    let report = bfgs_minimize(Problem::new(params.pack(mask), objective), opts);
    if report.f <= initial {
        params.unpack(mask, &report.x);
    }
    StageReport {
        stage: name.to_string(),
        n_records: samples.len(),
        initial_rmse_db: rmse(initial),
        rmse_db: rmse(report.f.min(initial)),
        iterations: report.iterations,
        termination: report.termination,
    }
}

/// Initial SAM parameters: φ⁽⁰⁾ = π, φ⁽²⁾ = 1 rad/V², ER = 30 dB and each
/// path loss set so the path's peak transmission matches its largest label.
pub fn initial_sam_params(samples: &Samples) -> AnalyticParams {
    let er = 30.0;
    let r = extinction_field_ratio(er);
    let peak_db = 3.0 * DB_PER_LN * (0.25 * (1.0 + r) * (1.0 + r)).ln();
    let alpha_db = std::array::from_fn(|p| {
        let max = samples
            .weights_db
            .iter()
            .map(|w| w[p])
            .fold(f64::NEG_INFINITY, f64::max);
        (max - peak_db).min(0.0)
    });
    let mut phi2 = [[0.0; N_MZI]; N_MZI];
    for (m, row) in phi2.iter_mut().enumerate() {
        row[m] = 1.0;
    }
    AnalyticParams {
        phi0: [PI; N_MZI],
        phi2,
        er_db: er,
        alpha_db,
    }
}

/// For a one-heater-at-a-time sweep, the records belonging to each heater:
/// those whose other eight voltages all sit at the baseline (the most common
/// value per heater). `None` when some heater has fewer than 3 such records.
pub fn sweep_groups(samples: &Samples) -> Option<[Vec<usize>; N_MZI]> {
    let baseline: [f64; N_MZI] = std::array::from_fn(|m| {
        let mut values: Vec<f64> = samples.voltages.iter().map(|v| v[m]).collect();
        values.sort_by(f64::total_cmp);
        let mut best = (0usize, values.first().copied().unwrap_or(0.0));
        let mut i = 0;
        while i < values.len() {
            let j = values[i..].iter().take_while(|&&x| x == values[i]).count();
            if j > best.0 {
                best = (j, values[i]);
            }
            i += j;
        }
        best.1
    });
    let groups: [Vec<usize>; N_MZI] = std::array::from_fn(|m| {
        (0..samples.len())
            .filter(|&r| {
                let v = &samples.voltages[r];
                (0..N_MZI).all(|k| k == m || v[k] == baseline[k])
            })
            .collect()
    });
    groups.iter().all(|g| g.len() >= 3).then_some(groups)
}

/// Per-heater grid search over (φ⁽⁰⁾, φ⁽²⁾) on that heater's sweep records,
/// with each affected path's remaining factors absorbed in a constant.
fn init_from_sweep(topology: &MeshTopology, params: &mut AnalyticParams, samples: &Samples) {
    let Some(groups) = sweep_groups(samples) else {
        return;
    };
    let r = extinction_field_ratio(params.er_db);
    const N_PHI0: usize = 64;
    const N_PHI2: usize = 93;
    for m in 0..N_MZI {
        let group = &groups[m];
        let paths: Vec<(usize, f64)> = (0..N_WEIGHTS)
            .filter_map(|p| {
                topology
                    .path(p)
                    .iter()
                    .find(|s| s.index() == m)
                    .map(|s| (p, s.state.sign()))
            })
            .collect();
        let mut best = (f64::INFINITY, params.phi0[m], params.phi2[m][m]);
        let mut pred = vec![0.0; group.len()];
        for a in 0..N_PHI0 {
            let phi0 = 2.0 * PI * a as f64 / N_PHI0 as f64;
            for b in 0..N_PHI2 {
                let phi2 = 0.2 + 0.025 * b as f64;
                let mut sse = 0.0;
                for &(p, s) in &paths {
                    let mut offset = 0.0;
                    let mut count = 0.0;
                    for (slot, &rec) in pred.iter_mut().zip(group) {
                        let v = samples.voltages[rec][m];
                        let phi = phi0 + phi2 * v * v;
                        *slot = DB_PER_LN * (0.25 * (1.0 + r * r + 2.0 * s * r * phi.cos())).ln();
                        let label = samples.weights_db[rec][p];
                        if label > WEIGHT_FLOOR_DB + 5.0 {
                            offset += label - *slot;
                            count += 1.0;
                        }
                    }
                    if count < 3.0 {
                        continue;
                    }
                    let offset = offset / count;
                    for (slot, &rec) in pred.iter().zip(group) {
                        let e = (slot + offset).max(WEIGHT_FLOOR_DB) - samples.weights_db[rec][p];
                        sse += e * e;
                    }
                }
                if sse < best.0 {
                    best = (sse, phi0, phi2);
                }
            }
        }
        params.phi0[m] = best.1;
        params.phi2[m][m] = best.2;
    }
    set_losses_from_residuals(topology, params, samples);
}

/// Sets each path loss to the mean dB residual of its unfloored labels.
fn set_losses_from_residuals(topology: &MeshTopology, params: &mut AnalyticParams, samples: &Samples) {
    let mut zero_loss = params.clone();
    zero_loss.alpha_db = [0.0; N_WEIGHTS];
    let model = zero_loss.to_samxt(topology);
    let mut sum = [0.0; N_WEIGHTS];
    let mut count = [0usize; N_WEIGHTS];
    for (v, label) in samples.voltages.iter().zip(&samples.weights_db) {
        let pred = model.predict(v);
        for p in 0..N_WEIGHTS {
            if label[p] > WEIGHT_FLOOR_DB + 5.0 && !pred.floored[p] {
                sum[p] += label[p] - pred.weights_db[p];
                count[p] += 1;
            }
        }
    }
    for p in 0..N_WEIGHTS {
        params.alpha_db[p] = if count[p] > 0 {
            (sum[p] / count[p] as f64).min(0.0)
        } else {
            DEFAULT_PATH_LOSS_DB
        };
    }
}

/// Cyclic per-MZI scan of φ⁽⁰⁾ over `n_grid` evenly spaced candidates.
fn scan_phi0(
    topology: &MeshTopology,
    params: &mut AnalyticParams,
    samples: &Samples,
    n_grid: usize,
    passes: usize,
) {
    if n_grid == 0 {
        return;
    }
    let mut best = analytic_mse(topology, params, samples, None);
    for _ in 0..passes {
        for m in 0..N_MZI {
            let keep = params.phi0[m];
            let mut choice = keep;
            for k in 0..n_grid {
                params.phi0[m] = 2.0 * PI * k as f64 / n_grid as f64;
                let f = analytic_mse(topology, params, samples, None);
                if f < best {
                    best = f;
                    choice = params.phi0[m];
                }
            }
            params.phi0[m] = choice;
        }
    }
}

/// Joint local grid over (φ⁽⁰⁾ₘ, φ⁽²⁾ₘₘ) around the current values, one MZI at
/// a time on the full objective. Returns whether any MZI moved.
fn rescan_pairs(topology: &MeshTopology, params: &mut AnalyticParams, samples: &Samples) -> bool {
    const HALF: i32 = 10;
    let mut best = analytic_mse(topology, params, samples, None);
    let mut moved = false;
    // coarse then fine (φ⁽⁰⁾, φ⁽²⁾) steps per MZI
    let scales = [(0.03, 0.006), (0.004, 0.003)];
    for (m, (step0, step2)) in (0..N_MZI).flat_map(|m| scales.map(|s| (m, s))) {
        let (phi0, phi2) = (params.phi0[m], params.phi2[m][m]);
        let mut choice = (phi0, phi2);
        for a in -HALF..=HALF {
            for b in -HALF..=HALF {
                if a == 0 && b == 0 {
                    continue;
                }
                params.phi0[m] = phi0 + step0 * a as f64;
                params.phi2[m][m] = (phi2 + step2 * b as f64).max(1e-3);
                let f = analytic_mse(topology, params, samples, None);
                if f < best * (1.0 - 1e-9) {
                    best = f;
                    choice = (params.phi0[m], params.phi2[m][m]);
                    moved = true;
                }
            }
        }
        params.phi0[m] = choice.0;
        params.phi2[m][m] = choice.1;
    }
    moved
}

fn check_inputs(ds: &WeightDataset, what: &str) -> Result<()> {
    ensure!(!ds.is_empty(), "{what} set is empty");
    Ok(())
}

/// Two-stage SAM fit at `channel`: (φ⁽⁰⁾, φ⁽²⁾, ER, with α as a nuisance)
/// on the sweep set, then α alone on the first `training_cap` training
/// records.
pub fn fit_sam(
    topology: &MeshTopology,
    sweep: &WeightDataset,
    training: &WeightDataset,
    channel: usize,
    opts: &AnalyticFitOptions,
) -> Result<(SamModel, FitReport)> {
    check_inputs(sweep, "sweep")?;
    check_inputs(training, "training")?;
    let sweep_s = Samples::from_dataset(sweep, channel)?;
    let train_s = Samples::from_dataset(training, channel)?.head(opts.training_cap);
    let mut params = initial_sam_params(&sweep_s);
    init_from_sweep(topology, &mut params, &sweep_s);
    scan_phi0(topology, &mut params, &sweep_s, opts.phi0_grid, opts.phi0_grid_passes);
    let mut report = FitReport::default();
    let mut stage = run_stage(
        "sam-sweep",
        topology,
        &mut params,
        ParamMask::SAM_SWEEP,
        &sweep_s,
        &opts.optimizer,
    );
    for _ in 0..opts.basin_hops {
        if !rescan_pairs(topology, &mut params, &sweep_s) {
            break;
        }
        let hop = run_stage(
            "sam-sweep",
            topology,
            &mut params,
            ParamMask::SAM_SWEEP,
            &sweep_s,
            &opts.optimizer,
        );
        stage = StageReport {
            initial_rmse_db: stage.initial_rmse_db,
            iterations: stage.iterations + hop.iterations,
            ..hop
        };
    }
    report.push(stage);
    set_losses_from_residuals(topology, &mut params, &train_s);
    report.push(run_stage(
        "sam-losses",
        topology,
        &mut params,
        ParamMask::LOSSES,
        &train_s,
        &opts.optimizer,
    ));
    let model = params.to_sam(topology);
    model
        .validate()
        .map_err(|e| Error::Numerical(format!("SAM fit produced invalid parameters: {e}")))?;
    Ok((model, report))
}

/// SAM+XT refinement from a SAM warm start on the training set: crosstalk
/// terms start at zero and all parameters are optimized jointly.
pub fn fit_samxt(
    sam: &SamModel,
    training: &WeightDataset,
    channel: usize,
    opts: &AnalyticFitOptions,
) -> Result<(SamXtModel, FitReport)> {
    check_inputs(training, "training")?;
    let train_s = Samples::from_dataset(training, channel)?.head(opts.training_cap);
    let mut params = AnalyticParams::from_sam(sam);
    let mut report = FitReport::default();
    report.push(run_stage(
        "samxt-training",
        &sam.topology,
        &mut params,
        ParamMask::SAMXT,
        &train_s,
        &opts.optimizer,
    ));
    let model = params.to_samxt(&sam.topology);
    model
        .validate()
        .map_err(|e| Error::Numerical(format!("SAM+XT fit produced invalid parameters: {e}")))?;
    Ok((model, report))
}

/// Ordinary least-squares line `y = intercept + slope·x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_std_error: f64,
}

impl LineFit {
    pub fn at(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

pub fn fit_line(x: &[f64], y: &[f64]) -> Result<LineFit> {
    ensure!(x.len() == y.len(), "line fit needs paired samples");
    let n = x.len();
    if n < 3 {
        return Err(Error::Undefined(format!("line fit with standard error needs 3 points, got {n}")));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Undefined("line fit over a single abscissa".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - intercept - slope * a;
            r * r
        })
        .sum();
    Ok(LineFit {
        slope,
        intercept,
        slope_std_error: (sse / (nf - 2.0) / sxx).sqrt(),
    })
}

/// Independent SAM fits at every channel and the φ⁽²⁾-vs-wavelength lines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerWavelengthSam {
    pub wavelengths_nm: Vec<f64>,
    pub models: Vec<SamModel>,
    /// `phi2_rad_per_v2[k][m]`: fitted self-heating coefficient of MZI `m`
    /// at channel `k`.
    pub phi2_rad_per_v2: Vec<[f64; N_MZI]>,
    /// Per-MZI regression of φ⁽²⁾ on wavelength in nm (slope in rad/V²/nm).
    pub lines: Vec<LineFit>,
}

impl PerWavelengthSam {
    /// Slope predicted by φ⁽²⁾ ∝ 1/λ from the fitted line at `lambda_nm`:
    /// dφ⁽²⁾/dλ = −φ⁽²⁾(λ)/λ (rad/V²/nm).
    pub fn inverse_lambda_slope(&self, m: usize, lambda_nm: f64) -> f64 {
        -self.lines[m].at(lambda_nm) / lambda_nm
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["wavelength_nm".to_string()];
        header.extend((1..=N_MZI).map(|m| format!("phi2_mzi{m}_rad_per_v2")));
        w.write_record(&header)?;
        for (lambda, row) in self.wavelengths_nm.iter().zip(&self.phi2_rad_per_v2) {
            let mut rec = vec![lambda.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

pub fn fit_sam_per_wavelength(
    topology: &MeshTopology,
    sweep: &WeightDataset,
    training: &WeightDataset,
    opts: &AnalyticFitOptions,
) -> Result<PerWavelengthSam> {
    let n = sweep.n_channels();
    ensure!(n >= 2, "per-wavelength fits need at least 2 channels, got {n}");
    ensure!(
        training.grid == sweep.grid,
        "sweep and training sets use different wavelength grids"
    );
    let fit = |k: usize| fit_sam(topology, sweep, training, k, opts).map(|(m, _)| m);
    #[cfg(feature = "parallel")]
    let models: Vec<SamModel> = {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(fit).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let models: Vec<SamModel> = (0..n).map(fit).collect::<Result<_>>()?;

    let wavelengths = sweep.grid.center_wavelengths_nm.clone();
    let phi2: Vec<[f64; N_MZI]> = models.iter().map(|m| m.phi2_rad_per_v2).collect();
    let lines = (0..N_MZI)
        .map(|m| {
            let y: Vec<f64> = phi2.iter().map(|row| row[m]).collect();
            fit_line(&wavelengths, &y)
        })
        .collect::<Result<_>>()?;
    Ok(PerWavelengthSam {
        wavelengths_nm: wavelengths,
        models,
        phi2_rad_per_v2: phi2,
        lines,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emulator::{generate_dataset, ChipGroundTruth, FabricationSpec, SplitFractions};
    use crate::numopt::gradcheck::check_gradient;
    use crate::wavelength::{WavelengthGrid, REFERENCE_WAVELENGTH_NM};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_samples(rng: &mut ChaCha8Rng, n: usize, params: &AnalyticParams) -> Samples {
        let topo = MeshTopology::default();
        let voltages: Vec<Voltages> = (0..n)
            .map(|_| std::array::from_fn(|_| rng.random_range(0.0..2.0)))
            .collect();
        let weights_db = voltages
            .iter()
            .map(|v| {
                let m = params.to_samxt(&topo);
                let w = m.predict(v).weights_db;
                w.map(|x| x + rng.random_range(-0.5..0.5))
            })
            .collect();
        Samples { voltages, weights_db }
    }

    fn random_params(rng: &mut ChaCha8Rng) -> AnalyticParams {
        AnalyticParams {
            phi0: std::array::from_fn(|_| rng.random_range(0.0..2.0 * PI)),
            phi2: std::array::from_fn(|m| {
                std::array::from_fn(|n| {
                    if m == n {
                        rng.random_range(0.9..1.2)
                    } else {
                        rng.random_range(-0.1..0.1)
                    }
                })
            }),
            er_db: rng.random_range(20.0..35.0),
            alpha_db: std::array::from_fn(|_| rng.random_range(-11.0..-9.0)),
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let topo = MeshTopology::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for mask in [ParamMask::SAM_SWEEP, ParamMask::SAMXT, ParamMask::LOSSES] {
            for _ in 0..5 {
                let truth = random_params(&mut rng);
                let samples = random_samples(&mut rng, 30, &truth);
                let mut at = random_params(&mut rng);
                at.er_db = truth.er_db;
                let mut f = |x: &[f64], g: &mut [f64]| {
                    let mut p = at.clone();
                    p.unpack(mask, x);
                    let mut full = AnalyticParams::zeros();
                    let v = analytic_mse(&topo, &p, &samples, Some(&mut full));
                    g.copy_from_slice(&full.pack(mask));
                    v
                };
                let err = check_gradient(&mut f, &at.pack(mask), 1e-6);
                assert!(err < 1e-4, "relative gradient error {err}");
            }
        }
    }

    #[test]
    fn pack_unpack_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_params(&mut rng);
        for mask in [ParamMask::SAM_SWEEP, ParamMask::SAMXT, ParamMask::LOSSES] {
            let mut q = AnalyticParams::zeros();
            q.unpack(mask, &p.pack(mask));
            assert_eq!(q.pack(mask), p.pack(mask));
        }
        assert_eq!(p.pack(ParamMask::SAMXT).len(), 9 + 81 + 1 + 9);
    }

    #[test]
    fn phi0_shift_by_two_pi_is_invisible() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_params(&mut rng);
        let topo = MeshTopology::default();
        let mut q = p.clone();
        q.phi0.iter_mut().for_each(|x| *x += 2.0 * PI);
        let v = [0.3, 1.1, 1.9, 0.0, 0.5, 2.0, 1.4, 0.7, 1.0];
        let a = p.to_samxt(&topo).predict(&v).weights_db;
        let mut b_model = q.to_samxt(&topo);
        b_model.params.phi0_rad = q.phi0;
        let b = b_model.predict(&v).weights_db;
        for k in 0..N_WEIGHTS {
            assert!((a[k] - b[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn line_fit_exact_and_error() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        let l = fit_line(&x, &y).unwrap();
        assert!((l.slope - 2.0).abs() < 1e-12 && (l.intercept - 1.0).abs() < 1e-12);
        assert!(l.slope_std_error < 1e-12);
        let l = fit_line(&x, &[0.0, 1.0, 0.0, 1.0]).unwrap();
        // residuals −0.1, 0.3, −0.7... slope 0.2, SE = sqrt(0.8/2/5)
        assert!((l.slope - 0.2).abs() < 1e-12);
        assert!((l.slope_std_error - (0.8f64 / 2.0 / 5.0).sqrt()).abs() < 1e-12);
        assert!(fit_line(&[1.0, 1.0, 1.0], &[0.0, 1.0, 2.0]).is_err());
    }

    #[test]
    fn ideal_chip_fit_is_exact() {
        let chip = ChipGroundTruth::fabricate(&FabricationSpec::ideal_sam(), 5).unwrap();
        let grid = WavelengthGrid::single(REFERENCE_WAVELENGTH_NM, 50.0);
        let ds = generate_dataset(&chip, &grid, 200, SplitFractions::default()).unwrap();
        let sweep = ds.split(crate::dataset::SplitName::Sweep);
        let train = ds.split(crate::dataset::SplitName::Training);
        let (sam, report) = fit_sam(&chip.topology, &sweep, &train, 0, &AnalyticFitOptions::default()).unwrap();
        let rmse = report.final_rmse_db().unwrap();
        assert!(rmse <= 1e-6, "{report:?}");
        let truth = chip.phase_params_at(REFERENCE_WAVELENGTH_NM);
        for m in 0..N_MZI {
            assert!((sam.phi2_rad_per_v2[m] - truth.phi2_rad_per_v2[m][m]).abs() < 1e-5);
        }
    }
}
