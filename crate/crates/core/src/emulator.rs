//! Synthetic stand-in for the physical chip: fabrication sampling, noisy
//! multi-channel measurements and the sweep / random measurement protocols.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Record, Splits, WeightDataset};
use crate::error::{ensure, Result};
use crate::mesh::{
    db_to_linear, extinction_field_ratio, linear_to_db, power_term_with_ratio, LossMatrix,
    MeshTopology, MziPhaseParams, OpticalPathParams, Voltages, Weights, MAX_VOLTAGE, N_MZI,
    N_PORTS, N_WEIGHTS, WEIGHT_FLOOR_DB,
};
use crate::wavelength::{WavelengthGrid, REFERENCE_WAVELENGTH_NM};

/// Measurement noise: Gaussian in dB per channel and repeat, averaged over
/// `n_repeats`, plus an optional per-record offset uniform in
/// `[-drift_db/2, drift_db/2]` shared by all weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeasurementNoiseSpec {
    pub sigma_db: f64,
    pub n_repeats: usize,
    pub drift_db: f64,
}

impl Default for MeasurementNoiseSpec {
    fn default() -> Self {
        Self {
            sigma_db: 0.2,
            n_repeats: 6,
            drift_db: 0.0,
        }
    }
}

impl MeasurementNoiseSpec {
    pub fn noiseless() -> Self {
        Self {
            sigma_db: 0.0,
            n_repeats: 1,
            drift_db: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.sigma_db >= 0.0, "sigma_db must be non-negative");
        ensure!(self.n_repeats >= 1, "n_repeats must be at least 1");
        ensure!(
            (0.0..=0.5).contains(&self.drift_db),
            "drift_db must lie in [0, 0.5] dB"
        );
        Ok(())
    }

    fn is_silent(&self) -> bool {
        self.sigma_db == 0.0 && self.drift_db == 0.0
    }
}

/// Ground truth of an emulated chip.
///
/// Heater `n` deposits an effective power `vₙ² / (1 + κₙ vₙ²)` (κ is the
/// heater saturation), which shifts every MZI phase through the self-heating
/// coefficient and the crosstalk matrix. All phase coefficients are given at
/// `reference_wavelength_nm` and scale as `λ_ref / λ` when `dispersive`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChipGroundTruth {
    pub topology: MeshTopology,
    pub reference_wavelength_nm: f64,
    pub opt_params: OpticalPathParams,
    /// Off-diagonal thermal coupling at the reference wavelength; the
    /// diagonal is ignored.
    pub crosstalk_rad_per_v2: [[f64; N_MZI]; N_MZI],
    pub heater_saturation_per_v2: [f64; N_MZI],
    pub er_db: [f64; N_MZI],
    pub losses: LossMatrix,
    pub loss_slope_db_per_nm: [[f64; N_PORTS]; N_PORTS],
    pub dispersive: bool,
    pub noise: MeasurementNoiseSpec,
    pub seed: u64,
}

/// Distributions from which [`ChipGroundTruth::fabricate`] draws a chip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FabricationSpec {
    pub phi2_range_rad_per_v2: (f64, f64),
    pub crosstalk_nearest: f64,
    pub crosstalk_next_nearest: f64,
    /// Relative uniform jitter applied to each crosstalk coefficient.
    pub crosstalk_jitter: f64,
    pub heater_saturation_range_per_v2: (f64, f64),
    pub er_db: f64,
    pub er_spread_db: f64,
    pub path_loss_range_db: (f64, f64),
    pub loss_slope_range_db_per_nm: (f64, f64),
    pub dispersive: bool,
    pub noise: MeasurementNoiseSpec,
}

impl Default for FabricationSpec {
    fn default() -> Self {
        Self {
            phi2_range_rad_per_v2: (0.9, 1.2),
            crosstalk_nearest: 0.08,
            crosstalk_next_nearest: 0.03,
            crosstalk_jitter: 0.2,
            heater_saturation_range_per_v2: (0.10, 0.15),
            er_db: 30.0,
            er_spread_db: 3.0,
            path_loss_range_db: (-11.0, -9.0),
            loss_slope_range_db_per_nm: (-0.02, 0.02),
            dispersive: true,
            noise: MeasurementNoiseSpec::default(),
        }
    }
}

impl FabricationSpec {
    /// A chip the simple analytical model describes exactly: no crosstalk,
    /// no heater saturation, a single ER, flat losses and no noise.
    pub fn ideal_sam() -> Self {
        Self {
            crosstalk_nearest: 0.0,
            crosstalk_next_nearest: 0.0,
            crosstalk_jitter: 0.0,
            heater_saturation_range_per_v2: (0.0, 0.0),
            er_spread_db: 0.0,
            loss_slope_range_db_per_nm: (0.0, 0.0),
            noise: MeasurementNoiseSpec::noiseless(),
            ..Self::default()
        }
    }

    /// [`Self::ideal_sam`] with the default measurement noise.
    pub fn sam_conforming() -> Self {
        Self {
            noise: MeasurementNoiseSpec::default(),
            ..Self::ideal_sam()
        }
    }

    /// Same chip statistics with wavelength dependence removed.
    pub fn wavelength_flat(mut self) -> Self {
        self.dispersive = false;
        self.loss_slope_range_db_per_nm = (0.0, 0.0);
        self
    }
}

const STREAM_FABRICATION: u64 = 1;
const STREAM_SWEEP: u64 = 2;
const STREAM_VOLTAGES: u64 = 3;
const STREAM_RANDOM: u64 = 4;
const STREAM_SPLIT: u64 = 5;

/// Independent generator for `(seed, purpose, index)`.
pub fn stream_rng(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 48) ^ index);
    rng
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

impl ChipGroundTruth {
    /// Samples a chip with the default topology.
    pub fn fabricate(spec: &FabricationSpec, seed: u64) -> Result<Self> {
        let mut rng = stream_rng(seed, STREAM_FABRICATION, 0);
        let phi0: [f64; N_MZI] = std::array::from_fn(|_| rng.random_range(0.0..2.0 * PI));
        let phi2: [f64; N_MZI] =
            std::array::from_fn(|_| uniform(&mut rng, spec.phi2_range_rad_per_v2));
        let mut crosstalk = [[0.0; N_MZI]; N_MZI];
        for (m, row) in crosstalk.iter_mut().enumerate() {
            for (n, c) in row.iter_mut().enumerate() {
                let frac = match m.abs_diff(n) {
                    1 => spec.crosstalk_nearest,
                    2 => spec.crosstalk_next_nearest,
                    _ => 0.0,
                };
                let jitter = 1.0 + uniform(&mut rng, (-spec.crosstalk_jitter, spec.crosstalk_jitter));
                *c = frac * jitter * phi2[m];
            }
        }
        let saturation = std::array::from_fn(|_| uniform(&mut rng, spec.heater_saturation_range_per_v2));
        let er_db = std::array::from_fn(|_| {
            spec.er_db + uniform(&mut rng, (-spec.er_spread_db, spec.er_spread_db))
        });
        let loss_db: [[f64; N_PORTS]; N_PORTS] =
            std::array::from_fn(|_| std::array::from_fn(|_| uniform(&mut rng, spec.path_loss_range_db)));
        let slope = std::array::from_fn(|_| {
            std::array::from_fn(|_| uniform(&mut rng, spec.loss_slope_range_db_per_nm))
        });
        let params = MziPhaseParams::diagonal(phi0, phi2, spec.er_db);
        let chip = Self {
            topology: MeshTopology::default(),
            reference_wavelength_nm: REFERENCE_WAVELENGTH_NM,
            opt_params: OpticalPathParams::from_phase_params(&params, REFERENCE_WAVELENGTH_NM),
            crosstalk_rad_per_v2: crosstalk,
            heater_saturation_per_v2: saturation,
            er_db,
            losses: LossMatrix::from_db(&loss_db),
            loss_slope_db_per_nm: slope,
            dispersive: spec.dispersive,
            noise: spec.noise.clone(),
            seed,
        };
        chip.validate()?;
        Ok(chip)
    }

    /// A dispersive chip without saturation or loss slope that follows the
    /// crosstalk-augmented model with `params` at the reference wavelength.
    pub fn from_phase_params(
        topology: MeshTopology,
        params: &MziPhaseParams,
        losses: LossMatrix,
        noise: MeasurementNoiseSpec,
        seed: u64,
    ) -> Result<Self> {
        let mut crosstalk = params.phi2_rad_per_v2;
        for (m, row) in crosstalk.iter_mut().enumerate() {
            row[m] = 0.0;
        }
        let chip = Self {
            topology,
            reference_wavelength_nm: REFERENCE_WAVELENGTH_NM,
            opt_params: OpticalPathParams::from_phase_params(params, REFERENCE_WAVELENGTH_NM),
            crosstalk_rad_per_v2: crosstalk,
            heater_saturation_per_v2: [0.0; N_MZI],
            er_db: [params.extinction_ratio_db; N_MZI],
            losses,
            loss_slope_db_per_nm: [[0.0; N_PORTS]; N_PORTS],
            dispersive: true,
            noise,
            seed,
        };
        chip.validate()?;
        Ok(chip)
    }

    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        self.losses.validate()?;
        ensure!(self.reference_wavelength_nm > 0.0, "reference wavelength must be positive");
        let reference = self.phase_params_at(self.reference_wavelength_nm);
        reference.validate()?;
        for m in 0..N_MZI {
            let diag = reference.phi2_rad_per_v2[m][m];
            for n in 0..N_MZI {
                ensure!(
                    n == m || self.crosstalk_rad_per_v2[m][n].abs() < diag,
                    "crosstalk ({}, {}) is not smaller than the self-heating of MZI {}",
                    m + 1,
                    n + 1,
                    m + 1
                );
            }
            ensure!(
                self.heater_saturation_per_v2[m] >= 0.0,
                "heater saturation must be non-negative"
            );
            ensure!(self.er_db[m] > 0.0, "extinction ratios must be positive");
        }
        Ok(())
    }

    /// Stable hash identifying this chip configuration.
    pub fn config_hash(&self) -> String {
        crate::sha256_hex(&serde_json::to_vec(self).expect("chip serializes"))
    }

    fn dispersion_scale(&self, lambda_nm: f64) -> f64 {
        if self.dispersive {
            self.reference_wavelength_nm / lambda_nm
        } else {
            1.0
        }
    }

    /// Phase parameters (self-heating plus crosstalk, mean ER) at
    /// `lambda_nm`, ignoring heater saturation.
    pub fn phase_params_at(&self, lambda_nm: f64) -> MziPhaseParams {
        let lambda = if self.dispersive {
            lambda_nm
        } else {
            self.reference_wavelength_nm
        };
        let er_mean = self.er_db.iter().sum::<f64>() / N_MZI as f64;
        let mut params = crate::mesh::phase_params_at_wavelength(&self.opt_params, lambda, er_mean);
        let s = self.dispersion_scale(lambda_nm);
        for m in 0..N_MZI {
            for n in 0..N_MZI {
                if n != m {
                    params.phi2_rad_per_v2[m][n] = s * self.crosstalk_rad_per_v2[m][n];
                }
            }
        }
        params
    }

    pub fn effective_power(&self, v: &Voltages) -> [f64; N_MZI] {
        std::array::from_fn(|n| {
            let p = v[n] * v[n];
            p / (1.0 + self.heater_saturation_per_v2[n] * p)
        })
    }

    pub fn phases(&self, v: &Voltages, lambda_nm: f64) -> [f64; N_MZI] {
        let params = self.phase_params_at(lambda_nm);
        let power = self.effective_power(v);
        std::array::from_fn(|m| {
            params.phi0_rad[m]
                + params.phi2_rad_per_v2[m]
                    .iter()
                    .zip(&power)
                    .map(|(c, p)| c * p)
                    .sum::<f64>()
        })
    }

    /// Linear power transmission of every path at `lambda_nm`.
    pub fn path_transmissions(&self, lambda_nm: f64) -> [f64; N_WEIGHTS] {
        let dl = if self.dispersive {
            lambda_nm - self.reference_wavelength_nm
        } else {
            0.0
        };
        std::array::from_fn(|p| {
            let (i, j) = (p / N_PORTS, p % N_PORTS);
            self.losses.get(p) * db_to_linear(self.loss_slope_db_per_nm[i][j] * dl)
        })
    }

    /// Noise-free weights in dB, not floored.
    fn raw_weights_db(&self, v: &Voltages, lambda_nm: f64) -> Weights {
        let phases = self.phases(v, lambda_nm);
        let ratios = self.er_db.map(extinction_field_ratio);
        let alpha = self.path_transmissions(lambda_nm);
        std::array::from_fn(|p| {
            let lin = self.topology.path(p).iter().fold(alpha[p], |acc, step| {
                let m = step.index();
                acc * power_term_with_ratio(phases[m], ratios[m], step.state)
            });
            linear_to_db(lin.max(1e-30))
        })
    }

    /// Noise-free weights in dB at one wavelength, clamped at the floor.
    pub fn true_weights_db(&self, v: &Voltages, lambda_nm: f64) -> Weights {
        self.raw_weights_db(v, lambda_nm).map(|w| w.max(WEIGHT_FLOOR_DB))
    }
}

fn check_voltages(v: &Voltages) -> Result<()> {
    ensure!(
        v.iter().all(|&x| (0.0..=MAX_VOLTAGE).contains(&x)),
        "heater voltages must lie in [0, {MAX_VOLTAGE}] V, got {v:?}"
    );
    Ok(())
}

/// One averaged measurement of all weights at every grid channel (row `p`,
/// column `k`), drawing noise from `rng`.
pub fn emulate_measurement<R: Rng + ?Sized>(
    chip: &ChipGroundTruth,
    v: &Voltages,
    grid: &WavelengthGrid,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    check_voltages(v)?;
    let noise = &chip.noise;
    let n_ch = grid.n_channels;
    let mut out = vec![vec![0.0; n_ch]; N_WEIGHTS];
    for (k, &lambda) in grid.center_wavelengths_nm.iter().enumerate() {
        let w = chip.raw_weights_db(v, lambda);
        for p in 0..N_WEIGHTS {
            out[p][k] = w[p];
        }
    }
    if !noise.is_silent() {
        let drift = if noise.drift_db > 0.0 {
            rng.random_range(-0.5 * noise.drift_db..=0.5 * noise.drift_db)
        } else {
            0.0
        };
        let normal = Normal::new(0.0, noise.sigma_db).expect("sigma validated");
        for row in out.iter_mut() {
            for w in row.iter_mut() {
                let mut acc = 0.0;
                for _ in 0..noise.n_repeats {
                    acc += normal.sample(rng);
                }
                *w += drift + acc / noise.n_repeats as f64;
            }
        }
    }
    for w in out.iter_mut().flatten() {
        *w = w.max(WEIGHT_FLOOR_DB);
    }
    Ok(out)
}

/// Measurement of record `id` with its noise drawn from the
/// `(chip.seed, purpose, id)` stream, independent of evaluation order.
fn measure_record(
    chip: &ChipGroundTruth,
    grid: &WavelengthGrid,
    purpose: u64,
    id: u64,
    v: Voltages,
) -> Result<Record> {
    let mut rng = stream_rng(chip.seed, purpose, id);
    Ok(Record {
        id,
        voltages_v: v,
        weights_db: emulate_measurement(chip, &v, grid, &mut rng)?,
    })
}

fn measure_all(
    chip: &ChipGroundTruth,
    grid: &WavelengthGrid,
    purpose: u64,
    jobs: Vec<(u64, Voltages)>,
) -> Result<Vec<Record>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        jobs.into_par_iter()
            .map(|(id, v)| measure_record(chip, grid, purpose, id, v))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        jobs.into_iter()
            .map(|(id, v)| measure_record(chip, grid, purpose, id, v))
            .collect()
    }
}

/// Number of voltage levels per heater in the sweep protocol (0.0–2.0 V in
/// 0.1 V steps).
pub const SWEEP_LEVELS: usize = 21;

fn sweep_level(t: usize) -> f64 {
    t as f64 * MAX_VOLTAGE / (SWEEP_LEVELS - 1) as f64
}

fn diagonal_sum_db(chip: &ChipGroundTruth, v: &Voltages) -> f64 {
    let w = chip.true_weights_db(v, chip.reference_wavelength_nm);
    MeshTopology::diagonal().iter().map(|&p| w[p]).sum()
}

/// Heater constants that maximize the summed diagonal weights on the
/// noise-free chip at its reference wavelength, by cyclic 1-D searches over
/// the sweep levels until a full pass changes nothing.
pub fn diagonal_maximizing_baseline(chip: &ChipGroundTruth) -> Voltages {
    let mut levels = [0usize; N_MZI];
    let to_v = |levels: &[usize; N_MZI]| levels.map(sweep_level);
    for _ in 0..100 {
        let mut changed = false;
        for m in 0..N_MZI {
            let mut best = (diagonal_sum_db(chip, &to_v(&levels)), levels[m]);
            for t in 0..SWEEP_LEVELS {
                let mut trial = levels;
                trial[m] = t;
                let s = diagonal_sum_db(chip, &to_v(&trial));
                if s > best.0 {
                    best = (s, t);
                }
            }
            if best.1 != levels[m] {
                levels[m] = best.1;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    to_v(&levels)
}

/// 9 × 21 single-heater sweeps around the diagonal-maximizing baseline;
/// record `21 m + t` sweeps MZI `m` to level `t`.
pub fn generate_sweep_dataset(chip: &ChipGroundTruth, grid: &WavelengthGrid) -> Result<WeightDataset> {
    grid.validate()?;
    let baseline = diagonal_maximizing_baseline(chip);
    let jobs = (0..N_MZI)
        .flat_map(|m| {
            (0..SWEEP_LEVELS).map(move |t| {
                let mut v = baseline;
                v[m] = sweep_level(t);
                ((m * SWEEP_LEVELS + t) as u64, v)
            })
        })
        .collect();
    let records = measure_all(chip, grid, STREAM_SWEEP, jobs)?;
    let mut ds = WeightDataset::new(grid.clone(), records);
    ds.splits.sweep = (0..ds.records.len()).collect();
    ds.provenance.seed = chip.seed;
    ds.provenance.chip_config_sha256 = chip.config_hash();
    Ok(ds)
}

/// Training / validation / testing fractions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub training: f64,
    pub validation: f64,
    pub testing: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            training: 0.70,
            validation: 0.15,
            testing: 0.15,
        }
    }
}

impl SplitFractions {
    /// Split sizes for `n` records; training and validation are rounded and
    /// testing takes the remainder.
    pub fn counts(&self, n: usize) -> Result<(usize, usize, usize)> {
        let fr = [self.training, self.validation, self.testing];
        ensure!(
            fr.iter().all(|&f| (0.0..=1.0).contains(&f)),
            "split fractions must lie in [0, 1]"
        );
        ensure!(
            (fr.iter().sum::<f64>() - 1.0).abs() < 1e-9,
            "split fractions must sum to 1, got {fr:?}"
        );
        let n_tr = (self.training * n as f64).round() as usize;
        let n_va = ((self.validation * n as f64).round() as usize).min(n - n_tr);
        Ok((n_tr, n_va, n - n_tr - n_va))
    }
}

/// Number of random records in the default protocol.
pub const DEFAULT_RANDOM_RECORDS: usize = 5100;

/// `n` records with i.i.d. uniform voltages, split by a seeded shuffle.
/// Record ids start at `first_id`.
pub fn generate_random_dataset(
    chip: &ChipGroundTruth,
    grid: &WavelengthGrid,
    n: usize,
    fractions: SplitFractions,
    first_id: u64,
) -> Result<WeightDataset> {
    ensure!(n >= 10, "at least 10 random records are needed to split, got {n}");
    grid.validate()?;
    let (n_tr, n_va, _) = fractions.counts(n)?;
    let mut vrng = stream_rng(chip.seed, STREAM_VOLTAGES, 0);
    let jobs: Vec<(u64, Voltages)> = (0..n)
        .map(|i| {
            let v = std::array::from_fn(|_| vrng.random_range(0.0..=MAX_VOLTAGE));
            (first_id + i as u64, v)
        })
        .collect();
    let records = measure_all(chip, grid, STREAM_RANDOM, jobs)?;

    let mut order: Vec<usize> = (0..n).collect();
    let mut srng = stream_rng(chip.seed, STREAM_SPLIT, 0);
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut srng);
    let take = |range: std::ops::Range<usize>| {
        let mut ids = order[range].to_vec();
        ids.sort_unstable();
        ids
    };
    let splits = Splits {
        sweep: Vec::new(),
        training: take(0..n_tr),
        validation: take(n_tr..n_tr + n_va),
        testing: take(n_tr + n_va..n),
    };
    let mut ds = WeightDataset::new(grid.clone(), records);
    ds.splits = splits;
    ds.provenance.seed = chip.seed;
    ds.provenance.chip_config_sha256 = chip.config_hash();
    Ok(ds)
}

/// The full measurement campaign: sweep records first, then `n_random`
/// random records, with all four splits annotated.
pub fn generate_dataset(
    chip: &ChipGroundTruth,
    grid: &WavelengthGrid,
    n_random: usize,
    fractions: SplitFractions,
) -> Result<WeightDataset> {
    let sweep = generate_sweep_dataset(chip, grid)?;
    let random = generate_random_dataset(chip, grid, n_random, fractions, sweep.records.len() as u64)?;
    let mut ds = sweep;
    ds.append(&random)?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::sam_forward;

    fn ideal_chip() -> ChipGroundTruth {
        ChipGroundTruth::fabricate(&FabricationSpec::ideal_sam(), 11).unwrap()
    }

    #[test]
    fn noise_free_diagonal_chip_matches_sam_at_reference() {
        let chip = ideal_chip();
        let params = chip.phase_params_at(REFERENCE_WAVELENGTH_NM);
        let grid = WavelengthGrid::single(REFERENCE_WAVELENGTH_NM, 50.0);
        let mut rng = stream_rng(0, 0, 0);
        for i in 0..20 {
            let v: Voltages = std::array::from_fn(|m| ((i * 7 + m * 3) % 21) as f64 * 0.1);
            let got = emulate_measurement(&chip, &v, &grid, &mut rng).unwrap();
            let want = sam_forward(&chip.topology, &params, &chip.losses, &v);
            for p in 0..N_WEIGHTS {
                assert_eq!(got[p][0], want.weights_db[p]);
            }
        }
    }

    #[test]
    fn phase_params_follow_optical_paths() {
        let chip = ChipGroundTruth::fabricate(&FabricationSpec::default(), 3).unwrap();
        let at_ref = chip.phase_params_at(REFERENCE_WAVELENGTH_NM);
        assert!(chip.opt_params.consistent_with(&at_ref, REFERENCE_WAVELENGTH_NM));
        let at_long = chip.phase_params_at(1560.0);
        let s = REFERENCE_WAVELENGTH_NM / 1560.0;
        assert!((at_long.phi2_rad_per_v2[0][1] - s * at_ref.phi2_rad_per_v2[0][1]).abs() < 1e-12);
    }

    #[test]
    fn averaging_shrinks_noise() {
        let mut chip = ideal_chip();
        chip.noise = MeasurementNoiseSpec::default();
        let grid = WavelengthGrid::single(REFERENCE_WAVELENGTH_NM, 50.0);
        let v = [1.0; N_MZI];
        let clean = chip.true_weights_db(&v, REFERENCE_WAVELENGTH_NM);
        let mut rng = stream_rng(5, 9, 0);
        let mut sq = 0.0;
        let mut count = 0.0;
        for _ in 0..1200 {
            let w = emulate_measurement(&chip, &v, &grid, &mut rng).unwrap();
            for p in (0..N_WEIGHTS).filter(|&p| clean[p] > -50.0) {
                let e = w[p][0] - clean[p];
                sq += e * e;
                count += 1.0;
            }
        }
        let std = (sq / count).sqrt();
        let want = 0.2 / 6f64.sqrt();
        assert!((std - want).abs() / want < 0.05, "std {std}");
    }

    #[test]
    fn drift_is_shared_and_bounded() {
        let mut chip = ideal_chip();
        chip.noise = MeasurementNoiseSpec {
            sigma_db: 0.0,
            n_repeats: 1,
            drift_db: 0.5,
        };
        let grid = WavelengthGrid::single(REFERENCE_WAVELENGTH_NM, 50.0);
        let v = [0.5; N_MZI];
        let clean = chip.true_weights_db(&v, REFERENCE_WAVELENGTH_NM);
        let mut rng = stream_rng(1, 1, 1);
        for _ in 0..200 {
            let w = emulate_measurement(&chip, &v, &grid, &mut rng).unwrap();
            assert!(clean[0] > -50.0);
            let d0 = w[0][0] - clean[0];
            assert!(d0.abs() <= 0.25 + 1e-12);
            for p in (1..N_WEIGHTS).filter(|&p| clean[p] > -50.0) {
                assert!((w[p][0] - clean[p] - d0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn out_of_range_voltage_rejected() {
        let chip = ideal_chip();
        let grid = WavelengthGrid::single(REFERENCE_WAVELENGTH_NM, 50.0);
        let mut v = [0.0; N_MZI];
        v[3] = 2.01;
        assert!(emulate_measurement(&chip, &v, &grid, &mut stream_rng(0, 0, 0)).is_err());
    }

    #[test]
    fn fabrication_is_seeded() {
        let spec = FabricationSpec::default();
        let a = ChipGroundTruth::fabricate(&spec, 7).unwrap();
        assert_eq!(a, ChipGroundTruth::fabricate(&spec, 7).unwrap());
        assert_ne!(a, ChipGroundTruth::fabricate(&spec, 8).unwrap());
        assert_eq!(a.config_hash().len(), 64);
    }

    #[test]
    fn default_split_counts() {
        assert_eq!(SplitFractions::default().counts(5100).unwrap(), (3570, 765, 765));
        let bad = SplitFractions {
            training: 0.5,
            validation: 0.2,
            testing: 0.2,
        };
        assert!(bad.counts(100).is_err());
    }

    #[test]
    fn sweep_protocol() {
        let chip = ChipGroundTruth::fabricate(&FabricationSpec::default(), 21).unwrap();
        let grid = WavelengthGrid::single(REFERENCE_WAVELENGTH_NM, 50.0);
        let ds = generate_sweep_dataset(&chip, &grid).unwrap();
        assert_eq!(ds.records.len(), 189);
        assert_eq!(ds.splits.sweep.len(), 189);
        let base = diagonal_maximizing_baseline(&chip);
        for r in &ds.records {
            let diff = (0..N_MZI).filter(|&m| r.voltages_v[m] != base[m]).count();
            assert!(diff <= 1);
        }
        let best = diagonal_sum_db(&chip, &base);
        for m in 0..N_MZI {
            for dv in [-0.1, 0.1] {
                let mut v = base;
                v[m] = (v[m] + dv).clamp(0.0, MAX_VOLTAGE);
                assert!(diagonal_sum_db(&chip, &v) <= best + 1e-12);
            }
        }
    }

    #[test]
    fn random_dataset_is_reproducible_and_split() {
        let chip = ChipGroundTruth::fabricate(&FabricationSpec::default(), 4).unwrap();
        let grid = WavelengthGrid::single(REFERENCE_WAVELENGTH_NM, 50.0);
        let a = generate_random_dataset(&chip, &grid, 100, SplitFractions::default(), 0).unwrap();
        let b = generate_random_dataset(&chip, &grid, 100, SplitFractions::default(), 0).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            (a.splits.training.len(), a.splits.validation.len(), a.splits.testing.len()),
            (70, 15, 15)
        );
        a.validate().unwrap();
        assert!(generate_random_dataset(&chip, &grid, 9, SplitFractions::default(), 0).is_err());
    }
}
