//! MZI transfer math, voltage-to-phase conversion and the path-product
//! weight models of a 3x3 mesh with one heater per MZI.
//!
//! Weights are flattened row-major: entry `p = 3 * i + j` is the power
//! transmission from input `j` to output `i` (both zero-based).

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

pub const N_MZI: usize = 9;
pub const N_PORTS: usize = 3;
pub const N_WEIGHTS: usize = N_PORTS * N_PORTS;
pub const N_LAYERS: usize = 3;

/// Lowest representable weight; predictions and measurements are clamped here.
pub const WEIGHT_FLOOR_DB: f64 = -60.0;
pub const MAX_VOLTAGE: f64 = 2.0;

pub type Voltages = [f64; N_MZI];
pub type Weights = [f64; N_WEIGHTS];

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

/// Converts a linear power to dB, clamping at [`WEIGHT_FLOOR_DB`].
pub fn floored_db(lin: f64) -> f64 {
    let floor = db_to_linear(WEIGHT_FLOOR_DB);
    linear_to_db(lin.max(floor))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MziState {
    Bar,
    Cross,
}

impl MziState {
    /// Sign of the `e^{iφ}` term in the finite-extinction transmission.
    pub fn sign(self) -> f64 {
        match self {
            MziState::Cross => 1.0,
            MziState::Bar => -1.0,
        }
    }
}

/// One MZI on a weight's optical path. `mzi` is 1-based as on the chip layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathStep {
    pub mzi: usize,
    pub state: MziState,
}

impl PathStep {
    pub fn index(&self) -> usize {
        self.mzi - 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathEntry {
    /// 1-based output port.
    pub output: usize,
    /// 1-based input port.
    pub input: usize,
    pub steps: Vec<PathStep>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TopologyFile {
    n_inputs: usize,
    n_outputs: usize,
    n_mzi: usize,
    paths: Vec<PathEntry>,
}

/// Routing table from every (output, input) pair to the MZIs it traverses.
///
/// Layers are MZIs 1-3 (input side), 4-6 and 7-9 (output side). Every path
/// visits exactly one MZI per layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TopologyFile", into = "TopologyFile")]
pub struct MeshTopology {
    routes: [[PathStep; N_LAYERS]; N_WEIGHTS],
}

impl TryFrom<TopologyFile> for MeshTopology {
    type Error = Error;

    fn try_from(file: TopologyFile) -> Result<Self> {
        ensure!(
            file.n_inputs == N_PORTS && file.n_outputs == N_PORTS && file.n_mzi == N_MZI,
            "only the 3x3 mesh with 9 MZIs is supported (got {}x{} with {})",
            file.n_outputs,
            file.n_inputs,
            file.n_mzi
        );
        let placeholder = PathStep {
            mzi: 0,
            state: MziState::Bar,
        };
        let mut routes = [[placeholder; N_LAYERS]; N_WEIGHTS];
        let mut seen = [false; N_WEIGHTS];
        for entry in &file.paths {
            ensure!(
                (1..=N_PORTS).contains(&entry.output) && (1..=N_PORTS).contains(&entry.input),
                "path ({}, {}) is outside the 3x3 port range",
                entry.output,
                entry.input
            );
            let p = (entry.output - 1) * N_PORTS + (entry.input - 1);
            ensure!(
                !seen[p],
                "duplicate path entry for ({}, {})",
                entry.output,
                entry.input
            );
            seen[p] = true;
            ensure!(
                entry.steps.len() == N_LAYERS,
                "path ({}, {}) has {} MZIs, expected one per layer",
                entry.output,
                entry.input,
                entry.steps.len()
            );
            for (layer, step) in entry.steps.iter().enumerate() {
                let lo = layer * N_PORTS + 1;
                ensure!(
                    (lo..lo + N_PORTS).contains(&step.mzi),
                    "path ({}, {}) uses MZI {} in layer {}",
                    entry.output,
                    entry.input,
                    step.mzi,
                    layer + 1
                );
                routes[p][layer] = *step;
            }
        }
        ensure!(
            seen.iter().all(|&s| s),
            "routing table must cover all 9 (output, input) pairs"
        );
        Ok(Self { routes })
    }
}

impl From<MeshTopology> for TopologyFile {
    fn from(t: MeshTopology) -> Self {
        let paths = (0..N_WEIGHTS)
            .map(|p| PathEntry {
                output: p / N_PORTS + 1,
                input: p % N_PORTS + 1,
                steps: t.routes[p].to_vec(),
            })
            .collect();
        TopologyFile {
            n_inputs: N_PORTS,
            n_outputs: N_PORTS,
            n_mzi: N_MZI,
            paths,
        }
    }
}

impl Default for MeshTopology {
    /// Default routing: input `j` enters MZI `j`, output `i` leaves MZI `6 + i`,
    /// and the middle MZI is `4 + (i + j) mod 3`. Diagonal paths run
    /// cross-bar-cross and use disjoint MZIs; this reproduces
    /// M(2,1) = {1 bar, 4 cross, 8 bar}.
    fn default() -> Self {
        let mut paths = Vec::with_capacity(N_WEIGHTS);
        for i in 1..=N_PORTS {
            for j in 1..=N_PORTS {
                let outer = if i == j { MziState::Cross } else { MziState::Bar };
                let middle = if (i + j) % 2 == 1 {
                    MziState::Cross
                } else {
                    MziState::Bar
                };
                paths.push(PathEntry {
                    output: i,
                    input: j,
                    steps: vec![
                        PathStep {
                            mzi: j,
                            state: outer,
                        },
                        PathStep {
                            mzi: 4 + (i + j) % 3,
                            state: middle,
                        },
                        PathStep {
                            mzi: 6 + i,
                            state: outer,
                        },
                    ],
                });
            }
        }
        TopologyFile {
            n_inputs: N_PORTS,
            n_outputs: N_PORTS,
            n_mzi: N_MZI,
            paths,
        }
        .try_into()
        .expect("default routing table is valid")
    }
}

impl MeshTopology {
    /// MZIs on the path of flattened weight `p`.
    pub fn path(&self, p: usize) -> &[PathStep; N_LAYERS] {
        &self.routes[p]
    }

    /// Path for 1-based (output, input).
    pub fn path_for(&self, output: usize, input: usize) -> &[PathStep; N_LAYERS] {
        &self.routes[(output - 1) * N_PORTS + (input - 1)]
    }

    /// Flattened weight indices whose paths traverse MZI `m` (0-based).
    pub fn weights_through(&self, m: usize) -> Vec<usize> {
        (0..N_WEIGHTS)
            .filter(|&p| self.routes[p].iter().any(|s| s.index() == m))
            .collect()
    }

    /// Diagonal weight indices (i == j).
    pub fn diagonal() -> [usize; N_PORTS] {
        [0, 4, 8]
    }
}

/// Phase parameters of the nine heaters: offset, power-to-phase matrix
/// (diagonal self-heating, off-diagonal thermal crosstalk) and a shared ER.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MziPhaseParams {
    pub phi0_rad: [f64; N_MZI],
    pub phi2_rad_per_v2: [[f64; N_MZI]; N_MZI],
    pub extinction_ratio_db: f64,
}

impl MziPhaseParams {
    /// Crosstalk-free parameters.
    pub fn diagonal(phi0_rad: [f64; N_MZI], phi2_diag: [f64; N_MZI], er_db: f64) -> Self {
        let mut phi2 = [[0.0; N_MZI]; N_MZI];
        for m in 0..N_MZI {
            phi2[m][m] = phi2_diag[m];
        }
        Self {
            phi0_rad,
            phi2_rad_per_v2: phi2,
            extinction_ratio_db: er_db,
        }
    }

    pub fn phi2_diag(&self) -> [f64; N_MZI] {
        std::array::from_fn(|m| self.phi2_rad_per_v2[m][m])
    }

    /// Same parameters with every crosstalk term removed.
    pub fn without_crosstalk(&self) -> Self {
        Self::diagonal(self.phi0_rad, self.phi2_diag(), self.extinction_ratio_db)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.extinction_ratio_db > 0.0,
            "extinction ratio must be positive, got {} dB",
            self.extinction_ratio_db
        );
        for m in 0..N_MZI {
            ensure!(
                self.phi2_rad_per_v2[m][m] > 0.0,
                "self-heating coefficient of MZI {} must be positive",
                m + 1
            );
        }
        let finite = self.phi0_rad.iter().all(|x| x.is_finite())
            && self.phi2_rad_per_v2.iter().flatten().all(|x| x.is_finite());
        ensure!(finite, "phase parameters must be finite");
        Ok(())
    }

    /// Phase of MZI `m` (0-based): φ⁽⁰⁾ₘ + Σₙ φ⁽²⁾ₘₙ vₙ².
    pub fn phase(&self, m: usize, v: &Voltages) -> f64 {
        phase_from_voltage(self, m, v)
    }

    pub fn phases(&self, v: &Voltages) -> [f64; N_MZI] {
        std::array::from_fn(|m| phase_from_voltage(self, m, v))
    }

    /// Phases with only the self-heating terms.
    pub fn phases_diagonal(&self, v: &Voltages) -> [f64; N_MZI] {
        std::array::from_fn(|m| self.phi0_rad[m] + self.phi2_rad_per_v2[m][m] * v[m] * v[m])
    }
}

pub fn phase_from_voltage(params: &MziPhaseParams, m: usize, v: &Voltages) -> f64 {
    let row = &params.phi2_rad_per_v2[m];
    params.phi0_rad[m] + row.iter().zip(v).map(|(c, vn)| c * vn * vn).sum::<f64>()
}

/// Ideal two-coupler MZI field transfer matrix with arm phase `phi` and
/// output phase `theta`.
pub fn ideal_mzi_transfer(phi: f64, theta: f64) -> [[Complex64; 2]; 2] {
    let i = Complex64::i();
    let e_phi = Complex64::from_polar(1.0, phi);
    let e_theta = Complex64::from_polar(1.0, theta);
    let one = Complex64::new(1.0, 0.0);
    [
        [e_theta * (e_phi - one) * 0.5, i * e_theta * (e_phi + one) * 0.5],
        [i * (e_phi + one) * 0.5, -(e_phi - one) * 0.5],
    ]
}

/// Field-amplitude ratio `(√ER − 1)/(√ER + 1)` for an ER given in dB.
pub fn extinction_field_ratio(er_db: f64) -> f64 {
    let s = db_to_linear(er_db).sqrt();
    (s - 1.0) / (s + 1.0)
}

/// d r / d ER_dB for [`extinction_field_ratio`].
pub(crate) fn extinction_field_ratio_grad(er_db: f64) -> f64 {
    let s = db_to_linear(er_db).sqrt();
    // dr/ds = 2/(s+1)^2, ds/dER_dB = s ln10 / 20
    2.0 / ((s + 1.0) * (s + 1.0)) * s * std::f64::consts::LN_10 / 20.0
}

/// Power transmission of one MZI with finite extinction ratio:
/// `¼ |r ± e^{iφ}|² = ¼ (1 + r² ± 2 r cos φ)`, `+` for cross, `−` for bar.
pub fn mzi_power_term(phi: f64, er_db: f64, state: MziState) -> f64 {
    power_term_with_ratio(phi, extinction_field_ratio(er_db), state)
}

#[inline]
pub(crate) fn power_term_with_ratio(phi: f64, r: f64, state: MziState) -> f64 {
    0.25 * (1.0 + r * r + 2.0 * state.sign() * r * phi.cos())
}

/// Per-path linear power transmission factors α, each in (0, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossMatrix {
    pub alpha: [[f64; N_PORTS]; N_PORTS],
}

impl LossMatrix {
    pub fn uniform(alpha: f64) -> Self {
        Self {
            alpha: [[alpha; N_PORTS]; N_PORTS],
        }
    }

    pub fn from_db(db: &[[f64; N_PORTS]; N_PORTS]) -> Self {
        Self {
            alpha: db.map(|row| row.map(db_to_linear)),
        }
    }

    pub fn get(&self, p: usize) -> f64 {
        self.alpha[p / N_PORTS][p % N_PORTS]
    }

    pub fn to_db(&self) -> [[f64; N_PORTS]; N_PORTS] {
        self.alpha.map(|row| row.map(linear_to_db))
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.alpha.iter().flatten().all(|&a| a > 0.0 && a <= 1.0),
            "path transmission factors must lie in (0, 1]"
        );
        Ok(())
    }
}

/// Forward-model output: weights in dB and which entries hit the floor.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightPrediction {
    pub weights_db: Weights,
    pub floored: [bool; N_WEIGHTS],
}

/// Path-product weights from per-MZI phases and per-MZI extinction ratios.
pub fn weights_from_phases(
    topology: &MeshTopology,
    phases: &[f64; N_MZI],
    er_db: &[f64; N_MZI],
    losses: &LossMatrix,
) -> WeightPrediction {
    let ratios = er_db.map(extinction_field_ratio);
    let floor = db_to_linear(WEIGHT_FLOOR_DB);
    let mut weights_db = [0.0; N_WEIGHTS];
    let mut floored = [false; N_WEIGHTS];
    for p in 0..N_WEIGHTS {
        let lin = topology.path(p).iter().fold(losses.get(p), |acc, step| {
            let m = step.index();
            acc * power_term_with_ratio(phases[m], ratios[m], step.state)
        });
        floored[p] = lin < floor;
        weights_db[p] = linear_to_db(lin.max(floor));
    }
    WeightPrediction {
        weights_db,
        floored,
    }
}

/// Simple analytical model: self-heating phases only.
pub fn sam_forward(
    topology: &MeshTopology,
    params: &MziPhaseParams,
    losses: &LossMatrix,
    v: &Voltages,
) -> WeightPrediction {
    let phases = params.phases_diagonal(v);
    weights_from_phases(topology, &phases, &[params.extinction_ratio_db; N_MZI], losses)
}

/// Crosstalk-augmented model: every heater contributes to every phase.
pub fn samxt_forward(
    topology: &MeshTopology,
    params: &MziPhaseParams,
    losses: &LossMatrix,
    v: &Voltages,
) -> WeightPrediction {
    let phases = params.phases(v);
    weights_from_phases(topology, &phases, &[params.extinction_ratio_db; N_MZI], losses)
}

/// Heater optical-path coefficients: Λ₀ (path difference at 0 V) and Λ₂
/// (path difference per V²), both in μm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpticalPathParams {
    pub lambda0_um: [f64; N_MZI],
    pub lambda2_um_per_v2: [f64; N_MZI],
}

impl OpticalPathParams {
    /// Optical paths reproducing `params` (diagonal) at `lambda_nm`.
    pub fn from_phase_params(params: &MziPhaseParams, lambda_nm: f64) -> Self {
        let lambda_um = lambda_nm * 1e-3;
        Self {
            lambda0_um: params.phi0_rad.map(|p| p * lambda_um / (2.0 * PI)),
            lambda2_um_per_v2: params.phi2_diag().map(|p| p * lambda_um / (2.0 * PI)),
        }
    }

    /// Whether these paths and `params` agree at `lambda_nm` within 1e-9 rad.
    pub fn consistent_with(&self, params: &MziPhaseParams, lambda_nm: f64) -> bool {
        let at = phase_params_at_wavelength(self, lambda_nm, params.extinction_ratio_db);
        (0..N_MZI).all(|m| {
            (at.phi0_rad[m] - params.phi0_rad[m]).abs() <= 1e-9
                && (at.phi2_rad_per_v2[m][m] - params.phi2_rad_per_v2[m][m]).abs() <= 1e-9
        })
    }
}

/// φ⁽⁰⁾(λ) = 2πΛ₀/λ and φ⁽²⁾(λ) = 2πΛ₂/λ.
pub fn phase_params_at_wavelength(
    opt: &OpticalPathParams,
    lambda_nm: f64,
    er_db: f64,
) -> MziPhaseParams {
    debug_assert!(lambda_nm > 0.0);
    let k = 2.0 * PI / (lambda_nm * 1e-3);
    MziPhaseParams::diagonal(
        opt.lambda0_um.map(|l| k * l),
        opt.lambda2_um_per_v2.map(|l| k * l),
        er_db,
    )
}
