//! Downstream-task study: a 3-3-1 network whose first layer would run on the
//! mesh, evaluated under weight errors resampled from a model's error
//! distribution.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::eval::{percentile, sorted, ErrorDistribution};
use crate::numopt::{lbfgs_minimize, LbfgsOptions, Problem, QuasiNewtonOptions};

const STREAM_TASK_DATA: u64 = 32;
const STREAM_TASK_INIT: u64 = 33;
const STREAM_TASK_NOISE: u64 = 34;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Xor3,
    Gauss2d,
}

impl TaskKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "xor3" => Some(TaskKind::Xor3),
            "gauss2d" => Some(TaskKind::Gauss2d),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Xor3 => "xor3",
            TaskKind::Gauss2d => "gauss2d",
        }
    }

    /// Metric reported per realization.
    pub fn metric_name(self) -> &'static str {
        match self {
            TaskKind::Xor3 => "accuracy_percent",
            TaskKind::Gauss2d => "test_rmse",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussSpec {
    pub mu1: f64,
    pub mu2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
}

impl Default for GaussSpec {
    fn default() -> Self {
        Self {
            mu1: 0.0,
            mu2: 0.0,
            sigma1: 1.0,
            sigma2: 1.0,
        }
    }
}

/// How a sampled dB error `ε` perturbs a first-layer weight `w`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    /// `w · 10^(ε/10)`: the error is a ratio of optical powers.
    #[default]
    Multiplicative,
    /// `w + ε`.
    Additive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub gauss: GaussSpec,
    pub n_points: usize,
    pub n_train: usize,
    pub realizations: usize,
    pub noise_mode: NoiseMode,
    pub restarts: usize,
    pub optimizer: QuasiNewtonOptions,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            kind: TaskKind::Xor3,
            gauss: GaussSpec::default(),
            n_points: 2000,
            n_train: 1600,
            realizations: 2000,
            noise_mode: NoiseMode::Multiplicative,
            restarts: 5,
            optimizer: QuasiNewtonOptions::lbfgs().with_max_iter(5000).with_tol_grad(1e-10),
        }
    }
}

impl TaskSpec {
    pub fn new(kind: TaskKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.gauss.sigma1 > 0.0 && self.gauss.sigma2 > 0.0,
            "Gaussian widths must be positive"
        );
        ensure!(
            self.n_train >= 1 && self.n_train < self.n_points,
            "training points {} must be in [1, {})",
            self.n_train,
            self.n_points
        );
        ensure!(self.realizations >= 1, "at least one noise realization is required");
        ensure!(self.restarts >= 1, "at least one training run is required");
        Ok(())
    }
}

/// Inputs and targets of one task split.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskData {
    pub inputs: Vec<[f64; 3]>,
    pub targets: Vec<f64>,
}

/// All eight 3-bit inputs; the label is 1 iff exactly one bit is set.
pub fn make_xor_dataset() -> TaskData {
    let inputs: Vec<[f64; 3]> = (0..8u32)
        .map(|b| std::array::from_fn(|i| f64::from((b >> (2 - i)) & 1)))
        .collect();
    let targets = inputs
        .iter()
        .map(|x| if x.iter().sum::<f64>() == 1.0 { 1.0 } else { 0.0 })
        .collect();
    TaskData { inputs, targets }
}

/// Density of the axis-aligned 2-D Gaussian.
pub fn gauss2d(x1: f64, x2: f64, g: &GaussSpec) -> f64 {
    let a = (x1 - g.mu1) / g.sigma1;
    let b = (x2 - g.mu2) / g.sigma2;
    (-(a * a + b * b) / 2.0).exp() / (2.0 * std::f64::consts::PI * g.sigma1 * g.sigma2)
}

/// Uniform inputs on [−1, 1]² with a constant third (bias) input, split into
/// the first `n_train` points and the rest.
pub fn make_gauss_dataset(spec: &TaskSpec, seed: u64) -> (TaskData, TaskData) {
    let mut rng = crate::emulator::stream_rng(seed, STREAM_TASK_DATA, 0);
    let inputs: Vec<[f64; 3]> = (0..spec.n_points)
        .map(|_| [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0), 1.0])
        .collect();
    let targets: Vec<f64> = inputs.iter().map(|x| gauss2d(x[0], x[1], &spec.gauss)).collect();
    let (ti, vi) = inputs.split_at(spec.n_train);
    let (tt, vt) = targets.split_at(spec.n_train);
    (
        TaskData {
            inputs: ti.to_vec(),
            targets: tt.to_vec(),
        },
        TaskData {
            inputs: vi.to_vec(),
            targets: vt.to_vec(),
        },
    )
}

/// `y = w2 · tanh(W1 x) + b`. `W1` is the optically implemented layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceNet {
    pub w1: [[f64; 3]; 3],
    pub w2: [f64; 3],
    pub b2: f64,
}

impl ReferenceNet {
    const N_PARAMS: usize = 13;

    fn from_params(p: &[f64]) -> Self {
        Self {
            w1: std::array::from_fn(|i| std::array::from_fn(|j| p[3 * i + j])),
            w2: [p[9], p[10], p[11]],
            b2: p[12],
        }
    }

    pub fn forward(&self, x: &[f64; 3]) -> f64 {
        let h: [f64; 3] = std::array::from_fn(|i| (0..3).map(|j| self.w1[i][j] * x[j]).sum::<f64>().tanh());
        (0..3).map(|i| self.w2[i] * h[i]).sum::<f64>() + self.b2
    }

    pub fn with_first_layer(&self, w1: [[f64; 3]; 3]) -> Self {
        Self { w1, ..self.clone() }
    }

    pub fn metric(&self, kind: TaskKind, data: &TaskData) -> f64 {
        match kind {
            TaskKind::Xor3 => {
                let correct = data
                    .inputs
                    .iter()
                    .zip(&data.targets)
                    .filter(|(x, &t)| (self.forward(x) > 0.5) == (t > 0.5))
                    .count();
                100.0 * correct as f64 / data.inputs.len() as f64
            }
            TaskKind::Gauss2d => {
                let ss: f64 = data
                    .inputs
                    .iter()
                    .zip(&data.targets)
                    .map(|(x, t)| (self.forward(x) - t).powi(2))
                    .sum();
                (ss / data.inputs.len() as f64).sqrt()
            }
        }
    }
}

fn mse_and_grad(p: &[f64], g: &mut [f64], data: &TaskData) -> f64 {
    let net = ReferenceNet::from_params(p);
    g.iter_mut().for_each(|x| *x = 0.0);
    let n = data.inputs.len() as f64;
    let mut loss = 0.0;
    for (x, t) in data.inputs.iter().zip(&data.targets) {
        let h: [f64; 3] = std::array::from_fn(|i| (0..3).map(|j| net.w1[i][j] * x[j]).sum::<f64>().tanh());
        let y = (0..3).map(|i| net.w2[i] * h[i]).sum::<f64>() + net.b2;
        let e = y - t;
        loss += e * e / n;
        let dy = 2.0 * e / n;
        for i in 0..3 {
            g[9 + i] += dy * h[i];
            let dpre = dy * net.w2[i] * (1.0 - h[i] * h[i]);
            for j in 0..3 {
                g[3 * i + j] += dpre * x[j];
            }
        }
        g[12] += dy;
    }
    loss
}

/// Trained reference network and its noise-free metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedReference {
    pub kind: TaskKind,
    pub net: ReferenceNet,
    pub clean_metric: f64,
    pub restarts_used: usize,
}

fn meets_target(kind: TaskKind, metric: f64) -> bool {
    match kind {
        TaskKind::Xor3 => metric == 100.0,
        TaskKind::Gauss2d => metric <= GAUSS_TARGET_RMSE,
    }
}

/// Testing RMSE the Gaussian reference network must reach.
pub const GAUSS_TARGET_RMSE: f64 = 1.5e-3;

/// Evaluation data of the task: the eight XOR triples, or the Gaussian
/// testing split.
pub fn evaluation_data(spec: &TaskSpec, seed: u64) -> TaskData {
    match spec.kind {
        TaskKind::Xor3 => make_xor_dataset(),
        TaskKind::Gauss2d => make_gauss_dataset(spec, seed).1,
    }
}

/// Trains from up to `spec.restarts` seeded initializations, stopping at the
/// first that meets the task target (100% XOR accuracy, or Gaussian testing
/// RMSE ≤ 1.5e-3).
pub fn train_reference(spec: &TaskSpec, seed: u64) -> Result<TrainedReference> {
    spec.validate()?;
    let (train, eval) = match spec.kind {
        TaskKind::Xor3 => (make_xor_dataset(), make_xor_dataset()),
        TaskKind::Gauss2d => make_gauss_dataset(spec, seed),
    };
    let lbfgs = LbfgsOptions {
        base: spec.optimizer.clone(),
        ..LbfgsOptions::default()
    };
    let mut best: Option<(f64, ReferenceNet)> = None;
    for restart in 0..spec.restarts {
        let mut rng = crate::emulator::stream_rng(seed, STREAM_TASK_INIT, restart as u64);
        let x0: Vec<f64> = (0..ReferenceNet::N_PARAMS).map(|_| rng.random_range(-1.0..1.0)).collect();
        let report = lbfgs_minimize(Problem::new(x0, |p: &[f64], g: &mut [f64]| mse_and_grad(p, g, &train)), &lbfgs);
        let net = ReferenceNet::from_params(&report.x);
        let metric = net.metric(spec.kind, &eval);
        if meets_target(spec.kind, metric) {
            return Ok(TrainedReference {
                kind: spec.kind,
                net,
                clean_metric: metric,
                restarts_used: restart + 1,
            });
        }
        let better = match (&best, spec.kind) {
            (None, _) => true,
            (Some((m, _)), TaskKind::Xor3) => metric > *m,
            (Some((m, _)), TaskKind::Gauss2d) => metric < *m,
        };
        if better {
            best = Some((metric, net));
        }
    }
    let metric = best.map(|b| b.0).unwrap_or(f64::NAN);
    Err(Error::Numerical(format!(
        "{} reference network missed its target after {} restarts (best metric {metric})",
        spec.kind.name(),
        spec.restarts
    )))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p10: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p90: f64,
}

impl Percentiles {
    pub fn of(values: &[f64]) -> Self {
        let s = sorted(values);
        Self {
            p10: percentile(&s, 10.0),
            p25: percentile(&s, 25.0),
            p50: percentile(&s, 50.0),
            p75: percentile(&s, 75.0),
            p90: percentile(&s, 90.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseStudyReport {
    pub task: TaskKind,
    pub model: String,
    pub noise_mode: NoiseMode,
    pub clean_metric: f64,
    pub metrics: Vec<f64>,
    pub percentiles: Percentiles,
}

impl NoiseStudyReport {
    /// One row per realization followed by the clean value and percentiles.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let metric = self.task.metric_name();
        w.write_record(["model", "row", metric])?;
        for (i, m) in self.metrics.iter().enumerate() {
            w.write_record([self.model.clone(), i.to_string(), m.to_string()])?;
        }
        let p = &self.percentiles;
        for (name, v) in [
            ("clean", self.clean_metric),
            ("p10", p.p10),
            ("p25", p.p25),
            ("p50", p.p50),
            ("p75", p.p75),
            ("p90", p.p90),
        ] {
            w.write_record([self.model.clone(), name.to_string(), v.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))
    }
}

/// Evaluates `spec.realizations` copies of the network whose nine first-layer
/// weights each receive an independent error drawn uniformly from `errors`.
/// Realization `r` uses its own random stream, so results do not depend on
/// evaluation order.
pub fn noise_injection_study(
    reference: &TrainedReference,
    errors: &ErrorDistribution,
    spec: &TaskSpec,
    model_name: &str,
    seed: u64,
) -> Result<NoiseStudyReport> {
    ensure!(!errors.samples.is_empty(), "error distribution is empty");
    ensure!(spec.realizations >= 1, "at least one noise realization is required");
    let data = evaluation_data(spec, seed);
    let n = errors.samples.len();
    let realize = |r: usize| -> f64 {
        let mut rng: ChaCha8Rng = crate::emulator::stream_rng(seed, STREAM_TASK_NOISE, r as u64);
        let w1 = reference.net.w1.map(|row| {
            row.map(|w| {
                let e = errors.samples[rng.random_range(0..n)];
                match spec.noise_mode {
                    NoiseMode::Multiplicative => w * 10f64.powf(e / 10.0),
                    NoiseMode::Additive => w + e,
                }
            })
        });
        reference.net.with_first_layer(w1).metric(spec.kind, &data)
    };
    #[cfg(feature = "parallel")]
    let metrics: Vec<f64> = {
        use rayon::prelude::*;
        (0..spec.realizations).into_par_iter().map(realize).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let metrics: Vec<f64> = (0..spec.realizations).map(realize).collect();
    Ok(NoiseStudyReport {
        task: spec.kind,
        model: model_name.to_string(),
        noise_mode: spec.noise_mode,
        clean_metric: reference.clean_metric,
        percentiles: Percentiles::of(&metrics),
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numopt::gradcheck::check_gradient;

    #[test]
    fn xor_labels() {
        let d = make_xor_dataset();
        assert_eq!(d.inputs.len(), 8);
        let label = |x: [f64; 3]| d.targets[d.inputs.iter().position(|i| *i == x).unwrap()];
        assert_eq!(label([0.0, 0.0, 0.0]), 0.0);
        assert_eq!(label([1.0, 0.0, 0.0]), 1.0);
        assert_eq!(label([0.0, 1.0, 0.0]), 1.0);
        assert_eq!(label([1.0, 1.0, 0.0]), 0.0);
        assert_eq!(label([1.0, 1.0, 1.0]), 0.0);
    }

    #[test]
    fn gauss_density() {
        let g = GaussSpec::default();
        assert!((gauss2d(0.0, 0.0, &g) - 0.15915494309189535).abs() < 1e-15);
        assert_eq!(gauss2d(0.3, -0.7, &g), gauss2d(-0.3, 0.7, &g));
        let shifted = GaussSpec { mu1: 0.2, mu2: -0.4, sigma1: 0.5, sigma2: 2.0 };
        let peak = gauss2d(0.2, -0.4, &shifted);
        for (a, b) in [(0.25, -0.4), (0.2, -0.3), (0.0, 0.0), (1.0, 1.0)] {
            assert!(gauss2d(a, b, &shifted) < peak);
        }
    }

    #[test]
    fn loss_gradient_is_exact() {
        let data = make_gauss_dataset(&TaskSpec::new(TaskKind::Gauss2d), 3).0;
        for s in 0..20u64 {
            let mut rng = crate::emulator::stream_rng(s, 99, 0);
            let p: Vec<f64> = (0..ReferenceNet::N_PARAMS).map(|_| rng.random_range(-1.5..1.5)).collect();
            let err = check_gradient(&mut |x: &[f64], g: &mut [f64]| mse_and_grad(x, g, &data), &p, 1e-6);
            assert!(err <= 1e-4, "seed {s}: {err}");
        }
    }

    #[test]
    fn xor_reaches_full_accuracy() {
        let r = train_reference(&TaskSpec::new(TaskKind::Xor3), 0).unwrap();
        assert_eq!(r.clean_metric, 100.0);
    }

    #[test]
    fn gauss_reaches_target_and_is_deterministic() {
        let spec = TaskSpec::new(TaskKind::Gauss2d);
        let a = train_reference(&spec, 0).unwrap();
        assert!(a.clean_metric <= GAUSS_TARGET_RMSE, "rmse {}", a.clean_metric);
        let b = train_reference(&spec, 0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_errors_reproduce_clean_metric() {
        let spec = TaskSpec {
            realizations: 50,
            ..TaskSpec::new(TaskKind::Xor3)
        };
        let r = train_reference(&spec, 1).unwrap();
        let zero = ErrorDistribution::from_samples(vec![0.0; 10]).unwrap();
        for mode in [NoiseMode::Multiplicative, NoiseMode::Additive] {
            let spec = TaskSpec { noise_mode: mode, ..spec.clone() };
            let rep = noise_injection_study(&r, &zero, &spec, "zero", 4).unwrap();
            let p = &rep.percentiles;
            for v in [p.p10, p.p25, p.p50, p.p75, p.p90] {
                assert_eq!(v, r.clean_metric);
            }
        }
    }

    #[test]
    fn percentiles_are_ordered_and_accuracy_quantized() {
        let spec = TaskSpec {
            realizations: 300,
            ..TaskSpec::new(TaskKind::Xor3)
        };
        let r = train_reference(&spec, 2).unwrap();
        let errs = ErrorDistribution::from_samples((0..200).map(|i| (i as f64 - 100.0) * 0.04).collect()).unwrap();
        let rep = noise_injection_study(&r, &errs, &spec, "wide", 7).unwrap();
        let p = &rep.percentiles;
        assert!(p.p10 <= p.p25 && p.p25 <= p.p50 && p.p50 <= p.p75 && p.p75 <= p.p90);
        for m in &rep.metrics {
            assert!((m / 12.5 - (m / 12.5).round()).abs() < 1e-12);
        }
        let again = noise_injection_study(&r, &errs, &spec, "wide", 7).unwrap();
        assert_eq!(rep, again);
    }

    #[test]
    fn wider_errors_do_not_help() {
        let spec = TaskSpec {
            realizations: 2000,
            ..TaskSpec::new(TaskKind::Xor3)
        };
        let r = train_reference(&spec, 3).unwrap();
        let narrow: Vec<f64> = (0..400).map(|i| (i as f64 - 200.0) * 0.01).collect();
        let wide: Vec<f64> = narrow.iter().map(|e| 2.0 * e).collect();
        let a = noise_injection_study(&r, &ErrorDistribution::from_samples(narrow).unwrap(), &spec, "n", 5).unwrap();
        let b = noise_injection_study(&r, &ErrorDistribution::from_samples(wide).unwrap(), &spec, "w", 5).unwrap();
        // paired streams: same resampled indices, doubled magnitudes
        assert!(b.percentiles.p50 <= a.percentiles.p50 + 12.5);
    }
}
