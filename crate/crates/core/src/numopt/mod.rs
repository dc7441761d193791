//! Unconstrained quasi-Newton minimization: dense BFGS, limited-memory
//! L-BFGS (two-loop recursion), both driven by a strong-Wolfe line search,
//! plus a central-difference gradient checker.

pub mod gradcheck;
mod line_search;

use std::collections::VecDeque;
use std::io::Write;
use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

pub use gradcheck::{check_gradient, finite_difference_gradient};
use line_search::{strong_wolfe, WolfeParams};

/// A smooth objective and its starting point. The objective writes the
/// gradient into its second argument and returns the value.
pub struct Problem<F> {
    pub x0: Vec<f64>,
    pub objective: F,
}

impl<F> Problem<F>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    pub fn new(x0: Vec<f64>, objective: F) -> Self {
        Self { x0, objective }
    }

    pub fn dimension(&self) -> usize {
        self.x0.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    GradientTolerance,
    MaxIterations,
    LineSearchFailure,
    FunctionTolerance,
    /// The per-iteration observer asked to stop (e.g. early stopping).
    Stopped,
}

/// Data recorded for each accepted step.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub iteration: usize,
    pub step_length: f64,
    pub f_before: f64,
    pub f_after: f64,
    /// Directional derivative at the start of the step.
    pub slope_before: f64,
    /// Directional derivative at the accepted point.
    pub slope_after: f64,
    pub grad_norm: f64,
    pub wolfe: bool,
}

impl StepRecord {
    /// Whether the strong-Wolfe conditions with (`c1`, `c2`) hold for this step.
    pub fn satisfies_wolfe(&self, c1: f64, c2: f64) -> bool {
        self.f_after <= self.f_before + c1 * self.step_length * self.slope_before
            && self.slope_after.abs() <= -c2 * self.slope_before
    }
}

#[derive(Clone, Debug)]
pub struct OptimizeReport {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// ‖∇f‖∞ at `x`.
    pub grad_norm: f64,
    pub termination: Termination,
    pub steps: Vec<StepRecord>,
}

impl OptimizeReport {
    pub fn converged(&self) -> bool {
        matches!(
            self.termination,
            Termination::GradientTolerance | Termination::FunctionTolerance
        )
    }

    /// Writes the trace as CSV rows `iteration,f,grad_norm`.
    pub fn write_trace_csv<W: Write>(&self, out: W) -> crate::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "f", "grad_norm"])?;
        for s in &self.steps {
            w.serialize((s.iteration, s.f_after, s.grad_norm))?;
        }
        w.flush().map_err(|e| crate::Error::io("<trace>", e))?;
        Ok(())
    }
}

/// What the observer sees after every accepted step.
pub struct IterationInfo<'a> {
    pub iteration: usize,
    pub x: &'a [f64],
    pub f: f64,
    pub grad_norm: f64,
}

/// Initial inverse-Hessian scaling used by L-BFGS.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialScaling {
    /// γ = sᵀy / yᵀy from the most recent pair (standard L-BFGS).
    Latest,
    /// γ from the first pair only; with unbounded memory this reproduces dense BFGS.
    FirstPair,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuasiNewtonOptions {
    pub tol_grad: f64,
    pub max_iter: usize,
    /// Stop when the relative decrease of f falls to or below this.
    pub f_tol: f64,
    pub c1: f64,
    pub c2: f64,
    pub max_line_search: usize,
}

impl QuasiNewtonOptions {
    pub fn bfgs() -> Self {
        Self {
            tol_grad: 1e-8,
            max_iter: 2000,
            f_tol: 1e-15,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 25,
        }
    }

    pub fn lbfgs() -> Self {
        Self {
            tol_grad: 1e-6,
            max_iter: 1000,
            ..Self::bfgs()
        }
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_tol_grad(mut self, tol: f64) -> Self {
        self.tol_grad = tol;
        self
    }

    pub fn with_f_tol(mut self, tol: f64) -> Self {
        self.f_tol = tol;
        self
    }
}

impl Default for QuasiNewtonOptions {
    fn default() -> Self {
        Self::bfgs()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Search-direction rule: produces `-H g` and absorbs curvature pairs.
trait InverseHessian {
    fn direction(&self, g: &[f64]) -> Vec<f64>;
    fn update(&mut self, s: &[f64], y: &[f64]);
    fn reset(&mut self);
}

struct DenseBfgs {
    n: usize,
    h: Vec<f64>,
    initialized: bool,
}

impl DenseBfgs {
    fn new(n: usize) -> Self {
        let mut me = Self {
            n,
            h: vec![0.0; n * n],
            initialized: false,
        };
        me.reset();
        me
    }
}

impl InverseHessian for DenseBfgs {
    fn direction(&self, g: &[f64]) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .map(|i| -dot(&self.h[i * n..(i + 1) * n], g))
            .collect()
    }

    fn update(&mut self, s: &[f64], y: &[f64]) {
        let n = self.n;
        let sy = dot(s, y);
        if sy <= 1e-300 {
            return;
        }
        if !self.initialized {
            let gamma = sy / dot(y, y);
            for i in 0..n {
                for j in 0..n {
                    self.h[i * n + j] = if i == j { gamma } else { 0.0 };
                }
            }
            self.initialized = true;
        }
        let rho = 1.0 / sy;
        // H ← H - ρ(H y sᵀ + s yᵀ H) + (ρ² yᵀHy + ρ) s sᵀ
        let hy: Vec<f64> = (0..n).map(|i| dot(&self.h[i * n..(i + 1) * n], y)).collect();
        let yhy = dot(y, &hy);
        let coef = rho * rho * yhy + rho;
        for i in 0..n {
            for j in 0..n {
                self.h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + coef * s[i] * s[j];
            }
        }
    }

    fn reset(&mut self) {
        let n = self.n;
        self.h.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            self.h[i * n + i] = 1.0;
        }
        self.initialized = false;
    }
}

struct TwoLoop {
    memory: usize,
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    scaling: InitialScaling,
    first_gamma: Option<f64>,
}

impl InverseHessian for TwoLoop {
    fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q: Vec<f64> = g.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        let gamma = match (self.scaling, self.pairs.back()) {
            (_, None) => 1.0,
            (InitialScaling::FirstPair, Some(_)) => self.first_gamma.unwrap_or(1.0),
            (InitialScaling::Latest, Some((s, y, _))) => dot(s, y) / dot(y, y),
        };
        q.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }

    fn update(&mut self, s: &[f64], y: &[f64]) {
        let sy = dot(s, y);
        if sy <= 1e-300 || self.memory == 0 {
            return;
        }
        if self.first_gamma.is_none() {
            self.first_gamma = Some(sy / dot(y, y));
        }
        if self.pairs.len() == self.memory {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s.to_vec(), y.to_vec(), 1.0 / sy));
    }

    fn reset(&mut self) {
        self.pairs.clear();
        self.first_gamma = None;
    }
}

fn run<F, H>(
    problem: &mut Problem<F>,
    hess: &mut H,
    opts: &QuasiNewtonOptions,
    observer: &mut dyn FnMut(&IterationInfo) -> ControlFlow<()>,
) -> OptimizeReport
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
    H: InverseHessian,
{
    let n = problem.dimension();
    let eval = &mut problem.objective;
    let mut x = problem.x0.clone();
    let mut g = vec![0.0; n];
    let mut f = eval(&x, &mut g);
    let mut evaluations = 1;
    let mut steps = Vec::new();
    let params = WolfeParams {
        c1: opts.c1,
        c2: opts.c2,
        max_evals: opts.max_line_search,
        tolerance_change: 1e-12,
    };

    let finish = |x: Vec<f64>, f: f64, g: &[f64], it, evals, term, steps| OptimizeReport {
        x,
        f,
        iterations: it,
        evaluations: evals,
        grad_norm: inf_norm(g),
        termination: term,
        steps,
    };

    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return finish(x, f, &g, 0, evaluations, Termination::LineSearchFailure, steps);
    }

    let mut iteration = 0;
    let mut fresh = true;
    loop {
        if inf_norm(&g) <= opts.tol_grad {
            return finish(x, f, &g, iteration, evaluations, Termination::GradientTolerance, steps);
        }
        if iteration >= opts.max_iter {
            return finish(x, f, &g, iteration, evaluations, Termination::MaxIterations, steps);
        }
        let mut d = hess.direction(&g);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            hess.reset();
            fresh = true;
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
        }
        let t0 = if fresh {
            (1.0 / g.iter().map(|v| v * v).sum::<f64>().sqrt()).min(1.0)
        } else {
            1.0
        };
        let outcome = match strong_wolfe(eval, &x, &d, f, &g, t0, params) {
            Some(o) => o,
            None if !fresh => {
                // stale curvature information; retry once along steepest descent
                hess.reset();
                fresh = true;
                continue;
            }
            None => {
                return finish(x, f, &g, iteration, evaluations, Termination::LineSearchFailure, steps);
            }
        };
        evaluations += outcome.evaluations;
        iteration += 1;
        fresh = false;

        let s: Vec<f64> = d.iter().map(|v| v * outcome.step).collect();
        let y: Vec<f64> = outcome.grad.iter().zip(&g).map(|(a, b)| a - b).collect();
        for (xi, si) in x.iter_mut().zip(&s) {
            *xi += si;
        }
        let f_before = f;
        f = outcome.f;
        g = outcome.grad;
        hess.update(&s, &y);

        let record = StepRecord {
            iteration,
            step_length: outcome.step,
            f_before,
            f_after: f,
            slope_before: slope,
            slope_after: dot(&g, &d),
            grad_norm: inf_norm(&g),
            wolfe: outcome.wolfe,
        };
        steps.push(record);

        let info = IterationInfo {
            iteration,
            x: &x,
            f,
            grad_norm: inf_norm(&g),
        };
        if observer(&info).is_break() {
            return finish(x, f, &g, iteration, evaluations, Termination::Stopped, steps);
        }
        let scale = f_before.abs().max(f.abs()).max(1.0);
        if f_before - f <= opts.f_tol * scale {
            return finish(x, f, &g, iteration, evaluations, Termination::FunctionTolerance, steps);
        }
    }
}

/// Dense BFGS with H₀ = I for the first step and H₀ = (sᵀy/yᵀy)·I before the
/// first update.
pub fn bfgs_minimize<F>(problem: Problem<F>, opts: &QuasiNewtonOptions) -> OptimizeReport
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    bfgs_minimize_observed(problem, opts, &mut |_| ControlFlow::Continue(()))
}

pub fn bfgs_minimize_observed<F>(
    mut problem: Problem<F>,
    opts: &QuasiNewtonOptions,
    observer: &mut dyn FnMut(&IterationInfo) -> ControlFlow<()>,
) -> OptimizeReport
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let mut h = DenseBfgs::new(problem.dimension());
    run(&mut problem, &mut h, opts, observer)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub scaling: InitialScaling,
    pub base: QuasiNewtonOptions,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            scaling: InitialScaling::Latest,
            base: QuasiNewtonOptions::lbfgs(),
        }
    }
}

pub fn lbfgs_minimize<F>(problem: Problem<F>, opts: &LbfgsOptions) -> OptimizeReport
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    lbfgs_minimize_observed(problem, opts, &mut |_| ControlFlow::Continue(()))
}

pub fn lbfgs_minimize_observed<F>(
    mut problem: Problem<F>,
    opts: &LbfgsOptions,
    observer: &mut dyn FnMut(&IterationInfo) -> ControlFlow<()>,
) -> OptimizeReport
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let mut h = TwoLoop {
        memory: opts.memory,
        pairs: VecDeque::with_capacity(opts.memory),
        scaling: opts.scaling,
        first_gamma: None,
    };
    run(&mut problem, &mut h, &opts.base, observer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rosenbrock(x: &[f64], g: &mut [f64]) -> f64 {
        let (a, b) = (x[0], x[1]);
        g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
        g[1] = 200.0 * (b - a * a);
        (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
    }

    /// Diagonal quadratic ½ Σ cᵢ (xᵢ - aᵢ)².
    fn quadratic(c: Vec<f64>, a: Vec<f64>) -> impl FnMut(&[f64], &mut [f64]) -> f64 {
        move |x, g| {
            let mut f = 0.0;
            for i in 0..x.len() {
                let r = x[i] - a[i];
                g[i] = c[i] * r;
                f += 0.5 * c[i] * r * r;
            }
            f
        }
    }

    #[test]
    fn bfgs_shifted_sphere() {
        let a: Vec<f64> = (0..6).map(|i| i as f64 - 2.5).collect();
        let target = a.clone();
        let f = move |x: &[f64], g: &mut [f64]| {
            let mut s = 0.0;
            for i in 0..x.len() {
                g[i] = 2.0 * (x[i] - target[i]);
                s += (x[i] - target[i]).powi(2);
            }
            s
        };
        let r = bfgs_minimize(Problem::new(vec![3.0; 6], f), &QuasiNewtonOptions::bfgs());
        assert!(r.iterations <= 5, "{} iterations", r.iterations);
        for (x, t) in r.x.iter().zip(&a) {
            assert!((x - t).abs() < 1e-10);
        }
    }

    #[test]
    fn bfgs_rosenbrock() {
        let r = bfgs_minimize(
            Problem::new(vec![-1.2, 1.0], rosenbrock),
            &QuasiNewtonOptions::bfgs(),
        );
        assert!(r.iterations <= 200);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6, "{:?}", r.x);
    }

    #[test]
    fn bfgs_cosine_stationary_point() {
        let n = 7;
        let f = |x: &[f64], g: &mut [f64]| {
            for i in 0..x.len() {
                g[i] = -x[i].sin();
            }
            x.iter().map(|v| v.cos()).sum()
        };
        let x0 = vec![std::f64::consts::FRAC_PI_2 + 0.05; n];
        let opts = QuasiNewtonOptions::bfgs();
        let r = bfgs_minimize(Problem::new(x0, f), &opts);
        assert!(r.grad_norm <= opts.tol_grad);
        assert!((r.f + n as f64).abs() < 1e-12);
    }

    #[test]
    fn lbfgs_matches_bfgs_on_convex_quadratic() {
        let n = 50;
        let c: Vec<f64> = (0..n).map(|i| 1.0 + 0.37 * i as f64).collect();
        let a: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
        let opts = QuasiNewtonOptions::bfgs().with_tol_grad(1e-10);
        let rb = bfgs_minimize(Problem::new(vec![0.0; n], quadratic(c.clone(), a.clone())), &opts);
        let rl = lbfgs_minimize(
            Problem::new(vec![0.0; n], quadratic(c, a)),
            &LbfgsOptions {
                base: opts,
                ..Default::default()
            },
        );
        assert!(rb.f.abs() < 1e-12 && rl.f.abs() < 1e-12);
        assert!((rb.f - rl.f).abs() < 1e-8);
    }

    #[test]
    fn full_memory_lbfgs_reproduces_bfgs_iterates() {
        let n = 8;
        let c: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 * 1.3).collect();
        let a: Vec<f64> = (0..n).map(|i| 0.5 - 0.2 * i as f64).collect();
        let mut bfgs_iterates = Vec::new();
        let mut lbfgs_iterates = Vec::new();
        let opts = QuasiNewtonOptions::bfgs().with_tol_grad(1e-12);
        bfgs_minimize_observed(
            Problem::new(vec![1.0; n], quadratic(c.clone(), a.clone())),
            &opts,
            &mut |info| {
                bfgs_iterates.push(info.x.to_vec());
                ControlFlow::Continue(())
            },
        );
        lbfgs_minimize_observed(
            Problem::new(vec![1.0; n], quadratic(c, a)),
            &LbfgsOptions {
                memory: n,
                scaling: InitialScaling::FirstPair,
                base: opts,
            },
            &mut |info| {
                lbfgs_iterates.push(info.x.to_vec());
                ControlFlow::Continue(())
            },
        );
        let common = bfgs_iterates.len().min(lbfgs_iterates.len()).min(n);
        assert!(common >= 3);
        for k in 0..common {
            for (p, q) in bfgs_iterates[k].iter().zip(&lbfgs_iterates[k]) {
                assert!((p - q).abs() < 1e-10, "iterate {k}: {p} vs {q}");
            }
        }
    }

    #[test]
    fn stationary_start_terminates_immediately() {
        let r = lbfgs_minimize(
            Problem::new(vec![2.0, -1.0], quadratic(vec![1.0, 3.0], vec![2.0, -1.0])),
            &LbfgsOptions::default(),
        );
        assert_eq!(r.iterations, 0);
        assert_eq!(r.termination, Termination::GradientTolerance);
        assert_eq!(r.x, vec![2.0, -1.0]);
    }

    #[test]
    fn non_finite_start_reports_line_search_failure() {
        let f = |_: &[f64], g: &mut [f64]| {
            g[0] = 0.0;
            f64::NAN
        };
        let r = bfgs_minimize(Problem::new(vec![0.0], f), &QuasiNewtonOptions::bfgs());
        assert_eq!(r.termination, Termination::LineSearchFailure);
    }

    #[test]
    fn observer_can_stop() {
        let r = lbfgs_minimize_observed(
            Problem::new(vec![-1.2, 1.0], rosenbrock),
            &LbfgsOptions::default(),
            &mut |info| {
                if info.iteration >= 3 {
                    ControlFlow::Break(())
                } else {
                    ControlFlow::Continue(())
                }
            },
        );
        assert_eq!(r.termination, Termination::Stopped);
        assert_eq!(r.iterations, 3);
    }

    #[test]
    fn trace_csv_has_one_row_per_step() {
        let r = bfgs_minimize(
            Problem::new(vec![-1.2, 1.0], rosenbrock),
            &QuasiNewtonOptions::bfgs(),
        );
        let mut buf = Vec::new();
        r.write_trace_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), r.steps.len() + 1);
    }

    #[test]
    fn rosenbrock_steps_descend_and_satisfy_wolfe() {
        for r in [
            bfgs_minimize(Problem::new(vec![-1.2, 1.0], rosenbrock), &QuasiNewtonOptions::bfgs()),
            lbfgs_minimize(Problem::new(vec![-1.2, 1.0], rosenbrock), &LbfgsOptions::default()),
        ] {
            for s in &r.steps {
                assert!(s.f_after < s.f_before);
                assert!(s.wolfe && s.satisfies_wolfe(1e-4, 0.9));
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn descent_and_wolfe_on_random_quadratics(
            c in proptest::collection::vec(0.1f64..50.0, 4),
            a in proptest::collection::vec(-3.0f64..3.0, 4),
            x0 in proptest::collection::vec(-5.0f64..5.0, 4),
        ) {
            let r = bfgs_minimize(Problem::new(x0, quadratic(c, a.clone())), &QuasiNewtonOptions::bfgs());
            for s in &r.steps {
                prop_assert!(s.f_after < s.f_before);
                prop_assert!(s.satisfies_wolfe(1e-4, 0.9));
            }
            for (x, t) in r.x.iter().zip(&a) {
                prop_assert!((x - t).abs() < 1e-6);
            }
        }

        #[test]
        fn argmin_invariant_under_positive_scaling(scale in 0.01f64..100.0) {
            let scaled = move |x: &[f64], g: &mut [f64]| {
                let f = rosenbrock(x, g);
                g.iter_mut().for_each(|v| *v *= scale);
                f * scale
            };
            let opts = QuasiNewtonOptions::bfgs().with_tol_grad(1e-10 * scale.min(1.0));
            let r = bfgs_minimize(Problem::new(vec![-1.2, 1.0], scaled), &opts);
            prop_assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5);
        }
    }
}
