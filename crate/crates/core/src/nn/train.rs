//! Full-batch L-BFGS training with validation early stopping.

use std::cell::RefCell;
use std::ops::ControlFlow;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{forward_all, loss_and_grad, LayerSpec, Network};
use crate::error::{ensure, Error, Result};
use crate::numopt::{lbfgs_minimize_observed, LbfgsOptions, Problem, QuasiNewtonOptions, Termination};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub max_epochs: usize,
    /// Epochs without a validation improvement larger than
    /// `min_improvement_db` before training stops.
    pub patience: usize,
    pub min_improvement_db: f64,
    pub memory: usize,
    pub init_scale: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            max_epochs: 1000,
            patience: 50,
            min_improvement_db: 0.001,
            memory: 10,
            init_scale: 1.0,
        }
    }
}

/// Stopping rule on a validation curve: stop once `patience` consecutive
/// epochs fail to improve on the last significant best by more than
/// `min_delta`, while tracking the exact best epoch for checkpointing.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    reference: f64,
    stale: usize,
    pub best: f64,
    pub best_epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            reference: f64::INFINITY,
            stale: 0,
            best: f64::INFINITY,
            best_epoch: 0,
        }
    }

    /// Records epoch `epoch`; returns `(is_new_best, stop)`.
    pub fn observe(&mut self, epoch: usize, value: f64) -> (bool, bool) {
        let new_best = value < self.best;
        if new_best {
            self.best = value;
            self.best_epoch = epoch;
        }
        if value < self.reference - self.min_delta {
            self.reference = value;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        (new_best, self.stale >= self.patience)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_rmse_db: f64,
    pub validation_rmse_db: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_validation_rmse_db: f64,
    pub termination: Termination,
    pub early_stopped: bool,
    pub restarts: usize,
}

impl TrainingHistory {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "train_rmse_db", "validation_rmse_db"])?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.train_rmse_db.to_string(),
                e.validation_rmse_db.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Normalized inputs and targets plus the dB size of one normalized unit per
/// output column.
pub struct TrainingData<'a> {
    pub x: ArrayView2<'a, f64>,
    pub y: ArrayView2<'a, f64>,
}

/// RMSE in dB of normalized predictions, given per-output half ranges.
pub fn rmse_db_scaled(pred: &Array2<f64>, target: ArrayView2<f64>, half_range: &[f64]) -> f64 {
    let cols = half_range.len();
    let mut acc = 0.0;
    for (i, (p, t)) in pred.iter().zip(target.iter()).enumerate() {
        let e = (p - t) * half_range[i % cols];
        acc += e * e;
    }
    (acc / pred.len() as f64).sqrt()
}

/// Trains `layers` from a Glorot initialization drawn from `seed`.
///
/// Each L-BFGS iteration is one epoch. The returned network holds the
/// parameters with the lowest validation RMSE seen. A non-finite initial or
/// final loss triggers one restart at half the initialization scale.
pub fn train_network(
    layers: &[LayerSpec],
    train: &TrainingData,
    validation: &TrainingData,
    half_range: &[f64],
    seed: u64,
    opts: &TrainOptions,
) -> Result<(Network, TrainingHistory)> {
    ensure!(train.x.nrows() > 0, "training set is empty");
    ensure!(validation.x.nrows() > 0, "validation set is empty");
    ensure!(
        train.y.ncols() == half_range.len() && validation.y.ncols() == half_range.len(),
        "target width does not match the output normalization"
    );
    let mut scale = opts.init_scale;
    for restart in 0..2 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Network::initialized(layers.to_vec(), &mut rng, scale)?;
        ensure!(
            net.input_width() == train.x.ncols() && net.output_width() == train.y.ncols(),
            "network shape {}→{} does not match data {}→{}",
            net.input_width(),
            net.output_width(),
            train.x.ncols(),
            train.y.ncols()
        );
        let (trained, mut history) = run_training(net, train, validation, half_range, opts);
        if history.best_validation_rmse_db.is_finite()
            && trained.params.iter().all(|p| p.is_finite())
        {
            history.restarts = restart;
            return Ok((trained, history));
        }
        scale *= 0.5;
    }
    Err(Error::Numerical(
        "training diverged twice (non-finite loss); giving up".into(),
    ))
}

fn run_training(
    net: Network,
    train: &TrainingData,
    validation: &TrainingData,
    half_range: &[f64],
    opts: &TrainOptions,
) -> (Network, TrainingHistory) {
    let layers = net.layers.clone();
    // parameters and training dB RMSE of the most recent objective evaluation
    let last_eval: RefCell<(Vec<f64>, f64)> = RefCell::new((Vec::new(), f64::NAN));
    let objective = |p: &[f64], g: &mut [f64]| {
        let (loss, grad, pred) = loss_and_grad(&layers, p, train.x, train.y);
        g.copy_from_slice(&grad);
        let mut cache = last_eval.borrow_mut();
        cache.0.clear();
        cache.0.extend_from_slice(p);
        cache.1 = rmse_db_scaled(&pred, train.y, half_range);
        loss
    };

    let val_rmse = |p: &[f64]| {
        let acts = forward_all(&layers, p, validation.x);
        rmse_db_scaled(acts.last().unwrap(), validation.y, half_range)
    };
    let train_rmse = |p: &[f64]| {
        let acts = forward_all(&layers, p, train.x);
        rmse_db_scaled(acts.last().unwrap(), train.y, half_range)
    };

    let mut stopper = EarlyStopping::new(opts.patience, opts.min_improvement_db);
    let mut best_params = net.params.clone();
    let v0 = val_rmse(&net.params);
    stopper.observe(0, v0);
    let mut epochs = vec![EpochRecord {
        epoch: 0,
        train_rmse_db: train_rmse(&net.params),
        validation_rmse_db: v0,
    }];
    let mut early_stopped = false;

    let lbfgs = LbfgsOptions {
        memory: opts.memory,
        base: QuasiNewtonOptions::lbfgs().with_max_iter(opts.max_epochs),
        ..LbfgsOptions::default()
    };
    let report = {
    let mut observer = |info: &crate::numopt::IterationInfo| {
        let tr = {
            let cache = last_eval.borrow();
            if cache.0.as_slice() == info.x {
                cache.1
            } else {
                f64::NAN
            }
        };
        let tr = if tr.is_nan() { train_rmse(info.x) } else { tr };
        let va = val_rmse(info.x);
        epochs.push(EpochRecord {
            epoch: info.iteration,
            train_rmse_db: tr,
            validation_rmse_db: va,
        });
        let (new_best, stop) = stopper.observe(info.iteration, va);
        if new_best {
            best_params.copy_from_slice(info.x);
        }
        if stop {
            early_stopped = true;
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    };
    lbfgs_minimize_observed(Problem::new(net.params.clone(), objective), &lbfgs, &mut observer)
    };
    let history = TrainingHistory {
        epochs,
        best_epoch: stopper.best_epoch,
        best_validation_rmse_db: stopper.best,
        termination: report.termination,
        early_stopped,
        restarts: 0,
    };
    (
        Network {
            layers,
            params: best_params,
        },
        history,
    )
}
