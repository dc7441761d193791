//! Error metrics and the training-set-size × seed study.

use serde::{Deserialize, Serialize};

use crate::dataset::{SplitName, WeightDataset};
use crate::error::{ensure, Error, Result};
use crate::mesh::{N_WEIGHTS, WEIGHT_FLOOR_DB};
use crate::model::{fit_model, FitOptions, ForwardModel, ModelKind};
use crate::nn::TrainedSurrogate;

/// Root-mean-square dB difference over all entries.
pub fn rmse_db(pred: &[f64], label: &[f64]) -> Result<f64> {
    ensure!(
        pred.len() == label.len(),
        "prediction has {} entries, labels {}",
        pred.len(),
        label.len()
    );
    ensure!(!pred.is_empty(), "RMSE of zero entries");
    let ss: f64 = pred.iter().zip(label).map(|(p, l)| (p - l) * (p - l)).sum();
    Ok((ss / pred.len() as f64).sqrt())
}

/// Coefficient of determination `1 − SS_res/SS_tot`.
pub fn r_squared(pred: &[f64], label: &[f64]) -> Result<f64> {
    ensure!(
        pred.len() == label.len(),
        "prediction has {} entries, labels {}",
        pred.len(),
        label.len()
    );
    ensure!(label.len() >= 2, "R² needs at least two entries");
    let mean = label.iter().sum::<f64>() / label.len() as f64;
    let ss_tot: f64 = label.iter().map(|l| (l - mean) * (l - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::Undefined("R² is undefined for constant labels".into()));
    }
    let ss_res: f64 = pred.iter().zip(label).map(|(p, l)| (p - l) * (p - l)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Signed errors `predicted − measured` in dB.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorDistribution {
    pub samples: Vec<f64>,
    pub rmse_db: f64,
    pub min_db: f64,
    pub max_db: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// Left edge of the first bin.
    pub start_db: f64,
    pub bin_width_db: f64,
    pub counts: Vec<usize>,
    /// Probability density per bin; integrates to 1.
    pub pdf: Vec<f64>,
}

impl Histogram {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bin_left_db", "bin_right_db", "count", "pdf"])?;
        for (i, (c, d)) in self.counts.iter().zip(&self.pdf).enumerate() {
            let left = self.start_db + i as f64 * self.bin_width_db;
            w.write_record([
                left.to_string(),
                (left + self.bin_width_db).to_string(),
                c.to_string(),
                d.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))
    }
}

pub const DEFAULT_BIN_WIDTH_DB: f64 = 0.1;

impl ErrorDistribution {
    pub fn from_samples(samples: Vec<f64>) -> Result<Self> {
        ensure!(!samples.is_empty(), "error distribution needs at least one sample");
        ensure!(samples.iter().all(|e| e.is_finite()), "error samples must be finite");
        let rmse_db = (samples.iter().map(|e| e * e).sum::<f64>() / samples.len() as f64).sqrt();
        let min_db = samples.iter().copied().fold(f64::INFINITY, f64::min);
        let max_db = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            samples,
            rmse_db,
            min_db,
            max_db,
        })
    }

    /// Bins aligned to multiples of `bin_width_db`.
    pub fn histogram(&self, bin_width_db: f64) -> Result<Histogram> {
        ensure!(bin_width_db > 0.0, "bin width must be positive");
        let start = (self.min_db / bin_width_db).floor();
        let end = (self.max_db / bin_width_db).floor();
        let n_bins = (end - start) as usize + 1;
        let mut counts = vec![0usize; n_bins];
        for &e in &self.samples {
            let b = ((e / bin_width_db).floor() - start) as usize;
            counts[b.min(n_bins - 1)] += 1;
        }
        let norm = self.samples.len() as f64 * bin_width_db;
        Ok(Histogram {
            start_db: start * bin_width_db,
            bin_width_db,
            pdf: counts.iter().map(|&c| c as f64 / norm).collect(),
            counts,
        })
    }
}

/// Predictions and floored labels flattened in the same
/// (record, weight, channel) order.
pub fn predictions_and_labels(model: &ForwardModel, ds: &WeightDataset) -> Result<(Vec<f64>, Vec<f64>)> {
    let ds = model.align(ds)?;
    ensure!(!ds.is_empty(), "evaluation set is empty");
    let pred = model.predict_many(&ds.voltages())?;
    let flat_pred: Vec<f64> = pred.into_iter().flatten().flatten().collect();
    let labels: Vec<f64> = ds.flat_weights().into_iter().map(|w| w.max(WEIGHT_FLOOR_DB)).collect();
    Ok((flat_pred, labels))
}

pub fn model_rmse_db(model: &ForwardModel, ds: &WeightDataset) -> Result<f64> {
    let (p, l) = predictions_and_labels(model, ds)?;
    rmse_db(&p, &l)
}

pub fn surrogate_rmse_db(model: &TrainedSurrogate, ds: &WeightDataset) -> Result<f64> {
    model_rmse_db(&ForwardModel::Surrogate { model: Box::new(model.clone()) }, ds)
}

pub fn error_distribution(model: &ForwardModel, ds: &WeightDataset) -> Result<ErrorDistribution> {
    let (p, l) = predictions_and_labels(model, ds)?;
    ErrorDistribution::from_samples(p.iter().zip(&l).map(|(a, b)| a - b).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelRmse {
    pub channel: usize,
    pub wavelength_nm: f64,
    pub rmse_db: f64,
}

pub fn per_wavelength_rmse(model: &ForwardModel, ds: &WeightDataset) -> Result<Vec<ChannelRmse>> {
    let ds = model.align(ds)?;
    let (p, l) = predictions_and_labels(model, &ds)?;
    let n_ch = ds.n_channels();
    let mut ss = vec![0.0; n_ch];
    for (i, (a, b)) in p.iter().zip(&l).enumerate() {
        ss[i % n_ch] += (a - b) * (a - b);
    }
    let per = (ds.len() * N_WEIGHTS) as f64;
    Ok(ss
        .iter()
        .enumerate()
        .map(|(k, s)| ChannelRmse {
            channel: k,
            wavelength_nm: ds.grid.center_wavelengths_nm[k],
            rmse_db: (s / per).sqrt(),
        })
        .collect())
}

pub fn write_channel_rmse_csv<W: std::io::Write>(rows: &[ChannelRmse], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["channel", "wavelength_nm", "rmse_db"])?;
    for r in rows {
        w.write_record([r.channel.to_string(), r.wavelength_nm.to_string(), r.rmse_db.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

/// Summary metrics of one model on one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub model: String,
    pub split: String,
    pub n_records: usize,
    pub rmse_db: f64,
    pub r_squared: Option<f64>,
    pub min_error_db: f64,
    pub max_error_db: f64,
}

pub fn evaluate(model: &ForwardModel, ds: &WeightDataset, split: &str) -> Result<EvaluationSummary> {
    let (p, l) = predictions_and_labels(model, ds)?;
    let dist = ErrorDistribution::from_samples(p.iter().zip(&l).map(|(a, b)| a - b).collect())?;
    Ok(EvaluationSummary {
        model: model.name().to_string(),
        split: split.to_string(),
        n_records: ds.len(),
        rmse_db: dist.rmse_db,
        r_squared: r_squared(&p, &l).ok(),
        min_error_db: dist.min_db,
        max_error_db: dist.max_db,
    })
}

/// Linear-interpolation percentile (`q` in [0, 100]) of sorted data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty data");
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Twelve training-set sizes, logarithmically spaced from 250 to 3570 with
/// 3250 substituted for its nearest neighbor.
pub fn default_sweep_sizes() -> Vec<usize> {
    let (lo, hi) = (250f64.ln(), 3570f64.ln());
    let mut sizes: Vec<usize> = (0..12)
        .map(|i| (lo + (hi - lo) * i as f64 / 11.0).exp().round() as usize)
        .collect();
    let nearest = (0..sizes.len() - 1)
        .min_by_key(|&i| sizes[i].abs_diff(3250))
        .expect("twelve sizes");
    sizes[nearest] = 3250;
    sizes
}

pub fn default_sweep_seeds() -> Vec<u64> {
    (0..10).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub size: usize,
    pub seed: u64,
    pub train_rmse_db: f64,
    pub validation_rmse_db: f64,
    pub test_rmse_db: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeSummary {
    pub size: usize,
    pub p25_db: f64,
    pub median_db: f64,
    pub p75_db: f64,
}

impl SizeSummary {
    pub fn iqr_db(&self) -> f64 {
        self.p75_db - self.p25_db
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeSweepReport {
    pub model: String,
    pub cells: Vec<SweepCell>,
    /// Percentiles of the testing RMSE per size.
    pub summary: Vec<SizeSummary>,
}

impl SizeSweepReport {
    pub fn summary_for(&self, size: usize) -> Option<&SizeSummary> {
        self.summary.iter().find(|s| s.size == size)
    }

    pub fn write_cells_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["model", "size", "seed", "train_rmse_db", "validation_rmse_db", "test_rmse_db"])?;
        for c in &self.cells {
            w.write_record([
                self.model.clone(),
                c.size.to_string(),
                c.seed.to_string(),
                c.train_rmse_db.to_string(),
                c.validation_rmse_db.to_string(),
                c.test_rmse_db.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))
    }

    pub fn write_summary_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["model", "size", "p25_db", "median_db", "p75_db"])?;
        for s in &self.summary {
            w.write_record([
                self.model.clone(),
                s.size.to_string(),
                s.p25_db.to_string(),
                s.median_db.to_string(),
                s.p75_db.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))
    }
}

/// Fits `kind` for every (size, seed) on the first `size` records of the
/// fixed training split and scores it on all three splits. Cells run in
/// parallel when the `parallel` feature is on; results are ordered by
/// (size, seed) either way.
pub fn size_seed_sweep(
    kind: &ModelKind,
    ds: &WeightDataset,
    sizes: &[usize],
    seeds: &[u64],
    opts: &FitOptions,
) -> Result<SizeSweepReport> {
    ensure!(!sizes.is_empty() && !seeds.is_empty(), "sweep needs at least one size and one seed");
    let n_train = ds.splits.training.len();
    for &s in sizes {
        ensure!(s >= 1, "training size must be at least 1");
        ensure!(s <= n_train, "training size {s} exceeds the {n_train} training records");
    }
    let training = ds.split(SplitName::Training);
    let validation = ds.split(SplitName::Validation);
    let testing = ds.split(SplitName::Testing);
    let mut jobs: Vec<(usize, u64)> = sizes.iter().flat_map(|&s| seeds.iter().map(move |&d| (s, d))).collect();
    jobs.sort_unstable();
    jobs.dedup();
    let run = |&(size, seed): &(usize, u64)| -> Result<SweepCell> {
        let (model, _) = fit_model(kind, ds, Some(size), seed, opts)?;
        Ok(SweepCell {
            size,
            seed,
            train_rmse_db: model_rmse_db(&model, &training.head(size))?,
            validation_rmse_db: model_rmse_db(&model, &validation)?,
            test_rmse_db: model_rmse_db(&model, &testing)?,
        })
    };
    #[cfg(feature = "parallel")]
    let cells: Vec<SweepCell> = {
        use rayon::prelude::*;
        jobs.par_iter().map(run).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let cells: Vec<SweepCell> = jobs.iter().map(run).collect::<Result<_>>()?;

    let mut size_list: Vec<usize> = jobs.iter().map(|j| j.0).collect();
    size_list.dedup();
    let summary = size_list
        .into_iter()
        .map(|size| {
            let v = sorted(
                &cells
                    .iter()
                    .filter(|c| c.size == size)
                    .map(|c| c.test_rmse_db)
                    .collect::<Vec<_>>(),
            );
            SizeSummary {
                size,
                p25_db: percentile(&v, 25.0),
                median_db: percentile(&v, 50.0),
                p75_db: percentile(&v, 75.0),
            }
        })
        .collect();
    Ok(SizeSweepReport {
        model: kind.name().to_string(),
        cells,
        summary,
    })
}
