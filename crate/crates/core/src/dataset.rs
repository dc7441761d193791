//! Voltage→weight measurement datasets: records, named splits, band
//! integration and the JSON Lines / sidecar / CSV file formats.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::mesh::{db_to_linear, floored_db, Voltages, MAX_VOLTAGE, N_PORTS, N_WEIGHTS, WEIGHT_FLOOR_DB};
use crate::wavelength::WavelengthGrid;

/// One measurement: nine heater voltages and the 9×N_λ weights they produce.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: u64,
    pub voltages_v: Voltages,
    /// Row `p` (flattened weight index) holds that weight at every channel.
    pub weights_db: Vec<Vec<f64>>,
}

impl Record {
    pub fn weight(&self, p: usize, k: usize) -> f64 {
        self.weights_db[p][k]
    }

    /// Weights at channel `k`.
    pub fn at_channel(&self, k: usize) -> [f64; N_WEIGHTS] {
        std::array::from_fn(|p| self.weights_db[p][k])
    }
}

/// Record indices of each named subset; they are pairwise disjoint.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    #[serde(default)]
    pub sweep: Vec<usize>,
    #[serde(default)]
    pub training: Vec<usize>,
    #[serde(default)]
    pub validation: Vec<usize>,
    #[serde(default)]
    pub testing: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Sweep,
    Training,
    Validation,
    Testing,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Sweep => "sweep",
            SplitName::Training => "training",
            SplitName::Validation => "validation",
            SplitName::Testing => "testing",
        }
    }
}

impl Splits {
    pub fn get(&self, name: SplitName) -> &[usize] {
        match name {
            SplitName::Sweep => &self.sweep,
            SplitName::Training => &self.training,
            SplitName::Validation => &self.validation,
            SplitName::Testing => &self.testing,
        }
    }

    fn all(&self) -> [(SplitName, &Vec<usize>); 4] {
        [
            (SplitName::Sweep, &self.sweep),
            (SplitName::Training, &self.training),
            (SplitName::Validation, &self.validation),
            (SplitName::Testing, &self.testing),
        ]
    }

    fn split_of(&self, index: usize) -> Option<SplitName> {
        self.all()
            .into_iter()
            .find(|(_, ids)| ids.binary_search(&index).is_ok())
            .map(|(n, _)| n)
    }
}

/// Provenance carried in the sidecar metadata file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetProvenance {
    pub seed: u64,
    pub chip_config_sha256: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightDataset {
    pub grid: WavelengthGrid,
    pub records: Vec<Record>,
    pub splits: Splits,
    pub provenance: DatasetProvenance,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format: String,
    units: Units,
    n_records: usize,
    grid: WavelengthGrid,
    seed: u64,
    chip_config_sha256: String,
    splits: Splits,
}

#[derive(Serialize, Deserialize)]
struct Units {
    voltages: String,
    weights: String,
    wavelength: String,
}

impl Units {
    fn standard() -> Self {
        Self {
            voltages: "V".into(),
            weights: "dB".into(),
            wavelength: "nm".into(),
        }
    }
}

const FORMAT_TAG: &str = "omm-weight-dataset/1";

/// Sidecar metadata path: `data.jsonl` → `data.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

impl WeightDataset {
    pub fn new(grid: WavelengthGrid, records: Vec<Record>) -> Self {
        Self {
            grid,
            records,
            splits: Splits::default(),
            provenance: DatasetProvenance::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_channels(&self) -> usize {
        self.grid.n_channels
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let n_ch = self.grid.n_channels;
        for r in &self.records {
            ensure!(
                r.voltages_v.iter().all(|&v| (0.0..=MAX_VOLTAGE).contains(&v)),
                "record {} has voltages outside [0, {MAX_VOLTAGE}] V",
                r.id
            );
            ensure!(
                r.weights_db.len() == N_WEIGHTS && r.weights_db.iter().all(|row| row.len() == n_ch),
                "record {} does not hold 9x{} weights",
                r.id,
                n_ch
            );
            ensure!(
                r.weights_db.iter().flatten().all(|&w| w >= WEIGHT_FLOOR_DB && w.is_finite()),
                "record {} has weights below the {WEIGHT_FLOOR_DB} dB floor",
                r.id
            );
        }
        let mut owner = vec![None; self.records.len()];
        for (name, ids) in self.splits.all() {
            for &i in ids {
                ensure!(
                    i < self.records.len(),
                    "{} split references record {} of {}",
                    name.as_str(),
                    i,
                    self.records.len()
                );
                ensure!(
                    owner[i].is_none(),
                    "record {} belongs to more than one split",
                    i
                );
                owner[i] = Some(name);
            }
        }
        Ok(())
    }

    /// Records of a named split as a stand-alone dataset.
    pub fn split(&self, name: SplitName) -> WeightDataset {
        self.subset(self.splits.get(name))
    }

    /// The given records, in order, without split annotations.
    pub fn subset(&self, indices: &[usize]) -> WeightDataset {
        WeightDataset {
            grid: self.grid.clone(),
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            splits: Splits::default(),
            provenance: self.provenance.clone(),
        }
    }

    /// First `n` records.
    pub fn head(&self, n: usize) -> WeightDataset {
        let n = n.min(self.records.len());
        self.subset(&(0..n).collect::<Vec<_>>())
    }

    /// Appends `other`'s records and splits, shifting its split indices.
    pub fn append(&mut self, other: &WeightDataset) -> Result<()> {
        ensure!(self.grid == other.grid, "cannot append a dataset on a different wavelength grid");
        let offset = self.records.len();
        self.records.extend(other.records.iter().cloned());
        let shifted = |ids: &[usize]| ids.iter().map(|i| i + offset).collect::<Vec<_>>();
        self.splits.sweep.extend(shifted(&other.splits.sweep));
        self.splits.training.extend(shifted(&other.splits.training));
        self.splits.validation.extend(shifted(&other.splits.validation));
        self.splits.testing.extend(shifted(&other.splits.testing));
        self.validate()
    }

    /// Training set with the validation records appended, for models that do
    /// not use a validation set.
    pub fn training_with_validation(&self) -> WeightDataset {
        let mut ids = self.splits.training.clone();
        ids.extend_from_slice(&self.splits.validation);
        self.subset(&ids)
    }

    /// The dataset restricted to channel `k`.
    pub fn select_channel(&self, k: usize) -> WeightDataset {
        WeightDataset {
            grid: self.grid.channel(k),
            records: self
                .records
                .iter()
                .map(|r| Record {
                    id: r.id,
                    voltages_v: r.voltages_v,
                    weights_db: r.weights_db.iter().map(|row| vec![row[k]]).collect(),
                })
                .collect(),
            splits: self.splits.clone(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn voltages(&self) -> Vec<Voltages> {
        self.records.iter().map(|r| r.voltages_v).collect()
    }

    /// All weights flattened record-major, then weight `p`, then channel.
    pub fn flat_weights(&self) -> Vec<f64> {
        self.records
            .iter()
            .flat_map(|r| r.weights_db.iter().flatten().copied())
            .collect()
    }

    /// Stable content hash of the records (hex SHA-256 of the JSON Lines body).
    pub fn content_hash(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("in-memory write");
        crate::sha256_hex(&buf)
    }

    fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r).map_err(|e| Error::json("dataset record", e))?;
            out.write_all(b"\n").map_err(|e| Error::io("<dataset>", e))?;
        }
        Ok(())
    }

    /// Writes the JSON Lines record file and its sidecar metadata.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_jsonl(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))?;

        let meta = Sidecar {
            format: FORMAT_TAG.into(),
            units: Units::standard(),
            n_records: self.records.len(),
            grid: self.grid.clone(),
            seed: self.provenance.seed,
            chip_config_sha256: self.provenance.chip_config_sha256.clone(),
            splits: self.splits.clone(),
        };
        crate::write_json(&sidecar_path(path), &meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let meta_path = sidecar_path(path);
        let meta: Sidecar = crate::read_json(&meta_path)?;
        ensure!(
            meta.format == FORMAT_TAG,
            "{} is not a weight dataset sidecar ({})",
            meta_path.display(),
            meta.format
        );
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::with_capacity(meta.n_records);
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line)
                .map_err(|e| Error::json(format!("{} line {}", path.display(), lineno + 1), e))?;
            records.push(rec);
        }
        ensure!(
            records.len() == meta.n_records,
            "{} holds {} records but its sidecar declares {}",
            path.display(),
            records.len(),
            meta.n_records
        );
        let ds = WeightDataset {
            grid: meta.grid,
            records,
            splits: meta.splits,
            provenance: DatasetProvenance {
                seed: meta.seed,
                chip_config_sha256: meta.chip_config_sha256,
            },
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Long-format CSV for plotting: one row per (record, weight, channel).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["id".to_string(), "split".into()];
        header.extend((1..=9).map(|m| format!("v{m}_v")));
        header.extend(["output", "input", "wavelength_nm", "weight_db"].map(String::from));
        w.write_record(&header)?;
        for (idx, r) in self.records.iter().enumerate() {
            let split = self.splits.split_of(idx).map(|s| s.as_str()).unwrap_or("");
            for p in 0..N_WEIGHTS {
                for (k, lambda) in self.grid.center_wavelengths_nm.iter().enumerate() {
                    let mut row = vec![r.id.to_string(), split.to_string()];
                    row.extend(r.voltages_v.iter().map(|v| v.to_string()));
                    row.push((p / N_PORTS + 1).to_string());
                    row.push((p % N_PORTS + 1).to_string());
                    row.push(lambda.to_string());
                    row.push(r.weights_db[p][k].to_string());
                    w.write_record(&row)?;
                }
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Integrates groups of `factor` adjacent channels: linear output power and
/// linear input power are summed over each band and their ratio is taken.
///
/// `input_psd` gives the relative input power per channel (flat if `None`).
pub fn downsample_bands(
    ds: &WeightDataset,
    factor: usize,
    input_psd: Option<&[f64]>,
) -> Result<WeightDataset> {
    let grid = ds.grid.downsampled(factor)?;
    let n = ds.grid.n_channels;
    let flat = vec![1.0; n];
    let psd = input_psd.unwrap_or(&flat);
    ensure!(
        psd.len() == n,
        "input PSD has {} entries for {} channels",
        psd.len(),
        n
    );
    ensure!(psd.iter().all(|&p| p > 0.0), "input PSD must be positive");
    let records = ds
        .records
        .iter()
        .map(|r| Record {
            id: r.id,
            voltages_v: r.voltages_v,
            weights_db: r
                .weights_db
                .iter()
                .map(|row| {
                    row.chunks(factor)
                        .zip(psd.chunks(factor))
                        .map(|(w, p)| {
                            let p_out: f64 = w.iter().zip(p).map(|(&wk, &pk)| pk * db_to_linear(wk)).sum();
                            let p_in: f64 = p.iter().sum();
                            floored_db(p_out / p_in)
                        })
                        .collect()
                })
                .collect(),
        })
        .collect();
    Ok(WeightDataset {
        grid,
        records,
        splits: ds.splits.clone(),
        provenance: ds.provenance.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n_ch: usize, rows: usize) -> WeightDataset {
        let grid = WavelengthGrid::itu_c_band();
        let grid = if n_ch == 100 { grid } else { grid.channel(0) };
        let records = (0..rows)
            .map(|i| Record {
                id: i as u64,
                voltages_v: [0.1 * i as f64 % 2.0; 9],
                weights_db: (0..9)
                    .map(|p| (0..n_ch).map(|k| -10.0 - p as f64 - 0.01 * k as f64).collect())
                    .collect(),
            })
            .collect();
        WeightDataset::new(grid, records)
    }

    #[test]
    fn constant_band_is_preserved() {
        let mut ds = toy(100, 2);
        for r in &mut ds.records {
            for row in &mut r.weights_db {
                row.iter_mut().for_each(|w| *w = -7.5);
            }
        }
        let out = downsample_bands(&ds, 10, None).unwrap();
        assert_eq!(out.grid.n_channels, 10);
        for r in &out.records {
            for row in &r.weights_db {
                for w in row {
                    assert!((w + 7.5).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn band_average_is_linear_domain() {
        let mut ds = toy(100, 1);
        ds.records[0].weights_db[0] = (0..100).map(|k| if k % 2 == 0 { -10.0 } else { -20.0 }).collect();
        let out = downsample_bands(&ds, 2, None).unwrap();
        assert_eq!(out.grid.n_channels, 50);
        assert!((out.records[0].weights_db[0][0] - (-12.596_373_105_057_56)).abs() < 1e-10);
    }

    #[test]
    fn non_flat_psd_weights_channels() {
        let mut ds = toy(100, 1);
        ds.records[0].weights_db[0] = (0..100).map(|k| if k % 2 == 0 { -10.0 } else { -20.0 }).collect();
        let psd: Vec<f64> = (0..100).map(|k| if k % 2 == 0 { 3.0 } else { 1.0 }).collect();
        let out = downsample_bands(&ds, 2, Some(&psd)).unwrap();
        let want = 10.0 * ((3.0 * 0.1 + 0.01) / 4.0f64).log10();
        assert!((out.records[0].weights_db[0][0] - want).abs() < 1e-10);
    }

    #[test]
    fn indivisible_bands_rejected() {
        assert!(downsample_bands(&toy(100, 1), 3, None).is_err());
    }

    #[test]
    fn overlapping_splits_rejected() {
        let mut ds = toy(1, 4);
        ds.splits.training = vec![0, 1];
        ds.splits.testing = vec![1, 2];
        assert!(ds.validate().is_err());
        ds.splits.testing = vec![2, 3];
        ds.validate().unwrap();
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = toy(100, 3);
        ds.splits.training = vec![0, 2];
        ds.splits.testing = vec![1];
        ds.provenance.seed = 42;
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        ds.save(&a).unwrap();
        let back = WeightDataset::load(&a).unwrap();
        assert_eq!(back, ds);
        back.save(&b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(
            std::fs::read(sidecar_path(&a)).unwrap(),
            std::fs::read(sidecar_path(&b)).unwrap()
        );
    }

    #[test]
    fn csv_export_row_count() {
        let ds = toy(100, 2);
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 2 * 9 * 100);
    }

    #[test]
    fn select_channel_keeps_splits() {
        let mut ds = toy(100, 3);
        ds.splits.training = vec![0, 1];
        let one = ds.select_channel(55);
        assert_eq!(one.grid.n_channels, 1);
        assert_eq!(one.records[2].weights_db[4][0], ds.records[2].weights_db[4][55]);
        assert_eq!(one.splits, ds.splits);
    }
}
