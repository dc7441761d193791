//! Run configuration: a TOML file plus `--set key=value` overrides.

use std::path::{Path, PathBuf};

use omm_core::dataset::SplitName;
use omm_core::emulator::FabricationSpec;
use omm_core::eval::{default_sweep_seeds, default_sweep_sizes};
use omm_core::model::{FitOptions, ModelKind};
use omm_core::nn::SurrogateKind;
use omm_core::program::ProgramOptions;
use omm_core::task::TaskSpec;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Chip fabrication and measurement seed; also seeds training, programming
    /// and the task study.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub chip: FabricationSpec,
    pub data: DataConfig,
    pub fit: FitConfig,
    pub evaluate: EvaluateConfig,
    pub sweep: SweepConfig,
    pub program: ProgramConfig,
    pub task: TaskConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            out_dir: PathBuf::from("run"),
            chip: FabricationSpec::default(),
            data: DataConfig::default(),
            fit: FitConfig::default(),
            evaluate: EvaluateConfig::default(),
            sweep: SweepConfig::default(),
            program: ProgramConfig::default(),
            task: TaskConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Number of wavelength channels: 1 measures at 1550 nm only, otherwise
    /// the 100-channel C-band grid is integrated into this many bands.
    pub bands: usize,
    pub n_random: usize,
    pub sweep: PathBuf,
    pub random: PathBuf,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            bands: 1,
            n_random: omm_core::emulator::DEFAULT_RANDOM_RECORDS,
            sweep: PathBuf::from("sweep.jsonl"),
            random: PathBuf::from("random.jsonl"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub kind: ModelKind,
    /// Model file; `models/<kind>.json` when unset.
    pub model: Option<PathBuf>,
    /// Leading training records to use; all when unset.
    pub training_size: Option<usize>,
    pub options: FitOptions,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Sam,
            model: None,
            training_size: None,
            options: FitOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    /// Model to evaluate; the `fit` model when unset.
    pub model: Option<PathBuf>,
    pub split: SplitName,
    pub bin_width_db: f64,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            model: None,
            split: SplitName::Testing,
            bin_width_db: omm_core::eval::DEFAULT_BIN_WIDTH_DB,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub kind: ModelKind,
    pub sizes: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Surrogate(SurrogateKind::NnSw),
            sizes: default_sweep_sizes(),
            seeds: default_sweep_seeds(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProgramConfig {
    pub model: Option<PathBuf>,
    /// Target `w[i][j]` in dB, output port `i`, input port `j`.
    pub target_db: [[f64; 3]; 3],
    pub options: ProgramOptions,
}

impl Default for ProgramConfig {
    fn default() -> Self {
        Self {
            model: None,
            target_db: [[-18.0, -22.0, -26.0], [-22.0, -18.0, -22.0], [-26.0, -22.0, -18.0]],
            options: ProgramOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskConfig {
    /// Model whose error distribution is injected; the `fit` model when unset.
    pub model: Option<PathBuf>,
    /// Inject exact zeros instead of a model's errors.
    pub zero_noise: bool,
    pub split: SplitName,
    #[serde(flatten)]
    pub spec: TaskSpec,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            model: None,
            zero_noise: false,
            split: SplitName::Testing,
            spec: TaskSpec::default(),
        }
    }
}

impl RunConfig {
    /// Reads `path` (defaults when `None`) and applies `key=value`
    /// overrides; values are parsed as TOML, falling back to bare strings.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        // start from the serialized defaults so partially given nested
        // tables keep their other default values
        let mut table = toml::Table::try_from(RunConfig::default()).expect("defaults serialize");
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            let file = toml::from_str::<toml::Table>(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            merge(&mut table, file);
        }
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("override `{item}` is not key=value")))?;
            set_path(&mut table, key.trim(), parse_value(raw.trim()))?;
        }
        let cfg: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        let b = self.data.bands;
        if b == 0 || 100 % b != 0 {
            return bad(format!("data.bands must divide the 100-channel grid, got {b}"));
        }
        if self.sweep.sizes.is_empty() || self.sweep.seeds.is_empty() {
            return bad("sweep.sizes and sweep.seeds must not be empty".into());
        }
        Ok(())
    }

    /// Hex SHA-256 of the resolved configuration's JSON form.
    pub fn hash(&self) -> String {
        omm_core::sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.out_dir.join(p)
        }
    }

    pub fn fit_model_path(&self) -> PathBuf {
        match &self.fit.model {
            Some(p) => self.resolve(p),
            None => self.out_dir.join("models").join(format!("{}.json", self.fit.kind.name())),
        }
    }

    pub fn model_path_or_fit(&self, p: &Option<PathBuf>) -> PathBuf {
        match p {
            Some(p) => self.resolve(p),
            None => self.fit_model_path(),
        }
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("malformed override key `{key}`")));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{part}` in `{key}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
