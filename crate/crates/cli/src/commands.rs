//! Subcommand implementations. Each writes its results under the run
//! directory followed by a manifest.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use omm_core::dataset::{downsample_bands, sidecar_path, SplitName, WeightDataset};
use omm_core::emulator::{
    generate_random_dataset, generate_sweep_dataset, ChipGroundTruth, SplitFractions,
};
use omm_core::eval::{
    error_distribution, evaluate, model_rmse_db, per_wavelength_rmse, size_seed_sweep, write_channel_rmse_csv,
    ErrorDistribution, EvaluationSummary,
};
use omm_core::model::{fit_model, ForwardModel};
use omm_core::program::{program_voltages, ProgramRequest};
use omm_core::task::{noise_injection_study, train_reference, NoiseMode, Percentiles, TaskKind};
use omm_core::wavelength::{WavelengthGrid, REFERENCE_WAVELENGTH_NM};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::manifest::write_manifest;

const FULL_GRID_CHANNELS: usize = 100;

pub fn ensure_parent(path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    ensure_parent(path)?;
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    ensure_parent(path)?;
    Ok(omm_core::write_json(path, value)?)
}

fn require(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Io(format!("{} does not exist", path.display())))
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Measures on the full grid and integrates to `bands` channels, or measures
/// at 1550 nm alone when `bands` is 1.
fn measure(chip: &ChipGroundTruth, bands: usize, n_random: usize) -> Result<(WeightDataset, WeightDataset), CliError> {
    let grid = if bands == 1 {
        WavelengthGrid::single(REFERENCE_WAVELENGTH_NM, 50.0)
    } else {
        WavelengthGrid::itu_c_band()
    };
    let sweep = generate_sweep_dataset(chip, &grid)?;
    let random = generate_random_dataset(chip, &grid, n_random, SplitFractions::default(), sweep.len() as u64)?;
    if bands == 1 || bands == FULL_GRID_CHANNELS {
        return Ok((sweep, random));
    }
    let factor = FULL_GRID_CHANNELS / bands;
    Ok((downsample_bands(&sweep, factor, None)?, downsample_bands(&random, factor, None)?))
}

pub fn generate(cfg: &RunConfig) -> Result<(), CliError> {
    let chip = ChipGroundTruth::fabricate(&cfg.chip, cfg.seed)?;
    let (sweep, random) = measure(&chip, cfg.data.bands, cfg.data.n_random)?;
    let chip_path = cfg.out_dir.join("chip.json");
    let sweep_path = cfg.resolve(&cfg.data.sweep);
    let random_path = cfg.resolve(&cfg.data.random);
    write_json(&chip_path, &chip)?;
    for (ds, path) in [(&sweep, &sweep_path), (&random, &random_path)] {
        ensure_parent(path)?;
        ds.save(path)?;
    }
    println!(
        "generated {} sweep and {} random records over {} channel(s)",
        sweep.len(),
        random.len(),
        sweep.n_channels()
    );
    let outputs = vec![
        chip_path,
        sidecar_path(&sweep_path),
        sweep_path,
        sidecar_path(&random_path),
        random_path,
    ];
    write_manifest(cfg, "generate", "generate", &[], &outputs)?;
    Ok(())
}

/// The sweep and random files merged into one dataset with all splits, and
/// the files it was read from.
fn load_dataset(cfg: &RunConfig) -> Result<(WeightDataset, Vec<PathBuf>), CliError> {
    let sweep_path = cfg.resolve(&cfg.data.sweep);
    let random_path = cfg.resolve(&cfg.data.random);
    let mut files = Vec::new();
    for p in [&sweep_path, &random_path] {
        require(p)?;
        require(&sidecar_path(p))?;
        files.push(p.clone());
        files.push(sidecar_path(p));
    }
    let mut ds = WeightDataset::load(&sweep_path).map_err(CliError::input(&sweep_path))?;
    let random = WeightDataset::load(&random_path).map_err(CliError::input(&random_path))?;
    ds.append(&random).map_err(CliError::input(&random_path))?;
    Ok((ds, files))
}

fn load_model(path: &Path) -> Result<ForwardModel, CliError> {
    require(path)?;
    ForwardModel::load(path).map_err(CliError::input(path))
}

#[derive(Serialize, Deserialize)]
struct FitSummary {
    kind: String,
    seed: u64,
    n_training: usize,
    training_rmse_db: f64,
    validation_rmse_db: f64,
    testing_rmse_db: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    fit: Option<omm_core::analytic::FitReport>,
}

pub fn fit(cfg: &RunConfig) -> Result<(), CliError> {
    let (ds, inputs) = load_dataset(cfg)?;
    let kind = &cfg.fit.kind;
    let (model, histories) = fit_model(kind, &ds, cfg.fit.training_size, cfg.seed, &cfg.fit.options)?;
    let model_path = cfg.fit_model_path();
    ensure_parent(&model_path)?;
    model.save(&model_path)?;
    let mut outputs = vec![model_path.clone()];

    for (i, h) in histories.iter().enumerate() {
        let name = if histories.len() == 1 {
            format!("{}.history.csv", stem(&model_path))
        } else {
            format!("{}.history.{i}.csv", stem(&model_path))
        };
        let path = model_path.with_file_name(name);
        h.write_csv(create(&path)?)?;
        outputs.push(path);
    }

    let rmse = |name| model_rmse_db(&model, &ds.split(name));
    let n_training = cfg
        .fit
        .training_size
        .map_or(ds.splits.training.len(), |n| n.min(ds.splits.training.len()));
    let summary = FitSummary {
        kind: kind.name().into(),
        seed: cfg.seed,
        n_training,
        training_rmse_db: rmse(SplitName::Training)?,
        validation_rmse_db: rmse(SplitName::Validation)?,
        testing_rmse_db: rmse(SplitName::Testing)?,
        fit: match &model {
            ForwardModel::Sam { fit, .. } | ForwardModel::SamXt { fit, .. } => fit.clone(),
            ForwardModel::Surrogate { .. } => None,
        },
    };
    if let Some(report) = &summary.fit {
        for s in &report.stages {
            println!("{}: {} records, {:.4} → {:.4} dB", s.stage, s.n_records, s.initial_rmse_db, s.rmse_db);
        }
        if let Some(w) = &report.warning {
            eprintln!("warning: {w}");
        }
    }
    println!(
        "{}: training {:.4} dB, validation {:.4} dB, testing {:.4} dB",
        summary.kind, summary.training_rmse_db, summary.validation_rmse_db, summary.testing_rmse_db
    );
    let summary_path = model_path.with_file_name(format!("{}.fit.json", stem(&model_path)));
    write_json(&summary_path, &summary)?;
    outputs.push(summary_path);
    write_manifest(cfg, "fit", &format!("fit-{}", stem(&model_path)), &inputs, &outputs)?;
    Ok(())
}

pub fn evaluate_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let (ds, mut inputs) = load_dataset(cfg)?;
    let model_path = cfg.model_path_or_fit(&cfg.evaluate.model);
    let model = load_model(&model_path)?;
    inputs.push(model_path.clone());
    let split = cfg.evaluate.split;
    let part = model.align(&ds.split(split))?.into_owned();
    let summary: EvaluationSummary = evaluate(&model, &part, split.as_str())?;
    let channels = per_wavelength_rmse(&model, &part)?;
    let hist = error_distribution(&model, &part)?.histogram(cfg.evaluate.bin_width_db)?;

    let with = |ext: &str| {
        cfg.out_dir
            .join("metrics")
            .join(format!("{}.{}.{ext}", stem(&model_path), split.as_str()))
    };
    let (summary_path, channels_path, hist_path) = (with("summary.json"), with("channels.csv"), with("errors.csv"));
    write_json(&summary_path, &summary)?;
    write_channel_rmse_csv(&channels, create(&channels_path)?)?;
    hist.write_csv(create(&hist_path)?)?;
    println!(
        "{} on {} ({} records): RMSE {:.4} dB, R² {}",
        summary.model,
        summary.split,
        summary.n_records,
        summary.rmse_db,
        summary.r_squared.map_or("undefined".into(), |r| format!("{r:.5}"))
    );
    write_manifest(
        cfg,
        "evaluate",
        &format!("evaluate-{}-{}", stem(&model_path), split.as_str()),
        &inputs,
        &[summary_path, channels_path, hist_path],
    )?;
    Ok(())
}

pub fn sweep(cfg: &RunConfig) -> Result<(), CliError> {
    let (ds, inputs) = load_dataset(cfg)?;
    let s = &cfg.sweep;
    let report = size_seed_sweep(&s.kind, &ds, &s.sizes, &s.seeds, &cfg.fit.options)?;
    let dir = cfg.out_dir.join("sweep");
    let cells = dir.join(format!("{}.cells.csv", s.kind.name()));
    let summary = dir.join(format!("{}.summary.csv", s.kind.name()));
    report.write_cells_csv(create(&cells)?)?;
    report.write_summary_csv(create(&summary)?)?;
    for row in &report.summary {
        println!("{:>5} records: median {:.4} dB, IQR {:.4} dB", row.size, row.median_db, row.iqr_db());
    }
    write_manifest(cfg, "sweep", &format!("sweep-{}", s.kind.name()), &inputs, &[cells, summary])?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ProgramOutput {
    model: String,
    target_weights_db: [[f64; 3]; 3],
    /// Volts, rounded to 4 decimals.
    voltages_v: [f64; 9],
    channels: Vec<usize>,
    achieved_weights_db: Vec<[[f64; 3]; 3]>,
    residual_rmse_db: f64,
    reachable: bool,
    start_residuals_db: Vec<f64>,
}

pub fn program(cfg: &RunConfig) -> Result<(), CliError> {
    let model_path = cfg.model_path_or_fit(&cfg.program.model);
    let model = load_model(&model_path)?;
    let mut options = cfg.program.options.clone();
    options.seed = cfg.seed;
    let req = ProgramRequest {
        target_weights_db: cfg.program.target_db,
        options,
    };
    let res = program_voltages(&model, &req)?;
    let out = ProgramOutput {
        model: model.name().into(),
        target_weights_db: req.target_weights_db,
        voltages_v: res.rounded_voltages(),
        channels: res.channels.clone(),
        achieved_weights_db: res.achieved_weights_db.clone(),
        residual_rmse_db: res.residual_rmse_db,
        reachable: res.reachable,
        start_residuals_db: res.start_residuals_db.clone(),
    };
    let path = cfg.out_dir.join("program").join(format!("{}.json", stem(&model_path)));
    write_json(&path, &out)?;
    println!(
        "voltages {:?} V, residual {:.4} dB{}",
        out.voltages_v,
        out.residual_rmse_db,
        if out.reachable { "" } else { " (unreachable)" }
    );
    write_manifest(cfg, "program", &format!("program-{}", stem(&model_path)), &[model_path], &[path])?;
    Ok(())
}

/// XOR accuracy in percent, Gaussian RMSE in scientific notation.
fn metric(kind: TaskKind, x: f64) -> String {
    match kind {
        TaskKind::Xor3 => format!("{x:.1}%"),
        TaskKind::Gauss2d => format!("{x:.3e}"),
    }
}

#[derive(Serialize, Deserialize)]
pub struct TaskSummary {
    pub task: TaskKind,
    pub model: String,
    pub noise_mode: NoiseMode,
    pub realizations: usize,
    pub clean_metric: f64,
    pub restarts_used: usize,
    pub percentiles: Percentiles,
}

pub fn task(cfg: &RunConfig) -> Result<(), CliError> {
    let spec = &cfg.task.spec;
    let reference = train_reference(spec, cfg.seed)?;
    let mut inputs = Vec::new();
    let (name, errors) = if cfg.task.zero_noise {
        ("zero".to_string(), ErrorDistribution::from_samples(vec![0.0])?)
    } else {
        let (ds, files) = load_dataset(cfg)?;
        let model_path = cfg.model_path_or_fit(&cfg.task.model);
        let model = load_model(&model_path)?;
        inputs = files;
        inputs.push(model_path.clone());
        (stem(&model_path), error_distribution(&model, &ds.split(cfg.task.split))?)
    };
    let report = noise_injection_study(&reference, &errors, spec, &name, cfg.seed)?;
    let dir = cfg.out_dir.join("task");
    let csv_path = dir.join(format!("{}-{name}.csv", spec.kind.name()));
    let json_path = dir.join(format!("{}-{name}.json", spec.kind.name()));
    report.write_csv(create(&csv_path)?)?;
    let summary = TaskSummary {
        task: spec.kind,
        model: name.clone(),
        noise_mode: spec.noise_mode,
        realizations: spec.realizations,
        clean_metric: reference.clean_metric,
        restarts_used: reference.restarts_used,
        percentiles: report.percentiles.clone(),
    };
    write_json(&json_path, &summary)?;
    let p = &summary.percentiles;
    let f = |x| metric(spec.kind, x);
    println!(
        "{} with {name} errors: clean {}, p10/p25/p50/p75/p90 {}/{}/{}/{}/{}",
        spec.kind.name(),
        f(summary.clean_metric),
        f(p.p10),
        f(p.p25),
        f(p.p50),
        f(p.p75),
        f(p.p90)
    );
    write_manifest(
        cfg,
        "task",
        &format!("task-{}-{name}", spec.kind.name()),
        &inputs,
        &[csv_path, json_path],
    )?;
    Ok(())
}

fn sorted_files(dir: &Path, suffix: &str) -> Result<Vec<PathBuf>, CliError> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(suffix))
        .collect();
    files.sort();
    Ok(files)
}

/// Collects every evaluation, task and sweep result in the run directory
/// into `report.md`.
pub fn report(cfg: &RunConfig) -> Result<(), CliError> {
    let mut inputs = Vec::new();
    let mut md = String::from("# Run report\n");

    let summaries = sorted_files(&cfg.out_dir.join("metrics"), ".summary.json")?;
    if !summaries.is_empty() {
        md.push_str("\n## Model accuracy\n\n| file | model | split | records | RMSE (dB) | R² |\n|---|---|---|---|---|---|\n");
        for p in &summaries {
            let s: EvaluationSummary = omm_core::read_json(p).map_err(CliError::input(p))?;
            md.push_str(&format!(
                "| {} | {} | {} | {} | {:.4} | {} |\n",
                stem(p),
                s.model,
                s.split,
                s.n_records,
                s.rmse_db,
                s.r_squared.map_or("n/a".into(), |r| format!("{r:.5}"))
            ));
            inputs.push(p.clone());
        }
    }

    let tasks = sorted_files(&cfg.out_dir.join("task"), ".json")?;
    if !tasks.is_empty() {
        md.push_str("\n## Task noise study\n\n| task | errors | clean | p10 | p25 | p50 | p75 | p90 |\n|---|---|---|---|---|---|---|---|\n");
        for p in &tasks {
            let t: TaskSummary = omm_core::read_json(p).map_err(CliError::input(p))?;
            let q = &t.percentiles;
            let f = |x| metric(t.task, x);
            md.push_str(&format!(
                "| {} | {} | {} | {} | {} | {} | {} | {} |\n",
                t.task.name(),
                t.model,
                f(t.clean_metric),
                f(q.p10),
                f(q.p25),
                f(q.p50),
                f(q.p75),
                f(q.p90)
            ));
            inputs.push(p.clone());
        }
    }

    let sweeps = sorted_files(&cfg.out_dir.join("sweep"), ".summary.csv")?;
    for p in &sweeps {
        let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
        md.push_str(&format!("\n## Size sweep: {}\n\n", stem(p).trim_end_matches(".summary")));
        for (i, line) in text.lines().enumerate() {
            md.push_str(&format!("| {} |\n", line.replace(',', " | ")));
            if i == 0 {
                md.push_str(&format!("|{}\n", "---|".repeat(line.split(',').count())));
            }
        }
        inputs.push(p.clone());
    }

    let manifests = sorted_files(&cfg.out_dir.join("manifests"), ".json")?;
    md.push_str("\n## Manifests\n\n");
    for p in &manifests {
        let m: crate::manifest::Manifest = omm_core::read_json(p).map_err(CliError::input(p))?;
        if m.command == "report" {
            continue;
        }
        md.push_str(&format!("- {} (`{}`, config {})\n", stem(p), m.command, &m.config_sha256[..12]));
        for o in &m.outputs {
            md.push_str(&format!("  - {} `{}`\n", o.path, &o.sha256[..12]));
        }
        inputs.push(p.clone());
    }

    let path = cfg.out_dir.join("report.md");
    ensure_parent(&path)?;
    std::fs::write(&path, md).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    write_manifest(cfg, "report", "report", &inputs, &[path])?;
    Ok(())
}
