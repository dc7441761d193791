//! Fits SAM, SAM+XT and NN-SW on fabricated default chips and prints their
//! testing RMSE.
//!
//! cargo run --release -p omm-core --example calibrate -- [seeds...]

use std::time::Instant;

use omm_core::dataset::SplitName;
use omm_core::emulator::{generate_dataset, ChipGroundTruth, FabricationSpec, SplitFractions, DEFAULT_RANDOM_RECORDS};
use omm_core::eval::{error_distribution, model_rmse_db};
use omm_core::task::{noise_injection_study, train_reference, TaskKind, TaskSpec};
use omm_core::model::{fit_model, FitOptions, ModelKind};
use omm_core::nn::SurrogateKind;
use omm_core::wavelength::{WavelengthGrid, REFERENCE_WAVELENGTH_NM};

fn main() -> omm_core::Result<()> {
    let seeds: Vec<u64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let seeds = if seeds.is_empty() { vec![1, 2, 3] } else { seeds };
    let grid = WavelengthGrid::single(REFERENCE_WAVELENGTH_NM, 50.0);
    for seed in seeds {
        let spec: FabricationSpec = match std::env::var("FAB_SPEC") {
            Ok(text) => serde_json::from_str(&text).expect("FAB_SPEC is not a fabrication spec"),
            Err(_) => FabricationSpec::default(),
        };
        let chip = ChipGroundTruth::fabricate(&spec, seed)?;
        let mut opts = FitOptions::default();
        if let Ok(h) = std::env::var("HIDDEN") {
            opts.hidden = Some(h.split(',').map(|w| w.parse().expect("hidden width")).collect());
        }
        if let Ok(e) = std::env::var("EPOCHS") {
            opts.surrogate.train.max_epochs = e.parse().expect("epoch count");
        }
        let ds = generate_dataset(&chip, &grid, DEFAULT_RANDOM_RECORDS, SplitFractions::default())?;
        let test = ds.split(SplitName::Testing);
        print!("chip {seed}:");
        let xor = TaskSpec::new(TaskKind::Xor3);
        let gauss = TaskSpec::new(TaskKind::Gauss2d);
        let xor_ref = train_reference(&xor, seed)?;
        let gauss_ref = train_reference(&gauss, seed)?;
        let mut task_lines = Vec::new();
        for kind in [ModelKind::Sam, ModelKind::SamXt, ModelKind::Surrogate(SurrogateKind::NnSw)] {
            let t = Instant::now();
            let (model, hist) = fit_model(&kind, &ds, None, seed, &opts)?;
            let epochs = hist.first().map(|h| h.epochs.len()).unwrap_or(0);
            let errors = error_distribution(&model, &test)?;
            let x = noise_injection_study(&xor_ref, &errors, &xor, kind.name(), seed)?;
            let g = noise_injection_study(&gauss_ref, &errors, &gauss, kind.name(), seed)?;
            task_lines.push(format!(
                "    {:6} xor p25/p50/p75 {:.1}/{:.1}/{:.1}  gauss median {:.2e}",
                kind.name(),
                x.percentiles.p25,
                x.percentiles.p50,
                x.percentiles.p75,
                g.percentiles.p50
            ));
            print!(
                "  {} {:.3} dB ({:.1} s{})",
                kind.name(),
                model_rmse_db(&model, &test)?,
                t.elapsed().as_secs_f64(),
                if epochs > 0 { format!(", {epochs} epochs") } else { String::new() }
            );
        }
        println!();
        println!("    clean xor {:.1}%  gauss {:.2e}", xor_ref.clean_metric, gauss_ref.clean_metric);
        for l in task_lines {
            println!("{l}");
        }
    }
    Ok(())
}
