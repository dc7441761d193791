//! Trains the multi-wavelength surrogates on a 10-band dataset of a
//! fabricated dispersive chip and prints testing and per-band RMSE.
//!
//! cargo run --release -p omm-core --example multiband -- [seed] [kinds...]

use std::time::Instant;

use omm_core::dataset::{downsample_bands, SplitName};
use omm_core::emulator::{generate_dataset, ChipGroundTruth, FabricationSpec, SplitFractions, DEFAULT_RANDOM_RECORDS};
use omm_core::eval::{model_rmse_db, per_wavelength_rmse};
use omm_core::model::{fit_model, FitOptions, ModelKind};
use omm_core::nn::{ConvStage, SurrogateKind};
use omm_core::wavelength::WavelengthGrid;

fn main() -> omm_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(1);
    let kinds: Vec<ModelKind> = args.filter_map(|a| ModelKind::parse(&a)).collect();
    let kinds = if kinds.is_empty() {
        [SurrogateKind::NnLambdaR, SurrogateKind::NnLambdaS, SurrogateKind::NnLambdaG, SurrogateKind::Tcnn]
            .map(ModelKind::Surrogate)
            .to_vec()
    } else {
        kinds
    };
    let t = Instant::now();
    let chip = ChipGroundTruth::fabricate(&FabricationSpec::default(), seed)?;
    let full = generate_dataset(&chip, &WavelengthGrid::itu_c_band(), DEFAULT_RANDOM_RECORDS, SplitFractions::default())?;
    let ds = downsample_bands(&full, 10, None)?;
    println!("dataset {:.1} s", t.elapsed().as_secs_f64());
    let test = ds.split(SplitName::Testing);
    let mut opts = FitOptions::default();
    if let Ok(c) = std::env::var("CONV") {
        let v: Vec<usize> = c.split(',').map(|x| x.parse().expect("conv field")).collect();
        opts.conv = Some(ConvStage { in_channels: v[0], kernel: v[1], stride: v[2] });
    }
    if let Ok(h) = std::env::var("HIDDEN") {
        opts.hidden = Some(h.split(',').map(|w| w.parse().expect("hidden width")).collect());
    }
    for kind in kinds {
        let t = Instant::now();
        let (model, hist) = fit_model(&kind, &ds, None, seed, &opts)?;
        let per: Vec<String> = per_wavelength_rmse(&model, &test)?
            .iter()
            .map(|c| format!("{:.2}", c.rmse_db))
            .collect();
        println!(
            "{:12} {:.3} dB  {:6.1} s  epochs {:?}  per-band [{}]",
            kind.name(),
            model_rmse_db(&model, &test)?,
            t.elapsed().as_secs_f64(),
            hist.iter().map(|h| h.epochs.len() - 1).collect::<Vec<_>>(),
            per.join(" ")
        );
    }
    Ok(())
}
