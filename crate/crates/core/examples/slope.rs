//! Per-band SAM fits on a dispersive and a wavelength-flat chip; prints the
//! fitted dφ⁽²⁾/dλ against −φ⁽²⁾/λ.
//!
//! cargo run --release -p omm-core --example slope -- [seed]

use omm_core::analytic::{fit_sam_per_wavelength, AnalyticFitOptions};
use omm_core::dataset::{downsample_bands, SplitName};
use omm_core::emulator::{generate_dataset, ChipGroundTruth, FabricationSpec, SplitFractions, DEFAULT_RANDOM_RECORDS};
use omm_core::mesh::{MeshTopology, N_MZI};
use omm_core::wavelength::WavelengthGrid;

fn main() -> omm_core::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(1);
    let base: FabricationSpec = match std::env::var("FAB_SPEC") {
        Ok(text) => serde_json::from_str(&text).expect("FAB_SPEC is not a fabrication spec"),
        Err(_) => FabricationSpec::default(),
    };
    let verbose = std::env::var("VERBOSE").is_ok();
    for (label, spec) in [("dispersive", base.clone()), ("flat", base.wavelength_flat())] {
        let chip = ChipGroundTruth::fabricate(&spec, seed)?;
        let full = generate_dataset(&chip, &WavelengthGrid::itu_c_band(), DEFAULT_RANDOM_RECORDS, SplitFractions::default())?;
        let ds = downsample_bands(&full, 10, None)?;
        let fits = fit_sam_per_wavelength(
            &MeshTopology::default(),
            &ds.split(SplitName::Sweep),
            &ds.split(SplitName::Training),
            &AnalyticFitOptions::default(),
        )?;
        let lc = ds.grid.reference_wavelength_nm();
        println!("{label}:");
        for (k, row) in fits.phi2_rad_per_v2.iter().enumerate().filter(|_| verbose) {
            let truth = chip.phase_params_at(ds.grid.center_wavelengths_nm[k]).phi2_diag();
            println!(
                "  band {k}  fit {:?}\n          true {:?}",
                row.map(|x| (x * 1e4).round() / 1e4),
                truth.map(|x| (x * 1e4).round() / 1e4)
            );
        }
        for m in 0..N_MZI {
            let line = &fits.lines[m];
            let expected = fits.inverse_lambda_slope(m, lc);
            println!(
                "  mzi {}  slope {:+.3e}  expected {:+.3e}  rel {:+.3}  slope/se {:+.2}",
                m + 1,
                line.slope,
                expected,
                line.slope / expected - 1.0,
                line.slope / line.slope_std_error
            );
        }
    }
    Ok(())
}
