use omm_core::dataset::{SplitName, WeightDataset};
use omm_core::emulator::{generate_dataset, ChipGroundTruth, FabricationSpec, SplitFractions};
use omm_core::eval::{evaluate, model_rmse_db, ErrorDistribution};
use omm_core::mesh::Voltages;
use omm_core::model::{fit_model, FitOptions, ForwardModel, ModelKind};
use omm_core::program::{flatten, program_voltages, unflatten, ProgramOptions, ProgramRequest};
use omm_core::task::{noise_injection_study, train_reference, TaskKind, TaskSpec};
use omm_core::wavelength::{WavelengthGrid, REFERENCE_WAVELENGTH_NM};

fn grid() -> WavelengthGrid {
    WavelengthGrid::single(REFERENCE_WAVELENGTH_NM, 50.0)
}

#[test]
fn dataset_files_round_trip_byte_for_byte() {
    let chip = ChipGroundTruth::fabricate(&FabricationSpec::default(), 4).unwrap();
    let ds = generate_dataset(&chip, &grid(), 120, SplitFractions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    ds.save(&a).unwrap();
    let back = WeightDataset::load(&a).unwrap();
    assert_eq!(back, ds);
    back.save(&b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(back.content_hash(), ds.content_hash());
}

#[test]
fn calibrate_then_program_an_ideal_chip() {
    let chip = ChipGroundTruth::fabricate(&FabricationSpec::ideal_sam(), 2).unwrap();
    let ds = generate_dataset(&chip, &grid(), 600, SplitFractions::default()).unwrap();
    let (model, _) = fit_model(&ModelKind::Sam, &ds, None, 0, &FitOptions::default()).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sam.json");
    model.save(&path).unwrap();
    let model = ForwardModel::load(&path).unwrap();

    let test = ds.split(SplitName::Testing);
    let summary = evaluate(&model, &test, "testing").unwrap();
    assert_eq!(summary.n_records, test.len());
    assert_eq!(summary.rmse_db, model_rmse_db(&model, &test).unwrap());
    assert!(summary.rmse_db < 1e-6, "{summary:?}");

    // a target the chip can realize by construction
    let v_true: Voltages = [0.4, 1.1, 0.7, 1.5, 0.9, 1.3, 0.6, 1.0, 1.2];
    let target = chip.true_weights_db(&v_true, REFERENCE_WAVELENGTH_NM);
    let req = ProgramRequest {
        target_weights_db: unflatten(&target),
        options: ProgramOptions { seed: 3, ..ProgramOptions::default() },
    };
    let res = program_voltages(&model, &req).unwrap();
    assert!(res.reachable);
    assert!(res.residual_rmse_db < 1e-3, "{res:?}");
    let measured = chip.true_weights_db(&res.voltages_v, REFERENCE_WAVELENGTH_NM);
    let achieved = flatten(&res.achieved_weights_db[0]);
    for p in 0..9 {
        assert!((measured[p] - target[p]).abs() < 1e-2, "weight {p}: {} vs {}", measured[p], target[p]);
        assert!((achieved[p] - measured[p]).abs() < 1e-4);
    }
}

#[test]
fn zero_error_model_leaves_the_task_metric_unchanged() {
    let zero = ErrorDistribution::from_samples(vec![0.0]).unwrap();
    for kind in [TaskKind::Xor3, TaskKind::Gauss2d] {
        let spec = TaskSpec { realizations: 50, ..TaskSpec::new(kind) };
        let reference = train_reference(&spec, 5).unwrap();
        let study = noise_injection_study(&reference, &zero, &spec, "exact", 5).unwrap();
        assert!(study.metrics.iter().all(|&m| m == reference.clean_metric), "{kind:?}");
        assert_eq!(study.percentiles.p50, reference.clean_metric);
    }
}

#[test]
fn noisier_models_degrade_the_xor_task() {
    let spec = TaskSpec { realizations: 400, ..TaskSpec::new(TaskKind::Xor3) };
    let reference = train_reference(&spec, 1).unwrap();
    assert_eq!(reference.clean_metric, 100.0);
    let spread = |s: f64| ErrorDistribution::from_samples((0..101).map(|i| s * (i as f64 / 50.0 - 1.0)).collect()).unwrap();
    let median = |s: f64| noise_injection_study(&reference, &spread(s), &spec, "m", 1).unwrap().percentiles.p50;
    let (small, large) = (median(0.05), median(8.0));
    assert!(small >= large, "{small} vs {large}");
    assert!(large < 100.0);
}
