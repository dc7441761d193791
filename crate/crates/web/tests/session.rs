use omm_web::Session;

#[test]
fn measurement_is_deterministic_and_floored() {
    let s = Session::new(3, 1.0).unwrap();
    let v = [0.5, 1.0, 1.5, 0.2, 0.9, 1.8, 0.0, 2.0, 1.1];
    let a = s.measure(&v).unwrap();
    assert_eq!(a, s.measure(&v).unwrap());
    assert!(a.iter().all(|w| (-60.0..=0.0).contains(w)));
    assert!(s.measure(&v[..8]).is_err());
    assert!(s.measure(&[2.5; 9]).is_err());
}

#[test]
fn prediction_and_programming_need_calibration() {
    let s = Session::new(3, 1.0).unwrap();
    assert!(!s.is_calibrated());
    assert!(s.predict(&[1.0; 9]).is_err());
    assert!(s.program(&[-20.0; 9], 2).is_err());
}

#[test]
fn calibrated_model_programs_its_own_prediction() {
    let mut s = Session::new(2, 0.0).unwrap();
    let cal = s.calibrate(600, "sam").unwrap();
    assert_eq!(cal.n_records, 189 + 600);
    assert!(cal.testing_rmse_db < 3.0, "{cal:?}");
    let v = [0.3, 1.7, 0.9, 1.2, 0.5, 1.9, 0.7, 1.1, 1.4];
    let target = s.predict(&v).unwrap();
    let p = s.program(&target, 4).unwrap();
    assert!(p.model_residual_db <= 0.05, "{p:?}");
    assert!(p.reachable);
    assert!(p.voltages_v.iter().all(|x| (0.0..=2.0).contains(x)));
    assert_eq!(p.measured_db, s.measure(&p.voltages_v).unwrap());
}

#[test]
fn only_analytic_kinds_are_offered() {
    let mut s = Session::new(1, 1.0).unwrap();
    assert!(s.calibrate(100, "nn-sw").is_err());
    assert!(s.calibrate(100, "bogus").is_err());
}
