use std::f64::consts::PI;

use kdv_gauge::coefficients::{CoefficientSet, CoefficientStrings};
use kdv_gauge::experiments::*;
use kdv_gauge::littlewood_paley::bump_eta;
use kdv_gauge::Error;

#[test]
fn band_limited_datum_gives_round_off_differences() {
    let p = BonaSmithParams {
        grid_points: 512,
        n_values: vec![16, 32, 64],
        n_ref: 128,
        band_limit: Some(10.0),
        t_final: 0.05,
        ..Default::default()
    };
    let r = run_bona_smith(&p).unwrap();
    let diffs = r.table("rates").unwrap().column("difference").unwrap();
    assert!(diffs.iter().all(|d| *d < 1e-13), "{diffs:?}");
}

#[test]
fn tail_norm_matches_direct_sum() {
    // ‖P_{>n}u₀‖²_{H¹} = 2L Σ_{k≠0} (1-η(k/n))² (1+k²) A²(1+|k|)^{-2(s+0.6)}, summed by hand
    let p = BonaSmithParams { n_values: vec![8, 16, 32, 64], t_final: 0.01, ..Default::default() };
    let r = run_bona_smith(&p).unwrap();
    let tails = r.table("rates").unwrap().column("tail_hs").unwrap();
    for (n, tail) in p.n_values.iter().zip(&tails) {
        let mut sum = 0.0;
        for m in 1..p.grid_points / 2 {
            let k = m as f64;
            let cut = 1.0 - bump_eta(k / *n as f64);
            sum += 2.0 * cut * cut * (1.0 + k * k) * (p.amplitude * (1.0 + k).powf(-p.s - p.extra_decay)).powi(2);
        }
        let expect = (2.0 * p.half_width * sum).sqrt();
        assert!((tail - expect).abs() < 1e-12 * expect, "n = {n}: {tail} vs {expect}");
    }
}

#[test]
fn linear_continuity_ratio_is_size_independent() {
    let p = ContinuityParams { e: 0.0, grid_points: 256, stability_factor: 1.01, ..Default::default() };
    let r = run_continuity(&p).unwrap();
    let v = r.verdict("ratio_stability").unwrap();
    assert!(v.passed && v.value - 1.0 < 1e-9, "{v:?}");
}

#[test]
fn zero_perturbation_gives_zero_difference() {
    let p = ContinuityParams { sizes: vec![0.0, 1e-3], grid_points: 256, ..Default::default() };
    let r = run_continuity(&p).unwrap();
    assert_eq!(r.table("sensitivity").unwrap().rows[0][1], 0.0);
}

#[test]
fn packet_that_cannot_cross_is_an_error() {
    let p = WavepacketParams { xi_values: vec![10.0], t_max: Some(0.1), ..Default::default() };
    assert!(matches!(run_wavepacket(&p), Err(Error::Invalid(_))));
}

#[test]
fn packet_gain_matches_transport_prediction() {
    // crossing at group speed 3αξ² accumulates ∫β/(3α) in the exponent
    let p = WavepacketParams { xi_values: vec![12.0], ..Default::default() };
    let r = run_wavepacket(&p).unwrap();
    let gain = r.table("gains").unwrap().rows[0][1];
    let predicted = (2.0 * p.radius * p.beta / (3.0 * p.alpha)).exp();
    assert!((gain / predicted - 1.0).abs() < 0.01, "{gain} vs {predicted}");
}

#[test]
fn identity_gauge_consistency_is_at_time_step_error() {
    let strings = CoefficientStrings { epsilon: "-1", ..Default::default() };
    let p = TransformConsistencyParams {
        set: CoefficientSet::parse(&strings, None, 1.0).unwrap(),
        n_values: vec![256],
        half_width: 16.0 * PI,
        t_final: 0.2,
        slices: 20,
        ..Default::default()
    };
    let run = consistency_at(&p, 256).unwrap();
    assert!(run.discrepancy < 1e-6, "{run:?}");
}

#[test]
fn hypothesis_violations_are_flagged() {
    let strings = CoefficientStrings { alpha: "1", beta: "0.002", epsilon: "-1", ..Default::default() };
    let p = TransformConsistencyParams {
        set: CoefficientSet::parse(&strings, None, 1.0).unwrap(),
        n_values: vec![128],
        t_final: 0.02,
        slices: 4,
        ..Default::default()
    };
    let r = run_transform_consistency(&p).unwrap();
    assert!(r.hypothesis_violation);
    assert!(r.notes.iter().any(|n| n.contains("H3-split")));
    assert!(!run_transform_consistency(&TransformConsistencyParams { n_values: vec![256], t_final: 0.05, slices: 5, ..Default::default() })
        .unwrap()
        .hypothesis_violation);
}

#[test]
fn reports_are_reproducible() {
    let p = CommutatorParams { draws: 20, levels: vec![8, 16, 32, 64], grid_points: 1024, ..Default::default() };
    assert_eq!(run_commutator_survey(&p).unwrap(), run_commutator_survey(&p).unwrap());
    let q = BonaSmithParams { grid_points: 512, n_values: vec![8, 16, 32, 64], n_ref: 128, t_final: 0.05, ..Default::default() };
    assert_eq!(run_bona_smith(&q).unwrap(), run_bona_smith(&q).unwrap());
}

#[test]
fn every_verdict_cites_a_threshold_and_fits_are_dense() {
    let r = run_soliton_benchmark(&SolitonParams { compare_original: false, ..Default::default() }).unwrap();
    assert!(r.verdicts.iter().all(|v| !v.threshold.is_empty()));
    let fit = r.fit("error_vs_dt").unwrap();
    assert!(fit.points_per_decade >= 4.0);
    assert!(fit.ci_low <= fit.slope && fit.slope <= fit.ci_high);
}

#[test]
fn coarse_order_fit_fails_the_residual_gate() {
    // a sweep spanning the pre-asymptotic range bends in log space
    let p = SolitonParams { dt_sweep: vec![8e-3, 4e-3, 2e-3, 1e-3, 5e-4, 2.5e-4], compare_original: false, ..Default::default() };
    let r = run_soliton_benchmark(&p).unwrap();
    let fit = r.fit("error_vs_dt").unwrap();
    let v = r.verdict("temporal_order").unwrap();
    assert_eq!(v.passed, (fit.slope - 4.0).abs() <= 0.3 && fit.residual_ok());
}
