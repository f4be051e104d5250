mod common;

use common::dynamics::*;

#[test]
fn harmonic_steady_state_matches_transfer_function() {
    let r = sdof_amplitude_ratio();
    assert!((r - 1.0).abs() < 0.01, "amplitude ratio {r}");
}

#[test]
fn log_decrement_recovers_damping_ratio() {
    let z = log_decrement_zeta(0.015);
    assert!((z / 0.015 - 1.0).abs() < 0.05, "zeta {z}");
}

#[test]
fn tangent_and_initial_rayleigh_agree_when_elastic() {
    let d = rayleigh_tangent_vs_initial();
    assert!(d < 1e-10, "difference {d:e}");
}

#[test]
fn energy_balance_closes_in_yielding_run() {
    let (err, drift) = energy_balance_error();
    assert!(err < 0.01, "energy error {err}");
    assert!(drift > 0.005, "run stayed elastic: peak drift {drift}");
}
