//! Time-integration checks on single-degree-of-freedom systems and the
//! two-story bay.

use std::f64::consts::{PI, TAU};

use windcollapse::dynamics::{
    natural_frequencies, nltha, rayleigh_coefficients, DampingModel, DampingStiffness, IntegratorConfig,
    LinearSystem, NodalLoadHistory,
};
use windcollapse::frame::Geometry;
use windcollapse::linalg::BandMatrix;

use super::structural::portal;

fn sdof(m: f64, k: f64) -> LinearSystem {
    let mut kb = BandMatrix::zeros(1, 0, 0);
    kb.add(0, 0, k);
    LinearSystem {
        k: kb,
        m: vec![m],
        g: vec![0.0],
        floors: vec![0],
        heights: vec![1.0],
    }
}

fn fine(dt: f64) -> IntegratorConfig {
    IntegratorConfig {
        ladder: vec![dt],
        refinement: vec![dt / 2.0],
        drift_abort: None,
        ..Default::default()
    }
}

fn history(dt: f64, duration: f64, f: impl Fn(f64) -> f64) -> Vec<f64> {
    let n = (duration / dt).round() as usize + 1;
    (0..n).map(|k| f(k as f64 * dt)).collect()
}

/// Steady-state amplitude of a harmonically forced SDOF over the
/// transfer-function amplitude.
pub fn sdof_amplitude_ratio() -> f64 {
    let (m, omega, zeta) = (1000.0, TAU, 0.02);
    let k = m * omega * omega;
    let (f0, w) = (1e3, 0.8 * omega);
    let dt = 0.002;
    let duration = 150.0;
    let loads = NodalLoadHistory {
        dt,
        eqs: vec![0],
        values: vec![history(dt, duration, |t| f0 * (w * t).sin())],
        tail_start: None,
    };
    let mut sys = sdof(m, k);
    let damping = DampingModel::new(2.0 * zeta * omega, 0.0);
    let out = nltha(&mut sys, &[0.0], &loads, &damping, &fine(dt)).unwrap();
    let r = w / omega;
    let h = f0 / k / ((1.0 - r * r).powi(2) + (2.0 * zeta * r).powi(2)).sqrt();
    let amp = out
        .record
        .time
        .iter()
        .zip(&out.record.roof)
        .filter(|(t, _)| **t > duration - 20.0)
        .fold(0.0f64, |a, (_, u)| a.max(u.abs()));
    amp / h
}

/// Damping ratio recovered by logarithmic decrement from the free decay of
/// an SDOF damped with Rayleigh coefficients fitted at `omega` and `3 omega`.
pub fn log_decrement_zeta(zeta: f64) -> f64 {
    let (m, omega) = (1000.0, PI);
    let k = m * omega * omega;
    let dt = 0.002;
    let pulse = 0.5;
    let duration = 40.0;
    let loads = NodalLoadHistory {
        dt,
        eqs: vec![0],
        values: vec![history(dt, duration, |t| if t < pulse { 1e4 * (PI * t / pulse).sin() } else { 0.0 })],
        tail_start: Some(pulse),
    };
    let (c0, c1) = rayleigh_coefficients(omega, 3.0 * omega, zeta).unwrap();
    let mut sys = sdof(m, k);
    let out = nltha(&mut sys, &[0.0], &loads, &DampingModel::new(c0, c1), &fine(dt)).unwrap();
    let u = &out.record.roof;
    let t = &out.record.time;
    let peaks: Vec<f64> = (1..u.len() - 1)
        .filter(|&i| t[i] > 2.0 * pulse && u[i] > u[i - 1] && u[i] >= u[i + 1] && u[i] > 0.0)
        .map(|i| u[i])
        .collect();
    let cycles = 10;
    assert!(peaks.len() > cycles, "only {} peaks", peaks.len());
    let delta = (peaks[0] / peaks[cycles]).ln() / cycles as f64;
    delta / (4.0 * PI * PI + delta * delta).sqrt()
}

fn portal_run(stiffness: DampingStiffness, elastic: bool, geometry: Geometry, scale: f64) -> windcollapse::dynamics::ResponseRecord {
    let (_, mut model) = portal(geometry, elastic);
    let w = natural_frequencies(&model.committed_tangent(), &model.mass, 2).unwrap();
    let (c0, c1) = rayleigh_coefficients(w[0], w[1], 0.02).unwrap();
    let damping = DampingModel { c0, c1, stiffness };
    let dt = 0.01;
    let duration = 20.0;
    let eqs = model.floor_eqs();
    let values = vec![
        history(dt, duration, |t| scale * 0.6e5 * (0.9 * w[0] * t).sin()),
        history(dt, duration, |t| scale * 1.0e5 * (0.9 * w[0] * t).sin()),
    ];
    let loads = NodalLoadHistory {
        dt,
        eqs,
        values,
        tail_start: None,
    };
    let u0 = vec![0.0; model.n_eq];
    nltha(&mut model, &u0, &loads, &damping, &fine(dt)).unwrap().record
}

/// Largest roof-history difference between tangent and initial Rayleigh
/// damping on the elastic bay, relative to the peak roof displacement.
pub fn rayleigh_tangent_vs_initial() -> f64 {
    let a = portal_run(DampingStiffness::Tangent, true, Geometry::Linear, 1.0);
    let b = portal_run(DampingStiffness::Initial, true, Geometry::Linear, 1.0);
    assert_eq!(a.roof.len(), b.roof.len());
    let peak = a.roof.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    a.roof.iter().zip(&b.roof).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / peak
}

/// Energy-balance error of a yielding steel run and the peak story drift
/// it reached.
pub fn energy_balance_error() -> (f64, f64) {
    let r = portal_run(DampingStiffness::Tangent, false, Geometry::Corotational, 12.0);
    (r.energy.error(), r.peak_drift)
}
