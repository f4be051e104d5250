//! Three-channel spectral simulation against an analytic target.

use std::f64::consts::TAU;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;
use rand::Rng;
use windcollapse::stream::substream;
use windcollapse::windsim::{estimate_xpsd, pod_decompose, simulate_loads, Envelope, LoadRecord, SpectralLoadModel, Xpsd};

const HEIGHTS: [f64; 3] = [10.0, 20.0, 30.0];
const SCALE: [f64; 3] = [1.0, 1.6, 2.2];
const MEAN: [f64; 3] = [5.0, 7.0, 9.0];
const D_OMEGA: f64 = 0.005;
const N_OMEGA: usize = 2048;
const DT: f64 = 0.25;
const SEGMENT: usize = 256;
/// Highest frequency used in the comparison, rad/s.
const BAND: f64 = 8.0;

fn target_psd(i: usize, w: f64) -> f64 {
    SCALE[i] * SCALE[i] / (1.0 + w * w)
}

/// Root coherence between channels `i` and `k`.
fn target_root_coherence(i: usize, k: usize, w: f64) -> f64 {
    (-0.1 * w * (HEIGHTS[i] - HEIGHTS[k]).abs()).exp()
}

fn target_matrix(w: f64) -> DMatrix<Complex64> {
    DMatrix::from_fn(3, 3, |i, k| {
        let s = (target_psd(i, w) * target_psd(k, w)).sqrt() * target_root_coherence(i, k, w);
        Complex64::new(s, 0.0)
    })
}

fn model(n_modes: usize) -> SpectralLoadModel {
    let mats: Vec<_> = (0..N_OMEGA).map(|j| target_matrix(j as f64 * D_OMEGA)).collect();
    let xpsd = Xpsd::from_matrices(D_OMEGA, &mats);
    let modes = pod_decompose(&xpsd, n_modes).unwrap();
    SpectralLoadModel::new(modes, MEAN.to_vec(), 40.0).unwrap()
}

fn envelope() -> Envelope {
    Envelope {
        loaded: 1200.0,
        ramp_up: 0.0,
        ramp_down: 0.0,
        tail: 0.0,
    }
}

pub struct SpectralCheck {
    /// Largest per-channel RMS relative PSD error over the band.
    pub psd_rms: f64,
    /// RMS error of magnitude-squared coherence over all pairs and the band.
    pub coherence_rms: f64,
    /// Zero retained modes reproduce the enveloped mean exactly.
    pub zero_modes_exact: bool,
}

pub fn spectral_check(realizations: usize, seed: u64) -> SpectralCheck {
    let m = model(3);
    let env = envelope();
    let records: Vec<LoadRecord> = (0..realizations as u64)
        .map(|r| {
            let mut rng = substream(seed, r);
            let phases: Vec<f64> = (0..m.n_phases()).map(|_| rng.random::<f64>() * TAU).collect();
            let loads = simulate_loads(&m, &phases, &env, DT).unwrap();
            let n = loads.forces[0].len() - 1;
            let data = (0..n).flat_map(|k| (0..3).map(move |i| (i, k))).map(|(i, k)| loads.forces[i][k]).collect();
            LoadRecord::new(3, DT, 40.0, data).unwrap()
        })
        .collect();
    let refs: Vec<&LoadRecord> = records.iter().collect();
    let est = estimate_xpsd(&refs, SEGMENT, 0.5).unwrap();
    let bins: Vec<usize> = (1..est.n_freq()).filter(|&b| b as f64 * est.d_omega <= BAND).collect();

    let mut psd_rms: f64 = 0.0;
    for i in 0..3 {
        let sq: f64 = bins
            .iter()
            .map(|&b| (est.at(b, i, i).re / target_psd(i, b as f64 * est.d_omega) - 1.0).powi(2))
            .sum();
        psd_rms = psd_rms.max((sq / bins.len() as f64).sqrt());
    }
    let mut sq = 0.0;
    let mut count = 0;
    for (i, k) in [(0, 1), (0, 2), (1, 2)] {
        for &b in &bins {
            let g = target_root_coherence(i, k, b as f64 * est.d_omega);
            sq += (est.coherence(b, i, k) - g * g).powi(2);
            count += 1;
        }
    }

    let m0 = model(0);
    let zero = simulate_loads(&m0, &[], &env, DT).unwrap();
    let zero_modes_exact = zero.forces.iter().enumerate().all(|(i, ch)| {
        ch.iter()
            .enumerate()
            .all(|(k, &f)| f == env.factor(k as f64 * DT) * MEAN[i])
    });
    SpectralCheck {
        psd_rms,
        coherence_rms: (sq / count as f64).sqrt(),
        zero_modes_exact,
    }
}
