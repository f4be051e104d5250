//! Stochastic wind loads: cross-spectral estimation, frequency-wise POD and
//! spectral-representation synthesis of enveloped floor-load histories.

use std::f64::consts::{PI, TAU};
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|S - S^H|` relative to the largest entry.
pub const HERMITIAN_TOL: f64 = 1e-8;

/// Multichannel record sampled on one uniform time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadRecord {
    pub channels: usize,
    /// Sampling interval, s.
    pub dt: f64,
    /// Speed the record was measured at, m/s.
    pub reference_speed: f64,
    /// Row-major samples: `data[k * channels + i]`, N.
    pub data: Vec<f64>,
}

impl LoadRecord {
    pub fn new(channels: usize, dt: f64, reference_speed: f64, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || data.len() % channels != 0 {
            return Err(Error::Input(format!(
                "{} values do not fill {channels} channels evenly",
                data.len()
            )));
        }
        if !(dt > 0.0) || !(reference_speed > 0.0) {
            return Err(Error::Input(format!("dt {dt} and reference speed {reference_speed} must be positive")));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Input("record contains non-finite samples".into()));
        }
        Ok(Self {
            channels,
            dt,
            reference_speed,
            data,
        })
    }

    pub fn samples(&self) -> usize {
        self.data.len() / self.channels
    }

    pub fn duration(&self) -> f64 {
        self.samples() as f64 * self.dt
    }

    pub fn channel(&self, i: usize) -> Vec<f64> {
        self.data.iter().skip(i).step_by(self.channels).copied().collect()
    }

    pub fn means(&self) -> Vec<f64> {
        (0..self.channels)
            .map(|i| self.channel(i).iter().sum::<f64>() / self.samples() as f64)
            .collect()
    }

    /// Text layout: a header `channels samples dt reference_speed`, then one
    /// row of channel values per sample. `#` starts a comment line.
    pub fn parse_text(text: &str, source: &str) -> Result<Self> {
        let mut rows = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
        let perr = |line: usize, msg: String| Error::Parse {
            path: source.into(),
            line,
            msg,
        };
        let (hline, header) = rows.next().ok_or_else(|| perr(1, "missing header".into()))?;
        let h: Vec<&str> = header.split([',', ' ', '\t']).filter(|s| !s.is_empty()).collect();
        if h.len() != 4 {
            return Err(perr(hline + 1, "header needs channels, samples, dt, reference speed".into()));
        }
        let channels: usize = h[0].parse().map_err(|_| perr(hline + 1, format!("bad channel count {:?}", h[0])))?;
        let samples: usize = h[1].parse().map_err(|_| perr(hline + 1, format!("bad sample count {:?}", h[1])))?;
        let dt: f64 = h[2].parse().map_err(|_| perr(hline + 1, format!("bad dt {:?}", h[2])))?;
        let vref: f64 = h[3].parse().map_err(|_| perr(hline + 1, format!("bad reference speed {:?}", h[3])))?;
        let mut data = Vec::with_capacity(channels * samples);
        for (i, line) in rows {
            let before = data.len();
            for tok in line.split([',', ' ', '\t']).filter(|s| !s.is_empty()) {
                data.push(tok.parse::<f64>().map_err(|_| perr(i + 1, format!("bad value {tok:?}")))?);
            }
            if data.len() - before != channels {
                return Err(perr(i + 1, format!("expected {channels} values, got {}", data.len() - before)));
            }
        }
        if data.len() != channels * samples {
            return Err(perr(0, format!("header promises {samples} samples, found {}", data.len() / channels.max(1))));
        }
        Self::new(channels, dt, vref, data)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{} {} {} {}\n", self.channels, self.samples(), self.dt, self.reference_speed);
        for row in self.data.chunks(self.channels) {
            let r: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            s.push_str(&r.join(" "));
            s.push('\n');
        }
        s
    }

    /// Flat little-endian layout: `u64 channels, u64 samples, f64 dt,
    /// f64 reference_speed`, then row-major `f64` samples.
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(&(self.channels as u64).to_le_bytes())?;
        w.write_all(&(self.samples() as u64).to_le_bytes())?;
        w.write_all(&self.dt.to_le_bytes())?;
        w.write_all(&self.reference_speed.to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut b = [0u8; 8];
        let mut next = |r: &mut R| -> Result<[u8; 8]> {
            r.read_exact(&mut b)
                .map_err(|e| Error::Input(format!("truncated binary record: {e}")))?;
            Ok(b)
        };
        let channels = u64::from_le_bytes(next(&mut r)?) as usize;
        let samples = u64::from_le_bytes(next(&mut r)?) as usize;
        let dt = f64::from_le_bytes(next(&mut r)?);
        let vref = f64::from_le_bytes(next(&mut r)?);
        let total = channels
            .checked_mul(samples)
            .ok_or_else(|| Error::Input("binary header sizes overflow".into()))?;
        let mut data = Vec::with_capacity(total);
        for _ in 0..total {
            data.push(f64::from_le_bytes(next(&mut r)?));
        }
        Self::new(channels, dt, vref, data)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let is_bin = path.extension().is_some_and(|e| e == "bin");
        if is_bin {
            Self::read_binary(bytes.as_slice())
        } else {
            let text = String::from_utf8(bytes).map_err(|_| Error::Input(format!("{} is not UTF-8", path.display())))?;
            Self::parse_text(&text, &path.display().to_string())
        }
    }
}

/// Records for several tested wind directions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadEnsemble {
    /// `(direction in degrees, record)`.
    pub records: Vec<(f64, LoadRecord)>,
}

/// Two-sided cross-spectral density in rad/s at `omega_m = m * d_omega`.
#[derive(Debug, Clone, PartialEq)]
pub struct Xpsd {
    pub d_omega: f64,
    pub channels: usize,
    /// `data[(m * channels + i) * channels + k]`, load^2 s.
    pub data: Vec<Complex64>,
}

impl Xpsd {
    pub fn n_freq(&self) -> usize {
        self.data.len() / (self.channels * self.channels)
    }

    pub fn at(&self, m: usize, i: usize, k: usize) -> Complex64 {
        self.data[(m * self.channels + i) * self.channels + k]
    }

    pub fn matrix(&self, m: usize) -> DMatrix<Complex64> {
        let c = self.channels;
        DMatrix::from_fn(c, c, |i, k| self.at(m, i, k))
    }

    pub fn psd(&self, i: usize) -> Vec<f64> {
        (0..self.n_freq()).map(|m| self.at(m, i, i).re).collect()
    }

    /// Variance implied by the two-sided diagonal: `2 sum S_ii d_omega`.
    pub fn variance(&self, i: usize) -> f64 {
        2.0 * self.psd(i).iter().sum::<f64>() * self.d_omega
    }

    pub fn coherence(&self, m: usize, i: usize, k: usize) -> f64 {
        let d = self.at(m, i, i).re * self.at(m, k, k).re;
        if d > 0.0 {
            self.at(m, i, k).norm_sqr() / d
        } else {
            0.0
        }
    }

    pub fn from_matrices(d_omega: f64, mats: &[DMatrix<Complex64>]) -> Self {
        let c = mats.first().map_or(0, |m| m.nrows());
        let mut data = Vec::with_capacity(mats.len() * c * c);
        for m in mats {
            for i in 0..c {
                for k in 0..c {
                    data.push(m[(i, k)]);
                }
            }
        }
        Self {
            d_omega,
            channels: c,
            data,
        }
    }
}

fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|k| 0.5 - 0.5 * (TAU * k as f64 / n as f64).cos()).collect()
}

/// Welch estimate (Hann window, segment means removed) over one or more
/// records sharing a channel layout and time step.
pub fn estimate_xpsd(records: &[&LoadRecord], segment: usize, overlap: f64) -> Result<Xpsd> {
    let first = records.first().ok_or_else(|| Error::Input("no records supplied".into()))?;
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::Input(format!("overlap must lie in [0, 1), got {overlap}")));
    }
    if segment < 2 {
        return Err(Error::Input("segment must span at least two samples".into()));
    }
    let (c, dt) = (first.channels, first.dt);
    for r in records {
        if r.channels != c || (r.dt - dt).abs() > 1e-12 * dt {
            return Err(Error::Input("records disagree on channels or time step".into()));
        }
        if r.samples() < segment {
            return Err(Error::Input(format!(
                "record of {} samples is shorter than one segment of {segment}",
                r.samples()
            )));
        }
    }
    let hop = (((1.0 - overlap) * segment as f64).round() as usize).max(1);
    let w = hann(segment);
    let wss: f64 = w.iter().map(|x| x * x).sum();
    let nf = segment / 2 + 1;
    let fft = FftPlanner::new().plan_fft_forward(segment);
    let mut acc = vec![Complex64::new(0.0, 0.0); nf * c * c];
    let mut count = 0usize;
    let mut spectra = vec![vec![Complex64::new(0.0, 0.0); segment]; c];
    for r in records {
        let mut start = 0;
        while start + segment <= r.samples() {
            for (i, buf) in spectra.iter_mut().enumerate() {
                let seg: Vec<f64> = (0..segment).map(|k| r.data[(start + k) * c + i]).collect();
                let mean = seg.iter().sum::<f64>() / segment as f64;
                for k in 0..segment {
                    buf[k] = Complex64::new((seg[k] - mean) * w[k], 0.0);
                }
                fft.process(buf);
            }
            for m in 0..nf {
                for i in 0..c {
                    for k in 0..c {
                        acc[(m * c + i) * c + k] += spectra[i][m] * spectra[k][m].conj();
                    }
                }
            }
            count += 1;
            start += hop;
        }
    }
    let scale = dt / (TAU * wss * count as f64);
    acc.iter_mut().for_each(|v| *v *= scale);
    Ok(Xpsd {
        d_omega: TAU / (segment as f64 * dt),
        channels: c,
        data: acc,
    })
}

/// Frequency-wise eigenpairs of an XPSD, descending in eigenvalue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PodModes {
    pub d_omega: f64,
    pub n_omega: usize,
    pub channels: usize,
    pub n_modes: usize,
    /// `eigenvalues[j * n_modes + l]`, load^2 s.
    pub eigenvalues: Vec<f64>,
    /// `eigenvectors[(j * n_modes + l) * channels + i]`, stored as `(re, im)`.
    pub eigenvectors: Vec<(f64, f64)>,
}

impl PodModes {
    pub fn lambda(&self, j: usize, l: usize) -> f64 {
        self.eigenvalues[j * self.n_modes + l]
    }

    pub fn psi(&self, j: usize, l: usize, i: usize) -> Complex64 {
        let (re, im) = self.eigenvectors[(j * self.n_modes + l) * self.channels + i];
        Complex64::new(re, im)
    }

    /// Cross-spectrum rebuilt from the retained modes.
    pub fn reconstruct(&self, j: usize) -> DMatrix<Complex64> {
        let c = self.channels;
        DMatrix::from_fn(c, c, |i, k| {
            (0..self.n_modes)
                .map(|l| self.psi(j, l, i) * self.psi(j, l, k).conj() * self.lambda(j, l))
                .sum()
        })
    }

    pub fn omega(&self, j: usize) -> f64 {
        j as f64 * self.d_omega
    }

    /// Highest frequency carrying nonzero energy.
    pub fn active_cutoff(&self) -> f64 {
        (0..self.n_omega)
            .rev()
            .find(|&j| (0..self.n_modes).any(|l| self.lambda(j, l) > 0.0))
            .map_or(0.0, |j| self.omega(j))
    }
}

pub fn pod_decompose(xpsd: &Xpsd, n_modes: usize) -> Result<PodModes> {
    let c = xpsd.channels;
    if n_modes > c {
        return Err(Error::Input(format!("{n_modes} modes requested from {c} channels")));
    }
    let nf = xpsd.n_freq();
    let mut eigenvalues = Vec::with_capacity(nf * n_modes);
    let mut eigenvectors = Vec::with_capacity(nf * n_modes * c);
    for j in 0..nf {
        let s = xpsd.matrix(j);
        let scale = s.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let asym = (&s - s.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if asym > HERMITIAN_TOL * scale.max(1.0) {
            return Err(Error::Input(format!(
                "cross-spectrum at frequency index {j} is not Hermitian (deviation {asym:e})"
            )));
        }
        let herm = (&s + s.adjoint()) * Complex64::new(0.5, 0.0);
        let eig = SymmetricEigen::new(herm);
        let mut order: Vec<usize> = (0..c).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        for &l in order.iter().take(n_modes) {
            eigenvalues.push(eig.eigenvalues[l].max(0.0));
            let v = eig.eigenvectors.column(l);
            let norm = v.norm();
            eigenvectors.extend(v.iter().map(|z| {
                let z = z / norm;
                (z.re, z.im)
            }));
        }
    }
    Ok(PodModes {
        d_omega: xpsd.d_omega,
        n_omega: nf,
        channels: c,
        n_modes,
        eigenvalues,
        eigenvectors,
    })
}

/// POD modes plus mean loads at a calibration speed.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralLoadModel {
    pub modes: Arc<PodModes>,
    /// Mean load per channel, N.
    pub mean: Vec<f64>,
    pub reference_speed: f64,
    /// Multiplies every eigenvalue.
    pub lambda_scale: f64,
    /// Multiplies the frequency axis.
    pub frequency_scale: f64,
    /// Frequencies above this carry no energy.
    pub cutoff: f64,
}

impl SpectralLoadModel {
    pub fn new(modes: impl Into<Arc<PodModes>>, mean: Vec<f64>, reference_speed: f64) -> Result<Self> {
        let modes = modes.into();
        if mean.len() != modes.channels {
            return Err(Error::Input(format!(
                "{} mean loads for {} channels",
                mean.len(),
                modes.channels
            )));
        }
        Ok(Self {
            modes,
            mean,
            reference_speed,
            lambda_scale: 1.0,
            frequency_scale: 1.0,
            cutoff: f64::INFINITY,
        })
    }

    pub fn channels(&self) -> usize {
        self.modes.channels
    }

    pub fn n_modes(&self) -> usize {
        self.modes.n_modes
    }

    pub fn n_omega(&self) -> usize {
        self.modes.n_omega
    }

    pub fn n_phases(&self) -> usize {
        self.n_modes() * self.n_omega()
    }

    pub fn d_omega(&self) -> f64 {
        self.modes.d_omega * self.frequency_scale
    }

    pub fn omega(&self, j: usize) -> f64 {
        j as f64 * self.d_omega()
    }

    pub fn lambda(&self, j: usize, l: usize) -> f64 {
        if self.omega(j) > self.cutoff {
            0.0
        } else {
            self.modes.lambda(j, l) * self.lambda_scale
        }
    }

    /// Period of the synthesized process, s.
    pub fn period(&self) -> f64 {
        TAU / self.d_omega()
    }

    /// Highest frequency that carries energy after scaling and truncation.
    pub fn active_cutoff(&self) -> f64 {
        (self.modes.active_cutoff() * self.frequency_scale).min(self.cutoff)
    }

    /// Retained-mode target cross-spectrum at index `j`.
    pub fn target(&self, j: usize) -> DMatrix<Complex64> {
        let c = self.channels();
        DMatrix::from_fn(c, c, |i, k| {
            (0..self.n_modes())
                .map(|l| self.modes.psi(j, l, i) * self.modes.psi(j, l, k).conj() * self.lambda(j, l))
                .sum()
        })
    }

    /// Variance per channel implied by the retained modes.
    pub fn variance(&self, i: usize) -> f64 {
        let dw = self.d_omega();
        (0..self.n_omega())
            .map(|j| {
                (0..self.n_modes())
                    .map(|l| 2.0 * self.modes.psi(j, l, i).norm_sqr() * self.lambda(j, l) * dw)
                    .sum::<f64>()
            })
            .sum()
    }

    /// Frequencies above `omega_max` are dropped.
    pub fn truncated(mut self, omega_max: f64) -> Self {
        self.cutoff = self.cutoff.min(omega_max);
        self
    }

    /// Full-scale model at speed `v`: mean loads scale with `r^2`, the
    /// frequency axis with `r`, spectral ordinates with `r^3`, so the
    /// fluctuating variance scales with `r^4`.
    pub fn scale_to_site(&self, v: f64) -> Result<Self> {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::Input(format!("wind speed must be positive, got {v}")));
        }
        let r = v / self.reference_speed;
        Ok(Self {
            modes: Arc::clone(&self.modes),
            mean: self.mean.iter().map(|m| m * r * r).collect(),
            reference_speed: v,
            lambda_scale: self.lambda_scale * r.powi(3),
            frequency_scale: self.frequency_scale * r,
            cutoff: self.cutoff * r,
        })
    }
}

/// Piecewise-linear load envelope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    /// Loaded duration including both ramps, s.
    pub loaded: f64,
    pub ramp_up: f64,
    pub ramp_down: f64,
    /// Zero-load tail appended after loading, s.
    pub tail: f64,
}

impl Default for Envelope {
    fn default() -> Self {
        Self {
            loaded: 4200.0,
            ramp_up: 300.0,
            ramp_down: 300.0,
            tail: 200.0,
        }
    }
}

impl Envelope {
    pub fn validate(&self) -> Result<()> {
        let ok = self.loaded > 0.0
            && self.ramp_up >= 0.0
            && self.ramp_down >= 0.0
            && self.tail >= 0.0
            && self.ramp_up + self.ramp_down <= self.loaded;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("inconsistent load envelope {self:?}")))
        }
    }

    pub fn total(&self) -> f64 {
        self.loaded + self.tail
    }

    pub fn factor(&self, t: f64) -> f64 {
        if t < 0.0 || t >= self.loaded {
            0.0
        } else if t < self.ramp_up {
            t / self.ramp_up
        } else if t > self.loaded - self.ramp_down {
            (self.loaded - t) / self.ramp_down
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadRealization {
    pub dt: f64,
    pub envelope: Envelope,
    /// Channel-major forces, N.
    pub forces: Vec<Vec<f64>>,
}

impl LoadRealization {
    pub fn time(&self) -> Vec<f64> {
        let n = self.forces.first().map_or(0, |f| f.len());
        (0..n).map(|k| k as f64 * self.dt).collect()
    }

    pub fn tail_start(&self) -> f64 {
        self.envelope.loaded
    }
}

/// `y_k = sum_j b_j exp(i x j k)` for `k < count`, by Bluestein's chirp
/// convolution.
pub fn chirp_sum(b: &[Complex64], x: f64, count: usize, planner: &mut FftPlanner<f64>) -> Vec<Complex64> {
    let n = b.len();
    if n == 0 || count == 0 {
        return vec![Complex64::new(0.0, 0.0); count];
    }
    let p = (n + count - 1).next_power_of_two();
    let chirp = |m: usize| {
        let mm = (m as f64) * (m as f64);
        Complex64::from_polar(1.0, (0.5 * x * mm).rem_euclid(TAU))
    };
    let mut a = vec![Complex64::new(0.0, 0.0); p];
    for j in 0..n {
        a[j] = b[j] * chirp(j);
    }
    let mut c = vec![Complex64::new(0.0, 0.0); p];
    for m in 0..count {
        c[m] = chirp(m).conj();
    }
    for m in 1..n {
        c[p - m] = chirp(m).conj();
    }
    let fwd = planner.plan_fft_forward(p);
    let inv = planner.plan_fft_inverse(p);
    fwd.process(&mut a);
    fwd.process(&mut c);
    for (ai, ci) in a.iter_mut().zip(&c) {
        *ai *= ci;
    }
    inv.process(&mut a);
    (0..count).map(|k| a[k] * chirp(k) / p as f64).collect()
}

/// Evaluates the spectral representation
/// `f_i(t) = mean_i + 2 sum_l sum_j |psi_il| sqrt(lambda_l d_omega) cos(omega_j t + theta_il + phi_jl)`
/// on `[0, envelope.total()]` and applies the envelope.
pub fn simulate_loads(model: &SpectralLoadModel, phases: &[f64], envelope: &Envelope, dt: f64) -> Result<LoadRealization> {
    envelope.validate()?;
    if !(dt > 0.0) {
        return Err(Error::Input(format!("time step must be positive, got {dt}")));
    }
    let (nl, nw, c) = (model.n_modes(), model.n_omega(), model.channels());
    if phases.len() != nl * nw {
        return Err(Error::Input(format!(
            "phase vector has {} entries, expected {nl} x {nw}",
            phases.len()
        )));
    }
    let count = (envelope.total() / dt).round() as usize + 1;
    let loaded_count = ((envelope.loaded / dt).ceil() as usize + 1).min(count);
    let mut forces = vec![vec![0.0; count]; c];
    if nl > 0 && nw > 0 {
        if model.active_cutoff() > PI / dt * (1.0 + 1e-12) {
            return Err(Error::Input(format!(
                "time step {dt} s cannot resolve the cutoff {} rad/s",
                model.active_cutoff()
            )));
        }
        if envelope.loaded > model.period() * (1.0 + 1e-12) {
            return Err(Error::Input(format!(
                "loaded duration {} s exceeds the process period {} s",
                envelope.loaded,
                model.period()
            )));
        }
        let dw = model.d_omega();
        let mut planner = FftPlanner::new();
        for (i, out) in forces.iter_mut().enumerate() {
            let b: Vec<Complex64> = (0..nw)
                .map(|j| {
                    (0..nl)
                        .map(|l| {
                            let psi = model.modes.psi(j, l, i);
                            let amp = 2.0 * psi.norm() * (model.lambda(j, l) * dw).sqrt();
                            Complex64::from_polar(amp, psi.arg() + phases[l * nw + j])
                        })
                        .sum()
                })
                .collect();
            let y = chirp_sum(&b, dw * dt, loaded_count, &mut planner);
            for (o, yk) in out.iter_mut().zip(&y) {
                *o = yk.re;
            }
        }
    }
    for (i, out) in forces.iter_mut().enumerate() {
        for (k, o) in out.iter_mut().enumerate() {
            let e = envelope.factor(k as f64 * dt);
            *o = if e == 0.0 { 0.0 } else { e * (model.mean[i] + *o) };
        }
    }
    Ok(LoadRealization {
        dt,
        envelope: *envelope,
        forces,
    })
}

/// Multiplies every force value by `w1 w2 w3`.
pub fn apply_model_uncertainty(mut loads: LoadRealization, w1: f64, w2: f64, w3: f64) -> LoadRealization {
    let w = w1 * w2 * w3;
    for ch in &mut loads.forces {
        ch.iter_mut().for_each(|f| *f *= w);
    }
    loads
}

/// Adds the torsional share `T / (4 (width / 2))` to each floor's frame load.
pub fn torsion_to_frame_forces(frame_shear: &[f64], torsion: &[f64], width: f64) -> Result<Vec<f64>> {
    if !(width > 0.0) {
        return Err(Error::Input(format!("building width must be positive, got {width}")));
    }
    if frame_shear.len() != torsion.len() {
        return Err(Error::Input("shear and torsion channel counts differ".into()));
    }
    Ok(frame_shear
        .iter()
        .zip(torsion)
        .map(|(f, t)| f + t / (4.0 * (width / 2.0)))
        .collect())
}

/// Per-floor frame histories from a realization laid out as
/// `[building shear per floor..., torsion per floor...]` (torsion optional).
pub fn frame_load_histories(loads: &LoadRealization, floors: usize, share: f64, width: f64) -> Result<Vec<Vec<f64>>> {
    let c = loads.forces.len();
    if c != floors && c != 2 * floors {
        return Err(Error::Input(format!("{c} load channels do not match {floors} floors")));
    }
    let n = loads.forces.first().map_or(0, |f| f.len());
    let mut out = vec![vec![0.0; n]; floors];
    let zero = vec![0.0; floors];
    let mut shear = vec![0.0; floors];
    let mut torsion = vec![0.0; floors];
    for k in 0..n {
        for f in 0..floors {
            shear[f] = share * loads.forces[f][k];
            torsion[f] = if c == 2 * floors { loads.forces[floors + f][k] } else { 0.0 };
        }
        let t = if c == 2 * floors { &torsion } else { &zero };
        for (f, v) in torsion_to_frame_forces(&shear, t, width)?.into_iter().enumerate() {
            out[f][k] = v;
        }
    }
    Ok(out)
}

/// One tested direction: a model index and the direction-specific mean
/// loads and variance factor applied on top of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionEntry {
    pub direction_deg: f64,
    pub model: usize,
    /// Mean load per channel at the reference speed, N.
    pub mean: Vec<f64>,
    pub variance_factor: f64,
}

/// Spectral models for a set of tested directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadModelSet {
    pub reference_speed: f64,
    pub models: Vec<Arc<PodModes>>,
    pub directions: Vec<DirectionEntry>,
}

impl LoadModelSet {
    pub fn from_ensemble(ensemble: &LoadEnsemble, segment: usize, overlap: f64, n_modes: usize) -> Result<Self> {
        let first = ensemble
            .records
            .first()
            .ok_or_else(|| Error::Input("empty load ensemble".into()))?;
        let vref = first.1.reference_speed;
        let mut models = Vec::new();
        let mut directions = Vec::new();
        for (deg, rec) in &ensemble.records {
            if (rec.reference_speed - vref).abs() > 1e-9 * vref {
                return Err(Error::Input("ensemble records use different reference speeds".into()));
            }
            let x = estimate_xpsd(&[rec], segment, overlap)?;
            models.push(Arc::new(pod_decompose(&x, n_modes)?));
            directions.push(DirectionEntry {
                direction_deg: deg.rem_euclid(360.0),
                model: models.len() - 1,
                mean: rec.means(),
                variance_factor: 1.0,
            });
        }
        Ok(Self {
            reference_speed: vref,
            models,
            directions,
        })
    }

    pub fn channels(&self) -> usize {
        self.models.first().map_or(0, |m| m.channels)
    }

    /// Phases needed per realization (the largest model).
    pub fn n_phases(&self) -> usize {
        self.models.iter().map(|m| m.n_modes * m.n_omega).max().unwrap_or(0)
    }

    /// Index of the tested direction nearest to `alpha` (radians).
    pub fn snap(&self, alpha: f64) -> Result<usize> {
        let deg = alpha.to_degrees().rem_euclid(360.0);
        let dist = |d: f64| {
            let x = (d - deg).rem_euclid(360.0);
            x.min(360.0 - x)
        };
        self.directions
            .iter()
            .enumerate()
            .min_by(|a, b| dist(a.1.direction_deg).total_cmp(&dist(b.1.direction_deg)))
            .map(|(i, _)| i)
            .ok_or_else(|| Error::State("load model set has no directions".into()))
    }

    /// Reference-speed model for the tested direction nearest `alpha`.
    pub fn model_for(&self, alpha: f64) -> Result<SpectralLoadModel> {
        let d = &self.directions[self.snap(alpha)?];
        let modes = self
            .models
            .get(d.model)
            .ok_or_else(|| Error::State(format!("direction refers to missing model {}", d.model)))?;
        let mut m = SpectralLoadModel::new(Arc::clone(modes), d.mean.clone(), self.reference_speed)?;
        m.lambda_scale = d.variance_factor;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
    }
}

/// Parameters of the bundled synthetic building spectrum: von Karman
/// turbulence, Davenport-type vertical coherence, quasi-steady floor forces
/// and an optional torsion channel per floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpectrum {
    /// Floor elevations above ground, m.
    pub heights: Vec<f64>,
    /// Facade width facing the wind, m.
    pub breadth: f64,
    pub reference_speed: f64,
    pub air_density: f64,
    pub drag: f64,
    /// Power-law exponent of the mean speed profile.
    pub profile_exponent: f64,
    pub turbulence_intensity: f64,
    /// Integral length scale, m.
    pub length_scale: f64,
    /// Exponential coherence decay constant.
    pub decay: f64,
    /// Torsion standard deviation as `breadth * ratio * force std`; zero
    /// disables torsion channels.
    pub torsion_ratio: f64,
    /// Coherence between a floor's shear and torsion.
    pub torsion_coherence: f64,
    pub d_omega: f64,
    pub n_omega: usize,
    pub n_modes: usize,
    /// Spacing of the tested directions, degrees.
    pub direction_step: f64,
}

impl Default for SyntheticSpectrum {
    fn default() -> Self {
        Self {
            heights: Vec::new(),
            breadth: 30.0,
            reference_speed: 50.0,
            air_density: 1.25,
            drag: 1.3,
            profile_exponent: 0.2,
            turbulence_intensity: 0.15,
            length_scale: 100.0,
            decay: 10.0,
            torsion_ratio: 0.1,
            torsion_coherence: 0.3,
            d_omega: 0.005,
            n_omega: 4096,
            n_modes: 5,
            direction_step: 10.0,
        }
    }
}

impl SyntheticSpectrum {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic spectrum: {m}")));
        if self.heights.is_empty() || self.heights.iter().any(|h| !(*h > 0.0)) {
            return bad("floor heights must be positive and non-empty");
        }
        if self.heights.windows(2).any(|w| w[1] <= w[0]) {
            return bad("floor heights must increase");
        }
        if !(self.breadth > 0.0 && self.reference_speed > 0.0 && self.d_omega > 0.0 && self.length_scale > 0.0) {
            return bad("breadth, reference speed, length scale and frequency step must be positive");
        }
        if self.n_omega < 2 || !(self.direction_step > 0.0) || 360.0 % self.direction_step > 1e-9 {
            return bad("need at least two frequencies and a direction step dividing 360");
        }
        if !(0.0..1.0).contains(&self.torsion_coherence) {
            return bad("torsion coherence must lie in [0, 1)");
        }
        if self.n_modes > self.channels() {
            return bad("more modes than channels");
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        let n = self.heights.len();
        if self.torsion_ratio > 0.0 {
            2 * n
        } else {
            n
        }
    }

    fn tributary(&self) -> Vec<f64> {
        let h = &self.heights;
        (0..h.len())
            .map(|i| {
                let below = if i == 0 { h[0] } else { h[i] - h[i - 1] };
                let above = if i + 1 < h.len() { h[i + 1] - h[i] } else { 0.0 };
                0.5 * (below + above) + if i == 0 { 0.5 * h[0] } else { 0.0 }
            })
            .collect()
    }

    /// Mean along-wind floor force at the reference speed, N.
    pub fn mean_forces(&self) -> Vec<f64> {
        let top = *self.heights.last().unwrap_or(&1.0);
        let q = 0.5 * self.air_density * self.reference_speed.powi(2);
        self.heights
            .iter()
            .zip(self.tributary())
            .map(|(z, a)| q * self.drag * self.breadth * a * (z / top).powf(2.0 * self.profile_exponent))
            .collect()
    }

    /// Two-sided force spectrum shape in rad/s with unit variance.
    fn unit_spectrum(&self, omega: f64, z: f64) -> f64 {
        let top = *self.heights.last().unwrap_or(&1.0);
        let vz = self.reference_speed * (z / top).powf(self.profile_exponent);
        let n = omega / TAU;
        let x = n * self.length_scale / vz;
        let sn = 4.0 * self.length_scale / vz / (1.0 + 70.8 * x * x).powf(5.0 / 6.0);
        sn / (2.0 * TAU)
    }

    pub fn xpsd(&self) -> Result<Xpsd> {
        self.validate()?;
        let nf = self.heights.len();
        let c = self.channels();
        let means = self.mean_forces();
        let sig: Vec<f64> = means.iter().map(|m| 2.0 * self.turbulence_intensity * m).collect();
        let top = *self.heights.last().unwrap_or(&1.0);
        let mut mats = Vec::with_capacity(self.n_omega);
        for j in 0..self.n_omega {
            let w = j as f64 * self.d_omega;
            let mut s = DMatrix::from_element(c, c, Complex64::new(0.0, 0.0));
            if j > 0 {
                let amp: Vec<f64> = (0..c)
                    .map(|i| {
                        let f = i % nf;
                        let scale = if i < nf { 1.0 } else { self.torsion_ratio * self.breadth };
                        scale * sig[f] * self.unit_spectrum(w, self.heights[f]).sqrt()
                    })
                    .collect();
                for i in 0..c {
                    for k in 0..c {
                        let (fi, fk) = (i % nf, k % nf);
                        let vm = self.reference_speed
                            * (0.5 * (self.heights[fi] + self.heights[fk]) / top).powf(self.profile_exponent);
                        let coh = (-self.decay * w / TAU * (self.heights[fi] - self.heights[fk]).abs() / vm).exp();
                        let block = if (i < nf) == (k < nf) { 1.0 } else { self.torsion_coherence };
                        s[(i, k)] = Complex64::new(amp[i] * amp[k] * coh * block, 0.0);
                    }
                }
            }
            mats.push(s);
        }
        Ok(Xpsd::from_matrices(self.d_omega, &mats))
    }

    /// Builds the direction-indexed model set. The mean shear follows
    /// `sin(alpha)`, mean torsion `0.5 ratio breadth sin(2 alpha)` times the
    /// shear scale, and fluctuation variance `(0.6 + 0.4 |sin alpha|)^2`.
    pub fn build(&self) -> Result<LoadModelSet> {
        let x = self.xpsd()?;
        let modes = pod_decompose(&x, self.n_modes)?;
        let base = self.mean_forces();
        let nf = self.heights.len();
        let n_dir = (360.0 / self.direction_step).round() as usize;
        let directions = (0..n_dir)
            .map(|d| {
                let deg = d as f64 * self.direction_step;
                let a = deg.to_radians();
                let mut mean: Vec<f64> = base.iter().map(|m| m * a.sin()).collect();
                if self.channels() == 2 * nf {
                    mean.extend(base.iter().map(|m| m * 0.5 * self.torsion_ratio * self.breadth * (2.0 * a).sin()));
                }
                DirectionEntry {
                    direction_deg: deg,
                    model: 0,
                    mean,
                    variance_factor: (0.6 + 0.4 * a.sin().abs()).powi(2),
                }
            })
            .collect();
        Ok(LoadModelSet {
            reference_speed: self.reference_speed,
            models: vec![Arc::new(modes)],
            directions,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::seeded;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn white_record(channels: usize, n: usize, seed: u64, copy: bool) -> LoadRecord {
        let mut rng = seeded(seed);
        let mut data = Vec::with_capacity(channels * n);
        for _ in 0..n {
            let x: f64 = StandardNormal.sample(&mut rng);
            for i in 0..channels {
                let y: f64 = if copy || i == 0 { x } else { StandardNormal.sample(&mut rng) };
                data.push(y);
            }
        }
        LoadRecord::new(channels, 0.1, 40.0, data).unwrap()
    }

    fn single_mode(lambda_dw: f64, omega: f64) -> SpectralLoadModel {
        let d_omega = omega;
        let modes = PodModes {
            d_omega,
            n_omega: 2,
            channels: 1,
            n_modes: 1,
            eigenvalues: vec![0.0, lambda_dw / d_omega],
            eigenvectors: vec![(1.0, 0.0), (1.0, 0.0)],
        };
        SpectralLoadModel::new(modes, vec![3.0], 40.0).unwrap()
    }

    #[test]
    fn white_noise_psd_is_flat_with_unit_variance() {
        let r = white_record(1, 200 * 256, 1, false);
        let x = estimate_xpsd(&[&r], 256, 0.5).unwrap();
        assert!((x.variance(0) - 1.0).abs() < 0.1);
        let expect = 0.1 / TAU;
        let psd = x.psd(0);
        let mean_mid = psd[10..120].iter().sum::<f64>() / 110.0;
        assert!((mean_mid / expect - 1.0).abs() < 0.1);
    }

    #[test]
    fn identical_channels_are_fully_coherent() {
        let r = white_record(2, 64 * 128, 2, true);
        let x = estimate_xpsd(&[&r], 128, 0.5).unwrap();
        for m in 1..64 {
            assert!((x.coherence(m, 0, 1) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn independent_channels_have_low_coherence() {
        let r = white_record(2, 200 * 128, 3, false);
        let x = estimate_xpsd(&[&r], 128, 0.0).unwrap();
        let mean = (1..64).map(|m| x.coherence(m, 0, 1)).sum::<f64>() / 63.0;
        assert!(mean < 0.1, "{mean}");
    }

    #[test]
    fn short_record_is_input_error() {
        let r = white_record(1, 100, 1, false);
        assert!(matches!(estimate_xpsd(&[&r], 128, 0.5), Err(Error::Input(_))));
    }

    #[test]
    fn pod_of_diagonal_and_rank_one() {
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            Complex64::new(1.0, 0.0),
            Complex64::new(3.0, 0.0),
            Complex64::new(2.0, 0.0),
        ]));
        let p = pod_decompose(&Xpsd::from_matrices(1.0, &[d]), 3).unwrap();
        assert_eq!(p.eigenvalues, vec![3.0, 2.0, 1.0]);
        assert!((p.psi(0, 0, 1).norm() - 1.0).abs() < 1e-12);
        let a = nalgebra::DVector::from_vec(vec![Complex64::new(1.0, 1.0), Complex64::new(0.0, 2.0)]);
        let s = &a * a.adjoint() * Complex64::new(2.5, 0.0);
        let p = pod_decompose(&Xpsd::from_matrices(1.0, &[s]), 2).unwrap();
        assert!((p.lambda(0, 0) - 2.5 * 6.0).abs() < 1e-10);
        assert!(p.lambda(0, 1).abs() < 1e-10);
    }

    #[test]
    fn pod_full_reconstruction() {
        let mut rng = seeded(5);
        let a = DMatrix::from_fn(4, 4, |_, _| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        let s = &a * a.adjoint();
        let x = Xpsd::from_matrices(1.0, std::slice::from_ref(&s));
        let p = pod_decompose(&x, 4).unwrap();
        let r = p.reconstruct(0);
        assert!((r - &s).iter().map(|z| z.norm()).fold(0.0, f64::max) < 1e-8);
        let trace: f64 = (0..4).map(|i| s[(i, i)].re).sum();
        let sum: f64 = (0..4).map(|l| p.lambda(0, l)).sum();
        assert!((trace - sum).abs() < 1e-10);
        for l in 1..4 {
            assert!(p.lambda(0, l) <= p.lambda(0, l - 1));
        }
    }

    #[test]
    fn pod_rejects_non_hermitian() {
        let mut s = DMatrix::from_element(2, 2, Complex64::new(1.0, 0.0));
        s[(0, 1)] = Complex64::new(0.5, 0.1);
        s[(1, 0)] = Complex64::new(0.5, 0.1);
        assert!(matches!(pod_decompose(&Xpsd::from_matrices(1.0, &[s]), 1), Err(Error::Input(_))));
    }

    #[test]
    fn single_mode_substitution() {
        let w = 0.2;
        let m = single_mode(0.25, w);
        let env = Envelope {
            loaded: 20.0,
            ramp_up: 0.0,
            ramp_down: 0.0,
            tail: 0.0,
        };
        let r = simulate_loads(&m, &[0.0, 0.0], &env, 0.5).unwrap();
        for (k, f) in r.forces[0].iter().enumerate().take(40) {
            let t = k as f64 * 0.5;
            assert!((f - (3.0 + (w * t).cos())).abs() < 1e-9, "{t}");
        }
    }

    #[test]
    fn zero_modes_give_enveloped_mean() {
        let modes = PodModes {
            d_omega: 0.01,
            n_omega: 10,
            channels: 2,
            n_modes: 0,
            eigenvalues: vec![],
            eigenvectors: vec![],
        };
        let m = SpectralLoadModel::new(modes, vec![2.0, -1.0], 40.0).unwrap();
        let env = Envelope {
            loaded: 100.0,
            ramp_up: 10.0,
            ramp_down: 20.0,
            tail: 30.0,
        };
        let r = simulate_loads(&m, &[], &env, 0.5).unwrap();
        for (k, f) in r.forces[1].iter().enumerate() {
            assert_eq!(*f, -1.0 * env.factor(k as f64 * 0.5));
        }
        assert!(r.forces[0][(100.0 / 0.5) as usize..].iter().all(|f| *f == 0.0));
    }

    #[test]
    fn chirp_matches_direct_sum() {
        let mut rng = seeded(9);
        let b: Vec<Complex64> = (0..37).map(|_| Complex64::new(rng.random(), rng.random())).collect();
        let x = 0.0123;
        let y = chirp_sum(&b, x, 101, &mut FftPlanner::new());
        for k in 0..101 {
            let d: Complex64 = b
                .iter()
                .enumerate()
                .map(|(j, bj)| bj * Complex64::from_polar(1.0, x * (j * k) as f64))
                .sum();
            assert!((y[k] - d).norm() < 1e-10);
        }
    }

    #[test]
    fn phase_and_period_checks() {
        let m = single_mode(0.25, 0.2);
        let env = Envelope {
            loaded: 40.0,
            ramp_up: 0.0,
            ramp_down: 0.0,
            tail: 0.0,
        };
        assert!(matches!(simulate_loads(&m, &[0.0], &env, 0.5), Err(Error::Input(_))));
        let long = Envelope { loaded: 30.0, ..env };
        let too_long = Envelope { loaded: 100.0, ..long };
        assert!(simulate_loads(&m, &[0.0, 0.0], &long, 0.5).is_ok());
        assert!(simulate_loads(&m, &[0.0, 0.0], &too_long, 0.5).is_err());
        assert!(simulate_loads(&m, &[0.0, 0.0], &long, 20.0).is_err());
    }

    #[test]
    fn scaling_to_site() {
        let spec = SyntheticSpectrum {
            heights: vec![4.0, 8.0, 12.0],
            n_omega: 512,
            d_omega: 0.02,
            n_modes: 3,
            torsion_ratio: 0.0,
            ..Default::default()
        };
        let set = spec.build().unwrap();
        let m = set.model_for(PI / 2.0).unwrap();
        let same = m.scale_to_site(m.reference_speed).unwrap();
        assert_eq!(same.mean, m.mean);
        assert_eq!(same.d_omega(), m.d_omega());
        let d = m.scale_to_site(2.0 * m.reference_speed).unwrap();
        for i in 0..3 {
            assert!((d.mean[i] / m.mean[i] - 4.0).abs() < 1e-12);
            assert!((d.variance(i) / m.variance(i) - 16.0).abs() < 1e-9);
        }
        let peak = |s: &SpectralLoadModel| {
            (1..s.n_omega())
                .max_by(|&a, &b| s.lambda(a, 0).total_cmp(&s.lambda(b, 0)))
                .map(|j| s.omega(j))
                .unwrap()
        };
        assert!((peak(&d) / peak(&m) - 2.0).abs() < 1e-12);
        assert!(m.scale_to_site(0.0).is_err());
    }

    #[test]
    fn direction_snapping() {
        let spec = SyntheticSpectrum {
            heights: vec![4.0, 8.0],
            n_omega: 16,
            n_modes: 2,
            ..Default::default()
        };
        let set = spec.build().unwrap();
        assert_eq!(set.directions[set.snap(14f64.to_radians()).unwrap()].direction_deg, 10.0);
        assert_eq!(set.directions[set.snap(356f64.to_radians()).unwrap()].direction_deg, 0.0);
    }

    #[test]
    fn model_uncertainty_scales_exactly() {
        let r = LoadRealization {
            dt: 1.0,
            envelope: Envelope::default(),
            forces: vec![vec![1.0, -2.0, 3.5]],
        };
        assert_eq!(apply_model_uncertainty(r.clone(), 1.0, 1.0, 1.0), r);
        let s = apply_model_uncertainty(r.clone(), 1.1, 1.0, 1.0);
        for (a, b) in s.forces[0].iter().zip(&r.forces[0]) {
            assert_eq!(*a, b * 1.1);
        }
    }

    #[test]
    fn torsion_conversion() {
        let f = torsion_to_frame_forces(&[10e3], &[0.0], 40.0).unwrap();
        assert_eq!(f, vec![10e3]);
        let f = torsion_to_frame_forces(&[0.0], &[400e3], 40.0).unwrap();
        assert!((f[0] - 5e3).abs() < 1e-9);
        let g = torsion_to_frame_forces(&[0.0], &[400e3], 80.0).unwrap();
        assert!((g[0] - 2.5e3).abs() < 1e-9);
    }

    #[test]
    fn record_round_trips() {
        let r = white_record(3, 50, 7, false);
        let t = LoadRecord::parse_text(&r.to_text(), "mem").unwrap();
        assert_eq!(t, r);
        let mut buf = Vec::new();
        r.write_binary(&mut buf).unwrap();
        assert_eq!(LoadRecord::read_binary(buf.as_slice()).unwrap(), r);
        let bad = "2 2 0.1 40\n1 2\n3\n";
        assert!(matches!(LoadRecord::parse_text(bad, "x"), Err(Error::Parse { line: 3, .. })));
    }
}
