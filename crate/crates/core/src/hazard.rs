//! Site wind climate: Weibull speed marginal, von Mises kernel direction
//! density, kernel copula for speed/direction dependence, hazard curve and
//! conditional direction sampling.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Direction grid used for quadrature and sampling.
pub const DIRECTION_GRID: usize = 720;
pub const COPULA_GRID: usize = 128;
pub const MIN_EVENTS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindEvent {
    /// Mean-hourly speed at building height, m/s.
    pub speed: f64,
    /// Direction, radians in [0, 2π).
    pub direction: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DirectionalWindRecord {
    pub events: Vec<WindEvent>,
}

pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

impl DirectionalWindRecord {
    pub fn new(pairs: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        let mut events = Vec::new();
        for (k, (speed, direction)) in pairs.into_iter().enumerate() {
            if !(speed >= 0.0) || !speed.is_finite() || !direction.is_finite() {
                return Err(Error::Input(format!("event {k}: invalid speed {speed} or direction {direction}")));
            }
            events.push(WindEvent {
                speed,
                direction: wrap_angle(direction),
            });
        }
        Ok(Self { events })
    }

    /// Parses delimited text: a header line, then `speed, direction_deg`.
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut events = Vec::new();
        let mut lines = text.lines().enumerate();
        if lines.next().is_none() {
            return Err(Error::Parse {
                path: source.into(),
                line: 1,
                msg: "missing header".into(),
            });
        }
        for (i, line) in lines {
            let line_no = i + 1;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = t.split([',', ';', '\t', ' ']).filter(|s| !s.is_empty()).collect();
            let err = |msg: String| Error::Parse {
                path: source.into(),
                line: line_no,
                msg,
            };
            if fields.len() < 2 {
                return Err(err(format!("expected speed and direction, got {t:?}")));
            }
            let speed: f64 = fields[0].parse().map_err(|_| err(format!("bad speed {:?}", fields[0])))?;
            let deg: f64 = fields[1].parse().map_err(|_| err(format!("bad direction {:?}", fields[1])))?;
            if !(speed >= 0.0) || !speed.is_finite() {
                return Err(err(format!("negative or non-finite speed {speed}")));
            }
            if !deg.is_finite() {
                return Err(err(format!("non-finite direction {deg}")));
            }
            events.push(WindEvent {
                speed,
                direction: wrap_angle(deg.to_radians()),
            });
        }
        Ok(Self { events })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn speeds(&self) -> Vec<f64> {
        self.events.iter().map(|e| e.speed).collect()
    }

    pub fn directions(&self) -> Vec<f64> {
        self.events.iter().map(|e| e.direction).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weibull {
    pub shape: f64,
    pub scale: f64,
}

impl Weibull {
    pub fn cdf(&self, v: f64) -> f64 {
        if v <= 0.0 {
            0.0
        } else {
            -(-(v / self.scale).powf(self.shape)).exp_m1()
        }
    }

    pub fn sf(&self, v: f64) -> f64 {
        if v <= 0.0 {
            1.0
        } else {
            (-(v / self.scale).powf(self.shape)).exp()
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        self.scale * (-(-p).ln_1p()).powf(1.0 / self.shape)
    }

    /// Speed with survival probability `s`.
    pub fn isf(&self, s: f64) -> f64 {
        self.scale * (-s.ln()).powf(1.0 / self.shape)
    }

    pub fn median(&self) -> f64 {
        self.scale * std::f64::consts::LN_2.powf(1.0 / self.shape)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.isf(1.0 - u)
    }
}

/// Maximum-likelihood Weibull fit (Newton on the shape equation).
pub fn fit_speed_marginal(record: &DirectionalWindRecord) -> Result<Weibull> {
    let x = record.speeds();
    if x.len() < MIN_EVENTS {
        return Err(Error::Fit(format!("need at least {MIN_EVENTS} events, got {}", x.len())));
    }
    if x.iter().any(|&v| v <= 0.0) {
        return Err(Error::Fit("zero speeds cannot enter a Weibull likelihood".into()));
    }
    let xmax = x.iter().cloned().fold(0.0, f64::max);
    let xmin = x.iter().cloned().fold(f64::INFINITY, f64::min);
    if (xmax - xmin) <= 1e-12 * xmax {
        return Err(Error::Fit("degenerate speed data (all values equal)".into()));
    }
    let n = x.len() as f64;
    let y: Vec<f64> = x.iter().map(|v| v / xmax).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mean_ly = ly.iter().sum::<f64>() / n;
    // moment-free starting value from the log spread
    let var_ly = ly.iter().map(|l| (l - mean_ly).powi(2)).sum::<f64>() / n;
    let mut k = (PI / (6.0 * var_ly).sqrt()).clamp(0.05, 50.0);
    for _ in 0..200 {
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for (yi, li) in y.iter().zip(&ly) {
            let p = yi.powf(k);
            s0 += p;
            s1 += p * li;
            s2 += p * li * li;
        }
        let g = s1 / s0 - 1.0 / k - mean_ly;
        let dg = (s2 * s0 - s1 * s1) / (s0 * s0) + 1.0 / (k * k);
        let mut step = g / dg;
        while k - step <= 0.0 {
            step /= 2.0;
        }
        k -= step;
        if step.abs() <= 1e-13 * k {
            let s0: f64 = y.iter().map(|v| v.powf(k)).sum();
            let scale = xmax * (s0 / n).powf(1.0 / k);
            return Ok(Weibull { shape: k, scale });
        }
    }
    Err(Error::Fit("Weibull shape iteration did not converge".into()))
}

/// Scaled modified Bessel function `I_n(x) e^{-x}` by periodic trapezoid
/// quadrature, accurate to machine precision for moderate `x`.
pub fn bessel_i_scaled(n: u32, x: f64) -> f64 {
    let m = 256 + (4.0 * x.abs().sqrt()) as usize * 16;
    let h = PI / m as f64;
    let mut s = 0.0;
    for j in 0..=m {
        let t = j as f64 * h;
        let w = if j == 0 || j == m { 0.5 } else { 1.0 };
        s += w * (x * (t.cos() - 1.0)).exp() * (n as f64 * t).cos();
    }
    s * h / PI
}

fn a1_inverse(r: f64) -> f64 {
    if r < 0.53 {
        2.0 * r + r.powi(3) + 5.0 * r.powi(5) / 6.0
    } else if r < 0.85 {
        -0.4 + 1.39 * r + 0.43 / (1.0 - r)
    } else {
        1.0 / (r.powi(3) - 4.0 * r * r + 3.0 * r)
    }
}

/// Plug-in concentration for a von Mises kernel density.
pub fn plugin_concentration(angles: &[f64]) -> f64 {
    let n = angles.len() as f64;
    let (c, s) = angles.iter().fold((0.0, 0.0), |(c, s), a| (c + a.cos(), s + a.sin()));
    let rbar = ((c / n).powi(2) + (s / n).powi(2)).sqrt().min(0.999_999);
    let kh = a1_inverse(rbar).max(1e-6);
    let i0 = bessel_i_scaled(0, kh);
    let i2 = bessel_i_scaled(2, 2.0 * kh);
    let bw = (3.0 * n * kh * kh * i2 / (4.0 * PI.sqrt() * i0 * i0)).powf(0.4);
    bw.clamp(1e-3, 1e4)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionDensity {
    pub concentration: f64,
    pub angles: Vec<f64>,
    /// Density on `DIRECTION_GRID + 1` equally spaced points over [0, 2π].
    pub grid_pdf: Vec<f64>,
    pub grid_cdf: Vec<f64>,
}

fn grid_angle(i: usize) -> f64 {
    TAU * i as f64 / DIRECTION_GRID as f64
}

fn trapezoid_cumulative(y: &[f64], h: f64) -> Vec<f64> {
    let mut c = vec![0.0; y.len()];
    for i in 1..y.len() {
        c[i] = c[i - 1] + 0.5 * h * (y[i] + y[i - 1]);
    }
    c
}

impl DirectionDensity {
    pub fn pdf(&self, alpha: f64) -> f64 {
        let k = self.concentration;
        let norm = 1.0 / (TAU * bessel_i_scaled(0, k) * self.angles.len() as f64);
        norm * self.angles.iter().map(|a| (k * ((alpha - a).cos() - 1.0)).exp()).sum::<f64>()
    }

    /// Marginal CDF on [0, 2π], interpolated on the grid.
    pub fn cdf(&self, alpha: f64) -> f64 {
        interp_grid(&self.grid_cdf, alpha.clamp(0.0, TAU))
    }

    pub fn integral(&self) -> f64 {
        *self.grid_cdf.last().unwrap_or(&0.0)
    }
}

fn interp_grid(values: &[f64], alpha: f64) -> f64 {
    let x = alpha / TAU * DIRECTION_GRID as f64;
    let i = (x.floor() as usize).min(DIRECTION_GRID - 1);
    let f = x - i as f64;
    values[i] * (1.0 - f) + values[i + 1] * f
}

/// Von Mises kernel density of the record's directions.
pub fn fit_direction_density(record: &DirectionalWindRecord, concentration: Option<f64>) -> Result<DirectionDensity> {
    let angles = record.directions();
    if angles.len() < MIN_EVENTS {
        return Err(Error::Fit(format!("need at least {MIN_EVENTS} events, got {}", angles.len())));
    }
    let concentration = match concentration {
        Some(k) if k > 0.0 => k,
        Some(k) => return Err(Error::Config(format!("kernel concentration must be positive, got {k}"))),
        None => plugin_concentration(&angles),
    };
    let mut d = DirectionDensity {
        concentration,
        angles,
        grid_pdf: Vec::new(),
        grid_cdf: Vec::new(),
    };
    d.grid_pdf = (0..=DIRECTION_GRID).map(|i| d.pdf(grid_angle(i))).collect();
    d.grid_cdf = trapezoid_cumulative(&d.grid_pdf, TAU / DIRECTION_GRID as f64);
    Ok(d)
}

/// Copula density on a cell-centred grid over the unit square. Rows index
/// the direction pseudo-observation, columns the speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopulaDensity {
    pub n: usize,
    pub values: Vec<f64>,
}

impl CopulaDensity {
    pub fn independence(n: usize) -> Self {
        Self {
            n,
            values: vec![1.0; n * n],
        }
    }

    /// Builds a grid density from a function and renormalizes its marginals.
    pub fn from_fn(n: usize, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                values.push(f((i as f64 + 0.5) / n as f64, (j as f64 + 0.5) / n as f64).max(0.0));
            }
        }
        let mut c = Self { n, values };
        c.sinkhorn(1e-12, 500);
        c
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// Bilinear interpolation between cell centres, clamped at the edges.
    pub fn density(&self, u_alpha: f64, u_speed: f64) -> f64 {
        let n = self.n;
        let coord = |u: f64| {
            let x = (u.clamp(0.0, 1.0) * n as f64 - 0.5).clamp(0.0, (n - 1) as f64);
            let i = (x.floor() as usize).min(n.saturating_sub(2));
            (i, x - i as f64)
        };
        if n == 1 {
            return self.values[0];
        }
        let (i, fi) = coord(u_alpha);
        let (j, fj) = coord(u_speed);
        let a = self.at(i, j) * (1.0 - fj) + self.at(i, j + 1) * fj;
        let b = self.at(i + 1, j) * (1.0 - fj) + self.at(i + 1, j + 1) * fj;
        a * (1.0 - fi) + b * fi
    }

    /// Mean of each row and column (the grid marginal integrals).
    pub fn marginals(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        let rows = (0..n).map(|i| (0..n).map(|j| self.at(i, j)).sum::<f64>() / n as f64).collect();
        let cols = (0..n).map(|j| (0..n).map(|i| self.at(i, j)).sum::<f64>() / n as f64).collect();
        (rows, cols)
    }

    fn sinkhorn(&mut self, tol: f64, max_iter: usize) {
        let n = self.n;
        for _ in 0..max_iter {
            for i in 0..n {
                let m = (0..n).map(|j| self.at(i, j)).sum::<f64>() / n as f64;
                if m > 0.0 {
                    (0..n).for_each(|j| self.values[i * n + j] /= m);
                }
            }
            let mut worst = 0.0f64;
            for j in 0..n {
                let m = (0..n).map(|i| self.at(i, j)).sum::<f64>() / n as f64;
                if m > 0.0 {
                    (0..n).for_each(|i| self.values[i * n + j] /= m);
                }
                worst = worst.max((m - 1.0).abs());
            }
            if worst < tol {
                break;
            }
        }
    }
}

/// Gaussian-kernel copula density in normal-score space.
pub fn fit_copula(record: &DirectionalWindRecord, grid: usize, bandwidth: Option<f64>) -> Result<CopulaDensity> {
    let n = record.events.len();
    if n < MIN_EVENTS {
        return Err(Error::Fit(format!("need at least {MIN_EVENTS} events, got {n}")));
    }
    if grid < 2 {
        return Err(Error::Config("copula grid needs at least 2 cells".into()));
    }
    let std = Normal::standard();
    let scores = |x: Vec<f64>| -> Vec<f64> {
        let ranks = average_ranks(&x);
        ranks.iter().map(|r| std.inverse_cdf(r / (n as f64 + 1.0))).collect()
    };
    let za = scores(record.directions());
    let zv = scores(record.speeds());
    let h = bandwidth.unwrap_or_else(|| (n as f64).powf(-1.0 / 6.0));
    if !(h > 0.0) {
        return Err(Error::Config(format!("copula bandwidth must be positive, got {h}")));
    }
    let zg: Vec<f64> = (0..grid)
        .map(|i| std.inverse_cdf((i as f64 + 0.5) / grid as f64))
        .collect();
    let phi = |x: f64| (-0.5 * x * x).exp() / (TAU).sqrt();
    // kernel weights, grid x events
    let kern = |z: &[f64]| -> Vec<f64> {
        let mut k = vec![0.0; grid * n];
        for (i, &g) in zg.iter().enumerate() {
            for (e, &ze) in z.iter().enumerate() {
                k[i * n + e] = phi((g - ze) / h) / h;
            }
        }
        k
    };
    let ka = kern(&za);
    let kv = kern(&zv);
    let mut values = vec![0.0; grid * grid];
    for i in 0..grid {
        let ra = &ka[i * n..(i + 1) * n];
        for j in 0..grid {
            let rv = &kv[j * n..(j + 1) * n];
            let f: f64 = ra.iter().zip(rv).map(|(a, b)| a * b).sum::<f64>() / n as f64;
            values[i * grid + j] = f / (phi(zg[i]) * phi(zg[j]));
        }
    }
    let mut c = CopulaDensity { n: grid, values };
    c.sinkhorn(1e-12, 1000);
    Ok(c)
}

fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[idx[k]] = r;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindClimateModel {
    /// Storms per year.
    pub nu: f64,
    pub weibull: Weibull,
    pub direction: DirectionDensity,
    pub copula: Option<CopulaDensity>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindIntensity {
    pub v_h: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct HazardFitOptions {
    pub nu: f64,
    pub concentration: Option<f64>,
    pub copula_grid: usize,
    pub copula_bandwidth: Option<f64>,
}

impl Default for HazardFitOptions {
    fn default() -> Self {
        Self {
            nu: 0.305,
            concentration: None,
            copula_grid: COPULA_GRID,
            copula_bandwidth: None,
        }
    }
}

impl WindClimateModel {
    pub fn fit(record: &DirectionalWindRecord, opts: &HazardFitOptions) -> Result<Self> {
        if !(opts.nu > 0.0) {
            return Err(Error::Config(format!("storm rate must be positive, got {}", opts.nu)));
        }
        Ok(Self {
            nu: opts.nu,
            weibull: fit_speed_marginal(record)?,
            direction: fit_direction_density(record, opts.concentration)?,
            copula: Some(fit_copula(record, opts.copula_grid, opts.copula_bandwidth)?),
        })
    }

    /// `nu (1 - F(v))`.
    pub fn hazard_rate(&self, v: f64) -> f64 {
        self.nu * self.weibull.sf(v)
    }

    /// Speed whose annual exceedance rate equals `target_rate`.
    pub fn speed_for_aer(&self, target_rate: f64) -> Result<f64> {
        if !(target_rate > 0.0) || target_rate >= self.nu {
            return Err(Error::NoSolution(format!(
                "target rate {target_rate} must lie in (0, nu = {})",
                self.nu
            )));
        }
        Ok(self.weibull.isf(target_rate / self.nu))
    }

    fn copula(&self) -> Result<&CopulaDensity> {
        self.copula
            .as_ref()
            .ok_or_else(|| Error::State("copula density has not been fitted".into()))
    }

    /// Conditional density of direction given speed on the direction grid,
    /// unnormalized.
    fn conditional_grid(&self, v: f64) -> Result<Vec<f64>> {
        let c = self.copula()?;
        let uv = self.weibull.cdf(v);
        let total = self.direction.integral();
        Ok((0..=DIRECTION_GRID)
            .map(|i| {
                let ua = (self.direction.grid_cdf[i] / total).clamp(0.0, 1.0);
                self.direction.grid_pdf[i] * c.density(ua, uv)
            })
            .collect())
    }

    /// `G(alpha | v)`: probability that the direction exceeds `alpha`.
    pub fn conditional_direction_ccdf(&self, alpha: f64, v: f64) -> Result<f64> {
        let g = self.conditional_grid(v)?;
        let cum = trapezoid_cumulative(&g, TAU / DIRECTION_GRID as f64);
        let total = cum[DIRECTION_GRID];
        if !(total > 0.0) {
            return Err(Error::State("conditional direction density vanishes".into()));
        }
        let a = alpha.clamp(0.0, TAU);
        Ok(((total - interp_grid(&cum, a)) / total).clamp(0.0, 1.0))
    }

    /// Inverse-CDF draw of the direction conditional on `v`.
    pub fn sample_direction_given_speed<R: Rng + ?Sized>(&self, v: f64, rng: &mut R) -> Result<f64> {
        let g = self.conditional_grid(v)?;
        let cum = trapezoid_cumulative(&g, TAU / DIRECTION_GRID as f64);
        let total = cum[DIRECTION_GRID];
        let u: f64 = rng.random::<f64>() * total;
        let k = cum.partition_point(|&c| c < u).clamp(1, DIRECTION_GRID);
        let (c0, c1) = (cum[k - 1], cum[k]);
        let f = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        Ok(wrap_angle(grid_angle(k - 1) + f * TAU / DIRECTION_GRID as f64))
    }

    /// Speed drawn from the Weibull marginal truncated to `[lo, hi)`.
    pub fn sample_speed_in<R: Rng + ?Sized>(&self, lo: f64, hi: f64, rng: &mut R) -> f64 {
        let (slo, shi) = (self.weibull.sf(lo), if hi.is_finite() { self.weibull.sf(hi) } else { 0.0 });
        let u: f64 = rng.random();
        let s = slo - u * (slo - shi);
        self.weibull.isf(s.max(f64::MIN_POSITIVE)).clamp(lo, if hi.is_finite() { hi } else { f64::MAX })
    }
}

/// Synthetic hurricane-like record: Weibull speeds with a direction
/// distribution that tightens around `prevailing` as the speed grows.
pub fn synthetic_record<R: Rng + ?Sized>(
    n: usize,
    weibull: Weibull,
    prevailing: f64,
    rng: &mut R,
) -> DirectionalWindRecord {
    let mut events = Vec::with_capacity(n);
    for _ in 0..n {
        let v = weibull.sample(rng);
        let u = weibull.cdf(v);
        let kappa = 0.3 + 4.0 * u * u;
        let a = sample_von_mises(prevailing, kappa, rng);
        events.push(WindEvent {
            speed: v,
            direction: wrap_angle(a),
        });
    }
    DirectionalWindRecord { events }
}

/// Best-Fisher rejection sampler for the von Mises distribution.
pub fn sample_von_mises<R: Rng + ?Sized>(mu: f64, kappa: f64, rng: &mut R) -> f64 {
    if kappa < 1e-8 {
        return rng.random::<f64>() * TAU;
    }
    let tau = 1.0 + (1.0 + 4.0 * kappa * kappa).sqrt();
    let rho = (tau - (2.0 * tau).sqrt()) / (2.0 * kappa);
    let r = (1.0 + rho * rho) / (2.0 * rho);
    loop {
        let u1: f64 = rng.random();
        let z = (PI * u1).cos();
        let f = (1.0 + r * z) / (r + z);
        let c = kappa * (r - f);
        let u2: f64 = rng.random();
        if c * (2.0 - c) - u2 > 0.0 || (c / u2).ln() + 1.0 - c >= 0.0 {
            let u3: f64 = rng.random();
            let theta = if u3 > 0.5 { f.acos() } else { -f.acos() };
            return mu + theta;
        }
    }
}
