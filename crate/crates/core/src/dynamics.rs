//! Implicit time integration of `M a + f_D + f_r(u) = f(t)` with
//! tangent-stiffness Rayleigh damping, adaptive step reduction, gravity
//! preload, response recording and collapse classification.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::FrameModel;
use crate::linalg::BandMatrix;

/// Anything the integrator can drive.
pub trait StructuralSystem: Clone {
    fn n_eq(&self) -> usize;
    fn mass(&self) -> &[f64];
    fn gravity(&self) -> &[f64];
    /// Sets the trial state; returns resisting forces and tangent.
    fn assemble(&mut self, u: &[f64]) -> Result<(Vec<f64>, BandMatrix)>;
    fn committed_tangent(&self) -> BandMatrix;
    fn commit(&mut self);
    fn revert(&mut self);
    /// Hook run after each committed step.
    fn observe(&mut self, _u: &[f64], _t: f64) {}
    fn story_drifts(&self, u: &[f64]) -> Vec<f64>;
    fn floor_displacements(&self, u: &[f64]) -> Vec<f64>;
    fn roof_displacement(&self, u: &[f64]) -> f64;
}

impl StructuralSystem for FrameModel {
    fn n_eq(&self) -> usize {
        self.n_eq
    }
    fn mass(&self) -> &[f64] {
        &self.mass
    }
    fn gravity(&self) -> &[f64] {
        &self.gravity
    }
    fn assemble(&mut self, u: &[f64]) -> Result<(Vec<f64>, BandMatrix)> {
        FrameModel::assemble(self, u)
    }
    fn committed_tangent(&self) -> BandMatrix {
        FrameModel::committed_tangent(self)
    }
    fn commit(&mut self) {
        FrameModel::commit(self)
    }
    fn revert(&mut self) {
        FrameModel::revert(self)
    }
    fn observe(&mut self, u: &[f64], t: f64) {
        self.check_component_limits(u, t)
    }
    fn story_drifts(&self, u: &[f64]) -> Vec<f64> {
        FrameModel::story_drifts(self, u)
    }
    fn floor_displacements(&self, u: &[f64]) -> Vec<f64> {
        self.floors.iter().map(|f| u[f.eq]).collect()
    }
    fn roof_displacement(&self, u: &[f64]) -> f64 {
        u[self.roof_eq()]
    }
}

/// Linear system with constant stiffness; also the reference for the
/// damping and energy properties.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub k: BandMatrix,
    pub m: Vec<f64>,
    pub g: Vec<f64>,
    /// Equations whose consecutive differences are story drifts.
    pub floors: Vec<usize>,
    pub heights: Vec<f64>,
}

impl StructuralSystem for LinearSystem {
    fn n_eq(&self) -> usize {
        self.m.len()
    }
    fn mass(&self) -> &[f64] {
        &self.m
    }
    fn gravity(&self) -> &[f64] {
        &self.g
    }
    fn assemble(&mut self, u: &[f64]) -> Result<(Vec<f64>, BandMatrix)> {
        Ok((self.k.mul_vec(u), self.k.clone()))
    }
    fn committed_tangent(&self) -> BandMatrix {
        self.k.clone()
    }
    fn commit(&mut self) {}
    fn revert(&mut self) {}
    fn story_drifts(&self, u: &[f64]) -> Vec<f64> {
        let mut prev = 0.0;
        self.floors
            .iter()
            .zip(&self.heights)
            .map(|(&eq, h)| {
                let d = (u[eq] - prev) / h;
                prev = u[eq];
                d
            })
            .collect()
    }
    fn floor_displacements(&self, u: &[f64]) -> Vec<f64> {
        self.floors.iter().map(|&e| u[e]).collect()
    }
    fn roof_displacement(&self, u: &[f64]) -> f64 {
        self.floors.last().map_or(0.0, |&e| u[e])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorConfig {
    pub gamma: f64,
    pub beta: f64,
    /// Step ladder, s, strictly decreasing.
    pub ladder: Vec<f64>,
    /// Ladder used when re-running near a failure.
    pub refinement: Vec<f64>,
    pub tolerance: f64,
    /// Absolute energy floor for convergence, J.
    pub energy_floor: f64,
    pub max_iterations: usize,
    /// Converged steps at a reduced size before returning to the default.
    pub recover_after: usize,
    pub gravity_steps: usize,
    /// Stop early once any story drift exceeds this ratio.
    pub drift_abort: Option<f64>,
    /// Interval between restart snapshots, s.
    pub snapshot_interval: f64,
    /// Length of the refined window after the snapshot on a re-run, s.
    pub refinement_window: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            beta: 0.25,
            ladder: vec![0.06, 0.003, 0.001],
            refinement: vec![0.001, 0.0005, 0.0001],
            tolerance: 1e-8,
            energy_floor: 1e-12,
            max_iterations: 20,
            recover_after: 50,
            gravity_steps: 10,
            drift_abort: Some(0.15),
            snapshot_interval: 10.0,
            refinement_window: 20.0,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        let strictly = |v: &[f64]| !v.is_empty() && v.iter().all(|&x| x > 0.0) && v.windows(2).all(|w| w[1] < w[0]);
        if !strictly(&self.ladder) || !strictly(&self.refinement) {
            return Err(Error::Config("time-step ladders must be positive and strictly decreasing".into()));
        }
        if !(self.tolerance > 0.0) || self.max_iterations == 0 {
            return Err(Error::Config("tolerance and iteration limit must be positive".into()));
        }
        if !(self.beta > 0.0 && self.gamma > 0.0) {
            return Err(Error::Config("Newmark parameters must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DampingStiffness {
    /// Tangent of the last committed state.
    #[default]
    Tangent,
    /// Tangent at the start of the dynamic analysis.
    Initial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DampingModel {
    pub c0: f64,
    pub c1: f64,
    #[serde(default)]
    pub stiffness: DampingStiffness,
}

impl DampingModel {
    pub fn new(c0: f64, c1: f64) -> Self {
        Self {
            c0,
            c1,
            stiffness: DampingStiffness::Tangent,
        }
    }
}

/// Coefficients `(c0, c1)` that give damping ratio `zeta` at both
/// circular frequencies.
pub fn rayleigh_coefficients(omega1: f64, omega2: f64, zeta: f64) -> Result<(f64, f64)> {
    if !(omega1 > 0.0 && omega2 > omega1) || !(zeta > 0.0) {
        return Err(Error::Singular(format!(
            "Rayleigh damping needs 0 < omega1 < omega2 and zeta > 0 (got {omega1}, {omega2}, {zeta})"
        )));
    }
    if (omega2 - omega1) <= 1e-9 * omega2 {
        return Err(Error::Singular("coincident frequencies".into()));
    }
    let c0 = 2.0 * zeta * omega1 * omega2 / (omega1 + omega2);
    let c1 = 2.0 * zeta / (omega1 + omega2);
    Ok((c0, c1))
}

/// Lowest circular frequencies of `(K, M)` with massless equations
/// condensed out.
pub fn natural_frequencies(k: &BandMatrix, mass: &[f64], count: usize) -> Result<Vec<f64>> {
    let n = k.dim();
    let massive: Vec<usize> = (0..n).filter(|&i| mass[i] > 0.0).collect();
    let massless: Vec<usize> = (0..n).filter(|&i| mass[i] <= 0.0).collect();
    let dense = |rows: &[usize], cols: &[usize]| DMatrix::from_fn(rows.len(), cols.len(), |i, j| k.get(rows[i], cols[j]));
    let kmm = dense(&massive, &massive);
    let kcond = if massless.is_empty() {
        kmm
    } else {
        let kss = dense(&massless, &massless);
        let ksm = dense(&massless, &massive);
        let sol = kss
            .lu()
            .solve(&ksm)
            .ok_or_else(|| Error::Singular("massless partition of the stiffness".into()))?;
        kmm - dense(&massive, &massless) * sol
    };
    let inv_sqrt: Vec<f64> = massive.iter().map(|&i| 1.0 / mass[i].sqrt()).collect();
    let a = DMatrix::from_fn(massive.len(), massive.len(), |i, j| {
        0.5 * (kcond[(i, j)] + kcond[(j, i)]) * inv_sqrt[i] * inv_sqrt[j]
    });
    let eig = SymmetricEigen::new(a);
    let mut lam: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    lam.sort_by(f64::total_cmp);
    if lam.first().is_some_and(|&l| l <= 0.0) {
        return Err(Error::Singular("non-positive stiffness eigenvalue".into()));
    }
    Ok(lam.into_iter().take(count).map(f64::sqrt).collect())
}

/// External load history on a uniform grid, linearly interpolated.
#[derive(Debug, Clone)]
pub struct NodalLoadHistory {
    pub dt: f64,
    /// Equation receiving each channel.
    pub eqs: Vec<usize>,
    /// Channel-major samples, N.
    pub values: Vec<Vec<f64>>,
    /// Start of the zero-load tail, s.
    pub tail_start: Option<f64>,
}

impl NodalLoadHistory {
    pub fn duration(&self) -> f64 {
        self.values.first().map_or(0.0, |v| (v.len().max(1) - 1) as f64 * self.dt)
    }

    pub fn add_at(&self, t: f64, f: &mut [f64]) {
        if self.values.is_empty() {
            return;
        }
        let len = self.values[0].len();
        let x = (t / self.dt).max(0.0);
        let i = (x.floor() as usize).min(len.saturating_sub(1));
        let frac = if i + 1 < len { x - i as f64 } else { 0.0 };
        for (ch, &eq) in self.values.iter().zip(&self.eqs) {
            let a = ch[i];
            let b = if i + 1 < len { ch[i + 1] } else { a };
            f[eq] += a + (b - a) * frac.clamp(0.0, 1.0);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Termination {
    Completed,
    NonConverged { time: f64 },
    DriftLimit { time: f64 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBalance {
    pub external: f64,
    pub kinetic: f64,
    pub damping: f64,
    /// Work of resisting forces: stored strain energy plus hysteresis.
    pub restoring: f64,
}

impl EnergyBalance {
    pub fn error(&self) -> f64 {
        let rhs = self.kinetic + self.damping + self.restoring;
        (self.external - rhs).abs() / self.external.abs().max(rhs.abs()).max(f64::MIN_POSITIVE)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub time: Vec<f64>,
    pub roof: Vec<f64>,
    /// Story drift ratios per recorded step.
    pub drifts: Vec<Vec<f64>>,
    pub peak_drift: f64,
    pub residual_drift: Option<f64>,
    pub tail_start: Option<f64>,
    pub termination: Option<Termination>,
    pub last_converged_time: f64,
    /// Lateral displacements of the floors at the last converged step.
    pub final_floor_displacements: Vec<f64>,
    pub energy: EnergyBalance,
    pub steps: usize,
    pub reduced_steps: usize,
}

impl ResponseRecord {
    /// Centered moving average of roof displacement over `window` seconds.
    pub fn roof_moving_average(&self, window: f64) -> Vec<f64> {
        let n = self.time.len();
        let mut prefix = vec![0.0; n + 1];
        // trapezoid cumulative integral
        for i in 1..n {
            prefix[i] = prefix[i - 1] + 0.5 * (self.roof[i] + self.roof[i - 1]) * (self.time[i] - self.time[i - 1]);
        }
        let integral_at = |t: f64| -> f64 {
            let k = self.time.partition_point(|&x| x <= t);
            if k == 0 {
                return 0.0;
            }
            let i = k - 1;
            if i + 1 >= n {
                return prefix[n - 1];
            }
            let dt = self.time[i + 1] - self.time[i];
            let s = (t - self.time[i]) / dt;
            let ut = self.roof[i] + s * (self.roof[i + 1] - self.roof[i]);
            prefix[i] + 0.5 * (self.roof[i] + ut) * (t - self.time[i])
        };
        let (t0, t1) = (self.time.first().copied().unwrap_or(0.0), self.time.last().copied().unwrap_or(0.0));
        self.time
            .iter()
            .map(|&t| {
                let a = (t - window / 2.0).max(t0);
                let b = (t + window / 2.0).min(t1);
                if b > a {
                    (integral_at(b) - integral_at(a)) / (b - a)
                } else {
                    self.roof[self.time.partition_point(|&x| x < t).min(n - 1)]
                }
            })
            .collect()
    }

    fn finalize(&mut self) {
        self.peak_drift = self.drifts.iter().flatten().fold(0.0, |m, d| m.max(d.abs()));
        self.residual_drift = self.tail_start.and_then(|t0| {
            let idx: Vec<usize> = (0..self.time.len()).filter(|&i| self.time[i] >= t0).collect();
            if idx.is_empty() || !matches!(self.termination, Some(Termination::Completed)) {
                return None;
            }
            let stories = self.drifts[idx[0]].len();
            let mut worst = 0.0f64;
            for s in 0..stories {
                let mean = idx.iter().map(|&i| self.drifts[i][s]).sum::<f64>() / idx.len() as f64;
                worst = worst.max(mean.abs());
            }
            Some(worst)
        });
    }
}

/// Restart point for re-running part of an analysis.
#[derive(Debug, Clone)]
pub struct Snapshot<S> {
    pub system: S,
    pub t: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub a: Vec<f64>,
    record_len: usize,
    energy: EnergyBalance,
    fr: Vec<f64>,
    fd: Vec<f64>,
    fext: Vec<f64>,
    k_initial: Option<BandMatrix>,
}

/// Result of an analysis: the record and a restart snapshot preceding the
/// end of the run.
pub struct Analysis<S> {
    pub record: ResponseRecord,
    pub snapshot: Option<Snapshot<S>>,
    /// State at the last converged step.
    pub system: S,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Static, load-controlled gravity preload. Leaves the system committed.
pub fn apply_gravity<S: StructuralSystem>(sys: &mut S, cfg: &IntegratorConfig) -> Result<Vec<f64>> {
    let n = sys.n_eq();
    let g = sys.gravity().to_vec();
    let mut u = vec![0.0; n];
    if g.iter().all(|&x| x == 0.0) {
        return Ok(u);
    }
    let steps = cfg.gravity_steps.max(1);
    for s in 1..=steps {
        let lambda = s as f64 / steps as f64;
        let mut e0 = None;
        let mut ok = false;
        for _ in 0..cfg.max_iterations.max(30) {
            let (fr, k) = sys.assemble(&u)?;
            let r: Vec<f64> = (0..n).map(|i| lambda * g[i] - fr[i]).collect();
            let du = k.factor()?.solve(&r);
            let e = dot(&du, &r).abs();
            let e_ref = *e0.get_or_insert(e);
            if e <= cfg.tolerance * e_ref || e <= cfg.energy_floor {
                ok = true;
                break;
            }
            u.iter_mut().zip(&du).for_each(|(x, d)| *x += d);
        }
        if !ok {
            sys.revert();
            return Err(Error::Model(format!("gravity preload did not converge at load factor {lambda}")));
        }
        sys.commit();
    }
    Ok(u)
}

/// Runs the dynamic analysis from the gravity-loaded, committed state `u0`.
pub fn nltha<S: StructuralSystem>(
    sys: &mut S,
    u0: &[f64],
    loads: &NodalLoadHistory,
    damping: &DampingModel,
    cfg: &IntegratorConfig,
) -> Result<Analysis<S>> {
    cfg.validate()?;
    let n = sys.n_eq();
    let (fr0, _) = sys.assemble(u0)?;
    sys.commit();
    let mut fext0 = sys.gravity().to_vec();
    loads.add_at(0.0, &mut fext0);
    let start = Snapshot {
        system: sys.clone(),
        t: 0.0,
        u: u0.to_vec(),
        v: vec![0.0; n],
        a: vec![0.0; n],
        record_len: 0,
        energy: EnergyBalance::default(),
        fr: fr0,
        fd: vec![0.0; n],
        fext: fext0,
        k_initial: None,
    };
    let mut record = ResponseRecord {
        tail_start: loads.tail_start,
        ..Default::default()
    };
    run_from(sys, start, &mut record, loads, damping, cfg, &cfg.ladder, None)
}

/// Re-runs from a snapshot using the refinement ladder for
/// `cfg.refinement_window` seconds, then the default ladder.
pub fn rerun_refined<S: StructuralSystem>(
    snapshot: Snapshot<S>,
    record: &ResponseRecord,
    loads: &NodalLoadHistory,
    damping: &DampingModel,
    cfg: &IntegratorConfig,
) -> Result<Analysis<S>> {
    let mut rec = record.clone();
    rec.time.truncate(snapshot.record_len);
    rec.roof.truncate(snapshot.record_len);
    rec.drifts.truncate(snapshot.record_len);
    rec.termination = None;
    let mut sys = snapshot.system.clone();
    let until = snapshot.t + cfg.refinement_window;
    run_from(&mut sys, snapshot, &mut rec, loads, damping, cfg, &cfg.refinement, Some(until))
}

#[allow(clippy::too_many_arguments)]
fn run_from<S: StructuralSystem>(
    sys: &mut S,
    start: Snapshot<S>,
    record: &mut ResponseRecord,
    loads: &NodalLoadHistory,
    damping: &DampingModel,
    cfg: &IntegratorConfig,
    ladder: &[f64],
    refine_until: Option<f64>,
) -> Result<Analysis<S>> {
    let n = sys.n_eq();
    let mass = sys.mass().to_vec();
    let grav = sys.gravity().to_vec();
    let t_end = loads.duration();
    let (gamma, beta) = (cfg.gamma, cfg.beta);

    let k_initial = match (damping.stiffness, start.k_initial.clone()) {
        (DampingStiffness::Initial, Some(k)) => Some(k),
        (DampingStiffness::Initial, None) => Some(sys.committed_tangent()),
        _ => None,
    };
    let mut t = start.t;
    let mut u = start.u.clone();
    let mut v = start.v.clone();
    let mut a = start.a.clone();
    let mut fr = start.fr.clone();
    let mut fd = start.fd.clone();
    let mut fext = start.fext.clone();
    let mut energy = start.energy;
    let mut snapshot = Some(start);
    let mut next_snapshot = t + cfg.snapshot_interval;

    if record.time.is_empty() {
        record.time.push(t);
        record.roof.push(sys.roof_displacement(&u));
        record.drifts.push(sys.story_drifts(&u));
    }

    let mut level = 0usize;
    let mut streak = 0usize;
    let mut termination = Termination::Completed;
    let mut ladder = ladder;

    while t < t_end - 1e-9 {
        if let Some(until) = refine_until {
            if t >= until && !std::ptr::eq(ladder, cfg.ladder.as_slice()) {
                ladder = &cfg.ladder;
                level = 0;
            }
        }
        let dt = ladder[level].min(t_end - t);
        let t1 = t + dt;
        let kc = match &k_initial {
            Some(k) => k.clone(),
            None => sys.committed_tangent(),
        };
        let mut f1 = grav.clone();
        loads.add_at(t1, &mut f1);
        match newmark_step(sys, &kc, &mass, damping, cfg, &f1, &u, &v, &a, dt, gamma, beta) {
            Ok((u1, v1, a1, fr1, fd1)) => {
                let du: Vec<f64> = (0..n).map(|i| u1[i] - u[i]).collect();
                let half = |x: &[f64], y: &[f64]| 0.5 * (0..n).map(|i| (x[i] + y[i]) * du[i]).sum::<f64>();
                energy.external += half(&fext, &f1);
                energy.damping += half(&fd, &fd1);
                energy.restoring += half(&fr, &fr1);
                energy.kinetic = 0.5 * (0..n).map(|i| mass[i] * v1[i] * v1[i]).sum::<f64>();
                sys.commit();
                t = t1;
                u = u1;
                v = v1;
                a = a1;
                fr = fr1;
                fd = fd1;
                fext = f1;
                sys.observe(&u, t);
                record.time.push(t);
                record.roof.push(sys.roof_displacement(&u));
                let drifts = sys.story_drifts(&u);
                let worst = drifts.iter().fold(0.0f64, |m, d| m.max(d.abs()));
                record.drifts.push(drifts);
                record.steps += 1;
                if level > 0 {
                    record.reduced_steps += 1;
                    streak += 1;
                    if streak >= cfg.recover_after {
                        level = 0;
                        streak = 0;
                    }
                }
                if let Some(limit) = cfg.drift_abort {
                    if worst > limit {
                        termination = Termination::DriftLimit { time: t };
                        break;
                    }
                }
                if t >= next_snapshot {
                    next_snapshot = t + cfg.snapshot_interval;
                    snapshot = Some(Snapshot {
                        system: sys.clone(),
                        t,
                        u: u.clone(),
                        v: v.clone(),
                        a: a.clone(),
                        record_len: record.time.len(),
                        energy,
                        fr: fr.clone(),
                        fd: fd.clone(),
                        fext: fext.clone(),
                        k_initial: k_initial.clone(),
                    });
                }
            }
            Err(e) => {
                sys.revert();
                if !matches!(e, Error::ElementFailure { .. } | Error::Singular(_) | Error::NoSolution(_) | Error::Input(_)) {
                    return Err(e);
                }
                if level + 1 < ladder.len() {
                    level += 1;
                    streak = 0;
                } else {
                    termination = Termination::NonConverged { time: t };
                    break;
                }
            }
        }
    }

    record.termination = Some(termination);
    record.last_converged_time = t;
    record.energy = energy;
    record.final_floor_displacements = sys.floor_displacements(&u);
    record.finalize();
    Ok(Analysis {
        record: record.clone(),
        snapshot,
        system: sys.clone(),
    })
}

#[allow(clippy::too_many_arguments)]
fn newmark_step<S: StructuralSystem>(
    sys: &mut S,
    kc: &BandMatrix,
    mass: &[f64],
    damping: &DampingModel,
    cfg: &IntegratorConfig,
    f1: &[f64],
    u: &[f64],
    v: &[f64],
    a: &[f64],
    dt: f64,
    gamma: f64,
    beta: f64,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    let n = u.len();
    let a0 = 1.0 / (beta * dt * dt);
    let a1 = gamma / (beta * dt);
    let a2 = 1.0 / (beta * dt);
    let a3 = 1.0 / (2.0 * beta) - 1.0;
    let mut u1 = u.to_vec();
    let mut e0: Option<f64> = None;
    for _ in 0..cfg.max_iterations {
        let acc: Vec<f64> = (0..n).map(|i| a0 * (u1[i] - u[i]) - a2 * v[i] - a3 * a[i]).collect();
        let vel: Vec<f64> = (0..n).map(|i| v[i] + dt * ((1.0 - gamma) * a[i] + gamma * acc[i])).collect();
        let (fr, mut k) = sys.assemble(&u1)?;
        let kv = kc.mul_vec(&vel);
        let fd: Vec<f64> = (0..n).map(|i| damping.c0 * mass[i] * vel[i] + damping.c1 * kv[i]).collect();
        let r: Vec<f64> = (0..n).map(|i| f1[i] - mass[i] * acc[i] - fd[i] - fr[i]).collect();
        if r.iter().any(|x| !x.is_finite()) {
            return Err(Error::NoSolution("non-finite residual".into()));
        }
        // effective stiffness
        let (kl, ku) = k.bandwidths();
        for i in 0..n {
            k.add(i, i, (a0 + a1 * damping.c0) * mass[i]);
            if damping.c1 != 0.0 {
                for j in i.saturating_sub(kl)..(i + ku + 1).min(n) {
                    let c = kc.get(i, j);
                    if c != 0.0 {
                        k.add(i, j, a1 * damping.c1 * c);
                    }
                }
            }
        }
        let du = k.factor()?.solve(&r);
        let e = dot(&du, &r).abs();
        let e_ref = *e0.get_or_insert(e);
        if e <= cfg.tolerance * e_ref || e <= cfg.energy_floor {
            return Ok((u1, vel, acc, fr, fd));
        }
        u1.iter_mut().zip(&du).for_each(|(x, d)| *x += d);
    }
    Err(Error::NoSolution(format!("Newton did not converge in {} iterations", cfg.max_iterations)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mechanism {
    /// Upper block of stories overturning above a damaged band.
    FlexuralBlock,
    /// Drift concentrated in a single story.
    StoryShear,
}

impl Mechanism {
    pub fn label(&self) -> &'static str {
        match self {
            Mechanism::FlexuralBlock => "type-1",
            Mechanism::StoryShear => "type-2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollapseCriteria {
    /// Story drift at the last converged step that confirms collapse.
    pub drift: f64,
    /// Share of roof displacement in one story that marks a story mechanism.
    pub story_share: f64,
    /// Trailing window for the monotone-drift test, s.
    pub trend_window: f64,
    /// Minimum drift growth over the trailing window.
    pub trend_growth: f64,
}

impl Default for CollapseCriteria {
    fn default() -> Self {
        Self {
            drift: 0.10,
            story_share: 0.60,
            trend_window: 5.0,
            trend_growth: 0.005,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CollapseVerdict {
    pub collapsed: bool,
    pub mechanism: Option<Mechanism>,
    pub failure_height: Option<f64>,
    pub last_converged_time: f64,
    /// False when collapse is declared from non-convergence alone.
    pub shape_confirmed: bool,
}

pub const FAILURE_HEIGHTS: [f64; 6] = [0.0, 1.0 / 6.0, 1.0 / 3.0, 2.0 / 5.0, 1.0 / 2.0, 2.0 / 3.0];

/// Geometry and damage needed to classify a collapse.
#[derive(Debug, Clone)]
pub struct ShapeInfo {
    pub story_heights: Vec<f64>,
    /// Flagged members per story.
    pub damage_by_story: Vec<usize>,
}

impl ShapeInfo {
    pub fn from_frame(model: &FrameModel) -> Self {
        Self {
            story_heights: model.story_heights(),
            damage_by_story: model.damage_by_story(),
        }
    }
}

fn shape_criterion(record: &ResponseRecord, c: &CollapseCriteria) -> bool {
    let Some(last) = record.drifts.last() else { return false };
    let worst = last.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    if worst >= c.drift {
        return true;
    }
    let t_end = record.last_converged_time;
    let idx: Vec<usize> = (0..record.time.len())
        .filter(|&i| record.time[i] >= t_end - c.trend_window)
        .collect();
    if idx.len() < 3 || record.time[idx[0]] > t_end - 0.9 * c.trend_window {
        return false;
    }
    let series: Vec<f64> = idx
        .iter()
        .map(|&i| record.drifts[i].iter().fold(0.0f64, |m, d| m.max(d.abs())))
        .collect();
    series.windows(2).all(|w| w[1] >= w[0]) && series[series.len() - 1] - series[0] >= c.trend_growth
}

/// Classifies the mechanism and failure height from the last converged
/// floor displacements and the per-story damage.
pub fn classify_mechanism(floor_disp: &[f64], shape: &ShapeInfo, c: &CollapseCriteria) -> (Mechanism, f64) {
    let roof = floor_disp.last().copied().unwrap_or(0.0);
    let mut prev = 0.0;
    let mut share_max = 0.0f64;
    let mut story_max = 0usize;
    for (k, &x) in floor_disp.iter().enumerate() {
        let s = if roof != 0.0 { (x - prev) / roof } else { 0.0 };
        if s > share_max {
            share_max = s;
            story_max = k;
        }
        prev = x;
    }
    let mechanism = if share_max > c.story_share {
        Mechanism::StoryShear
    } else {
        Mechanism::FlexuralBlock
    };
    let damaged = shape
        .damage_by_story
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .filter(|(_, &n)| n > 0)
        .map(|(k, _)| k)
        .unwrap_or(story_max);
    let story = if mechanism == Mechanism::StoryShear { story_max } else { damaged };
    let total: f64 = shape.story_heights.iter().sum();
    let bottom: f64 = shape.story_heights.iter().take(story).sum();
    let frac = if total > 0.0 { bottom / total } else { 0.0 };
    let snapped = FAILURE_HEIGHTS
        .iter()
        .copied()
        .min_by(|a, b| (a - frac).abs().total_cmp(&(b - frac).abs()))
        .unwrap_or(0.0);
    (mechanism, snapped)
}

/// Collapse verdict. `retry` re-runs the analysis with the refinement
/// ladder near the failure and returns the new record and shape, if any.
pub fn detect_collapse(
    record: &ResponseRecord,
    shape: &ShapeInfo,
    criteria: &CollapseCriteria,
    mut retry: impl FnMut() -> Option<(ResponseRecord, ShapeInfo)>,
) -> CollapseVerdict {
    let failed = |r: &ResponseRecord| {
        matches!(
            r.termination,
            Some(Termination::NonConverged { .. }) | Some(Termination::DriftLimit { .. })
        )
    };
    if !failed(record) {
        return CollapseVerdict {
            last_converged_time: record.last_converged_time,
            ..Default::default()
        };
    }
    let verdict = |r: &ResponseRecord, s: &ShapeInfo, confirmed: bool| {
        let (m, h) = classify_mechanism(&r.final_floor_displacements, s, criteria);
        CollapseVerdict {
            collapsed: true,
            mechanism: Some(m),
            failure_height: Some(h),
            last_converged_time: r.last_converged_time,
            shape_confirmed: confirmed,
        }
    };
    if shape_criterion(record, criteria) {
        return verdict(record, shape, true);
    }
    match retry() {
        Some((r2, _)) if !failed(&r2) => CollapseVerdict {
            last_converged_time: r2.last_converged_time,
            ..Default::default()
        },
        Some((r2, s2)) => {
            let confirmed = shape_criterion(&r2, criteria);
            verdict(&r2, &s2, confirmed)
        }
        None => verdict(record, shape, false),
    }
}

/// Chain of lumped masses connected in series to the ground; `k[i]` is the
/// stiffness of story `i`.
pub fn shear_building(m: &[f64], k: &[f64], heights: &[f64]) -> LinearSystem {
    let n = m.len();
    let mut band = BandMatrix::zeros(n, 1, 1);
    for i in 0..n {
        band.add(i, i, k[i]);
        if i + 1 < n {
            band.add(i, i, k[i + 1]);
            band.add(i, i + 1, -k[i + 1]);
            band.add(i + 1, i, -k[i + 1]);
        }
    }
    LinearSystem {
        k: band,
        m: m.to_vec(),
        g: vec![0.0; n],
        floors: (0..n).collect(),
        heights: heights.to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rayleigh_reference_values() {
        let w1 = 2.0 * std::f64::consts::PI * 0.2208;
        let w2 = 2.0 * std::f64::consts::PI * 0.7426;
        let (c0, c1) = rayleigh_coefficients(w1, w2, 0.015).unwrap();
        assert!((c0 - 0.03208).abs() < 5e-5, "{c0}");
        assert!((c1 - 0.004956).abs() < 5e-6, "{c1}");
        for w in [w1, w2] {
            let z = c0 / (2.0 * w) + c1 * w / 2.0;
            assert!((z - 0.015).abs() < 1e-12);
        }
    }

    #[test]
    fn rayleigh_rejects_coincident() {
        assert!(rayleigh_coefficients(1.0, 1.0 * (1.0 + 1e-12), 0.02).is_err());
        assert!(rayleigh_coefficients(2.0, 1.0, 0.02).is_err());
    }

    #[test]
    fn frequencies_of_two_story_shear_building() {
        let sys = shear_building(&[1.0, 1.0], &[2.0, 1.0], &[1.0, 1.0]);
        let w = natural_frequencies(&sys.k, &sys.m, 2).unwrap();
        // det([[3-l, -1], [-1, 1-l]]) = 0
        let l1 = 2.0 - 2.0f64.sqrt();
        let l2 = 2.0 + 2.0f64.sqrt();
        assert!((w[0] - l1.sqrt()).abs() < 1e-12);
        assert!((w[1] - l2.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn classifier_story_mechanism() {
        let disp = [0.01, 0.02, 0.03, 0.24, 0.25, 0.26, 0.27, 0.28];
        let shape = ShapeInfo {
            story_heights: vec![4.0; 8],
            damage_by_story: vec![0, 0, 0, 3, 0, 0, 0, 0],
        };
        let (m, _) = classify_mechanism(&disp, &shape, &CollapseCriteria::default());
        assert_eq!(m, Mechanism::StoryShear);
    }

    #[test]
    fn moving_average_of_constant() {
        let rec = ResponseRecord {
            time: (0..100).map(|i| i as f64).collect(),
            roof: vec![2.0; 100],
            ..Default::default()
        };
        assert!(rec.roof_moving_average(24.0).iter().all(|x| (x - 2.0).abs() < 1e-12));
    }
}
