//! Menegotto-Pinto uniaxial steel with combined kinematic and isotropic
//! hardening.
//!
//! The curve between the last reversal `(eps_r, sig_r)` and the current
//! asymptote intersection `(eps_s0, sig_s0)` is
//!
//! ```text
//! sig* = b eps* + (1 - b) eps* / (1 + |eps*|^R)^(1/R)
//! R    = R0 (1 - cR1 xi / (cR2 + xi))
//! ```
//!
//! where `xi` is the normalized plastic excursion of the previous half cycle.
//! Isotropic hardening shifts the asymptote after each reversal by
//! `a1 (d/a2)^0.8` on the compression side and `a3 (d/a4)^0.8` on the
//! tension side, `d` being the historic strain span in yield-strain units.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Transition degradation constants of the multiplicative `R(xi)` law.
pub const DEFAULT_CR1: f64 = 0.925;
pub const DEFAULT_CR2: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteelParams {
    /// Young's modulus, Pa.
    pub e: f64,
    /// Yield strength, Pa.
    pub fy: f64,
    /// Post-yield hardening ratio.
    pub b: f64,
    pub r0: f64,
    pub cr1: f64,
    pub cr2: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
}

impl SteelParams {
    /// Parameters with default transition constants and no isotropic
    /// hardening (`a1 = a3 = 0`, `a2 = a4 = 1`).
    pub fn new(e: f64, fy: f64, b: f64, r0: f64) -> Self {
        Self {
            e,
            fy,
            b,
            r0,
            cr1: DEFAULT_CR1,
            cr2: DEFAULT_CR2,
            a1: 0.0,
            a2: 1.0,
            a3: 0.0,
            a4: 1.0,
        }
    }

    pub fn with_isotropic(mut self, a1: f64, a2: f64, a3: f64, a4: f64) -> Self {
        self.a1 = a1;
        self.a2 = a2;
        self.a3 = a3;
        self.a4 = a4;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.e > 0.0) || !(self.fy > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "steel needs E > 0 and Fy > 0, got E = {}, Fy = {}",
                self.e, self.fy
            )));
        }
        if !(0.0..1.0).contains(&self.b) {
            return Err(Error::InvalidSpec(format!("hardening ratio b = {} not in [0, 1)", self.b)));
        }
        if !(15.0..=25.0).contains(&self.r0) {
            return Err(Error::InvalidSpec(format!("R0 = {} not in [15, 25]", self.r0)));
        }
        if !(self.a2 > 0.0) || !(self.a4 > 0.0) {
            return Err(Error::InvalidSpec("a2 and a4 must be positive".into()));
        }
        Ok(())
    }

    pub fn yield_strain(&self) -> f64 {
        self.fy / self.e
    }
}

/// Loading branch flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
enum Branch {
    #[default]
    Virgin,
    Tension,
    Compression,
    /// Touched at zero increment before any loading.
    Origin,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
struct History {
    branch: Branch,
    eps_max: f64,
    eps_min: f64,
    eps_pl: f64,
    eps_s0: f64,
    sig_s0: f64,
    eps_r: f64,
    sig_r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteelPoint {
    pub strain: f64,
    pub stress: f64,
    pub tangent: f64,
    hist: History,
}

/// Committed and trial material states. A trial never touches the committed
/// state until [`SteelState::commit`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteelState {
    pub committed: SteelPoint,
    pub trial: SteelPoint,
}

impl SteelState {
    pub fn new(params: &SteelParams) -> Self {
        let p = SteelPoint {
            strain: 0.0,
            stress: 0.0,
            tangent: params.e,
            hist: History::default(),
        };
        Self {
            committed: p,
            trial: p,
        }
    }

    pub fn set_trial(&mut self, params: &SteelParams, strain: f64) -> Result<(f64, f64)> {
        if !strain.is_finite() {
            return Err(Error::Input(format!("non-finite strain {strain}")));
        }
        self.trial = evaluate(params, &self.committed, strain);
        Ok((self.trial.stress, self.trial.tangent))
    }

    pub fn commit(&mut self) {
        self.committed = self.trial;
    }

    pub fn revert(&mut self) {
        self.trial = self.committed;
    }
}

/// Functional form of one trial step: returns `(stress, tangent, state)`
/// with the trial populated and the committed part untouched.
pub fn steel_step(
    state: &SteelState,
    params: &SteelParams,
    trial_strain: f64,
) -> Result<(f64, f64, SteelState)> {
    let mut next = *state;
    let (s, t) = next.set_trial(params, trial_strain)?;
    Ok((s, t, next))
}

fn evaluate(p: &SteelParams, c: &SteelPoint, eps: f64) -> SteelPoint {
    let e0 = p.e;
    let esh = p.b * e0;
    let epsy = p.fy / e0;
    let mut h = c.hist;
    let deps = eps - c.strain;

    if matches!(h.branch, Branch::Virgin | Branch::Origin) {
        if deps.abs() < 10.0 * f64::EPSILON {
            h.branch = Branch::Origin;
            return SteelPoint {
                strain: eps,
                stress: 0.0,
                tangent: e0,
                hist: h,
            };
        }
        h.eps_max = epsy;
        h.eps_min = -epsy;
        if deps < 0.0 {
            h.branch = Branch::Compression;
            h.eps_s0 = h.eps_min;
            h.sig_s0 = -p.fy;
            h.eps_pl = h.eps_min;
        } else {
            h.branch = Branch::Tension;
            h.eps_s0 = h.eps_max;
            h.sig_s0 = p.fy;
            h.eps_pl = h.eps_max;
        }
    }

    if h.branch == Branch::Compression && deps > 0.0 {
        h.branch = Branch::Tension;
        h.eps_r = c.strain;
        h.sig_r = c.stress;
        if c.strain < h.eps_min {
            h.eps_min = c.strain;
        }
        let d1 = (h.eps_max - h.eps_min) / (2.0 * p.a4 * epsy);
        let shft = 1.0 + p.a3 * d1.powf(0.8);
        h.eps_s0 = (p.fy * shft - esh * epsy * shft - h.sig_r + e0 * h.eps_r) / (e0 - esh);
        h.sig_s0 = p.fy * shft + esh * (h.eps_s0 - epsy * shft);
        h.eps_pl = h.eps_max;
    } else if h.branch == Branch::Tension && deps < 0.0 {
        h.branch = Branch::Compression;
        h.eps_r = c.strain;
        h.sig_r = c.stress;
        if c.strain > h.eps_max {
            h.eps_max = c.strain;
        }
        let d1 = (h.eps_max - h.eps_min) / (2.0 * p.a2 * epsy);
        let shft = 1.0 + p.a1 * d1.powf(0.8);
        h.eps_s0 = (-p.fy * shft + esh * epsy * shft - h.sig_r + e0 * h.eps_r) / (e0 - esh);
        h.sig_s0 = -p.fy * shft + esh * (h.eps_s0 + epsy * shft);
        h.eps_pl = h.eps_min;
    }

    let xi = ((h.eps_pl - h.eps_s0) / epsy).abs();
    let r = p.r0 * (1.0 - (p.cr1 * xi) / (p.cr2 + xi));
    let span = h.eps_s0 - h.eps_r;
    let epsrat = (eps - h.eps_r) / span;
    let a = epsrat.abs();
    // |eps*|^R below 1e-16 leaves both pow terms at 1 in double precision.
    let (sig_star, e_star) = if a < 0.08 && r >= 15.0 {
        (epsrat, 1.0)
    } else {
        let dum1 = 1.0 + a.powf(r);
        let dum2 = dum1.powf(1.0 / r);
        (
            p.b * epsrat + (1.0 - p.b) * epsrat / dum2,
            p.b + (1.0 - p.b) / (dum1 * dum2),
        )
    };
    let ds = h.sig_s0 - h.sig_r;
    SteelPoint {
        strain: eps,
        stress: sig_star * ds + h.sig_r,
        tangent: e_star * ds / span,
        hist: h,
    }
}
