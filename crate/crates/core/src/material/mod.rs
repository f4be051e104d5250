//! Uniaxial fiber materials.

mod fatigue;
mod steel;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub use fatigue::{batch_rainflow_damage, fatigue_cycles_to_failure, fatigue_update, FatigueParams, FatigueState};
pub use steel::{steel_step, SteelParams, SteelPoint, SteelState, DEFAULT_CR1, DEFAULT_CR2};

/// Parameters shared by every fiber of one section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MaterialParams {
    Elastic { e: f64 },
    Steel { steel: SteelParams, fatigue: Option<FatigueParams> },
}

impl MaterialParams {
    pub fn initial_modulus(&self) -> f64 {
        match self {
            MaterialParams::Elastic { e } => *e,
            MaterialParams::Steel { steel, .. } => steel.e,
        }
    }

    pub fn yield_strain(&self) -> f64 {
        match self {
            MaterialParams::Elastic { .. } => f64::INFINITY,
            MaterialParams::Steel { steel, .. } => steel.yield_strain(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            MaterialParams::Elastic { e } if *e > 0.0 => Ok(()),
            MaterialParams::Elastic { e } => {
                Err(crate::Error::InvalidSpec(format!("elastic modulus must be positive, got {e}")))
            }
            MaterialParams::Steel { steel, fatigue } => {
                steel.validate()?;
                if let Some(f) = fatigue {
                    f.validate()?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Fracture {
    #[default]
    Intact,
    /// Damage reached 1 under compressive stress; the fiber keeps following
    /// the parent curve until the stress changes sign.
    PendingCompression,
    Fractured,
}

/// Stress after fracture bookkeeping, given the parent model's stress.
pub fn fractured_stress_policy(status: Fracture, stress_before: f64) -> (f64, Fracture) {
    match status {
        Fracture::Intact => (stress_before, Fracture::Intact),
        Fracture::Fractured => (0.0, Fracture::Fractured),
        Fracture::PendingCompression if stress_before >= 0.0 => (0.0, Fracture::Fractured),
        Fracture::PendingCompression => (stress_before, Fracture::PendingCompression),
    }
}

/// State of a single fiber.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FiberState {
    Elastic { strain: f64, committed: f64 },
    Steel {
        steel: SteelState,
        fatigue: FatigueState,
        status: Fracture,
        trial_status: Fracture,
        yielded: bool,
    },
}

impl FiberState {
    pub fn new(params: &MaterialParams) -> Self {
        match params {
            MaterialParams::Elastic { .. } => FiberState::Elastic {
                strain: 0.0,
                committed: 0.0,
            },
            MaterialParams::Steel { steel, .. } => FiberState::Steel {
                steel: SteelState::new(steel),
                fatigue: FatigueState::new(),
                status: Fracture::Intact,
                trial_status: Fracture::Intact,
                yielded: false,
            },
        }
    }

    /// Sets a trial strain and returns `(stress, tangent)`.
    #[inline]
    pub fn set_trial(&mut self, params: &MaterialParams, strain: f64) -> Result<(f64, f64)> {
        match (self, params) {
            (FiberState::Elastic { strain: s, .. }, MaterialParams::Elastic { e }) => {
                if !strain.is_finite() {
                    return Err(crate::Error::Input(format!("non-finite strain {strain}")));
                }
                *s = strain;
                Ok((e * strain, *e))
            }
            (
                FiberState::Steel {
                    steel,
                    status,
                    trial_status,
                    ..
                },
                MaterialParams::Steel { steel: sp, .. },
            ) => {
                if *status == Fracture::Fractured {
                    *trial_status = Fracture::Fractured;
                    return Ok((0.0, 0.0));
                }
                let (sig, tan) = steel.set_trial(sp, strain)?;
                let (out, st) = fractured_stress_policy(*status, sig);
                *trial_status = st;
                if st == Fracture::Fractured {
                    Ok((0.0, 0.0))
                } else {
                    Ok((out, tan))
                }
            }
            _ => Err(crate::Error::State("fiber state does not match its material".into())),
        }
    }

    /// Commits the trial state and advances the fatigue count.
    pub fn commit(&mut self, params: &MaterialParams) {
        match (self, params) {
            (FiberState::Elastic { strain, committed }, _) => *committed = *strain,
            (
                FiberState::Steel {
                    steel,
                    fatigue,
                    status,
                    trial_status,
                    yielded,
                },
                MaterialParams::Steel { steel: sp, fatigue: fp },
            ) => {
                if *status == Fracture::Fractured {
                    return;
                }
                steel.commit();
                *status = *trial_status;
                let c = steel.committed;
                if !*yielded && (c.strain - c.stress / sp.e).abs() >= 0.1 * sp.yield_strain() {
                    *yielded = true;
                }
                if let (Some(fp), Fracture::Intact) = (fp, *status) {
                    let (_, failed) = fatigue_update(fatigue, fp, c.strain);
                    if failed {
                        fatigue.failed = true;
                        if c.stress < 0.0 {
                            fatigue.pending_compression = true;
                            *status = Fracture::PendingCompression;
                        } else {
                            *status = Fracture::Fractured;
                        }
                    }
                }
                *trial_status = *status;
            }
            _ => {}
        }
    }

    pub fn revert(&mut self) {
        match self {
            FiberState::Elastic { strain, committed } => *strain = *committed,
            FiberState::Steel {
                steel,
                status,
                trial_status,
                ..
            } => {
                steel.revert();
                *trial_status = *status;
            }
        }
    }

    pub fn committed_strain(&self) -> f64 {
        match self {
            FiberState::Elastic { committed, .. } => *committed,
            FiberState::Steel { steel, .. } => steel.committed.strain,
        }
    }

    /// Committed tangent modulus; zero once fractured.
    pub fn committed_tangent(&self, params: &MaterialParams) -> f64 {
        match self {
            FiberState::Elastic { .. } => params.initial_modulus(),
            FiberState::Steel {
                status: Fracture::Fractured,
                ..
            } => 0.0,
            FiberState::Steel { steel, .. } => steel.committed.tangent,
        }
    }

    pub fn committed_stress(&self, params: &MaterialParams) -> f64 {
        match self {
            FiberState::Elastic { committed, .. } => params.initial_modulus() * committed,
            FiberState::Steel {
                status: Fracture::Fractured,
                ..
            } => 0.0,
            FiberState::Steel { steel, .. } => steel.committed.stress,
        }
    }

    pub fn damage_index(&self) -> f64 {
        match self {
            FiberState::Elastic { .. } => 0.0,
            FiberState::Steel { fatigue, .. } => fatigue.damage_index(),
        }
    }

    pub fn is_fractured(&self) -> bool {
        matches!(self, FiberState::Steel { status: Fracture::Fractured, .. })
    }

    pub fn has_yielded(&self) -> bool {
        matches!(self, FiberState::Steel { yielded: true, .. })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn steel() -> MaterialParams {
        MaterialParams::Steel {
            steel: SteelParams::new(200e9, 345e6, 0.01, 20.0),
            fatigue: Some(FatigueParams::new(0.02, -0.3)),
        }
    }

    fn step(f: &mut FiberState, p: &MaterialParams, e: f64) -> (f64, f64) {
        let r = f.set_trial(p, e).unwrap();
        f.commit(p);
        r
    }

    #[test]
    fn policy_cases() {
        assert_eq!(fractured_stress_policy(Fracture::Fractured, 1e8), (0.0, Fracture::Fractured));
        assert_eq!(
            fractured_stress_policy(Fracture::PendingCompression, -1.5e8),
            (-1.5e8, Fracture::PendingCompression)
        );
        assert_eq!(fractured_stress_policy(Fracture::PendingCompression, 1.0), (0.0, Fracture::Fractured));
    }

    #[test]
    fn tensile_trigger_drops_stress_next_step() {
        let p = steel();
        let mut f = FiberState::new(&p);
        let mut last = (0.0, 0.0);
        let mut x = 0.0;
        while !f.is_fractured() {
            x += 1e-4;
            last = step(&mut f, &p, x);
            assert!(x < 0.05);
        }
        assert!(last.0 > 0.0);
        let (s, t) = step(&mut f, &p, x + 1e-4);
        assert_eq!((s, t), (0.0, 0.0));
        let (s, t) = step(&mut f, &p, -0.01);
        assert_eq!((s, t), (0.0, 0.0));
    }

    #[test]
    fn compressive_trigger_waits_for_zero_crossing() {
        let p = steel();
        let mut f = FiberState::new(&p);
        let mut x = 0.0;
        while f.damage_index() < 1.0 {
            x -= 1e-4;
            step(&mut f, &p, x);
        }
        assert!(!f.is_fractured());
        let (s, _) = step(&mut f, &p, x - 1e-4);
        assert!(s < 0.0);
        let mut y = x - 1e-4;
        let mut crossed = false;
        for _ in 0..400 {
            y += 1e-4;
            let (s, _) = step(&mut f, &p, y);
            if f.is_fractured() {
                assert_eq!(s, 0.0);
                crossed = true;
                break;
            }
            assert!(s < 0.0);
        }
        assert!(crossed);
    }

    #[test]
    fn yield_flag_tracks_plastic_strain() {
        let p = steel();
        let mut f = FiberState::new(&p);
        step(&mut f, &p, 0.5 * p.yield_strain());
        assert!(!f.has_yielded());
        step(&mut f, &p, 2.0 * p.yield_strain());
        assert!(f.has_yielded());
    }
}
