//! Coffin-Manson life with Miner accumulation over an incremental rainflow
//! count.
//!
//! Cycle amplitudes are strain ranges between consecutive reversals. Closed
//! cycles count one each; whatever is left on the reversal stack counts as
//! half cycles whenever the damage index is queried.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FatigueParams {
    /// Strain amplitude that fails the fiber in a single full cycle.
    pub eps0: f64,
    /// Coffin-Manson slope.
    pub m: f64,
    /// Ranges at or below this value cause no damage.
    #[serde(default)]
    pub cutoff: f64,
}

impl FatigueParams {
    pub fn new(eps0: f64, m: f64) -> Self {
        Self { eps0, m, cutoff: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps0 > 0.0) || !(self.m < 0.0) {
            return Err(Error::InvalidSpec(format!(
                "fatigue needs eps0 > 0 and m < 0, got eps0 = {}, m = {}",
                self.eps0, self.m
            )));
        }
        Ok(())
    }

    /// Damage of a half cycle of the given range.
    #[inline]
    fn half_damage(&self, range: f64) -> f64 {
        if range <= self.cutoff || range == 0.0 {
            0.0
        } else {
            0.5 * (range / self.eps0).powf(-1.0 / self.m)
        }
    }
}

/// `N_f = (amplitude / eps0)^(1/m)`.
pub fn fatigue_cycles_to_failure(params: &FatigueParams, amplitude: f64) -> Result<f64> {
    if !(amplitude > 0.0) {
        return Err(Error::Input(format!("fatigue amplitude must be positive, got {amplitude}")));
    }
    Ok((amplitude / params.eps0).powf(1.0 / params.m))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FatigueState {
    /// Reversal stack; the last entry is the current (still moving) point.
    stack: Vec<f64>,
    closed: f64,
    /// Half-cycle damage of every residual range except the last one.
    residual: f64,
    di: f64,
    pub failed: bool,
    pub pending_compression: bool,
}

impl FatigueState {
    pub fn new() -> Self {
        Self {
            stack: vec![0.0],
            ..Default::default()
        }
    }

    pub fn damage_index(&self) -> f64 {
        self.di
    }

    pub fn reversals(&self) -> &[f64] {
        &self.stack
    }

    fn last_half(&self, p: &FatigueParams) -> f64 {
        match self.stack.as_slice() {
            [.., a, b] => p.half_damage((b - a).abs()),
            _ => 0.0,
        }
    }

    fn push_point(&mut self, p: &FatigueParams, x: f64) {
        let n = self.stack.len();
        if n == 0 {
            self.stack.push(x);
            return;
        }
        let last = self.stack[n - 1];
        if x == last {
            return;
        }
        if n == 1 {
            self.stack.push(x);
        } else {
            let prev = self.stack[n - 2];
            if (x - last) * (last - prev) > 0.0 {
                self.stack[n - 1] = x;
            } else {
                self.residual += p.half_damage((last - prev).abs());
                self.stack.push(x);
            }
        }
        self.extract(p);
    }

    fn extract(&mut self, p: &FatigueParams) {
        loop {
            let n = self.stack.len();
            if n < 3 {
                return;
            }
            let (a, b, c) = (self.stack[n - 3], self.stack[n - 2], self.stack[n - 1]);
            let y = (b - a).abs();
            let x = (c - b).abs();
            if x < y {
                return;
            }
            let hy = p.half_damage(y);
            if n == 3 {
                self.closed += hy;
                self.residual -= hy;
                self.stack.remove(0);
            } else {
                let before = self.stack[n - 4];
                self.closed += 2.0 * hy;
                self.residual -= hy + p.half_damage((a - before).abs());
                self.stack.truncate(n - 3);
                self.stack.push(c);
            }
            if self.stack.len() <= 2 {
                self.residual = 0.0;
            }
        }
    }
}

/// Feeds one committed strain. Returns the damage index and whether the
/// fiber has reached failure.
pub fn fatigue_update(state: &mut FatigueState, params: &FatigueParams, new_strain: f64) -> (f64, bool) {
    if state.stack.is_empty() {
        state.stack.push(0.0);
    }
    state.push_point(params, new_strain);
    let di = (state.closed + state.residual.max(0.0) + state.last_half(params)).max(state.di);
    state.di = di;
    (di, di >= 1.0)
}

/// Batch three-point rainflow damage of a complete history, residual ranges
/// counted as half cycles. Used as a reference for the incremental count.
pub fn batch_rainflow_damage(params: &FatigueParams, history: &[f64]) -> f64 {
    let mut rev: Vec<f64> = Vec::new();
    for &x in std::iter::once(&0.0).chain(history) {
        match rev.len() {
            0 => rev.push(x),
            1 => {
                if x != rev[0] {
                    rev.push(x)
                }
            }
            n => {
                let (a, b) = (rev[n - 2], rev[n - 1]);
                if x == b {
                } else if (x - b) * (b - a) > 0.0 {
                    rev[n - 1] = x;
                } else {
                    rev.push(x);
                }
            }
        }
    }
    let mut damage = 0.0;
    let mut stack: Vec<f64> = Vec::new();
    for x in rev {
        stack.push(x);
        while stack.len() >= 3 {
            let n = stack.len();
            let y = (stack[n - 2] - stack[n - 3]).abs();
            let xr = (stack[n - 1] - stack[n - 2]).abs();
            if xr < y {
                break;
            }
            if n == 3 {
                damage += params.half_damage(y);
                stack.remove(0);
            } else {
                damage += 2.0 * params.half_damage(y);
                let c = stack[n - 1];
                stack.truncate(n - 3);
                stack.push(c);
            }
        }
    }
    damage + stack.windows(2).map(|w| params.half_damage((w[1] - w[0]).abs())).sum::<f64>()
}
