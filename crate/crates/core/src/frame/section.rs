//! Wide-flange fiber sections.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::material::{FiberState, MaterialParams};

/// Fibers across each flange width and along the web depth.
pub const FIBERS_ALONG: usize = 6;
/// Fibers through each plate thickness.
pub const FIBERS_THROUGH: usize = 2;

/// Wide-flange dimensions in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WideFlange {
    /// Overall depth.
    pub d: f64,
    /// Flange width.
    pub bf: f64,
    /// Flange thickness.
    pub tf: f64,
    /// Web thickness.
    pub tw: f64,
}

impl WideFlange {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.d, self.bf, self.tf, self.tw].iter().all(|v| v.is_finite() && *v > 0.0)
            && 2.0 * self.tf < self.d
            && self.tw <= self.bf;
        if ok {
            Ok(())
        } else {
            Err(Error::Input(format!("non-physical wide-flange dimensions {self:?}")))
        }
    }

    pub fn area(&self) -> f64 {
        2.0 * self.bf * self.tf + (self.d - 2.0 * self.tf) * self.tw
    }

    /// Strong-axis second moment of area.
    pub fn inertia(&self) -> f64 {
        let hw = self.d - 2.0 * self.tf;
        (self.bf * self.d.powi(3) - (self.bf - self.tw) * hw.powi(3)) / 12.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fiber {
    pub area: f64,
    /// Distance from the centroid in the bending plane.
    pub y: f64,
    /// Out-of-plane coordinate; irrelevant to planar response.
    pub z: f64,
}

/// Fibers of a section. For planar bending the fibers that share a `y`
/// coordinate always see the same strain, so analysis runs on `layers`
/// (fibers merged by `y`), which is exactly equivalent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiberSection {
    pub fibers: Vec<Fiber>,
    pub layers: Vec<(f64, f64)>,
    pub depth: f64,
    pub width: f64,
    /// Area resisting shear (web).
    pub shear_area: f64,
}

impl FiberSection {
    pub fn area(&self) -> f64 {
        self.fibers.iter().map(|f| f.area).sum()
    }

    pub fn first_moment(&self) -> f64 {
        self.fibers.iter().map(|f| f.area * f.y).sum()
    }

    pub fn inertia(&self) -> f64 {
        self.fibers.iter().map(|f| f.area * f.y * f.y).sum()
    }

    /// Rectangular bar of depth `h` and width `t`, split into `n` layers.
    pub fn rectangle(h: f64, t: f64, n: usize) -> Result<Self> {
        if !(h > 0.0 && t > 0.0) || n == 0 {
            return Err(Error::Input(format!("non-physical rectangle {h} x {t}")));
        }
        let dh = h / n as f64;
        let fibers: Vec<Fiber> = (0..n)
            .map(|i| Fiber {
                area: dh * t,
                y: -h / 2.0 + dh * (i as f64 + 0.5),
                z: 0.0,
            })
            .collect();
        Ok(Self::from_fibers(fibers, h, t, h * t))
    }

    fn from_fibers(fibers: Vec<Fiber>, depth: f64, width: f64, shear_area: f64) -> Self {
        let mut layers: Vec<(f64, f64)> = Vec::new();
        for f in &fibers {
            match layers.iter_mut().find(|(y, _)| (*y - f.y).abs() <= 1e-12 * depth) {
                Some(l) => l.1 += f.area,
                None => layers.push((f.y, f.area)),
            }
        }
        layers.sort_by(|a, b| b.0.total_cmp(&a.0));
        Self {
            fibers,
            layers,
            depth,
            width,
            shear_area,
        }
    }
}

/// Discretizes a wide-flange profile: six fibers across each flange width
/// and along the clear web depth, two through every plate thickness.
pub fn discretize_section(p: &WideFlange) -> Result<FiberSection> {
    p.validate()?;
    let mut fibers = Vec::with_capacity(2 * FIBERS_ALONG * FIBERS_THROUGH + FIBERS_ALONG * FIBERS_THROUGH);
    let na = FIBERS_ALONG as f64;
    let nt = FIBERS_THROUGH as f64;
    let half = p.d / 2.0;
    for side in [1.0, -1.0] {
        for t in 0..FIBERS_THROUGH {
            let y = side * (half - p.tf * (t as f64 + 0.5) / nt);
            for w in 0..FIBERS_ALONG {
                fibers.push(Fiber {
                    area: p.bf * p.tf / (na * nt),
                    y,
                    z: -p.bf / 2.0 + p.bf * (w as f64 + 0.5) / na,
                });
            }
        }
    }
    let hw = p.d - 2.0 * p.tf;
    for k in 0..FIBERS_ALONG {
        let y = hw / 2.0 - hw * (k as f64 + 0.5) / na;
        for t in 0..FIBERS_THROUGH {
            fibers.push(Fiber {
                area: hw * p.tw / (na * nt),
                y,
                z: -p.tw / 2.0 + p.tw * (t as f64 + 0.5) / nt,
            });
        }
    }
    Ok(FiberSection::from_fibers(fibers, p.d, p.bf, p.d * p.tw))
}

/// Section resultants `(N, M)` and tangent `[[k_nn, k_nm], [k_nm, k_mm]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectionResponse {
    pub n: f64,
    pub m: f64,
    pub k: [[f64; 2]; 2],
}

/// Drives every layer with `eps = eps0 - y * kappa`.
pub fn section_trial(
    section: &FiberSection,
    material: &MaterialParams,
    states: &mut [FiberState],
    eps0: f64,
    kappa: f64,
) -> Result<SectionResponse> {
    let mut n = 0.0;
    let mut m = 0.0;
    let (mut k00, mut k01, mut k11) = (0.0, 0.0, 0.0);
    for (&(y, a), st) in section.layers.iter().zip(states.iter_mut()) {
        let (s, e) = st.set_trial(material, eps0 - y * kappa)?;
        let ea = e * a;
        n += s * a;
        m -= s * a * y;
        k00 += ea;
        k01 -= ea * y;
        k11 += ea * y * y;
    }
    Ok(SectionResponse {
        n,
        m,
        k: [[k00, k01], [k01, k11]],
    })
}

/// Initial axial and flexural rigidities.
pub fn initial_rigidities(section: &FiberSection, material: &MaterialParams) -> (f64, f64) {
    let e = material.initial_modulus();
    let ea = section.layers.iter().map(|(_, a)| e * a).sum();
    let ei = section.layers.iter().map(|(y, a)| e * a * y * y).sum();
    (ea, ei)
}
