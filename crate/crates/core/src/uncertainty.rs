//! Basic random variables for gravity loads, wind-load model error and
//! structural properties, and seed-deterministic sampling of one full
//! realization of them plus the spectral phase angles.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Gamma, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Normal,
    Lognormal,
    Gamma,
    TruncatedNormal,
    UniformCircular,
}

/// Nominal quantity that a catalog mean multiplies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalingReference {
    NominalDead,
    NominalLive,
    NominalYield,
    MemberLength,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomVariableSpec {
    pub family: Family,
    pub mean: f64,
    pub cov: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaling_reference: Option<ScalingReference>,
}

impl RandomVariableSpec {
    pub fn new(family: Family, mean: f64, cov: f64) -> Self {
        Self {
            family,
            mean,
            cov,
            lower_bound: None,
            upper_bound: None,
            scaling_reference: None,
        }
    }

    pub fn bounded(mut self, lower: Option<f64>, upper: Option<f64>) -> Self {
        self.lower_bound = lower;
        self.upper_bound = upper;
        self
    }

    pub fn scaled_by(mut self, reference: ScalingReference) -> Self {
        self.scaling_reference = Some(reference);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.family == Family::UniformCircular {
            return Ok(());
        }
        if !(self.cov > 0.0) || !self.cov.is_finite() {
            return Err(Error::InvalidSpec(format!("cov must be positive, got {}", self.cov)));
        }
        if !self.mean.is_finite() {
            return Err(Error::InvalidSpec("mean must be finite".into()));
        }
        match self.family {
            Family::Lognormal | Family::Gamma if self.mean <= 0.0 => Err(Error::InvalidSpec(
                format!("{:?} requires a positive mean, got {}", self.family, self.mean),
            )),
            Family::TruncatedNormal => match (self.lower_bound, self.upper_bound) {
                (Some(lo), Some(hi)) if lo >= hi => Err(Error::InvalidSpec(format!(
                    "truncation bounds must satisfy lower < upper, got [{lo}, {hi}]"
                ))),
                _ => Ok(()),
            },
            _ => Ok(()),
        }
    }

    pub fn sampler(&self) -> Result<Sampler> {
        self.validate()?;
        let sd = self.mean.abs() * self.cov;
        Ok(match self.family {
            Family::Normal => Sampler::Normal(
                Normal::new(self.mean, sd).map_err(|e| Error::InvalidSpec(e.to_string()))?,
            ),
            Family::Lognormal => {
                let (mu, sigma) = moments_to_lognormal(self.mean, self.cov)?;
                Sampler::Lognormal(
                    LogNormal::new(mu, sigma).map_err(|e| Error::InvalidSpec(e.to_string()))?,
                )
            }
            Family::Gamma => {
                let (shape, scale) = moments_to_gamma(self.mean, self.cov)?;
                Sampler::Gamma(
                    Gamma::new(shape, scale).map_err(|e| Error::InvalidSpec(e.to_string()))?,
                )
            }
            Family::TruncatedNormal => Sampler::TruncatedNormal {
                parent: Normal::new(self.mean, sd).map_err(|e| Error::InvalidSpec(e.to_string()))?,
                lower: self.lower_bound.unwrap_or(f64::NEG_INFINITY),
                upper: self.upper_bound.unwrap_or(f64::INFINITY),
            },
            Family::UniformCircular => Sampler::UniformCircular,
        })
    }
}

/// Log-space parameters `(mu, sigma)` reproducing a lognormal mean and COV.
pub fn moments_to_lognormal(mean: f64, cov: f64) -> Result<(f64, f64)> {
    if !(mean > 0.0) || !(cov > 0.0) {
        return Err(Error::InvalidSpec(format!(
            "lognormal moments need mean > 0 and cov > 0, got ({mean}, {cov})"
        )));
    }
    let var = (cov * cov).ln_1p();
    let sigma = var.sqrt();
    Ok((mean.ln() - 0.5 * var, sigma))
}

/// Gamma `(shape, scale)` by moment matching.
pub fn moments_to_gamma(mean: f64, cov: f64) -> Result<(f64, f64)> {
    if !(mean > 0.0) || !(cov > 0.0) {
        return Err(Error::InvalidSpec(format!(
            "gamma moments need mean > 0 and cov > 0, got ({mean}, {cov})"
        )));
    }
    Ok((1.0 / (cov * cov), mean * cov * cov))
}

#[derive(Debug, Clone, Copy)]
pub enum Sampler {
    Normal(Normal<f64>),
    Lognormal(LogNormal<f64>),
    Gamma(Gamma<f64>),
    TruncatedNormal {
        parent: Normal<f64>,
        lower: f64,
        upper: f64,
    },
    UniformCircular,
}

/// Rejection attempts before a truncated normal gives up; only reachable
/// when the truncation window holds negligible parent mass.
const MAX_REJECTIONS: usize = 1_000_000;

impl Sampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Sampler::Normal(d) => d.sample(rng),
            Sampler::Lognormal(d) => d.sample(rng),
            Sampler::Gamma(d) => d.sample(rng),
            Sampler::TruncatedNormal {
                parent,
                lower,
                upper,
            } => {
                for _ in 0..MAX_REJECTIONS {
                    let x = parent.sample(rng);
                    if x >= *lower && x <= *upper {
                        return x;
                    }
                }
                // Window is effectively empty; clamp the parent mean into it.
                parent.mean().clamp(*lower, *upper)
            }
            Sampler::UniformCircular => rng.random::<f64>() * TAU,
        }
    }
}

/// Symbols every catalog must define.
pub const REQUIRED_SYMBOLS: [&str; 14] = [
    "D", "L_apt", "w1", "w2", "w3", "E", "Fy", "b", "eps0", "R0", "a1", "a3", "delta", "zeta",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyCatalog {
    pub entries: BTreeMap<String, RandomVariableSpec>,
}

impl Default for UncertaintyCatalog {
    /// Gravity, wind-model and structural basic variables with their
    /// published means, COVs and families.
    fn default() -> Self {
        use Family::*;
        use ScalingReference::*;
        let mut entries = BTreeMap::new();
        let mut put = |k: &str, s: RandomVariableSpec| {
            entries.insert(k.to_string(), s);
        };
        put("D", RandomVariableSpec::new(Normal, 1.05, 0.1).scaled_by(NominalDead));
        put("L_apt", RandomVariableSpec::new(Gamma, 0.24, 0.6).scaled_by(NominalLive));
        put("w1", RandomVariableSpec::new(TruncatedNormal, 1.0, 0.075).bounded(Some(0.0), None));
        put("w2", RandomVariableSpec::new(TruncatedNormal, 1.0, 0.05).bounded(Some(0.0), None));
        put("w3", RandomVariableSpec::new(TruncatedNormal, 1.0, 0.05).bounded(Some(0.0), None));
        put("E", RandomVariableSpec::new(Lognormal, 200e9, 0.04));
        put("Fy", RandomVariableSpec::new(Lognormal, 1.1, 0.06).scaled_by(NominalYield));
        put("b", RandomVariableSpec::new(Lognormal, 0.001, 0.01));
        put("eps0", RandomVariableSpec::new(Lognormal, 0.077, 0.161));
        put(
            "R0",
            RandomVariableSpec::new(TruncatedNormal, 20.0, 0.166).bounded(Some(15.0), Some(25.0)),
        );
        put("a1", RandomVariableSpec::new(Lognormal, 0.01, 2.0));
        put("a3", RandomVariableSpec::new(Lognormal, 0.02, 0.5));
        put("delta", RandomVariableSpec::new(Normal, 0.000556, 0.77).scaled_by(MemberLength));
        put("zeta", RandomVariableSpec::new(Lognormal, 0.015, 0.4));
        Self { entries }
    }
}

impl UncertaintyCatalog {
    /// Replaces or adds entries, e.g. from a run configuration.
    pub fn with_overrides(mut self, overrides: &BTreeMap<String, RandomVariableSpec>) -> Self {
        for (k, v) in overrides {
            self.entries.insert(k.clone(), v.clone());
        }
        self
    }

    pub fn get(&self, symbol: &str) -> Result<&RandomVariableSpec> {
        self.entries
            .get(symbol)
            .ok_or_else(|| Error::Config(format!("uncertainty catalog has no entry for `{symbol}`")))
    }

    fn sampler(&self, symbol: &str) -> Result<Sampler> {
        self.get(symbol)?
            .sampler()
            .map_err(|e| Error::InvalidSpec(format!("`{symbol}`: {e}")))
    }

    /// Validates every entry and builds the samplers once.
    pub fn compile(&self) -> Result<CompiledCatalog> {
        for s in REQUIRED_SYMBOLS {
            self.get(s)?;
        }
        Ok(CompiledCatalog {
            dead: self.sampler("D")?,
            live: self.sampler("L_apt")?,
            w: [self.sampler("w1")?, self.sampler("w2")?, self.sampler("w3")?],
            e: self.sampler("E")?,
            fy: self.sampler("Fy")?,
            b: self.sampler("b")?,
            eps0: self.sampler("eps0")?,
            r0: self.sampler("R0")?,
            a1: self.sampler("a1")?,
            a3: self.sampler("a3")?,
            camber: self.sampler("delta")?,
            zeta: self.sampler("zeta")?,
            fy_scaled: self.get("Fy")?.scaling_reference == Some(ScalingReference::NominalYield),
            camber_scaled: self.get("delta")?.scaling_reference
                == Some(ScalingReference::MemberLength),
        })
    }
}

/// Immutable, validated samplers for one catalog.
#[derive(Debug, Clone)]
pub struct CompiledCatalog {
    dead: Sampler,
    live: Sampler,
    w: [Sampler; 3],
    e: Sampler,
    fy: Sampler,
    b: Sampler,
    eps0: Sampler,
    r0: Sampler,
    a1: Sampler,
    a3: Sampler,
    camber: Sampler,
    zeta: Sampler,
    fy_scaled: bool,
    camber_scaled: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SectionInfo {
    pub name: String,
    /// Nominal yield strength, Pa.
    pub fy_nominal: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemberInfo {
    /// Index into [`Topology::sections`].
    pub section: usize,
    /// Member length, m.
    pub length: f64,
}

/// Unique sections and members of a frame, as seen by the sampler.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Topology {
    pub sections: Vec<SectionInfo>,
    pub members: Vec<MemberInfo>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GravityDraw {
    /// Multiplier on the nominal dead load.
    pub dead: f64,
    /// Multiplier on the nominal reduced live load.
    pub live: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindModelDraw {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
}

impl WindModelDraw {
    pub fn product(&self) -> f64 {
        self.w1 * self.w2 * self.w3
    }
}

/// Material draw shared by every member of one section designation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialDraw {
    pub e: f64,
    pub fy: f64,
    pub b: f64,
    pub eps0: f64,
    pub r0: f64,
    pub a1: f64,
    pub a3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralDraw {
    pub sections: Vec<MaterialDraw>,
    /// Signed midspan camber per member, m.
    pub camber: Vec<f64>,
    pub damping_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyRealization {
    pub gravity: GravityDraw,
    pub wind_model: WindModelDraw,
    pub structural: StructuralDraw,
    /// Phase angles in `[0, 2pi)`, mode-major: index `l * n_omega + j`.
    pub phases: Vec<f64>,
}

impl UncertaintyRealization {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Draws one realization. Draw order is fixed (gravity, wind model, section
/// materials, member cambers, damping, phases) so a stream state fully
/// determines the result.
pub fn sample_realization<R: Rng + ?Sized>(
    catalog: &CompiledCatalog,
    topology: &Topology,
    n_phases: usize,
    rng: &mut R,
) -> Result<UncertaintyRealization> {
    let gravity = GravityDraw {
        dead: catalog.dead.sample(rng),
        live: catalog.live.sample(rng),
    };
    let wind_model = WindModelDraw {
        w1: catalog.w[0].sample(rng),
        w2: catalog.w[1].sample(rng),
        w3: catalog.w[2].sample(rng),
    };

    let mut sections = Vec::with_capacity(topology.sections.len());
    for s in &topology.sections {
        let fy = catalog.fy.sample(rng);
        sections.push(MaterialDraw {
            e: catalog.e.sample(rng),
            fy: if catalog.fy_scaled { fy * s.fy_nominal } else { fy },
            b: catalog.b.sample(rng),
            eps0: catalog.eps0.sample(rng),
            r0: catalog.r0.sample(rng),
            a1: catalog.a1.sample(rng),
            a3: catalog.a3.sample(rng),
        });
    }

    let mut camber = Vec::with_capacity(topology.members.len());
    for m in &topology.members {
        if m.section >= topology.sections.len() {
            return Err(Error::Config(format!(
                "member references section index {} but only {} sections exist",
                m.section,
                topology.sections.len()
            )));
        }
        let magnitude = catalog.camber.sample(rng).abs();
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let scale = if catalog.camber_scaled { m.length } else { 1.0 };
        camber.push(sign * magnitude * scale);
    }

    let damping_ratio = catalog.zeta.sample(rng);
    let phases = (0..n_phases).map(|_| rng.random::<f64>() * TAU).collect();

    Ok(UncertaintyRealization {
        gravity,
        wind_model,
        structural: StructuralDraw {
            sections,
            camber,
            damping_ratio,
        },
        phases,
    })
}
