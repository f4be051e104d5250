//! Stratified Monte Carlo over wind-speed intervals: partition, allocation,
//! rate estimation with variance, reliability indices and lognormal
//! fragility fits.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::hazard::Weibull;

/// Default per-stratum sample floor.
pub const DEFAULT_MIN_PER_STRATUM: usize = 5;
pub const SECTOR_WIDTH_DEG: f64 = 45.0;

/// Interval bounds `[0, v_1, ..., v_{n-1}, inf]` with equal squared-speed
/// spacing up to `v_top_lower`.
pub fn partition_wsi(v_top_lower: f64, n_w: usize) -> Result<Vec<f64>> {
    if !(v_top_lower > 0.0) || !v_top_lower.is_finite() {
        return Err(Error::Input(format!("top stratum lower bound must be positive, got {v_top_lower}")));
    }
    if n_w < 2 {
        return Err(Error::Input(format!("need at least two strata, got {n_w}")));
    }
    let step = v_top_lower * v_top_lower / (n_w - 1) as f64;
    let mut b = Vec::with_capacity(n_w + 1);
    b.push(0.0);
    for i in 1..n_w - 1 {
        b.push((i as f64 * step).sqrt());
    }
    b.push(v_top_lower);
    b.push(f64::INFINITY);
    Ok(b)
}

/// `P(E_i) = F(v_U) - F(v_L)` under the speed marginal.
pub fn strata_probabilities(weibull: &Weibull, bounds: &[f64]) -> Vec<f64> {
    bounds
        .windows(2)
        .map(|w| {
            let hi = if w[1].is_finite() { weibull.cdf(w[1]) } else { 1.0 };
            hi - weibull.cdf(w[0])
        })
        .collect()
}

/// Index of the stratum containing `v`.
pub fn stratum_of(v: f64, bounds: &[f64]) -> usize {
    let n = bounds.len() - 1;
    bounds[1..n].partition_point(|&b| b <= v)
}

/// Stratum centres for fragility fitting; the unbounded stratum is placed
/// half a penultimate width above its lower bound.
pub fn stratum_centers(bounds: &[f64]) -> Vec<f64> {
    let n = bounds.len() - 1;
    (0..n)
        .map(|i| {
            if bounds[i + 1].is_finite() {
                0.5 * (bounds[i] + bounds[i + 1])
            } else if i >= 1 {
                bounds[i] + 0.5 * (bounds[i] - bounds[i - 1])
            } else {
                f64::INFINITY
            }
        })
        .collect()
}

/// `sum_i P_i^2 p_i (1 - p_i) / n_i`.
pub fn stratified_variance(probs: &[f64], pilot: &[f64], alloc: &[usize]) -> f64 {
    probs
        .iter()
        .zip(pilot)
        .zip(alloc)
        .map(|((p, q), n)| if *n == 0 { f64::INFINITY } else { p * p * q * (1.0 - q) / *n as f64 })
        .sum()
}

fn largest_remainder(x: &[f64], total: usize, mins: &[usize]) -> Vec<usize> {
    let mut n: Vec<usize> = x.iter().zip(mins).map(|(v, m)| (v.floor() as usize).max(*m)).collect();
    let mut assigned: usize = n.iter().sum();
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| (x[b] - x[b].floor()).total_cmp(&(x[a] - x[a].floor())).then(a.cmp(&b)));
    let mut k = 0;
    while assigned < total {
        n[order[k % order.len()]] += 1;
        assigned += 1;
        k += 1;
    }
    n
}

/// Variance-minimizing allocation of `total` samples with a per-stratum
/// floor: the constrained continuous optimum `n_i ~ P_i sqrt(p_i (1 - p_i))`,
/// largest-remainder rounding, then greedy single-sample moves while they
/// reduce the variance.
pub fn allocate_samples(total: usize, pilot: &[f64], probs: &[f64], floor: usize) -> Result<Vec<usize>> {
    allocate_with_minimums(total, pilot, probs, &vec![floor; probs.len()])
}

/// As [`allocate_samples`] with a separate lower bound per stratum, e.g.
/// the pilot samples already spent there.
pub fn allocate_with_minimums(total: usize, pilot: &[f64], probs: &[f64], mins: &[usize]) -> Result<Vec<usize>> {
    let m = probs.len();
    if pilot.len() != m || mins.len() != m {
        return Err(Error::Input(format!(
            "{} pilot estimates and {} minimums for {m} strata",
            pilot.len(),
            mins.len()
        )));
    }
    if pilot.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Input("pilot estimates must lie in [0, 1]".into()));
    }
    let required: usize = mins.iter().sum();
    if total < required || m == 0 {
        return Err(Error::Infeasible(format!(
            "{total} samples cannot cover {m} strata needing {required} in total"
        )));
    }
    let mut w: Vec<f64> = probs
        .iter()
        .zip(pilot)
        .map(|(p, q)| p * (q * (1.0 - q)).sqrt())
        .collect();
    if w.iter().all(|v| *v <= 0.0) {
        // no information: proportional to stratum probability
        w = probs.to_vec();
    }
    let mut floored: Vec<bool> = w.iter().map(|v| *v <= 0.0).collect();
    let x = loop {
        let fixed: usize = (0..m).filter(|&i| floored[i]).map(|i| mins[i]).sum();
        let free = total - fixed;
        let wsum: f64 = w.iter().zip(&floored).filter(|(_, f)| !**f).map(|(v, _)| v).sum();
        let x: Vec<f64> = (0..m)
            .map(|i| if floored[i] { mins[i] as f64 } else { free as f64 * w[i] / wsum })
            .collect();
        let mut changed = false;
        for i in 0..m {
            if !floored[i] && x[i] < mins[i] as f64 {
                floored[i] = true;
                changed = true;
            }
        }
        if !changed {
            break x;
        }
    };
    let mut n = largest_remainder(&x, total, mins);
    let cost = |i: usize, ni: usize| {
        if ni == 0 {
            f64::INFINITY
        } else {
            probs[i] * probs[i] * pilot[i] * (1.0 - pilot[i]) / ni as f64
        }
    };
    loop {
        let gain = (0..m)
            .map(|i| (i, cost(i, n[i]) - cost(i, n[i] + 1)))
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        let loss = (0..m)
            .filter(|&j| n[j] > mins[j])
            .map(|j| (j, cost(j, n[j] - 1) - cost(j, n[j])))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        match (gain, loss) {
            (Some((i, g)), Some((j, l))) if i != j && g > l * (1.0 + 1e-12) + 1e-300 => {
                n[i] += 1;
                n[j] -= 1;
            }
            _ => break,
        }
    }
    Ok(n)
}

/// Allocation proportional to the stratum probabilities with the same floor.
pub fn proportional_allocation(total: usize, probs: &[f64], floor: usize) -> Result<Vec<usize>> {
    let m = probs.len();
    if total < m * floor {
        return Err(Error::Infeasible(format!("{total} samples cannot cover {m} strata")));
    }
    let pilot = vec![0.0; m];
    allocate_samples(total, &pilot, probs, floor)
}

mod open_bounds {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|x| x.is_finite().then_some(*x)).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let v = Vec::<Option<f64>>::deserialize(d)?;
        Ok(v.into_iter().map(|x| x.unwrap_or(f64::INFINITY)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedPlan {
    /// Stratum edges; the last one is infinite and stored as `null`.
    #[serde(with = "open_bounds")]
    pub bounds: Vec<f64>,
    pub probabilities: Vec<f64>,
    /// Total samples per stratum, pilot included.
    pub allocation: Vec<usize>,
    pub pilot: Vec<usize>,
}

impl StratifiedPlan {
    pub fn n_strata(&self) -> usize {
        self.probabilities.len()
    }

    pub fn total(&self) -> usize {
        self.allocation.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_strata();
        if self.bounds.len() != n + 1 || self.bounds[0] != 0.0 || self.bounds[n] != f64::INFINITY {
            return Err(Error::State("plan bounds must run from 0 to infinity".into()));
        }
        if self.bounds.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::State("plan bounds must increase".into()));
        }
        let s: f64 = self.probabilities.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::State(format!("strata probabilities sum to {s}")));
        }
        if self.allocation.len() != n || self.pilot.len() != n {
            return Err(Error::State("allocation length does not match the strata".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleStatus {
    Ok,
    FailedInfrastructure,
}

/// One row of the outcome ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub sample_id: u64,
    pub stratum: usize,
    pub pilot: bool,
    pub v_h: f64,
    /// Wind direction, radians.
    pub alpha: f64,
    pub status: SampleStatus,
    pub collapsed: bool,
    pub shape_confirmed: bool,
    pub mechanism: Option<String>,
    pub failure_height: Option<f64>,
    pub termination: String,
    pub last_converged_time: f64,
    pub peak_drift: f64,
    pub residual_drift: Option<f64>,
    /// Member indices with at least one yielded fiber.
    pub yielded: Vec<u32>,
    /// Member indices with a fully yielded section.
    pub section_yielded: Vec<u32>,
    pub buckled: Vec<u32>,
    pub partially_fractured: Vec<u32>,
    pub fractured: Vec<u32>,
    pub max_damage: f64,
}

impl SampleOutcome {
    pub fn system_first_yield(&self) -> bool {
        !self.yielded.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LimitState {
    SystemCollapse,
    ComponentFirstYield,
    SystemFirstYield,
    ComponentBuckling,
    ComponentFracture,
    PeakDrift { threshold: f64 },
    ResidualDrift { threshold: f64 },
}

/// Exceedance indicator: a single system flag, or one flag per member
/// whose rate is maximized over members.
pub enum Indicator {
    System(bool),
    Members(Vec<u32>),
}

/// Ratio as a percentage, rounded to remove binary noise (0.035 -> 3.5).
fn percent(ratio: f64) -> f64 {
    (ratio * 100.0 * 1e9).round() / 1e9
}

impl LimitState {
    pub fn name(&self) -> String {
        match self {
            LimitState::SystemCollapse => "system-collapse".into(),
            LimitState::ComponentFirstYield => "component-first-yield".into(),
            LimitState::SystemFirstYield => "system-first-yield".into(),
            LimitState::ComponentBuckling => "component-buckling".into(),
            LimitState::ComponentFracture => "component-fracture".into(),
            LimitState::PeakDrift { threshold } => format!("peak-drift>{}%", percent(*threshold)),
            LimitState::ResidualDrift { threshold } => format!("residual-drift>{}%", percent(*threshold)),
        }
    }

    /// A collapsed sample exceeds every drift threshold.
    pub fn indicator(&self, o: &SampleOutcome) -> Indicator {
        match self {
            LimitState::SystemCollapse => Indicator::System(o.collapsed),
            LimitState::SystemFirstYield => Indicator::System(o.system_first_yield()),
            LimitState::ComponentFirstYield => Indicator::Members(o.yielded.clone()),
            LimitState::ComponentBuckling => Indicator::Members(o.buckled.clone()),
            LimitState::ComponentFracture => Indicator::Members(o.fractured.clone()),
            LimitState::PeakDrift { threshold } => Indicator::System(o.collapsed || o.peak_drift > *threshold),
            LimitState::ResidualDrift { threshold } => {
                Indicator::System(o.collapsed || o.residual_drift.is_some_and(|r| r > *threshold))
            }
        }
    }

    /// Plain flag: for component states, whether any member exceeds.
    pub fn exceeded(&self, o: &SampleOutcome) -> bool {
        match self.indicator(o) {
            Indicator::System(b) => b,
            Indicator::Members(m) => !m.is_empty(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitStateCatalog {
    pub states: Vec<LimitState>,
}

impl LimitStateCatalog {
    pub fn with_thresholds(peak: &[f64], residual: &[f64]) -> Self {
        let mut states = vec![
            LimitState::SystemCollapse,
            LimitState::ComponentFirstYield,
            LimitState::SystemFirstYield,
            LimitState::ComponentBuckling,
            LimitState::ComponentFracture,
        ];
        states.extend(peak.iter().map(|&threshold| LimitState::PeakDrift { threshold }));
        states.extend(residual.iter().map(|&threshold| LimitState::ResidualDrift { threshold }));
        Self { states }
    }
}

impl Default for LimitStateCatalog {
    fn default() -> Self {
        Self::with_thresholds(&[0.01, 0.035], &[0.0025, 0.005])
    }
}

/// `beta_T = Phi^{-1}((1 - P)^T)` with the annual probability `P`.
pub fn reliability_index(annual_probability: f64, years: f64) -> f64 {
    let p_survive = (years * (-annual_probability).ln_1p()).exp();
    Normal::standard().inverse_cdf(p_survive)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateEstimate {
    pub name: String,
    /// Annual exceedance rate, 1/year.
    pub rate: f64,
    /// Estimated probability of exceedance given a storm.
    pub probability: f64,
    /// Plug-in variance of `probability`.
    pub variance: f64,
    pub cov: Option<f64>,
    pub beta: f64,
    pub conditional: Vec<f64>,
    pub failures: Vec<usize>,
    pub trials: Vec<usize>,
    /// Governing member for component limit states.
    pub member: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub nu: f64,
    pub years: f64,
    pub excluded_samples: usize,
    pub states: Vec<StateEstimate>,
}

impl EstimateResult {
    pub fn get(&self, name: &str) -> Option<&StateEstimate> {
        self.states.iter().find(|s| s.name == name)
    }
}

fn stratum_estimate(
    name: String,
    failures: Vec<usize>,
    trials: &[usize],
    probs: &[f64],
    nu: f64,
    years: f64,
    member: Option<u32>,
) -> StateEstimate {
    let conditional: Vec<f64> = failures
        .iter()
        .zip(trials)
        .map(|(f, n)| *f as f64 / *n as f64)
        .collect();
    let probability: f64 = conditional.iter().zip(probs).map(|(p, w)| p * w).sum();
    let variance = stratified_variance(probs, &conditional, trials);
    let rate = nu * probability;
    StateEstimate {
        name,
        rate,
        probability,
        variance,
        cov: (probability > 0.0).then(|| variance.sqrt() / probability),
        beta: reliability_index(rate, years),
        conditional,
        failures,
        trials: trials.to_vec(),
        member,
    }
}

/// Stratified estimates for every limit state in `catalog`.
pub fn estimate_rates(
    outcomes: &[SampleOutcome],
    plan: &StratifiedPlan,
    nu: f64,
    catalog: &LimitStateCatalog,
    years: f64,
) -> Result<EstimateResult> {
    let m = plan.n_strata();
    let valid: Vec<&SampleOutcome> = outcomes.iter().filter(|o| o.status == SampleStatus::Ok).collect();
    let mut trials = vec![0usize; m];
    for o in &valid {
        if o.stratum >= m {
            return Err(Error::Estimation(format!("sample {} names stratum {}", o.sample_id, o.stratum)));
        }
        trials[o.stratum] += 1;
    }
    if let Some(i) = trials.iter().position(|n| *n == 0) {
        return Err(Error::Estimation(format!("stratum {} has no valid samples", i + 1)));
    }
    let mut states = Vec::with_capacity(catalog.states.len());
    for ls in &catalog.states {
        let mut system = vec![0usize; m];
        let mut members: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        let mut is_component = false;
        for o in &valid {
            match ls.indicator(o) {
                Indicator::System(b) => system[o.stratum] += b as usize,
                Indicator::Members(list) => {
                    is_component = true;
                    for id in list {
                        members.entry(id).or_insert_with(|| vec![0; m])[o.stratum] += 1;
                    }
                }
            }
        }
        if !is_component {
            states.push(stratum_estimate(ls.name(), system, &trials, &plan.probabilities, nu, years, None));
        } else {
            let best = members
                .into_iter()
                .map(|(id, f)| stratum_estimate(ls.name(), f, &trials, &plan.probabilities, nu, years, Some(id)))
                .max_by(|a, b| a.rate.total_cmp(&b.rate).then(b.member.cmp(&a.member)));
            states.push(best.unwrap_or_else(|| {
                stratum_estimate(ls.name(), vec![0; m], &trials, &plan.probabilities, nu, years, None)
            }));
        }
    }
    Ok(EstimateResult {
        nu,
        years,
        excluded_samples: outcomes.len() - valid.len(),
        states,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lognormal {
    /// Median, m/s.
    pub median: f64,
    pub dispersion: f64,
}

impl Lognormal {
    pub fn cdf(&self, v: f64) -> f64 {
        if v <= 0.0 {
            0.0
        } else {
            Normal::standard().cdf((v / self.median).ln() / self.dispersion)
        }
    }
}

fn ln_phi(z: f64) -> f64 {
    // log of the standard normal CDF, stable in the lower tail
    if z > -30.0 {
        (0.5 * erfc(-z / std::f64::consts::SQRT_2)).ln()
    } else {
        let z2 = z * z;
        Normal::standard().ln_pdf(z) - (-z).ln() + (-1.0 / z2 + 3.0 / (z2 * z2)).ln_1p()
    }
}

fn inverse_mills(z: f64) -> f64 {
    // phi(z) / Phi(z)
    (Normal::standard().ln_pdf(z) - ln_phi(z)).exp()
}

/// Binomial maximum-likelihood lognormal fit to `(speed, failures, trials)`.
pub fn fit_lognormal(points: &[(f64, usize, usize)]) -> Result<Lognormal> {
    let pts: Vec<(f64, f64, f64)> = points
        .iter()
        .filter(|(x, _, n)| *n > 0 && *x > 0.0 && x.is_finite())
        .map(|(x, k, n)| (x.ln(), *k as f64, *n as f64))
        .collect();
    if pts.len() < 3 {
        return Err(Error::Fit(format!("need at least 3 populated strata, got {}", pts.len())));
    }
    if !pts.iter().any(|(_, k, n)| *k > 0.0 && k < n) {
        return Err(Error::Fit("no stratum has a failure fraction strictly between 0 and 1".into()));
    }
    // probit in z = a + b ln x
    let loglik = |a: f64, b: f64| -> f64 {
        pts.iter()
            .map(|(lx, k, n)| {
                let z = a + b * lx;
                k * ln_phi(z) + (n - k) * ln_phi(-z)
            })
            .sum()
    };
    // start from a weighted least-squares probit line
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (lx, k, n) in &pts {
        let p = ((k + 0.5) / (n + 1.0)).clamp(1e-3, 1.0 - 1e-3);
        let y = Normal::standard().inverse_cdf(p);
        sw += n;
        sx += n * lx;
        sy += n * y;
        sxx += n * lx * lx;
        sxy += n * lx * y;
    }
    let den = sw * sxx - sx * sx;
    let mut b = if den > 0.0 { (sw * sxy - sx * sy) / den } else { 1.0 };
    if !(b > 0.0) {
        b = 1.0;
    }
    let mut a = (sy - b * sx) / sw;
    let mut ll = loglik(a, b);
    for _ in 0..200 {
        let (mut g0, mut g1, mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (lx, k, n) in &pts {
            let z = a + b * lx;
            let r1 = inverse_mills(z);
            let r0 = inverse_mills(-z);
            let d = k * r1 - (n - k) * r0;
            let w = k * r1 * (z + r1) + (n - k) * r0 * (r0 - z);
            g0 += d;
            g1 += d * lx;
            h00 += w;
            h01 += w * lx;
            h11 += w * lx * lx;
        }
        let det = h00 * h11 - h01 * h01;
        if !(det > 0.0) {
            return Err(Error::Fit("fragility likelihood is not strictly concave at the iterate".into()));
        }
        let da = (h11 * g0 - h01 * g1) / det;
        let db = (h00 * g1 - h01 * g0) / det;
        let mut t = 1.0;
        let (mut na, mut nb, mut nll);
        loop {
            na = a + t * da;
            nb = b + t * db;
            nll = loglik(na, nb);
            if nll >= ll - 1e-12 * ll.abs() || t < 1e-10 {
                break;
            }
            t *= 0.5;
        }
        let step = (na - a).abs() + (nb - b).abs();
        a = na;
        b = nb;
        ll = nll;
        if step < 1e-12 * (1.0 + a.abs() + b.abs()) {
            break;
        }
    }
    if !(b > 0.0) || !a.is_finite() {
        return Err(Error::Fit("fragility slope is not positive".into()));
    }
    Ok(Lognormal {
        median: (-a / b).exp(),
        dispersion: 1.0 / b,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorFit {
    /// Sector start, degrees.
    pub sector_deg: f64,
    pub fit: Option<Lognormal>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FragilityFit {
    pub name: String,
    pub curve: Option<Lognormal>,
    pub sectors: Vec<SectorFit>,
}

/// Fragility curve from per-stratum counts placed at the stratum centres.
pub fn fit_fragility(bounds: &[f64], failures: &[usize], trials: &[usize]) -> Result<Lognormal> {
    let centers = stratum_centers(bounds);
    let pts: Vec<(f64, usize, usize)> = centers
        .iter()
        .zip(failures)
        .zip(trials)
        .map(|((c, f), n)| (*c, *f, *n))
        .collect();
    fit_lognormal(&pts)
}

/// Curve and 45-degree sector fits for every limit state. For component
/// states the member-union flag is used.
pub fn fit_all_fragilities(
    outcomes: &[SampleOutcome],
    plan: &StratifiedPlan,
    catalog: &LimitStateCatalog,
) -> Vec<FragilityFit> {
    let m = plan.n_strata();
    let n_sectors = (360.0 / SECTOR_WIDTH_DEG).round() as usize;
    let valid: Vec<&SampleOutcome> = outcomes.iter().filter(|o| o.status == SampleStatus::Ok).collect();
    catalog
        .states
        .iter()
        .map(|ls| {
            let mut f = vec![0usize; m];
            let mut n = vec![0usize; m];
            let mut sf = vec![vec![0usize; m]; n_sectors];
            let mut sn = vec![vec![0usize; m]; n_sectors];
            for o in &valid {
                let hit = ls.exceeded(o) as usize;
                let s = ((o.alpha.to_degrees().rem_euclid(360.0) / SECTOR_WIDTH_DEG) as usize).min(n_sectors - 1);
                f[o.stratum] += hit;
                n[o.stratum] += 1;
                sf[s][o.stratum] += hit;
                sn[s][o.stratum] += 1;
            }
            FragilityFit {
                name: ls.name(),
                curve: fit_fragility(&plan.bounds, &f, &n).ok(),
                sectors: (0..n_sectors)
                    .map(|s| SectorFit {
                        sector_deg: s as f64 * SECTOR_WIDTH_DEG,
                        fit: fit_fragility(&plan.bounds, &sf[s], &sn[s]).ok(),
                    })
                    .collect(),
            }
        })
        .collect()
}

/// Whether a merged median lies within the span of the sector medians.
pub fn merged_within_span(fit: &FragilityFit) -> Option<bool> {
    let merged = fit.curve?.median;
    let meds: Vec<f64> = fit.sectors.iter().filter_map(|s| s.fit.map(|f| f.median)).collect();
    if meds.is_empty() {
        return None;
    }
    let lo = meds.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = meds.iter().cloned().fold(0.0, f64::max);
    Some(merged >= lo * (1.0 - 1e-9) && merged <= hi * (1.0 + 1e-9))
}
