//! Stratified estimation and fragility fitting on analytic surrogates.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use statrs::distribution::{ContinuousCDF, Normal};
use windcollapse::hazard::Weibull;
use windcollapse::reliability::{
    allocate_samples, estimate_rates, fit_fragility, partition_wsi, proportional_allocation, stratified_variance,
    strata_probabilities, LimitState, LimitStateCatalog, Lognormal, SampleOutcome, SampleStatus, StratifiedPlan,
};
use windcollapse::stream::{seeded, substream};

const NU: f64 = 0.305;
const WEIBULL: Weibull = Weibull {
    shape: 2.0,
    scale: 21.87,
};

/// Surrogate conditional failure probability.
fn surrogate(v: f64) -> f64 {
    if v <= 0.0 {
        return 0.0;
    }
    Normal::standard().cdf((v / 62.0).ln() / 0.18)
}

fn weibull_pdf(v: f64) -> f64 {
    let (k, l) = (WEIBULL.shape, WEIBULL.scale);
    if v <= 0.0 {
        0.0
    } else {
        k / l * (v / l).powf(k - 1.0) * (-(v / l).powf(k)).exp()
    }
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

pub fn outcome(id: u64, stratum: usize, v: f64, failed: bool) -> SampleOutcome {
    SampleOutcome {
        sample_id: id,
        stratum,
        pilot: false,
        v_h: v,
        alpha: 0.0,
        status: SampleStatus::Ok,
        collapsed: failed,
        shape_confirmed: failed,
        mechanism: None,
        failure_height: None,
        termination: "completed".into(),
        last_converged_time: 0.0,
        peak_drift: 0.0,
        residual_drift: Some(0.0),
        yielded: vec![],
        section_yielded: vec![],
        buckled: vec![],
        partially_fractured: vec![],
        fractured: vec![],
        max_damage: 0.0,
    }
}

pub struct SurrogateCheck {
    pub lambda_true: f64,
    pub lambda_mean: f64,
    /// Standard error of `lambda_mean` from the replicate spread.
    pub standard_error: f64,
    pub plugin_variance: f64,
    pub empirical_variance: f64,
    pub neyman_variance: f64,
    pub proportional_variance: f64,
}

pub fn surrogate_check(replications: usize, total: usize, seed: u64) -> SurrogateCheck {
    let bounds = partition_wsi(78.79, 10).unwrap();
    let probs = strata_probabilities(&WEIBULL, &bounds);
    let m = probs.len();
    // conditional probabilities by quadrature within each stratum
    let q: Vec<f64> = (0..m)
        .map(|s| {
            let hi = if bounds[s + 1].is_finite() { bounds[s + 1] } else { bounds[s] + 60.0 };
            simpson(|v| surrogate(v) * weibull_pdf(v), bounds[s], hi, 4000) / probs[s]
        })
        .collect();
    // rate by quadrature over the whole speed axis
    let lambda_true = NU * simpson(|v| surrogate(v) * weibull_pdf(v), 0.0, 200.0, 200_000);

    let neyman = allocate_samples(total, &q, &probs, 5).unwrap();
    let proportional = proportional_allocation(total, &probs, 5).unwrap();
    let plan = StratifiedPlan {
        bounds: bounds.clone(),
        probabilities: probs.clone(),
        allocation: neyman.clone(),
        pilot: vec![0; m],
    };
    let catalog = LimitStateCatalog {
        states: vec![LimitState::SystemCollapse],
    };
    let mut rates = Vec::with_capacity(replications);
    let mut plugin = Vec::with_capacity(replications);
    for r in 0..replications as u64 {
        let mut rng = substream(seed, r);
        let mut outcomes = Vec::with_capacity(total);
        for (s, &n) in neyman.iter().enumerate() {
            let (s_lo, s_hi) = (WEIBULL.sf(bounds[s]), if bounds[s + 1].is_finite() { WEIBULL.sf(bounds[s + 1]) } else { 0.0 });
            for _ in 0..n {
                let u: f64 = rng.random();
                let v = WEIBULL.isf(s_lo - u * (s_lo - s_hi));
                let failed = rng.random::<f64>() < surrogate(v);
                outcomes.push(outcome(outcomes.len() as u64, s, v, failed));
            }
        }
        let est = estimate_rates(&outcomes, &plan, NU, &catalog, 50.0).unwrap();
        let st = est.get("system-collapse").unwrap();
        rates.push(st.rate);
        plugin.push(NU * NU * st.variance);
    }
    let n = replications as f64;
    let mean = rates.iter().sum::<f64>() / n;
    let empirical_variance = rates.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    SurrogateCheck {
        lambda_true,
        lambda_mean: mean,
        standard_error: (empirical_variance / n).sqrt(),
        plugin_variance: plugin.iter().sum::<f64>() / n,
        empirical_variance,
        neyman_variance: stratified_variance(&probs, &q, &neyman),
        proportional_variance: stratified_variance(&probs, &q, &proportional),
    }
}

/// Fits a lognormal to binomial draws at the reference stratum centres,
/// `trials` per stratum.
pub fn fragility_replicate(truth: Lognormal, trials: usize, seed: u64) -> Option<Lognormal> {
    let bounds = partition_wsi(78.79, 10).unwrap();
    let centers = windcollapse::reliability::stratum_centers(&bounds);
    let mut rng = seeded(seed);
    let failures: Vec<usize> = centers
        .iter()
        .map(|&c| Binomial::new(trials as u64, truth.cdf(c)).unwrap().sample(&mut rng) as usize)
        .collect();
    fit_fragility(&bounds, &failures, &vec![trials; centers.len()]).ok()
}

pub fn fragility_within(truth: Lognormal, fit: Option<Lognormal>) -> bool {
    fit.is_some_and(|f| {
        (f.median / truth.median - 1.0).abs() <= 0.03 && (f.dispersion / truth.dispersion - 1.0).abs() <= 0.15
    })
}
