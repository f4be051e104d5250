mod common;

use common::estimator::*;
use windcollapse::reliability::Lognormal;

#[test]
fn stratified_estimator_is_unbiased_with_calibrated_variance() {
    let c = surrogate_check(100, 400, 11);
    assert!((c.lambda_mean - c.lambda_true).abs() <= 3.0 * c.standard_error);
    assert!((c.plugin_variance / c.empirical_variance - 1.0).abs() <= 0.2);
    assert!(c.neyman_variance <= c.proportional_variance);
}

/// Most replicates at 100 trials per stratum land inside the 3% / 15% band.
#[test]
fn fragility_fits_recover_known_curves_in_most_replicates() {
    for truth in [Lognormal { median: 76.6, dispersion: 0.23 }, Lognormal { median: 62.4, dispersion: 0.16 }] {
        let n = (0..200).filter(|&s| fragility_within(truth, fragility_replicate(truth, 100, s))).count();
        assert!(n >= 160, "{truth:?}: {n}/200 replicates inside tolerance");
    }
}
