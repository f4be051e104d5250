use std::f64::consts::TAU;
use std::sync::OnceLock;

use proptest::prelude::*;
use windcollapse::hazard::{synthetic_record, HazardFitOptions, Weibull, WindClimateModel};
use windcollapse::linalg::BandMatrix;
use windcollapse::material::{batch_rainflow_damage, fatigue_update, FatigueParams, FatigueState, SteelParams, SteelState};
use windcollapse::reliability::{
    allocate_samples, partition_wsi, reliability_index, stratum_of, strata_probabilities,
};
use windcollapse::stream::seeded;
use windcollapse::uncertainty::{Family, RandomVariableSpec};

fn strain_walk() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-4e-3..4e-3f64, 1..120).prop_map(|steps| {
        let mut e = 0.0;
        steps
            .into_iter()
            .map(|d| {
                e += d;
                e
            })
            .collect()
    })
}

fn climate() -> &'static WindClimateModel {
    static MODEL: OnceLock<WindClimateModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        let w = Weibull { shape: 2.0, scale: 22.0 };
        let rec = synthetic_record(600, w, 1.4, &mut seeded(5));
        WindClimateModel::fit(&rec, &HazardFitOptions::default()).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn damage_index_never_decreases_and_matches_batch(history in strain_walk()) {
        let p = FatigueParams::new(0.077, -0.5);
        let mut st = FatigueState::new();
        let mut last = 0.0;
        for &e in &history {
            let (di, _) = fatigue_update(&mut st, &p, e);
            prop_assert!(di >= last);
            last = di;
        }
        let batch = batch_rainflow_damage(&p, &history);
        prop_assert!((last - batch).abs() <= 1e-6, "incremental {last} batch {batch}");
    }
}

proptest! {
    #[test]
    fn steel_tangent_stays_between_hardening_and_elastic(history in strain_walk()) {
        let p = SteelParams::new(200e9, 345e6, 0.01, 20.0);
        let mut st = SteelState::new(&p);
        for &e in &history {
            let (_, t) = st.set_trial(&p, e).unwrap();
            prop_assert!(t >= p.b * p.e * (1.0 - 1e-9) && t <= p.e * (1.0 + 1e-9), "tangent {t}");
            st.commit();
        }
    }

    #[test]
    fn steel_stress_is_homogeneous_in_modulus_and_strength(history in strain_walk(), k in 0.2..5.0f64) {
        let a = SteelParams::new(200e9, 345e6, 0.005, 18.0);
        let b = SteelParams::new(k * 200e9, k * 345e6, 0.005, 18.0);
        let (mut sa, mut sb) = (SteelState::new(&a), SteelState::new(&b));
        for &e in &history {
            let (fa, _) = sa.set_trial(&a, e).unwrap();
            let (fb, _) = sb.set_trial(&b, e).unwrap();
            prop_assert!((fb - k * fa).abs() <= 1e-9 * (k * 345e6), "{fb} vs {}", k * fa);
            sa.commit();
            sb.commit();
        }
    }

    #[test]
    fn hazard_rate_is_monotone_and_bounded(v1 in 0.0..120.0f64, dv in 0.0..40.0f64) {
        let m = climate();
        let (r1, r2) = (m.hazard_rate(v1), m.hazard_rate(v1 + dv));
        prop_assert!(r2 <= r1);
        prop_assert!(r1 <= m.nu);
    }

    #[test]
    fn speed_for_aer_inverts_hazard_rate(v in 1.0..70.0f64) {
        let m = climate();
        let back = m.speed_for_aer(m.hazard_rate(v)).unwrap();
        prop_assert!((back / v - 1.0).abs() <= 1e-9, "{v} -> {back}");
    }

    #[test]
    fn conditional_direction_ccdf_is_non_increasing(v in 1.0..90.0f64) {
        let m = climate();
        let mut prev = f64::INFINITY;
        for i in 0..100 {
            let g = m.conditional_direction_ccdf(TAU * i as f64 / 99.0, v).unwrap();
            prop_assert!(g <= prev + 1e-12);
            prev = g;
        }
    }

    #[test]
    fn strata_partition_the_speed_axis(top in 30.0..120.0f64, n in 2usize..20, shape in 1.2..3.0f64, scale in 10.0..40.0f64) {
        let b = partition_wsi(top, n).unwrap();
        prop_assert_eq!(b.len(), n + 1);
        prop_assert_eq!(b[0], 0.0);
        prop_assert!(b.windows(2).all(|w| w[1] > w[0]));
        let p = strata_probabilities(&Weibull { shape, scale }, &b);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        for (i, w) in b.windows(2).enumerate() {
            prop_assert_eq!(stratum_of(w[0], &b), i);
        }
    }

    #[test]
    fn allocation_spends_the_whole_budget(
        pilot in prop::collection::vec(0.0..1.0f64, 4),
        weights in prop::collection::vec(0.01..1.0f64, 4),
        total in 8usize..400,
    ) {
        let s: f64 = weights.iter().sum();
        let probs: Vec<f64> = weights.iter().map(|w| w / s).collect();
        let alloc = allocate_samples(total, &pilot, &probs, 2).unwrap();
        prop_assert_eq!(alloc.iter().sum::<usize>(), total);
        prop_assert!(alloc.iter().all(|&n| n >= 2));
    }

    #[test]
    fn reliability_index_decreases_with_rate(p in 1e-7..1e-2f64, f in 1.01..10.0f64) {
        prop_assert!(reliability_index(p * f, 50.0) < reliability_index(p, 50.0));
    }

    #[test]
    fn truncated_normal_respects_bounds(seed in any::<u64>(), mean in 15.0..25.0f64, cov in 0.01..0.5f64) {
        let s = RandomVariableSpec::new(Family::TruncatedNormal, mean, cov)
            .bounded(Some(15.0), Some(25.0))
            .sampler()
            .unwrap();
        let mut rng = seeded(seed);
        for _ in 0..200 {
            let x = s.sample(&mut rng);
            prop_assert!((15.0..=25.0).contains(&x));
        }
    }

    #[test]
    fn band_solve_satisfies_the_system(vals in prop::collection::vec(-1.0..1.0f64, 5 * 12), rhs in prop::collection::vec(-1.0..1.0f64, 12)) {
        let n = 12;
        let mut a = BandMatrix::zeros(n, 2, 2);
        for i in 0..n {
            for (k, j) in (i.saturating_sub(2)..=(i + 2).min(n - 1)).enumerate() {
                let v = vals[5 * i + k];
                a.add(i, j, if i == j { v + 6.0 } else { v });
            }
        }
        let x = a.clone().factor().unwrap().solve(&rhs);
        let r = a.mul_vec(&x);
        for (ri, bi) in r.iter().zip(&rhs) {
            prop_assert!((ri - bi).abs() <= 1e-12);
        }
    }
}
