use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use smq_core::beamforming::redraw_loop;
use smq_core::model::{build_rate_matrix, QueueKind, RateMatrix, SystemConfig};
use smq_core::simulator::ConstantService;
use smq_core::theory::{
    algorithm2, fixed_point_t1, fixed_point_t1_from, sample_head_users, theory_for, FixedPointInput, TheoryOptions,
    UserDistributionSpec,
};
use smq_core::Error;

/// Root of `S d − ρ(d) (d + R)` by bisection, with `R = ET2 / (2 ET)`.
fn bisection_root(input: &FixedPointInput) -> f64 {
    let r = input.et2 / (2.0 * input.et);
    let s = input.streams as f64;
    let phi = |d: f64| s * d - input.rho(d) * (d + r);
    let (mut lo, mut hi) = (0.0, 1.0);
    while phi(hi) <= 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if phi(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

fn input_strategy() -> impl Strategy<Value = FixedPointInput> {
    (1usize..=3, prop::collection::vec(0.0f64..5.0, 1..30), 0.01f64..1.0, 1.0f64..3.0).prop_map(
        |(s, lambda, et, spread)| FixedPointInput::new(s, lambda, et, et * et * spread).unwrap(),
    )
}

const TOL: f64 = 1e-10;

proptest! {
    #[test]
    fn fixed_point_matches_bisection(input in input_strategy()) {
        let d = fixed_point_t1(&input, TOL).unwrap();
        let oracle = bisection_root(&input);
        prop_assert!((d - oracle).abs() <= 1e-6 * oracle.max(1e-3), "{d} vs {oracle}");
    }

    #[test]
    fn fixed_point_is_unique_from_any_start(input in input_strategy(), seed in any::<u64>()) {
        let reference = fixed_point_t1(&input, TOL).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..10 {
            let d0 = rng.random_range(0.0..=10.0 * input.et);
            let d = fixed_point_t1_from(&input, d0, TOL).unwrap();
            prop_assert!((d - reference).abs() <= 1e-7 * reference.max(1.0), "from {d0}: {d} vs {reference}");
        }
    }

    #[test]
    fn fixed_point_is_monotone_in_both_moments(input in input_strategy(), bump in 1.0f64..1.5) {
        let d = fixed_point_t1(&input, TOL).unwrap();
        let heavier = FixedPointInput { et2: input.et2 * bump, ..input.clone() };
        prop_assert!(fixed_point_t1(&heavier, TOL).unwrap() >= d - 1e-8);
        let slower = FixedPointInput::mixed(input.streams, input.lambda.clone(), input.et * bump, input.et2).unwrap();
        prop_assert!(fixed_point_t1(&slower, TOL).unwrap() >= d - 1e-8);
    }

    #[test]
    fn heavy_load_delay_stays_under_the_stability_bound(input in input_strategy()) {
        let loaded = FixedPointInput { lambda: input.lambda.iter().map(|l| l * 100.0).collect(), ..input.clone() };
        let d = fixed_point_t1(&loaded, TOL).unwrap();
        let linear = loaded.et * loaded.lambda.len() as f64 / loaded.streams as f64;
        let residual = loaded.et2 / (2.0 * loaded.et);
        prop_assert!(d <= linear + residual, "{d}");
        // The linear term alone bounds d* once the residual-life term is small.
        if residual <= 0.05 * linear {
            prop_assert!(d <= 1.05 * linear, "{d} vs {linear}");
        }
    }
}

#[test]
fn head_file_frequencies_follow_effective_rates() {
    let config = SystemConfig { users: 4, files: 10, lambda_total: 8.0, ..SystemConfig::default() };
    let spec = UserDistributionSpec { d: 0.7, rates: build_rate_matrix(&config).unwrap(), streams: 1 };
    let weights = spec.lambda_prime();
    let total: f64 = weights.iter().sum();
    let n = 100_000;
    let mut counts = vec![0usize; config.files];
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..n {
        counts[sample_head_users(&spec, &mut rng).unwrap().files()[0]] += 1;
    }
    let chi2: f64 = counts
        .iter()
        .zip(&weights)
        .map(|(&c, w)| {
            let e = n as f64 * w / total;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    // 0.1% critical value of χ² with 9 degrees of freedom.
    assert!(chi2 < 27.88, "χ² = {chi2}");
}

#[test]
fn user_inclusion_frequencies_follow_the_approximation() {
    let rates = RateMatrix::from_rows(vec![vec![0.5, 2.0], vec![1.5, 0.2], vec![1.0, 1.0]]).unwrap();
    let spec = UserDistributionSpec { d: 0.8, rates: rates.clone(), streams: 1 };
    let n = 100_000;
    let mut hits = [[0usize; 3]; 2];
    let mut draws = [0usize; 2];
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..n {
        let g = sample_head_users(&spec, &mut rng).unwrap();
        let file = g.files()[0];
        draws[file] += 1;
        for &k in &g.user_sets()[0] {
            hits[file][k] += 1;
        }
    }
    for file in 0..2 {
        for (user, &hit) in hits[file].iter().enumerate() {
            let first = spec.requester(file, user);
            let expected = first + (1.0 - first) * spec.inclusion(file, user);
            let got = hit as f64 / draws[file] as f64;
            assert!((got - expected).abs() < 0.02, "file {file} user {user}: {got} vs {expected}");
        }
    }
}

#[test]
fn redraw_count_is_geometric() {
    let p = 0.3;
    let r_eps = 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let runs = 40_000;
    let mut total = 0usize;
    for _ in 0..runs {
        let out = redraw_loop(r_eps, 10_000, || {
            let t = if rng.random::<f64>() < p { 0.1 } else { 10.0 };
            Ok(((), t))
        })
        .unwrap();
        assert!((out.total_time - (out.redraws as f64 / r_eps + 0.1)).abs() < 1e-12);
        total += out.redraws;
    }
    let mean = total as f64 / runs as f64;
    let expected = (1.0 - p) / p;
    assert!((mean / expected - 1.0).abs() < 0.03, "{mean} vs {expected}");
}

#[test]
fn redraw_cap_is_a_hard_error() {
    let err = redraw_loop(1.0, 5, || Ok(((), f64::INFINITY))).unwrap_err();
    assert!(matches!(err, Error::RedrawCapExceeded { redraws: 5, .. }));
}

#[test]
fn dual_queue_analysis_accepts_mixed_moments() {
    // Mixed moments are sums, so they break ET2 ≥ ET² whenever the bad queue is slow.
    let config = SystemConfig { lambda_total: 6.0, queue_kind: QueueKind::Dsmq, cycle: 5, ..SystemConfig::default() }
        .with_heterogeneous_split(5);
    let mut model = ConstantService { time: 0.3, rate: 1.0 };
    let options = TheoryOptions::default();
    let a = algorithm2(&config, &mut model, &options).unwrap();
    let b = algorithm2(&config, &mut model, &options).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.classes.len(), 2);
    let bad = a.class(smq_core::QueueClass::Bad).unwrap();
    let good = a.class(smq_core::QueueClass::Good).unwrap();
    assert!(bad.fixed_point_moments.mean_sq < bad.fixed_point_moments.mean.powi(2));
    assert!(bad.mean_sojourn > good.mean_sojourn);
}

#[test]
fn analysis_covers_single_and_dsmq_only() {
    let mut model = ConstantService { time: 0.1, rate: 1.0 };
    for (kind, covered) in [
        (QueueKind::Smq, true),
        (QueueKind::Dsmq, true),
        (QueueKind::Loopback, false),
        (QueueKind::TwoQSimultaneous, false),
    ] {
        let config = SystemConfig { queue_kind: kind, ..SystemConfig::default() }.with_heterogeneous_split(5);
        assert_eq!(theory_for(&config, &mut model, &TheoryOptions::default()).is_some(), covered, "{kind}");
    }
}
