use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use smq_core::beamforming::{
    service_with_redraw, solve, verify_solution, ServiceGroups, SolverOptions, FEASIBILITY_TOLERANCE,
};
use smq_core::channel::{sample_channel, ChannelMatrix, ChannelStatistics};
use smq_core::model::{PerUser, Scheme, SystemConfig, BAD_USER_GAIN};

fn config(antennas: usize, users: usize) -> SystemConfig {
    SystemConfig { antennas, users, ..SystemConfig::default() }
}

fn instance(rng: &mut ChaCha8Rng) -> (SystemConfig, ServiceGroups, ChannelMatrix) {
    let l = [2, 4, 8][rng.random_range(0..3)];
    let k = [2, 4, 6][rng.random_range(0..3)];
    let s = rng.random_range(1..=2);
    let cfg = config(l, k);
    let groups = ServiceGroups::random(k, s, rng).unwrap();
    let h = sample_channel(&ChannelStatistics::homogeneous(k, 1.0).unwrap(), l, rng);
    (cfg, groups, h)
}

#[test]
fn random_instances_pass_the_feasibility_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for scheme in Scheme::ALL {
        for _ in 0..40 {
            let (cfg, groups, h) = instance(&mut rng);
            let sol = solve(scheme, &groups, &h, &cfg, &SolverOptions::default()).unwrap();
            let report = verify_solution(scheme, &groups, &h, &sol, &cfg);
            assert!(report.is_ok(), "{scheme}: {:?}", report.violations);
            assert!(report.max_violation < FEASIBILITY_TOLERANCE);
            assert!(sol.r_star > 0.0 && sol.t_star > 0.0);
        }
    }
}

#[test]
fn joint_scaling_of_noise_and_power_leaves_rate_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..30 {
        let (cfg, groups, h) = instance(&mut rng);
        let scaled = SystemConfig { noise: PerUser::Uniform(7.3), power: cfg.power * 7.3, ..cfg.clone() };
        let a = solve(Scheme::Mmf, &groups, &h, &cfg, &SolverOptions::default()).unwrap();
        let b = solve(Scheme::Mmf, &groups, &h, &scaled, &SolverOptions::default()).unwrap();
        assert!((a.r_star - b.r_star).abs() <= 1e-2 * a.r_star, "{} vs {}", a.r_star, b.r_star);
    }
}

#[test]
fn adding_a_user_rarely_raises_the_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (mut trials, mut ok) = (0, 0);
    while trials < 60 {
        let (cfg, groups, h) = instance(&mut rng);
        let s = rng.random_range(0..groups.streams());
        let outside: Vec<usize> = (0..cfg.users).filter(|u| !groups.user_sets()[s].contains(u)).collect();
        if outside.is_empty() {
            continue;
        }
        let mut sets: Vec<BTreeSet<usize>> = groups.user_sets().to_vec();
        sets[s].insert(outside[rng.random_range(0..outside.len())]);
        let bigger = ServiceGroups::new(groups.files().to_vec(), sets).unwrap();
        let before = solve(Scheme::Mmf, &groups, &h, &cfg, &SolverOptions::default()).unwrap();
        let after = solve(Scheme::Mmf, &bigger, &h, &cfg, &SolverOptions::default()).unwrap();
        trials += 1;
        if after.r_star <= before.r_star * (1.0 + 1e-2) {
            ok += 1;
        }
    }
    assert!(ok * 10 >= trials * 9, "{ok}/{trials}");
}

#[test]
fn rate_splitting_dominates_mmf_on_heterogeneous_two_group_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let cfg = SystemConfig {
        channel_gains: PerUser::Each(vec![1.0, 1.0, BAD_USER_GAIN, BAD_USER_GAIN]),
        ..config(4, 4)
    };
    let stats = ChannelStatistics::new(cfg.gain_vec()).unwrap();
    let mut ok = 0;
    for _ in 0..40 {
        let groups = ServiceGroups::random(4, 2, &mut rng).unwrap();
        let h = sample_channel(&stats, 4, &mut rng);
        let mmf = solve(Scheme::Mmf, &groups, &h, &cfg, &SolverOptions::default()).unwrap();
        let rs = solve(Scheme::MmfRs, &groups, &h, &cfg, &SolverOptions::default()).unwrap();
        if rs.spectral_rate(&cfg) >= mmf.r_star * (1.0 - 1e-3) {
            ok += 1;
        }
    }
    assert!(ok >= 38, "{ok}/40");
}

#[test]
fn sic_and_mmf_coincide_for_one_stream() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..30 {
        let (cfg, _, h) = instance(&mut rng);
        let groups = ServiceGroups::random(cfg.users, 1, &mut rng).unwrap();
        let mmf = solve(Scheme::Mmf, &groups, &h, &cfg, &SolverOptions::default()).unwrap();
        let sic = solve(Scheme::MmfSic, &groups, &h, &cfg, &SolverOptions::default()).unwrap();
        assert!((mmf.r_star - sic.r_star).abs() <= 1e-3, "{} vs {}", mmf.r_star, sic.r_star);
    }
}

#[test]
fn identical_channels_behave_like_one_user() {
    let h = ChannelMatrix::from_real_columns(&[&[0.6, 0.8], &[0.6, 0.8], &[1.0, 0.0]]).unwrap();
    let cfg = config(2, 3);
    let pair = ServiceGroups::single(0, [0, 1]).unwrap();
    let one = ServiceGroups::single(0, [0]).unwrap();
    let a = solve(Scheme::Mmf, &pair, &h, &cfg, &SolverOptions::default()).unwrap();
    let b = solve(Scheme::Mmf, &one, &h, &cfg, &SolverOptions::default()).unwrap();
    assert!((a.r_star - b.r_star).abs() < 1e-6);
    assert!((a.r_star - 11f64.log2()).abs() < 1e-3);
}

#[test]
fn sic_single_user_two_streams_reaches_capacity() {
    let h = ChannelMatrix::from_real_columns(&[&[1.0, 0.0]]).unwrap();
    let cfg = config(2, 1);
    let groups = ServiceGroups::new(vec![0, 1], vec![[0].into(), [0].into()]).unwrap();
    let sol = solve(Scheme::MmfSic, &groups, &h, &cfg, &SolverOptions::default()).unwrap();
    let total = 11f64.log2();
    assert!((sol.r_star * 2.0 - total).abs() < 1e-3, "{}", sol.r_star);
    let expected_t = 2.0 * cfg.file_bits / (cfg.bandwidth_hz * total);
    assert!((sol.t_star / expected_t - 1.0).abs() < 1e-3);
}

#[test]
fn sic_symmetric_orthogonal_users_split_evenly() {
    let h = ChannelMatrix::from_real_columns(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
    let cfg = config(2, 2);
    let groups = ServiceGroups::new(vec![0, 1], vec![[0].into(), [1].into()]).unwrap();
    let sol = solve(Scheme::MmfSic, &groups, &h, &cfg, &SolverOptions::default()).unwrap();
    let beta = sol.beta.unwrap();
    assert!((beta[0] - 0.5).abs() < 1e-2 && (beta[1] - 0.5).abs() < 1e-2, "{beta:?}");
}

#[test]
fn rate_splitting_cannot_beat_single_user_capacity() {
    let h = ChannelMatrix::from_real_columns(&[&[1.0, 0.0]]).unwrap();
    let cfg = config(2, 1);
    let groups = ServiceGroups::single(0, [0]).unwrap();
    let sol = solve(Scheme::MmfRs, &groups, &h, &cfg, &SolverOptions::default()).unwrap();
    let expected_t = cfg.file_bits / (cfg.bandwidth_hz * 11f64.log2());
    assert!((sol.t_star / expected_t - 1.0).abs() < 1e-3, "{} vs {expected_t}", sol.t_star);
}

#[test]
fn oracle_flags_inflated_power_and_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let (cfg, groups, h) = instance(&mut rng);
    for scheme in Scheme::ALL {
        let sol = solve(scheme, &groups, &h, &cfg, &SolverOptions::default()).unwrap();

        let mut louder = sol.clone();
        louder.w.iter_mut().flatten().for_each(|z| *z *= 2.0);
        let report = verify_solution(scheme, &groups, &h, &louder, &cfg);
        assert!(report.violations.iter().any(|v| v.constraint == "power"), "{scheme}");

        let mut faster = sol.clone();
        faster.r_star *= 1.1;
        faster.t_star /= 1.1;
        let report = verify_solution(scheme, &groups, &h, &faster, &cfg);
        assert!(!report.is_ok(), "{scheme}");
        assert!(report.violations.iter().all(|v| v.constraint != "power" && v.constraint != "t_star"));
    }
}

#[test]
fn redraw_free_when_first_draw_is_good() {
    let cfg = config(4, 2);
    let groups = ServiceGroups::single(0, [0, 1]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let out = service_with_redraw(&groups, &cfg, &SolverOptions::default(), &mut rng).unwrap();
    assert_eq!(out.redraws, 0);
    assert_eq!(out.total_time, out.t_star);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn every_solution_respects_power_and_fraction_bounds(seed in any::<u64>(), scheme in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (cfg, groups, h) = instance(&mut rng);
        let scheme = Scheme::ALL[scheme];
        let sol = solve(scheme, &groups, &h, &cfg, &SolverOptions::default()).unwrap();
        let power: f64 = sol.w.iter().chain(sol.w_d.iter()).flatten().map(|z| z.norm_sqr()).sum();
        prop_assert!(power <= cfg.power * (1.0 + 1e-6));
        if let Some(alpha) = &sol.alpha {
            prop_assert!(alpha.iter().all(|a| (0.0..=1.0).contains(a)));
        }
        if let Some(beta) = &sol.beta {
            prop_assert!((beta.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        prop_assert!(verify_solution(scheme, &groups, &h, &sol, &cfg).is_ok());
    }
}
