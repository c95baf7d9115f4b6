//! Fixed-point approximations of the mean sojourn time.
//!
//! Requests split into Type-1 (the request that creates a queue entry) and
//! Type-2 (requests merged into an existing entry). Type-1 requests see an
//! M/G/1-like queue with effective per-file rates `λ_i / (1 + λ_i d)`, where
//! `d` is their own mean delay; Type-2 requests wait `d/2` on average.
//! Service-time moments depend on `d` through the users merged into the
//! head-of-line entries and are estimated by Monte Carlo.

use std::collections::BTreeSet;

use rand::{Rng, RngCore};
use serde::Serialize;

use crate::beamforming::ServiceGroups;
use crate::error::{Error, Result};
use crate::model::{build_rate_matrix, QueueKind, RateMatrix, SystemConfig};
use crate::queue::QueueClass;
use crate::simulator::{substream, ServiceModel};

/// `λ / (1 + λ d)`: rate of entry-creating requests for a file with total
/// rate `λ` when such requests wait `d` on average.
pub fn effective_rate(lambda: f64, d: f64) -> f64 {
    if lambda == 0.0 {
        0.0
    } else {
        lambda / (1.0 + lambda * d)
    }
}

/// Inputs of the Type-1 delay fixed point.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointInput {
    pub streams: usize,
    /// Total request rate of each file.
    pub lambda: Vec<f64>,
    /// Mean service time, seconds.
    pub et: f64,
    /// Mean squared service time, seconds².
    pub et2: f64,
}

impl FixedPointInput {
    pub fn new(streams: usize, lambda: Vec<f64>, et: f64, et2: f64) -> Result<Self> {
        if !(et2.is_finite() && et2 >= et * et * (1.0 - 1e-12)) {
            return Err(Error::InvalidArgument(format!("ET2 = {et2} violates ET2 ≥ ET² with ET = {et}")));
        }
        Self::mixed(streams, lambda, et, et2)
    }

    /// Like [`FixedPointInput::new`] but only requires `ET2 > 0`. The
    /// dual-queue moments are sums over both classes' services, not a
    /// mixture, so `ET2 ≥ ET²` need not hold.
    pub fn mixed(streams: usize, lambda: Vec<f64>, et: f64, et2: f64) -> Result<Self> {
        if streams < 1 {
            return Err(Error::InvalidArgument("S must be ≥ 1".into()));
        }
        if !(et.is_finite() && et > 0.0) {
            return Err(Error::InvalidArgument(format!("ET must be > 0, got {et}")));
        }
        if !(et2.is_finite() && et2 > 0.0) {
            return Err(Error::InvalidArgument(format!("ET2 must be > 0, got {et2}")));
        }
        if lambda.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::InvalidArgument("file rates must be finite and ≥ 0".into()));
        }
        Ok(FixedPointInput { streams, lambda, et, et2 })
    }

    /// Sum of effective rates at delay `d`.
    pub fn lambda_prime(&self, d: f64) -> f64 {
        self.lambda.iter().map(|&l| effective_rate(l, d)).sum()
    }

    /// Utilization `ρ_d = ET · λ'(d)`.
    pub fn rho(&self, d: f64) -> f64 {
        self.et * self.lambda_prime(d)
    }

    /// The fixed-point map; infinite where `ρ_d ≥ S`.
    pub fn map(&self, d: f64) -> f64 {
        let rho = self.rho(d);
        let s = self.streams as f64;
        if rho >= s {
            return f64::INFINITY;
        }
        rho / (s - rho) * (self.et2 / (2.0 * self.et))
    }

    /// Files with a positive request rate.
    pub fn active_files(&self) -> usize {
        self.lambda.iter().filter(|l| **l > 0.0).count()
    }

    /// Every fixed point lies below `ET · N' / S + ET2 / (2 ET)`.
    pub fn upper_bound(&self) -> f64 {
        self.et * self.active_files() as f64 / self.streams as f64 + self.et2 / (2.0 * self.et)
    }

    /// Divergence guard `10 · ET · N / S`.
    pub fn guard(&self) -> f64 {
        10.0 * self.et * self.lambda.len() as f64 / self.streams as f64
    }

    /// A start with `ρ < S`: zero when admissible, else `ET · N' / S`.
    pub fn admissible_start(&self) -> f64 {
        if self.rho(0.0) < self.streams as f64 {
            0.0
        } else {
            self.et * self.active_files() as f64 / self.streams as f64
        }
    }
}

const FIXED_POINT_ITERATIONS: usize = 10_000;

/// Type-1 delay `d*` solving `d = f(d)`, iterated from `d = 0` (or from the
/// smallest admissible start when the load at zero delay exceeds `S`).
pub fn fixed_point_t1(input: &FixedPointInput, tol: f64) -> Result<f64> {
    fixed_point_t1_from(input, input.admissible_start(), tol)
}

/// As [`fixed_point_t1`], starting from `d0`.
///
/// `f(d) − d` is strictly decreasing, so every evaluation tells on which
/// side the fixed point lies. Plain steps `d ← f(d)` are taken while they
/// stay inside the bracket and halve it every two steps; otherwise the
/// bracket is bisected.
pub fn fixed_point_t1_from(input: &FixedPointInput, d0: f64, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be > 0".into()));
    }
    let (mut lo, mut hi) = (0.0, input.upper_bound());
    if !hi.is_finite() {
        return Err(Error::FixedPointDiverged { d: hi, guard: input.guard() });
    }
    let mut d = d0.clamp(lo, hi);
    let mut checkpoint = hi - lo;
    for step in 0..FIXED_POINT_ITERATIONS {
        let next = input.map(d);
        let residual = next - d;
        if residual.abs() < tol || hi - lo < tol {
            return within_guard(input, d);
        }
        if residual > 0.0 {
            lo = d;
        } else {
            hi = d;
        }
        let shrinking = step % 2 == 0 || hi - lo <= 0.5 * checkpoint;
        if step % 2 == 1 {
            checkpoint = hi - lo;
        }
        d = if shrinking && next > lo && next < hi { next } else { 0.5 * (lo + hi) };
    }
    Err(Error::NotConverged { what: "type-1 delay fixed point", iterations: FIXED_POINT_ITERATIONS })
}

fn within_guard(input: &FixedPointInput, d: f64) -> Result<f64> {
    let guard = input.guard();
    if d > guard {
        return Err(Error::FixedPointDiverged { d, guard });
    }
    Ok(d)
}

/// Mean sojourn time from the Type-1 delay, the effective and total rates
/// and the mean service time.
pub fn mean_sojourn(d_star: f64, lambda_prime: f64, lambda_total: f64, et: f64) -> f64 {
    let share = lambda_prime / lambda_total;
    share * d_star + (1.0 - share) * d_star / 2.0 + et
}

/// Stationary head-of-line user distribution at Type-1 delay `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct UserDistributionSpec {
    pub d: f64,
    pub rates: RateMatrix,
    pub streams: usize,
}

impl UserDistributionSpec {
    /// Total rate `λ_i` of every file.
    pub fn file_rates(&self) -> Vec<f64> {
        self.rates.file_rates()
    }

    pub fn lambda_prime(&self) -> Vec<f64> {
        self.file_rates().into_iter().map(|l| effective_rate(l, self.d)).collect()
    }

    /// Probability that user `k` joins the entry of `file` within `d`.
    pub fn inclusion(&self, file: usize, user: usize) -> f64 {
        1.0 - (-self.rates.rate(user, file) * self.d).exp()
    }

    /// Probability that `user` issued the Type-1 request of `file`.
    pub fn requester(&self, file: usize, user: usize) -> f64 {
        let total: f64 = (0..self.rates.users()).map(|k| self.rates.rate(k, file)).sum();
        self.rates.rate(user, file) / total
    }
}

fn categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let mut u = rng.random::<f64>() * total;
    let last = weights.iter().rposition(|w| *w > 0.0)?;
    for (i, w) in weights.iter().enumerate() {
        if *w > 0.0 && u < *w {
            return Some(i);
        }
        u -= w;
    }
    Some(last)
}

/// Draws the head-of-line files and their user sets. Uses fewer streams
/// than `S` when fewer files have a positive rate.
pub fn sample_head_users<R: Rng + ?Sized>(spec: &UserDistributionSpec, rng: &mut R) -> Result<ServiceGroups> {
    let mut weights = spec.lambda_prime();
    let active = weights.iter().filter(|w| **w > 0.0).count();
    if active == 0 {
        return Err(Error::InvalidArgument("no file has a positive request rate".into()));
    }
    let streams = spec.streams.min(active);
    let mut files = Vec::with_capacity(streams);
    let mut sets = Vec::with_capacity(streams);
    for _ in 0..streams {
        let file = categorical(&weights, rng).expect("positive weight remains");
        weights[file] = 0.0;
        let column: Vec<f64> = (0..spec.rates.users()).map(|k| spec.rates.rate(k, file)).collect();
        let first = categorical(&column, rng).expect("file has a requester");
        let mut users = BTreeSet::from([first]);
        for (k, &rate) in column.iter().enumerate() {
            if k != first && rate > 0.0 && rng.random::<f64>() < 1.0 - (-rate * spec.d).exp() {
                users.insert(k);
            }
        }
        files.push(file);
        sets.push(users);
    }
    ServiceGroups::new(files, sets)
}

/// First and second moments of the service time, seconds and seconds².
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments {
    pub mean: f64,
    pub mean_sq: f64,
}

/// Monte-Carlo service-time moments over `samples` head-of-line draws.
pub fn estimate_moments<M: ServiceModel + ?Sized>(
    spec: &UserDistributionSpec,
    model: &mut M,
    samples: usize,
    rng: &mut dyn RngCore,
) -> Result<Moments> {
    if samples < 1 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..samples {
        let groups = sample_head_users(spec, rng)?;
        let t = model.serve(&groups, rng)?.total_time;
        sum += t;
        sum_sq += t * t;
    }
    let n = samples as f64;
    // Guard the rounding that can push the sample second moment below the
    // squared mean for near-constant samples.
    let mean = sum / n;
    Ok(Moments { mean, mean_sq: (sum_sq / n).max(mean * mean) })
}

/// Mixed moments of the dual queue: the good queue sees `C − 1` of its own
/// services per bad one and the bad queue the converse.
pub fn dsmq_mixed_moments(t1: f64, t1_sq: f64, t2: f64, t2_sq: f64, cycle: usize) -> (Moments, Moments) {
    let c = cycle as f64 - 1.0;
    (
        Moments { mean: t1 + t2 / c, mean_sq: t1_sq + t2_sq / c },
        Moments { mean: t1 * c + t2, mean_sq: t1_sq * c + t2_sq },
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryOptions {
    /// Outer stopping tolerance on `d`, seconds.
    pub eps: f64,
    /// Monte-Carlo samples per moment estimate (per class for DSMQ).
    pub samples: usize,
    pub max_outer: usize,
    pub fixed_point_tol: f64,
    /// Seed of the common random stream used by every moment estimate.
    pub seed: u64,
}

impl Default for TheoryOptions {
    fn default() -> Self {
        TheoryOptions { eps: 0.1, samples: 500, max_outer: 20, fixed_point_tol: 1e-10, seed: 0 }
    }
}

/// Result for one queue.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassResult {
    /// `None` for the single queue.
    pub class: Option<QueueClass>,
    pub d_star: f64,
    /// Service moments of this class at `d_star`.
    pub moments: Moments,
    /// Moments entering the fixed point (mixed for DSMQ).
    pub fixed_point_moments: Moments,
    pub lambda: f64,
    pub lambda_prime: f64,
    pub mean_sojourn: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryResult {
    pub classes: Vec<ClassResult>,
    /// Outer iterations performed.
    pub iterations: usize,
}

impl TheoryResult {
    /// Rate-weighted mean sojourn over all classes.
    pub fn mean_sojourn(&self) -> f64 {
        let total: f64 = self.classes.iter().map(|c| c.lambda).sum();
        self.classes.iter().map(|c| c.lambda * c.mean_sojourn).sum::<f64>() / total
    }

    pub fn class(&self, class: QueueClass) -> Option<&ClassResult> {
        self.classes.iter().find(|c| c.class == Some(class))
    }
}

/// Stream of the common random numbers used by the moment estimates.
const THEORY_STREAM: u64 = 7;

fn moments_at<M: ServiceModel + ?Sized>(
    rates: &RateMatrix,
    streams: usize,
    d: f64,
    model: &mut M,
    options: &TheoryOptions,
    stream: u64,
) -> Result<Moments> {
    let spec = UserDistributionSpec { d, rates: rates.clone(), streams };
    let mut rng = substream(options.seed, stream);
    estimate_moments(&spec, model, options.samples, &mut rng)
}

/// Mean sojourn time of the single multicast queue.
///
/// Alternates the Type-1 fixed point under the current moments with a
/// re-estimation of the moments at the new delay until `d` moves less than
/// `eps`. Every estimate reuses the same random stream.
pub fn algorithm1<M: ServiceModel + ?Sized>(
    config: &SystemConfig,
    model: &mut M,
    options: &TheoryOptions,
) -> Result<TheoryResult> {
    let rates = build_rate_matrix(config)?;
    let streams = config.streams;
    let mut d = 2.0 * options.eps;
    let mut moments = moments_at(&rates, streams, d, model, options, THEORY_STREAM)?;
    for iteration in 1..=options.max_outer {
        let input = FixedPointInput::new(streams, rates.file_rates(), moments.mean, moments.mean_sq)?;
        let d_new = fixed_point_t1_from(&input, d, options.fixed_point_tol)?;
        let used = moments;
        moments = moments_at(&rates, streams, d_new, model, options, THEORY_STREAM)?;
        let moved = (d_new - d).abs();
        d = d_new;
        if moved < options.eps {
            let lambda = rates.total();
            let lambda_prime = input.lambda_prime(d);
            return Ok(TheoryResult {
                classes: vec![ClassResult {
                    class: None,
                    d_star: d,
                    moments,
                    fixed_point_moments: used,
                    lambda,
                    lambda_prime,
                    mean_sojourn: mean_sojourn(d, lambda_prime, lambda, moments.mean),
                }],
                iterations: iteration,
            });
        }
    }
    Err(Error::NotConverged { what: "algorithm 1 outer loop", iterations: options.max_outer })
}

/// Mean sojourn times of the good and bad queues of DSMQ.
pub fn algorithm2<M: ServiceModel + ?Sized>(
    config: &SystemConfig,
    model: &mut M,
    options: &TheoryOptions,
) -> Result<TheoryResult> {
    if config.cycle < 2 {
        return Err(Error::InvalidArgument("C must be ≥ 2".into()));
    }
    let rates = build_rate_matrix(config)?;
    let good = rates.restricted(|k| config.is_good(k));
    let bad = rates.restricted(|k| !config.is_good(k));
    if !(good.total() > 0.0 && bad.total() > 0.0) {
        return Err(Error::InvalidArgument("both classes need a positive request rate".into()));
    }
    let streams = config.streams;
    let mut d = [2.0 * options.eps; 2];
    let estimate = |which: usize, d: f64, model: &mut M| {
        let r = if which == 0 { &good } else { &bad };
        moments_at(r, streams, d, model, options, THEORY_STREAM + which as u64)
    };
    let mut t = [estimate(0, d[0], model)?, estimate(1, d[1], model)?];
    for iteration in 1..=options.max_outer {
        let (mix_good, mix_bad) = dsmq_mixed_moments(t[0].mean, t[0].mean_sq, t[1].mean, t[1].mean_sq, config.cycle);
        let inputs = [
            FixedPointInput::mixed(streams, good.file_rates(), mix_good.mean, mix_good.mean_sq)?,
            FixedPointInput::mixed(streams, bad.file_rates(), mix_bad.mean, mix_bad.mean_sq)?,
        ];
        let d_new = [
            fixed_point_t1_from(&inputs[0], d[0], options.fixed_point_tol)?,
            fixed_point_t1_from(&inputs[1], d[1], options.fixed_point_tol)?,
        ];
        t = [estimate(0, d_new[0], model)?, estimate(1, d_new[1], model)?];
        let moved = (d_new[0] - d[0]).abs().max((d_new[1] - d[1]).abs());
        d = d_new;
        if moved < options.eps {
            let classes = [(QueueClass::Good, &good, mix_good), (QueueClass::Bad, &bad, mix_bad)]
                .into_iter()
                .enumerate()
                .map(|(i, (class, r, mixed))| {
                    let lambda = r.total();
                    let lambda_prime = inputs[i].lambda_prime(d[i]);
                    ClassResult {
                        class: Some(class),
                        d_star: d[i],
                        moments: t[i],
                        fixed_point_moments: mixed,
                        lambda,
                        lambda_prime,
                        mean_sojourn: mean_sojourn(d[i], lambda_prime, lambda, t[i].mean),
                    }
                })
                .collect();
            return Ok(TheoryResult { classes, iterations: iteration });
        }
    }
    Err(Error::NotConverged { what: "algorithm 2 outer loop", iterations: options.max_outer })
}

/// The approximation matching the configured discipline, if there is one.
pub fn theory_for<M: ServiceModel + ?Sized>(
    config: &SystemConfig,
    model: &mut M,
    options: &TheoryOptions,
) -> Option<Result<TheoryResult>> {
    match config.queue_kind {
        QueueKind::Smq => Some(algorithm1(config, model, options)),
        QueueKind::Dsmq => Some(algorithm2(config, model, options)),
        QueueKind::Loopback | QueueKind::TwoQSimultaneous => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::ConstantService;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn effective_rate_examples() {
        assert_eq!(effective_rate(3.0, 0.0), 3.0);
        assert_eq!(effective_rate(0.0, 5.0), 0.0);
        assert_eq!(effective_rate(2.0, 0.5), 1.0);
    }

    #[test]
    fn fixed_point_trivial_cases() {
        let idle = FixedPointInput::new(1, vec![0.0; 5], 0.2, 0.04).unwrap();
        assert_eq!(fixed_point_t1(&idle, 1e-12).unwrap(), 0.0);
        let tiny = FixedPointInput::new(1, vec![1.0; 5], 1e-9, 1e-18).unwrap();
        assert!(fixed_point_t1(&tiny, 1e-15).unwrap() < 1e-8);
    }

    #[test]
    fn rejects_jensen_violation() {
        assert!(FixedPointInput::new(1, vec![1.0], 1.0, 0.5).is_err());
    }

    #[test]
    fn mean_sojourn_examples() {
        assert_eq!(mean_sojourn(2.0, 5.0, 5.0, 1.0), 3.0);
        assert_eq!(mean_sojourn(2.0, 0.0, 5.0, 1.0), 2.0);
        assert_eq!(mean_sojourn(0.0, 3.0, 5.0, 1.5), 1.5);
    }

    #[test]
    fn mixed_moment_examples() {
        let (g, b) = dsmq_mixed_moments(1.0, 2.0, 3.0, 10.0, 2);
        assert_eq!((g.mean, b.mean), (4.0, 4.0));
        let (g, b) = dsmq_mixed_moments(1.5, 3.0, 0.0, 0.0, 5);
        assert_eq!((g.mean, g.mean_sq, b.mean, b.mean_sq), (1.5, 3.0, 6.0, 12.0));
        let (g, _) = dsmq_mixed_moments(1.5, 3.0, 2.0, 5.0, 1_000_001);
        assert!((g.mean - 1.5).abs() < 1e-5);
    }

    fn spec(d: f64, files: usize, users: usize, streams: usize) -> UserDistributionSpec {
        let rows = (0..users).map(|k| (0..files).map(|n| 0.5 + (k + n) as f64 * 0.25).collect()).collect();
        UserDistributionSpec { d, rates: RateMatrix::from_rows(rows).unwrap(), streams }
    }

    #[test]
    fn single_file_is_always_drawn() {
        let s = spec(0.3, 1, 3, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            assert_eq!(sample_head_users(&s, &mut rng).unwrap().files(), &[0]);
        }
    }

    #[test]
    fn zero_delay_keeps_only_the_requester() {
        let s = spec(0.0, 4, 5, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let g = sample_head_users(&s, &mut rng).unwrap();
            assert_eq!(g.streams(), 2);
            assert!(g.user_sets().iter().all(|u| u.len() == 1));
        }
    }

    #[test]
    fn long_delay_includes_everyone() {
        let s = spec(1e6, 3, 4, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            assert_eq!(sample_head_users(&s, &mut rng).unwrap().user_sets()[0].len(), 4);
        }
    }

    #[test]
    fn fewer_streams_when_few_files_are_active() {
        let rates = RateMatrix::from_rows(vec![vec![1.0, 0.0, 0.0]]).unwrap();
        let s = UserDistributionSpec { d: 0.1, rates, streams: 3 };
        let g = sample_head_users(&s, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(g.files(), &[0]);
    }

    #[test]
    fn constant_service_moments() {
        let s = spec(0.2, 3, 2, 1);
        let mut model = ConstantService { time: 2.0, rate: 1.0 };
        let m = estimate_moments(&s, &mut model, 10, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!((m.mean, m.mean_sq), (2.0, 4.0));
    }

    #[test]
    fn algorithm1_with_constant_service_is_the_closed_composition() {
        let config = SystemConfig { lambda_total: 4.0, ..SystemConfig::default() };
        let mut model = ConstantService { time: 0.15, rate: 1.0 };
        let result = algorithm1(&config, &mut model, &TheoryOptions::default()).unwrap();
        let rates = build_rate_matrix(&config).unwrap();
        let input = FixedPointInput::new(1, rates.file_rates(), 0.15, 0.0225).unwrap();
        let d = fixed_point_t1(&input, 1e-12).unwrap();
        let expected = mean_sojourn(d, input.lambda_prime(d), rates.total(), 0.15);
        let got = &result.classes[0];
        assert!((got.d_star - d).abs() < 1e-9);
        assert!((got.mean_sojourn - expected).abs() < 1e-9);
    }
}
