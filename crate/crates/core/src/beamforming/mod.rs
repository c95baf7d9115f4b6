//! Multicast beamforming for the three transmission schemes.
//!
//! Each solve runs a multi-start local search over the symmetric-rate
//! reformulation, then recomputes the achievable rate of the returned
//! beams from the raw channel. `r_star` is always that recomputed value.

mod formulation;
mod groups;
mod optimizer;
mod starts;
mod verify;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::channel::{sample_channel, ChannelMatrix, ChannelStatistics};
use crate::error::{Error, Result};
use crate::model::{Scheme, SystemConfig};

use formulation::Formulation;
use optimizer::{advance, Run, Schedule};

pub use groups::{ServiceGroups, MAX_STREAMS};
pub use verify::{verify_solution, ConstraintViolation, VerifyReport, FEASIBILITY_TOLERANCE};

/// Beams and rates of one transmission.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BeamformerSolution {
    pub scheme: Scheme,
    /// One precoder per stream, in the order of the service groups.
    pub w: Vec<Vec<Complex64>>,
    /// Degraded-stream precoder (rate splitting only).
    pub w_d: Option<Vec<Complex64>>,
    /// Fraction of each file sent on the degraded stream (rate splitting only).
    pub alpha: Option<Vec<f64>>,
    /// Share of the sum rate carried by each stream (SIC only).
    pub beta: Option<Vec<f64>>,
    /// Symmetric rate: bits/s/Hz per stream for MMF and MMF-SIC, 1/s for MMF-RS.
    pub r_star: f64,
    /// Service time in seconds; infinite for the degenerate solution.
    pub t_star: f64,
    /// `(user, R_k)` with `R_k` the per-stream rate in bits/s/Hz the user
    /// can decode at these beams.
    pub per_user_rates: Vec<(usize, f64)>,
}

impl BeamformerSolution {
    /// Rate of the transmission as `1/T*`, in 1/s.
    pub fn service_rate(&self) -> f64 {
        if self.t_star.is_finite() {
            1.0 / self.t_star
        } else {
            0.0
        }
    }

    /// Symmetric rate in bits/s/Hz, comparable across schemes.
    pub fn spectral_rate(&self, config: &SystemConfig) -> f64 {
        match self.scheme {
            Scheme::MmfRs => self.r_star * config.time_scale(),
            _ => self.r_star,
        }
    }

    pub fn rate_of(&self, user: usize) -> Option<f64> {
        self.per_user_rates.iter().find(|(u, _)| *u == user).map(|(_, r)| *r)
    }
}

/// Knobs of the multi-start solver.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub starts: usize,
    /// Sharpening stages every start runs before screening.
    pub screen_stages: usize,
    /// Starts kept after screening and run to completion.
    pub polish: usize,
    pub stages: usize,
    /// Iteration cap per start.
    pub max_iterations: usize,
    /// Relative convergence tolerance of each stage.
    pub tolerance: f64,
    /// Seed of the random starts.
    pub seed: u64,
    /// Cap on consecutive redraws before giving up.
    pub max_redraws: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        let schedule = Schedule::default();
        SolverOptions {
            starts: 8,
            screen_stages: 2,
            polish: 2,
            stages: schedule.stages,
            max_iterations: schedule.max_iterations,
            tolerance: schedule.tolerance,
            seed: 0x5eed_beef,
            max_redraws: 1000,
        }
    }
}

impl SolverOptions {
    fn schedule(&self) -> Schedule {
        Schedule {
            stages: self.stages,
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
            ..Schedule::default()
        }
    }
}

/// SINR of stream `stream` at `user`. Only streams outside `wanted` interfere.
pub fn sinr_mmf(
    channel: &ChannelMatrix,
    w: &[Vec<Complex64>],
    user: usize,
    stream: usize,
    wanted: &[usize],
    noise: f64,
) -> f64 {
    let signal = channel.gain(user, &w[stream]).norm_sqr();
    let interference: f64 = (0..w.len())
        .filter(|t| !wanted.contains(t))
        .map(|t| channel.gain(user, &w[t]).norm_sqr())
        .sum();
    signal / (noise + interference)
}

/// SINR of the degraded stream at `user`; every designated stream interferes.
pub fn sinr_degraded(
    channel: &ChannelMatrix,
    w_d: &[Complex64],
    w: &[Vec<Complex64>],
    user: usize,
    noise: f64,
) -> f64 {
    let signal = channel.gain(user, w_d).norm_sqr();
    let interference: f64 = w.iter().map(|ws| channel.gain(user, ws).norm_sqr()).sum();
    signal / (noise + interference)
}

/// Record of one multi-start solve.
#[derive(Debug, Clone, Serialize)]
pub struct SolveTrace {
    pub scheme: Scheme,
    pub streams: usize,
    pub users: usize,
    pub antennas: usize,
    pub starts: Vec<StartRecord>,
    pub chosen: Option<String>,
    pub r_star: f64,
    pub t_star: f64,
    pub max_violation: f64,
    /// Violations of the best start; nonempty means the degenerate
    /// solution was returned.
    pub violations: Vec<ConstraintViolation>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StartRecord {
    pub label: String,
    pub initial: f64,
    pub screened: f64,
    /// Objective after polishing, if the start survived screening.
    pub polished: Option<f64>,
    pub iterations: usize,
}

impl SolveTrace {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trace is serializable")
    }
}

pub fn solve_mmf(groups: &ServiceGroups, channel: &ChannelMatrix, config: &SystemConfig) -> Result<BeamformerSolution> {
    solve(Scheme::Mmf, groups, channel, config, &SolverOptions::default())
}

pub fn solve_mmf_sic(groups: &ServiceGroups, channel: &ChannelMatrix, config: &SystemConfig) -> Result<BeamformerSolution> {
    solve(Scheme::MmfSic, groups, channel, config, &SolverOptions::default())
}

pub fn solve_mmf_rs(groups: &ServiceGroups, channel: &ChannelMatrix, config: &SystemConfig) -> Result<BeamformerSolution> {
    solve(Scheme::MmfRs, groups, channel, config, &SolverOptions::default())
}

pub fn solve(
    scheme: Scheme,
    groups: &ServiceGroups,
    channel: &ChannelMatrix,
    config: &SystemConfig,
    options: &SolverOptions,
) -> Result<BeamformerSolution> {
    solve_traced(scheme, groups, channel, config, options).map(|(s, _)| s)
}

pub fn solve_traced(
    scheme: Scheme,
    groups: &ServiceGroups,
    channel: &ChannelMatrix,
    config: &SystemConfig,
    options: &SolverOptions,
) -> Result<(BeamformerSolution, SolveTrace)> {
    check_inputs(groups, channel, config)?;
    let noise = config.noise_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let schedule = options.schedule();
    let s = groups.streams();

    let base = base_starts(groups, channel, &noise, config.power, options.starts.max(1), &mut rng);
    let mut records = Vec::new();
    let mut form = Formulation::new(Scheme::Mmf, groups, channel, &noise, config.power);

    let (mut form, starts) = match scheme {
        Scheme::Mmf => {
            let starts = base.into_iter().map(|(label, b)| (label, starts::pack(&b, &vec![1.0; s], &[]))).collect();
            (form, starts)
        }
        Scheme::MmfSic => {
            let starts = base
                .into_iter()
                .map(|(label, b)| (label, starts::pack(&b, &vec![1.0; s], &vec![0.0; s])))
                .collect();
            (Formulation::new(Scheme::MmfSic, groups, channel, &noise, config.power), starts)
        }
        Scheme::MmfRs => {
            // The MMF optimum with nothing on the degraded stream is feasible
            // for rate splitting, so it seeds the search.
            let mmf_starts: Vec<_> =
                base.iter().map(|(label, b)| (label.clone(), starts::pack(b, &vec![1.0; s], &[]))).collect();
            let (mmf_x, mmf_records) = multistart(&mut form, mmf_starts, options, &schedule);
            records.extend(mmf_records.into_iter().map(|mut r| {
                r.label = format!("mmf/{}", r.label);
                r
            }));
            let mmf_beams = form.beams_of(&mmf_x);
            let common = starts::mrt(&ServiceGroups::single(0, groups.all_users())?, channel).remove(0);
            let with_common = |beams: &[Vec<Complex64>], weight: f64| {
                let mut b = beams.to_vec();
                b.push(common.clone());
                let mut w = vec![1.0; s];
                w.push(weight);
                b.iter_mut().take(s).for_each(|v| normalize(v));
                (b, w)
            };
            let mut starts = Vec::new();
            let (b, w) = with_common(&mmf_beams, 0.0);
            starts.push(("embedded-mmf".to_string(), starts::pack(&b, &w, &vec![0.0; s])));
            let (b, w) = with_common(&mmf_beams, 0.3);
            starts.push(("mmf+common".to_string(), starts::pack(&b, &w, &vec![0.3; s])));
            for (i, (label, beams)) in base.into_iter().enumerate() {
                let theta = if i % 2 == 0 { std::f64::consts::FRAC_PI_4 } else { 1.2 };
                let (b, w) = with_common(&beams, 1.0);
                starts.push((format!("{label}+common"), starts::pack(&b, &w, &vec![theta; s])));
            }
            starts.truncate(options.starts.max(2));
            (Formulation::new(Scheme::MmfRs, groups, channel, &noise, config.power), starts)
        }
    };

    let (best_x, run_records) = multistart(&mut form, starts, options, &schedule);
    let chosen = run_records
        .iter()
        .max_by(|a, b| a.best().total_cmp(&b.best()))
        .map(|r| r.label.clone());
    records.extend(run_records);

    let solution = finish_solution(&mut form, scheme, groups, channel, config, &noise, &best_x);
    let report = verify_solution(scheme, groups, channel, &solution, config);
    let solution = if report.is_ok() { solution } else { degenerate(scheme, groups, channel, config) };
    let trace = SolveTrace {
        scheme,
        streams: s,
        users: groups.all_users().len(),
        antennas: channel.antennas(),
        starts: records,
        chosen,
        r_star: solution.r_star,
        t_star: solution.t_star,
        max_violation: report.max_violation,
        violations: report.violations,
    };
    Ok((solution, trace))
}

impl StartRecord {
    fn best(&self) -> f64 {
        self.polished.unwrap_or(self.screened)
    }
}

fn normalize(v: &mut [Complex64]) {
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|z| *z /= norm);
    }
}

fn check_inputs(groups: &ServiceGroups, channel: &ChannelMatrix, config: &SystemConfig) -> Result<()> {
    if channel.antennas() != config.antennas || channel.users() != config.users {
        return Err(Error::InvalidArgument(format!(
            "channel is {}x{}, config expects L={} K={}",
            channel.antennas(),
            channel.users(),
            config.antennas,
            config.users
        )));
    }
    if let Some(u) = groups.all_users().into_iter().find(|&u| u >= config.users) {
        return Err(Error::InvalidArgument(format!("user {u} out of range for K={}", config.users)));
    }
    if !(config.power > 0.0) {
        return Err(Error::InvalidArgument("power must be > 0".into()));
    }
    Ok(())
}

fn base_starts<R: Rng + ?Sized>(
    groups: &ServiceGroups,
    channel: &ChannelMatrix,
    noise: &[f64],
    power: f64,
    count: usize,
    rng: &mut R,
) -> Vec<(String, starts::Beams)> {
    let s = groups.streams();
    let l = channel.antennas();
    let users = groups.all_users();
    let mut out = Vec::new();
    let mrt = starts::mrt(groups, channel);
    out.push(("mrt".to_string(), mrt.clone()));
    let mean_noise = users.iter().map(|&u| noise[u]).sum::<f64>() / users.len() as f64;
    if l >= users.len() {
        if let Some(zf) = starts::regularized_zf(groups, channel, 1e-9 * mean_noise / power) {
            out.push(("zf".to_string(), zf));
        }
    }
    if let Some(rzf) = starts::regularized_zf(groups, channel, users.len() as f64 * mean_noise / power) {
        out.push(("rzf".to_string(), rzf));
    }
    out.push(("weak-mrt".to_string(), starts::weak_weighted_mrt(groups, channel)));
    let mut i = 0;
    while out.len() < count {
        if i % 2 == 0 {
            out.push((format!("perturbed-{i}"), starts::perturbed(&mrt, 0.5, rng)));
        } else {
            out.push((format!("random-{i}"), starts::random(s, l, rng)));
        }
        i += 1;
    }
    out.truncate(count);
    out
}

/// Screens every start for a few stages, then polishes the best ones.
fn multistart(
    form: &mut Formulation,
    starts: Vec<(String, Vec<f64>)>,
    options: &SolverOptions,
    schedule: &Schedule,
) -> (Vec<f64>, Vec<StartRecord>) {
    let mut runs: Vec<(String, f64, Run)> = starts
        .into_iter()
        .map(|(label, x)| {
            let run = Run::new(form, x);
            (label, run.best, run)
        })
        .collect();
    for (_, _, run) in runs.iter_mut() {
        advance(form, run, schedule, options.screen_stages.min(schedule.stages));
    }
    let mut order: Vec<usize> = (0..runs.len()).collect();
    order.sort_by(|&a, &b| runs[b].2.best.total_cmp(&runs[a].2.best));
    let screened: Vec<f64> = runs.iter().map(|r| r.2.best).collect();
    let keep = options.polish.max(1);
    for &i in order.iter().take(keep) {
        advance(form, &mut runs[i].2, schedule, schedule.stages);
    }
    let best = order
        .iter()
        .take(keep)
        .copied()
        .max_by(|&a, &b| runs[a].2.best.total_cmp(&runs[b].2.best))
        .unwrap_or(0);
    let records = runs
        .iter()
        .enumerate()
        .map(|(i, (label, initial, run))| StartRecord {
            label: label.clone(),
            initial: *initial,
            screened: screened[i],
            polished: order.iter().take(keep).any(|&j| j == i).then_some(run.best),
            iterations: run.iterations,
        })
        .collect();
    (runs[best].2.best_x.clone(), records)
}

fn finish_solution(
    form: &mut Formulation,
    scheme: Scheme,
    groups: &ServiceGroups,
    channel: &ChannelMatrix,
    config: &SystemConfig,
    noise: &[f64],
    x: &[f64],
) -> BeamformerSolution {
    let s = groups.streams();
    let mut beams = form.beams_of(x);
    let fractions = form.fractions_of(&x[form.beam_len()..]);
    let w_d = (scheme == Scheme::MmfRs).then(|| beams.pop().expect("degraded beam"));
    let rate = verify::achievable(&verify::constraints(scheme, groups, channel, noise, &beams, w_d.as_deref(), &fractions));
    if !(rate.is_finite() && rate > 0.0) {
        return degenerate(scheme, groups, channel, config);
    }
    let per_stream = |v: f64| if scheme == Scheme::MmfSic { v / s as f64 } else { v };
    let per_user_rates = form.user_rates(x).into_iter().map(|(u, r)| (u, per_stream(r))).collect();
    let (r_star, t_star) = match scheme {
        Scheme::Mmf => (rate, config.time_scale() / rate),
        Scheme::MmfSic => {
            let r = rate / s as f64;
            (r, config.time_scale() / r)
        }
        Scheme::MmfRs => {
            let r = rate / config.time_scale();
            (r, 1.0 / r)
        }
    };
    BeamformerSolution {
        scheme,
        w: beams,
        w_d,
        alpha: (scheme == Scheme::MmfRs).then_some(fractions.clone()),
        beta: (scheme == Scheme::MmfSic).then_some(fractions),
        r_star,
        t_star,
        per_user_rates,
    }
}

/// All-zero beams: always feasible, with rate zero.
fn degenerate(scheme: Scheme, groups: &ServiceGroups, channel: &ChannelMatrix, _config: &SystemConfig) -> BeamformerSolution {
    let s = groups.streams();
    let zero = vec![Complex64::new(0.0, 0.0); channel.antennas()];
    BeamformerSolution {
        scheme,
        w: vec![zero.clone(); s],
        w_d: (scheme == Scheme::MmfRs).then_some(zero),
        alpha: (scheme == Scheme::MmfRs).then(|| vec![0.0; s]),
        beta: (scheme == Scheme::MmfSic).then(|| vec![1.0 / s as f64; s]),
        r_star: 0.0,
        t_star: f64::INFINITY,
        per_user_rates: groups.all_users().into_iter().map(|u| (u, 0.0)).collect(),
    }
}

/// Outcome of one service under the redraw rule.
#[derive(Debug, Clone)]
pub struct ServiceOutcome<T> {
    pub value: T,
    /// Idle waits plus the final transmission, in seconds.
    pub total_time: f64,
    pub redraws: usize,
    /// Service time of the final transmission.
    pub t_star: f64,
}

/// Retries `attempt` until it yields a service time `T*` with
/// `1/T* ≥ r_eps`; each failure costs an idle wait of `1/r_eps`.
pub fn redraw_loop<T>(
    r_eps: f64,
    max_redraws: usize,
    mut attempt: impl FnMut() -> Result<(T, f64)>,
) -> Result<ServiceOutcome<T>> {
    if !(r_eps > 0.0) {
        return Err(Error::InvalidArgument("r_eps must be > 0".into()));
    }
    let mut redraws = 0;
    loop {
        let (value, t_star) = attempt()?;
        if t_star.is_finite() && t_star > 0.0 && 1.0 / t_star >= r_eps {
            return Ok(ServiceOutcome { value, total_time: redraws as f64 / r_eps + t_star, redraws, t_star });
        }
        if redraws >= max_redraws {
            return Err(Error::RedrawCapExceeded { redraws, r_eps });
        }
        redraws += 1;
    }
}

/// Draws channels and solves the configured scheme under the redraw rule.
pub fn service_with_redraw<R: Rng + ?Sized>(
    groups: &ServiceGroups,
    config: &SystemConfig,
    options: &SolverOptions,
    rng: &mut R,
) -> Result<ServiceOutcome<BeamformerSolution>> {
    let stats = ChannelStatistics::new(config.gain_vec())?;
    redraw_loop(config.r_eps, options.max_redraws, || {
        let h = sample_channel(&stats, config.antennas, rng);
        let solution = solve(config.scheme, groups, &h, config, options)?;
        let t = solution.t_star;
        Ok((solution, t))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(l: usize, k: usize, p: f64) -> SystemConfig {
        SystemConfig {
            antennas: l,
            users: k,
            power: p,
            file_bits: 1e8,
            bandwidth_hz: 1e8,
            ..SystemConfig::default()
        }
    }

    #[test]
    fn sinr_examples() {
        let h = ChannelMatrix::from_real_columns(&[&[1.0, 0.0]]).unwrap();
        let c = |re: f64| Complex64::new(re, 0.0);
        let w = vec![vec![c(1.0), c(0.0)], vec![c(0.0), c(0.0)]];
        assert_eq!(sinr_mmf(&h, &w, 0, 0, &[0], 1.0), 1.0);
        let w2 = vec![vec![c(1.0), c(0.0)], vec![c(1.0), c(0.0)]];
        assert_eq!(sinr_mmf(&h, &w2, 0, 0, &[0, 1], 1.0), 1.0);
        assert_eq!(sinr_mmf(&h, &w2, 0, 0, &[0], 1.0), 0.5);
        let orth = vec![vec![c(0.0), c(1.0)]];
        assert_eq!(sinr_mmf(&h, &orth, 0, 0, &[0], 1.0), 0.0);
        let wd = vec![c(1.0), c(0.0)];
        assert_eq!(sinr_degraded(&h, &wd, &[vec![c(0.0), c(0.0)]], 0, 1.0), 1.0);
        assert_eq!(sinr_degraded(&h, &[c(0.0), c(0.0)], &w, 0, 1.0), 0.0);
        assert_eq!(sinr_degraded(&h, &wd, &[vec![c(1.0), c(0.0)]], 0, 1.0), 0.5);
    }

    #[test]
    fn single_user_capacity() {
        let h = ChannelMatrix::from_real_columns(&[&[1.0, 0.0]]).unwrap();
        let g = ServiceGroups::single(0, [0]).unwrap();
        let cfg = config(2, 1, 10.0);
        let sol = solve_mmf(&g, &h, &cfg).unwrap();
        assert!((sol.r_star - 11f64.log2()).abs() < 1e-6, "{}", sol.r_star);
        assert!(verify_solution(Scheme::Mmf, &g, &h, &sol, &cfg).is_ok());
    }

    #[test]
    fn orthogonal_two_streams() {
        let h = ChannelMatrix::from_real_columns(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
        let g = ServiceGroups::new(vec![0, 1], vec![[0].into(), [1].into()]).unwrap();
        let cfg = config(2, 2, 10.0);
        let sol = solve_mmf(&g, &h, &cfg).unwrap();
        assert!((sol.r_star - 6f64.log2()).abs() < 1e-5, "{}", sol.r_star);
    }

    #[test]
    fn redraw_loop_counts_waits() {
        let mut times = vec![f64::INFINITY, 5.0].into_iter();
        let out = redraw_loop(0.01, 10, || Ok(((), times.next().unwrap()))).unwrap();
        assert_eq!(out.redraws, 1);
        assert!((out.total_time - 105.0).abs() < 1e-12);
        let capped = redraw_loop(0.01, 3, || Ok(((), 1e9)));
        assert!(matches!(capped, Err(Error::RedrawCapExceeded { redraws: 3, .. })));
    }
}
