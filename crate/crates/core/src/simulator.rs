//! Discrete-event simulation of the multicast downlink.
//!
//! Two event sources drive the loop: the next Poisson arrival and the
//! completion of the transmission in service. Arrivals and channel draws use
//! separate random streams derived from the seed, so runs that differ only
//! in scheme or discipline see the same arrival sequence.

use std::collections::BTreeSet;
use std::io::Write;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, weighted::WeightedIndex};
use rayon::prelude::*;
use serde::Serialize;

use crate::beamforming::{self, ServiceGroups, SolverOptions};
use crate::channel::{sample_channel, ChannelStatistics};
use crate::error::{Error, Result};
use crate::model::{build_rate_matrix, QueueKind, SystemConfig};
use crate::queue::{
    dsmq_pick, loopback_filter, loopback_service_time, two_q_pick, Completion, DsmqPick, DualQueueState, EntryId,
    MulticastQueue, QueueClass, QueueEntry, Request,
};

const ARRIVAL_STREAM: u64 = 0;
const SERVICE_STREAM: u64 = 1;

/// Random stream `stream` of `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Time one transmission occupies the server.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServiceResult {
    /// Idle redraw periods plus the transmission, in seconds.
    pub total_time: f64,
    /// Transmission time of the final draw.
    pub t_star: f64,
    pub redraws: usize,
}

/// How a set of head-of-line groups is transmitted.
pub trait ServiceModel {
    /// Serves `groups` under the redraw rule.
    fn serve(&mut self, groups: &ServiceGroups, rng: &mut dyn RngCore) -> Result<ServiceResult>;

    /// Per-user symmetric rates (bits/s/Hz) of one channel draw, for loopback.
    fn user_rates(&mut self, groups: &ServiceGroups, rng: &mut dyn RngCore) -> Result<Vec<(usize, f64)>>;
}

/// Fresh Rayleigh channel and a beamforming solve per transmission.
#[derive(Debug, Clone)]
pub struct BeamformingService {
    config: SystemConfig,
    stats: ChannelStatistics,
    pub options: SolverOptions,
}

impl BeamformingService {
    pub fn new(config: &SystemConfig) -> Result<Self> {
        Ok(BeamformingService {
            config: config.clone(),
            stats: ChannelStatistics::new(config.gain_vec())?,
            options: SolverOptions::default(),
        })
    }
}

impl ServiceModel for BeamformingService {
    fn serve(&mut self, groups: &ServiceGroups, rng: &mut dyn RngCore) -> Result<ServiceResult> {
        let out = beamforming::service_with_redraw(groups, &self.config, &self.options, rng)?;
        Ok(ServiceResult { total_time: out.total_time, t_star: out.t_star, redraws: out.redraws })
    }

    fn user_rates(&mut self, groups: &ServiceGroups, rng: &mut dyn RngCore) -> Result<Vec<(usize, f64)>> {
        let h = sample_channel(&self.stats, self.config.antennas, rng);
        let solution = beamforming::solve(self.config.scheme, groups, &h, &self.config, &self.options)?;
        Ok(solution.per_user_rates)
    }
}

/// Deterministic service time and a fixed rate for every user.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantService {
    pub time: f64,
    pub rate: f64,
}

impl ServiceModel for ConstantService {
    fn serve(&mut self, _: &ServiceGroups, _: &mut dyn RngCore) -> Result<ServiceResult> {
        Ok(ServiceResult { total_time: self.time, t_star: self.time, redraws: 0 })
    }

    fn user_rates(&mut self, groups: &ServiceGroups, _: &mut dyn RngCore) -> Result<Vec<(usize, f64)>> {
        Ok(groups.all_users().into_iter().map(|u| (u, self.rate)).collect())
    }
}

/// Service time and per-user rates given by closures, for tests.
pub struct FnService<S, U> {
    pub serve: S,
    pub rates: U,
}

impl<S, U> ServiceModel for FnService<S, U>
where
    S: FnMut(&ServiceGroups, &mut dyn RngCore) -> f64,
    U: FnMut(&ServiceGroups, &mut dyn RngCore) -> Vec<(usize, f64)>,
{
    fn serve(&mut self, groups: &ServiceGroups, rng: &mut dyn RngCore) -> Result<ServiceResult> {
        let t = (self.serve)(groups, rng);
        Ok(ServiceResult { total_time: t, t_star: t, redraws: 0 })
    }

    fn user_rates(&mut self, groups: &ServiceGroups, rng: &mut dyn RngCore) -> Result<Vec<(usize, f64)>> {
        Ok((self.rates)(groups, rng))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EventKind {
    Arrival,
    ServiceComplete,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventPayload {
    Request(Request),
    /// Entries whose transmission just finished.
    Entries(Vec<QueueEntry>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub kind: EventKind,
    pub time: f64,
    pub payload: EventPayload,
}

/// Queue state of one discipline.
#[derive(Debug, Clone)]
pub enum QueueState {
    Single(MulticastQueue),
    Dual(DualQueueState),
}

impl QueueState {
    /// Every queue with its class (`None` for single-queue disciplines).
    pub fn queues(&self) -> Vec<(Option<QueueClass>, &MulticastQueue)> {
        match self {
            QueueState::Single(q) => vec![(None, q)],
            QueueState::Dual(d) => vec![(Some(QueueClass::Good), &d.good), (Some(QueueClass::Bad), &d.bad)],
        }
    }

    fn queue_mut(&mut self, class: Option<QueueClass>) -> &mut MulticastQueue {
        match (self, class) {
            (QueueState::Single(q), _) => q,
            (QueueState::Dual(d), Some(c)) => d.queue_mut(c),
            (QueueState::Dual(d), None) => &mut d.good,
        }
    }

    fn enqueue(&mut self, request: Request) -> Result<()> {
        match self {
            QueueState::Single(q) => q.enqueue(request),
            QueueState::Dual(d) => d.enqueue(request).map(|_| ()),
        }
    }

    fn is_empty(&self) -> bool {
        match self {
            QueueState::Single(q) => q.is_empty(),
            QueueState::Dual(d) => d.is_empty(),
        }
    }
}

/// What the observer sees after each processed event.
pub struct Observation<'a> {
    pub event: &'a Event,
    pub state: &'a QueueState,
    /// Samples emitted by a completion.
    pub completions: &'a [Completion],
    /// Server occupancy of the transmission that just completed.
    pub service_time: Option<f64>,
    /// Requests looped back by a loopback transmission.
    pub looped: &'a [Request],
}

/// One sojourn sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    /// Index of the completing transmission (0-based, warmup included).
    pub service_index: usize,
    pub user: usize,
    pub file: usize,
    /// Class of the user; `None` in homogeneous runs.
    pub class: Option<QueueClass>,
    pub t_arrival: f64,
    pub sojourn: f64,
}

/// Statistics of one simulation run over the measured window.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayReport {
    pub seed: u64,
    pub samples: Vec<Sample>,
    pub mean_sojourn: f64,
    pub mean_good: Option<f64>,
    pub mean_bad: Option<f64>,
    /// Measured transmissions.
    pub services: usize,
    /// Server occupancy of each measured transmission.
    pub service_times: Vec<f64>,
    /// Transmission time of the final draw of each measured transmission.
    pub t_stars: Vec<f64>,
    pub redraws: Vec<usize>,
    /// Arrivals generated over the whole run.
    pub arrivals: usize,
    /// Start of the first measured transmission.
    pub window_start: f64,
    pub end_time: f64,
}

impl DelayReport {
    pub fn mean_service_time(&self) -> f64 {
        mean(&self.service_times).unwrap_or(f64::NAN)
    }

    pub fn max_service_time(&self) -> f64 {
        self.service_times.iter().copied().fold(f64::NAN, f64::max)
    }

    /// Fraction of the measured window the server spends transmitting or
    /// waiting out redraws.
    pub fn utilization(&self) -> f64 {
        self.service_times.iter().sum::<f64>() / (self.end_time - self.window_start)
    }

    pub fn class_mean(&self, class: Option<QueueClass>) -> Option<f64> {
        match class {
            None => Some(self.mean_sojourn),
            Some(QueueClass::Good) => self.mean_good,
            Some(QueueClass::Bad) => self.mean_bad,
        }
    }

    /// One CSV row per sample.
    pub fn write_samples_csv<W: Write>(&self, replication: usize, writer: &mut csv::Writer<W>) -> Result<()> {
        for s in &self.samples {
            writer.write_record([
                replication.to_string(),
                s.service_index.to_string(),
                s.user.to_string(),
                s.file.to_string(),
                s.class.map_or("all", QueueClass::as_str).to_string(),
                format!("{}", s.sojourn),
            ])?;
        }
        Ok(())
    }
}

/// Header of the per-sample CSV.
pub const SAMPLE_CSV_HEADER: [&str; 6] = ["replication", "service_index", "user", "file", "class", "sojourn_s"];

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOptions {
    pub n_services: usize,
    /// Leading transmissions excluded from the statistics.
    pub warmup_services: usize,
    pub seed: u64,
    /// Stop arrivals after `n_services` transmissions and serve whatever is
    /// left, so that every arrival produces a sample.
    pub drain: bool,
}

impl SimulationOptions {
    /// `n_services` with the default 10% warmup.
    pub fn new(n_services: usize, seed: u64) -> Self {
        SimulationOptions { n_services, warmup_services: default_warmup(n_services), seed, drain: false }
    }
}

pub fn default_warmup(n_services: usize) -> usize {
    n_services / 10
}

enum InService {
    Single(Vec<EntryId>),
    Dual(Vec<(QueueClass, EntryId)>),
    Loopback { ids: Vec<EntryId>, rates: Vec<(usize, f64)> },
}

struct Engine<'m, M: ?Sized> {
    config: SystemConfig,
    model: &'m mut M,
    state: QueueState,
    service_rng: ChaCha8Rng,
    busy: Option<(f64, f64, InService)>,
    started: usize,
    completed: usize,
    options: SimulationOptions,
    report: DelayReport,
    good_classes: bool,
}

/// Simulates `config` with a beamforming solve per transmission.
pub fn run_simulation(config: &SystemConfig, n_services: usize, warmup_services: usize, seed: u64) -> Result<DelayReport> {
    let mut model = BeamformingService::new(config)?;
    let options = SimulationOptions { n_services, warmup_services, seed, drain: false };
    simulate(config, &mut model, &options, |_| {})
}

/// Simulates `config` with an arbitrary service model, calling `observe`
/// after every event.
pub fn simulate<M: ServiceModel + ?Sized>(
    config: &SystemConfig,
    model: &mut M,
    options: &SimulationOptions,
    mut observe: impl FnMut(&Observation<'_>),
) -> Result<DelayReport> {
    if options.n_services < 1 {
        return Err(Error::InvalidArgument("n_services must be ≥ 1".into()));
    }
    let rates = build_rate_matrix(config)?;
    let total = rates.total();
    if !(total > 0.0) {
        return Err(Error::InvalidArgument("aggregate request rate is zero".into()));
    }
    let picker = WeightedIndex::new(rates.as_slice()).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let gaps = Exp::new(total).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut arrival_rng = substream(options.seed, ARRIVAL_STREAM);

    let state = if config.queue_kind.is_dual() {
        QueueState::Dual(DualQueueState::new(config.files, config.good_users.clone()))
    } else {
        QueueState::Single(MulticastQueue::new(config.files))
    };
    let mut engine = Engine {
        config: config.clone(),
        model,
        state,
        service_rng: substream(options.seed, SERVICE_STREAM),
        busy: None,
        started: 0,
        completed: 0,
        options: options.clone(),
        report: DelayReport {
            seed: options.seed,
            samples: Vec::new(),
            mean_sojourn: f64::NAN,
            mean_good: None,
            mean_bad: None,
            services: 0,
            service_times: Vec::new(),
            t_stars: Vec::new(),
            redraws: Vec::new(),
            arrivals: 0,
            window_start: 0.0,
            end_time: 0.0,
        },
        good_classes: !config.good_users.is_empty(),
    };

    let files = config.files;
    let mut next_arrival = gaps.sample(&mut arrival_rng);
    loop {
        let arrivals_open = !(options.drain && engine.started >= options.n_services);
        let completion = engine.busy.as_ref().map(|b| b.0);
        let take_completion = match completion {
            Some(tc) => !arrivals_open || tc <= next_arrival,
            None => false,
        };
        if take_completion {
            engine.complete(&mut observe)?;
            if !options.drain && engine.completed >= options.n_services {
                break;
            }
            if options.drain && engine.started >= options.n_services && engine.busy.is_none() && engine.state.is_empty() {
                break;
            }
        } else if arrivals_open {
            let t = next_arrival;
            let idx = picker.sample(&mut arrival_rng);
            let request = Request { user: idx / files, file: idx % files, t_arrival: t };
            engine.report.arrivals += 1;
            engine.state.enqueue(request)?;
            engine.start_if_idle(t)?;
            let event = Event { kind: EventKind::Arrival, time: t, payload: EventPayload::Request(request) };
            observe(&Observation { event: &event, state: &engine.state, completions: &[], service_time: None, looped: &[] });
            next_arrival = t + gaps.sample(&mut arrival_rng);
        } else {
            break;
        }
    }
    let mut report = engine.report;
    finalize(&mut report);
    Ok(report)
}

fn finalize(report: &mut DelayReport) {
    let all: Vec<f64> = report.samples.iter().map(|s| s.sojourn).collect();
    let of = |c: QueueClass| -> Vec<f64> {
        report.samples.iter().filter(|s| s.class == Some(c)).map(|s| s.sojourn).collect()
    };
    report.mean_sojourn = mean(&all).unwrap_or(f64::NAN);
    report.mean_good = mean(&of(QueueClass::Good));
    report.mean_bad = mean(&of(QueueClass::Bad));
    report.services = report.service_times.len();
}

/// One stream per distinct file; the two class queues of 2Q can hold the
/// same file at their heads, in which case the users are pooled.
fn groups_of(entries: &[&QueueEntry]) -> Result<ServiceGroups> {
    let mut files: Vec<usize> = Vec::with_capacity(entries.len());
    let mut sets: Vec<BTreeSet<usize>> = Vec::with_capacity(entries.len());
    for e in entries {
        match files.iter().position(|&f| f == e.file) {
            Some(i) => sets[i].extend(e.users.iter().copied()),
            None => {
                files.push(e.file);
                sets.push(e.users.clone());
            }
        }
    }
    ServiceGroups::new(files, sets)
}

impl<M: ServiceModel + ?Sized> Engine<'_, M> {
    fn start_if_idle(&mut self, now: f64) -> Result<()> {
        if self.busy.is_some() || self.state.is_empty() {
            return Ok(());
        }
        let streams = self.config.streams;
        let kind = self.config.queue_kind;
        let (duration, t_star, redraws, service) = match (&mut self.state, kind) {
            (QueueState::Dual(dual), QueueKind::TwoQSimultaneous) => {
                let picked = two_q_pick(dual)?;
                let entries: Vec<&QueueEntry> =
                    picked.iter().map(|(c, id)| dual.queue(*c).in_service_entry(*id).expect("just selected")).collect();
                let r = self.model.serve(&groups_of(&entries)?, &mut self.service_rng)?;
                (r.total_time, r.t_star, r.redraws, InService::Dual(picked))
            }
            (QueueState::Dual(dual), _) => {
                let DsmqPick::Serve(class) = dsmq_pick(dual, self.config.cycle) else {
                    return Ok(());
                };
                let q = dual.queue_mut(class);
                let ids = q.select_service(streams)?;
                let entries: Vec<&QueueEntry> = ids.iter().map(|id| q.in_service_entry(*id).expect("selected")).collect();
                let r = self.model.serve(&groups_of(&entries)?, &mut self.service_rng)?;
                (r.total_time, r.t_star, r.redraws, InService::Dual(ids.into_iter().map(|id| (class, id)).collect()))
            }
            (QueueState::Single(q), QueueKind::Loopback) => {
                let ids = q.select_service(streams)?;
                let entries: Vec<&QueueEntry> = ids.iter().map(|id| q.in_service_entry(*id).expect("selected")).collect();
                let rates = self.model.user_rates(&groups_of(&entries)?, &mut self.service_rng)?;
                let t = loopback_service_time(self.config.file_bits, self.config.bandwidth_hz, self.config.r_thresh);
                (t, t, 0, InService::Loopback { ids, rates })
            }
            (QueueState::Single(q), _) => {
                let ids = q.select_service(streams)?;
                let entries: Vec<&QueueEntry> = ids.iter().map(|id| q.in_service_entry(*id).expect("selected")).collect();
                let r = self.model.serve(&groups_of(&entries)?, &mut self.service_rng)?;
                (r.total_time, r.t_star, r.redraws, InService::Single(ids))
            }
        };
        if !(duration.is_finite() && duration > 0.0) {
            return Err(Error::InvalidArgument(format!("service model returned duration {duration}")));
        }
        let index = self.started;
        self.started += 1;
        if index == self.options.warmup_services {
            self.report.window_start = now;
        }
        if index >= self.options.warmup_services {
            self.report.service_times.push(duration);
            self.report.t_stars.push(t_star);
            self.report.redraws.push(redraws);
        }
        self.busy = Some((now + duration, duration, service));
        Ok(())
    }

    fn complete(&mut self, observe: &mut impl FnMut(&Observation<'_>)) -> Result<()> {
        let (t, duration, service) = self.busy.take().expect("server busy");
        let index = self.completed;
        self.completed += 1;
        let finished;
        let completions: Vec<Completion>;
        let mut looped = Vec::new();
        match service {
            InService::Single(ids) => {
                let q = self.state.queue_mut(None);
                finished = q.take_in_service(&ids)?;
                completions = sojourns(&finished, t);
            }
            InService::Dual(picked) => {
                let mut entries = Vec::new();
                for (class, id) in picked {
                    let q = self.state.queue_mut(Some(class));
                    entries.extend(q.take_in_service(&[id])?);
                }
                finished = entries;
                completions = sojourns(&finished, t);
                if let QueueState::Dual(d) = &mut self.state {
                    d.record_completed_service();
                }
            }
            InService::Loopback { ids, rates } => {
                finished = self.state.queue_mut(None).take_in_service(&ids)?;
                let split = loopback_filter(
                    &finished,
                    |u| rates.iter().find(|(v, _)| *v == u).map(|(_, r)| *r),
                    self.config.r_thresh,
                );
                completions = split
                    .served
                    .iter()
                    .map(|&request| Completion { request, sojourn: t - request.t_arrival })
                    .collect();
                for r in &split.looped {
                    self.state.enqueue(*r)?;
                }
                looped = split.looped;
            }
        }
        if index >= self.options.warmup_services {
            for c in &completions {
                self.report.samples.push(Sample {
                    service_index: index,
                    user: c.request.user,
                    file: c.request.file,
                    class: self.good_classes.then(|| {
                        if self.config.is_good(c.request.user) {
                            QueueClass::Good
                        } else {
                            QueueClass::Bad
                        }
                    }),
                    t_arrival: c.request.t_arrival,
                    sojourn: c.sojourn,
                });
            }
        }
        self.report.end_time = t;
        let stop = !self.options.drain && self.completed >= self.options.n_services;
        if !stop {
            self.start_if_idle(t)?;
        }
        let event = Event { kind: EventKind::ServiceComplete, time: t, payload: EventPayload::Entries(finished) };
        observe(&Observation {
            event: &event,
            state: &self.state,
            completions: &completions,
            service_time: Some(duration),
            looped: &looped,
        });
        Ok(())
    }
}

fn sojourns(entries: &[QueueEntry], t: f64) -> Vec<Completion> {
    entries
        .iter()
        .flat_map(|e| e.requests.iter())
        .map(|&request| Completion { request, sojourn: t - request.t_arrival })
        .collect()
}

/// Mean with a normal-approximation 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub count: usize,
}

impl Estimate {
    /// Interval `mean ± 1.96 s/√n` over `values`; zero width for one value.
    pub fn from_values(values: &[f64]) -> Option<Estimate> {
        let n = values.len();
        let m = mean(values)?;
        let half = if n > 1 {
            let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            1.96 * (var / n as f64).sqrt()
        } else {
            0.0
        };
        Some(Estimate { mean: m, ci_lo: m - half, ci_hi: m + half, count: n })
    }

    pub fn width(&self) -> f64 {
        self.ci_hi - self.ci_lo
    }
}

/// Replication-level pooling.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PooledSummary {
    pub sojourn: Estimate,
    pub good: Option<Estimate>,
    pub bad: Option<Estimate>,
    pub mean_service_time: f64,
    pub services: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replications {
    pub reports: Vec<DelayReport>,
    pub pooled: PooledSummary,
}

pub fn pool(reports: &[DelayReport]) -> Result<PooledSummary> {
    let of = |f: &dyn Fn(&DelayReport) -> Option<f64>| -> Vec<f64> { reports.iter().filter_map(f).collect() };
    let sojourn = Estimate::from_values(&of(&|r| Some(r.mean_sojourn).filter(|m| m.is_finite())))
        .ok_or_else(|| Error::InvalidArgument("no replication produced samples".into()))?;
    let services: usize = reports.iter().map(|r| r.services).sum();
    let service_total: f64 = reports.iter().flat_map(|r| r.service_times.iter()).sum();
    Ok(PooledSummary {
        sojourn,
        good: Estimate::from_values(&of(&|r| r.mean_good)),
        bad: Estimate::from_values(&of(&|r| r.mean_bad)),
        mean_service_time: service_total / services.max(1) as f64,
        services,
    })
}

/// Independent replications, one per seed, run in parallel.
pub fn run_replications(config: &SystemConfig, n_services: usize, warmup: usize, seeds: &[u64]) -> Result<Replications> {
    replicate(seeds, |seed| run_simulation(config, n_services, warmup, seed))
}

/// Runs `run` once per seed in parallel and pools the reports.
pub fn replicate(seeds: &[u64], run: impl Fn(u64) -> Result<DelayReport> + Sync) -> Result<Replications> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("need at least one seed".into()));
    }
    let reports = seeds.par_iter().map(|&s| run(s)).collect::<Result<Vec<_>>>()?;
    let pooled = pool(&reports)?;
    Ok(Replications { reports, pooled })
}
