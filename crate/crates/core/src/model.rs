//! Scenario configuration, content popularity and the per-(file, user)
//! request-rate matrix.
//!
//! User and file indices are zero-based throughout the crate.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Beamforming scheme used for every transmission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "MMF")]
    Mmf,
    #[serde(rename = "MMF-SIC")]
    MmfSic,
    #[serde(rename = "MMF-RS")]
    MmfRs,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Mmf, Scheme::MmfSic, Scheme::MmfRs];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Mmf => "MMF",
            Scheme::MmfSic => "MMF-SIC",
            Scheme::MmfRs => "MMF-RS",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('_', "-").as_str() {
            "MMF" => Ok(Scheme::Mmf),
            "MMF-SIC" | "SIC" => Ok(Scheme::MmfSic),
            "MMF-RS" | "RS" => Ok(Scheme::MmfRs),
            _ => Err(Error::Parse(format!("unknown scheme `{s}`"))),
        }
    }
}

/// Queueing discipline at the base station.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QueueKind {
    #[serde(rename = "SMQ")]
    Smq,
    #[serde(rename = "DSMQ")]
    Dsmq,
    #[serde(rename = "LOOPBACK")]
    Loopback,
    #[serde(rename = "TWO_Q_SIMULTANEOUS")]
    TwoQSimultaneous,
}

impl QueueKind {
    pub fn as_str(self) -> &'static str {
        match self {
            QueueKind::Smq => "SMQ",
            QueueKind::Dsmq => "DSMQ",
            QueueKind::Loopback => "LOOPBACK",
            QueueKind::TwoQSimultaneous => "TWO_Q_SIMULTANEOUS",
        }
    }

    /// Disciplines that keep separate queues for the good and bad user classes.
    pub fn is_dual(self) -> bool {
        matches!(self, QueueKind::Dsmq | QueueKind::TwoQSimultaneous)
    }
}

impl fmt::Display for QueueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QueueKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "SMQ" => Ok(QueueKind::Smq),
            "DSMQ" => Ok(QueueKind::Dsmq),
            "LOOPBACK" => Ok(QueueKind::Loopback),
            "TWO_Q_SIMULTANEOUS" | "2Q" | "TWOQ" => Ok(QueueKind::TwoQSimultaneous),
            _ => Err(Error::Parse(format!("unknown queue kind `{s}`"))),
        }
    }
}

/// A per-user quantity given either as one value for every user or as a
/// vector of length K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerUser {
    Uniform(f64),
    Each(Vec<f64>),
}

impl PerUser {
    pub fn expand(&self, users: usize) -> Vec<f64> {
        match self {
            PerUser::Uniform(v) => vec![*v; users],
            PerUser::Each(v) => v.clone(),
        }
    }
}

/// Every scenario parameter shared by the simulator and the analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    /// Transmit antennas.
    #[serde(rename = "L")]
    pub antennas: usize,
    /// Users.
    #[serde(rename = "K")]
    pub users: usize,
    /// Library size.
    #[serde(rename = "N")]
    pub files: usize,
    /// File size in bits.
    #[serde(rename = "F")]
    pub file_bits: f64,
    /// Bandwidth in Hz.
    #[serde(rename = "B")]
    pub bandwidth_hz: f64,
    /// Total transmit power (linear).
    #[serde(rename = "P")]
    pub power: f64,
    /// Noise power per user (linear).
    pub noise: PerUser,
    /// Maximum number of head-of-line files served together.
    #[serde(rename = "S")]
    pub streams: usize,
    /// DSMQ cycle: the bad-user queue gets one service in every `C`.
    #[serde(rename = "C")]
    pub cycle: usize,
    /// Zipf exponent of file popularity.
    pub gamma: f64,
    /// Aggregate request rate (requests/s).
    #[serde(rename = "lambda")]
    pub lambda_total: f64,
    /// Mean fading gain per user (linear).
    pub channel_gains: PerUser,
    /// Users placed in the good-channel queue by dual disciplines.
    #[serde(default)]
    pub good_users: BTreeSet<usize>,
    /// Minimum admissible service rate (1/s).
    pub r_eps: f64,
    pub scheme: Scheme,
    pub queue_kind: QueueKind,
    /// Fixed transmission rate of the loopback discipline (bits/s/Hz).
    #[serde(default = "default_r_thresh")]
    pub r_thresh: f64,
}

fn default_r_thresh() -> f64 {
    0.5
}

/// Mean gain of the bad users in the heterogeneous scenario: -15 dB.
pub const BAD_USER_GAIN: f64 = 0.031_622_776_601_683_79;

impl Default for SystemConfig {
    /// Desk-scale homogeneous scenario.
    fn default() -> Self {
        SystemConfig {
            antennas: 8,
            users: 10,
            files: 20,
            file_bits: 100e6,
            bandwidth_hz: 100e6,
            power: 10.0,
            noise: PerUser::Uniform(1.0),
            streams: 1,
            cycle: 8,
            gamma: 1.0,
            lambda_total: 10.0,
            channel_gains: PerUser::Uniform(1.0),
            good_users: BTreeSet::new(),
            r_eps: 0.01,
            scheme: Scheme::Mmf,
            queue_kind: QueueKind::Smq,
            r_thresh: default_r_thresh(),
        }
    }
}

impl SystemConfig {
    /// Scenario used throughout the paper-scale experiments: 16 antennas,
    /// 40 users, 100 files of 100 Mb over 100 MHz.
    pub fn paper_homogeneous() -> Self {
        SystemConfig {
            antennas: 16,
            users: 40,
            files: 100,
            lambda_total: 40.0,
            ..SystemConfig::default()
        }
    }

    /// Splits the users into a good half (0 dB) and a bad half (-15 dB).
    pub fn with_heterogeneous_split(mut self, good: usize) -> Self {
        let gains = (0..self.users)
            .map(|k| if k < good { 1.0 } else { BAD_USER_GAIN })
            .collect();
        self.channel_gains = PerUser::Each(gains);
        self.good_users = (0..good).collect();
        self
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is always serializable")
    }

    pub fn noise_vec(&self) -> Vec<f64> {
        self.noise.expand(self.users)
    }

    pub fn gain_vec(&self) -> Vec<f64> {
        self.channel_gains.expand(self.users)
    }

    /// Seconds per unit of spectral efficiency: `F / B`.
    pub fn time_scale(&self) -> f64 {
        self.file_bits / self.bandwidth_hz
    }

    pub fn is_good(&self, user: usize) -> bool {
        self.good_users.contains(&user)
    }

    /// Checks every invariant and fails with the full list of violations.
    pub fn validated(&self) -> Result<&Self> {
        let problems = validate(self);
        if problems.is_empty() {
            Ok(self)
        } else {
            Err(Error::InvalidConfig(problems))
        }
    }

    /// Sets a field from its configuration-file key, used by parameter sweeps.
    pub fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Parse(format!("invalid value `{value}` for {what}"));
        let int = || value.trim().parse::<usize>().map_err(|_| bad(key));
        let real = || value.trim().parse::<f64>().map_err(|_| bad(key));
        match key {
            "L" => self.antennas = int()?,
            "K" => self.users = int()?,
            "N" => self.files = int()?,
            "F" => self.file_bits = real()?,
            "B" => self.bandwidth_hz = real()?,
            "P" => self.power = real()?,
            "S" => self.streams = int()?,
            "C" => self.cycle = int()?,
            "gamma" => self.gamma = real()?,
            "lambda" => self.lambda_total = real()?,
            "r_eps" => self.r_eps = real()?,
            "r_thresh" => self.r_thresh = real()?,
            "noise" => self.noise = PerUser::Uniform(real()?),
            "channel_gains" => self.channel_gains = PerUser::Uniform(real()?),
            "scheme" => self.scheme = value.parse()?,
            "queue_kind" => self.queue_kind = value.parse()?,
            _ => return Err(Error::Parse(format!("unknown or non-sweepable key `{key}`"))),
        }
        Ok(())
    }
}

/// One violated invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Reports every violated invariant of `config`; empty means valid.
pub fn validate(config: &SystemConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |field: &'static str, message: String| out.push(Violation { field, message });

    for (field, value) in [
        ("L", config.antennas),
        ("K", config.users),
        ("N", config.files),
        ("S", config.streams),
    ] {
        if value < 1 {
            push(field, format!("{field} must be ≥ 1"));
        }
    }
    for (field, value) in [
        ("F", config.file_bits),
        ("B", config.bandwidth_hz),
        ("P", config.power),
        ("r_eps", config.r_eps),
    ] {
        if !(value.is_finite() && value > 0.0) {
            push(field, format!("{field} must be finite and > 0, got {value}"));
        }
    }
    if config.streams > crate::beamforming::MAX_STREAMS {
        push(
            "S",
            format!("S = {} exceeds the supported maximum of {}", config.streams, crate::beamforming::MAX_STREAMS),
        );
    }
    if !(config.gamma.is_finite() && config.gamma >= 0.0) {
        push("gamma", format!("gamma must be ≥ 0, got {}", config.gamma));
    }
    if !(config.lambda_total.is_finite() && config.lambda_total > 0.0) {
        push(
            "lambda",
            format!("lambda must be finite and > 0, got {}", config.lambda_total),
        );
    }
    for (field, per_user) in [("noise", &config.noise), ("channel_gains", &config.channel_gains)] {
        let values = per_user.expand(config.users);
        if values.len() != config.users {
            push(
                field,
                format!("{field} has {} entries, expected K = {}", values.len(), config.users),
            );
        }
        if let Some((k, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            push(field, format!("{field}[{k}] must be finite and > 0, got {v}"));
        }
    }
    if let Some(&u) = config.good_users.iter().find(|&&u| u >= config.users) {
        push("good_users", format!("user {u} is outside 0..{}", config.users));
    }
    if config.queue_kind.is_dual() {
        if config.good_users.is_empty() {
            push(
                "good_users",
                format!("{} needs a nonempty good-user set", config.queue_kind),
            );
        } else if config.good_users.len() >= config.users {
            push(
                "good_users",
                format!("{} needs at least one bad user", config.queue_kind),
            );
        }
    }
    if config.queue_kind == QueueKind::Dsmq && config.cycle < 2 {
        push("C", "C must be ≥ 2".to_string());
    }
    if config.queue_kind == QueueKind::Loopback
        && !(config.r_thresh.is_finite() && config.r_thresh > 0.0)
    {
        push("r_thresh", "r_thresh must be > 0".to_string());
    }
    out
}

/// Zipf popularity `p_n ∝ n^-gamma` over `n_files` files (rank 1 first).
pub fn zipf_popularity(n_files: usize, gamma: f64) -> Result<Vec<f64>> {
    if n_files == 0 {
        return Err(Error::InvalidArgument("library size must be ≥ 1".into()));
    }
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(Error::InvalidArgument(format!("Zipf exponent must be ≥ 0, got {gamma}")));
    }
    let weights: Vec<f64> = (1..=n_files).map(|n| (n as f64).powf(-gamma)).collect();
    // Sum smallest-first to keep the normalization tight for long tails.
    let total: f64 = weights.iter().rev().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// Request rates `lambda_{nk}` stored user-major: `rate(user, file)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateMatrix {
    users: usize,
    files: usize,
    rates: Vec<f64>,
}

impl RateMatrix {
    /// Builds a matrix from explicit rows, one per user.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let users = rows.len();
        let files = rows.first().map_or(0, Vec::len);
        if users == 0 || files == 0 || rows.iter().any(|r| r.len() != files) {
            return Err(Error::InvalidArgument("rate matrix must be a nonempty K×N grid".into()));
        }
        let rates: Vec<f64> = rows.into_iter().flatten().collect();
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::InvalidArgument("request rates must be finite and ≥ 0".into()));
        }
        Ok(RateMatrix { users, files, rates })
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn files(&self) -> usize {
        self.files
    }

    pub fn rate(&self, user: usize, file: usize) -> f64 {
        self.rates[user * self.files + file]
    }

    /// Row-major slice `[user * N + file]`.
    pub fn as_slice(&self) -> &[f64] {
        &self.rates
    }

    pub fn total(&self) -> f64 {
        self.rates.iter().sum()
    }

    /// `lambda_i = sum_k lambda_{ik}` restricted to users accepted by `include`.
    pub fn file_rates_where(&self, include: impl Fn(usize) -> bool) -> Vec<f64> {
        let mut out = vec![0.0; self.files];
        for user in (0..self.users).filter(|&u| include(u)) {
            for (file, slot) in out.iter_mut().enumerate() {
                *slot += self.rate(user, file);
            }
        }
        out
    }

    pub fn file_rates(&self) -> Vec<f64> {
        self.file_rates_where(|_| true)
    }

    /// Copy keeping only the rows of users accepted by `include`.
    pub fn restricted(&self, include: impl Fn(usize) -> bool) -> RateMatrix {
        let mut rates = self.rates.clone();
        for user in (0..self.users).filter(|&u| !include(u)) {
            rates[user * self.files..(user + 1) * self.files].fill(0.0);
        }
        RateMatrix { users: self.users, files: self.files, rates }
    }
}

/// Splits the aggregate rate uniformly over users and by Zipf law over files.
pub fn build_rate_matrix(config: &SystemConfig) -> Result<RateMatrix> {
    config.validated()?;
    let popularity = zipf_popularity(config.files, config.gamma)?;
    let per_user = config.lambda_total / config.users as f64;
    let rows = (0..config.users)
        .map(|_| popularity.iter().map(|p| per_user * p).collect())
        .collect();
    RateMatrix::from_rows(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zipf_single_file_is_certain() {
        assert_eq!(zipf_popularity(1, 2.7).unwrap(), vec![1.0]);
    }

    #[test]
    fn zipf_uniform_when_gamma_zero() {
        assert_eq!(zipf_popularity(2, 0.0).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn zipf_harmonic_three() {
        let p = zipf_popularity(3, 1.0).unwrap();
        for (got, want) in p.iter().zip([6.0 / 11.0, 3.0 / 11.0, 2.0 / 11.0]) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn zipf_rejects_empty_library() {
        assert!(zipf_popularity(0, 1.0).is_err());
    }

    #[test]
    fn rate_matrix_uniform_split() {
        let cfg = SystemConfig {
            users: 40,
            files: 100,
            lambda_total: 40.0,
            ..SystemConfig::default()
        };
        let m = build_rate_matrix(&cfg).unwrap();
        let p = zipf_popularity(100, 1.0).unwrap();
        for k in 0..40 {
            for (n, pn) in p.iter().enumerate() {
                assert!((m.rate(k, n) - pn).abs() < 1e-15);
            }
        }
        assert!((m.total() - 40.0).abs() < 40.0 * 1e-9);
    }

    #[test]
    fn rate_matrix_single_cell() {
        let cfg = SystemConfig {
            users: 1,
            files: 1,
            lambda_total: 10.0,
            ..SystemConfig::default()
        };
        assert_eq!(build_rate_matrix(&cfg).unwrap().rate(0, 0), 10.0);
    }

    #[test]
    fn default_config_is_valid() {
        assert!(validate(&SystemConfig::default()).is_empty());
    }

    #[test]
    fn dsmq_cycle_must_be_two_or_more() {
        let cfg = SystemConfig {
            queue_kind: QueueKind::Dsmq,
            cycle: 1,
            ..SystemConfig::default().with_heterogeneous_split(5)
        };
        let v = validate(&cfg);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].message, "C must be ≥ 2");
    }

    #[test]
    fn negative_gain_rejected() {
        let mut gains = vec![1.0; 10];
        gains[3] = -0.5;
        let cfg = SystemConfig {
            channel_gains: PerUser::Each(gains),
            ..SystemConfig::default()
        };
        let v = validate(&cfg);
        assert!(v.iter().any(|v| v.field == "channel_gains"));
    }

    #[test]
    fn dual_queue_requires_proper_good_set() {
        let mut cfg = SystemConfig {
            queue_kind: QueueKind::TwoQSimultaneous,
            ..SystemConfig::default()
        };
        assert!(validate(&cfg).iter().any(|v| v.field == "good_users"));
        cfg.good_users = (0..10).collect();
        assert!(validate(&cfg).iter().any(|v| v.field == "good_users"));
        cfg.good_users = (0..5).collect();
        assert!(validate(&cfg).is_empty());
    }

    #[test]
    fn validation_reports_every_problem() {
        let cfg = SystemConfig {
            antennas: 0,
            power: -1.0,
            r_eps: 0.0,
            ..SystemConfig::default()
        };
        assert_eq!(validate(&cfg).len(), 3);
    }

    #[test]
    fn config_file_rejects_unknown_keys() {
        let mut json: serde_json::Value =
            serde_json::from_str(&SystemConfig::default().to_json_string()).unwrap();
        json["bogus"] = serde_json::json!(1);
        assert!(SystemConfig::from_json_str(&json.to_string()).is_err());
    }

    #[test]
    fn config_file_accepts_scalar_or_vector_per_user_values() {
        let cfg = SystemConfig::default().with_heterogeneous_split(5);
        let back = SystemConfig::from_json_str(&cfg.to_json_string()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.gain_vec()[7], BAD_USER_GAIN);
    }

    #[test]
    fn bad_gain_is_minus_fifteen_db() {
        assert!((10f64.powf(-1.5) - BAD_USER_GAIN).abs() < 1e-17);
    }
}
