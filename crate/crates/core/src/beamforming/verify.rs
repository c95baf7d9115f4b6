//! Independent feasibility check, recomputed from the raw channel and beams.

use num_complex::Complex64;
use serde::Serialize;

use super::formulation::{bits, subsets, Mask};
use super::groups::ServiceGroups;
use super::{sinr_degraded, sinr_mmf, BeamformerSolution};
use crate::channel::ChannelMatrix;
use crate::model::{Scheme, SystemConfig};

/// Relative tolerance for every check.
pub const FEASIBILITY_TOLERANCE: f64 = 1e-6;

/// One constraint `rate · weight ≤ capacity` in bits/s/Hz.
#[derive(Debug, Clone)]
pub(crate) struct Constraint {
    pub label: String,
    pub weight: f64,
    pub capacity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintViolation {
    pub constraint: String,
    /// Relative excess over the allowed value.
    pub violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub max_violation: f64,
    /// Checks that exceed [`FEASIBILITY_TOLERANCE`].
    pub violations: Vec<ConstraintViolation>,
}

impl VerifyReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

fn mask_of(streams: &[usize]) -> Mask {
    streams.iter().fold(0, |m, s| m | (1 << s))
}

fn label(kind: &str, user: usize, streams: Mask) -> String {
    let list: Vec<String> = bits(streams).map(|s| s.to_string()).collect();
    format!("{kind} user={user} streams={{{}}}", list.join(","))
}

/// Every rate constraint of `scheme` at the given beams and fractions.
/// `fractions` are α for rate splitting and β for SIC.
pub(crate) fn constraints(
    scheme: Scheme,
    groups: &ServiceGroups,
    channel: &ChannelMatrix,
    noise: &[f64],
    w: &[Vec<Complex64>],
    w_d: Option<&[Complex64]>,
    fractions: &[f64],
) -> Vec<Constraint> {
    let all: Vec<usize> = (0..groups.streams()).collect();
    let all_mask = mask_of(&all);
    let mut out = Vec::new();
    for user in groups.all_users() {
        let wanted = groups.wanted_streams(user);
        match scheme {
            Scheme::Mmf | Scheme::MmfRs => {
                if scheme == Scheme::MmfRs {
                    let zero = vec![Complex64::new(0.0, 0.0); channel.antennas()];
                    let gamma = sinr_degraded(channel, w_d.unwrap_or(&zero), w, user, noise[user]);
                    out.push(Constraint {
                        label: label("degraded", user, all_mask),
                        weight: fractions.iter().sum(),
                        capacity: (1.0 + gamma).log2(),
                    });
                }
                for subset in subsets(mask_of(&wanted), 1) {
                    let gamma: f64 = bits(subset)
                        .map(|s| sinr_mmf(channel, w, user, s, &wanted, noise[user]))
                        .sum();
                    let size = subset.count_ones() as f64;
                    let weight = match scheme {
                        Scheme::MmfRs => size - bits(subset).map(|j| fractions[j]).sum::<f64>(),
                        _ => size,
                    };
                    let kind = if subset.count_ones() == 1 { "stream" } else { "mac" };
                    out.push(Constraint {
                        label: label(kind, user, subset),
                        weight,
                        capacity: (1.0 + gamma).log2(),
                    });
                }
            }
            Scheme::MmfSic => {
                for subset in subsets(all_mask, 1) {
                    let snr: f64 = bits(subset)
                        .map(|s| channel.gain(user, &w[s]).norm_sqr() / noise[user])
                        .sum();
                    out.push(Constraint {
                        label: label("sic", user, subset),
                        weight: bits(subset).map(|j| fractions[j]).sum(),
                        capacity: (1.0 + snr).log2(),
                    });
                }
            }
        }
    }
    out
}

/// Largest rate (bits/s/Hz scale of the reformulation) all constraints admit.
pub(crate) fn achievable(constraints: &[Constraint]) -> f64 {
    constraints
        .iter()
        .filter(|c| c.weight > super::formulation::WEIGHT_FLOOR)
        .map(|c| c.capacity.max(0.0) / c.weight)
        .fold(f64::INFINITY, f64::min)
}

/// Rate of `solution` on the scale used inside the constraints.
fn constraint_rate(solution: &BeamformerSolution, config: &SystemConfig) -> f64 {
    match solution.scheme {
        Scheme::Mmf => solution.r_star,
        Scheme::MmfSic => solution.r_star * solution.w.len() as f64,
        Scheme::MmfRs => solution.r_star * config.time_scale(),
    }
}

/// Recomputes power, fraction, rate and service-time constraints of
/// `solution` from `channel` alone.
pub fn verify_solution(
    scheme: Scheme,
    groups: &ServiceGroups,
    channel: &ChannelMatrix,
    solution: &BeamformerSolution,
    config: &SystemConfig,
) -> VerifyReport {
    let mut checks: Vec<(String, f64)> = Vec::new();
    let noise = config.noise_vec();

    if solution.scheme != scheme {
        checks.push((format!("scheme {} != {}", solution.scheme, scheme), f64::INFINITY));
    }
    if solution.w.len() != groups.streams() {
        checks.push(("stream count".into(), f64::INFINITY));
        return finish(checks);
    }

    let power: f64 = solution
        .w
        .iter()
        .chain(solution.w_d.iter())
        .flat_map(|w| w.iter())
        .map(|z| z.norm_sqr())
        .sum();
    checks.push(("power".into(), (power - config.power) / config.power));

    let fractions: Vec<f64> = match scheme {
        Scheme::Mmf => Vec::new(),
        Scheme::MmfRs => solution.alpha.clone().unwrap_or_default(),
        Scheme::MmfSic => solution.beta.clone().unwrap_or_default(),
    };
    if scheme != Scheme::Mmf && fractions.len() != groups.streams() {
        checks.push(("fraction count".into(), f64::INFINITY));
        return finish(checks);
    }
    match scheme {
        Scheme::MmfRs => {
            for (s, a) in fractions.iter().enumerate() {
                checks.push((format!("alpha[{s}] >= 0"), -a));
                checks.push((format!("alpha[{s}] <= 1"), a - 1.0));
            }
        }
        Scheme::MmfSic => {
            for (s, b) in fractions.iter().enumerate() {
                checks.push((format!("beta[{s}] >= 0"), -b));
            }
            checks.push(("sum beta = 1".into(), (fractions.iter().sum::<f64>() - 1.0).abs()));
        }
        Scheme::Mmf => {}
    }

    checks.push(("r_star >= 0".into(), -solution.r_star));
    let rate = constraint_rate(solution, config);
    for c in constraints(scheme, groups, channel, &noise, &solution.w, solution.w_d.as_deref(), &fractions) {
        let lhs = rate * c.weight;
        // Scaled by the rate too, so near-vacuous constraints with a tiny
        // weight and capacity do not blow up.
        let scale = c.capacity.abs().max(rate).max(1e-300);
        checks.push((c.label, (lhs - c.capacity) / scale));
    }

    let expected_t = match scheme {
        Scheme::MmfRs => 1.0 / solution.r_star,
        _ => config.time_scale() / solution.r_star,
    };
    let t_check = if expected_t.is_infinite() && solution.t_star.is_infinite() {
        0.0
    } else {
        (solution.t_star / expected_t - 1.0).abs()
    };
    checks.push(("t_star".into(), if t_check.is_nan() { f64::INFINITY } else { t_check }));
    finish(checks)
}

fn finish(checks: Vec<(String, f64)>) -> VerifyReport {
    let max_violation = checks.iter().map(|c| c.1).fold(0.0, f64::max);
    let violations = checks
        .into_iter()
        .filter(|(_, v)| *v > FEASIBILITY_TOLERANCE)
        .map(|(constraint, violation)| ConstraintViolation { constraint, violation })
        .collect();
    VerifyReport { max_violation, violations }
}
