//! Symmetric-rate reformulations written as `max_x min_i term_i(x)`.
//!
//! Every constraint of the three schemes has the shape
//!
//! ```text
//! rate · weight(fractions) ≤ log2(1 + sig / (σ² + int))
//! ```
//!
//! where `sig` and `int` are sums of received powers `|h_u^H w_t|²` over
//! beam subsets and `weight` is affine in the split fractions (α for
//! rate splitting, β for SIC, none for MMF). The largest feasible rate is
//! therefore `min_i cap_i / weight_i`, with terms whose weight vanishes
//! dropped. Rates are expressed in bits/s/Hz (for rate splitting: the
//! equivalent `r F / B`).
//!
//! The optimization variable packs the beams as interleaved (re, im) pairs
//! followed by one auxiliary parameter per stream: `θ_s` with
//! `α_s = sin² θ_s` for rate splitting, softmax logits for β under SIC.
//! Beams are mapped onto the power sphere `Σ‖w‖² = P` by normalization.

use std::f64::consts::LN_2;

use num_complex::Complex64;

use super::groups::ServiceGroups;
use crate::channel::ChannelMatrix;
use crate::model::Scheme;

/// Terms whose weight falls below this are vacuous.
pub(crate) const WEIGHT_FLOOR: f64 = 1e-12;

pub(crate) type Mask = u8;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Term {
    /// Local user index.
    pub user: usize,
    pub signal: Mask,
    pub interference: Mask,
    pub weight_const: f64,
    pub weight_sign: f64,
    pub weight_mask: Mask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Aux {
    None,
    /// `α_s = sin² θ_s`.
    SplitAngles,
    /// `β = softmax(z)`.
    Softmax,
}

/// Exact and smoothed objective at one point.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Eval {
    pub min: f64,
    pub smooth: f64,
}

pub(crate) struct Formulation {
    pub streams: usize,
    pub beams: usize,
    pub antennas: usize,
    /// Global user index of each local user.
    pub users: Vec<usize>,
    pub terms: Vec<Term>,
    pub aux: Aux,
    channels: Vec<Complex64>,
    noise: Vec<f64>,
    power: f64,
    // workspace
    gains: Vec<Complex64>,
    powers: Vec<f64>,
    values: Vec<f64>,
    fractions: Vec<f64>,
    d_powers: Vec<f64>,
    d_fractions: Vec<f64>,
    d_beams: Vec<f64>,
}

pub(crate) fn bits(mask: Mask) -> impl Iterator<Item = usize> {
    (0..8).filter(move |b| mask & (1 << b) != 0)
}

/// Every subset of `mask` with at least `min_size` elements, ascending.
pub(crate) fn subsets(mask: Mask, min_size: u32) -> Vec<Mask> {
    (1..=mask)
        .filter(|s| s & !mask == 0 && s.count_ones() >= min_size)
        .collect()
}

impl Formulation {
    pub fn new(
        scheme: Scheme,
        groups: &ServiceGroups,
        channel: &ChannelMatrix,
        noise: &[f64],
        power: f64,
    ) -> Self {
        let streams = groups.streams();
        let users: Vec<usize> = groups.all_users().into_iter().collect();
        let antennas = channel.antennas();
        let all_streams: Mask = ((1u16 << streams) - 1) as Mask;
        let degraded_beam = streams;
        let mut terms = Vec::new();

        let term = |user, signal, interference, weight_const, weight_sign, weight_mask| Term {
            user,
            signal,
            interference,
            weight_const,
            weight_sign,
            weight_mask,
        };

        for (u, &user) in users.iter().enumerate() {
            let wanted = groups.wanted_mask(user);
            let unwanted = all_streams & !wanted;
            match scheme {
                Scheme::Mmf => {
                    for s in subsets(wanted, 1) {
                        terms.push(term(u, s, unwanted, s.count_ones() as f64, 0.0, 0));
                    }
                }
                Scheme::MmfRs => {
                    terms.push(term(u, 1 << degraded_beam, all_streams, 0.0, 1.0, all_streams));
                    for s in subsets(wanted, 1) {
                        terms.push(term(u, s, unwanted, s.count_ones() as f64, -1.0, s));
                    }
                }
                Scheme::MmfSic => {
                    for s in subsets(all_streams, 1) {
                        terms.push(term(u, s, 0, 0.0, 1.0, s));
                    }
                }
            }
        }

        let beams = if scheme == Scheme::MmfRs { streams + 1 } else { streams };
        let aux = match scheme {
            Scheme::Mmf => Aux::None,
            Scheme::MmfRs => Aux::SplitAngles,
            Scheme::MmfSic => Aux::Softmax,
        };
        let mut channels = Vec::with_capacity(users.len() * antennas);
        for &user in &users {
            channels.extend_from_slice(channel.column(user));
        }
        let noise = users.iter().map(|&u| noise[u]).collect();
        let n_users = users.len();
        Formulation {
            streams,
            beams,
            antennas,
            terms,
            aux,
            channels,
            noise,
            power,
            gains: vec![Complex64::new(0.0, 0.0); n_users * beams],
            powers: vec![0.0; n_users * beams],
            values: Vec::new(),
            fractions: vec![0.0; streams],
            d_powers: vec![0.0; n_users * beams],
            d_fractions: vec![0.0; streams],
            d_beams: vec![0.0; 2 * beams * antennas],
            users,
        }
    }

    pub fn n_aux(&self) -> usize {
        match self.aux {
            Aux::None => 0,
            _ => self.streams,
        }
    }

    pub fn dim(&self) -> usize {
        2 * self.beams * self.antennas + self.n_aux()
    }

    pub fn beam_len(&self) -> usize {
        2 * self.beams * self.antennas
    }

    /// Split fractions (α or β) encoded in the auxiliary parameters.
    pub fn fractions_of(&self, aux: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.streams];
        fill_fractions(self.aux, aux, &mut out);
        out
    }

    /// Beams scaled onto the power sphere.
    pub fn beams_of(&self, x: &[f64]) -> Vec<Vec<Complex64>> {
        let v = &x[..self.beam_len()];
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let scale = if norm > 0.0 { self.power.sqrt() / norm } else { 0.0 };
        v.chunks(2 * self.antennas)
            .map(|beam| {
                beam.chunks(2)
                    .map(|p| Complex64::new(scale * p[0], scale * p[1]))
                    .collect()
            })
            .collect()
    }

    fn forward(&mut self, x: &[f64]) {
        let l = self.antennas;
        let v = &x[..2 * self.beams * l];
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let scale = if norm > 0.0 { self.power.sqrt() / norm } else { 0.0 };
        for u in 0..self.users.len() {
            let h = &self.channels[u * l..(u + 1) * l];
            for t in 0..self.beams {
                let w = &v[2 * t * l..2 * (t + 1) * l];
                let mut acc = Complex64::new(0.0, 0.0);
                for (hl, wl) in h.iter().zip(w.chunks_exact(2)) {
                    // conj(h) * w
                    acc.re += hl.re * wl[0] + hl.im * wl[1];
                    acc.im += hl.re * wl[1] - hl.im * wl[0];
                }
                acc *= scale;
                self.gains[u * self.beams + t] = acc;
                self.powers[u * self.beams + t] = acc.norm_sqr();
            }
        }
        fill_fractions(self.aux, &x[2 * self.beams * l..], &mut self.fractions);
        self.values.clear();
        for term in &self.terms {
            let (cap, _, _) = capacity(term, &self.powers[term.user * self.beams..], self.noise[term.user]);
            let weight = weight_of(term, &self.fractions);
            self.values.push(if weight > WEIGHT_FLOOR { cap / weight } else { f64::INFINITY });
        }
    }

    /// Evaluates the objective at `x`. With `sharpness = Some(μ)` also writes
    /// the gradient of the soft minimum `-(1/μ) ln Σ exp(-μ v_i)` to `grad`.
    pub fn evaluate(&mut self, x: &[f64], sharpness: Option<f64>, grad: &mut [f64]) -> Eval {
        self.forward(x);
        let min = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let Some(mu) = sharpness else {
            return Eval { min, smooth: min };
        };
        if !min.is_finite() {
            grad.fill(0.0);
            return Eval { min, smooth: min };
        }
        let mut z = 0.0;
        for v in self.values.iter_mut() {
            let w = (-mu * (*v - min)).exp();
            *v = w;
            z += w;
        }
        let smooth = min - z.ln() / mu;

        let l = self.antennas;
        let nb = self.beams;
        self.d_powers.fill(0.0);
        self.d_fractions.fill(0.0);
        for (i, term) in self.terms.iter().enumerate() {
            let omega = self.values[i] / z;
            if omega < 1e-300 {
                continue;
            }
            let p = &self.powers[term.user * nb..(term.user + 1) * nb];
            let (cap, d_sig, d_int) = capacity(term, p, self.noise[term.user]);
            let weight = weight_of(term, &self.fractions);
            let scale = omega / weight;
            let dp = &mut self.d_powers[term.user * nb..(term.user + 1) * nb];
            for t in bits(term.signal) {
                dp[t] += scale * d_sig;
            }
            for t in bits(term.interference) {
                dp[t] += scale * d_int;
            }
            if term.weight_mask != 0 {
                let dw = -omega * cap / (weight * weight) * term.weight_sign;
                for j in bits(term.weight_mask) {
                    self.d_fractions[j] += dw;
                }
            }
        }

        // d|a|²/dw = 2 h a with a = h^H w, accumulated per beam.
        self.d_beams.fill(0.0);
        for u in 0..self.users.len() {
            let h = &self.channels[u * l..(u + 1) * l];
            for t in 0..nb {
                let coef = 2.0 * self.d_powers[u * nb + t];
                if coef == 0.0 {
                    continue;
                }
                let a = self.gains[u * nb + t] * coef;
                let out = &mut self.d_beams[2 * t * l..2 * (t + 1) * l];
                for (hl, o) in h.iter().zip(out.chunks_exact_mut(2)) {
                    let g = hl * a;
                    o[0] += g.re;
                    o[1] += g.im;
                }
            }
        }
        // Chain through w = sqrt(P) v / ‖v‖.
        let v = &x[..2 * nb * l];
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let scale = if norm > 0.0 { self.power.sqrt() / norm } else { 0.0 };
        let radial: f64 = v.iter().zip(&self.d_beams).map(|(a, g)| a * g).sum::<f64>()
            / norm.max(f64::MIN_POSITIVE);
        for ((g, a), d) in grad.iter_mut().zip(v).zip(&self.d_beams) {
            *g = scale * (d - radial * a / norm.max(f64::MIN_POSITIVE));
        }
        let aux = &x[2 * nb * l..];
        let aux_grad = &mut grad[2 * nb * l..];
        match self.aux {
            Aux::None => {}
            Aux::SplitAngles => {
                for ((g, theta), df) in aux_grad.iter_mut().zip(aux).zip(&self.d_fractions) {
                    *g = df * (2.0 * theta).sin();
                }
            }
            Aux::Softmax => {
                let mean: f64 = self.fractions.iter().zip(&self.d_fractions).map(|(f, d)| f * d).sum();
                for ((g, f), d) in aux_grad.iter_mut().zip(&self.fractions).zip(&self.d_fractions) {
                    *g = f * (d - mean);
                }
            }
        }
        Eval { min, smooth }
    }

    /// Minimum over the terms of local user `u`, used as its achieved rate.
    pub fn user_rates(&mut self, x: &[f64]) -> Vec<(usize, f64)> {
        self.forward(x);
        let mut rates = vec![f64::INFINITY; self.users.len()];
        for (term, v) in self.terms.iter().zip(&self.values) {
            rates[term.user] = rates[term.user].min(*v);
        }
        self.users.iter().copied().zip(rates).collect()
    }
}

fn fill_fractions(kind: Aux, aux: &[f64], out: &mut [f64]) {
    match kind {
        Aux::None => out.fill(0.0),
        Aux::SplitAngles => {
            for (o, theta) in out.iter_mut().zip(aux) {
                *o = theta.sin().powi(2);
            }
        }
        Aux::Softmax => {
            let top = aux.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (o, a) in out.iter_mut().zip(aux) {
                *o = (a - top).exp();
                z += *o;
            }
            out.iter_mut().for_each(|o| *o /= z);
        }
    }
}

fn weight_of(term: &Term, fractions: &[f64]) -> f64 {
    let sum: f64 = bits(term.weight_mask).map(|j| fractions[j]).sum();
    term.weight_const + term.weight_sign * sum
}

/// `log2(1 + sig/(σ²+int))` and its partial derivatives in `sig`, `int`.
fn capacity(term: &Term, powers: &[f64], noise: f64) -> (f64, f64, f64) {
    let sig: f64 = bits(term.signal).map(|t| powers[t]).sum();
    let int: f64 = bits(term.interference).map(|t| powers[t]).sum();
    let base = noise + int;
    let total = base + sig;
    let cap = (total / base).log2();
    let d_sig = 1.0 / (LN_2 * total);
    let d_int = d_sig - 1.0 / (LN_2 * base);
    (cap, d_sig, d_int)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    use crate::channel::{sample_channel, ChannelStatistics};

    fn groups(sets: &[&[usize]]) -> ServiceGroups {
        ServiceGroups::new(
            (0..sets.len()).collect(),
            sets.iter().map(|s| s.iter().copied().collect::<BTreeSet<_>>()).collect(),
        )
        .unwrap()
    }

    fn check_gradient(scheme: Scheme, sets: &[&[usize]], seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stats = ChannelStatistics::homogeneous(4, 1.0).unwrap();
        let h = sample_channel(&stats, 3, &mut rng);
        let g = groups(sets);
        let mut f = Formulation::new(scheme, &g, &h, &[1.0; 4], 10.0);
        let x: Vec<f64> = (0..f.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mu = 3.0;
        let mut grad = vec![0.0; f.dim()];
        f.evaluate(&x, Some(mu), &mut grad);
        let mut scratch = vec![0.0; f.dim()];
        for i in 0..f.dim() {
            let step = 1e-6;
            let mut xp = x.clone();
            xp[i] += step;
            let fp = f.evaluate(&xp, Some(mu), &mut scratch).smooth;
            xp[i] -= 2.0 * step;
            let fm = f.evaluate(&xp, Some(mu), &mut scratch).smooth;
            let fd = (fp - fm) / (2.0 * step);
            assert!(
                (fd - grad[i]).abs() < 1e-5 * (1.0 + fd.abs()),
                "{scheme} coordinate {i}: analytic {} vs finite difference {fd}",
                grad[i]
            );
        }
    }

    #[test]
    fn mmf_gradient_matches_finite_differences() {
        check_gradient(Scheme::Mmf, &[&[0, 1], &[1, 2, 3]], 1);
    }

    #[test]
    fn sic_gradient_matches_finite_differences() {
        check_gradient(Scheme::MmfSic, &[&[0, 1], &[2]], 2);
    }

    #[test]
    fn rs_gradient_matches_finite_differences() {
        check_gradient(Scheme::MmfRs, &[&[0, 3], &[1, 3]], 3);
    }

    #[test]
    fn subsets_enumeration() {
        assert_eq!(subsets(0b101, 1), vec![0b001, 0b100, 0b101]);
        assert_eq!(subsets(0b111, 2), vec![0b011, 0b101, 0b110, 0b111]);
    }

    #[test]
    fn mmf_terms_include_mac_for_common_users() {
        let h = ChannelMatrix::from_real_columns(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
        let g = groups(&[&[0, 1], &[1]]);
        let f = Formulation::new(Scheme::Mmf, &g, &h, &[1.0; 2], 1.0);
        // user 0: one term; user 1: two singles + one pair
        assert_eq!(f.terms.len(), 4);
        assert!(f.terms.iter().any(|t| t.signal == 0b11 && t.weight_const == 2.0));
    }
}
