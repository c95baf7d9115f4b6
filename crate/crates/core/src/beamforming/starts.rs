//! Initial beams for the local solver.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use super::groups::ServiceGroups;
use crate::channel::ChannelMatrix;

pub(crate) type Beams = Vec<Vec<Complex64>>;

fn zeros(n: usize) -> Vec<Complex64> {
    vec![Complex64::new(0.0, 0.0); n]
}

fn unit(v: &mut [Complex64]) {
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|z| *z /= norm);
    }
}

/// Sum of user directions with per-user weights, one unit beam per stream.
fn combine(groups: &ServiceGroups, directions: &[(usize, Vec<Complex64>)], antennas: usize, weights: &[f64]) -> Beams {
    groups
        .user_sets()
        .iter()
        .map(|set| {
            let mut w = zeros(antennas);
            for (i, (user, d)) in directions.iter().enumerate() {
                if set.contains(user) {
                    w.iter_mut().zip(d).for_each(|(a, b)| *a += b * weights[i]);
                }
            }
            unit(&mut w);
            w
        })
        .collect()
}

fn normalized_channels(groups: &ServiceGroups, channel: &ChannelMatrix) -> Vec<(usize, Vec<Complex64>)> {
    groups
        .all_users()
        .into_iter()
        .map(|u| {
            let mut h = channel.column(u).to_vec();
            unit(&mut h);
            (u, h)
        })
        .collect()
}

/// Matched filter toward every user of each group.
pub(crate) fn mrt(groups: &ServiceGroups, channel: &ChannelMatrix) -> Beams {
    let dirs = normalized_channels(groups, channel);
    combine(groups, &dirs, channel.antennas(), &vec![1.0; dirs.len()])
}

/// Matched filter weighted toward weak users.
pub(crate) fn weak_weighted_mrt(groups: &ServiceGroups, channel: &ChannelMatrix) -> Beams {
    let dirs = normalized_channels(groups, channel);
    let weights: Vec<f64> = dirs.iter().map(|(u, _)| 1.0 / channel.norm_sqr(*u).sqrt().max(1e-300)).collect();
    combine(groups, &dirs, channel.antennas(), &weights)
}

/// Regularized zero-forcing directions `H (HᴴH + δI)⁻¹`, combined per group.
pub(crate) fn regularized_zf(groups: &ServiceGroups, channel: &ChannelMatrix, delta: f64) -> Option<Beams> {
    let users: Vec<usize> = groups.all_users().into_iter().collect();
    let n = users.len();
    let l = channel.antennas();
    let mut gram = vec![Complex64::new(0.0, 0.0); n * n];
    for (i, &a) in users.iter().enumerate() {
        for (j, &b) in users.iter().enumerate() {
            let v: Complex64 = channel.column(a).iter().zip(channel.column(b)).map(|(x, y)| x.conj() * y).sum();
            gram[i * n + j] = v + if i == j { delta } else { 0.0 };
        }
    }
    let inverse = invert(gram, n)?;
    let dirs: Vec<(usize, Vec<Complex64>)> = (0..n)
        .map(|j| {
            let mut d = zeros(l);
            for (i, &u) in users.iter().enumerate() {
                let c = inverse[i * n + j];
                d.iter_mut().zip(channel.column(u)).for_each(|(a, h)| *a += h * c);
            }
            unit(&mut d);
            (users[j], d)
        })
        .collect();
    Some(combine(groups, &dirs, l, &vec![1.0; n]))
}

/// Gauss-Jordan inverse with partial pivoting; `None` when singular.
fn invert(mut a: Vec<Complex64>, n: usize) -> Option<Vec<Complex64>> {
    let mut inv = vec![Complex64::new(0.0, 0.0); n * n];
    for i in 0..n {
        inv[i * n + i] = Complex64::new(1.0, 0.0);
    }
    let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max);
    for col in 0..n {
        let pivot = (col..n).max_by(|&x, &y| a[x * n + col].norm().total_cmp(&a[y * n + col].norm()))?;
        if a[pivot * n + col].norm() <= 1e-13 * scale {
            return None;
        }
        for k in 0..n {
            a.swap(col * n + k, pivot * n + k);
            inv.swap(col * n + k, pivot * n + k);
        }
        let p = a[col * n + col];
        for k in 0..n {
            a[col * n + k] /= p;
            inv[col * n + k] /= p;
        }
        for row in 0..n {
            if row != col {
                let f = a[row * n + col];
                if f != Complex64::new(0.0, 0.0) {
                    for k in 0..n {
                        let (ak, ik) = (a[col * n + k], inv[col * n + k]);
                        a[row * n + k] -= f * ak;
                        inv[row * n + k] -= f * ik;
                    }
                }
            }
        }
    }
    Some(inv)
}

pub(crate) fn random<R: Rng + ?Sized>(beams: usize, antennas: usize, rng: &mut R) -> Beams {
    (0..beams)
        .map(|_| {
            let mut w: Vec<Complex64> = (0..antennas)
                .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
                .collect();
            unit(&mut w);
            w
        })
        .collect()
}

/// `base` plus Gaussian noise of relative size `spread`.
pub(crate) fn perturbed<R: Rng + ?Sized>(base: &Beams, spread: f64, rng: &mut R) -> Beams {
    base.iter()
        .map(|w| {
            let mut v: Vec<Complex64> = w
                .iter()
                .map(|z| {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    z + Complex64::new(re, im) * (spread / (w.len() as f64).sqrt())
                })
                .collect();
            unit(&mut v);
            v
        })
        .collect()
}

/// Packs beams (scaled by `weights`) and auxiliary parameters into a point.
pub(crate) fn pack(beams: &[Vec<Complex64>], weights: &[f64], aux: &[f64]) -> Vec<f64> {
    let mut x = Vec::new();
    for (w, c) in beams.iter().zip(weights) {
        for z in w {
            x.push(z.re * c);
            x.push(z.im * c);
        }
    }
    x.extend_from_slice(aux);
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_of_small_matrix() {
        let c = |re: f64, im: f64| Complex64::new(re, im);
        let a = vec![c(2.0, 0.0), c(1.0, 1.0), c(1.0, -1.0), c(3.0, 0.0)];
        let inv = invert(a.clone(), 2).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let v: Complex64 = (0..2).map(|k| a[i * 2 + k] * inv[k * 2 + j]).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((v - c(expected, 0.0)).norm() < 1e-12);
            }
        }
        assert!(invert(vec![c(1.0, 0.0), c(2.0, 0.0), c(2.0, 0.0), c(4.0, 0.0)], 2).is_none());
    }

    #[test]
    fn zero_forcing_nulls_other_users() {
        let h = ChannelMatrix::from_real_columns(&[&[1.0, 0.5, 0.0], &[0.2, 1.0, 0.3]]).unwrap();
        let groups = ServiceGroups::new(vec![0, 1], vec![[0].into(), [1].into()]).unwrap();
        let w = regularized_zf(&groups, &h, 1e-12).unwrap();
        assert!(h.gain(1, &w[0]).norm() < 1e-6);
        assert!(h.gain(0, &w[1]).norm() < 1e-6);
    }
}
