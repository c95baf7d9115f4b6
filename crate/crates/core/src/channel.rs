//! i.i.d. circularly-symmetric complex Gaussian flat-fading channels.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// `L × K` channel matrix; column `k` is the channel `h_k` of user `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    antennas: usize,
    users: usize,
    // column-major
    data: Vec<Complex64>,
}

impl ChannelMatrix {
    pub fn from_columns(columns: Vec<Vec<Complex64>>) -> Result<Self> {
        let users = columns.len();
        let antennas = columns.first().map_or(0, Vec::len);
        if users == 0 || antennas == 0 || columns.iter().any(|c| c.len() != antennas) {
            return Err(Error::InvalidArgument("channel needs K ≥ 1 columns of equal length L ≥ 1".into()));
        }
        let data: Vec<Complex64> = columns.into_iter().flatten().collect();
        if data.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::InvalidArgument("channel entries must be finite".into()));
        }
        Ok(ChannelMatrix { antennas, users, data })
    }

    /// Real-valued columns, convenient for hand-built instances.
    pub fn from_real_columns(columns: &[&[f64]]) -> Result<Self> {
        Self::from_columns(
            columns
                .iter()
                .map(|c| c.iter().map(|&x| Complex64::new(x, 0.0)).collect())
                .collect(),
        )
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn column(&self, user: usize) -> &[Complex64] {
        &self.data[user * self.antennas..(user + 1) * self.antennas]
    }

    pub fn get(&self, antenna: usize, user: usize) -> Complex64 {
        self.data[user * self.antennas + antenna]
    }

    /// `h_k^H w`.
    pub fn gain(&self, user: usize, w: &[Complex64]) -> Complex64 {
        self.column(user)
            .iter()
            .zip(w)
            .map(|(h, w)| h.conj() * w)
            .sum()
    }

    pub fn norm_sqr(&self, user: usize) -> f64 {
        self.column(user).iter().map(|h| h.norm_sqr()).sum()
    }
}

/// Mean fading gain `g_k` of each user.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStatistics {
    gains: Vec<f64>,
}

impl ChannelStatistics {
    pub fn new(gains: Vec<f64>) -> Result<Self> {
        if gains.is_empty() {
            return Err(Error::InvalidArgument("need at least one user".into()));
        }
        if let Some(g) = gains.iter().find(|g| !(g.is_finite() && **g > 0.0)) {
            return Err(Error::InvalidArgument(format!("channel gains must be > 0, got {g}")));
        }
        Ok(ChannelStatistics { gains })
    }

    pub fn homogeneous(users: usize, gain: f64) -> Result<Self> {
        Self::new(vec![gain; users])
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    pub fn users(&self) -> usize {
        self.gains.len()
    }
}

/// Draws `H` with independent `CN(0, g_k)` entries in column `k`.
pub fn sample_channel<R: Rng + ?Sized>(
    stats: &ChannelStatistics,
    antennas: usize,
    rng: &mut R,
) -> ChannelMatrix {
    let mut data = Vec::with_capacity(antennas * stats.users());
    for &g in stats.gains() {
        let scale = (g / 2.0).sqrt();
        for _ in 0..antennas {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            data.push(Complex64::new(scale * re, scale * im));
        }
    }
    ChannelMatrix { antennas, users: stats.users(), data }
}
