//! User drops, large-scale path loss and i.i.d. Rayleigh small-scale fading.

use std::io::{self, Write};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::model::path_loss;
use crate::rng;

/// Per-user large-scale fading, fixed for a whole experiment repetition.
#[derive(Debug, Clone, PartialEq)]
pub struct LargeScaleProfile {
    /// `alphas[k] = distances[k]^-exponent`.
    pub alphas: Vec<f64>,
    /// Metres from the transmitter.
    pub distances: Vec<f64>,
}

impl LargeScaleProfile {
    /// Profile with prescribed coefficients; distances are back-computed.
    pub fn from_alphas(alphas: Vec<f64>, exponent: f64) -> Self {
        let distances = alphas.iter().map(|a| a.powf(-1.0 / exponent)).collect();
        Self { alphas, distances }
    }

    pub fn k_users(&self) -> usize {
        self.alphas.len()
    }

    pub fn alpha_min(&self) -> f64 {
        self.alphas.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// One coherence block of small-scale fading with its scaled channels.
///
/// `h[k]` is user k's length-N small-scale vector (a column of the N x K
/// matrix) and `g[k] = sqrt(alpha_k) h[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub h: Vec<Vec<Complex64>>,
    pub g: Vec<Vec<Complex64>>,
    pub seed: u64,
}

impl ChannelRealization {
    /// Draw a block from stream `stream` of `seed`.
    pub fn draw(seed: u64, stream: u64, n: usize, profile: &LargeScaleProfile) -> Self {
        let mut rng = rng::substream(seed, stream);
        let h = sample_small_scale(&mut rng, n, profile.k_users());
        Self::from_small_scale(h, profile, seed)
    }

    pub fn from_small_scale(
        h: Vec<Vec<Complex64>>,
        profile: &LargeScaleProfile,
        seed: u64,
    ) -> Self {
        assert_eq!(h.len(), profile.k_users(), "one channel column per user");
        let g = h
            .iter()
            .zip(&profile.alphas)
            .map(|(col, a)| {
                let s = a.sqrt();
                col.iter().map(|x| x * s).collect()
            })
            .collect();
        Self { h, g, seed }
    }

    pub fn n_elements(&self) -> usize {
        self.h.first().map_or(0, Vec::len)
    }

    pub fn k_users(&self) -> usize {
        self.h.len()
    }

    /// Elementwise sum of all users' small-scale channels.
    pub fn h_sum(&self) -> Vec<Complex64> {
        let mut sum = vec![Complex64::new(0.0, 0.0); self.n_elements()];
        for col in &self.h {
            for (s, x) in sum.iter_mut().zip(col) {
                *s += x;
            }
        }
        sum
    }
}

/// One CN(0, 1) sample: independent N(0, 1/2) real and imaginary parts.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// `n` i.i.d. CN(0, 1) samples.
pub fn complex_normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<Complex64> {
    (0..n).map(|_| complex_normal(rng)).collect()
}

/// Drop `k` users uniformly over a disk of `radius` metres.
pub fn sample_user_positions<R: Rng + ?Sized>(
    rng: &mut R,
    k: usize,
    radius: f64,
    exponent: f64,
) -> LargeScaleProfile {
    // Uniform over area: radius * sqrt(U). U is drawn from (0, 1] so that
    // no user lands exactly on the transmitter.
    let distances: Vec<f64> = (0..k)
        .map(|_| {
            let u: f64 = 1.0 - rng.random::<f64>();
            radius * u.sqrt()
        })
        .collect();
    let alphas = distances.iter().map(|&d| path_loss(d, exponent)).collect();
    LargeScaleProfile { alphas, distances }
}

/// `k` columns of `n` i.i.d. CN(0, 1) entries.
pub fn sample_small_scale<R: Rng + ?Sized>(rng: &mut R, n: usize, k: usize) -> Vec<Vec<Complex64>> {
    (0..k).map(|_| complex_normal_vec(rng, n)).collect()
}

/// Per-user training power giving average received power `eps_r`.
pub fn training_power(alpha_k: f64, n: usize, eps_r: f64) -> f64 {
    eps_r / (n as f64 * alpha_k)
}

/// Write `trial,element,user,re_h,im_h` rows for one realization.
pub fn write_channel_dump<W: Write>(
    out: &mut W,
    trial: usize,
    realization: &ChannelRealization,
    header: bool,
) -> io::Result<()> {
    if header {
        writeln!(out, "trial,element,user,re_h,im_h")?;
    }
    for n in 0..realization.n_elements() {
        for (k, col) in realization.h.iter().enumerate() {
            writeln!(out, "{trial},{n},{k},{:e},{:e}", col[n].re, col[n].im)?;
        }
    }
    Ok(())
}
