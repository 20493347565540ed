//! Equivalent-channel statistics, uplink pilots and MMSE estimation.
//!
//! After beam training the BS sees user k through the `N_RF`-dimensional
//! equivalent channel `g_bar_k = sqrt(alpha_k) C h_k`. Its entries are
//! modelled as i.i.d. `CN(u, delta^2)` scaled by `sqrt(alpha_k)`, which makes
//! the MMSE estimator affine with a scalar gain.

use std::f64::consts::PI;
use std::io::{self, Write};

use num_complex::Complex64;
use rand::Rng;

use crate::beamtraining::{quantization_gain, Combiner};
use crate::channel::{complex_normal, ChannelRealization};

/// Mean and variance of each entry of `C h_k`, plus per-element moments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelStats {
    /// Mean of each entry (real: the beam co-phases the users' channels).
    pub u: f64,
    pub delta_sq: f64,
    /// Per-element mean `u / L`.
    pub u0: f64,
    /// Per-element variance `delta^2 / L`.
    pub delta0_sq: f64,
    /// `u0 / beta`.
    pub tilde_u0: f64,
}

impl ChannelStats {
    /// Statistics from prescribed entry moments.
    pub fn from_moments(u: f64, delta_sq: f64, l: usize, beta: f64) -> Self {
        let l = l as f64;
        Self {
            u,
            delta_sq,
            u0: u / l,
            delta0_sq: delta_sq / l,
            tilde_u0: u / l / beta,
        }
    }

    /// Second moment `u^2 + delta^2` of each entry.
    pub fn power(&self) -> f64 {
        self.u * self.u + self.delta_sq
    }
}

/// Moments of `C h_k` for a quantized co-phased beam:
/// `u = (L beta / 2) sqrt(pi / K) q` and
/// `delta^2 = L beta^2 (1 - pi q^2 / (4 K))`, where
/// `q = (M_ph / pi) sin(pi / M_ph)` is the quantization gain.
pub fn equiv_channel_stats(l: usize, beta: f64, k: usize, m_ph: usize) -> ChannelStats {
    let q = quantization_gain(m_ph as f64);
    let kf = k as f64;
    let lf = l as f64;
    let u = lf * beta / 2.0 * (PI / kf).sqrt() * q;
    let delta_sq = lf * beta * beta * (1.0 - PI / (4.0 * kf) * q * q);
    ChannelStats {
        u,
        delta_sq,
        u0: u / lf,
        delta0_sq: delta_sq / lf,
        tilde_u0: u / lf / beta,
    }
}

/// Per-user statistics of the MMSE estimate and its error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserStats {
    pub alpha: f64,
    /// Mean of each estimate entry, `sqrt(alpha) u`.
    pub u_p: f64,
    /// Variance of each estimate entry.
    pub delta_p_sq: f64,
    /// Variance of each error entry.
    pub delta_e_sq: f64,
}

impl UserStats {
    /// Second moment of each estimate entry, `u_p^2 + delta_p^2`.
    pub fn estimate_power(&self) -> f64 {
        self.u_p * self.u_p + self.delta_p_sq
    }

    /// Variance of each true equivalent-channel entry, `alpha delta^2`.
    pub fn channel_variance(&self) -> f64 {
        self.delta_p_sq + self.delta_e_sq
    }
}

pub fn estimate_stats(alpha_k: f64, stats: &ChannelStats, tau_p: usize, rho_p: f64) -> UserStats {
    let snr = tau_p as f64 * rho_p;
    let var = alpha_k * stats.delta_sq;
    let denom = 1.0 + snr * var;
    UserStats {
        alpha: alpha_k,
        u_p: alpha_k.sqrt() * stats.u,
        delta_p_sq: snr * var * var / denom,
        delta_e_sq: var / denom,
    }
}

/// Statistics for every user of a profile.
pub fn estimate_stats_all(
    alphas: &[f64],
    stats: &ChannelStats,
    tau_p: usize,
    rho_p: f64,
) -> Vec<UserStats> {
    alphas
        .iter()
        .map(|&a| estimate_stats(a, stats, tau_p, rho_p))
        .collect()
}

/// `k` orthonormal length-`k` pilot sequences: columns of the unitary DFT,
/// `phi_k[t] = exp(-2 pi j k t / K) / sqrt(K)`.
pub fn pilot_matrix(k: usize) -> Vec<Vec<Complex64>> {
    assert!(k >= 1);
    let scale = 1.0 / (k as f64).sqrt();
    (0..k)
        .map(|col| {
            (0..k)
                .map(|t| {
                    // Reduce the product first so large K keeps exact phases.
                    let m = (col * t) % k;
                    Complex64::from_polar(scale, -2.0 * PI * m as f64 / k as f64)
                })
                .collect()
        })
        .collect()
}

/// Received uplink pilot block and the per-user despread observations.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotBlock {
    /// `N_RF x tau_p`, row-major: `y_p[n][t]`.
    pub y_p: Vec<Vec<Complex64>>,
    /// `y_p[k] = Y_p phi_k = sqrt(tau_p rho_p) g_bar_k + n_p,k`.
    pub despread: Vec<Vec<Complex64>>,
}

impl PilotBlock {
    /// `Y_p = sqrt(tau_p rho_p) sum_k g_bar_k phi_k^H + W_p` for a given
    /// noise matrix `w_p` (`N_RF x tau_p`).
    pub fn from_noise(
        equiv: &[Vec<Complex64>],
        rho_p: f64,
        pilots: &[Vec<Complex64>],
        w_p: Vec<Vec<Complex64>>,
    ) -> Self {
        let tau_p = pilots.first().map_or(0, Vec::len);
        let n_rf = w_p.len();
        assert_eq!(equiv.len(), pilots.len(), "one pilot per user");
        let amp = (tau_p as f64 * rho_p).sqrt();
        let mut y_p = w_p;
        for (g, phi) in equiv.iter().zip(pilots) {
            assert_eq!(g.len(), n_rf);
            for (row, gn) in y_p.iter_mut().zip(g) {
                for (y, p) in row.iter_mut().zip(phi) {
                    *y += amp * gn * p.conj();
                }
            }
        }
        let despread = pilots
            .iter()
            .map(|phi| {
                y_p.iter()
                    .map(|row| row.iter().zip(phi).map(|(y, p)| y * p).sum())
                    .collect()
            })
            .collect();
        Self { y_p, despread }
    }
}

/// Pilot block with fresh CN(0, 1) noise.
pub fn receive_pilots<R: Rng + ?Sized>(
    equiv: &[Vec<Complex64>],
    rho_p: f64,
    pilots: &[Vec<Complex64>],
    rng: &mut R,
) -> PilotBlock {
    let n_rf = equiv.first().map_or(0, Vec::len);
    let tau_p = pilots.first().map_or(0, Vec::len);
    let w_p = (0..n_rf)
        .map(|_| (0..tau_p).map(|_| complex_normal(rng)).collect())
        .collect();
    PilotBlock::from_noise(equiv, rho_p, pilots, w_p)
}

/// Equivalent channels `g_bar_k = C g_k` of every user.
pub fn equivalent_channels(c: &Combiner, realization: &ChannelRealization) -> Vec<Vec<Complex64>> {
    realization.g.iter().map(|g| c.apply(g)).collect()
}

/// Linear MMSE gain applied to the centred despread observation.
pub fn mmse_gain(alpha_k: f64, stats: &ChannelStats, tau_p: usize, rho_p: f64) -> f64 {
    let snr = tau_p as f64 * rho_p;
    let var = alpha_k * stats.delta_sq;
    var * snr.sqrt() / (snr * var + 1.0)
}

/// MMSE estimate of `g_bar_k` from its despread pilot observation.
pub fn mmse_estimate(
    y_pk: &[Complex64],
    alpha_k: f64,
    stats: &ChannelStats,
    tau_p: usize,
    rho_p: f64,
) -> Vec<Complex64> {
    let snr = tau_p as f64 * rho_p;
    let prior = alpha_k.sqrt() * stats.u;
    let expected_obs = (alpha_k * snr).sqrt() * stats.u;
    let gain = mmse_gain(alpha_k, stats, tau_p, rho_p);
    y_pk.iter()
        .map(|y| Complex64::new(prior, 0.0) + gain * (y - expected_obs))
        .collect()
}

/// `trial,user,element,re_ghat,im_ghat,re_err,im_err` rows.
pub fn write_estimation_dump<W: Write>(
    out: &mut W,
    trial: usize,
    estimates: &[Vec<Complex64>],
    errors: &[Vec<Complex64>],
    header: bool,
) -> io::Result<()> {
    if header {
        writeln!(out, "trial,user,element,re_ghat,im_ghat,re_err,im_err")?;
    }
    for (k, (est, err)) in estimates.iter().zip(errors).enumerate() {
        for (n, (g, e)) in est.iter().zip(err).enumerate() {
            writeln!(
                out,
                "{trial},{k},{n},{:e},{:e},{:e},{:e}",
                g.re, g.im, e.re, e.im
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::{prop_assert, proptest};

    fn unit_stats() -> ChannelStats {
        ChannelStats::from_moments(0.7, 1.0, 1, 1.0)
    }

    #[test]
    fn equivalent_channel_moments_example() {
        let s = equiv_channel_stats(16, 0.01, 4, 2);
        assert!((s.u - 0.045135).abs() < 1e-6, "{}", s.u);
        assert!((s.delta_sq - 1.47268e-3).abs() < 1e-8, "{}", s.delta_sq);
        assert!((s.u - 16.0 * s.u0).abs() < 1e-15);
        assert!((s.delta_sq - 16.0 * s.delta0_sq).abs() < 1e-18);
        assert!((s.tilde_u0 - s.u0 / 0.01).abs() < 1e-12);
        assert!(s.delta_sq <= 16.0 * 0.01 * 0.01);
    }

    #[test]
    fn fine_phases_reach_rayleigh_mean() {
        assert!((quantization_gain(1e6) - 1.0).abs() < 1e-11);
        let s = equiv_channel_stats(1, 1.0, 1, 1 << 20);
        assert!((s.u0 - PI.sqrt() / 2.0).abs() < 1e-9);
    }

    #[test]
    fn estimate_stats_limits() {
        let s = ChannelStats::from_moments(1.0, 1.0, 1, 1.0);
        let perfect = estimate_stats(2.0, &s, 4, 1e15);
        assert!((perfect.delta_p_sq - 2.0).abs() < 1e-12 && perfect.delta_e_sq < 1e-12);
        let blind = estimate_stats(2.0, &s, 4, 0.0);
        assert_eq!(blind.delta_p_sq, 0.0);
        assert_eq!(blind.delta_e_sq, 2.0);
        let half = estimate_stats(1.0, &s, 1, 1.0);
        assert_eq!((half.delta_p_sq, half.delta_e_sq), (0.5, 0.5));
        assert_eq!(half.u_p, 1.0);
    }

    #[test]
    fn pilots_are_orthonormal() {
        assert_eq!(pilot_matrix(1), vec![vec![Complex64::new(1.0, 0.0)]]);
        let two = pilot_matrix(2);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((two[0][0] - r).norm() < 1e-15 && (two[0][1] - r).norm() < 1e-15);
        assert!((two[1][0] - r).norm() < 1e-15 && (two[1][1] + r).norm() < 1e-15);
        for k in [1usize, 2, 3, 5, 8, 13] {
            let p = pilot_matrix(k);
            for i in 0..k {
                for j in 0..k {
                    let g: Complex64 = p[i].iter().zip(&p[j]).map(|(a, b)| a.conj() * b).sum();
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((g - want).norm() < 1e-12, "K={k} ({i},{j}) {g}");
                }
            }
        }
    }

    #[test]
    fn noiseless_despreading_recovers_channels() {
        let k = 3;
        let n_rf = 2;
        let mut r = rng::master(4);
        let equiv: Vec<Vec<Complex64>> = (0..k)
            .map(|_| (0..n_rf).map(|_| complex_normal(&mut r)).collect())
            .collect();
        let pilots = pilot_matrix(k);
        let rho_p = 2.5;
        let zero = vec![vec![Complex64::new(0.0, 0.0); k]; n_rf];
        let block = PilotBlock::from_noise(&equiv, rho_p, &pilots, zero);
        let amp = (k as f64 * rho_p).sqrt();
        for (y, g) in block.despread.iter().zip(&equiv) {
            for (a, b) in y.iter().zip(g) {
                assert!((a / amp - b).norm() < 1e-12);
            }
        }
        // User 0 alone leaks nothing into the other despread outputs.
        let mut solo = equiv.clone();
        for g in solo.iter_mut().skip(1) {
            g.fill(Complex64::new(0.0, 0.0));
        }
        let zero = vec![vec![Complex64::new(0.0, 0.0); k]; n_rf];
        let block = PilotBlock::from_noise(&solo, rho_p, &pilots, zero);
        for y in &block.despread[1..] {
            assert!(y.iter().all(|x| x.norm() < 1e-12));
        }
    }

    #[test]
    fn despread_noise_is_white() {
        let (k, n_rf) = (4, 2);
        let pilots = pilot_matrix(k);
        let zero = vec![vec![Complex64::new(0.0, 0.0); n_rf]; k];
        let mut r = rng::master(10);
        let draws = 100_000;
        let mut cov = [[Complex64::new(0.0, 0.0); 2]; 2];
        for _ in 0..draws {
            let b = receive_pilots(&zero, 1.0, &pilots, &mut r);
            let y = &b.despread[1];
            for i in 0..2 {
                for j in 0..2 {
                    cov[i][j] += y[i] * y[j].conj();
                }
            }
        }
        let d = draws as f64;
        assert!((cov[0][0].re / d - 1.0).abs() < 0.02);
        assert!((cov[1][1].re / d - 1.0).abs() < 0.02);
        assert!((cov[0][1] / d).norm() < 0.02);
    }

    #[test]
    fn mmse_limits() {
        let s = unit_stats();
        let y = vec![Complex64::new(3.0, -1.0), Complex64::new(0.2, 0.4)];
        let blind = mmse_estimate(&y, 2.0, &s, 3, 0.0);
        assert!(blind.iter().all(|g| (g - 2f64.sqrt() * 0.7).norm() < 1e-15));

        let rho_p = 1e12;
        let g_true = [Complex64::new(0.4, 0.3), Complex64::new(-1.0, 0.8)];
        let amp = (3.0 * rho_p as f64).sqrt();
        let y: Vec<Complex64> = g_true.iter().map(|g| g * amp).collect();
        let est = mmse_estimate(&y, 2.0, &s, 3, rho_p);
        for (a, b) in est.iter().zip(&g_true) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn mmse_monte_carlo_matches_closed_form() {
        // alpha = 1, delta^2 = 1, tau_p rho_p = 1: estimate and error
        // variances are both 1/2, and the two are uncorrelated.
        let s = unit_stats();
        let (tau_p, rho_p) = (1, 1.0);
        let mut r = rng::master(77);
        let draws = 100_000;
        let (mut sg, mut sg2, mut se2, mut cross) =
            (Complex64::new(0.0, 0.0), 0.0, 0.0, Complex64::new(0.0, 0.0));
        for _ in 0..draws {
            let g = Complex64::new(s.u, 0.0) + complex_normal(&mut r);
            let y = g + complex_normal(&mut r);
            let est = mmse_estimate(&[y], 1.0, &s, tau_p, rho_p)[0];
            let err = g - est;
            assert!(((est + err) - g).norm() <= 1e-12 * g.norm().max(1.0));
            sg += est;
            sg2 += est.norm_sqr();
            se2 += err.norm_sqr();
            cross += (est - s.u) * err.conj();
        }
        let d = draws as f64;
        let var_g = sg2 / d - (sg / d).norm_sqr();
        assert!((var_g / 0.5 - 1.0).abs() < 0.02, "{var_g}");
        assert!((se2 / d / 0.5 - 1.0).abs() < 0.02, "{}", se2 / d);
        // |E{(g_hat - u) e*}| within 3 sigma; per-sample std is 0.5.
        assert!((cross / d).norm() < 3.0 * 0.5 / d.sqrt(), "{}", cross / d);
    }

    #[test]
    fn dump_rows() {
        let est = vec![vec![Complex64::new(1.0, 2.0)]; 2];
        let err = vec![vec![Complex64::new(0.0, -1.0)]; 2];
        let mut buf = Vec::new();
        write_estimation_dump(&mut buf, 3, &est, &err, true).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(text.lines().nth(2).unwrap(), "3,1,0,1e0,2e0,0e0,-1e0");
    }

    proptest! {
        #[test]
        fn decomposition_and_monotonicity(alpha in 1e-6f64..10.0, delta in 1e-4f64..5.0, rho in 1e-3f64..1e3, tau in 1usize..16) {
            let s = ChannelStats::from_moments(1.0, delta, 1, 1.0);
            let a = estimate_stats(alpha, &s, tau, rho);
            let total = alpha * delta;
            prop_assert!(((a.delta_p_sq + a.delta_e_sq) - total).abs() <= 1e-12 * total);
            let b = estimate_stats(alpha, &s, tau, rho * 1.5);
            prop_assert!(b.delta_e_sq < a.delta_e_sq);
            prop_assert!(b.delta_p_sq > a.delta_p_sq);
        }
    }
}
