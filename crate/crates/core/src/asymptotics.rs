//! Closed-form multicast rates in asymptotic regimes.
//!
//! Everything here is a plain formula evaluator with no randomness, so the
//! functions double as oracles for the stochastic pipeline.

use std::f64::consts::PI;

use crate::beamtraining::quantization_gain;
use crate::estimation::ChannelStats;

/// Normalised per-element beamforming mean `sqrt(pi / 4K) (M/pi) sin(pi/M)`.
pub fn tilde_u0(k_users: usize, m_ph: usize) -> f64 {
    (PI / (4.0 * k_users as f64)).sqrt() * quantization_gain(m_ph as f64)
}

fn log2_1p(sinr: f64) -> f64 {
    (1.0 + sinr).log2()
}

/// Rate with unlimited pilot power and equal power control.
///
/// `alpha_min` is the weakest user's large-scale coefficient.
pub fn rate_large_pilot(
    n_rf: usize,
    l: usize,
    k_users: usize,
    m_ph: usize,
    beta: f64,
    rho: f64,
    alpha_min: f64,
) -> f64 {
    let (n, l, k) = (n_rf as f64, l as f64, k_users as f64);
    let u2 = tilde_u0(k_users, m_ph).powi(2);
    let num = k * n * l.powi(3) * u2 * u2;
    let den = k * l * l * u2 * (1.0 - u2)
        + (l * u2 + 1.0 - u2) * (1.0 / (beta * beta * n * rho * alpha_min) + 1.0 - u2);
    log2_1p(num / den)
}

/// Rate with many RF chains under the SINR-equalising allocation.
pub fn rate_large_nrf(
    n_rf: usize,
    stats: &ChannelStats,
    tau_p: usize,
    rho_p: f64,
    alphas: &[f64],
) -> f64 {
    let ratio = stats.u * stats.u / stats.delta_sq;
    let s: f64 = alphas
        .iter()
        .map(|a| {
            let snr = tau_p as f64 * rho_p * a * stats.delta_sq;
            (1.0 + snr) / snr
        })
        .sum();
    let sinr = n_rf as f64 * (ratio * s + 1.0).powi(2) / (ratio * s * s + (ratio + 1.0) * s);
    log2_1p(sinr)
}

/// Rate with many reflecting elements per sub-surface, equal power control.
/// The amplitude coefficient cancels out.
pub fn rate_large_l(n_rf: usize, l: usize, k_users: usize, m_ph: usize) -> f64 {
    let (n, l, k) = (n_rf as f64, l as f64, k_users as f64);
    let q2 = quantization_gain(m_ph as f64).powi(2);
    log2_1p(PI * n * l * q2 / ((4.0 - PI / k * q2) * (k + 1.0)))
}

/// [`rate_large_l`] with unlimited phase resolution.
pub fn rate_mph_limit(n_rf: usize, l: usize, k_users: usize) -> f64 {
    let (n, l, k) = (n_rf as f64, l as f64, k_users as f64);
    log2_1p(PI * n * l * k / ((4.0 * k - PI) * (k + 1.0)))
}

/// Large-user-count simplification of [`rate_large_l`]: SINR falls as 1/K.
pub fn rate_large_k(n_rf: usize, l: usize, k_users: usize, m_ph: usize) -> f64 {
    let q2 = quantization_gain(m_ph as f64).powi(2);
    log2_1p(PI * n_rf as f64 * l as f64 * q2 / (4.0 * k_users as f64))
}
