//! Achievable multicast rates under matched-filter precoding with
//! statistical-CSI detection.
//!
//! User k receives `x_k = sqrt(rho) g_bar_k^T sum_i c_i conj(g_hat_i)` with
//! `c_i = sqrt(eta_i / (u_p,i^2 + delta_p,i^2))`. Its rate is
//! `log2(1 + |A_k|^2 / (B_k + 1))` with `A_k = E{x_k}` and
//! `B_k = E{|x_k|^2} - |A_k|^2`. [`rate_user`] evaluates the closed form;
//! [`monte_carlo_sinr`] and [`simulate_end_to_end`] estimate the same
//! moments by sampling.

use std::io::{self, Write};

use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::beamtraining::{
    align_to_observation, combiner_from_beam, enumerate_codebook, ideal_beam, quantize_beam,
    receive_training, train_bisection, BeamError, Codebook, CorrelationMetric,
};
use crate::channel::{
    complex_normal, sample_small_scale, training_power, ChannelRealization, LargeScaleProfile,
};
use crate::estimation::{
    equiv_channel_stats, equivalent_channels, estimate_stats_all, mmse_estimate, pilot_matrix,
    receive_pilots, ChannelStats, UserStats,
};
use crate::model::SystemConfig;
use crate::rng;

/// Trials handled by one random sub-stream in the Monte Carlo estimators.
const CHUNK: usize = 2048;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RateError {
    #[error("degenerate statistics: user {user} has zero estimate power")]
    DegenerateStats { user: usize },
    #[error("invalid power allocation: {0}")]
    InvalidAllocation(String),
    #[error("expected {expected} entries, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Beam(#[from] BeamError),
}

/// Power-control coefficients on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocation {
    pub etas: Vec<f64>,
    /// Normalisation constant of the many-RF-chain closed form, if used.
    pub phi: Option<f64>,
}

impl PowerAllocation {
    pub fn new(etas: Vec<f64>) -> Result<Self, RateError> {
        if etas.is_empty() {
            return Err(RateError::InvalidAllocation("no users".into()));
        }
        if etas.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(RateError::InvalidAllocation(
                "coefficients must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = etas.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(RateError::InvalidAllocation(format!(
                "coefficients sum to {sum}, not 1"
            )));
        }
        Ok(Self { etas, phi: None })
    }

    /// Normalise non-negative weights onto the simplex.
    pub fn from_weights(weights: &[f64]) -> Result<Self, RateError> {
        let sum: f64 = weights.iter().sum();
        if !(sum.is_finite() && sum > 0.0) || weights.iter().any(|w| *w < 0.0) {
            return Err(RateError::InvalidAllocation(
                "weights must be non-negative with a positive sum".into(),
            ));
        }
        let mut etas: Vec<f64> = weights.iter().map(|w| w / sum).collect();
        // Put the rounding residue on the largest entry so the sum is 1.
        let residue = 1.0 - etas.iter().sum::<f64>();
        if let Some(max) = etas.iter_mut().max_by(|a, b| a.total_cmp(b)) {
            *max += residue;
        }
        Self::new(etas)
    }

    pub fn k_users(&self) -> usize {
        self.etas.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateMethod {
    Analytic,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    /// bits/s/Hz.
    pub per_user_rates: Vec<f64>,
    pub multicast_rate: f64,
    /// `|A_k|`.
    pub a_terms: Vec<f64>,
    pub b_terms: Vec<f64>,
    /// Standard error of each per-user rate (Monte Carlo only).
    pub stderr: Option<Vec<f64>>,
    pub method: RateMethod,
}

impl RateReport {
    fn from_terms(a: Vec<f64>, b: Vec<f64>, stderr: Option<Vec<f64>>, method: RateMethod) -> Self {
        let per_user_rates: Vec<f64> = a
            .iter()
            .zip(&b)
            .map(|(a, b)| rate_from_terms(a * a, *b))
            .collect();
        let multicast_rate = per_user_rates.iter().copied().fold(f64::INFINITY, f64::min);
        Self {
            per_user_rates,
            multicast_rate,
            a_terms: a,
            b_terms: b,
            stderr,
            method,
        }
    }

    pub fn sinr(&self, k: usize) -> f64 {
        self.a_terms[k].powi(2) / (self.b_terms[k] + 1.0)
    }

    /// User attaining the multicast rate (first on ties).
    pub fn bottleneck_user(&self) -> usize {
        self.per_user_rates
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map_or(0, |(k, _)| k)
    }
}

fn rate_from_terms(a_sq: f64, b: f64) -> f64 {
    (1.0 + a_sq / (b + 1.0)).log2().max(0.0)
}

/// Closed-form desired-signal power, leakage and rate of one user.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserRate {
    /// `|A_k|^2`.
    pub a_sq: f64,
    pub b: f64,
    pub sinr: f64,
    pub rate: f64,
}

fn precoder_weights(users: &[UserStats], etas: &[f64]) -> Result<Vec<f64>, RateError> {
    if users.len() != etas.len() {
        return Err(RateError::LengthMismatch {
            expected: users.len(),
            got: etas.len(),
        });
    }
    users
        .iter()
        .zip(etas)
        .enumerate()
        .map(|(i, (u, eta))| {
            let p = u.estimate_power();
            if p > 0.0 {
                Ok((eta / p).sqrt())
            } else {
                Err(RateError::DegenerateStats { user: i })
            }
        })
        .collect()
}

/// Exact closed-form rate of user `k`.
pub fn rate_user(
    rho: f64,
    n_rf: usize,
    stats: &ChannelStats,
    users: &[UserStats],
    etas: &[f64],
    k: usize,
) -> Result<UserRate, RateError> {
    let c = precoder_weights(users, etas)?;
    Ok(rate_user_with_weights(rho, n_rf, stats, users, etas, &c, k))
}

fn rate_user_with_weights(
    rho: f64,
    n_rf: usize,
    stats: &ChannelStats,
    users: &[UserStats],
    etas: &[f64],
    c: &[f64],
    k: usize,
) -> UserRate {
    let n = n_rf as f64;
    let uk = &users[k];
    let coherent: f64 = c
        .iter()
        .zip(users)
        .map(|(ci, ui)| ci * uk.u_p * ui.u_p)
        .sum::<f64>()
        + c[k] * uk.delta_p_sq;
    let a_sq = rho * n * n * coherent * coherent;
    // sqrt(eta_i u_p,i^2 / (u_p,i^2 + delta_p,i^2)) = c_i u_p,i
    let mean_sum: f64 = c.iter().zip(users).map(|(ci, ui)| ci * ui.u_p).sum();
    let spread: f64 = etas
        .iter()
        .zip(users)
        .map(|(eta, ui)| eta * ui.delta_p_sq / ui.estimate_power())
        .sum();
    let b = uk.alpha * rho * stats.delta_sq * n * mean_sum * mean_sum
        + uk.alpha * rho * stats.power() * n * spread;
    let sinr = a_sq / (b + 1.0);
    UserRate {
        a_sq,
        b,
        sinr,
        rate: rate_from_terms(a_sq, b),
    }
}

/// Closed-form rates of every user and their minimum.
pub fn multicast_rate(
    rho: f64,
    n_rf: usize,
    stats: &ChannelStats,
    users: &[UserStats],
    alloc: &PowerAllocation,
) -> Result<RateReport, RateError> {
    let c = precoder_weights(users, &alloc.etas)?;
    let (a, b) = (0..users.len())
        .map(|k| {
            let r = rate_user_with_weights(rho, n_rf, stats, users, &alloc.etas, &c, k);
            (r.a_sq.sqrt(), r.b)
        })
        .unzip();
    Ok(RateReport::from_terms(a, b, None, RateMethod::Analytic))
}

/// Closed-form report for a configuration and large-scale profile.
pub fn analytic_report(
    cfg: &SystemConfig,
    profile: &LargeScaleProfile,
    alloc: &PowerAllocation,
) -> Result<RateReport, RateError> {
    let stats = equiv_channel_stats(cfg.l_per_sub, cfg.beta, cfg.k_users, cfg.m_ph);
    let users = estimate_stats_all(&profile.alphas, &stats, cfg.tau_p, cfg.rho_p);
    multicast_rate(cfg.rho, cfg.n_rf, &stats, &users, alloc)
}

/// Running first and second moments of the received symbol of each user.
#[derive(Debug, Clone)]
struct MomentSums {
    sum: Vec<Complex64>,
    sum_sq: Vec<f64>,
    count: usize,
}

impl MomentSums {
    fn new(k: usize) -> Self {
        Self {
            sum: vec![Complex64::new(0.0, 0.0); k],
            sum_sq: vec![0.0; k],
            count: 0,
        }
    }

    fn push(&mut self, x: &[Complex64]) {
        for ((s, q), v) in self.sum.iter_mut().zip(self.sum_sq.iter_mut()).zip(x) {
            *s += v;
            *q += v.norm_sqr();
        }
        self.count += 1;
    }

    fn merge(mut self, other: &Self) -> Self {
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        for (a, b) in self.sum_sq.iter_mut().zip(&other.sum_sq) {
            *a += b;
        }
        self.count += other.count;
        self
    }

    fn report(&self) -> RateReport {
        let n = self.count as f64;
        let mut a = Vec::with_capacity(self.sum.len());
        let mut b = Vec::with_capacity(self.sum.len());
        let mut se = Vec::with_capacity(self.sum.len());
        for (s, q) in self.sum.iter().zip(&self.sum_sq) {
            let mean = s / n;
            let a_k = mean.norm();
            let b_k = (q / n - mean.norm_sqr()).max(0.0);
            // Delta method on |A_k| only: dR/d|A| = 2|A| / ((B + 1 + |A|^2) ln 2).
            let se_a = (b_k / n).sqrt();
            se.push(2.0 * a_k / ((b_k + 1.0 + a_k * a_k) * std::f64::consts::LN_2) * se_a);
            a.push(a_k);
            b.push(b_k);
        }
        RateReport::from_terms(a, b, Some(se), RateMethod::MonteCarlo)
    }
}

/// Sum `f` over `trials` in fixed-size chunks, chunk `i` drawing from
/// sub-stream `i` of `seed`. The reduction runs in chunk order so the result
/// is identical for any thread count.
fn chunked_moments<F>(k: usize, trials: usize, seed: u64, f: F) -> MomentSums
where
    F: Fn(&mut rng::SimRng, &mut MomentSums) + Sync,
{
    let chunks = trials.div_ceil(CHUNK);
    let partials: Vec<MomentSums> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut r = rng::substream(seed, chunk as u64);
            let mut acc = MomentSums::new(k);
            let len = CHUNK.min(trials - chunk * CHUNK);
            for _ in 0..len {
                f(&mut r, &mut acc);
            }
            acc
        })
        .collect();
    partials
        .iter()
        .fold(MomentSums::new(k), |acc, p| acc.merge(p))
}

/// `sqrt(rho) g_bar_k^T sum_i c_i conj(g_hat_i)` for every user.
fn received_symbols(
    rho: f64,
    weights: &[f64],
    estimates: &[Vec<Complex64>],
    channels: &[Vec<Complex64>],
    out: &mut Vec<Complex64>,
) {
    let n_rf = estimates[0].len();
    let mut precoder = vec![Complex64::new(0.0, 0.0); n_rf];
    for (c, est) in weights.iter().zip(estimates) {
        for (p, e) in precoder.iter_mut().zip(est) {
            *p += c * e.conj();
        }
    }
    let amp = rho.sqrt();
    out.clear();
    out.extend(channels.iter().map(|g| {
        amp * g
            .iter()
            .zip(&precoder)
            .map(|(a, b)| a * b)
            .sum::<Complex64>()
    }));
}

/// Sample `A_k`, `B_k` under the Gaussian estimate/error model:
/// `g_hat_i ~ CN(u_p,i 1, delta_p,i^2 I)`, `e_k ~ CN(0, delta_e,k^2 I)`.
pub fn monte_carlo_sinr(
    users: &[UserStats],
    alloc: &PowerAllocation,
    rho: f64,
    n_rf: usize,
    trials: usize,
    seed: u64,
) -> Result<RateReport, RateError> {
    assert!(trials >= 1, "at least one trial");
    let weights = precoder_weights(users, &alloc.etas)?;
    let k = users.len();
    let sums = chunked_moments(k, trials, seed, |r, acc| {
        let estimates: Vec<Vec<Complex64>> = users
            .iter()
            .map(|u| {
                let sd = u.delta_p_sq.sqrt();
                (0..n_rf).map(|_| u.u_p + sd * complex_normal(r)).collect()
            })
            .collect();
        let channels: Vec<Vec<Complex64>> = users
            .iter()
            .zip(&estimates)
            .map(|(u, est)| {
                let sd = u.delta_e_sq.sqrt();
                est.iter().map(|g| g + sd * complex_normal(r)).collect()
            })
            .collect();
        let mut x = Vec::with_capacity(k);
        received_symbols(rho, &weights, &estimates, &channels, &mut x);
        acc.push(&x);
    });
    Ok(sums.report())
}

/// How the metasurface beam is chosen in each coherence block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BeamMode {
    /// Bisection training over the full codebook, then per-sub-surface
    /// phase alignment from one extra observation.
    Trained,
    /// Co-phased continuous beam rounded to the phase grid.
    IdealQuantized,
}

impl std::str::FromStr for BeamMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "trained" => Ok(Self::Trained),
            "ideal_quantized" => Ok(Self::IdealQuantized),
            other => Err(format!(
                "unknown beam mode {other:?} (expected trained | ideal_quantized)"
            )),
        }
    }
}

/// Full link simulation for one large-scale profile: per trial draw the
/// channels, pick the beam, send pilots, form MMSE estimates and
/// accumulate the received precoded symbol of every user.
pub fn simulate_end_to_end(
    cfg: &SystemConfig,
    profile: &LargeScaleProfile,
    alloc: &PowerAllocation,
    mode: BeamMode,
    trials: usize,
    seed: u64,
) -> Result<RateReport, RateError> {
    simulate_with_cap(
        cfg,
        profile,
        alloc,
        mode,
        trials,
        seed,
        crate::beamtraining::DEFAULT_CODEBOOK_CAP,
    )
}

pub fn simulate_with_cap(
    cfg: &SystemConfig,
    profile: &LargeScaleProfile,
    alloc: &PowerAllocation,
    mode: BeamMode,
    trials: usize,
    seed: u64,
    codebook_cap: usize,
) -> Result<RateReport, RateError> {
    assert!(trials >= 1, "at least one trial");
    let k = cfg.k_users;
    if profile.k_users() != k {
        return Err(RateError::LengthMismatch {
            expected: k,
            got: profile.k_users(),
        });
    }
    let stats = equiv_channel_stats(cfg.l_per_sub, cfg.beta, k, cfg.m_ph);
    let users = estimate_stats_all(&profile.alphas, &stats, cfg.tau_p, cfg.rho_p);
    let weights = precoder_weights(&users, &alloc.etas)?;
    let codebook = match mode {
        BeamMode::Trained => Some(enumerate_codebook(
            cfg.n_total,
            cfg.m_ph,
            cfg.beta,
            codebook_cap,
        )?),
        BeamMode::IdealQuantized => None,
    };
    let pilots = pilot_matrix(cfg.tau_p);
    let powers: Vec<f64> = profile
        .alphas
        .iter()
        .map(|&a| training_power(a, cfg.n_total, cfg.eps_r))
        .collect();
    let sums = chunked_moments(k, trials, seed, |r, acc| {
        let h = sample_small_scale(r, cfg.n_total, k);
        let real = ChannelRealization::from_small_scale(h, profile, seed);
        let beam = match &codebook {
            None => quantize_beam(&ideal_beam(&real, cfg.beta), cfg.m_ph),
            Some(cb) => trained_beam(cb, cfg, &real, &powers, r),
        };
        let comb =
            combiner_from_beam(&beam, cfg.n_rf, cfg.l_per_sub).expect("beam length matches config");
        let channels = equivalent_channels(&comb, &real);
        let block = receive_pilots(&channels, cfg.rho_p, &pilots, r);
        let estimates: Vec<Vec<Complex64>> = block
            .despread
            .iter()
            .zip(&profile.alphas)
            .map(|(y, &a)| mmse_estimate(y, a, &stats, cfg.tau_p, cfg.rho_p))
            .collect();
        let mut x = Vec::with_capacity(k);
        received_symbols(cfg.rho, &weights, &estimates, &channels, &mut x);
        acc.push(&x);
    });
    Ok(sums.report())
}

fn trained_beam(
    codebook: &Codebook,
    cfg: &SystemConfig,
    real: &ChannelRealization,
    powers: &[f64],
    r: &mut rng::SimRng,
) -> crate::beamtraining::Beam {
    let mut measure = |b: &crate::beamtraining::Beam| {
        let comb = combiner_from_beam(b, cfg.n_rf, cfg.l_per_sub).expect("codebook matches config");
        receive_training(&comb, real, powers, r)
    };
    let outcome = train_bisection(codebook, CorrelationMetric::default(), |b| measure(b).power);
    let chosen = &codebook.beams[outcome.index];
    let obs = measure(chosen);
    align_to_observation(chosen, &obs.r, cfg.l_per_sub)
}

/// One row of a per-user rate sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct RateSweepRow {
    pub sweep_var: String,
    pub value: f64,
    pub user: usize,
    pub rate_analytic: f64,
    pub rate_mc: f64,
    pub stderr_mc: f64,
}

pub fn write_rate_sweep<W: Write>(out: &mut W, rows: &[RateSweepRow]) -> io::Result<()> {
    writeln!(out, "sweep_var,value,user,rate_analytic,rate_mc,stderr_mc")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6}",
            r.sweep_var, r.value, r.user, r.rate_analytic, r.rate_mc, r.stderr_mc
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::estimate_stats;

    fn perfect_user(alpha: f64, stats: &ChannelStats) -> UserStats {
        UserStats {
            alpha,
            u_p: alpha.sqrt() * stats.u,
            delta_p_sq: alpha * stats.delta_sq,
            delta_e_sq: 0.0,
        }
    }

    #[test]
    fn single_user_hand_expansion() {
        // u = delta^2 = 1, perfect estimates, rho = 1, N_RF = 2:
        // |A|^2 = 4 (1/sqrt2 + 1/sqrt2)^2 = 8, B = 1 + 2 = 3, SINR = 2.
        let stats = ChannelStats::from_moments(1.0, 1.0, 1, 1.0);
        let users = [perfect_user(1.0, &stats)];
        let r = rate_user(1.0, 2, &stats, &users, &[1.0], 0).unwrap();
        assert!((r.a_sq - 8.0).abs() < 1e-12);
        assert!((r.b - 3.0).abs() < 1e-12);
        assert!((r.sinr - 2.0).abs() < 1e-12);
        assert!((r.rate - 3f64.log2()).abs() < 1e-12);
    }

    #[test]
    fn zero_power_zero_rate() {
        let stats = ChannelStats::from_moments(1.0, 1.0, 1, 1.0);
        let users = [perfect_user(1.0, &stats), perfect_user(0.5, &stats)];
        for k in 0..2 {
            assert_eq!(
                rate_user(0.0, 4, &stats, &users, &[0.5, 0.5], k)
                    .unwrap()
                    .rate,
                0.0
            );
        }
    }

    #[test]
    fn no_estimate_spread_is_finite() {
        let stats = ChannelStats::from_moments(0.8, 1.0, 1, 1.0);
        let users: Vec<UserStats> = [1.0, 2.0]
            .iter()
            .map(|&a| UserStats {
                alpha: a,
                u_p: a.sqrt() * stats.u,
                delta_p_sq: 0.0,
                delta_e_sq: a,
            })
            .collect();
        let etas = [0.3, 0.7];
        let r = rate_user(5.0, 3, &stats, &users, &etas, 0).unwrap();
        // With delta_p = 0 the coherent sum is u_p,k sum_i sqrt(eta_i).
        let coh: f64 = users[0].u_p * etas.iter().map(|e| e.sqrt()).sum::<f64>();
        assert!((r.a_sq - 5.0 * 9.0 * coh * coh).abs() < 1e-9 * r.a_sq);
        let nudged: Vec<UserStats> = users
            .iter()
            .map(|u| UserStats {
                delta_p_sq: 1e-12,
                ..*u
            })
            .collect();
        let near = rate_user(5.0, 3, &stats, &nudged, &etas, 0).unwrap();
        assert!((near.rate - r.rate).abs() < 1e-9);
    }

    #[test]
    fn degenerate_stats_are_rejected() {
        let stats = ChannelStats::from_moments(0.0, 0.0, 1, 1.0);
        let users = [perfect_user(1.0, &stats)];
        assert_eq!(
            rate_user(1.0, 1, &stats, &users, &[1.0], 0),
            Err(RateError::DegenerateStats { user: 0 })
        );
    }

    #[test]
    fn multicast_is_minimum() {
        let stats = equiv_channel_stats(16, 0.01, 3, 4);
        let users = estimate_stats_all(&[1e-3, 4e-4, 2e-3], &stats, 3, 1e6);
        let alloc = PowerAllocation::new(vec![1.0 / 3.0; 3]).unwrap();
        let rep = multicast_rate(1e7, 4, &stats, &users, &alloc).unwrap();
        let min = rep
            .per_user_rates
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        assert_eq!(rep.multicast_rate, min);
        assert_eq!(rep.bottleneck_user(), 1);

        let same = estimate_stats_all(&[1e-3; 3], &stats, 3, 1e6);
        let rep = multicast_rate(1e7, 4, &stats, &same, &alloc).unwrap();
        for r in &rep.per_user_rates {
            assert!((r - rep.multicast_rate).abs() < 1e-12);
        }

        let mut weaker = same.clone();
        weaker[2] = estimate_stats(0.5e-3, &stats, 3, 1e6);
        let rep2 = multicast_rate(1e7, 4, &stats, &weaker, &alloc).unwrap();
        assert!(rep2.multicast_rate <= rep.multicast_rate);

        let one = multicast_rate(
            1e7,
            4,
            &stats,
            &same[..1],
            &PowerAllocation::new(vec![1.0]).unwrap(),
        )
        .unwrap();
        assert_eq!(one.multicast_rate, one.per_user_rates[0]);
    }

    #[test]
    fn allocation_validation() {
        assert!(PowerAllocation::new(vec![0.5, 0.6]).is_err());
        assert!(PowerAllocation::new(vec![-0.1, 1.1]).is_err());
        let a = PowerAllocation::from_weights(&[1.0, 2.0, 3.0]).unwrap();
        assert!((a.etas.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        assert!(PowerAllocation::from_weights(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn deterministic_monte_carlo_is_exact() {
        let users = [UserStats {
            alpha: 1.0,
            u_p: 0.5,
            delta_p_sq: 0.0,
            delta_e_sq: 0.0,
        }];
        let alloc = PowerAllocation::new(vec![1.0]).unwrap();
        let rep = monte_carlo_sinr(&users, &alloc, 4.0, 3, 1, 0).unwrap();
        // x = sqrt(rho) * N_RF * u_p^2 / |u_p| = 2 * 3 * 0.5
        assert!((rep.a_terms[0] - 3.0).abs() < 1e-12);
        assert_eq!(rep.b_terms[0], 0.0);
    }

    #[test]
    fn monte_carlo_single_user_sinr() {
        let stats = ChannelStats::from_moments(1.0, 1.0, 1, 1.0);
        let users = [perfect_user(1.0, &stats)];
        let alloc = PowerAllocation::new(vec![1.0]).unwrap();
        let rep = monte_carlo_sinr(&users, &alloc, 1.0, 2, 200_000, 42).unwrap();
        assert!((rep.sinr(0) / 2.0 - 1.0).abs() < 0.02, "{}", rep.sinr(0));
    }

    #[test]
    fn monte_carlo_is_bit_reproducible() {
        let stats = ChannelStats::from_moments(1.0, 1.0, 1, 1.0);
        let users = [perfect_user(1.0, &stats), perfect_user(0.3, &stats)];
        let alloc = PowerAllocation::new(vec![0.4, 0.6]).unwrap();
        let a = monte_carlo_sinr(&users, &alloc, 2.0, 2, 10_000, 9).unwrap();
        let b = monte_carlo_sinr(&users, &alloc, 2.0, 2, 10_000, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn standard_error_scales_with_trials() {
        let stats = ChannelStats::from_moments(1.0, 1.0, 1, 1.0);
        let users = [perfect_user(1.0, &stats)];
        let alloc = PowerAllocation::new(vec![1.0]).unwrap();
        let spread = |trials: usize| {
            let xs: Vec<f64> = (0..40)
                .map(|s| {
                    monte_carlo_sinr(&users, &alloc, 1.0, 2, trials, s)
                        .unwrap()
                        .a_terms[0]
                })
                .collect();
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
        };
        let ratio = spread(4096) / spread(8192);
        assert!(ratio > 1.1 && ratio < 1.9, "{ratio}");
    }

    #[test]
    fn end_to_end_zero_power() {
        let cfg = SystemConfig {
            rho: 0.0,
            ..SystemConfig::default().with_n_rf(2).with_k_users(2)
        }
        .validate()
        .unwrap();
        let profile = LargeScaleProfile::from_alphas(vec![1e-6, 2e-6], 3.0);
        let alloc = PowerAllocation::new(vec![0.5, 0.5]).unwrap();
        let rep =
            simulate_end_to_end(&cfg, &profile, &alloc, BeamMode::IdealQuantized, 64, 1).unwrap();
        assert!(rep.per_user_rates.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn trained_mode_respects_codebook_cap() {
        let cfg = SystemConfig::default().validate().unwrap();
        let profile = LargeScaleProfile::from_alphas(vec![1e-6; 8], 3.0);
        let alloc = PowerAllocation::new(vec![0.125; 8]).unwrap();
        let err = simulate_end_to_end(&cfg, &profile, &alloc, BeamMode::Trained, 4, 1).unwrap_err();
        assert!(matches!(
            err,
            RateError::Beam(BeamError::CodebookTooLarge { .. })
        ));
    }

    #[test]
    fn sweep_csv_header() {
        let mut buf = Vec::new();
        let row = RateSweepRow {
            sweep_var: "rho_dbm".into(),
            value: -10.0,
            user: 2,
            rate_analytic: 1.5,
            rate_mc: 1.49,
            stderr_mc: 0.01,
        };
        write_rate_sweep(&mut buf, &[row]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "sweep_var,value,user,rate_analytic,rate_mc,stderr_mc\nrho_dbm,-10,2,1.500000,1.490000,0.010000\n"
        );
    }
}
