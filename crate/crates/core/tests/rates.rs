use rand::Rng;

use pmscast::asymptotics::{rate_large_nrf, rate_large_pilot};
use pmscast::estimation::{equiv_channel_stats, estimate_stats_all, ChannelStats};
use pmscast::powercontrol::{
    equal_allocation, large_nrf_allocation, numeric_maxmin, SEARCH_BUDGET,
};
use pmscast::rate::{multicast_rate, rate_user, PowerAllocation};
use pmscast::rng;

fn min_rate(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

#[test]
fn rate_increases_with_chains_and_power() {
    let stats = equiv_channel_stats(16, 0.01, 4, 2);
    let users = estimate_stats_all(&[1e-6, 3e-6, 5e-7, 2e-6], &stats, 4, 1e9);
    let etas = [0.1, 0.2, 0.3, 0.4];
    for k in 0..4 {
        let by_nrf: Vec<f64> = [1, 2, 4, 8, 16]
            .iter()
            .map(|&n| rate_user(1e9, n, &stats, &users, &etas, k).unwrap().rate)
            .collect();
        assert!(by_nrf.windows(2).all(|w| w[1] > w[0]), "{by_nrf:?}");
        let by_rho: Vec<f64> = [1e6, 1e8, 1e10, 1e12]
            .iter()
            .map(|&rho| rate_user(rho, 4, &stats, &users, &etas, k).unwrap().rate)
            .collect();
        assert!(by_rho.windows(2).all(|w| w[1] > w[0]), "{by_rho:?}");
    }
}

#[test]
fn rate_saturates_in_transmit_power() {
    let stats = equiv_channel_stats(8, 0.01, 8, 2);
    let users = estimate_stats_all(&[1e-6; 8], &stats, 8, 1e9);
    let alloc = equal_allocation(8);
    let r = |rho: f64| {
        multicast_rate(rho, 4, &stats, &users, &alloc)
            .unwrap()
            .multicast_rate
    };
    assert!(r(1e14) - r(1e12) < 1e-3);
    assert!(r(1e14).is_finite() && r(1e14) < 5.0);
}

#[test]
fn common_scaling_of_weights_leaves_rates_unchanged() {
    let stats = equiv_channel_stats(32, 0.02, 3, 4);
    let users = estimate_stats_all(&[0.5, 1.0, 2.0], &stats, 3, 10.0);
    let w = [0.2, 0.5, 0.3];
    let a = multicast_rate(
        50.0,
        4,
        &stats,
        &users,
        &PowerAllocation::from_weights(&w).unwrap(),
    )
    .unwrap();
    let scaled: Vec<f64> = w.iter().map(|x| x * 7.5).collect();
    let b = multicast_rate(
        50.0,
        4,
        &stats,
        &users,
        &PowerAllocation::from_weights(&scaled).unwrap(),
    )
    .unwrap();
    for (x, y) in a.per_user_rates.iter().zip(&b.per_user_rates) {
        assert!((x - y).abs() < 1e-12);
    }
}

/// Identical users at high transmit power: pilot power raises the rate
/// while u^2 <= delta^2 and lowers it when the mean dominates.
#[test]
fn pilot_power_helps_only_when_spread_dominates() {
    let rate = |l: usize, rho_p: f64| {
        let stats = equiv_channel_stats(l, 0.01, 8, 2);
        let users = estimate_stats_all(&[1e-6; 8], &stats, 8, rho_p);
        multicast_rate(1e9, 4, &stats, &users, &equal_allocation(8))
            .unwrap()
            .multicast_rate
    };
    let grid = [1e6, 1e8, 1e10];
    let s8 = equiv_channel_stats(8, 0.01, 8, 2);
    assert!(s8.u * s8.u < s8.delta_sq);
    let low: Vec<f64> = grid.iter().map(|&p| rate(8, p)).collect();
    assert!(low.windows(2).all(|w| w[1] > w[0]), "{low:?}");
    let s32 = equiv_channel_stats(32, 0.01, 8, 2);
    assert!(s32.u * s32.u > s32.delta_sq);
    let high: Vec<f64> = grid.iter().map(|&p| rate(32, p)).collect();
    assert!(high.windows(2).all(|w| w[1] < w[0]), "{high:?}");
}

#[test]
fn large_pilot_form_matches_closed_form() {
    // N_RF = 4, L = 64, K = 8, M_ph = 2, beta = 0.01, rho alpha = 1e3, rho_p = 1e8.
    let approx = rate_large_pilot(4, 64, 8, 2, 0.01, 1e3, 1.0);
    let stats = equiv_channel_stats(64, 0.01, 8, 2);
    let users = estimate_stats_all(&[1.0; 8], &stats, 8, 1e8);
    let exact = multicast_rate(1e3, 4, &stats, &users, &equal_allocation(8))
        .unwrap()
        .multicast_rate;
    assert!((approx / exact - 1.0).abs() < 0.03, "{approx} vs {exact}");
}

#[test]
fn large_nrf_form_matches_closed_form() {
    let stats = ChannelStats::from_moments(1.0, 1.0, 1, 1.0);
    let users = estimate_stats_all(&[1.0, 4.0], &stats, 1, 1.0);
    let alloc = large_nrf_allocation(&users).unwrap();
    let exact = multicast_rate(1.0, 10_000, &stats, &users, &alloc).unwrap();
    let approx = rate_large_nrf(10_000, &stats, 1, 1.0, &[1.0, 4.0]);
    assert!((exact.multicast_rate / approx - 1.0).abs() < 0.02);
    // Equalised SINRs: both users at the same rate.
    assert!((exact.per_user_rates[0] - exact.per_user_rates[1]).abs() < 1e-3);
}

#[test]
fn numeric_search_returns_equal_split_for_symmetric_users() {
    let stats = equiv_channel_stats(64, 0.01, 4, 2);
    let users = estimate_stats_all(&[1.0; 4], &stats, 4, 1e8);
    let rate = |e: &[f64]| {
        let alloc = PowerAllocation {
            etas: e.to_vec(),
            phi: None,
        };
        multicast_rate(1e3, 4, &stats, &users, &alloc)
            .unwrap()
            .per_user_rates
    };
    let a = numeric_maxmin(rate, 4, SEARCH_BUDGET, 11);
    for e in &a.etas {
        assert!((e - 0.25).abs() < 1e-3, "{:?}", a.etas);
    }
}

#[test]
fn numeric_search_never_loses_to_equal_split() {
    let mut r = rng::master(31);
    for seed in 0..20 {
        let k = r.random_range(2..=6);
        let stats = equiv_channel_stats(r.random_range(4..64), 0.01, k, 2);
        let alphas: Vec<f64> = (0..k)
            .map(|_| 10f64.powf(r.random_range(-1.0..1.0)))
            .collect();
        let users = estimate_stats_all(&alphas, &stats, k, 10f64.powf(r.random_range(0.0..4.0)));
        let rho = 10f64.powf(r.random_range(2.0..5.0));
        let rate = |e: &[f64]| {
            let alloc = PowerAllocation {
                etas: e.to_vec(),
                phi: None,
            };
            multicast_rate(rho, 4, &stats, &users, &alloc)
                .unwrap()
                .per_user_rates
        };
        let equal = min_rate(&rate(&equal_allocation(k).etas));
        let a = numeric_maxmin(rate, k, 2_000, seed);
        assert!((a.etas.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        assert!(a.etas.iter().all(|&e| e >= 0.0));
        assert!(min_rate(&rate(&a.etas)) >= equal);
    }
}
