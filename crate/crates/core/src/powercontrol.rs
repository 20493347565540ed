//! Max-min power control: equal split, the closed-form allocation for
//! many RF chains, and a bounded numeric search on the simplex.

use std::io::{self, Write};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use thiserror::Error;

use crate::estimation::UserStats;
use crate::rate::PowerAllocation;
use crate::rng;

/// Coarse exchange step of [`numeric_maxmin`].
pub const SEARCH_STEP: f64 = 1e-2;
/// Search stops once the step falls below this.
pub const SEARCH_MIN_STEP: f64 = 1e-4;
/// Default evaluation budget of [`numeric_maxmin`].
pub const SEARCH_BUDGET: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PowerError {
    #[error("degenerate estimate variance for user {user}")]
    DegenerateVariance { user: usize },
    #[error("no users")]
    Empty,
}

/// `eta_k = 1/K`.
pub fn equal_allocation(k_users: usize) -> PowerAllocation {
    assert!(k_users >= 1, "at least one user");
    PowerAllocation {
        etas: vec![1.0 / k_users as f64; k_users],
        phi: None,
    }
}

/// SINR-equalising allocation for many RF chains:
/// `eta_k = alpha_k (u_p,k^2 + delta_p,k^2) / (phi delta_p,k^4)`.
pub fn large_nrf_allocation(users: &[UserStats]) -> Result<PowerAllocation, PowerError> {
    if users.is_empty() {
        return Err(PowerError::Empty);
    }
    let weights = users
        .iter()
        .enumerate()
        .map(|(k, u)| {
            if u.delta_p_sq > 0.0 {
                Ok(u.alpha * u.estimate_power() / (u.delta_p_sq * u.delta_p_sq))
            } else {
                Err(PowerError::DegenerateVariance { user: k })
            }
        })
        .collect::<Result<Vec<f64>, _>>()?;
    let phi: f64 = weights.iter().sum();
    let mut alloc = PowerAllocation::from_weights(&weights).expect("positive weights");
    alloc.phi = Some(phi);
    Ok(alloc)
}

/// The quantity equalised across users by [`large_nrf_allocation`]:
/// `eta_k delta_p,k^4 / (alpha_k (u_p,k^2 + delta_p,k^2))`.
pub fn equalization_term(user: &UserStats, eta: f64) -> f64 {
    eta * user.delta_p_sq * user.delta_p_sq / (user.alpha * user.estimate_power())
}

fn min_rate(rates: &[f64]) -> f64 {
    rates.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Move `step` of mass from user `from` into the users selected by `to`.
fn exchange(etas: &[f64], from: usize, to: Target, step: f64) -> Option<Vec<f64>> {
    let moved = step.min(etas[from]);
    if moved <= 0.0 {
        return None;
    }
    let mut next = etas.to_vec();
    next[from] -= moved;
    match to {
        Target::One(i) => next[i] += moved,
        Target::AllOthers => {
            let share = moved / (etas.len() - 1) as f64;
            for (i, e) in next.iter_mut().enumerate() {
                if i != from {
                    *e += share;
                }
            }
        }
    }
    Some(next)
}

#[derive(Debug, Clone, Copy)]
enum Target {
    One(usize),
    AllOthers,
}

/// Best allocation found by coordinate exchange on the simplex.
///
/// Starts from the equal split. Each pass evaluates every pairwise
/// exchange of `step` plus "one user donates to all others" moves (needed
/// when several users tie at the minimum), and takes the best strict
/// improvement. Without one the step shrinks tenfold until it drops below
/// [`SEARCH_MIN_STEP`]. Candidate order within a pass is shuffled by
/// `seed`; ties go to the earliest candidate. At most `budget` calls to
/// `rate_fn` are made.
pub fn numeric_maxmin<F>(rate_fn: F, k_users: usize, budget: usize, seed: u64) -> PowerAllocation
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    assert!(k_users >= 1 && budget >= 1);
    let equal = equal_allocation(k_users);
    if k_users == 1 {
        return equal;
    }
    let mut etas = equal.etas.clone();
    let mut best = min_rate(&rate_fn(&etas));
    let mut used = 1;

    let mut moves: Vec<(usize, Target)> = Vec::new();
    for from in 0..k_users {
        for to in 0..k_users {
            if to != from {
                moves.push((from, Target::One(to)));
            }
        }
        if k_users > 2 {
            moves.push((from, Target::AllOthers));
        }
    }
    moves.shuffle(&mut rng::master(seed));

    let mut step = SEARCH_STEP;
    while step >= SEARCH_MIN_STEP && used < budget {
        let candidates: Vec<Vec<f64>> = moves
            .iter()
            .filter_map(|&(from, to)| exchange(&etas, from, to, step))
            .take(budget - used)
            .collect();
        used += candidates.len();
        let scores: Vec<f64> = candidates
            .par_iter()
            .map(|c| min_rate(&rate_fn(c)))
            .collect();
        let winner = scores
            .iter()
            .enumerate()
            .fold(None, |acc: Option<(usize, f64)>, (i, &s)| match acc {
                Some((_, b)) if s <= b => acc,
                _ if s > best => Some((i, s)),
                _ => acc,
            });
        match winner {
            Some((i, s)) => {
                etas.clone_from(&candidates[i]);
                best = s;
            }
            None => step /= 10.0,
        }
    }
    // Exchanges preserve the sum only up to rounding.
    PowerAllocation::from_weights(&etas).expect("search stays on the simplex")
}

/// Write `user,alpha,eta,method` rows.
pub fn write_allocation_csv<W: Write>(
    out: &mut W,
    alphas: &[f64],
    alloc: &PowerAllocation,
    method: &str,
) -> io::Result<()> {
    writeln!(out, "user,alpha,eta,method")?;
    for (k, (a, e)) in alphas.iter().zip(&alloc.etas).enumerate() {
        writeln!(out, "{k},{a:e},{e:.12},{method}")?;
    }
    Ok(())
}
