//! Rademacher complexity of a norm ball viewed as a class of linear functions
//! on dual-ball data: Rad(K, S) = E_σ ‖(1/n) Σ_j σ_j g_j‖_⋆.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::norm::{NormBall, NormFamily};
use crate::seed;
use crate::vector;

/// Largest sample size enumerated exactly (2^n sign vectors).
pub const EXACT_MAX_N: usize = 20;
/// Largest n + 1 accepted by [`check_monotonicity`].
pub const MONOTONICITY_MAX: usize = 13;
pub const MC_MIN_TRIALS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RadMethod {
    Exact,
    MonteCarlo,
    ClosedForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadEstimate {
    pub value: f64,
    /// Zero for exact and closed-form values.
    pub stderr: f64,
    pub n: usize,
    pub method: RadMethod,
}

fn check_sample(ball: &NormBall, s: &[Vec<f64>]) -> Result<()> {
    if s.is_empty() {
        return Err(Error::InvalidInput("Rademacher sample must be nonempty".into()));
    }
    for g in s {
        check_dim(ball.dim, g.len())?;
        let r = ball.dual_norm(g)?;
        if r > 1.0 + 1e-9 {
            return Err(Error::InvalidInput(format!(
                "sample vector has dual norm {r} > 1"
            )));
        }
    }
    Ok(())
}

/// ‖(1/n) Σ σ_j g_j‖_⋆ with signs given by the bits of `mask` (bit set = −1).
fn signed_average_dual(ball: &NormBall, s: &[Vec<f64>], mask: u64) -> f64 {
    let n = s.len();
    let mut acc = vec![0.0; ball.dim];
    for (j, g) in s.iter().enumerate() {
        let sign = if mask >> j & 1 == 1 { -1.0 } else { 1.0 };
        vector::axpy(sign / n as f64, g, &mut acc);
    }
    ball.dual_norm(&acc).unwrap_or(f64::NAN)
}

/// Exact Rad(K, S) by enumerating all sign vectors (n ≤ 20).
pub fn rad_exact(ball: &NormBall, s: &[Vec<f64>]) -> Result<RadEstimate> {
    check_sample(ball, s)?;
    let n = s.len();
    if n > EXACT_MAX_N {
        return Err(Error::InvalidInput(format!(
            "exact enumeration limited to n <= {EXACT_MAX_N}, got {n}; use rad_mc"
        )));
    }
    // σ and −σ give the same norm: fix the last sign to +1.
    let half = 1usize << (n - 1);
    let total: f64 = (0..half)
        .into_par_iter()
        .with_min_len(1024)
        .map(|mask| signed_average_dual(ball, s, mask as u64))
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    Ok(RadEstimate {
        value: total / half as f64,
        stderr: 0.0,
        n,
        method: RadMethod::Exact,
    })
}

/// Monte-Carlo Rad(K, S) with per-trial sign streams derived from `seed`.
pub fn rad_mc(ball: &NormBall, s: &[Vec<f64>], trials: usize, seed: u64) -> Result<RadEstimate> {
    check_sample(ball, s)?;
    if trials < MC_MIN_TRIALS {
        return Err(Error::InvalidInput(format!(
            "Monte-Carlo estimate needs at least {MC_MIN_TRIALS} trials, got {trials}"
        )));
    }
    let n = s.len();
    let values: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::rng(seed::mix(seed, &[t as u64]));
            let mut acc = vec![0.0; ball.dim];
            for g in s {
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                vector::axpy(sign / n as f64, g, &mut acc);
            }
            ball.dual_norm(&acc).unwrap_or(f64::NAN)
        })
        .collect();
    let mean = values.iter().sum::<f64>() / trials as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
    Ok(RadEstimate {
        value: mean,
        stderr: (var / trials as f64).sqrt(),
        n,
        method: RadMethod::MonteCarlo,
    })
}

/// Closed-form upper bound on Rad(K, n) = sup over dual-ball samples of size n.
///
/// * ℓ2 ball: n^{-1/2}
/// * ℓ1 ball (ℓ∞ data): √(2 ln(2d) / n)
/// * ℓ∞ ball (ℓ1 data): √(d / n)
pub fn rad_upper_bound(ball: &NormBall, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidInput("n must be >= 1".into()));
    }
    let nf = n as f64;
    let d = ball.dim as f64;
    match ball.family {
        NormFamily::L2 => Ok(1.0 / nf.sqrt()),
        NormFamily::L1 => Ok((2.0 * (2.0 * d).ln() / nf).sqrt()),
        NormFamily::Linf => Ok((d / nf).sqrt()),
        NormFamily::Lp(p) => Err(Error::Unsupported(format!(
            "no closed-form Rademacher bound for the l{p} ball"
        ))),
    }
}

pub fn rad_upper_bound_estimate(ball: &NormBall, n: usize) -> Result<RadEstimate> {
    Ok(RadEstimate {
        value: rad_upper_bound(ball, n)?,
        stderr: 0.0,
        n,
        method: RadMethod::ClosedForm,
    })
}

/// Smallest n with `rad_upper_bound(ball, n) < eps`, by doubling then
/// bisection (the bounds are decreasing in n).
pub fn rad_inverse(ball: &NormBall, eps: f64) -> Result<usize> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::InvalidInput(format!("eps must lie in (0, 1], got {eps}")));
    }
    let below = |n: usize| rad_upper_bound(ball, n).map(|b| b < eps);
    if below(1)? {
        return Ok(1);
    }
    let mut lo = 1usize;
    let mut hi = 2usize;
    while !below(hi)? {
        lo = hi;
        hi = hi.checked_mul(2).ok_or_else(|| {
            Error::InvalidInput(format!("Rad^-1({eps}) overflows usize"))
        })?;
    }
    // invariant: bound(lo) ≥ eps > bound(hi)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if below(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    /// Rad(K, S) for the full sample of size n + 1.
    pub full: f64,
    /// Mean over j of Rad(K, S without element j).
    pub leave_one_out_mean: f64,
    pub holds: bool,
}

/// Check Rad(K, S) ≤ mean_j Rad(K, S∖{j}) exactly, for |S| = n + 1 ≤ 13.
pub fn check_monotonicity(ball: &NormBall, s: &[Vec<f64>]) -> Result<MonotonicityReport> {
    if s.len() < 2 || s.len() > MONOTONICITY_MAX {
        return Err(Error::InvalidInput(format!(
            "monotonicity check needs 2 <= n + 1 <= {MONOTONICITY_MAX}, got {}",
            s.len()
        )));
    }
    let full = rad_exact(ball, s)?.value;
    let mut total = 0.0;
    for j in 0..s.len() {
        let rest: Vec<Vec<f64>> = s
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != j)
            .map(|(_, g)| g.clone())
            .collect();
        total += rad_exact(ball, &rest)?.value;
    }
    let leave_one_out_mean = total / s.len() as f64;
    Ok(MonotonicityReport {
        full,
        leave_one_out_mean,
        holds: full <= leave_one_out_mean + 1e-12,
    })
}

/// Dual-ball samples expected to come close to the sup in Rad(K, n):
/// a repeated extreme point of the dual ball, and i.i.d. random extreme
/// points. No optimality is claimed.
pub fn adversarial_samples(ball: &NormBall, n: usize, seed: u64) -> Vec<Vec<Vec<f64>>> {
    let d = ball.dim;
    let mut rng = seed::rng(seed);
    let mut random_extreme = || -> Vec<f64> {
        match ball.family {
            // dual ℓ∞ ball: sign vectors
            NormFamily::L1 => (0..d)
                .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
                .collect(),
            // dual ℓ1 ball: signed basis vectors
            NormFamily::Linf => {
                let mut v = vec![0.0; d];
                v[rng.random_range(0..d)] = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                v
            }
            _ => {
                let g: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                let r = ball.dual_norm(&g).unwrap_or(1.0).max(1e-300);
                vector::scale(1.0 / r, &g)
            }
        }
    };
    let repeated = match ball.family {
        NormFamily::L1 => vec![vec![1.0; d]; n],
        _ => vec![vector::basis(d, 0); n],
    };
    let random: Vec<Vec<f64>> = (0..n).map(|_| random_extreme()).collect();
    vec![repeated, random]
}
