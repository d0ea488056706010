//! Stochastic first-order certificates at a population minimizer, and the
//! Bregman, truncated and linear-part quantities built on them.
//!
//! A certificate fixes one subgradient g_z ∈ ∂f_z(x⋆) per outcome such that
//! G = E g_z satisfies ⟨G, x − x⋆⟩ ≥ 0 on K. Every divergence below reuses
//! those g_z; they are never re-queried at other points.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::instance::{Outcome, Sample, ScoInstance};
use crate::net::Net;
use crate::seed;
use crate::vector::{self, dot};

/// Default tolerance on the first-order violation.
pub const CERTIFICATE_TOL: f64 = 1e-8;
const MAX_SWEEPS: usize = 200;
const LINE_SEARCH_ITERS: usize = 120;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateStrategy {
    /// Every f_z is differentiable at x⋆.
    Gradient,
    /// Convex weights over subdifferential extreme points, tuned by
    /// coordinate descent.
    TieWeights,
    /// Oracle subgradients accepted as-is.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalityCertificate {
    pub xstar: Vec<f64>,
    /// g_z indexed by outcome; `None` for implicit families, whose g_z is the
    /// (deterministic) oracle subgradient at x⋆.
    pub per_outcome_g: Option<Vec<Vec<f64>>>,
    /// Distribution of g_z under 𝒟 as (probability, vector) atoms.
    pub atoms: Vec<(f64, Vec<f64>)>,
    /// G = E g_z.
    pub g_mean: Vec<f64>,
    /// max over x ∈ K of −⟨G, x − x⋆⟩.
    pub violation: f64,
    pub strategy: CertificateStrategy,
    /// Digest of the chosen subgradients, logged with every report.
    pub id: String,
}

/// First-order violation max over K of −⟨G, x − x⋆⟩ and the point attaining it.
pub fn first_order_violation(
    inst: &ScoInstance,
    g: &[f64],
    xstar: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let (point, min) = inst.ball().linear_minimize(g)?;
    Ok((dot(g, xstar) - min, point))
}

fn mean_of(atoms: &[(f64, Vec<f64>)], dim: usize) -> Vec<f64> {
    let mut g = vec![0.0; dim];
    for (p, gz) in atoms {
        vector::axpy(*p, gz, &mut g);
    }
    g
}

fn digest(xstar: &[f64], atoms: &[(f64, Vec<f64>)]) -> String {
    let mut h = seed::mix(0x6365_7274, &xstar.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    for (p, g) in atoms {
        h = seed::mix(h, &[p.to_bits()]);
        h = seed::mix(h, &g.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
    format!("{h:016x}")
}

/// Minimize a convex function on [0, 1] by golden-section search.
fn golden_section<F: Fn(f64) -> f64>(f: F) -> (f64, f64) {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0, 1.0);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..LINE_SEARCH_ITERS {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
        }
    }
    // endpoints are where piecewise-linear optima usually sit
    [(0.0, f(0.0)), (1.0, f(1.0)), (c, fc), (d, fd)]
        .into_iter()
        .fold((0.0, f64::INFINITY), |best, cand| if cand.1 < best.1 { cand } else { best })
}

/// Choose per-outcome subgradients at `xstar` whose mean satisfies the
/// first-order condition on K up to `tol`.
///
/// Strategy, in order: gradients when every f_z is smooth at x⋆; convex
/// tie weights over subdifferential extreme points tuned by coordinate
/// descent; otherwise the oracle subgradients. A violation of at most `tol`
/// also certifies F(x⋆) ≤ min_K F + tol, since F(x) ≥ F(x⋆) + ⟨G, x − x⋆⟩.
pub fn build_certificate(
    inst: &ScoInstance,
    xstar: &[f64],
    tol: f64,
) -> Result<OptimalityCertificate> {
    check_dim(inst.dim(), xstar.len())?;
    inst.population_loss(xstar)?;
    let dim = inst.dim();

    let Some(weights) = inst.weights() else {
        let atoms = inst.subgradient_distribution(xstar);
        return finish(inst, xstar, None, atoms, CertificateStrategy::Oracle, tol);
    };
    let outcomes = weights.len();
    let smooth = (0..outcomes).all(|z| inst.is_smooth_at(z as Outcome, xstar));
    let extremes: Option<Vec<Vec<Vec<f64>>>> = (0..outcomes)
        .map(|z| inst.subdifferential_extremes(z as Outcome, xstar))
        .collect();

    let (per_outcome, strategy) = match (smooth, extremes) {
        (true, _) => (
            (0..outcomes).map(|z| inst.subgrad(z as Outcome, xstar)).collect::<Vec<_>>(),
            CertificateStrategy::Gradient,
        ),
        (false, Some(ext)) => (tie_weights(inst, xstar, weights, &ext, tol)?, CertificateStrategy::TieWeights),
        (false, None) => (
            (0..outcomes).map(|z| inst.subgrad(z as Outcome, xstar)).collect(),
            CertificateStrategy::Oracle,
        ),
    };
    let atoms = weights.iter().copied().zip(per_outcome.iter().cloned()).collect::<Vec<_>>();
    debug_assert_eq!(mean_of(&atoms, dim).len(), dim);
    finish(inst, xstar, Some(per_outcome), atoms, strategy, tol)
}

fn tie_weights(
    inst: &ScoInstance,
    xstar: &[f64],
    weights: &[f64],
    extremes: &[Vec<Vec<f64>>],
    tol: f64,
) -> Result<Vec<Vec<f64>>> {
    let dim = inst.dim();
    // start at the centroid of each subdifferential
    let mut mix: Vec<Vec<f64>> = extremes
        .iter()
        .map(|e| vec![1.0 / e.len() as f64; e.len()])
        .collect();
    let combine = |w: &[f64], e: &[Vec<f64>]| {
        let mut g = vec![0.0; dim];
        for (wi, ei) in w.iter().zip(e) {
            vector::axpy(*wi, ei, &mut g);
        }
        g
    };
    let mut g: Vec<Vec<f64>> = mix.iter().zip(extremes).map(|(w, e)| combine(w, e)).collect();
    let mut big_g = vec![0.0; dim];
    for (p, gz) in weights.iter().zip(&g) {
        vector::axpy(*p, gz, &mut big_g);
    }
    let violation_of = |gg: &[f64]| -> f64 {
        first_order_violation(inst, gg, xstar)
            .map(|(v, _)| v)
            .unwrap_or(f64::INFINITY)
    };
    let mut current = violation_of(&big_g);
    for _ in 0..MAX_SWEEPS {
        if current <= tol * 1e-3 {
            break;
        }
        let before = current;
        for z in 0..extremes.len() {
            if extremes[z].len() < 2 || weights[z] == 0.0 {
                continue;
            }
            for k in 0..extremes[z].len() {
                // move g_z toward extreme point k: g_z(t) = (1−t)·g_z + t·e_k
                let base = g[z].clone();
                let target = &extremes[z][k];
                let shifted = |t: f64| {
                    let mut gg = big_g.clone();
                    for i in 0..dim {
                        gg[i] += weights[z] * t * (target[i] - base[i]);
                    }
                    gg
                };
                let (t, v) = golden_section(|t| violation_of(&shifted(t)));
                if v < current {
                    current = v;
                    big_g = shifted(t);
                    for (wi, w) in mix[z].iter_mut().enumerate() {
                        *w = (1.0 - t) * *w + if wi == k { t } else { 0.0 };
                    }
                    g[z] = combine(&mix[z], &extremes[z]);
                }
            }
        }
        if current >= before {
            break;
        }
    }
    Ok(g)
}

fn finish(
    inst: &ScoInstance,
    xstar: &[f64],
    per_outcome_g: Option<Vec<Vec<f64>>>,
    atoms: Vec<(f64, Vec<f64>)>,
    strategy: CertificateStrategy,
    tol: f64,
) -> Result<OptimalityCertificate> {
    let g_mean = mean_of(&atoms, inst.dim());
    let (violation, direction) = first_order_violation(inst, &g_mean, xstar)?;
    if violation > tol {
        return Err(Error::Certificate {
            violation,
            tol,
            direction,
        });
    }
    Ok(OptimalityCertificate {
        id: digest(xstar, &atoms),
        xstar: xstar.to_vec(),
        per_outcome_g,
        atoms,
        g_mean,
        violation: violation.max(0.0),
        strategy,
    })
}

impl OptimalityCertificate {
    /// The fixed subgradient g_z.
    pub fn g(&self, inst: &ScoInstance, z: Outcome) -> Vec<f64> {
        match &self.per_outcome_g {
            Some(g) => g[z as usize].clone(),
            None => inst.subgrad(z, &self.xstar),
        }
    }

    /// Ĝ = (1/n) Σ_j g_{z_j}.
    pub fn empirical_mean(&self, inst: &ScoInstance, s: &Sample) -> Vec<f64> {
        let mut g = vec![0.0; self.xstar.len()];
        for (z, k) in s.counts() {
            vector::axpy(k as f64 / s.n as f64, &self.g(inst, z), &mut g);
        }
        g
    }

    /// Largest ‖g_z‖_⋆ over outcomes with positive mass.
    pub fn max_dual_norm(&self, inst: &ScoInstance) -> f64 {
        let ball = inst.ball();
        self.atoms
            .iter()
            .filter(|(p, _)| *p > 0.0)
            .map(|(_, g)| ball.dual_norm(g).unwrap_or(f64::INFINITY))
            .fold(0.0, f64::max)
    }

    /// Largest ‖g_z‖₂² over outcomes with positive mass.
    pub fn max_sq_norm2(&self) -> f64 {
        self.atoms
            .iter()
            .filter(|(p, _)| *p > 0.0)
            .map(|(_, g)| vector::norm2_sq(g))
            .fold(0.0, f64::max)
    }

    pub fn all_zero(&self) -> bool {
        self.atoms.iter().all(|(_, g)| g.iter().all(|v| *v == 0.0))
    }
}

// ---------------------------------------------------------------------------
// divergences

/// D(x, x⋆) = F(x) − F(x⋆) − ⟨G, x − x⋆⟩.
pub fn bregman(cert: &OptimalityCertificate, inst: &ScoInstance, x: &[f64]) -> Result<f64> {
    let fx = inst.population_loss(x)?;
    let fs = inst.population_loss(&cert.xstar)?;
    Ok(fx - fs - dot(&cert.g_mean, &vector::sub(x, &cert.xstar)))
}

/// D_z(x, x⋆) = f_z(x) − f_z(x⋆) − ⟨g_z, x − x⋆⟩.
pub fn outcome_bregman(cert: &OptimalityCertificate, inst: &ScoInstance, z: Outcome, x: &[f64]) -> f64 {
    inst.loss(z, x) - inst.loss(z, &cert.xstar) - dot(&cert.g(inst, z), &vector::sub(x, &cert.xstar))
}

/// D̂(x, x⋆) = F̂(x) − F̂(x⋆) − ⟨Ĝ, x − x⋆⟩.
pub fn empirical_bregman(
    cert: &OptimalityCertificate,
    inst: &ScoInstance,
    s: &Sample,
    x: &[f64],
) -> Result<f64> {
    let fx = inst.empirical_loss(s, x)?;
    let fs = inst.empirical_loss(s, &cert.xstar)?;
    let ghat = cert.empirical_mean(inst, s);
    Ok(fx - fs - dot(&ghat, &vector::sub(x, &cert.xstar)))
}

/// Clipped linear term max{−2c, ⟨g, x − x⋆⟩}, i.e. ℓ_g(⟨g, x⟩).
fn clipped(g: &[f64], delta: &[f64], c: f64) -> f64 {
    dot(g, delta).max(-2.0 * c)
}

/// 𝓛(x) = E_z ℓ_{g_z}(⟨g_z, x⟩).
pub fn linear_part(cert: &OptimalityCertificate, x: &[f64], c: f64) -> f64 {
    let delta = vector::sub(x, &cert.xstar);
    cert.atoms.iter().map(|(p, g)| p * clipped(g, &delta, c)).sum()
}

/// 𝓛̂(x) = (1/n) Σ_j ℓ_{g_{z_j}}(⟨g_{z_j}, x⟩).
pub fn empirical_linear_part(
    cert: &OptimalityCertificate,
    inst: &ScoInstance,
    s: &Sample,
    x: &[f64],
    c: f64,
) -> f64 {
    let delta = vector::sub(x, &cert.xstar);
    s.counts()
        .into_iter()
        .map(|(z, k)| k as f64 * clipped(&cert.g(inst, z), &delta, c))
        .sum::<f64>()
        / s.n as f64
}

/// T_z(x, x⋆) = f_z(x) − f_z(x⋆) − max{−2c, ⟨g_z, x − x⋆⟩}.
pub fn outcome_truncated(
    cert: &OptimalityCertificate,
    inst: &ScoInstance,
    z: Outcome,
    x: &[f64],
    c: f64,
) -> f64 {
    let delta = vector::sub(x, &cert.xstar);
    inst.loss(z, x) - inst.loss(z, &cert.xstar) - clipped(&cert.g(inst, z), &delta, c)
}

/// (T, T̂): population and sample means of the truncated divergence.
pub fn truncated_divergence(
    cert: &OptimalityCertificate,
    inst: &ScoInstance,
    s: &Sample,
    x: &[f64],
    c: f64,
) -> Result<(f64, f64)> {
    let t = inst.population_loss(x)? - inst.population_loss(&cert.xstar)? - linear_part(cert, x, c);
    let that = inst.empirical_loss(s, x)? - inst.empirical_loss(s, &cert.xstar)?
        - empirical_linear_part(cert, inst, s, x, c);
    Ok((t, that))
}

/// Net-restricted representativeness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepEstimate {
    /// max over net points of 𝓛(x) − 𝓛̂(x); a lower bound on the sup over K.
    pub value: f64,
    /// The sup over K exceeds `value` by at most this much (2L·cover radius;
    /// zero when every g_z vanishes and 𝓛 − 𝓛̂ is identically zero).
    pub net_slack: f64,
    pub net_points: usize,
    pub net_restricted: bool,
}

pub fn representativeness(
    cert: &OptimalityCertificate,
    inst: &ScoInstance,
    s: &Sample,
    net: &Net,
    c: f64,
) -> RepEstimate {
    let value = net
        .points
        .iter()
        .map(|x| linear_part(cert, x, c) - empirical_linear_part(cert, inst, s, x, c))
        .fold(f64::NEG_INFINITY, f64::max);
    RepEstimate {
        value,
        net_slack: if cert.all_zero() {
            0.0
        } else {
            2.0 * inst.lipschitz() * net.cover_radius
        },
        net_points: net.len(),
        net_restricted: true,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub x: Vec<f64>,
    pub d: f64,
    pub dhat: f64,
    pub t: f64,
    pub that: f64,
    pub rep: RepEstimate,
    pub certificate_id: String,
    pub sample_seed: u64,
    pub n: usize,
}

pub fn divergence_report(
    cert: &OptimalityCertificate,
    inst: &ScoInstance,
    s: &Sample,
    net: &Net,
    x: &[f64],
) -> Result<DivergenceReport> {
    let c = inst.bound();
    let (t, that) = truncated_divergence(cert, inst, s, x, c)?;
    Ok(DivergenceReport {
        x: x.to_vec(),
        d: bregman(cert, inst, x)?,
        dhat: empirical_bregman(cert, inst, s, x)?,
        t,
        that,
        rep: representativeness(cert, inst, s, net, c),
        certificate_id: cert.id.clone(),
        sample_seed: s.seed,
        n: s.n,
    })
}

// ---------------------------------------------------------------------------
// conditional claims

/// Checked/violated counters for the four conditional claims relating
/// near-ERM points to (truncated) Bregman divergences.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimTally {
    /// F̂-gap ≤ 5ε ∧ ‖Ĝ − G‖_⋆ ≤ ε ⇒ D ≥ F-gap − 7ε.
    pub lambda_small_checked: u64,
    pub lambda_small_violated: u64,
    /// F̂-gap ≤ 5ε ∧ ‖Ĝ − G‖_⋆ ≤ ε ⇒ D̂ ≤ 7ε.
    pub event_checked: u64,
    pub event_violated: u64,
    /// Rep ≤ 2ε ∧ F̂-gap ≤ 6ε ⇒ T̂ ≤ 8ε.
    pub lsmall_g_checked: u64,
    pub lsmall_g_violated: u64,
    /// Rep ≤ 2ε ∧ F̂-gap ≤ 5ε ⇒ T ≥ F-gap − 7ε.
    pub event_g_checked: u64,
    pub event_g_violated: u64,
}

impl ClaimTally {
    pub fn violations(&self) -> u64 {
        self.lambda_small_violated + self.event_violated + self.lsmall_g_violated + self.event_g_violated
    }

    pub fn checks(&self) -> u64 {
        self.lambda_small_checked + self.event_checked + self.lsmall_g_checked + self.event_g_checked
    }

    pub fn merge(&mut self, o: &ClaimTally) {
        self.lambda_small_checked += o.lambda_small_checked;
        self.lambda_small_violated += o.lambda_small_violated;
        self.event_checked += o.event_checked;
        self.event_violated += o.event_violated;
        self.lsmall_g_checked += o.lsmall_g_checked;
        self.lsmall_g_violated += o.lsmall_g_violated;
        self.event_g_checked += o.event_g_checked;
        self.event_g_violated += o.event_g_violated;
    }
}

const CLAIM_SLACK: f64 = 1e-9;

/// Evaluate the conditional claims at every point of `net` for one sample.
pub fn check_conditional_claims(
    cert: &OptimalityCertificate,
    inst: &ScoInstance,
    s: &Sample,
    net: &Net,
    eps: f64,
) -> Result<ClaimTally> {
    let c = inst.bound();
    let ball = inst.ball();
    let counts = s.counts();
    let ghat = cert.empirical_mean(inst, s);
    let grad_dev = ball.dual_norm(&vector::sub(&ghat, &cert.g_mean))?;
    let rep = representativeness(cert, inst, s, net, c);
    let fs = inst.population_loss(&cert.xstar)?;
    let fhs = inst.empirical_loss_unchecked(&counts, s.n, &cert.xstar);
    let mut tally = ClaimTally::default();
    for x in &net.points {
        let delta = vector::sub(x, &cert.xstar);
        let f_gap = inst.population_loss(x)? - fs;
        let fh_gap = inst.empirical_loss_unchecked(&counts, s.n, x) - fhs;
        let d = f_gap - dot(&cert.g_mean, &delta);
        let dhat = fh_gap - dot(&ghat, &delta);
        if fh_gap <= 5.0 * eps && grad_dev <= eps {
            tally.lambda_small_checked += 1;
            if d < f_gap - 7.0 * eps - CLAIM_SLACK {
                tally.lambda_small_violated += 1;
            }
            tally.event_checked += 1;
            if dhat > 7.0 * eps + CLAIM_SLACK {
                tally.event_violated += 1;
            }
        }
        if rep.value <= 2.0 * eps {
            let t = f_gap - linear_part(cert, x, c);
            let that = fh_gap - empirical_linear_part(cert, inst, s, x, c);
            if fh_gap <= 6.0 * eps {
                tally.lsmall_g_checked += 1;
                if that > 8.0 * eps + rep.net_slack + CLAIM_SLACK {
                    tally.lsmall_g_violated += 1;
                }
            }
            if fh_gap <= 5.0 * eps {
                tally.event_g_checked += 1;
                if t < f_gap - 7.0 * eps - rep.net_slack - CLAIM_SLACK {
                    tally.event_g_violated += 1;
                }
            }
        }
    }
    Ok(tally)
}
