//! Finite-support stochastic convex optimization instances.
//!
//! An instance bundles the domain K, an outcome distribution, and per-outcome
//! convex Lipschitz losses with subgradient oracles. Outcomes are encoded as
//! `u64`: an index into the outcome table for explicit families, or a bitmask
//! of activated directions for the implicitly sampled hard family.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::net::sample_uniform;
use crate::norm::{NormBall, NormFamily};
use crate::seed;
use crate::vector::{self, dot};

pub type Outcome = u64;

/// Membership tolerance for points of K.
pub const DOMAIN_TOL: f64 = 1e-9;
const KINK_TOL: f64 = 1e-12;
/// Largest number of hard-family directions (outcomes are bitmasks).
pub const MAX_HARD_DIRECTIONS: usize = 63;
const HARD_BASE: f64 = 0.5;

/// Serializable recipe for an instance. Losses are always rebuilt from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum InstanceDescriptor {
    Coin {
        eps0: f64,
    },
    Hard {
        dim: usize,
        eps0: f64,
        m: usize,
        seed: u64,
        /// Explicit directions; when absent they are drawn from `seed`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        directions: Option<Vec<Vec<f64>>>,
    },
    Quadratic {
        centers: Vec<Vec<f64>>,
        norm: NormFamily,
    },
    Appendix,
}

impl InstanceDescriptor {
    pub fn build(&self) -> Result<ScoInstance> {
        match self {
            InstanceDescriptor::Coin { eps0 } => make_coin_instance(*eps0),
            InstanceDescriptor::Hard {
                dim,
                eps0,
                m,
                seed,
                directions: None,
            } => make_hard_instance(*dim, *eps0, *m, *seed),
            InstanceDescriptor::Hard {
                eps0,
                directions: Some(dirs),
                ..
            } => make_hard_instance_with_directions(dirs.clone(), *eps0),
            InstanceDescriptor::Quadratic { centers, norm } => {
                let dim = centers.first().map(Vec::len).unwrap_or(0);
                make_quadratic_instance(centers.clone(), NormBall::new(*norm, dim)?)
            }
            InstanceDescriptor::Appendix => Ok(make_appendix_pair().instance),
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            InstanceDescriptor::Coin { .. } => "coin",
            InstanceDescriptor::Hard { .. } => "hard",
            InstanceDescriptor::Quadratic { .. } => "quadratic",
            InstanceDescriptor::Appendix => "appendix",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Model {
    /// f_z(x) = 2·eps0·|x| + z·x on [-1, 1], z = ±1.
    Coin { eps0: f64 },
    /// f_z(x) = max({1/2} ∪ {⟨v, x⟩ : v ∈ z}); each v joins z w.p. eps0.
    Hard { directions: Vec<Vec<f64>>, eps0: f64 },
    /// f_z(x) = ‖x − z‖₂² / 4.
    Quadratic { centers: Vec<Vec<f64>> },
    /// f₁(x) = (x − 0.1)² − 1/25 and f₂(x) = |x + 0.1|.
    Appendix,
}

/// A stochastic convex optimization problem with finite (or implicitly
/// sampled) outcome space.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoInstance {
    descriptor: InstanceDescriptor,
    ball: NormBall,
    model: Model,
    /// `None` for implicitly sampled families.
    weights: Option<Vec<f64>>,
    lipschitz: f64,
    bound: f64,
    label: String,
}

/// An i.i.d. sample of outcomes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub indices: Vec<Outcome>,
    pub n: usize,
    pub seed: u64,
}

impl Sample {
    /// Build a sample from explicit outcomes (seed recorded as 0).
    pub fn from_indices(indices: Vec<Outcome>) -> Self {
        Sample {
            n: indices.len(),
            indices,
            seed: 0,
        }
    }

    /// Outcome multiplicities in increasing outcome order.
    pub fn counts(&self) -> Vec<(Outcome, usize)> {
        let mut map = BTreeMap::new();
        for &z in &self.indices {
            *map.entry(z).or_insert(0usize) += 1;
        }
        map.into_iter().collect()
    }
}

// ---------------------------------------------------------------------------
// constructors

pub fn make_coin_instance(eps0: f64) -> Result<ScoInstance> {
    if !(eps0 > 0.0 && eps0 < 1.0) {
        return Err(Error::InvalidInput(format!("coin eps0 must be in (0,1), got {eps0}")));
    }
    Ok(ScoInstance {
        descriptor: InstanceDescriptor::Coin { eps0 },
        ball: NormBall::l2(1),
        model: Model::Coin { eps0 },
        weights: Some(vec![0.5, 0.5]),
        lipschitz: 1.0 + 2.0 * eps0,
        bound: 1.0 + 2.0 * eps0,
        label: format!("coin(eps0={eps0})"),
    })
}

/// Hard family with directions drawn as normalized ±1 sign vectors whose
/// pairwise inner products are at most 1/2.
pub fn make_hard_instance(dim: usize, eps0: f64, m: usize, seed: u64) -> Result<ScoInstance> {
    check_hard_params(dim, eps0, m)?;
    let mut rng = seed::rng(seed);
    let scale = 1.0 / (dim as f64).sqrt();
    let budget = 1000 * m.max(1);
    let mut directions: Vec<Vec<f64>> = Vec::with_capacity(m);
    for _ in 0..budget {
        if directions.len() == m {
            break;
        }
        let v: Vec<f64> = (0..dim)
            .map(|_| if rng.random_bool(0.5) { scale } else { -scale })
            .collect();
        if directions.iter().all(|u| dot(u, &v) <= HARD_BASE + 1e-12) {
            directions.push(v);
        }
    }
    if directions.len() < m {
        return Err(Error::Construction(format!(
            "found only {} of {m} sign directions with pairwise inner product <= 1/2 in d={dim} \
             within {budget} draws",
            directions.len()
        )));
    }
    let mut inst = make_hard_instance_with_directions(directions, eps0)?;
    inst.descriptor = InstanceDescriptor::Hard {
        dim,
        eps0,
        m,
        seed,
        directions: None,
    };
    Ok(inst)
}

/// Hard family over caller-supplied unit directions.
pub fn make_hard_instance_with_directions(
    directions: Vec<Vec<f64>>,
    eps0: f64,
) -> Result<ScoInstance> {
    let dim = directions.first().map(Vec::len).unwrap_or(0);
    check_hard_params(dim, eps0, directions.len())?;
    for v in &directions {
        check_dim(dim, v.len())?;
        if (vector::norm2(v) - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput("hard-family directions must be unit vectors".into()));
        }
    }
    for (i, u) in directions.iter().enumerate() {
        for v in &directions[i + 1..] {
            if dot(u, v) > HARD_BASE + 1e-12 {
                return Err(Error::InvalidInput(
                    "hard-family directions must have pairwise inner product <= 1/2".into(),
                ));
            }
        }
    }
    let m = directions.len();
    Ok(ScoInstance {
        descriptor: InstanceDescriptor::Hard {
            dim,
            eps0,
            m,
            seed: 0,
            directions: Some(directions.clone()),
        },
        ball: NormBall::l2(dim),
        model: Model::Hard { directions, eps0 },
        weights: None,
        lipschitz: 1.0,
        bound: 1.0,
        label: format!("hard(d={dim}, m={m}, eps0={eps0})"),
    })
}

fn check_hard_params(dim: usize, eps0: f64, m: usize) -> Result<()> {
    if dim < 2 {
        return Err(Error::InvalidInput(format!("hard family needs d >= 2, got {dim}")));
    }
    if !(eps0 > 0.0 && eps0 <= 0.5) {
        return Err(Error::InvalidInput(format!("hard eps0 must be in (0, 1/2], got {eps0}")));
    }
    if m == 0 || m > MAX_HARD_DIRECTIONS {
        return Err(Error::InvalidInput(format!(
            "hard family needs 1 <= m <= {MAX_HARD_DIRECTIONS}, got {m}"
        )));
    }
    Ok(())
}

pub fn make_quadratic_instance(centers: Vec<Vec<f64>>, ball: NormBall) -> Result<ScoInstance> {
    if centers.is_empty() {
        return Err(Error::InvalidInput("quadratic family needs at least one center".into()));
    }
    let mut lipschitz = 0.0f64;
    let mut bound = 0.0f64;
    for z in &centers {
        check_dim(ball.dim, z.len())?;
        let p = ball.project(z)?;
        if vector::norm2(&vector::sub(z, &p)) > 2.0 + 1e-12 {
            return Err(Error::InvalidInput("quadratic center farther than 2 from K".into()));
        }
        // sup over K of ‖x − z‖_⋆ and ‖x − z‖₂², attained at extreme points.
        let abs: Vec<f64> = z.iter().map(|v| v.abs()).collect();
        let max_abs = abs.iter().fold(0.0f64, |a, &v| a.max(v));
        let (lip, sq) = match ball.family {
            NormFamily::L2 => {
                let r = 1.0 + vector::norm2(z);
                (r, r * r)
            }
            NormFamily::Linf => (
                abs.iter().map(|a| 1.0 + a).sum::<f64>(),
                abs.iter().map(|a| (1.0 + a) * (1.0 + a)).sum::<f64>(),
            ),
            NormFamily::L1 => (1.0 + max_abs, vector::norm2_sq(z) + 1.0 + 2.0 * max_abs),
            NormFamily::Lp(_) => unreachable!("project() rejects general exponents"),
        };
        lipschitz = lipschitz.max(lip / 2.0);
        bound = bound.max(sq / 4.0);
    }
    let k = centers.len();
    Ok(ScoInstance {
        descriptor: InstanceDescriptor::Quadratic {
            centers: centers.clone(),
            norm: ball.family,
        },
        label: format!("quadratic(k={k}, d={}, {})", ball.dim, ball.family.name()),
        ball,
        model: Model::Quadratic { centers },
        weights: Some(vec![1.0 / k as f64; k]),
        lipschitz,
        bound,
    })
}

/// The two one-dimensional functions whose sum is minimized at a kink of the
/// second, used to exercise the subgradient-sum decomposition.
#[derive(Debug, Clone)]
pub struct AppendixPair {
    /// Uniform mixture of f₁ (outcome 0) and f₂ (outcome 1) on [−1, 1].
    pub instance: ScoInstance,
    pub domain: (f64, f64),
}

impl AppendixPair {
    pub const KINK: f64 = -0.1;

    pub fn f1(x: f64) -> f64 {
        (x - 0.1) * (x - 0.1) - 1.0 / 25.0
    }

    pub fn f1_derivative(x: f64) -> f64 {
        2.0 * (x - 0.1)
    }

    pub fn f2(x: f64) -> f64 {
        (x + 0.1).abs()
    }

    /// ∂f₂(x) as a closed interval.
    pub fn f2_subdifferential(x: f64) -> (f64, f64) {
        let s = x + 0.1;
        if s.abs() <= KINK_TOL {
            (-1.0, 1.0)
        } else if s > 0.0 {
            (1.0, 1.0)
        } else {
            (-1.0, -1.0)
        }
    }
}

pub fn make_appendix_pair() -> AppendixPair {
    AppendixPair {
        instance: ScoInstance {
            descriptor: InstanceDescriptor::Appendix,
            ball: NormBall::l2(1),
            model: Model::Appendix,
            weights: Some(vec![0.5, 0.5]),
            // f₁' ranges over [−2.2, 1.8] on [−1, 1]; |f₁| ≤ 1.21 − 0.04.
            lipschitz: 2.2,
            bound: 1.17,
            label: "appendix(f1=(x-0.1)^2-1/25, f2=|x+0.1|)".into(),
        },
        domain: (-1.0, 1.0),
    }
}

// ---------------------------------------------------------------------------
// oracles

fn coin_sign(z: Outcome) -> f64 {
    if z == 0 {
        1.0
    } else {
        -1.0
    }
}

impl ScoInstance {
    pub fn descriptor(&self) -> &InstanceDescriptor {
        &self.descriptor
    }

    pub fn ball(&self) -> NormBall {
        self.ball
    }

    pub fn dim(&self) -> usize {
        self.ball.dim
    }

    /// Lipschitz constant L with respect to the ball's norm.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// Bound c on |f_z| over K.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Outcome probabilities, `None` for implicitly sampled families.
    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn outcome_count(&self) -> Option<usize> {
        self.weights.as_ref().map(Vec::len)
    }

    pub fn is_implicit(&self) -> bool {
        self.weights.is_none()
    }

    /// Hard-family directions V.
    pub fn directions(&self) -> Option<&[Vec<f64>]> {
        match &self.model {
            Model::Hard { directions, .. } => Some(directions),
            _ => None,
        }
    }

    /// f_z(x). `x` must have the instance dimension.
    pub fn loss(&self, z: Outcome, x: &[f64]) -> f64 {
        match &self.model {
            Model::Coin { eps0 } => 2.0 * eps0 * x[0].abs() + coin_sign(z) * x[0],
            Model::Hard { directions, .. } => directions
                .iter()
                .enumerate()
                .filter(|(i, _)| z >> i & 1 == 1)
                .map(|(_, v)| dot(v, x))
                .fold(HARD_BASE, f64::max),
            Model::Quadratic { centers } => {
                vector::norm2_sq(&vector::sub(x, &centers[z as usize])) / 4.0
            }
            Model::Appendix => match z {
                0 => AppendixPair::f1(x[0]),
                _ => AppendixPair::f2(x[0]),
            },
        }
    }

    /// One subgradient of f_z at x (deterministic choice).
    pub fn subgrad(&self, z: Outcome, x: &[f64]) -> Vec<f64> {
        match &self.model {
            Model::Coin { eps0 } => {
                let s = if x[0].abs() <= KINK_TOL { 0.0 } else { x[0].signum() };
                vec![2.0 * eps0 * s + coin_sign(z)]
            }
            Model::Hard { directions, .. } => {
                let mut best = HARD_BASE;
                let mut arg = None;
                for (i, v) in directions.iter().enumerate() {
                    if z >> i & 1 == 1 {
                        let a = dot(v, x);
                        if a > best {
                            best = a;
                            arg = Some(i);
                        }
                    }
                }
                match arg {
                    Some(i) => directions[i].clone(),
                    None => vec![0.0; self.dim()],
                }
            }
            Model::Quadratic { centers } => vector::scale(0.5, &vector::sub(x, &centers[z as usize])),
            Model::Appendix => match z {
                0 => vec![AppendixPair::f1_derivative(x[0])],
                _ => {
                    let s = x[0] + 0.1;
                    vec![if s.abs() <= KINK_TOL { 0.0 } else { s.signum() }]
                }
            },
        }
    }

    /// Extreme points of ∂f_z(x) for piecewise-linear families.
    pub fn subdifferential_extremes(&self, z: Outcome, x: &[f64]) -> Option<Vec<Vec<f64>>> {
        match &self.model {
            Model::Coin { eps0 } => {
                let zs = coin_sign(z);
                if x[0].abs() <= KINK_TOL {
                    Some(vec![vec![zs - 2.0 * eps0], vec![zs + 2.0 * eps0]])
                } else {
                    Some(vec![self.subgrad(z, x)])
                }
            }
            Model::Hard { directions, .. } => {
                let value = self.loss(z, x);
                let mut ext = Vec::new();
                if (HARD_BASE - value).abs() <= KINK_TOL {
                    ext.push(vec![0.0; self.dim()]);
                }
                for (i, v) in directions.iter().enumerate() {
                    if z >> i & 1 == 1 && (dot(v, x) - value).abs() <= KINK_TOL {
                        ext.push(v.clone());
                    }
                }
                Some(ext)
            }
            Model::Quadratic { .. } => None,
            Model::Appendix => match z {
                0 => Some(vec![self.subgrad(0, x)]),
                _ => {
                    let (lo, hi) = AppendixPair::f2_subdifferential(x[0]);
                    if lo == hi {
                        Some(vec![vec![lo]])
                    } else {
                        Some(vec![vec![lo], vec![hi]])
                    }
                }
            },
        }
    }

    /// Whether f_z is differentiable at x.
    pub fn is_smooth_at(&self, z: Outcome, x: &[f64]) -> bool {
        match self.subdifferential_extremes(z, x) {
            None => true,
            Some(ext) => ext.len() <= 1,
        }
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        check_dim(self.dim(), x.len())?;
        let r = self.ball.norm(x)?;
        if r > 1.0 + DOMAIN_TOL {
            return Err(Error::InvalidInput(format!(
                "point outside K: norm {r} > 1 (tolerance {DOMAIN_TOL})"
            )));
        }
        Ok(())
    }

    /// F(x) = E_z f_z(x): exact weighted sum, or the closed form for
    /// implicitly sampled families.
    pub fn population_loss(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        Ok(self.population_loss_unchecked(x))
    }

    pub(crate) fn population_loss_unchecked(&self, x: &[f64]) -> f64 {
        match (&self.model, &self.weights) {
            (_, Some(w)) => w
                .iter()
                .enumerate()
                .map(|(z, p)| p * self.loss(z as Outcome, x))
                .sum(),
            (Model::Hard { directions, eps0 }, None) => {
                let mut above: Vec<f64> = directions
                    .iter()
                    .map(|v| dot(v, x))
                    .filter(|&a| a > HARD_BASE)
                    .collect();
                above.sort_by(|a, b| b.total_cmp(a));
                let mut miss = 1.0;
                let mut total = 0.0;
                for a in above {
                    total += a * eps0 * miss;
                    miss *= 1.0 - eps0;
                }
                total + HARD_BASE * miss
            }
            _ => unreachable!("explicit families carry weights"),
        }
    }

    /// Exact distribution of the oracle subgradient `subgrad(z, x)` over
    /// z ~ 𝒟, as (probability, vector) atoms.
    pub fn subgradient_distribution(&self, x: &[f64]) -> Vec<(f64, Vec<f64>)> {
        match (&self.model, &self.weights) {
            (_, Some(w)) => w
                .iter()
                .enumerate()
                .map(|(z, &p)| (p, self.subgrad(z as Outcome, x)))
                .collect(),
            (Model::Hard { directions, eps0 }, None) => {
                let mut above: Vec<(usize, f64)> = directions
                    .iter()
                    .enumerate()
                    .map(|(i, v)| (i, dot(v, x)))
                    .filter(|&(_, a)| a > HARD_BASE)
                    .collect();
                // stable: ties keep the lowest index first, matching subgrad()
                above.sort_by(|a, b| b.1.total_cmp(&a.1));
                let mut miss = 1.0;
                let mut atoms = Vec::with_capacity(above.len() + 1);
                for (i, _) in above {
                    atoms.push((eps0 * miss, directions[i].clone()));
                    miss *= 1.0 - eps0;
                }
                atoms.push((miss, vec![0.0; self.dim()]));
                atoms
            }
            _ => unreachable!(),
        }
    }

    /// A subgradient of F at x (mean of the oracle subgradient distribution).
    pub fn population_subgradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        for (p, gz) in self.subgradient_distribution(x) {
            vector::axpy(p, &gz, &mut g);
        }
        g
    }

    /// Draw one outcome.
    pub fn draw_outcome<R: Rng + ?Sized>(&self, rng: &mut R) -> Outcome {
        match (&self.model, &self.weights) {
            (_, Some(w)) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (z, p) in w.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return z as Outcome;
                    }
                }
                // rounding: fall back to the last outcome with positive weight
                w.iter().rposition(|&p| p > 0.0).unwrap_or(0) as Outcome
            }
            (Model::Hard { directions, eps0 }, None) => {
                let mut mask = 0u64;
                for i in 0..directions.len() {
                    if rng.random_bool(*eps0) {
                        mask |= 1 << i;
                    }
                }
                mask
            }
            _ => unreachable!(),
        }
    }

    /// n i.i.d. outcomes from a ChaCha8 stream keyed by `seed`.
    pub fn draw_sample(&self, n: usize, seed: u64) -> Result<Sample> {
        if n == 0 {
            return Err(Error::InvalidInput("sample size must be >= 1".into()));
        }
        let mut rng = seed::rng(seed);
        let indices = (0..n).map(|_| self.draw_outcome(&mut rng)).collect();
        Ok(Sample { indices, n, seed })
    }

    pub fn validate_sample(&self, s: &Sample) -> Result<()> {
        if s.indices.is_empty() || s.indices.len() != s.n {
            return Err(Error::InvalidInput("sample length does not match n".into()));
        }
        let ok = match (&self.model, &self.weights) {
            (_, Some(w)) => s.indices.iter().all(|&z| (z as usize) < w.len()),
            (Model::Hard { directions, .. }, None) => {
                s.indices.iter().all(|&z| z >> directions.len() == 0)
            }
            _ => true,
        };
        if !ok {
            return Err(Error::InvalidInput("sample addresses an unknown outcome".into()));
        }
        Ok(())
    }

    /// F̂(x) = (1/n) Σ_j f_{z_j}(x).
    pub fn empirical_loss(&self, s: &Sample, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        self.validate_sample(s)?;
        Ok(self.empirical_loss_unchecked(&s.counts(), s.n, x))
    }

    pub(crate) fn empirical_loss_unchecked(
        &self,
        counts: &[(Outcome, usize)],
        n: usize,
        x: &[f64],
    ) -> f64 {
        counts
            .iter()
            .map(|&(z, k)| k as f64 * self.loss(z, x))
            .sum::<f64>()
            / n as f64
    }

    pub fn known_minimizer(&self) -> Option<Vec<f64>> {
        match &self.model {
            Model::Coin { .. } => Some(vec![0.0]),
            Model::Hard { .. } => Some(vec![0.0; self.dim()]),
            Model::Quadratic { centers } => {
                let mut c = vec![0.0; self.dim()];
                for z in centers {
                    vector::axpy(1.0 / centers.len() as f64, z, &mut c);
                }
                self.ball.project(&c).ok()
            }
            Model::Appendix => Some(vec![AppendixPair::KINK]),
        }
    }

    /// Structured points that are likely spurious empirical minimizers for
    /// this sample.
    pub fn spurious_candidates(&self, s: &Sample) -> Vec<Vec<f64>> {
        match &self.model {
            Model::Coin { eps0 } => {
                let mean = coin_mean(s);
                if mean.abs() > 2.0 * eps0 {
                    vec![vec![-mean.signum()]]
                } else {
                    Vec::new()
                }
            }
            Model::Hard { directions, .. } => {
                let seen = s.indices.iter().fold(0u64, |a, &z| a | z);
                directions
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| seen >> i & 1 == 0)
                    .map(|(_, v)| v.clone())
                    .collect()
            }
            _ => Vec::new(),
        }
    }

    /// Closed-form empirical minimizer, where the family has one.
    pub fn empirical_minimizer(&self, s: &Sample) -> Option<(Vec<f64>, f64)> {
        match &self.model {
            Model::Coin { eps0 } => {
                let mean = coin_mean(s);
                if mean.abs() > 2.0 * eps0 {
                    Some((vec![-mean.signum()], 2.0 * eps0 - mean.abs()))
                } else {
                    Some((vec![0.0], 0.0))
                }
            }
            Model::Hard { .. } => Some((vec![0.0; self.dim()], HARD_BASE)),
            Model::Quadratic { centers } => {
                let mut c = vec![0.0; self.dim()];
                for &z in &s.indices {
                    vector::axpy(1.0 / s.n as f64, &centers[z as usize], &mut c);
                }
                let x = self.ball.project(&c).ok()?;
                let v = self.empirical_loss_unchecked(&s.counts(), s.n, &x);
                Some((x, v))
            }
            Model::Appendix => None,
        }
    }

    /// Instance-specific point set standing in for a net when a packing of K
    /// is too large: the hard directions together with the origin.
    pub fn structured_points(&self) -> Option<Vec<Vec<f64>>> {
        match &self.model {
            Model::Hard { directions, .. } => {
                let mut pts = vec![vec![0.0; self.dim()]];
                pts.extend(directions.iter().cloned());
                Some(pts)
            }
            _ => None,
        }
    }
}

fn coin_mean(s: &Sample) -> f64 {
    s.indices.iter().map(|&z| coin_sign(z)).sum::<f64>() / s.n as f64
}

// ---------------------------------------------------------------------------
// invariant battery

/// Counts of invariant violations found by [`invariant_battery`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InvariantReport {
    pub probes: usize,
    pub weight_sum_error: f64,
    pub lipschitz_violations: usize,
    pub bound_violations: usize,
    pub subgradient_violations: usize,
    pub dual_norm_violations: usize,
}

impl InvariantReport {
    pub fn passed(&self) -> bool {
        self.weight_sum_error <= 1e-12
            && self.lipschitz_violations == 0
            && self.bound_violations == 0
            && self.subgradient_violations == 0
            && self.dual_norm_violations == 0
    }
}

/// Probe the Lipschitz, boundedness, subgradient-inequality and dual-norm
/// invariants at `probes` seeded (z, x, y) triples.
pub fn invariant_battery(inst: &ScoInstance, probes: usize, seed: u64) -> InvariantReport {
    let ball = inst.ball();
    let mut rng = seed::rng(seed);
    let mut report = InvariantReport {
        probes,
        weight_sum_error: inst
            .weights()
            .map(|w| (w.iter().sum::<f64>() - 1.0).abs())
            .unwrap_or(0.0),
        ..Default::default()
    };
    let (l, c) = (inst.lipschitz(), inst.bound());
    for k in 0..probes {
        let z = inst.draw_outcome(&mut rng);
        let mut x = sample_uniform(&ball, &mut rng);
        let y = sample_uniform(&ball, &mut rng);
        // every fourth probe sits on a kink/boundary
        if k % 4 == 0 {
            if let Some(xs) = inst.known_minimizer() {
                x = xs;
            }
        }
        let (fx, fy) = (inst.loss(z, &x), inst.loss(z, &y));
        let dist = ball.distance(&x, &y).unwrap_or(0.0);
        if (fx - fy).abs() > l * dist + 1e-9 {
            report.lipschitz_violations += 1;
        }
        if fx.abs() > c + 1e-9 || fy.abs() > c + 1e-9 {
            report.bound_violations += 1;
        }
        let g = inst.subgrad(z, &x);
        if fy < fx + dot(&g, &vector::sub(&y, &x)) - 1e-9 {
            report.subgradient_violations += 1;
        }
        if ball.dual_norm(&g).unwrap_or(f64::INFINITY) > l + 1e-9 {
            report.dual_norm_violations += 1;
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn e(d: usize, i: usize) -> Vec<f64> {
        vector::basis(d, i)
    }

    fn hard_e1e2(eps0: f64) -> ScoInstance {
        make_hard_instance_with_directions(vec![e(2, 0), e(2, 1)], eps0).unwrap()
    }

    #[test]
    fn coin_population_values() {
        let inst = make_coin_instance(0.1).unwrap();
        assert!(close(inst.population_loss(&[0.5]).unwrap(), 0.1, 1e-15));
        assert_eq!(inst.population_loss(&[0.0]).unwrap(), 0.0);
        assert!(close(inst.population_loss(&[1.0]).unwrap(), 0.2, 1e-15));
    }

    #[test]
    fn coin_empirical_minimizer_with_biased_sample() {
        // mean 0.5: three +1 and one -1
        let inst = make_coin_instance(0.1).unwrap();
        let s = Sample::from_indices(vec![0, 0, 0, 1]);
        let (x, v) = inst.empirical_minimizer(&s).unwrap();
        assert_eq!(x, vec![-1.0]);
        assert!(close(v, -0.3, 1e-15));
        assert!(close(inst.empirical_loss(&s, &[-1.0]).unwrap(), -0.3, 1e-15));
        assert_eq!(inst.spurious_candidates(&s), vec![vec![-1.0]]);
    }

    #[test]
    fn coin_all_heads_sample() {
        let inst = make_coin_instance(0.1).unwrap();
        let s = Sample::from_indices(vec![0; 7]);
        assert!(close(inst.empirical_loss(&s, &[-1.0]).unwrap(), -0.8, 1e-15));
        assert!(close(inst.empirical_loss(&s, &[0.5]).unwrap(), 0.6, 1e-15));
    }

    #[test]
    fn hard_enumerated_values() {
        // Enumerate the four activation subsets of {e1, e2} with eps0 = 1/2.
        let inst = hard_e1e2(0.5);
        let enumerate = |x: &[f64]| -> f64 { (0..4u64).map(|z| 0.25 * inst.loss(z, x)).sum() };
        assert!(close(enumerate(&e(2, 0)), 0.75, 1e-15));
        assert!(close(inst.population_loss(&e(2, 0)).unwrap(), 0.75, 1e-15));
        assert!(close(inst.population_loss(&[0.0, 0.0]).unwrap(), 0.5, 1e-15));
        let x = [0.6, 0.8];
        assert!(close(inst.population_loss(&x).unwrap(), enumerate(&x), 1e-15));
        // empty activation set is the constant 1/2
        for x in [[0.3, -0.9], [1.0, 0.0], [-0.7, 0.7]] {
            assert_eq!(inst.loss(0, &x), 0.5);
        }
    }

    #[test]
    fn hard_closed_form_matches_subset_enumeration() {
        let inst = make_hard_instance(6, 0.3, 5, 21).unwrap();
        let mut rng = seed::rng(4);
        for _ in 0..200 {
            let x = sample_uniform(&inst.ball(), &mut rng);
            let mut brute = 0.0;
            let mut gbrute = vec![0.0; 6];
            for z in 0..32u64 {
                let k = z.count_ones() as i32;
                let p = 0.3f64.powi(k) * 0.7f64.powi(5 - k);
                brute += p * inst.loss(z, &x);
                vector::axpy(p, &inst.subgrad(z, &x), &mut gbrute);
            }
            assert!(close(inst.population_loss(&x).unwrap(), brute, 1e-12));
            let g = inst.population_subgradient(&x);
            for (a, b) in g.iter().zip(&gbrute) {
                assert!(close(*a, *b, 1e-12));
            }
        }
    }

    #[test]
    fn hard_directions_are_sign_vectors_with_small_overlap() {
        let inst = make_hard_instance(8, 0.25, 4, 99).unwrap();
        let dirs = inst.directions().unwrap();
        assert_eq!(dirs.len(), 4);
        for (i, u) in dirs.iter().enumerate() {
            assert!(close(vector::norm2(u), 1.0, 1e-12));
            assert!(u.iter().all(|v| close(v.abs(), 1.0 / 8f64.sqrt(), 1e-15)));
            for v in &dirs[i + 1..] {
                assert!(dot(u, v) <= 0.5 + 1e-12);
            }
        }
        assert_eq!(inst, make_hard_instance(8, 0.25, 4, 99).unwrap());
    }

    #[test]
    fn hard_rejection_budget_exhaustion() {
        // d = 2 has only four normalized sign vectors.
        let err = make_hard_instance(2, 0.5, 5, 0).unwrap_err();
        assert!(matches!(err, Error::Construction(_)));
        assert!(make_hard_instance(1, 0.5, 1, 0).is_err());
        assert!(make_hard_instance(3, 0.6, 1, 0).is_err());
    }

    #[test]
    fn hard_spurious_candidates_are_unactivated_directions() {
        let inst = hard_e1e2(0.5);
        let s = Sample::from_indices(vec![0b10, 0, 0b10]);
        assert_eq!(inst.spurious_candidates(&s), vec![e(2, 0)]);
        let s = Sample::from_indices(vec![0b01, 0b10]);
        assert!(inst.spurious_candidates(&s).is_empty());
    }

    #[test]
    fn quadratic_values() {
        let inst = make_quadratic_instance(vec![vec![-1.0], vec![1.0]], NormBall::l2(1)).unwrap();
        for x in [-1.0, -0.3, 0.0, 0.7, 1.0] {
            assert!(close(inst.population_loss(&[x]).unwrap(), (x * x + 1.0) / 4.0, 1e-15));
        }
        assert_eq!(inst.known_minimizer().unwrap(), vec![0.0]);
        let single = make_quadratic_instance(vec![vec![0.3, -0.2]], NormBall::l2(2)).unwrap();
        assert_eq!(single.known_minimizer().unwrap(), vec![0.3, -0.2]);
        assert_eq!(single.population_loss(&[0.3, -0.2]).unwrap(), 0.0);
    }

    #[test]
    fn quadratic_rejects_far_centers() {
        assert!(make_quadratic_instance(vec![vec![3.5]], NormBall::l2(1)).is_err());
        assert!(make_quadratic_instance(vec![], NormBall::l2(1)).is_err());
        assert!(make_quadratic_instance(vec![vec![0.0, 1.0]], NormBall::l2(1)).is_err());
    }

    #[test]
    fn appendix_pair_values() {
        let pair = make_appendix_pair();
        assert!(close(AppendixPair::f1(0.1), -1.0 / 25.0, 1e-15));
        assert!(close(AppendixPair::f1_derivative(-0.1), -0.4, 1e-15));
        assert_eq!(AppendixPair::f2_subdifferential(-0.1), (-1.0, 1.0));
        // one-sided derivatives of f1 + f2 at the kink: -1.4 and +0.6
        let h = 1e-7;
        let sum = |x: f64| AppendixPair::f1(x) + AppendixPair::f2(x);
        let left = (sum(-0.1) - sum(-0.1 - h)) / h;
        let right = (sum(-0.1 + h) - sum(-0.1)) / h;
        assert!(close(left, -1.4, 1e-6) && close(right, 0.6, 1e-6));
        let ext = pair.instance.subdifferential_extremes(1, &[-0.1]).unwrap();
        assert_eq!(ext, vec![vec![-1.0], vec![1.0]]);
        assert_eq!(pair.domain, (-1.0, 1.0));
    }

    #[test]
    fn population_loss_rejects_points_outside_k() {
        let inst = make_coin_instance(0.1).unwrap();
        assert!(inst.population_loss(&[1.0 + 1e-10]).is_ok());
        assert!(inst.population_loss(&[1.1]).is_err());
        assert!(inst.population_loss(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn sampling_determinism_and_point_mass() {
        let inst = make_coin_instance(0.1).unwrap();
        assert_eq!(inst.draw_sample(50, 3).unwrap(), inst.draw_sample(50, 3).unwrap());
        assert!(inst.draw_sample(0, 3).is_err());
        let point = ScoInstance {
            weights: Some(vec![0.0, 1.0]),
            ..inst.clone()
        };
        let s = point.draw_sample(100, 1).unwrap();
        assert!(s.indices.iter().all(|&z| z == 1));
    }

    #[test]
    fn coin_sample_mean_concentrates() {
        let inst = make_coin_instance(0.1).unwrap();
        let n = 10_000;
        let s = inst.draw_sample(n, 2024).unwrap();
        assert!(coin_mean(&s).abs() <= 4.0 / (n as f64).sqrt());
    }

    #[test]
    fn exact_expectation_sample_matches_population() {
        let inst = make_quadratic_instance(
            vec![vec![0.2, 0.1], vec![-0.5, 0.4], vec![0.9, -0.9]],
            NormBall::l2(2),
        )
        .unwrap();
        let s = Sample::from_indices(vec![0, 1, 2]);
        let x = [0.1, -0.3];
        assert!(close(
            inst.empirical_loss(&s, &x).unwrap(),
            inst.population_loss(&x).unwrap(),
            1e-12
        ));
    }

    #[test]
    fn invariant_battery_passes_for_all_families() {
        let families = vec![
            make_coin_instance(0.1).unwrap(),
            make_coin_instance(0.45).unwrap(),
            make_hard_instance(4, 0.25, 3, 1).unwrap(),
            hard_e1e2(0.5),
            make_quadratic_instance(vec![vec![1.0, -1.5], vec![0.0, 0.3]], NormBall::l2(2)).unwrap(),
            make_quadratic_instance(vec![vec![1.0, -1.5], vec![0.0, 0.3]], NormBall::l1(2)).unwrap(),
            make_quadratic_instance(vec![vec![1.0, -1.5], vec![0.0, 0.3]], NormBall::linf(2))
                .unwrap(),
            make_appendix_pair().instance,
        ];
        for inst in families {
            let r = invariant_battery(&inst, 1000, 8);
            assert!(r.passed(), "{}: {r:?}", inst.label());
        }
    }

    #[test]
    fn descriptor_round_trip_rebuilds_instance() {
        let inst = make_hard_instance(4, 0.25, 2, 5).unwrap();
        let json = serde_json::to_string(inst.descriptor()).unwrap();
        let back: InstanceDescriptor = serde_json::from_str(&json).unwrap();
        assert_eq!(back.build().unwrap(), inst);
        let bad = r#"{"family":"coin","eps0":0.1,"epsilon":2}"#;
        assert!(serde_json::from_str::<InstanceDescriptor>(bad).is_err());
    }
}
