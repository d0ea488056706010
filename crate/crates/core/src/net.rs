//! ε-nets of norm balls built as greedy maximal ε-separated packings.
//!
//! A maximal ε-packing Y of K is a 2ε-cover of K, and a volume argument
//! bounds |Y| ≤ (2(1+ε)/ε)^d. The packing is grown greedily from a
//! deterministic grid prefix followed by seeded uniform samples of K.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::norm::{NormBall, NormFamily};
use crate::seed;

/// Largest predicted packing size `build_net` will attempt.
pub const DEFAULT_NET_CAP: usize = 250_000;

const MEASURE_PROBES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetKind {
    /// Greedy maximal packing.
    Packing,
    /// Instance-supplied structured point set.
    Structured,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Net {
    pub family: NormFamily,
    pub dim: usize,
    /// Pairwise separation of the packing.
    pub eps: f64,
    pub seed: u64,
    pub points: Vec<Vec<f64>>,
    /// Guaranteed cover radius (2·eps for a maximal packing).
    pub cover_radius: f64,
    /// Largest nearest-point distance over seeded probes of K.
    pub measured_radius: f64,
    pub kind: NetKind,
}

/// Volume bound (2(1+ε)/ε)^d on the size of an ε-packing of K.
pub fn packing_bound(dim: usize, eps: f64) -> f64 {
    (2.0 * (1.0 + eps) / eps).powi(dim as i32)
}

/// Draw a point uniformly from K.
pub fn sample_uniform<R: Rng + ?Sized>(ball: &NormBall, rng: &mut R) -> Vec<f64> {
    let d = ball.dim;
    match ball.family {
        NormFamily::Linf => (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect(),
        NormFamily::L2 => loop {
            let g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
            let r = crate::vector::norm2(&g);
            if r > 0.0 {
                let u: f64 = rng.random();
                let radius = u.powf(1.0 / d as f64);
                break g.iter().map(|v| v * radius / r).collect();
            }
        },
        NormFamily::L1 => {
            let e: Vec<f64> = (0..=d).map(|_| Exp1.sample(rng)).collect();
            let total: f64 = e.iter().sum();
            (0..d)
                .map(|i| {
                    let s = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    s * e[i] / total
                })
                .collect()
        }
        NormFamily::Lp(_) => loop {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect();
            if ball.norm(&x).unwrap_or(f64::INFINITY) <= 1.0 {
                break x;
            }
        },
    }
}

/// Axis grid with the given step, restricted to K, in lexicographic order.
/// Stops after `limit` points.
fn grid_points(ball: &NormBall, step: f64, limit: usize) -> Vec<Vec<f64>> {
    let k = (1.0 / step + 1e-9).floor() as i64;
    let axis: Vec<f64> = (-k..=k).map(|i| (i as f64 * step).clamp(-1.0, 1.0)).collect();
    let mut out = Vec::new();
    let mut idx = vec![0usize; ball.dim];
    'outer: loop {
        if out.len() >= limit {
            break;
        }
        let x: Vec<f64> = idx.iter().map(|&i| axis[i]).collect();
        if ball.norm(&x).map(|r| r <= 1.0).unwrap_or(false) {
            out.push(x);
        }
        for slot in idx.iter_mut().rev() {
            *slot += 1;
            if *slot < axis.len() {
                continue 'outer;
            }
            *slot = 0;
        }
        break;
    }
    out
}

/// Build a greedy maximal `eps`-packing of K using at most `candidate_budget`
/// candidates.
pub fn build_net(ball: &NormBall, eps: f64, candidate_budget: usize, seed: u64) -> Result<Net> {
    build_net_with_cap(ball, eps, candidate_budget, seed, DEFAULT_NET_CAP)
}

pub fn build_net_with_cap(
    ball: &NormBall,
    eps: f64,
    candidate_budget: usize,
    seed: u64,
    cap: usize,
) -> Result<Net> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidInput(format!("net separation must be positive, got {eps}")));
    }
    let predicted = packing_bound(ball.dim, eps);
    if predicted > cap as f64 {
        return Err(Error::NetTooLarge {
            predicted,
            cap,
            dim: ball.dim,
            eps,
        });
    }
    let step = eps / (2.0 * (ball.dim as f64).sqrt());
    let grid = grid_points(ball, step, candidate_budget);
    let mut rng = seed::rng(seed);
    let mut points: Vec<Vec<f64>> = Vec::new();
    let consider = |x: Vec<f64>, points: &mut Vec<Vec<f64>>| {
        let separated = points
            .iter()
            .all(|y| ball.distance(&x, y).map(|r| r > eps).unwrap_or(false));
        if separated {
            points.push(x);
        }
    };
    let tail = candidate_budget.saturating_sub(grid.len());
    for x in grid {
        consider(x, &mut points);
    }
    for _ in 0..tail {
        let x = sample_uniform(ball, &mut rng);
        consider(x, &mut points);
    }
    if points.is_empty() {
        points.push(vec![0.0; ball.dim]);
    }
    let mut net = Net {
        family: ball.family,
        dim: ball.dim,
        eps,
        seed,
        points,
        cover_radius: 2.0 * eps,
        measured_radius: 0.0,
        kind: NetKind::Packing,
    };
    net.measured_radius = net.measure_radius(MEASURE_PROBES, seed::mix(seed, &[0x6e6574]));
    Ok(net)
}

impl Net {
    /// Wrap an instance-supplied point set. `cover_radius` is whatever the
    /// caller can vouch for; it is not checked.
    pub fn structured(ball: &NormBall, points: Vec<Vec<f64>>, cover_radius: f64) -> Self {
        let mut eps = f64::INFINITY;
        for (i, a) in points.iter().enumerate() {
            for b in &points[i + 1..] {
                eps = eps.min(ball.distance(a, b).unwrap_or(f64::INFINITY));
            }
        }
        let mut net = Net {
            family: ball.family,
            dim: ball.dim,
            eps: if eps.is_finite() { eps } else { 0.0 },
            seed: 0,
            points,
            cover_radius,
            measured_radius: 0.0,
            kind: NetKind::Structured,
        };
        net.measured_radius = net.measure_radius(MEASURE_PROBES, 0);
        net
    }

    pub fn ball(&self) -> NormBall {
        NormBall {
            family: self.family,
            dim: self.dim,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Distance from `x` to the nearest net point.
    pub fn nearest_distance(&self, x: &[f64]) -> f64 {
        let ball = self.ball();
        self.points
            .iter()
            .map(|y| ball.distance(x, y).unwrap_or(f64::INFINITY))
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest nearest-point distance over `probes` seeded uniform points.
    pub fn measure_radius(&self, probes: usize, seed: u64) -> f64 {
        let ball = self.ball();
        let mut rng = seed::rng(seed);
        (0..probes)
            .map(|_| self.nearest_distance(&sample_uniform(&ball, &mut rng)))
            .fold(0.0, f64::max)
    }

    /// Smallest pairwise distance among the points.
    pub fn min_separation(&self) -> f64 {
        let ball = self.ball();
        let mut best = f64::INFINITY;
        for (i, a) in self.points.iter().enumerate() {
            for b in &self.points[i + 1..] {
                best = best.min(ball.distance(a, b).unwrap_or(f64::INFINITY));
            }
        }
        best
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_values() {
        assert_eq!(packing_bound(1, 1.0), 4.0);
        assert_eq!(packing_bound(2, 0.5), 36.0);
    }

    #[test]
    fn interval_with_unit_separation() {
        let ball = NormBall::l2(1);
        let net = build_net(&ball, 1.0, 200, 3).unwrap();
        assert!(net.len() <= 4);
        assert_eq!(net.cover_radius, 2.0);
        // dense sweep of [-1, 1]
        for i in 0..=2000 {
            let x = -1.0 + i as f64 / 1000.0;
            assert!(net.nearest_distance(&[x]) <= 2.0);
        }
    }

    #[test]
    fn square_half_separation_within_bound() {
        let net = build_net(&NormBall::linf(2), 0.5, 5000, 9).unwrap();
        assert!(net.len() <= 36, "{}", net.len());
        assert!(net.min_separation() > 0.5);
    }

    #[test]
    fn separation_two_gives_single_point() {
        for family in [NormFamily::L1, NormFamily::L2, NormFamily::Linf] {
            let net = build_net(&NormBall::new(family, 1).unwrap(), 2.0, 100, 0).unwrap();
            assert_eq!(net.len(), 1);
            assert!(net.measured_radius <= 4.0);
            assert!(net.nearest_distance(&[1.0]) <= 2.0 && net.nearest_distance(&[-1.0]) <= 2.0);
        }
    }

    #[test]
    fn refuses_oversized_nets() {
        let err = build_net(&NormBall::l2(12), 0.1, 10, 0).unwrap_err();
        assert!(matches!(err, Error::NetTooLarge { dim: 12, .. }));
        assert!(build_net(&NormBall::l2(2), 0.0, 10, 0).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let ball = NormBall::l1(2);
        let a = build_net(&ball, 0.3, 3000, 17).unwrap();
        let b = build_net(&ball, 0.3, 3000, 17).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_samples_lie_in_ball() {
        let mut rng = seed::rng(5);
        for ball in [
            NormBall::l1(4),
            NormBall::l2(4),
            NormBall::linf(4),
            NormBall::new(NormFamily::Lp(3.0), 3).unwrap(),
        ] {
            for _ in 0..2000 {
                let x = sample_uniform(&ball, &mut rng);
                assert!(ball.norm(&x).unwrap() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn json_round_trip() {
        let net = build_net(&NormBall::l2(2), 0.5, 500, 1).unwrap();
        let back = Net::from_json(&net.to_json().unwrap()).unwrap();
        assert_eq!(net, back);
        let v: serde_json::Value = serde_json::from_str(&net.to_json().unwrap()).unwrap();
        for key in ["family", "dim", "eps", "seed", "points"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }
}
