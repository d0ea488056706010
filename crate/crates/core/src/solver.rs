//! Empirical and population risk minimization over K, and the search for the
//! worst approximate empirical risk minimizer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{Outcome, Sample, ScoInstance};
use crate::net::Net;
use crate::vector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub point: Vec<f64>,
    pub value: f64,
    /// Optimality gap the run was configured for.
    pub tol: f64,
    pub iterations: u64,
}

/// Number of projected-subgradient steps for a target gap.
pub fn iteration_count(lipschitz: f64, tol: f64) -> u64 {
    ((2.0 * lipschitz / tol).powi(2)).ceil().max(1.0) as u64
}

/// Averaged projected subgradient descent from the origin with steps
/// 1/(L·√t). Returns whichever of the running average and the best iterate
/// has the lower objective.
fn projected_subgradient<V, G>(
    inst: &ScoInstance,
    tol: f64,
    value: V,
    subgrad: G,
) -> Result<SolveReport>
where
    V: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::InvalidInput(format!("tolerance must be positive, got {tol}")));
    }
    let ball = inst.ball();
    let l = inst.lipschitz().max(f64::MIN_POSITIVE);
    let steps = iteration_count(l, tol);
    let mut x = vec![0.0; inst.dim()];
    let mut avg = x.clone();
    let mut best = x.clone();
    let mut best_value = value(&x);
    for t in 1..=steps {
        let g = subgrad(&x);
        let eta = 1.0 / (l * (t as f64).sqrt());
        vector::axpy(-eta, &g, &mut x);
        x = ball.project(&x)?;
        let w = 1.0 / t as f64;
        for (a, xi) in avg.iter_mut().zip(&x) {
            *a += w * (xi - *a);
        }
        let fx = value(&x);
        if fx < best_value {
            best_value = fx;
            best.clone_from(&x);
        }
    }
    let avg = ball.project(&avg)?;
    let avg_value = value(&avg);
    let (point, value) = if avg_value <= best_value {
        (avg, avg_value)
    } else {
        (best, best_value)
    };
    Ok(SolveReport {
        point,
        value,
        tol,
        iterations: steps,
    })
}

fn empirical_subgrad(inst: &ScoInstance, counts: &[(Outcome, usize)], n: usize, x: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; inst.dim()];
    for &(z, k) in counts {
        vector::axpy(k as f64 / n as f64, &inst.subgrad(z, x), &mut g);
    }
    g
}

/// An approximate minimizer of F̂ over K. Families with a closed-form
/// empirical minimizer use it after a sanity check against the start point
/// and the structured candidates.
pub fn minimize_empirical(inst: &ScoInstance, s: &Sample, tol: f64) -> Result<SolveReport> {
    inst.validate_sample(s)?;
    let counts = s.counts();
    if let Some((point, value)) = inst.empirical_minimizer(s) {
        let mut probes = inst.spurious_candidates(s);
        probes.push(vec![0.0; inst.dim()]);
        for p in &probes {
            let v = inst.empirical_loss_unchecked(&counts, s.n, p);
            if v < value - 1e-12 {
                return Err(Error::Integrity(format!(
                    "closed-form empirical minimizer value {value} exceeds F̂ = {v} at {p:?}"
                )));
            }
        }
        return Ok(SolveReport {
            point,
            value,
            tol,
            iterations: 0,
        });
    }
    projected_subgradient(
        inst,
        tol,
        |x| inst.empirical_loss_unchecked(&counts, s.n, x),
        |x| empirical_subgrad(inst, &counts, s.n, x),
    )
}

/// Same as [`minimize_empirical`] but always runs the iterative solver.
pub fn minimize_empirical_iterative(inst: &ScoInstance, s: &Sample, tol: f64) -> Result<SolveReport> {
    inst.validate_sample(s)?;
    let counts = s.counts();
    projected_subgradient(
        inst,
        tol,
        |x| inst.empirical_loss_unchecked(&counts, s.n, x),
        |x| empirical_subgrad(inst, &counts, s.n, x),
    )
}

/// A minimizer x⋆ of F. When the family knows its minimizer, the solver
/// output is used to check it and the known point is returned.
pub fn population_minimizer(inst: &ScoInstance, tol: f64) -> Result<SolveReport> {
    let solved = projected_subgradient(
        inst,
        tol,
        |x| inst.population_loss_unchecked(x),
        |x| inst.population_subgradient(x),
    )?;
    match inst.known_minimizer() {
        Some(known) => {
            let value = inst.population_loss(&known)?;
            if value > solved.value + tol {
                return Err(Error::Integrity(format!(
                    "known minimizer has F = {value}, solver reached {} (tol {tol})",
                    solved.value
                )));
            }
            Ok(SolveReport {
                point: known,
                value,
                tol,
                iterations: solved.iterations,
            })
        }
        None => Ok(solved),
    }
}

/// Reference value in the near-ERM premise F̂(x) ≤ reference + ε.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Premise {
    /// F̂(x⋆) with x⋆ the population minimizer.
    #[default]
    AtPopulationMinimizer,
    /// min over K of F̂ (as found by the solver).
    AtEmpiricalMinimum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearErmOutcome {
    pub point: Vec<f64>,
    /// F(point) − F(x⋆).
    pub pop_excess: f64,
    /// F̂(point) − F̂(x⋆).
    pub emp_gap: f64,
    pub candidate_index: usize,
    pub candidates: usize,
}

/// Candidate-based worst near-ERM search with population quantities of the
/// net precomputed, for repeated use across samples.
#[derive(Debug, Clone)]
pub struct NearErmSearch<'a> {
    inst: &'a ScoInstance,
    net: &'a Net,
    xstar: Vec<f64>,
    fstar: f64,
    net_pop: Vec<f64>,
}

impl<'a> NearErmSearch<'a> {
    pub fn new(inst: &'a ScoInstance, net: &'a Net, tol: f64) -> Result<Self> {
        let xs = population_minimizer(inst, tol)?;
        Self::with_minimizer(inst, net, xs.point)
    }

    pub fn with_minimizer(inst: &'a ScoInstance, net: &'a Net, xstar: Vec<f64>) -> Result<Self> {
        if net.dim != inst.dim() {
            return Err(Error::DimensionMismatch {
                expected: inst.dim(),
                got: net.dim,
            });
        }
        let fstar = inst.population_loss(&xstar)?;
        let net_pop = net
            .points
            .iter()
            .map(|p| inst.population_loss(p))
            .collect::<Result<Vec<_>>>()?;
        Ok(NearErmSearch {
            inst,
            net,
            xstar,
            fstar,
            net_pop,
        })
    }

    pub fn xstar(&self) -> &[f64] {
        &self.xstar
    }

    pub fn fstar(&self) -> f64 {
        self.fstar
    }

    /// Candidate points in order: net, spurious candidates, x̂, x⋆.
    pub fn candidates(&self, s: &Sample, erm: &SolveReport) -> Vec<Vec<f64>> {
        let mut c = self.net.points.clone();
        c.extend(self.inst.spurious_candidates(s));
        c.push(erm.point.clone());
        c.push(self.xstar.clone());
        c
    }

    pub fn run(&self, s: &Sample, eps: f64, premise: Premise, tol: f64) -> Result<NearErmOutcome> {
        let erm = minimize_empirical(self.inst, s, tol)?;
        self.run_with_erm(s, eps, premise, &erm)
    }

    pub fn run_with_erm(
        &self,
        s: &Sample,
        eps: f64,
        premise: Premise,
        erm: &SolveReport,
    ) -> Result<NearErmOutcome> {
        let counts = s.counts();
        let emp = |x: &[f64]| self.inst.empirical_loss_unchecked(&counts, s.n, x);
        let emp_star = emp(&self.xstar);
        let reference = match premise {
            Premise::AtPopulationMinimizer => emp_star,
            Premise::AtEmpiricalMinimum => erm.value.min(emp_star),
        };
        let candidates = self.candidates(s, erm);
        let mut best: Option<(usize, f64, f64)> = None;
        for (i, x) in candidates.iter().enumerate() {
            let fhat = emp(x);
            if fhat > reference + eps {
                continue;
            }
            let f = match self.net_pop.get(i) {
                Some(&v) => v,
                None => self.inst.population_loss(x)?,
            };
            if best.is_none_or(|(_, bf, _)| f > bf) {
                best = Some((i, f, fhat));
            }
        }
        // x⋆ always satisfies the literal premise; the min-based premise can
        // only be looser since reference ≥ F̂(x̂) ≥ min F̂ − tol.
        let (i, f, fhat) = best.ok_or_else(|| {
            Error::Integrity("no candidate satisfies the near-ERM premise".into())
        })?;
        Ok(NearErmOutcome {
            point: candidates[i].clone(),
            pop_excess: f - self.fstar,
            emp_gap: fhat - emp_star,
            candidate_index: i,
            candidates: candidates.len(),
        })
    }
}

/// The candidate maximizing F subject to F̂(x) ≤ F̂(x⋆) + eps, and its
/// population excess F(x) − F(x⋆).
pub fn worst_near_erm(
    inst: &ScoInstance,
    s: &Sample,
    eps: f64,
    net: &Net,
    tol: f64,
) -> Result<(Vec<f64>, f64)> {
    let search = NearErmSearch::new(inst, net, tol)?;
    let out = search.run(s, eps, Premise::AtPopulationMinimizer, tol)?;
    Ok((out.point, out.pop_excess))
}
