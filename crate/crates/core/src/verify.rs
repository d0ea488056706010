//! Monte-Carlo checks of the concentration statements behind the ERM
//! analysis: each mode draws fresh samples and compares an event frequency
//! or moment with its analytic bound.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::divergence::{
    bregman, empirical_bregman, outcome_bregman, representativeness, truncated_divergence,
    OptimalityCertificate,
};
use crate::error::{check_dim, Error, Result};
use crate::instance::ScoInstance;
use crate::net::{build_net, Net};
use crate::rademacher::rad_upper_bound;
use crate::seed;
use crate::vector;

pub const MIN_TRIALS: usize = 100;

/// Cell size of the net built for `rep` mode when the caller supplies none.
pub const DEFAULT_REP_NET_EPS: f64 = 0.05;
const DEFAULT_REP_NET_BUDGET: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum VerifyMode {
    /// Pr[D̂ ≤ D/2] ≤ exp(−D n / 40c).
    Bregman,
    /// Pr[T̂ ≤ T/2] ≤ exp(−T n / 40c).
    Truncated,
    /// E‖Ĝ − G‖₂² ≤ 4 max‖g_z‖₂² / n.
    Gradient,
    /// Pr[‖Ĝ − G‖₂² > eps²] ≤ 4 max‖g_z‖₂² / (eps² n).
    GradientTail { eps: f64 },
    /// Var D_z ≤ (4c − λ) λ with λ = D.
    Variance,
    /// Pr[Rep(S) > 2L·Rad(K, n) + c √(2 ln(2/δ) / n)] ≤ δ.
    Rep { delta: f64 },
}

impl VerifyMode {
    pub fn name(&self) -> &'static str {
        match self {
            VerifyMode::Bregman => "bregman",
            VerifyMode::Truncated => "truncated",
            VerifyMode::Gradient => "gradient",
            VerifyMode::GradientTail { .. } => "gradient-tail",
            VerifyMode::Variance => "variance",
            VerifyMode::Rep { .. } => "rep",
        }
    }
}

impl fmt::Display for VerifyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VerifyMode::GradientTail { eps } => write!(f, "gradient-tail(eps={eps})"),
            VerifyMode::Rep { delta } => write!(f, "rep(delta={delta})"),
            _ => f.write_str(self.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub mode: VerifyMode,
    pub x: Vec<f64>,
    pub n: usize,
    pub trials: usize,
    pub seed: u64,
    /// Event frequency or moment estimate.
    pub empirical: f64,
    pub analytic_bound: f64,
    pub mc_stderr: f64,
    /// empirical ≤ analytic_bound + 3·mc_stderr
    pub pass: bool,
    pub certificate_id: String,
}

pub const CSV_HEADER: &str = "mode,n,trials,empirical,analytic_bound,mc_stderr,pass,certificate_id";

impl VerificationReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.mode, self.n, self.trials, self.empirical, self.analytic_bound, self.mc_stderr,
            self.pass, self.certificate_id
        )
        .replace("(eps=", "(eps:")
        .replace("(delta=", "(delta:")
    }
}

/// Render reports as CSV with a header line.
pub fn to_csv(reports: &[VerificationReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let t = values.len() as f64;
    let mean = values.iter().sum::<f64>() / t;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (t - 1.0);
    (mean, (var / t).sqrt())
}

/// Frequency of a 0/1 event with the binomial standard error √(p̂(1−p̂)/trials).
fn frequency(hits: &[bool]) -> (f64, f64) {
    let t = hits.len() as f64;
    let p = hits.iter().filter(|h| **h).count() as f64 / t;
    (p, (p * (1.0 - p) / t).sqrt())
}

/// Run `trials` independent samples of size `n` (trial t uses seed
/// mix(seed, t)) and test the statement selected by `mode` at `x`.
/// `net` is only used by `rep` mode; when absent a seeded packing net is built.
#[allow(clippy::too_many_arguments)]
pub fn verify_concentration(
    inst: &ScoInstance,
    cert: &OptimalityCertificate,
    x: &[f64],
    n: usize,
    trials: usize,
    seed: u64,
    mode: VerifyMode,
    net: Option<&Net>,
) -> Result<VerificationReport> {
    check_dim(inst.dim(), x.len())?;
    if trials < MIN_TRIALS {
        return Err(Error::InvalidInput(format!(
            "verification needs at least {MIN_TRIALS} trials, got {trials}"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidInput("sample size must be >= 1".into()));
    }
    let c = inst.bound();
    let nf = n as f64;
    let sample = |t: usize| inst.draw_sample(n, seed::mix(seed, &[t as u64]));

    let (empirical, analytic_bound, mc_stderr) = match mode {
        VerifyMode::Bregman => {
            let d = bregman(cert, inst, x)?;
            if d <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "bregman mode needs D(x, x*) > 0, got {d}"
                )));
            }
            let hits = (0..trials)
                .into_par_iter()
                .map(|t| Ok(empirical_bregman(cert, inst, &sample(t)?, x)? <= d / 2.0))
                .collect::<Result<Vec<bool>>>()?;
            let (p, se) = frequency(&hits);
            (p, (-d * nf / (40.0 * c)).exp(), se)
        }
        VerifyMode::Truncated => {
            let probe = inst.draw_sample(1, seed)?;
            let (tpop, _) = truncated_divergence(cert, inst, &probe, x, c)?;
            if tpop <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "truncated mode needs T(x, x*) > 0, got {tpop}"
                )));
            }
            let hits = (0..trials)
                .into_par_iter()
                .map(|t| {
                    let (_, that) = truncated_divergence(cert, inst, &sample(t)?, x, c)?;
                    Ok(that <= tpop / 2.0)
                })
                .collect::<Result<Vec<bool>>>()?;
            let (p, se) = frequency(&hits);
            (p, (-tpop * nf / (40.0 * c)).exp(), se)
        }
        VerifyMode::Gradient | VerifyMode::GradientTail { .. } => {
            let sq = (0..trials)
                .into_par_iter()
                .map(|t| {
                    let ghat = cert.empirical_mean(inst, &sample(t)?);
                    Ok(vector::norm2_sq(&vector::sub(&ghat, &cert.g_mean)))
                })
                .collect::<Result<Vec<f64>>>()?;
            let second_moment = 4.0 * cert.max_sq_norm2() / nf;
            match mode {
                VerifyMode::GradientTail { eps } => {
                    if eps.is_nan() || eps <= 0.0 {
                        return Err(Error::InvalidInput(format!("gradient-tail eps must be > 0, got {eps}")));
                    }
                    let hits: Vec<bool> = sq.iter().map(|v| *v > eps * eps).collect();
                    let (p, se) = frequency(&hits);
                    (p, (second_moment / (eps * eps)).min(1.0), se)
                }
                _ => {
                    let (m, se) = mean_and_stderr(&sq);
                    (m, second_moment, se)
                }
            }
        }
        VerifyMode::Variance => {
            let lambda = bregman(cert, inst, x)?;
            let variances = (0..trials)
                .into_par_iter()
                .map(|t| {
                    let s = sample(t)?;
                    if n < 2 {
                        return Ok(0.0);
                    }
                    let r: Vec<f64> = s.indices.iter().map(|z| outcome_bregman(cert, inst, *z, x)).collect();
                    let mean = r.iter().sum::<f64>() / nf;
                    Ok(r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0))
                })
                .collect::<Result<Vec<f64>>>()?;
            let (m, se) = mean_and_stderr(&variances);
            (m, ((4.0 * c - lambda) * lambda).max(0.0), se)
        }
        VerifyMode::Rep { delta } => {
            if !(delta > 0.0 && delta < 1.0) {
                return Err(Error::InvalidInput(format!("rep delta must be in (0,1), got {delta}")));
            }
            let owned;
            let net = match net {
                Some(net) => net,
                None => {
                    owned = build_net(&inst.ball(), DEFAULT_REP_NET_EPS, DEFAULT_REP_NET_BUDGET, seed)?;
                    &owned
                }
            };
            let threshold = 2.0 * inst.lipschitz() * rad_upper_bound(&inst.ball(), n)?
                + c * (2.0 * (2.0 / delta).ln() / nf).sqrt();
            let hits = (0..trials)
                .into_par_iter()
                .map(|t| Ok(representativeness(cert, inst, &sample(t)?, net, c).value > threshold))
                .collect::<Result<Vec<bool>>>()?;
            let (p, se) = frequency(&hits);
            (p, delta, se)
        }
    };
    Ok(VerificationReport {
        mode,
        x: x.to_vec(),
        n,
        trials,
        seed,
        empirical,
        analytic_bound,
        mc_stderr,
        pass: empirical <= analytic_bound + 3.0 * mc_stderr,
        certificate_id: cert.id.clone(),
    })
}
