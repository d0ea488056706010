//! Norm balls on R^d: the ℓ_p family, its dual, Euclidean projection and
//! linear minimization over the unit ball.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::vector;

/// Norm family of a unit ball.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormFamily {
    L1,
    L2,
    Linf,
    /// General exponent `p >= 1`.
    Lp(f64),
}

impl NormFamily {
    /// Exponent `p` (infinite for `Linf`).
    pub fn exponent(self) -> f64 {
        match self {
            NormFamily::L1 => 1.0,
            NormFamily::L2 => 2.0,
            NormFamily::Linf => f64::INFINITY,
            NormFamily::Lp(p) => p,
        }
    }

    /// Conjugate exponent `q` with `1/p + 1/q = 1`.
    pub fn dual_exponent(self) -> f64 {
        let p = self.exponent();
        if p == 1.0 {
            f64::INFINITY
        } else if p.is_infinite() {
            1.0
        } else {
            p / (p - 1.0)
        }
    }

    pub fn name(self) -> String {
        match self {
            NormFamily::L1 => "l1".into(),
            NormFamily::L2 => "l2".into(),
            NormFamily::Linf => "linf".into(),
            NormFamily::Lp(p) => format!("l{p}"),
        }
    }
}

impl std::str::FromStr for NormFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(NormFamily::L1),
            "l2" => Ok(NormFamily::L2),
            "linf" | "l_inf" | "inf" => Ok(NormFamily::Linf),
            other => {
                let p: f64 = other
                    .trim_start_matches('l')
                    .parse()
                    .map_err(|_| Error::InvalidInput(format!("unknown norm family `{s}`")))?;
                Ok(canonical(NormFamily::Lp(p)))
            }
        }
    }
}

fn canonical(family: NormFamily) -> NormFamily {
    match family {
        NormFamily::Lp(1.0) => NormFamily::L1,
        NormFamily::Lp(2.0) => NormFamily::L2,
        NormFamily::Lp(p) if p.is_infinite() => NormFamily::Linf,
        f => f,
    }
}

/// The closed unit ball K of an ℓ_p norm on R^dim.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormBall {
    pub family: NormFamily,
    pub dim: usize,
}

/// ‖x‖_p for a real exponent, scaled by the max entry for stability.
fn lp_norm(x: &[f64], p: f64) -> f64 {
    let m = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if m == 0.0 {
        return 0.0;
    }
    if p.is_infinite() {
        return m;
    }
    m * x.iter().map(|v| (v.abs() / m).powf(p)).sum::<f64>().powf(1.0 / p)
}

fn exact_norm(x: &[f64], p: f64) -> f64 {
    if p == 1.0 {
        x.iter().map(|v| v.abs()).sum()
    } else if p == 2.0 {
        vector::norm2(x)
    } else if p.is_infinite() {
        x.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    } else {
        lp_norm(x, p)
    }
}

fn signum0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl NormBall {
    pub fn new(family: NormFamily, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("dimension must be positive".into()));
        }
        if let NormFamily::Lp(p) = family {
            if p.is_nan() || p < 1.0 {
                return Err(Error::InvalidInput(format!("exponent p={p} must be >= 1")));
            }
        }
        Ok(NormBall {
            family: canonical(family),
            dim,
        })
    }

    pub fn l1(dim: usize) -> Self {
        NormBall { family: NormFamily::L1, dim }
    }

    pub fn l2(dim: usize) -> Self {
        NormBall { family: NormFamily::L2, dim }
    }

    pub fn linf(dim: usize) -> Self {
        NormBall { family: NormFamily::Linf, dim }
    }

    pub fn dual_exponent(&self) -> f64 {
        self.family.dual_exponent()
    }

    /// ‖x‖.
    pub fn norm(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        Ok(exact_norm(x, self.family.exponent()))
    }

    /// ‖g‖_⋆ = sup over x in K of ⟨g, x⟩, which is the ℓ_q norm of g.
    pub fn dual_norm(&self, g: &[f64]) -> Result<f64> {
        check_dim(self.dim, g.len())?;
        Ok(exact_norm(g, self.dual_exponent()))
    }

    /// ‖x − y‖.
    pub fn distance(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        check_dim(self.dim, y.len())?;
        Ok(exact_norm(&vector::sub(x, y), self.family.exponent()))
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> Result<bool> {
        Ok(self.norm(x)? <= 1.0 + tol)
    }

    /// Euclidean projection onto K. Exact for p in {1, 2, ∞}; other
    /// exponents are refused.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        let out = match self.family {
            NormFamily::L2 => {
                let r = vector::norm2(x);
                if r <= 1.0 {
                    x.to_vec()
                } else {
                    vector::scale(1.0 / r, x)
                }
            }
            NormFamily::Linf => x.iter().map(|v| v.clamp(-1.0, 1.0)).collect(),
            NormFamily::L1 => project_l1(x),
            NormFamily::Lp(p) => {
                return Err(Error::Unsupported(format!(
                    "exact Euclidean projection onto the l{p} ball"
                )))
            }
        };
        Ok(out)
    }

    /// Minimize ⟨g, x⟩ over K. Returns the minimizing vertex/point and the
    /// optimal value −‖g‖_⋆.
    pub fn linear_minimize(&self, g: &[f64]) -> Result<(Vec<f64>, f64)> {
        let dual = self.dual_norm(g)?;
        if dual == 0.0 {
            return Ok((vec![0.0; self.dim], 0.0));
        }
        let point = match self.family {
            NormFamily::L2 => vector::scale(-1.0 / dual, g),
            NormFamily::Linf => g.iter().map(|&v| -signum0(v)).collect(),
            NormFamily::L1 => {
                // Lowest index among ties.
                let mut best = 0;
                for (i, v) in g.iter().enumerate() {
                    if v.abs() > g[best].abs() {
                        best = i;
                    }
                }
                let mut x = vec![0.0; self.dim];
                x[best] = -signum0(g[best]);
                x
            }
            NormFamily::Lp(_) => {
                let q = self.dual_exponent();
                g.iter()
                    .map(|&v| -signum0(v) * (v.abs() / dual).powf(q - 1.0))
                    .collect()
            }
        };
        Ok((point, -dual))
    }
}

/// Euclidean projection onto the ℓ1 unit ball by sorting magnitudes and
/// soft-thresholding.
fn project_l1(x: &[f64]) -> Vec<f64> {
    let total: f64 = x.iter().map(|v| v.abs()).sum();
    if total <= 1.0 {
        return x.to_vec();
    }
    let mut u: Vec<f64> = x.iter().map(|v| v.abs()).collect();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - 1.0) / (j as f64 + 1.0);
        if uj - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    let mut out: Vec<f64> = x
        .iter()
        .map(|&v| signum0(v) * (v.abs() - theta).max(0.0))
        .collect();
    let n1: f64 = out.iter().map(|v| v.abs()).sum();
    if n1 > 1.0 {
        out.iter_mut().for_each(|v| *v /= n1);
    }
    out
}
