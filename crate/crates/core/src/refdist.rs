//! Moment-matched reference distributions and their p-values.

use std::fmt;

use log::warn;

use crate::error::{Error, Result};
use crate::moments::{LinearMoments, QuadraticMoments};
use crate::special::{normal_cdf, reg_inc_beta_pair, reg_inc_gamma_pair};

pub use crate::special::{reg_inc_beta, reg_inc_gamma_upper};

/// Excursions outside `[lo, hi]` up to this fraction of the width are clamped silently.
pub const RANGE_CLAMP_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalRef {
    pub variance: f64,
}

/// `lo + (hi − lo) · Beta(α, β)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaledBetaRef {
    pub lo: f64,
    pub hi: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl ScaledBetaRef {
    pub fn mean(&self) -> f64 {
        self.lo + (self.hi - self.lo) * self.alpha / (self.alpha + self.beta)
    }

    pub fn variance(&self) -> f64 {
        let (a, b) = (self.alpha, self.beta);
        let w = self.hi - self.lo;
        w * w * a * b / ((a + b) * (a + b) * (a + b + 1.0))
    }
}

/// `σ² χ²_ν` with real `ν`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaledChiSqRef {
    pub sigma2: f64,
    pub nu: f64,
}

impl ScaledChiSqRef {
    pub fn mean(&self) -> f64 {
        self.sigma2 * self.nu
    }

    pub fn variance(&self) -> f64 {
        2.0 * self.sigma2 * self.sigma2 * self.nu
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Normal,
    Beta,
    ChiSq,
    Permutation,
    Rotation,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Normal => "normal",
            Method::Beta => "beta",
            Method::ChiSq => "chisq",
            Method::Permutation => "permutation",
            Method::Rotation => "rotation",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "normal" => Method::Normal,
            "beta" => Method::Beta,
            "chisq" => Method::ChiSq,
            "permutation" => Method::Permutation,
            "rotation" => Method::Rotation,
            other => return Err(Error::Domain(format!("unknown method `{other}`"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PValueSet {
    pub p_left: f64,
    pub p_right: f64,
    /// Two-sided for the linear statistic, upper tail for the quadratic one.
    pub p_central: f64,
    pub method: Method,
    pub notes: Vec<String>,
}

fn central(p_left: f64, p_right: f64) -> f64 {
    (2.0 * p_left.min(p_right)).clamp(f64::MIN_POSITIVE, 1.0)
}

pub fn fit_normal(lm: &LinearMoments) -> Result<NormalRef> {
    if !(lm.variance > 0.0 && lm.variance.is_finite()) {
        return Err(Error::Degenerate(format!("linear variance {} is not positive", lm.variance)));
    }
    Ok(NormalRef { variance: lm.variance })
}

/// Match the range `[A, B]`, mean 0 and variance `σ²`.
pub fn fit_scaled_beta(lm: &LinearMoments) -> Result<ScaledBetaRef> {
    let (a, b, s2) = (lm.range_lo, lm.range_hi, lm.variance);
    if !(a < 0.0 && b > 0.0) {
        return Err(Error::Degenerate(format!("range [{a}, {b}] does not straddle zero")));
    }
    if !(s2 > 0.0) {
        return Err(Error::Degenerate(format!("linear variance {s2} is not positive")));
    }
    if s2 >= -a * b {
        return Err(Error::Degenerate(format!(
            "variance {s2:e} reaches the Bhatia-Davis bound -AB = {:e}; two-point distribution",
            -a * b
        )));
    }
    let k = a * b / s2 + 1.0;
    let w = b - a;
    Ok(ScaledBetaRef { lo: a, hi: b, alpha: a / w * k, beta: -b / w * k })
}

/// `ν = 2E²/var`, `σ² = E/ν`.
pub fn fit_scaled_chisq(qm: &QuadraticMoments) -> Result<ScaledChiSqRef> {
    if !(qm.mean > 0.0) {
        return Err(Error::Degenerate(format!("quadratic mean {} is not positive", qm.mean)));
    }
    if !(qm.variance > 0.0) {
        return Err(Error::Degenerate(format!("quadratic variance {} is not positive", qm.variance)));
    }
    let nu = 2.0 * qm.mean * qm.mean / qm.variance;
    Ok(ScaledChiSqRef { sigma2: qm.mean / nu, nu })
}

pub fn pvalues_normal(r: &NormalRef, t_hat: f64) -> PValueSet {
    let z = t_hat / r.variance.sqrt();
    let p_left = normal_cdf(z);
    let p_right = normal_cdf(-z);
    PValueSet { p_left, p_right, p_central: central(p_left, p_right), method: Method::Normal, notes: vec![] }
}

pub fn pvalues_beta(r: &ScaledBetaRef, t_hat: f64) -> Result<PValueSet> {
    let w = r.hi - r.lo;
    let mut notes = vec![];
    let excursion = (r.lo - t_hat).max(t_hat - r.hi);
    if excursion > RANGE_CLAMP_TOL * w {
        let msg = format!("statistic {t_hat:e} outside attainable range [{:e}, {:e}]; clamped", r.lo, r.hi);
        warn!("{msg}");
        notes.push(msg);
    }
    let u = ((t_hat - r.lo) / w).clamp(0.0, 1.0);
    let (p_left, p_right) = reg_inc_beta_pair(u, r.alpha, r.beta)?;
    Ok(PValueSet { p_left, p_right, p_central: central(p_left, p_right), method: Method::Beta, notes })
}

/// Upper tail `Pr(σ²χ²_ν ≥ Ĉ)`, reported as the central p-value.
pub fn pvalues_chisq(r: &ScaledChiSqRef, c_hat: f64) -> Result<PValueSet> {
    if c_hat < 0.0 {
        return Err(Error::Domain(format!("quadratic statistic {c_hat} is negative")));
    }
    let (p_left, p_right) = reg_inc_gamma_pair(r.nu / 2.0, c_hat / (2.0 * r.sigma2))?;
    Ok(PValueSet {
        p_left,
        p_right,
        p_central: p_right.clamp(f64::MIN_POSITIVE, 1.0),
        method: Method::ChiSq,
        notes: vec![],
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Adjustment {
    /// Benjamini–Hochberg step-up.
    Bh,
    Bonferroni,
}

pub fn adjust_pvalues(pvals: &[f64], method: Adjustment) -> Result<Vec<f64>> {
    if let Some(p) = pvals.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Domain(format!("p-value {p} outside [0, 1]")));
    }
    let m = pvals.len() as f64;
    match method {
        Adjustment::Bonferroni => Ok(pvals.iter().map(|p| (p * m).min(1.0)).collect()),
        Adjustment::Bh => {
            let mut order: Vec<usize> = (0..pvals.len()).collect();
            order.sort_by(|&i, &j| pvals[i].total_cmp(&pvals[j]));
            let mut out = vec![0.0; pvals.len()];
            let mut running = 1.0_f64;
            for (rank, &i) in order.iter().enumerate().rev() {
                running = running.min(pvals[i] * m / (rank + 1) as f64);
                out[i] = running;
            }
            Ok(out)
        }
    }
}
