//! Exact permutation moments of the linear and quadratic set statistics.
//!
//! With `β̃_g = (1/n) Σ_i X_gi Ỹ_i` for a uniformly permuted phenotype `Ỹ`:
//!
//! - `E(β̃_g β̃_h) = μ₂ x̄_gh / (n − 1)` for `n ≥ 2`;
//! - `E(β̃_g β̃_h β̃_r β̃_s) = (μ₂², μ₄) · AᵀB · (x̄*_ghrs / n², x̄_ghrs / n³)ᵀ`
//!   for `n ≥ 4`, with `x̄*_ghrs = x̄_gh x̄_rs + x̄_gs x̄_hr + x̄_gr x̄_hs`.
//!
//! The linear statistic collapses to a single pseudo-gene `X_G = Σ w_g X_g`.
//! The quadratic variance is assembled from three sums `S₁`, `S₂`, `S₃`
//! over the √w-scaled rows, so no per-pair covariance table is built.

use std::collections::HashMap;
use std::sync::RwLock;

use log::warn;

use crate::dataset::{ExpressionMatrix, Phenotype, ResolvedGeneSet};
use crate::error::{Error, Result};

/// Relative floor below which a negative quadratic variance is rounding noise.
pub const VARIANCE_CLAMP_TOL: f64 = 1e-10;

fn require_n(n: usize, required: usize) -> Result<()> {
    if n < required {
        Err(Error::TooFewSubjects { n, required })
    } else {
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `β̂_g = (1/n) Σ_i X_gi Y_i`.
pub fn beta_hat(gene_row: &[f64], phenotype: &Phenotype) -> Result<f64> {
    let y = phenotype.values();
    if gene_row.len() != y.len() {
        return Err(Error::LengthMismatch { expected: y.len(), got: gene_row.len() });
    }
    Ok(dot(gene_row, y) / y.len() as f64)
}

/// Observed per-gene coefficients and the two set statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservedStatistics {
    pub beta_hat: Vec<f64>,
    /// `T̂ = Σ w_g β̂_g`
    pub t_hat: f64,
    /// `Ĉ = Σ w_g β̂_g²`
    pub c_hat: f64,
}

pub fn observed_statistics(
    set: &ResolvedGeneSet,
    matrix: &ExpressionMatrix,
    phenotype: &Phenotype,
) -> Result<ObservedStatistics> {
    let beta_hat = set
        .row_indices
        .iter()
        .map(|&g| beta_hat(matrix.row(g), phenotype))
        .collect::<Result<Vec<_>>>()?;
    let t_hat = set.weights.iter().zip(&beta_hat).map(|(w, b)| w * b).sum();
    let c_hat = set.weights.iter().zip(&beta_hat).map(|(w, b)| w * b * b).sum();
    Ok(ObservedStatistics { beta_hat, t_hat, c_hat })
}

/// Weighted sum of a set's rows, `X_Gi = Σ_g w_g X_gi`.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoGene {
    pub values: Vec<f64>,
    /// `(1/n) Σ X_Gi²`
    pub xbar_gg: f64,
    /// `(1/n) Σ X_Gi⁴`
    pub xbar_gggg: f64,
}

impl PseudoGene {
    pub fn from_values(values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let xbar_gg = values.iter().map(|x| x * x).sum::<f64>() / n;
        let xbar_gggg = values.iter().map(|x| (x * x) * (x * x)).sum::<f64>() / n;
        Self { values, xbar_gg, xbar_gggg }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn build_pseudo_gene(set: &ResolvedGeneSet, matrix: &ExpressionMatrix) -> PseudoGene {
    let mut values = vec![0.0; matrix.n_subjects()];
    for (&g, &w) in set.row_indices.iter().zip(&set.weights) {
        values.iter_mut().zip(matrix.row(g)).for_each(|(v, x)| *v += w * x);
    }
    PseudoGene::from_values(values)
}

/// `var(T̃) = μ₂ x̄_GG / (n − 1)`.
pub fn linear_variance(pseudo: &PseudoGene, phenotype: &Phenotype) -> Result<f64> {
    let n = pseudo.len();
    require_n(n, 2)?;
    Ok(phenotype.mu2() * pseudo.xbar_gg / (n - 1) as f64)
}

/// Smallest and largest attainable `T̃`: pair the sorted pseudo-gene with
/// the phenotype sorted in opposite and in matching order.
pub fn linear_range(pseudo: &PseudoGene, phenotype: &Phenotype) -> Result<(f64, f64)> {
    let n = pseudo.len();
    require_n(n, 2)?;
    if phenotype.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: phenotype.len() });
    }
    let mut x = pseudo.values.clone();
    x.sort_by(f64::total_cmp);
    let y = phenotype.sorted();
    let hi = dot(&x, y) / n as f64;
    let lo = x.iter().zip(y.iter().rev()).map(|(a, b)| a * b).sum::<f64>() / n as f64;
    // Both sums are exact extremes; rounding can push them across zero.
    Ok((lo.min(0.0), hi.max(0.0)))
}

/// The 2×2 matrix `AᵀB` of the fourth-moment formula for a given `n`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentMatrix {
    pub n: usize,
    pub atb: [[f64; 2]; 2],
}

impl MomentMatrix {
    /// `(μ₂², μ₄) · AᵀB · (first, second)ᵀ`
    pub fn contract(&self, mu2: f64, mu4: f64, first: f64, second: f64) -> f64 {
        let m = &self.atb;
        let left = m[0][0] * first + m[0][1] * second;
        let right = m[1][0] * first + m[1][1] * second;
        mu2 * mu2 * left + mu4 * right
    }
}

/// Multiply the 2×5 `Aᵀ` and the 5×2 `B` of the fourth-moment formula.
pub fn build_atb(n: usize) -> Result<MomentMatrix> {
    require_n(n, 4)?;
    let nf = n as f64;
    let d1 = nf - 1.0;
    let d2 = d1 * (nf - 2.0);
    let d3 = d2 * (nf - 3.0);
    let a_t = [
        [0.0, 0.0, nf / d1, -nf / d2, 3.0 * nf / d3],
        [1.0, -1.0 / d1, -1.0 / d1, 2.0 / d2, -6.0 / d3],
    ];
    let b = [[0.0, 1.0], [0.0, -4.0], [1.0, -3.0], [-2.0, 12.0], [1.0, -6.0]];
    let mut atb = [[0.0; 2]; 2];
    for (i, row) in a_t.iter().enumerate() {
        for j in 0..2 {
            atb[i][j] = row.iter().zip(&b).map(|(a, bk)| a * bk[j]).sum();
        }
    }
    Ok(MomentMatrix { n, atb })
}

/// Per-`n` cache of [`MomentMatrix`], shareable across worker threads.
#[derive(Debug, Default)]
pub struct AtbCache {
    map: RwLock<HashMap<usize, MomentMatrix>>,
}

impl AtbCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, n: usize) -> Result<MomentMatrix> {
        if let Some(m) = self.map.read().expect("atb cache poisoned").get(&n) {
            return Ok(*m);
        }
        let m = build_atb(n)?;
        self.map.write().expect("atb cache poisoned").entry(n).or_insert(m);
        Ok(m)
    }
}

/// `E(β̃_g β̃_h) = μ₂ x̄_gh / (n − 1)`; equal to the covariance since `E(β̃_g) = 0`.
pub fn lemma1_cross_moment(xbar_gh: f64, phenotype: &Phenotype, n: usize) -> Result<f64> {
    require_n(n, 2)?;
    Ok(phenotype.mu2() * xbar_gh / (n - 1) as f64)
}

/// The six pairwise cross-moments `x̄_ab = (1/n) Σ X_ai X_bi` of genes g, h, r, s.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairMoments {
    pub gh: f64,
    pub gr: f64,
    pub gs: f64,
    pub hr: f64,
    pub hs: f64,
    pub rs: f64,
}

impl PairMoments {
    /// `x̄*_ghrs = x̄_gh x̄_rs + x̄_gs x̄_hr + x̄_gr x̄_hs`
    pub fn star(&self) -> f64 {
        self.gh * self.rs + self.gs * self.hr + self.gr * self.hs
    }
}

/// `E(β̃_g β̃_h β̃_r β̃_s)` for `n ≥ 4`.
pub fn lemma2_fourth_moment(
    pairs: &PairMoments,
    xbar_ghrs: f64,
    phenotype: &Phenotype,
    atb: &MomentMatrix,
    n: usize,
) -> Result<f64> {
    require_n(n, 4)?;
    check_atb(atb, n)?;
    let nf = n as f64;
    Ok(atb.contract(phenotype.mu2(), phenotype.mu4(), pairs.star() / (nf * nf), xbar_ghrs / (nf * nf * nf)))
}

fn check_atb(atb: &MomentMatrix, n: usize) -> Result<()> {
    if atb.n != n {
        return Err(Error::LengthMismatch { expected: n, got: atb.n });
    }
    Ok(())
}

/// `cov(β̃_g², β̃_h²)` for `n ≥ 4`.
pub fn corollary2_cov(
    xbar_gg: f64,
    xbar_hh: f64,
    xbar_gh: f64,
    xbar_gghh: f64,
    phenotype: &Phenotype,
    atb: &MomentMatrix,
    n: usize,
) -> Result<f64> {
    require_n(n, 4)?;
    check_atb(atb, n)?;
    let nf = n as f64;
    let mu2 = phenotype.mu2();
    let star = xbar_gg * xbar_hh + 2.0 * xbar_gh * xbar_gh;
    let second = atb.contract(mu2, phenotype.mu4(), star / (nf * nf), xbar_gghh / (nf * nf * nf));
    Ok(second - mu2 * mu2 / ((nf - 1.0) * (nf - 1.0)) * xbar_gg * xbar_hh)
}

/// Rows of a set pre-multiplied by `√w_g`, so the quadratic statistic has unit weights.
#[derive(Clone, Debug, PartialEq)]
pub struct RootWeightedRows {
    n: usize,
    p: usize,
    values: Vec<f64>,
}

impl RootWeightedRows {
    /// Copies the set's rows; the shared matrix is left untouched.
    pub fn new(set: &ResolvedGeneSet, matrix: &ExpressionMatrix) -> Result<Self> {
        let n = matrix.n_subjects();
        let mut values = Vec::with_capacity(n * set.len());
        for (&g, &w) in set.row_indices.iter().zip(&set.weights) {
            if w < 0.0 {
                return Err(Error::NegativeWeight {
                    set: set.name.clone(),
                    gene: matrix.gene_ids()[g].clone(),
                    weight: w,
                });
            }
            let s = w.sqrt();
            values.extend(matrix.row(g).iter().map(|x| s * x));
        }
        Ok(Self { n, p: set.len(), values })
    }

    pub fn n_subjects(&self) -> usize {
        self.n
    }

    pub fn n_genes(&self) -> usize {
        self.p
    }

    pub fn row(&self, g: usize) -> &[f64] {
        &self.values[g * self.n..(g + 1) * self.n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n.max(1))
    }
}

/// How to evaluate `S₃ = Σ_g Σ_h x̄_gh²`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum S3Strategy {
    /// Gene pairs when `p ≤ n`, subject pairs otherwise.
    Auto,
    /// `O(n p²)`
    ByGenePairs,
    /// `O(n² p)`
    BySubjectPairs,
}

/// Sums over √w-scaled rows `Z` that determine `var(C̃)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadraticSums {
    /// `(Σ_g z̄_gg)²`
    pub s1: f64,
    /// `(1/n) Σ_i (Σ_g Z_gi²)²`
    pub s2: f64,
    /// `Σ_g Σ_h z̄_gh²`
    pub s3: f64,
    /// `Σ_g z̄_gg`
    pub trace: f64,
}

pub fn quadratic_sums(rows: &RootWeightedRows, strategy: S3Strategy) -> QuadraticSums {
    let n = rows.n;
    let nf = n as f64;
    let mut trace = 0.0;
    let mut col_sq = vec![0.0; n];
    for row in rows.rows() {
        let mut ss = 0.0;
        for (c, &z) in col_sq.iter_mut().zip(row) {
            let z2 = z * z;
            *c += z2;
            ss += z2;
        }
        trace += ss / nf;
    }
    let s2 = col_sq.iter().map(|c| c * c).sum::<f64>() / nf;
    let by_genes = match strategy {
        S3Strategy::Auto => rows.p <= n,
        S3Strategy::ByGenePairs => true,
        S3Strategy::BySubjectPairs => false,
    };
    let s3 = if by_genes { s3_gene_pairs(rows) } else { s3_subject_pairs(rows) };
    QuadraticSums { s1: trace * trace, s2, s3, trace }
}

fn s3_gene_pairs(rows: &RootWeightedRows) -> f64 {
    let nf = rows.n as f64;
    let mut diag = 0.0;
    let mut off = 0.0;
    for g in 0..rows.p {
        let zg = rows.row(g);
        let d = dot(zg, zg) / nf;
        diag += d * d;
        for h in (g + 1)..rows.p {
            let c = dot(zg, rows.row(h)) / nf;
            off += c * c;
        }
    }
    diag + 2.0 * off
}

fn s3_subject_pairs(rows: &RootWeightedRows) -> f64 {
    let n = rows.n;
    let nf = n as f64;
    // K_ij = Σ_g Z_gi Z_gj, upper triangle only.
    let mut kernel = vec![0.0; n * n];
    for row in rows.rows() {
        for i in 0..n {
            let zi = row[i];
            if zi == 0.0 {
                continue;
            }
            let k = &mut kernel[i * n..(i + 1) * n];
            for j in i..n {
                k[j] += zi * row[j];
            }
        }
    }
    let mut diag = 0.0;
    let mut off = 0.0;
    for i in 0..n {
        diag += kernel[i * n + i] * kernel[i * n + i];
        off += kernel[i * n + i + 1..(i + 1) * n].iter().map(|k| k * k).sum::<f64>();
    }
    (diag + 2.0 * off) / (nf * nf)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadraticMoments {
    /// `E(C̃)`
    pub mean: f64,
    /// `var(C̃)`
    pub variance: f64,
    /// True when a slightly negative variance was rounded up to zero.
    pub clamped: bool,
}

/// `E(C̃) = μ₂/(n − 1) Σ_g w_g x̄_gg`; defined for `n ≥ 2`.
pub fn quadratic_mean(set: &ResolvedGeneSet, matrix: &ExpressionMatrix, phenotype: &Phenotype) -> Result<f64> {
    let n = matrix.n_subjects();
    require_n(n, 2)?;
    let nf = n as f64;
    let weighted: f64 = set
        .row_indices
        .iter()
        .zip(&set.weights)
        .map(|(&g, &w)| {
            let r = matrix.row(g);
            w * dot(r, r) / nf
        })
        .sum();
    Ok(phenotype.mu2() * weighted / (nf - 1.0))
}

/// Permutation mean and variance of `C̃` for a set with nonnegative weights.
pub fn quadratic_moments(
    set: &ResolvedGeneSet,
    matrix: &ExpressionMatrix,
    phenotype: &Phenotype,
    strategy: S3Strategy,
) -> Result<QuadraticMoments> {
    let n = matrix.n_subjects();
    require_n(n, 4)?;
    let rows = RootWeightedRows::new(set, matrix)?;
    let atb = build_atb(n)?;
    quadratic_moments_from_rows(&rows, phenotype, &atb, strategy)
}

/// As [`quadratic_moments`], with prepared rows and a cached `AᵀB`.
pub fn quadratic_moments_from_rows(
    rows: &RootWeightedRows,
    phenotype: &Phenotype,
    atb: &MomentMatrix,
    strategy: S3Strategy,
) -> Result<QuadraticMoments> {
    let n = rows.n;
    require_n(n, 4)?;
    check_atb(atb, n)?;
    let nf = n as f64;
    let mu2 = phenotype.mu2();
    let sums = quadratic_sums(rows, strategy);
    let mean = mu2 * sums.trace / (nf - 1.0);
    let variance = atb.contract(mu2, phenotype.mu4(), (sums.s1 + 2.0 * sums.s3) / (nf * nf), sums.s2 / (nf * nf * nf))
        - mu2 * mu2 / ((nf - 1.0) * (nf - 1.0)) * sums.s1;
    if variance >= 0.0 {
        return Ok(QuadraticMoments { mean, variance, clamped: false });
    }
    if variance >= -VARIANCE_CLAMP_TOL * mean * mean {
        warn!("quadratic variance {variance:e} clamped to zero");
        return Ok(QuadraticMoments { mean, variance: 0.0, clamped: true });
    }
    Err(Error::Numerical(format!("negative quadratic variance {variance:e} (mean {mean:e})")))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearMoments {
    pub mean: f64,
    pub variance: f64,
    /// Smallest attainable `T̃` (A)
    pub range_lo: f64,
    /// Largest attainable `T̃` (B)
    pub range_hi: f64,
    /// `E(T̃⁴)`; absent for `n < 4` or when no `AᵀB` was supplied.
    pub fourth_moment: Option<f64>,
}

pub fn linear_moments(
    pseudo: &PseudoGene,
    phenotype: &Phenotype,
    atb: Option<&MomentMatrix>,
) -> Result<LinearMoments> {
    let n = pseudo.len();
    let variance = linear_variance(pseudo, phenotype)?;
    let (range_lo, range_hi) = linear_range(pseudo, phenotype)?;
    let fourth_moment = match atb {
        Some(m) if n >= 4 => {
            check_atb(m, n)?;
            let nf = n as f64;
            let first = 3.0 * pseudo.xbar_gg * pseudo.xbar_gg / (nf * nf);
            Some(m.contract(phenotype.mu2(), phenotype.mu4(), first, pseudo.xbar_gggg / (nf * nf * nf)))
        }
        _ => None,
    };
    Ok(LinearMoments { mean: 0.0, variance, range_lo, range_hi, fourth_moment })
}

/// `E(T̃⁴)/var² − 3`. Diagnostic only: permutation distributions are
/// usually lighter-tailed than the normal, but the sign is data-dependent.
pub fn excess_kurtosis_diag(lm: &LinearMoments) -> Result<f64> {
    if lm.variance <= 0.0 {
        return Err(Error::Degenerate("kurtosis of a zero-variance statistic".into()));
    }
    let m4 = lm
        .fourth_moment
        .ok_or_else(|| Error::Domain("fourth moment unavailable (needs n >= 4)".into()))?;
    Ok(m4 / (lm.variance * lm.variance) - 3.0)
}
