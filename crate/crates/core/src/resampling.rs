//! Resampling oracles: exhaustive and Monte-Carlo permutation, rotation
//! sampling, and Haar-uniform orthogonal matrices.
//!
//! Monte-Carlo draws are split into fixed blocks of [`BLOCK`] draws. Block
//! `b` of a run seeded with `s` uses the ChaCha8 stream `b` of key `s`, so
//! results depend only on the seed and never on the worker count. Per-set
//! seeds are derived with [`substream_seed`].

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::dataset::{ExpressionMatrix, Phenotype, ResolvedGeneSet};
use crate::error::{Error, Result};
use crate::refdist::Method;

/// Largest `n` accepted by exhaustive p-value enumeration.
pub const MAX_EXHAUSTIVE_N: usize = 10;
/// Largest `n` accepted by [`enumerate_moments`].
pub const MAX_ENUMERATE_N: usize = 8;
/// Draws per RNG block.
pub const BLOCK: u64 = 2048;
/// Resampled statistics within this fraction of their magnitude bound of
/// the observed value count as ties.
pub const TIE_TOL: f64 = 1e-11;

const CONTRAST_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PermutationPlan {
    Exhaustive,
    MonteCarlo { m: u64, seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Contrast {
    Helmert,
    /// `n × (n − 1)` with orthonormal columns orthogonal to the ones vector.
    Custom(DMatrix<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RotationPlan {
    pub m: u64,
    pub seed: u64,
    pub contrast: Contrast,
}

/// Mixes a run seed with a stream index (SplitMix64 finalizer).
pub fn substream_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn block_rng(seed: u64, block: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(block);
    rng
}

fn shuffle<T, R: Rng + ?Sized>(v: &mut [T], rng: &mut R) {
    for i in (1..v.len()).rev() {
        let j = rng.random_range(0..=i);
        v.swap(i, j);
    }
}

/// Uniform random permutation of `0..n` by Fisher–Yates.
pub fn sample_permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    shuffle(&mut p, rng);
    p
}

/// Visit every arrangement of `y[start..]` (Heap's algorithm), prefix fixed.
fn heap_visit(y: &mut [f64], start: usize, visit: &mut dyn FnMut(&[f64])) {
    let k = y.len() - start;
    let mut c = vec![0usize; k];
    visit(y);
    let mut i = 1;
    while i < k {
        if c[i] < i {
            if i % 2 == 0 {
                y.swap(start, start + i);
            } else {
                y.swap(start + c[i], start + i);
            }
            visit(y);
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

fn factorial(n: usize) -> u64 {
    (1..=n as u64).product()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Debug)]
enum QuadraticForm {
    /// Row-major `p × n` rows and their weights.
    Genes { rows: Vec<f64>, weights: Vec<f64> },
    /// `K = Σ_g w_g X_g X_gᵀ`, row-major `n × n`.
    Kernel(Vec<f64>),
}

/// Both set statistics as functions of a resampled phenotype.
#[derive(Clone, Debug)]
pub struct SetStatistic {
    n: usize,
    pseudo: Vec<f64>,
    quadratic: Option<QuadraticForm>,
    t_hat: f64,
    c_hat: f64,
    t_tol: f64,
    c_tol: f64,
}

impl SetStatistic {
    pub fn new(set: &ResolvedGeneSet, matrix: &ExpressionMatrix, phenotype: &Phenotype) -> Result<Self> {
        let rows: Vec<&[f64]> = set.row_indices.iter().map(|&g| matrix.row(g)).collect();
        Self::from_rows(&rows, &set.weights, phenotype)
    }

    pub fn from_rows(rows: &[&[f64]], weights: &[f64], phenotype: &Phenotype) -> Result<Self> {
        let n = phenotype.len();
        if rows.len() != weights.len() {
            return Err(Error::LengthMismatch { expected: rows.len(), got: weights.len() });
        }
        if let Some(r) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::LengthMismatch { expected: n, got: r.len() });
        }
        let mut pseudo = vec![0.0; n];
        for (r, &w) in rows.iter().zip(weights) {
            pseudo.iter_mut().zip(*r).for_each(|(v, x)| *v += w * x);
        }
        let quadratic = if rows.len() > n {
            let mut k = vec![0.0; n * n];
            for (r, &w) in rows.iter().zip(weights) {
                for i in 0..n {
                    let wi = w * r[i];
                    k[i * n..(i + 1) * n].iter_mut().zip(*r).for_each(|(kij, xj)| *kij += wi * xj);
                }
            }
            QuadraticForm::Kernel(k)
        } else {
            QuadraticForm::Genes {
                rows: rows.iter().flat_map(|r| r.iter().copied()).collect(),
                weights: weights.to_vec(),
            }
        };
        let y = phenotype.values();
        let y_norm2 = dot(y, y);
        let nf = n as f64;
        let t_bound = (dot(&pseudo, &pseudo) * y_norm2).sqrt() / nf;
        let c_bound: f64 = rows.iter().zip(weights).map(|(r, w)| w.abs() * dot(r, r)).sum::<f64>() * y_norm2 / (nf * nf);
        let mut s = Self {
            n,
            pseudo,
            quadratic: Some(quadratic),
            t_hat: 0.0,
            c_hat: 0.0,
            t_tol: TIE_TOL * t_bound,
            c_tol: TIE_TOL * c_bound,
        };
        s.t_hat = s.linear(y);
        s.c_hat = s.quadratic(y).expect("quadratic form present");
        Ok(s)
    }

    /// Drop the quadratic statistic so resampling evaluates `T̃` only.
    pub fn without_quadratic(mut self) -> Self {
        self.quadratic = None;
        self
    }

    pub fn n_subjects(&self) -> usize {
        self.n
    }

    pub fn t_hat(&self) -> f64 {
        self.t_hat
    }

    pub fn c_hat(&self) -> f64 {
        self.c_hat
    }

    /// `T̃ = (1/n) Σ_i X_Gi Ỹ_i`
    pub fn linear(&self, y: &[f64]) -> f64 {
        dot(&self.pseudo, y) / self.n as f64
    }

    /// `C̃ = Σ_g w_g β̃_g²`, unless dropped by [`Self::without_quadratic`].
    pub fn quadratic(&self, y: &[f64]) -> Option<f64> {
        let n = self.n;
        let nf = n as f64;
        Some(match self.quadratic.as_ref()? {
            QuadraticForm::Genes { rows, weights } => rows
                .chunks_exact(n.max(1))
                .zip(weights)
                .map(|(r, w)| {
                    let b = dot(r, y) / nf;
                    w * b * b
                })
                .sum(),
            QuadraticForm::Kernel(k) => {
                let s: f64 = k.chunks_exact(n).zip(y).map(|(row, yi)| yi * dot(row, y)).sum();
                s / (nf * nf)
            }
        })
    }

    fn tally_one(&self, y: &[f64], t: &mut Tally) {
        let tv = self.linear(y);
        t.count += 1;
        t.le += (tv <= self.t_hat + self.t_tol) as u64;
        t.ge += (tv >= self.t_hat - self.t_tol) as u64;
        t.abs_ge += (tv.abs() >= self.t_hat.abs() - self.t_tol) as u64;
        let t2 = tv * tv;
        t.sum_t += tv;
        t.sum_t2 += t2;
        t.sum_t4 += t2 * t2;
        if let Some(cv) = self.quadratic(y) {
            t.c_ge += (cv >= self.c_hat - self.c_tol) as u64;
            t.sum_c += cv;
            t.sum_c2 += cv * cv;
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct Tally {
    count: u64,
    le: u64,
    ge: u64,
    abs_ge: u64,
    c_ge: u64,
    sum_t: f64,
    sum_t2: f64,
    sum_t4: f64,
    sum_c: f64,
    sum_c2: f64,
}

impl Tally {
    fn merge(mut self, o: &Tally) -> Tally {
        self.count += o.count;
        self.le += o.le;
        self.ge += o.ge;
        self.abs_ge += o.abs_ge;
        self.c_ge += o.c_ge;
        self.sum_t += o.sum_t;
        self.sum_t2 += o.sum_t2;
        self.sum_t4 += o.sum_t4;
        self.sum_c += o.sum_c;
        self.sum_c2 += o.sum_c2;
        self
    }
}

/// Sample moments of the resampled linear statistic.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearSampleMoments {
    pub mean: f64,
    pub variance: f64,
    pub fourth_moment: f64,
}

/// Sample moments of the resampled quadratic statistic.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadraticSampleMoments {
    pub mean: f64,
    pub variance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResamplingResult {
    pub p_left: f64,
    pub p_right: f64,
    pub p_central: f64,
    /// Absent when the quadratic statistic was dropped.
    pub p_quadratic: Option<f64>,
    /// `√(p(1 − p)/M)`; zero for exhaustive enumeration.
    pub se_left: f64,
    pub se_right: f64,
    pub se_central: f64,
    pub se_quadratic: Option<f64>,
    /// `M` in `(count + 1)/(M + 1)`; `n! − 1` for exhaustive runs.
    pub m_effective: u64,
    pub linear_moments: LinearSampleMoments,
    pub quadratic_moments: Option<QuadraticSampleMoments>,
    pub method: Method,
}

fn finish(t: &Tally, exhaustive: bool, quadratic: bool, method: Method) -> ResamplingResult {
    let cnt = t.count as f64;
    let (m_effective, p) = if exhaustive {
        (t.count - 1, Box::new(move |k: u64| k as f64 / cnt) as Box<dyn Fn(u64) -> f64>)
    } else {
        (t.count, Box::new(move |k: u64| (k + 1) as f64 / (cnt + 1.0)) as Box<dyn Fn(u64) -> f64>)
    };
    let se = |p: f64| if exhaustive { 0.0 } else { (p * (1.0 - p) / cnt).sqrt() };
    let (p_left, p_right, p_central, p_quadratic) = (p(t.le), p(t.ge), p(t.abs_ge), p(t.c_ge));
    let t_mean = t.sum_t / cnt;
    let c_mean = t.sum_c / cnt;
    ResamplingResult {
        p_left,
        p_right,
        p_central,
        p_quadratic: quadratic.then_some(p_quadratic),
        se_left: se(p_left),
        se_right: se(p_right),
        se_central: se(p_central),
        se_quadratic: quadratic.then(|| se(p_quadratic)),
        m_effective,
        linear_moments: LinearSampleMoments {
            mean: t_mean,
            variance: t.sum_t2 / cnt - t_mean * t_mean,
            fourth_moment: t.sum_t4 / cnt,
        },
        quadratic_moments: quadratic
            .then(|| QuadraticSampleMoments { mean: c_mean, variance: t.sum_c2 / cnt - c_mean * c_mean }),
        method,
    }
}

fn check_phenotype(stat: &SetStatistic, phenotype: &Phenotype) -> Result<()> {
    if phenotype.len() != stat.n {
        return Err(Error::LengthMismatch { expected: stat.n, got: phenotype.len() });
    }
    Ok(())
}

fn run_blocks(m: u64, seed: u64, draw: impl Fn(&mut ChaCha8Rng, u64) -> Tally + Sync) -> Tally {
    let blocks = m.div_ceil(BLOCK);
    let parts: Vec<Tally> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = block_rng(seed, b);
            draw(&mut rng, BLOCK.min(m - b * BLOCK))
        })
        .collect();
    parts.iter().fold(Tally::default(), |a, t| a.merge(t))
}

/// Permutation p-values `p_L, p_R, p_C, p_Q` for one set.
pub fn permutation_pvalues(
    stat: &SetStatistic,
    phenotype: &Phenotype,
    plan: &PermutationPlan,
) -> Result<ResamplingResult> {
    check_phenotype(stat, phenotype)?;
    let y = phenotype.values();
    let n = stat.n;
    match *plan {
        PermutationPlan::Exhaustive => {
            if n > MAX_EXHAUSTIVE_N {
                return Err(Error::Domain(format!("exhaustive enumeration needs n <= {MAX_EXHAUSTIVE_N}, got {n}")));
            }
            let parts: Vec<Tally> = (0..n)
                .into_par_iter()
                .map(|head| {
                    let mut yy = y.to_vec();
                    yy.swap(0, head);
                    let mut t = Tally::default();
                    heap_visit(&mut yy, 1, &mut |p| stat.tally_one(p, &mut t));
                    t
                })
                .collect();
            let t = parts.iter().fold(Tally::default(), |a, t| a.merge(t));
            debug_assert_eq!(t.count, factorial(n));
            Ok(finish(&t, true, stat.quadratic.is_some(), Method::Permutation))
        }
        PermutationPlan::MonteCarlo { m, seed } => {
            if m < 1 {
                return Err(Error::Domain("permutation count must be at least 1".into()));
            }
            let t = run_blocks(m, seed, |rng, k| {
                let mut yy = y.to_vec();
                let mut t = Tally::default();
                for _ in 0..k {
                    shuffle(&mut yy, rng);
                    stat.tally_one(&yy, &mut t);
                }
                t
            });
            Ok(finish(&t, false, stat.quadratic.is_some(), Method::Permutation))
        }
    }
}

/// Exact permutation averages over all `n!` orderings.
#[derive(Clone, Debug, PartialEq)]
pub struct EnumeratedMoments {
    pub n_permutations: u64,
    pub p: usize,
    /// `E(β̃_g)`
    pub beta_mean: Vec<f64>,
    /// `E(β̃_g β̃_h)`, row-major `p × p`
    pub cross: Vec<f64>,
    /// `E(β̃_g β̃_h β̃_r β̃_s)`, index `((g p + h) p + r) p + s`
    pub fourth: Vec<f64>,
    /// `E(β̃_g² β̃_h²)`, row-major `p × p`
    pub square_cross: Vec<f64>,
    pub t_mean: f64,
    pub t2: f64,
    pub t4: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub c_mean: f64,
    pub c2: f64,
}

impl EnumeratedMoments {
    pub fn cross(&self, g: usize, h: usize) -> f64 {
        self.cross[g * self.p + h]
    }

    pub fn fourth(&self, g: usize, h: usize, r: usize, s: usize) -> f64 {
        self.fourth[((g * self.p + h) * self.p + r) * self.p + s]
    }

    /// `cov(β̃_g², β̃_h²)`
    pub fn square_cov(&self, g: usize, h: usize) -> f64 {
        self.square_cross[g * self.p + h] - self.cross(g, g) * self.cross(h, h)
    }

    pub fn t_variance(&self) -> f64 {
        self.t2 - self.t_mean * self.t_mean
    }

    pub fn c_variance(&self) -> f64 {
        self.c2 - self.c_mean * self.c_mean
    }
}

/// Average per-gene products and set statistics over every permutation of the phenotype.
pub fn enumerate_moments(rows: &[&[f64]], weights: &[f64], phenotype: &Phenotype) -> Result<EnumeratedMoments> {
    let n = phenotype.len();
    if n > MAX_ENUMERATE_N {
        return Err(Error::Domain(format!("moment enumeration needs n <= {MAX_ENUMERATE_N}, got {n}")));
    }
    let p = rows.len();
    if weights.len() != p {
        return Err(Error::LengthMismatch { expected: p, got: weights.len() });
    }
    if let Some(r) = rows.iter().find(|r| r.len() != n) {
        return Err(Error::LengthMismatch { expected: n, got: r.len() });
    }
    let nf = n as f64;
    let mut out = EnumeratedMoments {
        n_permutations: 0,
        p,
        beta_mean: vec![0.0; p],
        cross: vec![0.0; p * p],
        fourth: vec![0.0; p * p * p * p],
        square_cross: vec![0.0; p * p],
        t_mean: 0.0,
        t2: 0.0,
        t4: 0.0,
        t_min: f64::INFINITY,
        t_max: f64::NEG_INFINITY,
        c_mean: 0.0,
        c2: 0.0,
    };
    let mut beta = vec![0.0; p];
    let mut y = phenotype.values().to_vec();
    heap_visit(&mut y, 0, &mut |yt| {
        for (b, r) in beta.iter_mut().zip(rows) {
            *b = dot(r, yt) / nf;
        }
        out.n_permutations += 1;
        for g in 0..p {
            out.beta_mean[g] += beta[g];
            for h in 0..p {
                let gh = beta[g] * beta[h];
                out.cross[g * p + h] += gh;
                out.square_cross[g * p + h] += gh * gh;
                for r in 0..p {
                    let ghr = gh * beta[r];
                    for s in 0..p {
                        out.fourth[((g * p + h) * p + r) * p + s] += ghr * beta[s];
                    }
                }
            }
        }
        let t: f64 = beta.iter().zip(weights).map(|(b, w)| w * b).sum();
        let c: f64 = beta.iter().zip(weights).map(|(b, w)| w * b * b).sum();
        out.t_mean += t;
        out.t2 += t * t;
        out.t4 += t * t * t * t;
        out.t_min = out.t_min.min(t);
        out.t_max = out.t_max.max(t);
        out.c_mean += c;
        out.c2 += c * c;
    });
    let k = out.n_permutations as f64;
    for v in out
        .beta_mean
        .iter_mut()
        .chain(out.cross.iter_mut())
        .chain(out.fourth.iter_mut())
        .chain(out.square_cross.iter_mut())
    {
        *v /= k;
    }
    for v in [&mut out.t_mean, &mut out.t2, &mut out.t4, &mut out.c_mean, &mut out.c2] {
        *v /= k;
    }
    Ok(out)
}

/// Normalized Helmert contrast: column `k` holds `1/√(k(k+1))` in its first
/// `k` rows and `−k/√(k(k+1))` in row `k + 1` (1-based).
pub fn helmert_contrast(n: usize) -> Result<DMatrix<f64>> {
    if n < 2 {
        return Err(Error::TooFewSubjects { n, required: 2 });
    }
    Ok(DMatrix::from_fn(n, n - 1, |i, j| {
        let k = (j + 1) as f64;
        let norm = (k * (k + 1.0)).sqrt();
        match i.cmp(&(j + 1)) {
            std::cmp::Ordering::Less => 1.0 / norm,
            std::cmp::Ordering::Equal => -k / norm,
            std::cmp::Ordering::Greater => 0.0,
        }
    }))
}

/// Checks `WᵀW = I` and `Wᵀ1 = 0` within 1e-10.
pub fn validate_contrast(w: &DMatrix<f64>, n: usize) -> Result<()> {
    if w.nrows() != n || w.ncols() + 1 != n {
        return Err(Error::Domain(format!(
            "contrast must be {n} x {}, got {} x {}",
            n.saturating_sub(1),
            w.nrows(),
            w.ncols()
        )));
    }
    let gram = w.transpose() * w;
    let ortho = (gram - DMatrix::<f64>::identity(n - 1, n - 1)).abs().max();
    let sums = w.row_sum().abs().max();
    if ortho > CONTRAST_TOL || sums > CONTRAST_TOL {
        return Err(Error::Domain(format!(
            "contrast is not orthonormal and orthogonal to ones (deviations {ortho:e}, {sums:e})"
        )));
    }
    Ok(())
}

fn contrast_matrix(contrast: &Contrast, n: usize) -> Result<DMatrix<f64>> {
    match contrast {
        Contrast::Helmert => helmert_contrast(n),
        Contrast::Custom(w) => {
            validate_contrast(w, n)?;
            Ok(w.clone())
        }
    }
}

/// Haar-uniform `n × n` orthogonal matrix: QR of a Gaussian matrix with
/// columns sign-corrected by the diagonal of `R`.
pub fn sample_rotation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let z = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    let qr = z.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Monte-Carlo rotation p-values, `Ỹ = W Q* Wᵀ Y` with Haar `Q*`.
pub fn rotation_pvalues(stat: &SetStatistic, phenotype: &Phenotype, plan: &RotationPlan) -> Result<ResamplingResult> {
    check_phenotype(stat, phenotype)?;
    if plan.m < 1 {
        return Err(Error::Domain("rotation count must be at least 1".into()));
    }
    let n = stat.n;
    let w = contrast_matrix(&plan.contrast, n)?;
    let v = w.transpose() * DVector::from_column_slice(phenotype.values());
    let t = run_blocks(plan.m, plan.seed, |rng, k| {
        let mut t = Tally::default();
        for _ in 0..k {
            let q = sample_rotation(n - 1, rng);
            let yt = &w * (q * &v);
            stat.tally_one(yt.as_slice(), &mut t);
        }
        t
    });
    Ok(finish(&t, false, stat.quadratic.is_some(), Method::Rotation))
}

/// Rotate a phenotype by a given `(n − 1) × (n − 1)` orthogonal `Q*`.
pub fn rotate_phenotype(y: &[f64], w: &DMatrix<f64>, q_star: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = y.len();
    validate_contrast(w, n)?;
    if q_star.nrows() + 1 != n || q_star.ncols() + 1 != n {
        return Err(Error::LengthMismatch { expected: n - 1, got: q_star.nrows() });
    }
    let yt = w * (q_star * (w.transpose() * DVector::from_column_slice(y)));
    Ok(yt.as_slice().to_vec())
}

/// `E(β̃ β̃ᵀ)` under rotation, evaluated for a specific contrast as
/// `|WᵀY|²/(n − 1) · (XW)(XW)ᵀ / n²`.
pub fn rotation_beta_covariance(rows: &[&[f64]], contrast: &Contrast, phenotype: &Phenotype) -> Result<DMatrix<f64>> {
    let n = phenotype.len();
    let w = contrast_matrix(contrast, n)?;
    if let Some(r) = rows.iter().find(|r| r.len() != n) {
        return Err(Error::LengthMismatch { expected: n, got: r.len() });
    }
    let x = DMatrix::from_fn(rows.len(), n, |g, i| rows[g][i]);
    let v = w.transpose() * DVector::from_column_slice(phenotype.values());
    let xw = x * &w;
    let nf = n as f64;
    Ok(xw.clone() * xw.transpose() * (v.norm_squared() / ((nf - 1.0) * nf * nf)))
}
