#![allow(dead_code)]

use gsmoment::dataset::{center_and_scale, center_phenotype, ExpressionMatrix, Phenotype, RawMatrix, ResolvedGeneSet, ScaleMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Every ordering of `y`, by recursive swapping.
pub fn all_permutations(y: &[f64]) -> Vec<Vec<f64>> {
    fn rec(k: usize, v: &mut Vec<f64>, out: &mut Vec<Vec<f64>>) {
        if k == v.len() {
            out.push(v.clone());
            return;
        }
        for i in k..v.len() {
            v.swap(k, i);
            rec(k + 1, v, out);
            v.swap(k, i);
        }
    }
    let mut out = Vec::new();
    rec(0, &mut y.to_vec(), &mut out);
    out
}

pub fn mean_over(perms: &[Vec<f64>], f: impl Fn(&[f64]) -> f64) -> f64 {
    perms.iter().map(|p| f(p)).sum::<f64>() / perms.len() as f64
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn gaussian(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

pub struct Instance {
    pub matrix: ExpressionMatrix,
    pub phenotype: Phenotype,
    pub set: ResolvedGeneSet,
}

impl Instance {
    pub fn random(rng: &mut ChaCha8Rng, n: usize, p: usize, positive_weights: bool) -> Self {
        let raw = RawMatrix::new(
            (0..p).map(|g| format!("g{g}")).collect(),
            (0..n).map(|i| format!("s{i}")).collect(),
            gaussian(rng, n * p),
        )
        .unwrap();
        let matrix = center_and_scale(&raw, ScaleMode::CenterOnly).unwrap();
        let phenotype = center_phenotype(&gaussian(rng, n)).unwrap();
        let weights = (0..p)
            .map(|_| if positive_weights { rng.random_range(0.2..2.0) } else { rng.random_range(-1.5..2.0) })
            .collect();
        let set = ResolvedGeneSet { name: "R".into(), row_indices: (0..p).collect(), weights, missing_genes: vec![] };
        Self { matrix, phenotype, set }
    }

    pub fn rows(&self) -> Vec<&[f64]> {
        self.set.row_indices.iter().map(|&g| self.matrix.row(g)).collect()
    }

    pub fn n(&self) -> usize {
        self.phenotype.len()
    }

    pub fn beta(&self, y: &[f64]) -> Vec<f64> {
        let n = self.n() as f64;
        self.rows().iter().map(|r| dot(r, y) / n).collect()
    }

    pub fn t(&self, y: &[f64]) -> f64 {
        dot(&self.beta(y), &self.set.weights)
    }

    pub fn c(&self, y: &[f64]) -> f64 {
        self.beta(y).iter().zip(&self.set.weights).map(|(b, w)| w * b * b).sum()
    }
}

/// `|a − b| ≤ rel·max(|a|,|b|)` or `≤ abs` near zero.
pub fn agrees(a: f64, b: f64, rel: f64, abs: f64) -> bool {
    let d = (a - b).abs();
    d <= abs || d <= rel * a.abs().max(b.abs())
}
