#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use gsmoment::dataset::{
    center_and_scale, center_phenotype, ExpressionMatrix, GeneSet, GeneSetCollection, Phenotype, RawMatrix, ResolvedGeneSet,
    ScaleMode, Weighting,
};
use gsmoment_cli::args::{AdjustChoice, Alternative, CompareArgs, DistChoice, OracleMode, RunArgs, StatChoice};
use gsmoment_cli::pipeline::Inputs;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

/// Disjoint gene sets over `n` subjects. Each set shares a latent factor
/// (correlation `rho`) and carries a phenotype shift drawn from `shift(set)`.
pub struct Synthetic {
    pub n: usize,
    pub y: Vec<f64>,
    pub genes: Vec<(String, Vec<f64>)>,
    pub sets: Vec<(String, Vec<String>)>,
}

impl Synthetic {
    pub fn generate(
        seed: u64,
        n: usize,
        sizes: &[usize],
        rho: f64,
        mut shift: impl FnMut(usize, &mut ChaCha8Rng) -> f64,
    ) -> Self {
        let mut r = rng(seed);
        let y = gaussian(&mut r, n);
        let mut genes = Vec::new();
        let mut sets = Vec::new();
        for (s, &size) in sizes.iter().enumerate() {
            let delta = shift(s, &mut r);
            let factor = gaussian(&mut r, n);
            let mut members = Vec::with_capacity(size);
            for g in 0..size {
                let id = format!("S{s}G{g}");
                let noise = gaussian(&mut r, n);
                let row = (0..n).map(|i| noise[i] + rho * factor[i] + delta * y[i]).collect();
                genes.push((id.clone(), row));
                members.push(id);
            }
            sets.push((format!("SET{s:03}"), members));
        }
        Self { n, y, genes, sets }
    }

    pub fn write(&self, dir: &Path) -> Files {
        let subjects: Vec<String> = (0..self.n).map(|i| format!("subj{i}")).collect();
        let mut expr = format!("gene\t{}\n", subjects.join("\t"));
        for (id, row) in &self.genes {
            expr.push_str(id);
            for v in row {
                write!(expr, "\t{v:.17e}").unwrap();
            }
            expr.push('\n');
        }
        let mut pheno = String::new();
        for (s, v) in subjects.iter().zip(&self.y) {
            writeln!(pheno, "{s}\t{v:.17e}").unwrap();
        }
        let mut gmt = String::new();
        for (name, members) in &self.sets {
            writeln!(gmt, "{name}\tsynthetic\t{}", members.join("\t")).unwrap();
        }
        let files = Files {
            expression: dir.join("expr.tsv"),
            phenotype: dir.join("pheno.tsv"),
            gene_sets: dir.join("sets.gmt"),
        };
        fs::write(&files.expression, expr).unwrap();
        fs::write(&files.phenotype, pheno).unwrap();
        fs::write(&files.gene_sets, gmt).unwrap();
        files
    }
}

pub struct Files {
    pub expression: PathBuf,
    pub phenotype: PathBuf,
    pub gene_sets: PathBuf,
}

impl Files {
    pub fn run_args(&self, output: Option<PathBuf>) -> RunArgs {
        RunArgs {
            expression: self.expression.clone(),
            phenotype: self.phenotype.clone(),
            gene_sets: self.gene_sets.clone(),
            stat: StatChoice::Both,
            dist: DistChoice::Auto,
            weights: "equal".into(),
            alternative: Alternative::TwoSided,
            standardize: false,
            quantile_transform: false,
            adjust: AdjustChoice::None,
            output,
            threads: 1,
        }
    }

    pub fn compare_args(&self, output: Option<PathBuf>, mode: OracleMode, m: u64, seed: u64) -> CompareArgs {
        CompareArgs { run: self.run_args(output), mode, permutations: m, seed }
    }
}

impl Synthetic {
    /// The same data as `write`, loaded without going through files.
    pub fn inputs(&self) -> Inputs {
        let raw = RawMatrix::new(
            self.genes.iter().map(|(id, _)| id.clone()).collect(),
            (0..self.n).map(|i| format!("subj{i}")).collect(),
            self.genes.iter().flat_map(|(_, row)| row.iter().copied()).collect(),
        )
        .unwrap();
        let sets = self
            .sets
            .iter()
            .map(|(name, genes)| GeneSet { name: name.clone(), description: String::new(), genes: genes.clone() })
            .collect();
        Inputs {
            matrix: center_and_scale(&raw, ScaleMode::CenterOnly).unwrap(),
            phenotype: center_phenotype(&self.y).unwrap(),
            sets: GeneSetCollection::new(sets).unwrap(),
            weighting: Weighting::Equal,
        }
    }
}

/// One random gene set over centred Gaussian data, all genes in the set.
pub struct Instance {
    pub matrix: ExpressionMatrix,
    pub phenotype: Phenotype,
    pub set: ResolvedGeneSet,
}

impl Instance {
    pub fn random(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Self {
        let raw = RawMatrix::new(
            (0..p).map(|g| format!("g{g}")).collect(),
            (0..n).map(|i| format!("s{i}")).collect(),
            gaussian(rng, n * p),
        )
        .unwrap();
        let matrix = center_and_scale(&raw, ScaleMode::CenterOnly).unwrap();
        let phenotype = center_phenotype(&gaussian(rng, n)).unwrap();
        let weights = (0..p).map(|_| rng.random_range(0.2..2.0)).collect();
        let set = ResolvedGeneSet { name: "R".into(), row_indices: (0..p).collect(), weights, missing_genes: vec![] };
        Self { matrix, phenotype, set }
    }

    pub fn rows(&self) -> Vec<&[f64]> {
        self.set.row_indices.iter().map(|&g| self.matrix.row(g)).collect()
    }

    pub fn beta(&self, y: &[f64]) -> Vec<f64> {
        let n = y.len() as f64;
        self.rows().iter().map(|r| dot(r, y) / n).collect()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
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

/// `|a − b| ≤ rel·max(|a|,|b|)` or `≤ abs` near zero.
pub fn agrees(a: f64, b: f64, rel: f64, abs: f64) -> bool {
    let d = (a - b).abs();
    d <= abs || d <= rel * a.abs().max(b.abs())
}
