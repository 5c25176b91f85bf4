//! Expression matrix, phenotype and gene-set data model.
//!
//! Matrix transforms take no phenotype input: preprocessing of the genes
//! never looks at the outcome. The only place the phenotype enters here is
//! the JG weighting in [`resolve_gene_set`].

use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};
use crate::special::normal_quantile;

/// Unprocessed genes × subjects matrix, as read from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct RawMatrix {
    pub gene_ids: Vec<String>,
    pub subject_ids: Vec<String>,
    /// Row-major, `gene_ids.len() × subject_ids.len()`.
    pub values: Vec<f64>,
}

impl RawMatrix {
    pub fn new(gene_ids: Vec<String>, subject_ids: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let expected = gene_ids.len() * subject_ids.len();
        if values.len() != expected {
            return Err(Error::LengthMismatch { expected, got: values.len() });
        }
        check_unique(&gene_ids)?;
        check_unique(&subject_ids)?;
        Ok(Self { gene_ids, subject_ids, values })
    }

    pub fn n_subjects(&self) -> usize {
        self.subject_ids.len()
    }
}

fn check_unique(ids: &[String]) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateId(id.clone()));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScaleMode {
    CenterOnly,
    /// Center, then scale each row to mean square `(1/n) Σ x² = 1`.
    CenterUnitVariance,
}

/// Record of the transforms applied to an [`ExpressionMatrix`].
#[derive(Clone, Debug, PartialEq)]
pub struct Preprocessing {
    pub centered: bool,
    pub scaling: ScaleMode,
    pub quantile: bool,
    /// Rows that were exactly constant on input; stored as zeros.
    pub constant_rows: Vec<usize>,
}

/// Centered (optionally scaled or quantile-transformed) genes × subjects matrix.
#[derive(Clone, Debug)]
pub struct ExpressionMatrix {
    gene_ids: Vec<String>,
    subject_ids: Vec<String>,
    values: Vec<f64>,
    n: usize,
    preprocessing: Preprocessing,
    index: HashMap<String, usize>,
}

impl ExpressionMatrix {
    pub fn n_subjects(&self) -> usize {
        self.n
    }

    pub fn n_genes(&self) -> usize {
        self.gene_ids.len()
    }

    pub fn gene_ids(&self) -> &[String] {
        &self.gene_ids
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    pub fn preprocessing(&self) -> &Preprocessing {
        &self.preprocessing
    }

    pub fn row(&self, g: usize) -> &[f64] {
        &self.values[g * self.n..(g + 1) * self.n]
    }

    pub fn row_of(&self, gene_id: &str) -> Option<usize> {
        self.index.get(gene_id).copied()
    }

    pub fn is_constant_row(&self, g: usize) -> bool {
        self.preprocessing.constant_rows.binary_search(&g).is_ok()
    }

    /// Copy back into an unprocessed container, e.g. to re-run preprocessing.
    pub fn to_raw(&self) -> RawMatrix {
        RawMatrix {
            gene_ids: self.gene_ids.clone(),
            subject_ids: self.subject_ids.clone(),
            values: self.values.clone(),
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Subtract the mean in two passes so the residual sum is at rounding level.
fn center_in_place(xs: &mut [f64]) {
    let m = mean(xs);
    xs.iter_mut().for_each(|x| *x -= m);
    let r = mean(xs);
    xs.iter_mut().for_each(|x| *x -= r);
}

fn is_constant(xs: &[f64]) -> bool {
    xs.iter().all(|&x| x == xs[0])
}

/// Center every gene row, optionally scaling it to unit mean square.
///
/// Rows that are exactly constant become zero rows and are listed in
/// [`Preprocessing::constant_rows`].
pub fn center_and_scale(raw: &RawMatrix, mode: ScaleMode) -> Result<ExpressionMatrix> {
    let n = raw.n_subjects();
    if n < 2 {
        return Err(Error::TooFewSubjects { n, required: 2 });
    }
    let p = raw.gene_ids.len();
    if raw.values.len() != n * p {
        return Err(Error::LengthMismatch { expected: n * p, got: raw.values.len() });
    }
    if let Some(pos) = raw.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            gene: raw.gene_ids[pos / n].clone(),
            subject: raw.subject_ids[pos % n].clone(),
        });
    }
    let mut values = raw.values.clone();
    let mut constant_rows = Vec::new();
    for (g, row) in values.chunks_exact_mut(n).enumerate() {
        if is_constant(row) {
            row.iter_mut().for_each(|x| *x = 0.0);
            constant_rows.push(g);
            continue;
        }
        center_in_place(row);
        if mode == ScaleMode::CenterUnitVariance {
            let ms = row.iter().map(|x| x * x).sum::<f64>() / n as f64;
            let s = ms.sqrt();
            row.iter_mut().for_each(|x| *x /= s);
        }
    }
    build(raw.gene_ids.clone(), raw.subject_ids.clone(), values, n, Preprocessing {
        centered: true,
        scaling: mode,
        quantile: false,
        constant_rows,
    })
}

fn build(
    gene_ids: Vec<String>,
    subject_ids: Vec<String>,
    values: Vec<f64>,
    n: usize,
    preprocessing: Preprocessing,
) -> Result<ExpressionMatrix> {
    check_unique(&gene_ids)?;
    check_unique(&subject_ids)?;
    let index = gene_ids.iter().enumerate().map(|(i, g)| (g.clone(), i)).collect();
    Ok(ExpressionMatrix { gene_ids, subject_ids, values, n, preprocessing, index })
}

/// Replace the j-th smallest entry of each row by `Φ⁻¹((j − ½)/n)`.
///
/// Ties keep their input order. Constant rows stay zero.
pub fn quantile_transform(matrix: &ExpressionMatrix) -> Result<ExpressionMatrix> {
    let n = matrix.n;
    if n < 2 {
        return Err(Error::TooFewSubjects { n, required: 2 });
    }
    let scores = (1..=n)
        .map(|j| normal_quantile((j as f64 - 0.5) / n as f64))
        .collect::<Result<Vec<_>>>()?;
    let mut values = vec![0.0; matrix.values.len()];
    let mut order: Vec<usize> = (0..n).collect();
    for g in 0..matrix.n_genes() {
        if matrix.is_constant_row(g) {
            continue;
        }
        let row = matrix.row(g);
        order.iter_mut().enumerate().for_each(|(i, o)| *o = i);
        order.sort_by(|&i, &j| row[i].total_cmp(&row[j]));
        let out = &mut values[g * n..(g + 1) * n];
        for (rank, &i) in order.iter().enumerate() {
            out[i] = scores[rank];
        }
        center_in_place(out);
    }
    build(matrix.gene_ids.clone(), matrix.subject_ids.clone(), values, n, Preprocessing {
        quantile: true,
        ..matrix.preprocessing.clone()
    })
}

/// Centered phenotype with its second and fourth moments.
#[derive(Clone, Debug)]
pub struct Phenotype {
    values: Vec<f64>,
    sorted: Vec<f64>,
    mu2: f64,
    mu4: f64,
}

impl Phenotype {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Centered values in ascending order.
    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `(1/n) Σ Y²`
    pub fn mu2(&self) -> f64 {
        self.mu2
    }

    /// `(1/n) Σ Y⁴`
    pub fn mu4(&self) -> f64 {
        self.mu4
    }

    /// Standard deviation with divisor n.
    pub fn sd(&self) -> f64 {
        self.mu2.sqrt()
    }
}

/// Center a phenotype vector and record `μ₂`, `μ₄`.
pub fn center_phenotype(values: &[f64]) -> Result<Phenotype> {
    let n = values.len();
    if n < 2 {
        return Err(Error::TooFewSubjects { n, required: 2 });
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { gene: "phenotype".into(), subject: i.to_string() });
    }
    if is_constant(values) {
        return Err(Error::ConstantPhenotype);
    }
    let mut v = values.to_vec();
    center_in_place(&mut v);
    let mu2 = v.iter().map(|y| y * y).sum::<f64>() / n as f64;
    let mu4 = v.iter().map(|y| (y * y) * (y * y)).sum::<f64>() / n as f64;
    let mut sorted = v.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(Phenotype { values: v, sorted, mu2, mu4 })
}

/// One named gene set as listed in a collection.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneSet {
    pub name: String,
    pub description: String,
    pub genes: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GeneSetCollection {
    sets: Vec<GeneSet>,
}

impl GeneSetCollection {
    /// Names must be unique and every set nonempty.
    pub fn new(sets: Vec<GeneSet>) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &sets {
            if !seen.insert(s.name.as_str()) {
                return Err(Error::DuplicateId(s.name.clone()));
            }
            if s.genes.is_empty() {
                return Err(Error::EmptyGeneSet(s.name.clone()));
            }
        }
        Ok(Self { sets })
    }

    pub fn sets(&self) -> &[GeneSet] {
        &self.sets
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Weighting {
    Equal,
    /// `w_g = √(n−2) / (sd(X_g) sd(Y))`, standard deviations with divisor n.
    Jg,
    /// Per-gene weights keyed by gene id.
    Explicit(HashMap<String, f64>),
}

/// A gene set mapped onto matrix rows.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedGeneSet {
    pub name: String,
    pub row_indices: Vec<usize>,
    pub weights: Vec<f64>,
    pub missing_genes: Vec<String>,
}

impl ResolvedGeneSet {
    pub fn len(&self) -> usize {
        self.row_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_indices.is_empty()
    }

    pub fn has_nonnegative_weights(&self) -> bool {
        self.weights.iter().all(|&w| w >= 0.0)
    }
}

/// Map a set's members onto matrix rows and attach weights.
///
/// Members absent from the matrix are recorded in `missing_genes`;
/// repeated members are kept once.
pub fn resolve_gene_set(
    set: &GeneSet,
    matrix: &ExpressionMatrix,
    weighting: &Weighting,
    phenotype: &Phenotype,
) -> Result<ResolvedGeneSet> {
    let n = matrix.n_subjects();
    if phenotype.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: phenotype.len() });
    }
    let mut row_indices = Vec::new();
    let mut weights = Vec::new();
    let mut missing_genes = Vec::new();
    let mut seen = HashSet::new();
    for gene in &set.genes {
        if !seen.insert(gene.as_str()) {
            continue;
        }
        let Some(g) = matrix.row_of(gene) else {
            missing_genes.push(gene.clone());
            continue;
        };
        let w = match weighting {
            Weighting::Equal => 1.0,
            Weighting::Jg => {
                if n < 3 {
                    return Err(Error::TooFewSubjects { n, required: 3 });
                }
                if matrix.is_constant_row(g) {
                    return Err(Error::ConstantGene { set: set.name.clone(), gene: gene.clone() });
                }
                let row = matrix.row(g);
                let sd_x = (row.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt();
                ((n - 2) as f64).sqrt() / (sd_x * phenotype.sd())
            }
            Weighting::Explicit(map) => *map.get(gene).ok_or_else(|| Error::MissingWeight {
                set: set.name.clone(),
                gene: gene.clone(),
            })?,
        };
        row_indices.push(g);
        weights.push(w);
    }
    if row_indices.is_empty() {
        return Err(Error::EmptyGeneSet(set.name.clone()));
    }
    Ok(ResolvedGeneSet { name: set.name.clone(), row_indices, weights, missing_genes })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(rows: &[&[f64]]) -> RawMatrix {
        let n = rows[0].len();
        RawMatrix::new(
            (0..rows.len()).map(|g| format!("g{}", g + 1)).collect(),
            (0..n).map(|i| format!("s{i}")).collect(),
            rows.iter().flat_map(|r| r.iter().copied()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn center_only_subtracts_mean() {
        let m = center_and_scale(&raw(&[&[1.0, 2.0, 3.0]]), ScaleMode::CenterOnly).unwrap();
        assert_eq!(m.row(0), &[-1.0, 0.0, 1.0]);
        assert!(m.preprocessing().constant_rows.is_empty());
    }

    #[test]
    fn constant_row_is_zeroed_and_flagged() {
        let m = center_and_scale(&raw(&[&[5.0, 5.0, 5.0], &[0.0, 0.0, 2.0]]), ScaleMode::CenterUnitVariance)
            .unwrap();
        assert_eq!(m.row(0), &[0.0, 0.0, 0.0]);
        assert_eq!(m.preprocessing().constant_rows, vec![0]);
        assert!(m.is_constant_row(0));
        let r = m.row(1);
        assert!(r.iter().sum::<f64>().abs() < 1e-15);
        let ms = r.iter().map(|x| x * x).sum::<f64>() / 3.0;
        assert!((ms - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_finite_and_tiny_n() {
        let err = center_and_scale(&raw(&[&[1.0, f64::NAN, 3.0]]), ScaleMode::CenterOnly).unwrap_err();
        assert!(matches!(err, Error::NonFinite { ref gene, ref subject } if gene == "g1" && subject == "s1"));
        let err = center_and_scale(&raw(&[&[1.0]]), ScaleMode::CenterOnly).unwrap_err();
        assert!(matches!(err, Error::TooFewSubjects { n: 1, .. }));
    }

    #[test]
    fn scaling_is_idempotent() {
        let r = raw(&[&[0.3, -1.2, 4.4, 2.0, 0.1], &[9.0, 8.5, 7.25, 1.0, -3.0]]);
        for mode in [ScaleMode::CenterOnly, ScaleMode::CenterUnitVariance] {
            let once = center_and_scale(&r, mode).unwrap();
            let twice = center_and_scale(&once.to_raw(), mode).unwrap();
            for (a, b) in once.values.iter().zip(&twice.values) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn quantile_transform_uses_normal_scores() {
        let m = center_and_scale(&raw(&[&[10.0, 30.0, 20.0], &[1.0, 2.0, 3.0], &[10.0, 30.0, 20.0]]), ScaleMode::CenterOnly)
            .unwrap();
        let q = quantile_transform(&m).unwrap();
        let z = 0.967_421_566_101_701;
        let r = q.row(0);
        assert!((r[0] + z).abs() < 1e-12 && (r[1] - z).abs() < 1e-12 && r[2].abs() < 1e-12);
        let s = q.row(1);
        assert!(s[0] < s[1] && s[1] < s[2]);
        assert_eq!(q.row(0), q.row(2));
        assert!(q.preprocessing().quantile);
    }

    #[test]
    fn quantile_ties_follow_input_order() {
        let m = center_and_scale(&raw(&[&[2.0, 1.0, 2.0, 0.0]]), ScaleMode::CenterOnly).unwrap();
        let q = quantile_transform(&m).unwrap();
        let r = q.row(0);
        assert!(r[3] < r[1] && r[1] < r[0] && r[0] < r[2]);
    }

    #[test]
    fn phenotype_moments() {
        let p = center_phenotype(&[0.0, 1.0]).unwrap();
        assert_eq!(p.values(), &[-0.5, 0.5]);
        assert_eq!(p.mu2(), 0.25);
        assert_eq!(p.mu4(), 0.0625);
        let p = center_phenotype(&[-1.0, 0.0, 1.0]).unwrap();
        assert_eq!(p.values(), &[-1.0, 0.0, 1.0]);
        assert!((p.mu2() - 2.0 / 3.0).abs() < 1e-15 && (p.mu4() - 2.0 / 3.0).abs() < 1e-15);
        assert!(matches!(center_phenotype(&[3.0, 3.0, 3.0]), Err(Error::ConstantPhenotype)));
    }

    fn set(genes: &[&str]) -> GeneSet {
        GeneSet { name: "S".into(), description: String::new(), genes: genes.iter().map(|g| g.to_string()).collect() }
    }

    #[test]
    fn resolve_records_missing_members() {
        let m = center_and_scale(&raw(&[&[1.0, 2.0, 4.0], &[0.0, 1.0, 0.0], &[3.0, 1.0, 2.0]]), ScaleMode::CenterOnly)
            .unwrap();
        let y = center_phenotype(&[1.0, 0.0, 2.0]).unwrap();
        let r = resolve_gene_set(&set(&["g1", "g2", "gX"]), &m, &Weighting::Equal, &y).unwrap();
        assert_eq!(r.row_indices, vec![0, 1]);
        assert_eq!(r.weights, vec![1.0, 1.0]);
        assert_eq!(r.missing_genes, vec!["gX".to_string()]);
        let err = resolve_gene_set(&set(&["gY"]), &m, &Weighting::Equal, &y).unwrap_err();
        assert!(matches!(err, Error::EmptyGeneSet(ref s) if s == "S"));
    }

    #[test]
    fn jg_weights_with_unit_variance_inputs() {
        let rows: [&[f64]; 2] = [&[1.0, -2.0, 0.5, 3.0, 0.0, -1.0], &[0.2, 0.1, -0.4, 1.0, 2.0, 0.0]];
        let m = center_and_scale(&raw(&rows), ScaleMode::CenterUnitVariance).unwrap();
        let ycen = center_phenotype(&[0.0, 1.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        let s = ycen.sd();
        let yvals: Vec<f64> = ycen.values().iter().map(|v| v / s).collect();
        let y = center_phenotype(&yvals).unwrap();
        let r = resolve_gene_set(&set(&["g1", "g2"]), &m, &Weighting::Jg, &y).unwrap();
        for w in r.weights {
            assert!((w - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn jg_rejects_constant_gene_and_explicit_passthrough() {
        let m = center_and_scale(&raw(&[&[1.0, 1.0, 1.0], &[0.0, 1.0, 5.0]]), ScaleMode::CenterOnly).unwrap();
        let y = center_phenotype(&[1.0, 0.0, 2.0]).unwrap();
        let err = resolve_gene_set(&set(&["g1", "g2"]), &m, &Weighting::Jg, &y).unwrap_err();
        assert!(matches!(err, Error::ConstantGene { ref gene, .. } if gene == "g1"));
        let w = Weighting::Explicit(HashMap::from([("g1".to_string(), 0.5), ("g2".to_string(), 2.0)]));
        let r = resolve_gene_set(&set(&["g1", "g2"]), &m, &w, &y).unwrap();
        assert_eq!(r.weights, vec![0.5, 2.0]);
    }

    #[test]
    fn collection_rejects_duplicates_and_empty_sets() {
        let a = set(&["g1"]);
        assert!(GeneSetCollection::new(vec![a.clone(), a.clone()]).is_err());
        assert!(GeneSetCollection::new(vec![set(&[])]).is_err());
        assert_eq!(GeneSetCollection::new(vec![a]).unwrap().len(), 1);
    }
}
