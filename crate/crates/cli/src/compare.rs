//! Moment p-values against a resampling oracle.

use std::io::Write;

use gsmoment::gsio::{format_real, StatisticKind};
use gsmoment::resampling::{
    permutation_pvalues, rotation_pvalues, substream_seed, Contrast, PermutationPlan, ResamplingResult, RotationPlan,
    SetStatistic, MAX_EXHAUSTIVE_N,
};
use rayon::prelude::*;

use crate::args::{Alternative, CompareArgs, OracleMode};
use crate::pipeline::{analyze_set, load_inputs, open_output, selected_p, thread_pool, Analysis, CliError, Inputs};

#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    pub set_name: String,
    pub size: usize,
    pub kind: StatisticKind,
    pub p_moment: Option<f64>,
    pub p_oracle: Option<f64>,
    pub se_oracle: Option<f64>,
    pub m_effective: u64,
}

impl CompareRow {
    pub fn abs_diff(&self) -> Option<f64> {
        Some((self.p_moment? - self.p_oracle?).abs())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
    pub spearman_linear: Option<f64>,
    pub spearman_quadratic: Option<f64>,
}

fn oracle_p(res: &ResamplingResult, kind: StatisticKind, alt: Alternative) -> (f64, f64) {
    match (kind, alt) {
        (StatisticKind::Quadratic, _) => (
            res.p_quadratic.expect("quadratic statistic kept"),
            res.se_quadratic.expect("quadratic statistic kept"),
        ),
        (_, Alternative::Left) => (res.p_left, res.se_left),
        (_, Alternative::Right) => (res.p_right, res.se_right),
        (_, Alternative::TwoSided) => (res.p_central, res.se_central),
    }
}

fn run_oracle(stat: &SetStatistic, inputs: &Inputs, args: &CompareArgs, index: u64) -> gsmoment::Result<ResamplingResult> {
    let seed = substream_seed(args.seed, index);
    match args.mode {
        OracleMode::Exhaustive => permutation_pvalues(stat, &inputs.phenotype, &PermutationPlan::Exhaustive),
        OracleMode::Permutation => {
            permutation_pvalues(stat, &inputs.phenotype, &PermutationPlan::MonteCarlo { m: args.permutations, seed })
        }
        OracleMode::Rotation => rotation_pvalues(
            stat,
            &inputs.phenotype,
            &RotationPlan { m: args.permutations, seed, contrast: Contrast::Helmert },
        ),
    }
}

/// Per-set comparison rows, in input order.
pub fn compare_inputs(inputs: &Inputs, analysis: &Analysis, args: &CompareArgs) -> Result<CompareReport, CliError> {
    let n = inputs.phenotype.len();
    if args.mode == OracleMode::Exhaustive && n > MAX_EXHAUSTIVE_N {
        return Err(CliError::Config(format!("exhaustive mode needs at most {MAX_EXHAUSTIVE_N} subjects, got {n}")));
    }
    let atb = gsmoment::moments::AtbCache::new();
    let pool = thread_pool(args.run.threads)?;
    let per_set: Vec<Vec<CompareRow>> = pool.install(|| {
        inputs
            .sets
            .sets()
            .par_iter()
            .enumerate()
            .map(|(i, set)| {
                let a = analyze_set(set, inputs, analysis, &atb);
                let oracle = a.resolved.as_ref().and_then(|r| {
                    let stat = SetStatistic::new(r, &inputs.matrix, &inputs.phenotype).ok()?;
                    let stat = if analysis.stat.quadratic() { stat } else { stat.without_quadratic() };
                    run_oracle(&stat, inputs, args, i as u64)
                        .inspect_err(|e| log::warn!("set `{}`: oracle failed: {e}", set.name))
                        .ok()
                });
                a.rows
                    .iter()
                    .map(|row| {
                        let (p_oracle, se_oracle) = match &oracle {
                            Some(o) => {
                                let (p, se) = oracle_p(o, row.kind, analysis.alternative);
                                (Some(p), Some(se))
                            }
                            None => (None, None),
                        };
                        CompareRow {
                            set_name: row.set_name.clone(),
                            size: row.size,
                            kind: row.kind,
                            p_moment: selected_p(row, analysis.alternative),
                            p_oracle,
                            se_oracle,
                            m_effective: oracle.as_ref().map_or(0, |o| o.m_effective),
                        }
                    })
                    .collect()
            })
            .collect()
    });
    let rows: Vec<CompareRow> = per_set.into_iter().flatten().collect();
    let rho = |kind| {
        let (a, b): (Vec<f64>, Vec<f64>) =
            rows.iter().filter(|r| r.kind == kind).filter_map(|r| Some((r.p_moment?, r.p_oracle?))).unzip();
        spearman(&a, &b)
    };
    Ok(CompareReport {
        spearman_linear: rho(StatisticKind::Linear),
        spearman_quadratic: rho(StatisticKind::Quadratic),
        rows,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), format_real)
}

pub fn write_compare<W: Write>(report: &CompareReport, method: &str, mut out: W) -> std::io::Result<()> {
    writeln!(out, "set\tsize\tkind\tmethod\tp_moment\tp_oracle\tse_oracle\tabs_diff\tm_effective")?;
    for r in &report.rows {
        writeln!(
            out,
            "{}\t{}\t{}\t{method}\t{}\t{}\t{}\t{}\t{}",
            r.set_name,
            r.size,
            r.kind,
            opt(r.p_moment),
            opt(r.p_oracle),
            opt(r.se_oracle),
            opt(r.abs_diff()),
            r.m_effective
        )?;
    }
    writeln!(out, "# spearman_linear\t{}", opt(report.spearman_linear))?;
    writeln!(out, "# spearman_quadratic\t{}", opt(report.spearman_quadratic))?;
    out.flush()
}

pub fn cmd_compare(args: &CompareArgs) -> Result<CompareReport, CliError> {
    let analysis = Analysis::from_args(&args.run)?;
    let inputs = load_inputs(&args.run)?;
    let report = compare_inputs(&inputs, &analysis, args)?;
    let method = match args.mode {
        OracleMode::Rotation => "rotation",
        OracleMode::Permutation => "permutation",
        OracleMode::Exhaustive => "exhaustive",
    };
    write_compare(&report, method, open_output(args.run.output.as_deref())?)?;
    Ok(report)
}

/// Average ranks, ties sharing the mean of their positions (1-based).
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation; `None` with fewer than two pairs or a constant input.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let m = (a.len() as f64 + 1.0) / 2.0;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - m) * (y - m);
        saa += (x - m) * (x - m);
        sbb += (y - m) * (y - m);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 1.0], &[1.0, 2.0]), None);
        assert_eq!(ranks(&[5.0, 1.0, 5.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        let r = spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 1.0, 4.0, 3.0, 5.0]).unwrap();
        assert!((r - 0.8).abs() < 1e-15);
    }
}
