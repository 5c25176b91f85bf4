//! Input loading and per-set moment inference.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use gsmoment::dataset::{
    center_and_scale, center_phenotype, quantile_transform, resolve_gene_set, ExpressionMatrix, GeneSet,
    GeneSetCollection, Phenotype, ResolvedGeneSet, ScaleMode, Weighting,
};
use gsmoment::gsio::{parse_expression_tsv, parse_gmt, parse_phenotype, parse_weights, write_results, ResultRow, StatisticKind};
use gsmoment::moments::{
    build_pseudo_gene, excess_kurtosis_diag, linear_moments, observed_statistics, quadratic_mean,
    quadratic_moments_from_rows, AtbCache, RootWeightedRows, S3Strategy,
};
use gsmoment::refdist::{
    adjust_pvalues, fit_normal, fit_scaled_beta, fit_scaled_chisq, pvalues_beta, pvalues_chisq, pvalues_normal,
    Adjustment, PValueSet,
};
use log::warn;
use rayon::prelude::*;

use crate::args::{AdjustChoice, Alternative, DistChoice, RunArgs, StatChoice};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Input {
        path: PathBuf,
        #[source]
        source: gsmoment::Error,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no gene set produced a result")]
    NoResults { numerical: bool },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl CliError {
    /// 1 for input and configuration problems, 2 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::NoResults { numerical: true } => 2,
            _ => 1,
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Input { path: path.to_path_buf(), source: e.into() })
}

fn at<T>(path: &Path, r: gsmoment::Result<T>) -> Result<T, CliError> {
    r.map_err(|source| CliError::Input { path: path.to_path_buf(), source })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinearDist {
    Normal,
    Beta,
}

/// Validated analysis choices.
#[derive(Clone, Copy, Debug)]
pub struct Analysis {
    pub stat: StatChoice,
    pub linear_dist: LinearDist,
    pub alternative: Alternative,
    pub adjust: AdjustChoice,
    pub s3: S3Strategy,
}

impl Analysis {
    pub fn from_args(args: &RunArgs) -> Result<Self, CliError> {
        let linear_dist = match (args.dist, args.stat) {
            (DistChoice::Chisq, StatChoice::Linear) => {
                return Err(CliError::Config("--dist chisq needs a quadratic statistic".into()))
            }
            (DistChoice::Normal | DistChoice::Beta, StatChoice::Quadratic) => {
                return Err(CliError::Config("--dist normal/beta needs the linear statistic".into()))
            }
            (DistChoice::Normal, _) => LinearDist::Normal,
            _ => LinearDist::Beta,
        };
        Ok(Self { stat: args.stat, linear_dist, alternative: args.alternative, adjust: args.adjust, s3: S3Strategy::Auto })
    }
}

pub struct Inputs {
    pub matrix: ExpressionMatrix,
    pub phenotype: Phenotype,
    pub sets: GeneSetCollection,
    pub weighting: Weighting,
}

pub fn load_inputs(args: &RunArgs) -> Result<Inputs, CliError> {
    let raw = at(&args.expression, parse_expression_tsv(open(&args.expression)?))?;
    let mode = if args.standardize { ScaleMode::CenterUnitVariance } else { ScaleMode::CenterOnly };
    let mut matrix = at(&args.expression, center_and_scale(&raw, mode))?;
    if args.quantile_transform {
        matrix = at(&args.expression, quantile_transform(&matrix))?;
    }
    let y = at(&args.phenotype, parse_phenotype(open(&args.phenotype)?, matrix.subject_ids()))?;
    let phenotype = at(&args.phenotype, center_phenotype(&y))?;
    let parsed = at(&args.gene_sets, parse_gmt(open(&args.gene_sets)?))?;
    for w in &parsed.warnings {
        warn!("{}: {w}", args.gene_sets.display());
    }
    let weighting = match args.weights.as_str() {
        "equal" => Weighting::Equal,
        "jg" => Weighting::Jg,
        file => {
            let path = PathBuf::from(file);
            Weighting::Explicit(at(&path, parse_weights(open(&path)?))?)
        }
    };
    Ok(Inputs { matrix, phenotype, sets: parsed.collection, weighting })
}

/// Rows for one gene set, plus what the oracle needs to revisit it.
pub struct SetAnalysis {
    pub resolved: Option<ResolvedGeneSet>,
    pub rows: Vec<ResultRow>,
    pub numerical_failure: bool,
}

impl SetAnalysis {
    pub fn succeeded(&self) -> bool {
        self.rows.iter().any(|r| r.p_central.is_some())
    }
}

fn kinds(stat: StatChoice) -> Vec<StatisticKind> {
    let mut k = Vec::new();
    if stat.linear() {
        k.push(StatisticKind::Linear);
    }
    if stat.quadratic() {
        k.push(StatisticKind::Quadratic);
    }
    k
}

fn apply_pvalues(row: &mut ResultRow, p: PValueSet) {
    row.p_left = Some(p.p_left);
    row.p_right = Some(p.p_right);
    row.p_central = Some(p.p_central);
    row.warnings.extend(p.notes);
}

pub fn analyze_set(set: &GeneSet, inputs: &Inputs, analysis: &Analysis, atb: &AtbCache) -> SetAnalysis {
    let resolved = match resolve_gene_set(set, &inputs.matrix, &inputs.weighting, &inputs.phenotype) {
        Ok(r) => r,
        Err(e) => {
            let rows = kinds(analysis.stat)
                .into_iter()
                .map(|k| ResultRow::warning_only(&set.name, 0, k, e.to_string()))
                .collect();
            return SetAnalysis { resolved: None, rows, numerical_failure: false };
        }
    };
    let mut numerical_failure = false;
    let mut rows = Vec::new();
    let missing = (!resolved.missing_genes.is_empty()).then(|| {
        format!("{} of {} genes absent from the matrix", resolved.missing_genes.len(), resolved.missing_genes.len() + resolved.len())
    });
    for kind in kinds(analysis.stat) {
        let mut row = ResultRow::warning_only(&set.name, resolved.len(), kind, String::new());
        row.warnings.clear();
        row.warnings.extend(missing.clone());
        let outcome = match kind {
            StatisticKind::Linear => linear_row(&mut row, &resolved, inputs, analysis, atb),
            StatisticKind::Quadratic => quadratic_row(&mut row, &resolved, inputs, analysis, atb),
        };
        if let Err(e) = outcome {
            numerical_failure |= matches!(e, gsmoment::Error::Numerical(_));
            row.warnings.push(e.to_string());
        }
        for w in &row.warnings {
            warn!("set `{}` ({kind}): {w}", set.name);
        }
        rows.push(row);
    }
    SetAnalysis { resolved: Some(resolved), rows, numerical_failure }
}

pub(crate) fn linear_row(
    row: &mut ResultRow,
    set: &ResolvedGeneSet,
    inputs: &Inputs,
    analysis: &Analysis,
    atb: &AtbCache,
) -> gsmoment::Result<()> {
    let y = &inputs.phenotype;
    let n = y.len();
    let obs = observed_statistics(set, &inputs.matrix, y)?;
    row.observed = Some(obs.t_hat);
    let pseudo = build_pseudo_gene(set, &inputs.matrix);
    let m = if n >= 4 { Some(atb.get(n)?) } else { None };
    let lm = linear_moments(&pseudo, y, m.as_ref())?;
    row.params = vec![
        ("variance".into(), lm.variance),
        ("range_lo".into(), lm.range_lo),
        ("range_hi".into(), lm.range_hi),
    ];
    if let Ok(k) = excess_kurtosis_diag(&lm) {
        row.params.push(("excess_kurtosis".into(), k));
    }
    let p = match analysis.linear_dist {
        LinearDist::Normal => pvalues_normal(&fit_normal(&lm)?, obs.t_hat),
        LinearDist::Beta => match fit_scaled_beta(&lm) {
            Ok(r) => {
                row.params.push(("alpha".into(), r.alpha));
                row.params.push(("beta".into(), r.beta));
                pvalues_beta(&r, obs.t_hat)?
            }
            Err(gsmoment::Error::Degenerate(why)) if lm.variance > 0.0 => {
                row.warnings.push(format!("beta fit unavailable ({why}); normal reference used"));
                pvalues_normal(&fit_normal(&lm)?, obs.t_hat)
            }
            Err(e) => return Err(e),
        },
    };
    apply_pvalues(row, p);
    Ok(())
}

pub(crate) fn quadratic_row(
    row: &mut ResultRow,
    set: &ResolvedGeneSet,
    inputs: &Inputs,
    analysis: &Analysis,
    atb: &AtbCache,
) -> gsmoment::Result<()> {
    let y = &inputs.phenotype;
    let n = y.len();
    let obs = observed_statistics(set, &inputs.matrix, y)?;
    row.observed = Some(obs.c_hat);
    let mean = quadratic_mean(set, &inputs.matrix, y)?;
    row.params = vec![("mean".into(), mean)];
    if n < 4 {
        return Err(gsmoment::Error::TooFewSubjects { n, required: 4 });
    }
    let rows = RootWeightedRows::new(set, &inputs.matrix)?;
    let qm = quadratic_moments_from_rows(&rows, y, &atb.get(n)?, analysis.s3)?;
    row.params.push(("variance".into(), qm.variance));
    if qm.clamped {
        row.warnings.push("slightly negative variance clamped to zero".into());
    }
    let r = fit_scaled_chisq(&qm)?;
    row.params.push(("nu".into(), r.nu));
    row.params.push(("sigma2".into(), r.sigma2));
    apply_pvalues(row, pvalues_chisq(&r, obs.c_hat)?);
    Ok(())
}

/// The p-value a row is judged by under the chosen alternative.
pub fn selected_p(row: &ResultRow, alternative: Alternative) -> Option<f64> {
    match (row.kind, alternative) {
        (StatisticKind::Quadratic, _) | (_, Alternative::TwoSided) => row.p_central,
        (_, Alternative::Left) => row.p_left,
        (_, Alternative::Right) => row.p_right,
    }
}

/// Fill `p_adjusted` separately for each statistic kind.
pub fn adjust_rows(rows: &mut [ResultRow], analysis: &Analysis) {
    let method = match analysis.adjust {
        AdjustChoice::None => return,
        AdjustChoice::Bh => Adjustment::Bh,
        AdjustChoice::Bonferroni => Adjustment::Bonferroni,
    };
    for kind in [StatisticKind::Linear, StatisticKind::Quadratic] {
        let (idx, ps): (Vec<usize>, Vec<f64>) = rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.kind == kind)
            .filter_map(|(i, r)| selected_p(r, analysis.alternative).map(|p| (i, p)))
            .unzip();
        let adjusted = adjust_pvalues(&ps, method).expect("p-values lie in [0, 1]");
        for (i, p) in idx.into_iter().zip(adjusted) {
            rows[i].p_adjusted = Some(p);
        }
    }
}

pub fn thread_pool(threads: u32) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads as usize)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {threads} threads: {e}")))
}

/// Analyse every set in input order.
pub fn analyze_all(inputs: &Inputs, analysis: &Analysis, threads: u32) -> Result<Vec<SetAnalysis>, CliError> {
    let atb = AtbCache::new();
    let pool = thread_pool(threads)?;
    Ok(pool.install(|| inputs.sets.sets().par_iter().map(|s| analyze_set(s, inputs, analysis, &atb)).collect()))
}

pub fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        None => Box::new(BufWriter::new(io::stdout().lock())),
        Some(p) if p.as_os_str() == "-" => Box::new(BufWriter::new(io::stdout().lock())),
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
    })
}

pub struct TestReport {
    pub rows: Vec<ResultRow>,
    pub succeeded: usize,
}

pub fn cmd_test(args: &RunArgs) -> Result<TestReport, CliError> {
    let analysis = Analysis::from_args(args)?;
    let inputs = load_inputs(args)?;
    let results = analyze_all(&inputs, &analysis, args.threads)?;
    let succeeded = results.iter().filter(|r| r.succeeded()).count();
    let numerical = results.iter().any(|r| r.numerical_failure);
    let mut rows: Vec<ResultRow> = results.into_iter().flat_map(|r| r.rows).collect();
    adjust_rows(&mut rows, &analysis);
    write_results(&rows, open_output(args.output.as_deref())?).map_err(|e| match e {
        gsmoment::Error::Io(io) => CliError::Io(io),
        other => CliError::Config(other.to_string()),
    })?;
    if succeeded == 0 {
        return Err(CliError::NoResults { numerical });
    }
    Ok(TestReport { rows, succeeded })
}
