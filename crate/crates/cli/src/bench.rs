//! Wall-clock timing of the moment and permutation paths.

use std::io::Write;
use std::time::{Duration, Instant};

use gsmoment::dataset::{resolve_gene_set, ResolvedGeneSet};
use gsmoment::gsio::{ResultRow, StatisticKind};
use gsmoment::moments::AtbCache;
use gsmoment::resampling::{permutation_pvalues, substream_seed, PermutationPlan, SetStatistic};
use rayon::prelude::*;

use crate::args::BenchArgs;
use crate::pipeline::{linear_row, load_inputs, open_output, quadratic_row, thread_pool, Analysis, CliError, Inputs};

#[derive(Clone, Debug)]
pub struct BenchReport {
    pub n: usize,
    pub sets: usize,
    pub mean_size: f64,
    pub mean_square_size: f64,
    pub moment_linear: Duration,
    pub moment_quadratic: Duration,
    pub permutation_linear: Vec<(u64, Duration)>,
    pub permutation_quadratic: Vec<(u64, Duration)>,
}

fn per_draw(d: Duration, m: u64) -> f64 {
    d.as_secs_f64() / m as f64
}

impl BenchReport {
    /// Moment time in units of one permutation at grid point `m`.
    pub fn equivalent_permutations(moment: Duration, m: u64, perm: Duration) -> f64 {
        moment.as_secs_f64() / per_draw(perm, m)
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "n\t{}", self.n)?;
        writeln!(out, "sets\t{}", self.sets)?;
        writeln!(out, "mean_size\t{:.3}", self.mean_size)?;
        writeln!(out, "mean_square_size\t{:.3}", self.mean_square_size)?;
        writeln!(out, "method\tM\tseconds\tseconds_per_draw\tmoment_ratio\tequivalent_permutations")?;
        writeln!(out, "moment_linear\tNA\t{:.6}\tNA\tNA\tNA", self.moment_linear.as_secs_f64())?;
        writeln!(out, "moment_quadratic\tNA\t{:.6}\tNA\tNA\tNA", self.moment_quadratic.as_secs_f64())?;
        for (label, grid, moment) in [
            ("permutation_linear", &self.permutation_linear, self.moment_linear),
            ("permutation_quadratic", &self.permutation_quadratic, self.moment_quadratic),
        ] {
            for &(m, d) in grid {
                writeln!(
                    out,
                    "{label}\t{m}\t{:.6}\t{:.3e}\t{:.3e}\t{:.1}",
                    d.as_secs_f64(),
                    per_draw(d, m),
                    moment.as_secs_f64() / d.as_secs_f64(),
                    Self::equivalent_permutations(moment, m, d)
                )?;
            }
        }
        out.flush()
    }
}

fn time<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let v = f();
    (v, start.elapsed())
}

fn moment_pass(
    sets: &[ResolvedGeneSet],
    inputs: &Inputs,
    analysis: &Analysis,
    kind: StatisticKind,
) -> Duration {
    let ((), d) = time(|| {
        let atb = AtbCache::new();
        sets.par_iter().for_each(|s| {
            let mut row = ResultRow::warning_only(&s.name, s.len(), kind, String::new());
            let r = match kind {
                StatisticKind::Linear => linear_row(&mut row, s, inputs, analysis, &atb),
                StatisticKind::Quadratic => quadratic_row(&mut row, s, inputs, analysis, &atb),
            };
            if let Err(e) = r {
                log::warn!("set `{}` ({kind}): {e}", s.name);
            }
        })
    });
    d
}

fn permutation_pass(sets: &[ResolvedGeneSet], inputs: &Inputs, m: u64, seed: u64, quadratic: bool) -> Duration {
    let ((), d) = time(|| {
        sets.par_iter().enumerate().for_each(|(i, s)| {
            let Ok(stat) = SetStatistic::new(s, &inputs.matrix, &inputs.phenotype) else { return };
            let stat = if quadratic { stat } else { stat.without_quadratic() };
            let plan = PermutationPlan::MonteCarlo { m, seed: substream_seed(seed, i as u64) };
            if let Err(e) = permutation_pvalues(&stat, &inputs.phenotype, &plan) {
                log::warn!("set `{}`: {e}", s.name);
            }
        })
    });
    d
}

/// Time both moment paths and the permutation paths at each grid point.
/// Sets are resolved beforehand so that only p-value work is timed.
pub fn run_bench(
    inputs: &Inputs,
    analysis: &Analysis,
    linear_grid: &[u64],
    quadratic_grid: &[u64],
    seed: u64,
) -> BenchReport {
    let resolved: Vec<ResolvedGeneSet> = inputs
        .sets
        .sets()
        .iter()
        .filter_map(|s| resolve_gene_set(s, &inputs.matrix, &inputs.weighting, &inputs.phenotype).ok())
        .filter(|s| !s.is_empty())
        .collect();
    let k = resolved.len().max(1) as f64;
    let mean_size = resolved.iter().map(|s| s.len() as f64).sum::<f64>() / k;
    let mean_square_size = resolved.iter().map(|s| (s.len() * s.len()) as f64).sum::<f64>() / k;
    let moment_linear = moment_pass(&resolved, inputs, analysis, StatisticKind::Linear);
    let moment_quadratic = moment_pass(&resolved, inputs, analysis, StatisticKind::Quadratic);
    let permutation_linear =
        linear_grid.iter().map(|&m| (m, permutation_pass(&resolved, inputs, m, seed, false))).collect();
    let permutation_quadratic =
        quadratic_grid.iter().map(|&m| (m, permutation_pass(&resolved, inputs, m, seed, true))).collect();
    BenchReport {
        n: inputs.phenotype.len(),
        sets: resolved.len(),
        mean_size,
        mean_square_size,
        moment_linear,
        moment_quadratic,
        permutation_linear,
        permutation_quadratic,
    }
}

pub fn cmd_bench(args: &BenchArgs) -> Result<BenchReport, CliError> {
    let analysis = Analysis::from_args(&args.run)?;
    if args.grid.contains(&0) {
        return Err(CliError::Config("grid entries must be positive".into()));
    }
    let inputs = load_inputs(&args.run)?;
    let pool = thread_pool(args.run.threads)?;
    let report = pool.install(|| run_bench(&inputs, &analysis, &args.grid, &args.grid, args.seed));
    report.write(open_output(args.run.output.as_deref())?)?;
    Ok(report)
}
