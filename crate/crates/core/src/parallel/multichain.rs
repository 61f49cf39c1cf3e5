//! Independent chains run side by side and compared afterwards. Chain `k`
//! (1-based) writes under `<prefix>_process_<k>` and, by default, draws from
//! stream `k`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::chain_io::fmt_real;
use crate::error::{Error, Result};
use crate::exec;
use crate::refinement::RefinedSample;
use crate::sampler::{run_member, RunOptions, SimulationOutputs};
use crate::spec::SimSpec;
use crate::target::LogDensity;

use super::ks::ks_two_sample;

/// Family-wise significance level of the convergence check.
pub const CONVERGENCE_ALPHA: f64 = 0.05;
pub const DUPLICATION_WARNING: &str = "degenerate duplication";
const MIN_KS_SIZE: usize = 5;

#[derive(Clone, Copy)]
pub struct ChainJob<'a> {
    pub target: &'a dyn LogDensity,
    pub stream: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairTest {
    /// 1-based chain indices.
    pub first: usize,
    pub second: usize,
    pub dim: usize,
    pub statistic: f64,
    pub p_value: f64,
    /// Bonferroni-corrected over every test performed.
    pub adjusted_p: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConvergenceReport {
    pub tests: Vec<PairTest>,
    /// Some corrected p-value fell below [`CONVERGENCE_ALPHA`].
    pub flagged: bool,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct MultiChainOutputs {
    pub chains: Vec<SimulationOutputs>,
    pub convergence: ConvergenceReport,
    pub convergence_path: Option<PathBuf>,
}

fn member_spec(spec: &SimSpec, k: usize) -> SimSpec {
    let mut s = spec.clone();
    s.output_prefix = format!("{}_process_{k}", spec.output_prefix);
    s
}

pub fn convergence_path(prefix: &str) -> PathBuf {
    PathBuf::from(format!("{prefix}_convergence.txt"))
}

/// `n_chains` chains on one target, streams `1..=n_chains`.
pub fn run_multi_chain<T: LogDensity>(spec: &SimSpec, target: &T, n_chains: usize) -> Result<MultiChainOutputs> {
    run_multi_chain_with(spec, target, n_chains, &RunOptions::default())
}

pub fn run_multi_chain_with<T: LogDensity>(
    spec: &SimSpec,
    target: &T,
    n_chains: usize,
    opts: &RunOptions,
) -> Result<MultiChainOutputs> {
    let jobs: Vec<ChainJob> = (1..=n_chains as u64).map(|stream| ChainJob { target, stream }).collect();
    run_chains(spec, &jobs, opts)
}

/// Fully general form: each chain gets its own target and stream.
pub fn run_chains(spec: &SimSpec, jobs: &[ChainJob], opts: &RunOptions) -> Result<MultiChainOutputs> {
    if jobs.len() < 2 {
        return Err(Error::Usage(format!("multi-chain runs need at least 2 chains, got {}", jobs.len())));
    }
    let results = exec::map(opts.execution, jobs, |i, job| {
        let member = member_spec(spec, i + 1);
        let o = RunOptions { first_stream: job.stream, ..opts.clone() };
        run_member(&member, job.target, &o)
    });
    let chains = results.into_iter().collect::<Result<Vec<_>>>()?;
    let refined: Vec<&RefinedSample> = chains.iter().map(|c| &c.refined).collect();
    let convergence = compare_samples(&refined);
    let convergence_path = if opts.write_files {
        let p = convergence_path(&spec.output_prefix);
        write_convergence(&convergence, &p)?;
        Some(p)
    } else {
        None
    };
    Ok(MultiChainOutputs { chains, convergence, convergence_path })
}

/// Pairwise, per-dimension two-sample KS tests with Bonferroni correction.
pub fn compare_samples(samples: &[&RefinedSample]) -> ConvergenceReport {
    let mut report = ConvergenceReport::default();
    let ndim = samples.iter().find_map(|s| s.states.first().map(Vec::len)).unwrap_or(0);
    for (k, s) in samples.iter().enumerate() {
        if s.len() < MIN_KS_SIZE {
            report.warnings.push(format!(
                "chain {} has only {} refined states; it is left out of the comparison",
                k + 1,
                s.len()
            ));
        }
    }
    for i in 0..samples.len() {
        for j in i + 1..samples.len() {
            let (a, b) = (samples[i], samples[j]);
            if a.len() < MIN_KS_SIZE || b.len() < MIN_KS_SIZE {
                continue;
            }
            if a.states == b.states {
                report
                    .warnings
                    .push(format!("{DUPLICATION_WARNING}: chains {} and {} are identical", i + 1, j + 1));
            }
            for dim in 0..ndim {
                let r = ks_two_sample(&a.column(dim), &b.column(dim));
                report.tests.push(PairTest {
                    first: i + 1,
                    second: j + 1,
                    dim,
                    statistic: r.statistic,
                    p_value: r.p_value,
                    adjusted_p: r.p_value,
                });
            }
        }
    }
    let m = report.tests.len() as f64;
    for t in report.tests.iter_mut() {
        t.adjusted_p = (t.p_value * m).min(1.0);
    }
    report.flagged = report.tests.iter().any(|t| t.adjusted_p < CONVERGENCE_ALPHA);
    report
}

pub fn write_convergence(report: &ConvergenceReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::new();
    let verdict = if report.flagged { "not converged" } else { "converged" };
    let _ = writeln!(s, "Verdict = {verdict}");
    let _ = writeln!(s, "Alpha = {}", fmt_real(CONVERGENCE_ALPHA));
    for w in &report.warnings {
        let _ = writeln!(s, "Warning = {w}");
    }
    let _ = writeln!(s, "first,second,dim,statistic,pValue,adjustedPValue");
    for t in &report.tests {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            t.first,
            t.second,
            t.dim,
            fmt_real(t.statistic),
            fmt_real(t.p_value),
            fmt_real(t.adjusted_p)
        );
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}
