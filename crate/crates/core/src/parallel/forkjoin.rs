//! The coordinator owns the chain and every file; workers only hold their
//! RNG stream between cycles. A cycle broadcasts the chain head, lets every
//! active rank run its delayed-rejection sequence independently, and gathers
//! the verdicts in rank order.

use crate::chain_io::{CompactChain, ParallelStats};
use crate::error::Result;
use crate::exec::Execution;
use crate::sampler::SamplerState;
use crate::spec::SimSpec;
use crate::target::LogDensity;

use super::model::{fit_truncated_geometric, ContributionStats, SpeedupModel};

/// Runs one cycle with every worker in `state`; returns the winning rank.
pub fn fork_join_cycle<T: LogDensity + ?Sized>(
    state: &mut SamplerState,
    target: &T,
    spec: &SimSpec,
    exec: Execution,
) -> Result<Option<u32>> {
    state.cycle(target, spec, exec)
}

/// Report block for a fork-join chain of `iterations` verbose steps.
pub fn parallel_stats(chain: &CompactChain, iterations: u64, num_workers: usize) -> ParallelStats {
    let counts = ContributionStats::counts_from_chain(chain, num_workers);
    let accepted: u64 = counts.iter().sum();
    let mu = if iterations > 1 {
        accepted as f64 / (iterations - 1) as f64
    } else {
        1.0
    };
    let fit = if accepted > 0 {
        fit_truncated_geometric(&counts, num_workers)
    } else {
        ContributionStats { counts: counts.clone(), fitted_p: 1.0, fit_distance: 0.0, max_rank: Some(num_workers) }
    };
    let model = SpeedupModel::for_report(mu.max(f64::MIN_POSITIVE), num_workers);
    ParallelStats {
        num_workers,
        contributions: counts,
        per_candidate_acceptance: mu,
        fitted_p: fit.fitted_p,
        fit_distance: fit.fit_distance,
        speedup: model.curve,
        optimal_workers: model.optimal_n,
    }
}
