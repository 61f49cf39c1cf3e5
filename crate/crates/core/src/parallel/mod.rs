//! Fork-join single-chain sampling, independent multi-chain runs, and the
//! geometric model of which worker supplies each accepted state.

mod forkjoin;
mod ks;
mod model;
mod multichain;

pub use forkjoin::{fork_join_cycle, parallel_stats};
pub use ks::{kolmogorov_q, ks_one_sample, ks_two_sample, KsResult};
pub use model::{
    fit_geometric, fit_truncated_geometric, geometric_pmf, optimal_num_workers, predict_speedup,
    truncated_geometric_pmf, ContributionStats, SpeedupModel,
};
pub use multichain::{
    compare_samples, run_chains, run_multi_chain, run_multi_chain_with, write_convergence, ChainJob,
    ConvergenceReport, MultiChainOutputs, PairTest, CONVERGENCE_ALPHA, DUPLICATION_WARNING,
};
