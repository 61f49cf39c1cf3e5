//! Delayed-rejection adaptive Metropolis sampling with compact, restartable
//! chain files, recursive refinement and fork-join parallelism.
//!
//! ```no_run
//! use dramforge::{run_sampler, FnTarget, SimSpec};
//!
//! let target = FnTarget::new(4, |x: &[f64]| -0.5 * x.iter().map(|v| v * v).sum::<f64>());
//! let spec = SimSpec::new(4).chain_size(30_000).seed(11).output_prefix("out/mvn");
//! let out = run_sampler(&spec, &target).unwrap();
//! println!("{} refined states", out.refined.len());
//! ```

pub mod chain_io;
pub mod config;
pub mod error;
pub mod exec;
pub mod parallel;
pub mod postproc;
pub mod proposal;
pub mod refinement;
pub mod rng;
pub mod sampler;
pub mod spec;
pub mod target;

pub use chain_io::{CompactChain, OutputPaths};
pub use error::{Error, Result};
pub use exec::Execution;
pub use parallel::{run_multi_chain, MultiChainOutputs};
pub use proposal::{adaptation_measure, ProposalState};
pub use refinement::{refine, RefinedSample};
pub use rng::RngState;
pub use sampler::{resume, run_sampler, run_with, simulate, RunOptions, SimulationOutputs};
pub use spec::SimSpec;
pub use target::{BuiltinTarget, FnTarget, Gaussian, LogDensity};
