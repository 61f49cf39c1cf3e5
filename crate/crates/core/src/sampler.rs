//! The DRAM chain: delayed-rejection attempts, weighted-row bookkeeping,
//! periodic proposal adaptation, burn-in tracking, and the file-backed driver
//! with write-ahead checkpoints and deterministic resume.
//!
//! Every iteration is one full delayed-rejection attempt from the current
//! state. Rejections add to the weight of the live row; an acceptance emits
//! the live row and starts a new one. With `n` workers a cycle runs `n`
//! attempts side by side, each on its own stream, and keeps the lowest-rank
//! acceptor. The `k − 1` lower ranks that rejected count as `k − 1` ordinary
//! rejected iterations, so the chain is distributed exactly like a serial one.

use std::time::Instant;

use crate::chain_io::{
    ascii_chain_bytes, binary_chain_bytes, read_chain_file, read_progress, read_report, read_restart_file,
    truncate_progress, write_report, write_sample, ChainRow, ChainWriter, CompactChain, OutputPaths, ProgressLine,
    ProgressWriter, ReportStats, RestartCheckpoint, RestartWriter, RunStatus,
};
use crate::chain_io::rewrite_chain;
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::proposal::{adaptation_measure, AdaptationRecord, ProposalState};
use crate::refinement::{effective_sample_size_with, refine_with, RefinedSample};
use crate::rng::RngState;
use crate::spec::{ChainFormat, FileEncoding, Parallelism, SimSpec};
use crate::target::LogDensity;

/// `min(0, logf_proposed − logf_current)`.
pub fn metropolis_log_alpha(logf_current: f64, logf_proposed: f64) -> f64 {
    if logf_proposed == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if logf_current == f64::NEG_INFINITY {
        return 0.0;
    }
    (logf_proposed - logf_current).min(0.0)
}

/// `ln(1 − e^a)` for `a ≤ 0`.
fn log1m_exp(a: f64) -> f64 {
    if a >= 0.0 {
        f64::NEG_INFINITY
    } else if a > -std::f64::consts::LN_2 {
        (-a.exp_m1()).ln()
    } else {
        (-a.exp()).ln_1p()
    }
}

/// Second-stage delayed-rejection log acceptance probability. The `logq`
/// arguments are first-stage kernel log densities; the second-stage kernels
/// are symmetric and cancel.
pub fn dr_log_alpha2(logf_x: f64, logf_y1: f64, logf_y2: f64, logq_y2_y1: f64, logq_x_y1: f64) -> f64 {
    if logf_y2 == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let num = logf_y2 + logq_y2_y1 + log1m_exp(metropolis_log_alpha(logf_y2, logf_y1));
    if num == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let den = logf_x + logq_x_y1 + log1m_exp(metropolis_log_alpha(logf_x, logf_y1));
    if den == f64::NEG_INFINITY {
        return 0.0;
    }
    (num - den).min(0.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathPoint {
    pub state: Vec<f64>,
    pub logf: f64,
}

/// Log acceptance probability of the last point of `path` given that the
/// intermediate points were proposed and rejected from `path[0]`. Stage `s`
/// kernels are centred on the path origin with spread `γ^s`, so the final
/// stage's forward and reverse kernels cancel.
pub fn dr_log_alpha(path: &[&PathPoint], proposal: &ProposalState, dr_scale_factor: f64) -> f64 {
    let k = path.len() - 1;
    let (x, y) = (path[0], path[k]);
    if k == 1 {
        return metropolis_log_alpha(x.logf, y.logf);
    }
    if y.logf == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let rev: Vec<&PathPoint> = path.iter().rev().copied().collect();
    let mut num = y.logf;
    let mut den = x.logf;
    for j in 1..k {
        num += proposal.log_kernel(&y.state, &path[k - j].state, dr_scale_factor, j - 1)
            + log1m_exp(dr_log_alpha(&rev[..=j], proposal, dr_scale_factor));
        den += proposal.log_kernel(&x.state, &path[j].state, dr_scale_factor, j - 1)
            + log1m_exp(dr_log_alpha(&path[..=j], proposal, dr_scale_factor));
    }
    if num == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if den == f64::NEG_INFINITY {
        return 0.0;
    }
    (num - den).min(0.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub state: Vec<f64>,
    pub logf: f64,
    pub stage: u32,
}

/// Verdict of one worker's delayed-rejection sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Attempt {
    pub accepted: Option<Candidate>,
    pub stages_tried: u32,
}

fn checked_logf<T: LogDensity + ?Sized>(target: &T, x: &[f64], iteration: u64) -> Result<f64> {
    let v = target.log_density(x);
    if v.is_nan() || v == f64::INFINITY {
        return Err(Error::NonFiniteTarget { iteration, value: v });
    }
    Ok(v)
}

/// Runs the stages `0..=dr_stage_count` from `current` until one is accepted.
/// Each stage consumes `ndim` normal deviates and one uniform.
pub fn attempt<T: LogDensity + ?Sized>(
    proposal: &ProposalState,
    current: &PathPoint,
    spec: &SimSpec,
    target: &T,
    rng: &mut RngState,
    iteration: u64,
) -> Result<Attempt> {
    let mut path = vec![current.clone()];
    for stage in 0..=spec.dr_stage_count {
        let y = proposal.propose(&current.state, spec.dr_scale_factor, stage, rng);
        let logf = checked_logf(target, &y, iteration)?;
        path.push(PathPoint { state: y, logf });
        let refs: Vec<&PathPoint> = path.iter().collect();
        let la = dr_log_alpha(&refs, proposal, spec.dr_scale_factor);
        let u = rng.uniform();
        if u < la.exp() {
            let PathPoint { state, logf } = path.pop().expect("path holds the candidate");
            return Ok(Attempt {
                accepted: Some(Candidate { state, logf, stage: stage as u32 }),
                stages_tried: stage as u32 + 1,
            });
        }
    }
    Ok(Attempt { accepted: None, stages_tried: spec.dr_stage_count as u32 + 1 })
}

/// Smallest row index whose logf is within `ndim/2` of the chain maximum.
pub fn detect_burnin(chain: &CompactChain) -> usize {
    burnin_of(chain.rows.iter().map(|r| r.logf), chain.ndim)
}

fn burnin_of(logf: impl Iterator<Item = f64> + Clone, ndim: usize) -> usize {
    let max = logf.clone().fold(f64::NEG_INFINITY, f64::max);
    let thr = max - ndim as f64 / 2.0;
    logf.take_while(|l| *l < thr).count()
}

/// Running version of [`detect_burnin`]: the pointer only moves forward.
#[derive(Clone, Debug, PartialEq)]
struct BurninTracker {
    max_logf: f64,
    loc: usize,
}

impl BurninTracker {
    fn new() -> Self {
        BurninTracker { max_logf: f64::NEG_INFINITY, loc: 0 }
    }

    /// `rows` already contains the newest row.
    fn observe(&mut self, rows: &[ChainRow], ndim: usize) -> usize {
        let newest = rows[rows.len() - 1].logf;
        if newest > self.max_logf {
            self.max_logf = newest;
            let thr = self.max_logf - ndim as f64 / 2.0;
            while rows[self.loc].logf < thr {
                self.loc += 1;
            }
        }
        self.loc
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerState {
    pub current: Vec<f64>,
    pub current_logf: f64,
    /// Verbose iterations so far, the live row included.
    pub iteration: u64,
    /// Emitted rows plus the live row.
    pub accepted_count: u64,
    pub proposal: ProposalState,
    /// One stream per worker rank.
    pub rngs: Vec<RngState>,
    pub pending_weight: u64,
    /// Rank that produced the live row; 0 for the start point.
    pub live_process_id: u32,
    pub live_dr_stage: u32,
    pub last_measure: f64,
    pub adaptation_history: Vec<AdaptationRecord>,
    pub rows: Vec<ChainRow>,
    pub absorbed_rows: usize,
    next_adaptation: u64,
    window_start: (u64, u64),
    burnin: BurninTracker,
}

fn next_multiple(iteration: u64, period: u64) -> u64 {
    (iteration / period + 1) * period
}

impl SamplerState {
    /// Chain at the start point with one stream per worker, streams
    /// `first_stream ..` in rank order.
    pub fn new<T: LogDensity + ?Sized>(spec: &SimSpec, target: &T, first_stream: u64) -> Result<Self> {
        if target.ndim() != spec.ndim {
            return Err(Error::Usage(format!(
                "target has {} dimensions, specification has {}",
                target.ndim(),
                spec.ndim
            )));
        }
        let logf = checked_logf(target, &spec.start_point, 1)?;
        if logf == f64::NEG_INFINITY {
            return Err(Error::Usage("start point lies outside the target's support".into()));
        }
        let rngs = (0..spec.worker_count() as u64)
            .map(|r| RngState::new(spec.seed, first_stream + r))
            .collect();
        Ok(SamplerState {
            current: spec.start_point.clone(),
            current_logf: logf,
            iteration: 1,
            accepted_count: 1,
            proposal: ProposalState::initial(&spec.start_point, spec.proposal_scale, spec.cov_epsilon),
            rngs,
            pending_weight: 1,
            live_process_id: 0,
            live_dr_stage: 0,
            last_measure: 0.0,
            adaptation_history: Vec::new(),
            rows: Vec::new(),
            absorbed_rows: 0,
            next_adaptation: next_multiple(1, spec.adaptation_period),
            window_start: (1, 1),
            burnin: BurninTracker::new(),
        })
    }

    /// Rebuilds the state at `ckpt`; `rows` are the chain rows emitted up to
    /// that checkpoint and `history` the adaptation records so far.
    pub fn from_checkpoint(
        spec: &SimSpec,
        ckpt: &RestartCheckpoint,
        rows: Vec<ChainRow>,
        history: Vec<AdaptationRecord>,
    ) -> Result<Self> {
        if rows.len() as u64 != ckpt.rows_emitted {
            return Err(Error::Usage(format!(
                "checkpoint covers {} rows, {} supplied",
                ckpt.rows_emitted,
                rows.len()
            )));
        }
        let mut burnin = BurninTracker::new();
        for n in 1..=rows.len() {
            burnin.observe(&rows[..n], spec.ndim);
        }
        Ok(SamplerState {
            current: ckpt.current_state.clone(),
            current_logf: ckpt.current_logf,
            iteration: ckpt.iteration,
            accepted_count: ckpt.accepted_count,
            proposal: ckpt.proposal.clone(),
            rngs: ckpt.rngs.clone(),
            pending_weight: ckpt.pending_weight,
            live_process_id: ckpt.live_process_id,
            live_dr_stage: ckpt.live_dr_stage,
            last_measure: ckpt.last_measure,
            adaptation_history: history,
            rows,
            absorbed_rows: ckpt.absorbed_rows as usize,
            next_adaptation: next_multiple(ckpt.iteration, spec.adaptation_period),
            window_start: (ckpt.iteration, ckpt.accepted_count),
            burnin,
        })
    }

    pub fn checkpoint(&self, checkpoint_index: u64) -> RestartCheckpoint {
        RestartCheckpoint {
            checkpoint_index,
            iteration: self.iteration,
            rows_emitted: self.rows.len() as u64,
            absorbed_rows: self.absorbed_rows as u64,
            accepted_count: self.accepted_count,
            pending_weight: self.pending_weight,
            current_logf: self.current_logf,
            current_state: self.current.clone(),
            live_process_id: self.live_process_id,
            live_dr_stage: self.live_dr_stage,
            last_measure: self.last_measure,
            adaptation: self.adaptation_history.last().copied().filter(|a| a.iteration == self.iteration),
            rngs: self.rngs.clone(),
            proposal: self.proposal.clone(),
        }
    }

    pub fn ndim(&self) -> usize {
        self.current.len()
    }

    pub fn burnin_loc(&self) -> usize {
        self.burnin.loc
    }

    /// Closes the live row and appends it to `rows`.
    fn emit_live(&mut self) {
        let row = ChainRow {
            process_id: self.live_process_id,
            dr_stage: self.live_dr_stage,
            mean_accept_rate: self.accepted_count as f64 / self.iteration as f64,
            adaptation_measure: self.last_measure,
            burnin_loc: 0,
            weight: self.pending_weight,
            logf: self.current_logf,
            state: self.current.clone(),
        };
        self.rows.push(row);
        let d = self.ndim();
        let loc = self.burnin.observe(&self.rows, d);
        self.rows.last_mut().expect("row just pushed").burnin_loc = loc as u64;
    }

    /// Applies worker verdicts in rank order: the lowest acceptor wins and
    /// the lower ranks count as rejected iterations.
    pub fn apply_verdicts(&mut self, verdicts: Vec<Attempt>) -> Option<u32> {
        let m = verdicts.len() as u64;
        let winner = verdicts.into_iter().enumerate().find_map(|(i, a)| a.accepted.map(|c| (i, c)));
        match winner {
            Some((i, cand)) => {
                self.pending_weight += i as u64;
                self.iteration += i as u64;
                self.emit_live();
                self.current = cand.state;
                self.current_logf = cand.logf;
                self.live_process_id = i as u32 + 1;
                self.live_dr_stage = cand.stage;
                self.accepted_count += 1;
                self.pending_weight = 1;
                self.iteration += 1;
                Some(i as u32 + 1)
            }
            None => {
                self.pending_weight += m;
                self.iteration += m;
                None
            }
        }
    }

    /// One fork-join cycle over `min(workers, remaining)` ranks. Returns the
    /// winning rank, if any.
    pub fn cycle<T: LogDensity + ?Sized>(&mut self, target: &T, spec: &SimSpec, exec: Execution) -> Result<Option<u32>> {
        let remaining = spec.chain_size.saturating_sub(self.iteration);
        if remaining == 0 {
            return Ok(None);
        }
        let m = (self.rngs.len() as u64).min(remaining) as usize;
        let head = PathPoint { state: self.current.clone(), logf: self.current_logf };
        let base = self.iteration + 1;
        let proposal = &self.proposal;
        let verdicts: Vec<Result<Attempt>> = if m == 1 {
            vec![attempt(proposal, &head, spec, target, &mut self.rngs[0], base)]
        } else {
            exec::map_mut(exec, &mut self.rngs[..m], |i, rng| {
                attempt(proposal, &head, spec, target, rng, base + i as u64)
            })
        };
        let verdicts = verdicts.into_iter().collect::<Result<Vec<_>>>()?;
        Ok(self.apply_verdicts(verdicts))
    }

    /// Single-worker iteration; returns the row emitted by an acceptance.
    pub fn step<T: LogDensity + ?Sized>(&mut self, target: &T, spec: &SimSpec) -> Result<Option<ChainRow>> {
        let before = self.rows.len();
        self.cycle(target, spec, Execution::Sequential)?;
        Ok((self.rows.len() > before).then(|| self.rows[before].clone()))
    }

    pub fn adaptation_due(&self) -> bool {
        self.iteration >= self.next_adaptation
    }

    /// Adapts the proposal if an adaptation point has been reached.
    pub fn adapt_if_due(&mut self, spec: &SimSpec) -> Result<Option<AdaptationRecord>> {
        if !self.adaptation_due() {
            return Ok(None);
        }
        self.adapt(spec).map(Some)
    }

    /// Folds the rows emitted since the last absorption into the proposal and
    /// records the adaptation measure. Absorption is postponed while too few
    /// distinct states exist to span every dimension; the measure is then 0.
    fn adapt(&mut self, spec: &SimSpec) -> Result<AdaptationRecord> {
        let iteration = self.iteration;
        let numerical = |msg: String| Error::Numerical { iteration, msg };
        let d = self.ndim();
        let greedy = (self.adaptation_history.len() as u64) < spec.greedy_adaptation_count;
        let window = &self.rows[self.absorbed_rows..];
        let spans = if greedy {
            window.len() > d
        } else {
            self.proposal.distinct_count as usize + window.len() > d
        };
        let old = self.proposal.clone();
        let mut next = old.clone();
        if spans {
            let batch: Vec<(&[f64], u64)> = window
                .iter()
                .map(|r| (r.state.as_slice(), if greedy { 1 } else { r.weight }))
                .collect();
            let updated = if greedy { old.recentered(&batch) } else { old.update_mean_cov(&batch) };
            next = updated.map_err(|e| {
                numerical(format!("proposal covariance not positive definite (epsilon {:e})", e.epsilon))
            })?;
            self.absorbed_rows = self.rows.len();
        }
        if let Some((lo, hi)) = spec.target_acceptance_window {
            let (it0, acc0) = self.window_start;
            let rate = (self.accepted_count - acc0) as f64 / (iteration - it0).max(1) as f64;
            let factor = if rate < lo {
                0.8
            } else if rate > hi {
                1.25
            } else {
                1.0
            };
            if factor != 1.0 {
                next.scale *= factor;
                next.factorize().map_err(|e| {
                    numerical(format!("rescaled proposal not positive definite (epsilon {:e})", e.epsilon))
                })?;
            }
        }
        next.adaptation_count += 1;
        let measure = adaptation_measure(&old, &next).map_err(|e| match e {
            Error::Numerical { msg, .. } => numerical(msg),
            other => other,
        })?;
        self.proposal = next;
        self.last_measure = measure;
        let record = AdaptationRecord { iteration, measure };
        self.adaptation_history.push(record);
        self.window_start = (iteration, self.accepted_count);
        self.next_adaptation = next_multiple(iteration, spec.adaptation_period);
        Ok(record)
    }

    /// Emits the live row; the chain then holds exactly `iteration` verbose
    /// steps.
    pub fn finish(&mut self) {
        self.emit_live();
    }

    pub fn chain(&self) -> CompactChain {
        CompactChain::from_rows(self.ndim(), self.rows.clone())
    }
}

/// What to do when outputs for the prefix already exist.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ExistingOutputs {
    /// Continue an incomplete run; a complete one is an error.
    #[default]
    Resume,
    /// Treat any existing output as an error.
    Refuse,
    /// Delete and start over.
    Overwrite,
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub execution: Execution,
    pub existing: ExistingOutputs,
    /// Test hook: stop with [`Error::Interrupted`] right after the first
    /// checkpoint at or beyond this iteration has been flushed.
    pub interrupt_at: Option<u64>,
    /// Stream of rank 1; rank `r` uses `first_stream + r − 1`.
    pub first_stream: u64,
    /// Target description echoed in the report.
    pub target_label: String,
    /// Configuration text echoed in the report.
    pub config_echo: Option<String>,
    pub progress_interval: u64,
    /// When false nothing is written and no existing files are consulted.
    pub write_files: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            execution: Execution::default(),
            existing: ExistingOutputs::default(),
            interrupt_at: None,
            first_stream: 1,
            target_label: "user".into(),
            config_echo: None,
            progress_interval: 1000,
            write_files: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SimulationOutputs {
    pub chain: CompactChain,
    pub refined: RefinedSample,
    pub report: ReportStats,
    pub adaptation_history: Vec<AdaptationRecord>,
    /// `None` for in-memory runs.
    pub paths: Option<OutputPaths>,
}

/// Runs `spec` on `target`, writing all output files. Incomplete outputs for
/// the same prefix are resumed.
pub fn run_sampler<T: LogDensity + ?Sized>(spec: &SimSpec, target: &T) -> Result<SimulationOutputs> {
    run_with(spec, target, &RunOptions::default())
}

/// Continues an interrupted run. Fails if there is nothing to resume or the
/// run is already complete.
pub fn resume<T: LogDensity + ?Sized>(spec: &SimSpec, target: &T) -> Result<SimulationOutputs> {
    resume_with(spec, target, &RunOptions::default())
}

pub fn resume_with<T: LogDensity + ?Sized>(spec: &SimSpec, target: &T, opts: &RunOptions) -> Result<SimulationOutputs> {
    let paths = OutputPaths::for_spec(spec);
    if inspect(spec, &paths).is_none() {
        return Err(Error::RestartRefused(format!(
            "no outputs to resume for prefix {}",
            spec.output_prefix
        )));
    }
    let opts = RunOptions { existing: ExistingOutputs::Resume, ..opts.clone() };
    run_with(spec, target, &opts)
}

/// Runs without touching the file system.
pub fn simulate<T: LogDensity + ?Sized>(spec: &SimSpec, target: &T, opts: &RunOptions) -> Result<SimulationOutputs> {
    run_with(spec, target, &RunOptions { write_files: false, ..opts.clone() })
}

fn check_runnable<T: LogDensity + ?Sized>(spec: &SimSpec, target: &T) -> Result<()> {
    spec.validate()?;
    if target.ndim() != spec.ndim {
        return Err(Error::Usage(format!(
            "target has {} dimensions, specification has {}",
            target.ndim(),
            spec.ndim
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Existing {
    Incomplete,
    Complete,
}

fn inspect(spec: &SimSpec, paths: &OutputPaths) -> Option<Existing> {
    if !paths.all().iter().any(|p| p.exists()) {
        return None;
    }
    let report_done = read_report(&paths.report).is_ok_and(|r| r.status == RunStatus::Complete);
    let chain_done = read_chain_file(&paths.chain).is_ok_and(|c| c.chain.total_weight() >= spec.chain_size);
    Some(if report_done && chain_done { Existing::Complete } else { Existing::Incomplete })
}

/// Like [`run_sampler`] with explicit options.
pub fn run_with<T: LogDensity + ?Sized>(spec: &SimSpec, target: &T, opts: &RunOptions) -> Result<SimulationOutputs> {
    if spec.parallelism == Parallelism::MultiChain {
        return Err(Error::Usage(
            "multi_chain runs go through parallel::run_multi_chain".into(),
        ));
    }
    run_member(spec, target, opts)
}

/// One chain of any parallelism mode; multi-chain members come through here.
pub(crate) fn run_member<T: LogDensity + ?Sized>(
    spec: &SimSpec,
    target: &T,
    opts: &RunOptions,
) -> Result<SimulationOutputs> {
    check_runnable(spec, target)?;
    if !opts.write_files {
        let mut state = SamplerState::new(spec, target, opts.first_stream)?;
        while state.iteration < spec.chain_size {
            state.cycle(target, spec, opts.execution)?;
            state.adapt_if_due(spec)?;
        }
        state.finish();
        return Ok(finalize(spec, state, opts, None));
    }
    let paths = OutputPaths::for_spec(spec);
    let prefix = spec.output_prefix.clone();
    let (state, sink) = match (inspect(spec, &paths), opts.existing) {
        (None, _) => fresh(spec, target, &paths, opts)?,
        (Some(_), ExistingOutputs::Overwrite) => {
            for p in paths.all() {
                if p.exists() {
                    std::fs::remove_file(p).map_err(|e| Error::io(p, e))?;
                }
            }
            fresh(spec, target, &paths, opts)?
        }
        (Some(Existing::Complete), _) => return Err(Error::AlreadyComplete(prefix)),
        (Some(Existing::Incomplete), ExistingOutputs::Refuse) => {
            return Err(Error::RestartRefused(format!(
                "incomplete outputs exist for prefix {prefix}; resume or overwrite them"
            )))
        }
        (Some(Existing::Incomplete), ExistingOutputs::Resume) => restore(spec, &paths, opts)?,
    };
    drive(spec, target, state, sink, opts, paths)
}

struct Sink {
    chain: ChainWriter,
    restart: RestartWriter,
    progress: ProgressWriter,
    rows_written: usize,
    checkpoints: u64,
    started: Instant,
    elapsed_offset: f64,
}

impl Sink {
    /// Write-ahead order: the checkpoint is on disk before the rows it covers.
    fn checkpoint(&mut self, state: &SamplerState) -> Result<()> {
        self.restart.append(&state.checkpoint(self.checkpoints))?;
        self.checkpoints += 1;
        self.progress.flush()?;
        self.flush_rows(state)
    }

    fn flush_rows(&mut self, state: &SamplerState) -> Result<()> {
        self.chain.append(&state.rows[self.rows_written..])?;
        self.rows_written = state.rows.len();
        Ok(())
    }

    fn progress(&mut self, state: &SamplerState) -> Result<()> {
        self.progress.write(&ProgressLine {
            iteration: state.iteration,
            accepted: state.accepted_count,
            mean_accept_rate: state.accepted_count as f64 / state.iteration as f64,
            adaptation_measure: state.last_measure,
            elapsed_seconds: self.elapsed_offset + self.started.elapsed().as_secs_f64(),
        })
    }
}

fn running_report(spec: &SimSpec, paths: &OutputPaths, opts: &RunOptions) -> Result<()> {
    write_report(
        &ReportStats::running(spec, opts.target_label.clone(), opts.config_echo.clone()),
        &paths.report,
    )
}

fn fresh<T: LogDensity + ?Sized>(
    spec: &SimSpec,
    target: &T,
    paths: &OutputPaths,
    opts: &RunOptions,
) -> Result<(SamplerState, Sink)> {
    let state = SamplerState::new(spec, target, opts.first_stream)?;
    running_report(spec, paths, opts)?;
    let mut sink = Sink {
        chain: ChainWriter::create(&paths.chain, spec.ndim, spec.chain_format, spec.file_encoding)?,
        restart: RestartWriter::create(&paths.restart, spec.file_encoding)?,
        progress: ProgressWriter::create(&paths.progress)?,
        rows_written: 0,
        checkpoints: 0,
        started: Instant::now(),
        elapsed_offset: 0.0,
    };
    sink.checkpoint(&state)?;
    Ok((state, sink))
}

/// Restart protocol: check the spec against the report echo, pick the latest
/// checkpoint fully covered by the rows on disk, cut every file back to it
/// and rebuild the state.
fn restore(spec: &SimSpec, paths: &OutputPaths, opts: &RunOptions) -> Result<(SamplerState, Sink)> {
    let refuse = |msg: String| Error::RestartRefused(msg);
    let report = read_report(&paths.report)
        .map_err(|e| refuse(format!("cannot read {}: {e}", paths.report.display())))?;
    let mismatched = spec.restart_mismatches(&report.spec);
    if !mismatched.is_empty() {
        return Err(refuse(format!(
            "specification differs from the original run in: {}",
            mismatched.join(", ")
        )));
    }
    if !paths.restart.exists() {
        return Err(refuse(format!("missing restart file {}", paths.restart.display())));
    }
    let restart = read_restart_file(&paths.restart)?;
    let disk = read_chain_file(&paths.chain)?.chain.rows;
    let mut covered = vec![0u64; disk.len() + 1];
    for (i, r) in disk.iter().enumerate() {
        covered[i + 1] = covered[i] + r.weight;
    }
    let idx = restart
        .checkpoints
        .iter()
        .rposition(|c| {
            let n = c.rows_emitted as usize;
            n <= disk.len()
                && covered[n] == c.iteration - c.pending_weight
                && c.iteration <= spec.chain_size
                && c.rngs.len() == spec.worker_count()
                && c.ndim() == spec.ndim
        })
        .ok_or_else(|| refuse("no usable checkpoint in the restart file".into()))?;
    let ckpts = &restart.checkpoints[..=idx];
    let ckpt = &ckpts[idx];
    let rows: Vec<ChainRow> = disk[..ckpt.rows_emitted as usize].to_vec();
    let history = ckpts.iter().filter_map(|c| c.adaptation).collect();
    let state = SamplerState::from_checkpoint(spec, ckpt, rows, history)?;

    running_report(spec, paths, opts)?;
    let restart_w = RestartWriter::rewrite(&paths.restart, spec.file_encoding, ckpts)?;
    let chain_w = rewrite_chain(&paths.chain, spec.ndim, &state.rows, spec.chain_format, spec.file_encoding)?;
    let elapsed_offset = if paths.progress.exists() {
        truncate_progress(&paths.progress, ckpt.iteration)?;
        read_progress(&paths.progress)?.last().map_or(0.0, |l| l.elapsed_seconds)
    } else {
        0.0
    };
    let progress = if paths.progress.exists() {
        ProgressWriter::append_to(&paths.progress)?
    } else {
        ProgressWriter::create(&paths.progress)?
    };
    let sink = Sink {
        chain: chain_w,
        restart: restart_w,
        progress,
        rows_written: state.rows.len(),
        checkpoints: ckpts.len() as u64,
        started: Instant::now(),
        elapsed_offset,
    };
    Ok((state, sink))
}

fn drive<T: LogDensity + ?Sized>(
    spec: &SimSpec,
    target: &T,
    mut state: SamplerState,
    mut sink: Sink,
    opts: &RunOptions,
    paths: OutputPaths,
) -> Result<SimulationOutputs> {
    let every = opts.progress_interval.max(1);
    while state.iteration < spec.chain_size {
        let before = state.iteration;
        state.cycle(target, spec, opts.execution)?;
        if state.iteration / every > before / every {
            sink.progress(&state)?;
        }
        if state.adapt_if_due(spec)?.is_some() {
            sink.checkpoint(&state)?;
            if opts.interrupt_at.is_some_and(|at| state.iteration >= at) {
                return Err(Error::Interrupted { iteration: state.iteration });
            }
        }
    }
    state.finish();
    sink.flush_rows(&state)?;
    sink.progress.flush()?;
    let out = finalize(spec, state, opts, Some(paths));
    let paths = out.paths.as_ref().expect("file-backed run");
    write_sample(&out.refined, &paths.sample)?;
    write_report(&out.report, &paths.report)?;
    Ok(out)
}

fn chain_bytes(chain: &CompactChain, encoding: FileEncoding, format: ChainFormat) -> u64 {
    match encoding {
        FileEncoding::Ascii => ascii_chain_bytes(chain, format),
        FileEncoding::Binary => binary_chain_bytes(chain, format),
    }
}

fn finalize(spec: &SimSpec, state: SamplerState, opts: &RunOptions, paths: Option<OutputPaths>) -> SimulationOutputs {
    let chain = state.chain();
    let burnin = state.burnin_loc();
    let refined = refine_with(&chain, burnin, opts.execution);
    let ess = effective_sample_size_with(&chain, burnin, opts.execution);
    let mut report = ReportStats::running(spec, opts.target_label.clone(), opts.config_echo.clone());
    report.status = RunStatus::Complete;
    report.iterations = state.iteration;
    report.accepted_count = state.accepted_count;
    report.mean_accept_rate = state.accepted_count as f64 / state.iteration as f64;
    report.burnin_loc = burnin as u64;
    report.iac_history = refined.iac_history.clone();
    report.ess = ess;
    report.refined_size = refined.len() as u64;
    report.compact_chain_bytes = chain_bytes(&chain, spec.file_encoding, ChainFormat::Compact);
    report.verbose_chain_bytes = chain_bytes(&chain, spec.file_encoding, ChainFormat::Verbose);
    if spec.parallelism == Parallelism::SingleChain {
        report.parallel = Some(crate::parallel::parallel_stats(&chain, state.iteration, spec.num_workers));
    }
    SimulationOutputs {
        chain,
        refined,
        report,
        adaptation_history: state.adaptation_history,
        paths,
    }
}
