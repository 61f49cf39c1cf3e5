//! Readers and writers for the simulation output files.
//!
//! | file | content |
//! |---|---|
//! | `<prefix>_chain.txt` / `.bin` | compact or verbose chain |
//! | `<prefix>_restart.txt` / `.bin` | one checkpoint per adaptation event |
//! | `<prefix>_sample.txt` | refined sample |
//! | `<prefix>_report.txt` | spec echo and run statistics |
//! | `<prefix>_progress.txt` | one line per 1000 iterations |
//!
//! ASCII reals are written with 17 significant digits, which round-trips
//! every `f64` exactly.

mod binary;
mod chain;
mod progress;
mod report;
mod restart;
mod sample;

use std::path::{Path, PathBuf};

pub use chain::{
    ascii_chain_bytes, binary_chain_bytes, read_chain, read_chain_file, write_chain, ChainFile, ChainWriter,
};
pub(crate) use chain::rewrite_chain;
pub use progress::{read_progress, truncate_progress, ProgressLine, ProgressWriter};
pub use report::{read_report, write_report, ParallelStats, ReportStats, RunStatus};
pub use restart::{read_restart, read_restart_file, write_restart_checkpoint, RestartCheckpoint, RestartFile, RestartWriter};
pub use sample::{read_sample, write_sample, SampleTable};

use crate::spec::{FileEncoding, SimSpec};

pub const CHAIN_MAGIC: &[u8; 4] = b"DRMF";
pub const RESTART_MAGIC: &[u8; 4] = b"DRMR";
pub const FORMAT_VERSION: u32 = 1;

pub const CHAIN_META_COLUMNS: [&str; 7] = [
    "ProcessID",
    "DelayedRejectionStage",
    "MeanAcceptanceRate",
    "AdaptationMeasure",
    "BurninLocation",
    "SampleWeight",
    "SampleLogFunc",
];

/// 17 significant digits in scientific notation.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

/// One unique accepted state of the chain and the number of consecutive
/// iterations the chain stayed there.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainRow {
    /// 1-based rank of the worker that proposed the state.
    pub process_id: u32,
    /// Stage at which the state was accepted, 0 for the first try.
    pub dr_stage: u32,
    pub mean_accept_rate: f64,
    pub adaptation_measure: f64,
    pub burnin_loc: u64,
    pub weight: u64,
    pub logf: f64,
    pub state: Vec<f64>,
}

impl ChainRow {
    fn same_apart_from_weight(&self, other: &ChainRow) -> bool {
        self.process_id == other.process_id
            && self.dr_stage == other.dr_stage
            && self.mean_accept_rate.to_bits() == other.mean_accept_rate.to_bits()
            && self.adaptation_measure.to_bits() == other.adaptation_measure.to_bits()
            && self.burnin_loc == other.burnin_loc
            && self.logf.to_bits() == other.logf.to_bits()
            && self.state.len() == other.state.len()
            && self.state.iter().zip(&other.state).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompactChain {
    pub header: Vec<String>,
    pub ndim: usize,
    pub rows: Vec<ChainRow>,
}

impl CompactChain {
    pub fn new(ndim: usize) -> Self {
        CompactChain {
            header: chain_header(ndim),
            ndim,
            rows: Vec::new(),
        }
    }

    pub fn from_rows(ndim: usize, rows: Vec<ChainRow>) -> Self {
        CompactChain {
            header: chain_header(ndim),
            ndim,
            rows,
        }
    }

    pub fn total_weight(&self) -> u64 {
        self.rows.iter().map(|r| r.weight).sum()
    }

    pub fn verbose_len(&self) -> u64 {
        self.total_weight()
    }

    /// Merges consecutive rows that differ only in weight.
    pub fn recompact(rows: Vec<ChainRow>) -> Vec<ChainRow> {
        let mut out: Vec<ChainRow> = Vec::with_capacity(rows.len());
        for row in rows {
            match out.last_mut() {
                Some(last) if last.same_apart_from_weight(&row) => last.weight += row.weight,
                _ => out.push(row),
            }
        }
        out
    }

    /// The verbose expansion of one coordinate (`None` selects logf).
    pub fn expand_column(&self, column: Option<usize>, from_row: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.rows[from_row.min(self.rows.len())..].iter().map(|r| r.weight as usize).sum());
        for row in &self.rows[from_row.min(self.rows.len())..] {
            let v = match column {
                None => row.logf,
                Some(i) => row.state[i],
            };
            out.extend(std::iter::repeat_n(v, row.weight as usize));
        }
        out
    }
}

pub fn chain_header(ndim: usize) -> Vec<String> {
    CHAIN_META_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain((1..=ndim).map(|i| format!("var{i}")))
        .collect()
}

/// Paths of the five output files for one prefix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OutputPaths {
    pub prefix: PathBuf,
    pub chain: PathBuf,
    pub restart: PathBuf,
    pub sample: PathBuf,
    pub report: PathBuf,
    pub progress: PathBuf,
}

impl OutputPaths {
    pub fn new(prefix: impl AsRef<Path>, encoding: FileEncoding) -> Self {
        let prefix = prefix.as_ref().to_path_buf();
        let ext = match encoding {
            FileEncoding::Ascii => "txt",
            FileEncoding::Binary => "bin",
        };
        let with = |suffix: &str| {
            let mut s = prefix.clone().into_os_string();
            s.push(suffix);
            PathBuf::from(s)
        };
        OutputPaths {
            chain: with(&format!("_chain.{ext}")),
            restart: with(&format!("_restart.{ext}")),
            sample: with("_sample.txt"),
            report: with("_report.txt"),
            progress: with("_progress.txt"),
            prefix,
        }
    }

    pub fn for_spec(spec: &SimSpec) -> Self {
        Self::new(&spec.output_prefix, spec.file_encoding)
    }

    /// A derived file `<prefix>_<name>`.
    pub fn sibling(&self, name: &str) -> PathBuf {
        let mut s = self.prefix.clone().into_os_string();
        s.push("_");
        s.push(name);
        PathBuf::from(s)
    }

    pub fn all(&self) -> [&Path; 5] {
        [&self.chain, &self.restart, &self.sample, &self.report, &self.progress]
    }
}

pub(crate) fn create_parent(path: &Path) -> crate::error::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| crate::error::Error::io(parent, e))?;
        }
    }
    Ok(())
}
