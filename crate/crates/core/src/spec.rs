//! The simulation specification record.
//!
//! Every field has a canonical textual form (`field_value` / `set_field`) that
//! is shared by the config parser and the report echo, so a report parses
//! back to the exact specification it was written from.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::chain_io::fmt_real;
use crate::error::{Error, Result};

pub const MAX_DR_STAGES: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChainFormat {
    Compact,
    Verbose,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FileEncoding {
    Ascii,
    Binary,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parallelism {
    None,
    SingleChain,
    MultiChain,
}

macro_rules! text_enum {
    ($ty:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$variant => $text),+ })
            }
        }
        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s.trim() {
                    $($text => Ok($ty::$variant),)+
                    other => Err(format!(
                        "unknown {} '{}' (expected one of: {})",
                        stringify!($ty), other, [$($text),+].join(", ")
                    )),
                }
            }
        }
    };
}

text_enum!(ChainFormat { Compact => "compact", Verbose => "verbose" });
text_enum!(FileEncoding { Ascii => "ascii", Binary => "binary" });
text_enum!(Parallelism { None => "none", SingleChain => "single_chain", MultiChain => "multi_chain" });

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    User,
    Default,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::User => "user",
            Provenance::Default => "default",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimSpec {
    pub ndim: usize,
    /// Total verbose iterations, i.e. the sum of all row weights.
    pub chain_size: u64,
    pub start_point: Vec<f64>,
    pub seed: u64,
    pub output_prefix: String,
    pub chain_format: ChainFormat,
    pub file_encoding: FileEncoding,
    pub adaptation_period: u64,
    pub greedy_adaptation_count: u64,
    pub dr_stage_count: usize,
    pub dr_scale_factor: f64,
    pub proposal_scale: f64,
    /// Relative regularization: the proposal adds `cov_epsilon · tr(cov)/ndim`
    /// to the diagonal before factorizing.
    pub cov_epsilon: f64,
    pub parallelism: Parallelism,
    pub num_workers: usize,
    pub target_acceptance_window: Option<(f64, f64)>,
    user_set: BTreeSet<&'static str>,
}

impl SimSpec {
    pub const FIELDS: [&'static str; 16] = [
        "ndim",
        "chain_size",
        "start_point",
        "seed",
        "output_prefix",
        "chain_format",
        "file_encoding",
        "adaptation_period",
        "greedy_adaptation_count",
        "dr_stage_count",
        "dr_scale_factor",
        "proposal_scale",
        "cov_epsilon",
        "parallelism",
        "num_workers",
        "target_acceptance_window",
    ];

    /// Defaults for an `ndim`-dimensional problem.
    pub fn new(ndim: usize) -> Self {
        let d = ndim.max(1);
        SimSpec {
            ndim,
            chain_size: 100_000,
            start_point: vec![0.0; ndim],
            seed: 1,
            output_prefix: "dramforge".to_string(),
            chain_format: ChainFormat::Compact,
            file_encoding: FileEncoding::Ascii,
            adaptation_period: 100 * d as u64,
            greedy_adaptation_count: 0,
            dr_stage_count: 1,
            dr_scale_factor: 0.5,
            proposal_scale: 2.38 / (d as f64).sqrt(),
            cov_epsilon: 1e-12,
            parallelism: Parallelism::None,
            num_workers: 1,
            target_acceptance_window: None,
            user_set: BTreeSet::new(),
        }
    }

    pub fn provenance(&self, field: &str) -> Provenance {
        if self.user_set.contains(field) {
            Provenance::User
        } else {
            Provenance::Default
        }
    }

    pub fn set_provenance(&mut self, field: &str, provenance: Provenance) {
        match provenance {
            Provenance::User => self.mark(field),
            Provenance::Default => {
                self.user_set.remove(field);
            }
        }
    }

    fn mark(&mut self, field: &str) {
        if let Some(f) = Self::FIELDS.iter().find(|f| **f == field) {
            self.user_set.insert(f);
        }
    }

    pub fn chain_size(mut self, v: u64) -> Self {
        self.chain_size = v;
        self.mark("chain_size");
        self
    }
    pub fn start_point(mut self, v: Vec<f64>) -> Self {
        self.start_point = v;
        self.mark("start_point");
        self
    }
    pub fn seed(mut self, v: u64) -> Self {
        self.seed = v;
        self.mark("seed");
        self
    }
    pub fn output_prefix(mut self, v: impl Into<String>) -> Self {
        self.output_prefix = v.into();
        self.mark("output_prefix");
        self
    }
    pub fn chain_format(mut self, v: ChainFormat) -> Self {
        self.chain_format = v;
        self.mark("chain_format");
        self
    }
    pub fn file_encoding(mut self, v: FileEncoding) -> Self {
        self.file_encoding = v;
        self.mark("file_encoding");
        self
    }
    pub fn adaptation_period(mut self, v: u64) -> Self {
        self.adaptation_period = v;
        self.mark("adaptation_period");
        self
    }
    pub fn greedy_adaptation_count(mut self, v: u64) -> Self {
        self.greedy_adaptation_count = v;
        self.mark("greedy_adaptation_count");
        self
    }
    pub fn dr_stage_count(mut self, v: usize) -> Self {
        self.dr_stage_count = v;
        self.mark("dr_stage_count");
        self
    }
    pub fn dr_scale_factor(mut self, v: f64) -> Self {
        self.dr_scale_factor = v;
        self.mark("dr_scale_factor");
        self
    }
    pub fn proposal_scale(mut self, v: f64) -> Self {
        self.proposal_scale = v;
        self.mark("proposal_scale");
        self
    }
    pub fn cov_epsilon(mut self, v: f64) -> Self {
        self.cov_epsilon = v;
        self.mark("cov_epsilon");
        self
    }
    pub fn parallelism(mut self, v: Parallelism) -> Self {
        self.parallelism = v;
        self.mark("parallelism");
        self
    }
    pub fn num_workers(mut self, v: usize) -> Self {
        self.num_workers = v;
        self.mark("num_workers");
        self
    }
    pub fn target_acceptance_window(mut self, v: Option<(f64, f64)>) -> Self {
        self.target_acceptance_window = v;
        self.mark("target_acceptance_window");
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Spec(msg));
        if self.ndim == 0 {
            return bad("ndim must be positive".into());
        }
        if self.chain_size == 0 {
            return bad("chain_size must be positive".into());
        }
        if self.start_point.len() != self.ndim {
            return bad(format!(
                "start_point has {} entries, ndim is {}",
                self.start_point.len(),
                self.ndim
            ));
        }
        if self.start_point.iter().any(|x| !x.is_finite()) {
            return bad("start_point entries must be finite".into());
        }
        if self.output_prefix.trim().is_empty() {
            return bad("output_prefix must not be empty".into());
        }
        if self.adaptation_period == 0 {
            return bad("adaptation_period must be positive".into());
        }
        if self.dr_stage_count > MAX_DR_STAGES {
            return bad(format!(
                "dr_stage_count {} exceeds the supported maximum {MAX_DR_STAGES}",
                self.dr_stage_count
            ));
        }
        if !(self.dr_scale_factor > 0.0 && self.dr_scale_factor < 1.0) {
            return bad(format!("dr_scale_factor must lie in (0,1), got {}", self.dr_scale_factor));
        }
        if !(self.proposal_scale > 0.0 && self.proposal_scale.is_finite()) {
            return bad(format!("proposal_scale must be positive, got {}", self.proposal_scale));
        }
        if !(self.cov_epsilon > 0.0 && self.cov_epsilon.is_finite()) {
            return bad(format!("cov_epsilon must be positive, got {}", self.cov_epsilon));
        }
        if self.num_workers == 0 {
            return bad("num_workers must be positive".into());
        }
        if self.parallelism == Parallelism::MultiChain && self.num_workers < 2 {
            return bad("multi_chain parallelism needs num_workers >= 2".into());
        }
        if let Some((lo, hi)) = self.target_acceptance_window {
            if !(0.0 < lo && lo < hi && hi < 1.0) {
                return bad(format!("target_acceptance_window ({lo},{hi}) must satisfy 0<lo<hi<1"));
            }
        }
        Ok(())
    }

    /// Number of independent RNG streams / workers the run drives.
    pub fn worker_count(&self) -> usize {
        match self.parallelism {
            Parallelism::SingleChain => self.num_workers,
            _ => 1,
        }
    }

    /// Canonical text for one field.
    pub fn field_value(&self, field: &str) -> Option<String> {
        Some(match field {
            "ndim" => self.ndim.to_string(),
            "chain_size" => self.chain_size.to_string(),
            "start_point" => join_reals(&self.start_point),
            "seed" => self.seed.to_string(),
            "output_prefix" => self.output_prefix.clone(),
            "chain_format" => self.chain_format.to_string(),
            "file_encoding" => self.file_encoding.to_string(),
            "adaptation_period" => self.adaptation_period.to_string(),
            "greedy_adaptation_count" => self.greedy_adaptation_count.to_string(),
            "dr_stage_count" => self.dr_stage_count.to_string(),
            "dr_scale_factor" => fmt_real(self.dr_scale_factor),
            "proposal_scale" => fmt_real(self.proposal_scale),
            "cov_epsilon" => fmt_real(self.cov_epsilon),
            "parallelism" => self.parallelism.to_string(),
            "num_workers" => self.num_workers.to_string(),
            "target_acceptance_window" => match self.target_acceptance_window {
                None => "none".to_string(),
                Some((lo, hi)) => join_reals(&[lo, hi]),
            },
            _ => return None,
        })
    }

    /// Parses and assigns one field, marking it user-provided. Unknown field
    /// names and unparsable values are errors.
    pub fn set_field(&mut self, field: &str, value: &str) -> std::result::Result<(), String> {
        let value = value.trim();
        fn num<T: FromStr>(field: &str, v: &str) -> std::result::Result<T, String> {
            v.parse::<T>()
                .map_err(|_| format!("cannot parse '{v}' as a value for {field}"))
        }
        match field {
            "ndim" => self.ndim = num(field, value)?,
            "chain_size" => self.chain_size = num(field, value)?,
            "start_point" => self.start_point = parse_reals(value)?,
            "seed" => self.seed = num(field, value)?,
            "output_prefix" => self.output_prefix = value.to_string(),
            "chain_format" => self.chain_format = value.parse()?,
            "file_encoding" => self.file_encoding = value.parse()?,
            "adaptation_period" => self.adaptation_period = num(field, value)?,
            "greedy_adaptation_count" => self.greedy_adaptation_count = num(field, value)?,
            "dr_stage_count" => self.dr_stage_count = num(field, value)?,
            "dr_scale_factor" => self.dr_scale_factor = num(field, value)?,
            "proposal_scale" => self.proposal_scale = num(field, value)?,
            "cov_epsilon" => self.cov_epsilon = num(field, value)?,
            "parallelism" => self.parallelism = value.parse()?,
            "num_workers" => self.num_workers = num(field, value)?,
            "target_acceptance_window" => {
                self.target_acceptance_window = if value == "none" {
                    None
                } else {
                    match parse_reals(value)?.as_slice() {
                        [lo, hi] => Some((*lo, *hi)),
                        _ => return Err("target_acceptance_window needs two reals or 'none'".into()),
                    }
                }
            }
            other => return Err(format!("unknown key '{other}'")),
        }
        self.mark(field);
        Ok(())
    }

    /// Re-derives defaults that depend on `ndim` for every field the user did
    /// not set. Used after `ndim` itself changes through `set_field`.
    pub fn refresh_dimension_defaults(&mut self) {
        let d = self.ndim.max(1);
        if !self.user_set.contains("start_point") {
            self.start_point = vec![0.0; self.ndim];
        }
        if !self.user_set.contains("adaptation_period") {
            self.adaptation_period = 100 * d as u64;
        }
        if !self.user_set.contains("proposal_scale") {
            self.proposal_scale = 2.38 / (d as f64).sqrt();
        }
    }

    /// Fields that must match for a restart to reproduce the original run.
    /// `chain_size` is excluded so an interrupted run may be extended.
    pub fn restart_mismatches(&self, original: &SimSpec) -> Vec<&'static str> {
        Self::FIELDS
            .iter()
            .copied()
            .filter(|f| *f != "chain_size")
            .filter(|f| self.field_value(f) != original.field_value(f))
            .collect()
    }
}

pub(crate) fn join_reals(v: &[f64]) -> String {
    v.iter().map(|x| fmt_real(*x)).collect::<Vec<_>>().join(",")
}

pub(crate) fn parse_reals(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| format!("cannot parse '{t}' as a real")))
        .collect()
}
