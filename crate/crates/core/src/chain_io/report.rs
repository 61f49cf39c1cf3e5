use std::fmt::Write as _;
use std::path::Path;

use super::{create_parent, fmt_real};
use crate::error::{Error, Result};
use crate::spec::{join_reals, parse_reals, Provenance, SimSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunStatus {
    Running,
    Complete,
}

/// Fork-join statistics: rank contributions and the fitted geometric model.
#[derive(Clone, Debug, PartialEq)]
pub struct ParallelStats {
    pub num_workers: usize,
    /// Accepted steps contributed by rank `k+1`.
    pub contributions: Vec<u64>,
    /// Fraction of candidates, evaluated in rank order, that were accepted.
    pub per_candidate_acceptance: f64,
    pub fitted_p: f64,
    pub fit_distance: f64,
    /// `speedup[n-1]` is the predicted speedup with `n` workers.
    pub speedup: Vec<f64>,
    pub optimal_workers: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportStats {
    pub spec: SimSpec,
    pub status: RunStatus,
    pub target: String,
    pub iterations: u64,
    pub accepted_count: u64,
    pub mean_accept_rate: f64,
    pub burnin_loc: u64,
    pub iac_history: Vec<f64>,
    pub ess: f64,
    pub refined_size: u64,
    /// Chain size in the run's encoding, compact and verbose layouts.
    pub compact_chain_bytes: u64,
    pub verbose_chain_bytes: u64,
    pub parallel: Option<ParallelStats>,
    /// Config text the run was launched from, echoed verbatim.
    pub config_echo: Option<String>,
}

impl ReportStats {
    /// A report for a run that has not finished yet: spec echo only.
    pub fn running(spec: &SimSpec, target: impl Into<String>, config_echo: Option<String>) -> Self {
        ReportStats {
            spec: spec.clone(),
            status: RunStatus::Running,
            target: target.into(),
            iterations: 0,
            accepted_count: 0,
            mean_accept_rate: 0.0,
            burnin_loc: 0,
            iac_history: Vec::new(),
            ess: 0.0,
            refined_size: 0,
            compact_chain_bytes: 0,
            verbose_chain_bytes: 0,
            parallel: None,
            config_echo,
        }
    }

    pub fn size_ratio(&self) -> f64 {
        if self.compact_chain_bytes == 0 {
            0.0
        } else {
            self.verbose_chain_bytes as f64 / self.compact_chain_bytes as f64
        }
    }
}

pub fn write_report(stats: &ReportStats, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    create_parent(path)?;
    let mut s = String::new();
    s.push_str("# dramforge simulation report\n");
    let _ = writeln!(
        s,
        "Status = {}",
        match stats.status {
            RunStatus::Running => "running",
            RunStatus::Complete => "complete",
        }
    );
    let _ = writeln!(s, "Target = {}", stats.target);
    s.push_str("\n[spec]\n");
    for f in SimSpec::FIELDS {
        let v = stats.spec.field_value(f).expect("known field");
        let _ = writeln!(s, "{f} = {v}  # {}", stats.spec.provenance(f));
    }
    s.push_str("\n[stats]\n");
    let _ = writeln!(s, "Iterations = {}", stats.iterations);
    let _ = writeln!(s, "AcceptedCount = {}", stats.accepted_count);
    let _ = writeln!(s, "MeanAcceptanceRate = {}", fmt_real(stats.mean_accept_rate));
    let _ = writeln!(s, "BurninLocation = {}", stats.burnin_loc);
    let _ = writeln!(s, "IntegratedAutocorrelationTime = {}", join_reals(&stats.iac_history));
    let _ = writeln!(s, "EffectiveSampleSize = {}", fmt_real(stats.ess));
    let _ = writeln!(s, "RefinedSampleSize = {}", stats.refined_size);
    let _ = writeln!(s, "CompactChainBytes = {}", stats.compact_chain_bytes);
    let _ = writeln!(s, "VerboseChainBytes = {}", stats.verbose_chain_bytes);
    let _ = writeln!(s, "VerboseToCompactRatio = {}", fmt_real(stats.size_ratio()));
    if let Some(p) = &stats.parallel {
        s.push_str("\n[parallel]\n");
        let _ = writeln!(s, "NumWorkers = {}", p.num_workers);
        let _ = writeln!(s, "PerCandidateAcceptance = {}", fmt_real(p.per_candidate_acceptance));
        for (k, c) in p.contributions.iter().enumerate() {
            let _ = writeln!(s, "RankContribution({}) = {c}", k + 1);
        }
        let _ = writeln!(s, "FittedGeometricP = {}", fmt_real(p.fitted_p));
        let _ = writeln!(s, "FitDistanceTV = {}", fmt_real(p.fit_distance));
        for (k, v) in p.speedup.iter().enumerate() {
            let _ = writeln!(s, "PredictedSpeedup({}) = {}", k + 1, fmt_real(*v));
        }
        let _ = writeln!(s, "PredictedOptimalWorkers = {}", p.optimal_workers);
    }
    if let Some(cfg) = &stats.config_echo {
        s.push_str("\n[config]\n");
        for line in cfg.lines() {
            let _ = writeln!(s, "| {line}");
        }
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn indexed_key(key: &str, name: &str) -> Option<usize> {
    key.strip_prefix(name)?.strip_prefix('(')?.strip_suffix(')')?.parse().ok()
}

pub fn read_report(path: impl AsRef<Path>) -> Result<ReportStats> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut section = "";
    let mut status = None;
    let mut target = String::new();
    let mut spec_entries: Vec<(usize, String, String, Provenance)> = Vec::new();
    let mut stats = ReportStats::running(&SimSpec::new(1), "", None);
    let mut parallel: Option<ParallelStats> = None;
    let mut config: Option<String> = None;

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line.starts_with('[') && line.ends_with(']') {
            section = match &line[1..line.len() - 1] {
                "spec" => "spec",
                "stats" => "stats",
                "parallel" => {
                    parallel = Some(ParallelStats {
                        num_workers: 0,
                        contributions: Vec::new(),
                        per_candidate_acceptance: 0.0,
                        fitted_p: 0.0,
                        fit_distance: 0.0,
                        speedup: Vec::new(),
                        optimal_workers: 0,
                    });
                    "parallel"
                }
                "config" => {
                    config = Some(String::new());
                    "config"
                }
                other => return Err(Error::parse(path, lineno, format!("unknown section [{other}]"))),
            };
            continue;
        }
        if section == "config" {
            let body = line.strip_prefix("| ").or_else(|| line.strip_prefix('|')).unwrap_or(line);
            let cfg = config.get_or_insert_with(String::new);
            cfg.push_str(body);
            cfg.push('\n');
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(path, lineno, "expected 'key = value'"))?;
        let (key, value) = (key.trim(), value.trim());
        let bad = |what: &str| Error::parse(path, lineno, format!("cannot parse {what} '{value}'"));
        match section {
            "" => match key {
                "Status" => {
                    status = Some(match value {
                        "running" => RunStatus::Running,
                        "complete" => RunStatus::Complete,
                        _ => return Err(bad("status")),
                    })
                }
                "Target" => target = value.to_string(),
                _ => return Err(Error::parse(path, lineno, format!("unknown key '{key}'"))),
            },
            "spec" => {
                let (v, prov) = match value.rsplit_once("  # ") {
                    Some((v, "user")) => (v, Provenance::User),
                    Some((v, "default")) => (v, Provenance::Default),
                    _ => return Err(bad("spec entry")),
                };
                spec_entries.push((lineno, key.to_string(), v.to_string(), prov));
            }
            "stats" => match key {
                "Iterations" => stats.iterations = value.parse().map_err(|_| bad(key))?,
                "AcceptedCount" => stats.accepted_count = value.parse().map_err(|_| bad(key))?,
                "MeanAcceptanceRate" => stats.mean_accept_rate = value.parse().map_err(|_| bad(key))?,
                "BurninLocation" => stats.burnin_loc = value.parse().map_err(|_| bad(key))?,
                "IntegratedAutocorrelationTime" => stats.iac_history = parse_reals(value).map_err(|_| bad(key))?,
                "EffectiveSampleSize" => stats.ess = value.parse().map_err(|_| bad(key))?,
                "RefinedSampleSize" => stats.refined_size = value.parse().map_err(|_| bad(key))?,
                "CompactChainBytes" => stats.compact_chain_bytes = value.parse().map_err(|_| bad(key))?,
                "VerboseChainBytes" => stats.verbose_chain_bytes = value.parse().map_err(|_| bad(key))?,
                "VerboseToCompactRatio" => {}
                _ => return Err(Error::parse(path, lineno, format!("unknown key '{key}'"))),
            },
            "parallel" => {
                let p = parallel.as_mut().expect("section opened");
                if let Some(k) = indexed_key(key, "RankContribution") {
                    if k != p.contributions.len() + 1 {
                        return Err(bad("rank index"));
                    }
                    p.contributions.push(value.parse().map_err(|_| bad(key))?);
                } else if let Some(k) = indexed_key(key, "PredictedSpeedup") {
                    if k != p.speedup.len() + 1 {
                        return Err(bad("speedup index"));
                    }
                    p.speedup.push(value.parse().map_err(|_| bad(key))?);
                } else {
                    match key {
                        "NumWorkers" => p.num_workers = value.parse().map_err(|_| bad(key))?,
                        "PerCandidateAcceptance" => p.per_candidate_acceptance = value.parse().map_err(|_| bad(key))?,
                        "FittedGeometricP" => p.fitted_p = value.parse().map_err(|_| bad(key))?,
                        "FitDistanceTV" => p.fit_distance = value.parse().map_err(|_| bad(key))?,
                        "PredictedOptimalWorkers" => p.optimal_workers = value.parse().map_err(|_| bad(key))?,
                        _ => return Err(Error::parse(path, lineno, format!("unknown key '{key}'"))),
                    }
                }
            }
            _ => unreachable!(),
        }
    }

    let ndim_entry = spec_entries
        .iter()
        .find(|e| e.1 == "ndim")
        .ok_or_else(|| Error::parse(path, 0, "spec echo lacks ndim"))?;
    let ndim: usize = ndim_entry
        .2
        .parse()
        .map_err(|_| Error::parse(path, ndim_entry.0, "invalid ndim"))?;
    let mut spec = SimSpec::new(ndim);
    let mut seen = std::collections::BTreeSet::new();
    for (lineno, key, value, prov) in &spec_entries {
        if !seen.insert(key.clone()) {
            return Err(Error::parse(path, *lineno, format!("duplicate spec field '{key}'")));
        }
        spec.set_field(key, value).map_err(|m| Error::parse(path, *lineno, m))?;
        spec.set_provenance(key, *prov);
    }
    if seen.len() != SimSpec::FIELDS.len() {
        return Err(Error::parse(path, 0, "spec echo is missing fields"));
    }
    stats.spec = spec;
    stats.status = status.ok_or_else(|| Error::parse(path, 0, "missing Status"))?;
    stats.target = target;
    stats.parallel = parallel;
    stats.config_echo = config;
    Ok(stats)
}
