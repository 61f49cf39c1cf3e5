use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{create_parent, fmt_real};
use crate::error::{Error, Result};

pub const PROGRESS_HEADER: &str = "iter,accepted,meanAccRate,adaptationMeasure,elapsed_seconds";

#[derive(Clone, Debug, PartialEq)]
pub struct ProgressLine {
    pub iteration: u64,
    pub accepted: u64,
    pub mean_accept_rate: f64,
    pub adaptation_measure: f64,
    pub elapsed_seconds: f64,
}

pub struct ProgressWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl ProgressWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        create_parent(&path)?;
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = ProgressWriter {
            path,
            out: BufWriter::new(file),
        };
        writeln!(w.out, "{PROGRESS_HEADER}").map_err(|e| Error::io(&w.path, e))?;
        Ok(w)
    }

    /// Opens an existing progress file for appending.
    pub fn append_to(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(ProgressWriter {
            path,
            out: BufWriter::new(file),
        })
    }

    pub fn write(&mut self, line: &ProgressLine) -> Result<()> {
        writeln!(
            self.out,
            "{},{},{},{},{:.3}",
            line.iteration,
            line.accepted,
            fmt_real(line.mean_accept_rate),
            fmt_real(line.adaptation_measure),
            line.elapsed_seconds
        )
        .map_err(|e| Error::io(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_progress(path: impl AsRef<Path>) -> Result<Vec<ProgressLine>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.split_inclusive('\n').enumerate().skip(1) {
        if !line.ends_with('\n') {
            break;
        }
        let f: Vec<&str> = line.trim_end().split(',').collect();
        let bad = || Error::parse(path, i + 1, "malformed progress line");
        if f.len() != 5 {
            return Err(bad());
        }
        out.push(ProgressLine {
            iteration: f[0].parse().map_err(|_| bad())?,
            accepted: f[1].parse().map_err(|_| bad())?,
            mean_accept_rate: f[2].parse().map_err(|_| bad())?,
            adaptation_measure: f[3].parse().map_err(|_| bad())?,
            elapsed_seconds: f[4].parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}

/// Drops progress lines past `iteration` (used when resuming from a checkpoint).
pub fn truncate_progress(path: impl AsRef<Path>, iteration: u64) -> Result<()> {
    let path = path.as_ref();
    let kept: Vec<ProgressLine> = match read_progress(path) {
        Ok(lines) => lines.into_iter().filter(|l| l.iteration <= iteration).collect(),
        Err(Error::Io { .. }) => Vec::new(),
        Err(e) => return Err(e),
    };
    let mut w = ProgressWriter::create(path)?;
    for l in &kept {
        w.write(l)?;
    }
    w.flush()
}
