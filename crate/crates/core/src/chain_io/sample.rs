use std::fmt::Write as _;
use std::path::Path;

use super::{create_parent, fmt_real};
use crate::error::{Error, Result};
use crate::refinement::RefinedSample;

/// Contents of a sample file.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleTable {
    pub logf: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

pub fn write_sample(refined: &RefinedSample, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    create_parent(path)?;
    let ndim = refined.states.first().map_or(0, Vec::len);
    let mut s = String::from("logFunc");
    for i in 1..=ndim {
        let _ = write!(s, ",var{i}");
    }
    s.push('\n');
    for (logf, x) in refined.logf.iter().zip(&refined.states) {
        s.push_str(&fmt_real(*logf));
        for v in x {
            s.push(',');
            s.push_str(&fmt_real(*v));
        }
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_sample(path: impl AsRef<Path>) -> Result<SampleTable> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::parse(path, 1, "missing header"))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"logFunc") {
        return Err(Error::parse(path, 1, "sample header must start with logFunc"));
    }
    let ndim = cols.len() - 1;
    let mut table = SampleTable {
        logf: Vec::new(),
        states: Vec::new(),
    };
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(path, i + 2, e.to_string()))?;
        if vals.len() != ndim + 1 {
            return Err(Error::parse(path, i + 2, format!("expected {} fields, found {}", ndim + 1, vals.len())));
        }
        table.logf.push(vals[0]);
        table.states.push(vals[1..].to_vec());
    }
    Ok(table)
}
