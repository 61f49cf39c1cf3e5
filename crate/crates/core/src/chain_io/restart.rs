use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use super::binary::{Packer, Unpacker};
use super::{create_parent, fmt_real, FORMAT_VERSION, RESTART_MAGIC};
use crate::error::{Error, Result};
use crate::proposal::{AdaptationRecord, ProposalState};
use crate::rng::RngState;
use crate::spec::{join_reals, parse_reals, FileEncoding};

/// Everything needed to continue a run exactly where a checkpoint was taken.
#[derive(Clone, Debug, PartialEq)]
pub struct RestartCheckpoint {
    pub checkpoint_index: u64,
    pub iteration: u64,
    pub rows_emitted: u64,
    /// Rows already folded into the proposal statistics.
    pub absorbed_rows: u64,
    pub accepted_count: u64,
    pub pending_weight: u64,
    pub current_logf: f64,
    pub current_state: Vec<f64>,
    pub live_process_id: u32,
    pub live_dr_stage: u32,
    pub last_measure: f64,
    /// The adaptation that produced this checkpoint; `None` for the initial one.
    pub adaptation: Option<AdaptationRecord>,
    /// One stream per worker, rank order.
    pub rngs: Vec<RngState>,
    pub proposal: ProposalState,
}

impl RestartCheckpoint {
    pub fn ndim(&self) -> usize {
        self.current_state.len()
    }

    fn cov_upper(&self) -> Vec<f64> {
        let d = self.ndim();
        let mut v = Vec::with_capacity(d * (d + 1) / 2);
        for i in 0..d {
            for j in i..d {
                v.push(self.proposal.cov[(i, j)]);
            }
        }
        v
    }
}

fn cov_from_upper(d: usize, upper: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(d, d);
    let mut k = 0;
    for i in 0..d {
        for j in i..d {
            m[(i, j)] = upper[k];
            m[(j, i)] = upper[k];
            k += 1;
        }
    }
    m
}

fn rebuild_proposal(
    mean: Vec<f64>,
    cov: DMatrix<f64>,
    scale: f64,
    epsilon_factor: f64,
    counts: (u64, u64, u64),
) -> std::result::Result<ProposalState, String> {
    let mut p = ProposalState::new(mean, cov, scale, epsilon_factor)
        .map_err(|_| "stored proposal covariance does not factorize".to_string())?;
    p.sample_count = counts.0;
    p.distinct_count = counts.1;
    p.adaptation_count = counts.2;
    Ok(p)
}

fn ascii_record(c: &RestartCheckpoint) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        s.push_str(k);
        s.push_str(" = ");
        s.push_str(&v);
        s.push('\n');
    };
    kv("checkpoint", c.checkpoint_index.to_string());
    kv("iteration", c.iteration.to_string());
    kv("rows_emitted", c.rows_emitted.to_string());
    kv("absorbed_rows", c.absorbed_rows.to_string());
    kv("accepted_count", c.accepted_count.to_string());
    kv("pending_weight", c.pending_weight.to_string());
    kv("current_logf", fmt_real(c.current_logf));
    kv("current_state", join_reals(&c.current_state));
    kv("live_process_id", c.live_process_id.to_string());
    kv("live_dr_stage", c.live_dr_stage.to_string());
    kv("last_measure", fmt_real(c.last_measure));
    kv(
        "adaptation",
        match c.adaptation {
            None => "none".into(),
            Some(a) => format!("{},{}", a.iteration, fmt_real(a.measure)),
        },
    );
    kv("rng_count", c.rngs.len().to_string());
    for r in &c.rngs {
        kv(
            "rng",
            format!(
                "{},{},{}",
                r.state,
                r.stream_id,
                r.gauss_cache.map_or("none".to_string(), fmt_real)
            ),
        );
    }
    let p = &c.proposal;
    kv("proposal_mean", join_reals(&p.mean));
    kv("proposal_cov_upper", join_reals(&c.cov_upper()));
    kv("proposal_scale", fmt_real(p.scale));
    kv("proposal_epsilon_factor", fmt_real(p.epsilon_factor));
    kv("proposal_epsilon", fmt_real(p.epsilon));
    kv(
        "proposal_counts",
        format!("{},{},{}", p.sample_count, p.distinct_count, p.adaptation_count),
    );
    s.push_str("end\n");
    s
}

fn binary_record(c: &RestartCheckpoint) -> Vec<u8> {
    let mut p = Packer::new();
    p.u64(c.checkpoint_index);
    p.u64(c.iteration);
    p.u64(c.rows_emitted);
    p.u64(c.absorbed_rows);
    p.u64(c.accepted_count);
    p.u64(c.pending_weight);
    p.f64(c.current_logf);
    p.f64s(&c.current_state);
    p.u32(c.live_process_id);
    p.u32(c.live_dr_stage);
    p.f64(c.last_measure);
    match c.adaptation {
        None => {
            p.u8(0);
            p.u64(0);
            p.f64(0.0);
        }
        Some(a) => {
            p.u8(1);
            p.u64(a.iteration);
            p.f64(a.measure);
        }
    }
    for r in &c.rngs {
        p.u64(r.state);
        p.u64(r.stream_id);
        p.u8(u8::from(r.gauss_cache.is_some()));
        p.f64(r.gauss_cache.unwrap_or(0.0));
    }
    let prop = &c.proposal;
    p.f64s(&prop.mean);
    p.f64s(&c.cov_upper());
    p.f64(prop.scale);
    p.f64(prop.epsilon_factor);
    p.f64(prop.epsilon);
    p.u64(prop.sample_count);
    p.u64(prop.distinct_count);
    p.u64(prop.adaptation_count);
    p.0
}

/// Appends checkpoints; each record is flushed before `append` returns.
pub struct RestartWriter {
    path: PathBuf,
    out: BufWriter<File>,
    encoding: FileEncoding,
    shape: Option<(usize, usize)>,
}

impl RestartWriter {
    pub fn create(path: impl AsRef<Path>, encoding: FileEncoding) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        create_parent(&path)?;
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(RestartWriter {
            path,
            out: BufWriter::new(file),
            encoding,
            shape: None,
        })
    }

    /// Replaces the file with `checkpoints` and keeps it open for appending.
    pub fn rewrite(path: impl AsRef<Path>, encoding: FileEncoding, checkpoints: &[RestartCheckpoint]) -> Result<Self> {
        let mut w = Self::create(path, encoding)?;
        for c in checkpoints {
            w.append(c)?;
        }
        Ok(w)
    }

    pub fn append(&mut self, c: &RestartCheckpoint) -> Result<()> {
        let shape = (c.ndim(), c.rngs.len());
        let mut bytes = Vec::new();
        match self.shape {
            None => {
                if self.encoding == FileEncoding::Binary {
                    let mut p = Packer::new();
                    p.0.extend_from_slice(RESTART_MAGIC);
                    p.u32(FORMAT_VERSION);
                    p.u32(shape.0 as u32);
                    p.u32(shape.1 as u32);
                    bytes.extend(p.0);
                }
                self.shape = Some(shape);
            }
            Some(s) if s != shape => {
                return Err(Error::Usage(format!(
                    "checkpoint shape {shape:?} differs from the file's {s:?}"
                )))
            }
            Some(_) => {}
        }
        match self.encoding {
            FileEncoding::Ascii => bytes.extend(ascii_record(c).into_bytes()),
            FileEncoding::Binary => bytes.extend(binary_record(c)),
        }
        let io = |e| Error::io(&self.path, e);
        self.out.write_all(&bytes).map_err(io)?;
        self.out.flush().map_err(io)?;
        self.out.get_ref().sync_data().map_err(io)
    }
}

pub fn write_restart_checkpoint(
    checkpoints: &[RestartCheckpoint],
    path: impl AsRef<Path>,
    encoding: FileEncoding,
) -> Result<()> {
    RestartWriter::rewrite(path, encoding, checkpoints).map(drop)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RestartFile {
    pub checkpoints: Vec<RestartCheckpoint>,
    pub encoding: FileEncoding,
    /// Incomplete trailing records that were skipped.
    pub truncated: usize,
}

pub fn read_restart(path: impl AsRef<Path>) -> Result<Vec<RestartCheckpoint>> {
    Ok(read_restart_file(path)?.checkpoints)
}

pub fn read_restart_file(path: impl AsRef<Path>) -> Result<RestartFile> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(RESTART_MAGIC) {
        read_binary(path, &bytes)
    } else {
        read_ascii(path, &bytes)
    }
}

fn read_ascii(path: &Path, bytes: &[u8]) -> Result<RestartFile> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::parse(path, 0, format!("not utf-8: {e}")))?;
    let mut checkpoints = Vec::new();
    let mut block: Vec<(usize, &str, &str)> = Vec::new();
    let mut truncated = 0;
    for (i, line) in text.split_inclusive('\n').enumerate() {
        let lineno = i + 1;
        if !line.ends_with('\n') {
            truncated = 1;
            break;
        }
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        if line == "end" {
            checkpoints.push(parse_block(&block).map_err(|(l, m)| Error::parse(path, l, m))?);
            block.clear();
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(path, lineno, "expected 'key = value'"))?;
        block.push((lineno, k.trim(), v.trim()));
    }
    if !block.is_empty() {
        truncated = 1;
    }
    Ok(RestartFile {
        checkpoints,
        encoding: FileEncoding::Ascii,
        truncated,
    })
}

fn parse_block(block: &[(usize, &str, &str)]) -> std::result::Result<RestartCheckpoint, (usize, String)> {
    let first = block.first().map_or(0, |b| b.0);
    let mut it = block.iter();
    let mut next = |key: &str| -> std::result::Result<(usize, &str), (usize, String)> {
        match it.next() {
            Some((l, k, v)) if *k == key => Ok((*l, *v)),
            Some((l, k, _)) => Err((*l, format!("expected '{key}', found '{k}'"))),
            None => Err((first, format!("record ends before '{key}'"))),
        }
    };
    fn num<T: std::str::FromStr>((l, v): (usize, &str)) -> std::result::Result<T, (usize, String)> {
        v.parse().map_err(|_| (l, format!("cannot parse '{v}'")))
    }
    fn reals((l, v): (usize, &str)) -> std::result::Result<Vec<f64>, (usize, String)> {
        parse_reals(v).map_err(|m| (l, m))
    }
    let checkpoint_index = num(next("checkpoint")?)?;
    let iteration = num(next("iteration")?)?;
    let rows_emitted = num(next("rows_emitted")?)?;
    let absorbed_rows = num(next("absorbed_rows")?)?;
    let accepted_count = num(next("accepted_count")?)?;
    let pending_weight = num(next("pending_weight")?)?;
    let current_logf = num(next("current_logf")?)?;
    let current_state = reals(next("current_state")?)?;
    let live_process_id = num(next("live_process_id")?)?;
    let live_dr_stage = num(next("live_dr_stage")?)?;
    let last_measure = num(next("last_measure")?)?;
    let (l, v) = next("adaptation")?;
    let adaptation = if v == "none" {
        None
    } else {
        let (it_s, m_s) = v.split_once(',').ok_or((l, "expected 'iteration,measure'".to_string()))?;
        Some(AdaptationRecord {
            iteration: num((l, it_s))?,
            measure: num((l, m_s))?,
        })
    };
    let rng_count: usize = num(next("rng_count")?)?;
    let mut rngs = Vec::with_capacity(rng_count);
    for _ in 0..rng_count {
        let (l, v) = next("rng")?;
        let parts: Vec<&str> = v.split(',').collect();
        if parts.len() != 3 {
            return Err((l, "expected 'state,stream,cache'".into()));
        }
        rngs.push(RngState {
            state: num((l, parts[0]))?,
            stream_id: num((l, parts[1]))?,
            gauss_cache: if parts[2] == "none" { None } else { Some(num((l, parts[2]))?) },
        });
    }
    let mean = reals(next("proposal_mean")?)?;
    let (l_cov, _) = block.iter().find(|b| b.1 == "proposal_cov_upper").map(|b| (b.0, b.2)).unwrap_or((first, ""));
    let upper = reals(next("proposal_cov_upper")?)?;
    let scale = num(next("proposal_scale")?)?;
    let epsilon_factor = num(next("proposal_epsilon_factor")?)?;
    let _epsilon: f64 = num(next("proposal_epsilon")?)?;
    let (l, v) = next("proposal_counts")?;
    let counts: Vec<u64> = v
        .split(',')
        .map(|t| t.parse().map_err(|_| (l, format!("cannot parse '{t}'"))))
        .collect::<std::result::Result<_, _>>()?;
    if counts.len() != 3 {
        return Err((l, "expected three proposal counts".into()));
    }
    let d = current_state.len();
    if mean.len() != d || upper.len() != d * (d + 1) / 2 {
        return Err((l_cov, "proposal dimensions do not match the state".into()));
    }
    let proposal = rebuild_proposal(mean, cov_from_upper(d, &upper), scale, epsilon_factor, (counts[0], counts[1], counts[2]))
        .map_err(|m| (l_cov, m))?;
    Ok(RestartCheckpoint {
        checkpoint_index,
        iteration,
        rows_emitted,
        absorbed_rows,
        accepted_count,
        pending_weight,
        current_logf,
        current_state,
        live_process_id,
        live_dr_stage,
        last_measure,
        adaptation,
        rngs,
        proposal,
    })
}

fn binary_record_len(d: usize, n_rngs: usize) -> usize {
    6 * 8 + 8 + 8 * d + 4 + 4 + 8 + (1 + 8 + 8) + n_rngs * (8 + 8 + 1 + 8) + 8 * d + 8 * d * (d + 1) / 2 + 3 * 8 + 3 * 8
}

fn read_binary(path: &Path, bytes: &[u8]) -> Result<RestartFile> {
    let mut u = Unpacker::new(bytes);
    let short = || Error::parse(path, 0, "binary restart header is incomplete");
    u.bytes4().ok_or_else(short)?;
    let version = u.u32().ok_or_else(short)?;
    if version != FORMAT_VERSION {
        return Err(Error::parse(path, 0, format!("unsupported restart version {version}")));
    }
    let d = u.u32().ok_or_else(short)? as usize;
    let n_rngs = u.u32().ok_or_else(short)? as usize;
    let rec_len = binary_record_len(d, n_rngs);
    let complete = u.remaining() / rec_len;
    let truncated = usize::from(!u.remaining().is_multiple_of(rec_len));
    let mut checkpoints = Vec::with_capacity(complete);
    for k in 0..complete {
        let bad = || Error::parse(path, k + 1, "malformed binary checkpoint");
        let checkpoint_index = u.u64().ok_or_else(bad)?;
        let iteration = u.u64().ok_or_else(bad)?;
        let rows_emitted = u.u64().ok_or_else(bad)?;
        let absorbed_rows = u.u64().ok_or_else(bad)?;
        let accepted_count = u.u64().ok_or_else(bad)?;
        let pending_weight = u.u64().ok_or_else(bad)?;
        let current_logf = u.f64().ok_or_else(bad)?;
        let current_state = u.f64s(d).ok_or_else(bad)?;
        let live_process_id = u.u32().ok_or_else(bad)?;
        let live_dr_stage = u.u32().ok_or_else(bad)?;
        let last_measure = u.f64().ok_or_else(bad)?;
        let has_adapt = u.u8().ok_or_else(bad)?;
        let a_iter = u.u64().ok_or_else(bad)?;
        let a_measure = u.f64().ok_or_else(bad)?;
        let adaptation = (has_adapt == 1).then_some(AdaptationRecord {
            iteration: a_iter,
            measure: a_measure,
        });
        let mut rngs = Vec::with_capacity(n_rngs);
        for _ in 0..n_rngs {
            let state = u.u64().ok_or_else(bad)?;
            let stream_id = u.u64().ok_or_else(bad)?;
            let has_cache = u.u8().ok_or_else(bad)?;
            let cache = u.f64().ok_or_else(bad)?;
            rngs.push(RngState {
                state,
                stream_id,
                gauss_cache: (has_cache == 1).then_some(cache),
            });
        }
        let mean = u.f64s(d).ok_or_else(bad)?;
        let upper = u.f64s(d * (d + 1) / 2).ok_or_else(bad)?;
        let scale = u.f64().ok_or_else(bad)?;
        let epsilon_factor = u.f64().ok_or_else(bad)?;
        let _epsilon = u.f64().ok_or_else(bad)?;
        let counts = (
            u.u64().ok_or_else(bad)?,
            u.u64().ok_or_else(bad)?,
            u.u64().ok_or_else(bad)?,
        );
        let proposal = rebuild_proposal(mean, cov_from_upper(d, &upper), scale, epsilon_factor, counts)
            .map_err(|m| Error::parse(path, k + 1, m))?;
        checkpoints.push(RestartCheckpoint {
            checkpoint_index,
            iteration,
            rows_emitted,
            absorbed_rows,
            accepted_count,
            pending_weight,
            current_logf,
            current_state,
            live_process_id,
            live_dr_stage,
            last_measure,
            adaptation,
            rngs,
            proposal,
        });
    }
    Ok(RestartFile {
        checkpoints,
        encoding: FileEncoding::Binary,
        truncated,
    })
}
