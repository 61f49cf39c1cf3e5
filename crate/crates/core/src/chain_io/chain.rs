use std::fs::File;
use std::io::{BufWriter, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use super::binary::{Packer, Unpacker};
use super::{chain_header, create_parent, fmt_real, ChainRow, CompactChain, CHAIN_MAGIC, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::spec::{ChainFormat, FileEncoding};

const BINARY_HEADER_LEN: u64 = 4 + 4 + 4 + 8;
const COUNT_OFFSET: u64 = 12;

fn binary_row_len(ndim: usize) -> usize {
    4 + 4 + 3 * 8 + 8 + 8 + 8 + 8 * ndim
}

fn ascii_row(row: &ChainRow, weight: u64) -> String {
    let mut line = format!(
        "{},{},{},{},{},{},{}",
        row.process_id,
        row.dr_stage,
        fmt_real(row.mean_accept_rate),
        fmt_real(row.adaptation_measure),
        row.burnin_loc,
        weight,
        fmt_real(row.logf)
    );
    for x in &row.state {
        line.push(',');
        line.push_str(&fmt_real(*x));
    }
    line.push('\n');
    line
}

fn pack_row(p: &mut Packer, row: &ChainRow, weight: u64) {
    p.i32(row.process_id as i32);
    p.i32(row.dr_stage as i32);
    p.f64(row.mean_accept_rate);
    p.f64(row.adaptation_measure);
    // third rate slot is reserved
    p.f64(0.0);
    p.i64(row.burnin_loc as i64);
    p.i64(weight as i64);
    p.f64(row.logf);
    p.f64s(&row.state);
}

fn header_line(ndim: usize) -> String {
    let mut h = chain_header(ndim).join(",");
    h.push('\n');
    h
}

/// Exact byte size of the ascii encoding in the given format.
pub fn ascii_chain_bytes(chain: &CompactChain, format: ChainFormat) -> u64 {
    let rows: u64 = chain
        .rows
        .iter()
        .map(|r| match format {
            ChainFormat::Compact => ascii_row(r, r.weight).len() as u64,
            ChainFormat::Verbose => ascii_row(r, 1).len() as u64 * r.weight,
        })
        .sum();
    header_line(chain.ndim).len() as u64 + rows
}

/// Exact byte size of the binary encoding in the given format.
pub fn binary_chain_bytes(chain: &CompactChain, format: ChainFormat) -> u64 {
    let rows = match format {
        ChainFormat::Compact => chain.rows.len() as u64,
        ChainFormat::Verbose => chain.total_weight(),
    };
    BINARY_HEADER_LEN + rows * binary_row_len(chain.ndim) as u64
}

/// Appending chain writer. Rows reach the disk only through [`ChainWriter::append`],
/// which also rewrites the binary row count, so a reader never sees a
/// committed count that outruns the rows on disk.
pub struct ChainWriter {
    path: PathBuf,
    out: BufWriter<File>,
    format: ChainFormat,
    encoding: FileEncoding,
    ndim: usize,
    /// File-level records written (verbose rows for verbose files).
    records: u64,
}

impl ChainWriter {
    pub fn create(path: impl AsRef<Path>, ndim: usize, format: ChainFormat, encoding: FileEncoding) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        create_parent(&path)?;
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = ChainWriter {
            out: BufWriter::new(file),
            path,
            format,
            encoding,
            ndim,
            records: 0,
        };
        match encoding {
            FileEncoding::Ascii => w.write_bytes(header_line(ndim).as_bytes())?,
            FileEncoding::Binary => {
                let mut p = Packer::new();
                p.0.extend_from_slice(CHAIN_MAGIC);
                p.u32(FORMAT_VERSION);
                p.u32(ndim as u32);
                p.u64(0);
                w.write_bytes(&p.0)?;
            }
        }
        w.flush()?;
        Ok(w)
    }

    fn write_bytes(&mut self, bytes: &[u8]) -> Result<()> {
        self.out.write_all(bytes).map_err(|e| Error::io(&self.path, e))
    }

    fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }

    /// Writes the rows and flushes them to the file.
    pub fn append(&mut self, rows: &[ChainRow]) -> Result<()> {
        for row in rows {
            if row.state.len() != self.ndim {
                return Err(Error::Usage(format!(
                    "row has {} coordinates, chain file has {}",
                    row.state.len(),
                    self.ndim
                )));
            }
            let (copies, weight) = match self.format {
                ChainFormat::Compact => (1, row.weight),
                ChainFormat::Verbose => (row.weight, 1),
            };
            match self.encoding {
                FileEncoding::Ascii => {
                    let line = ascii_row(row, weight);
                    for _ in 0..copies {
                        self.write_bytes(line.as_bytes())?;
                    }
                }
                FileEncoding::Binary => {
                    let mut p = Packer::new();
                    pack_row(&mut p, row, weight);
                    for _ in 0..copies {
                        self.write_bytes(&p.0)?;
                    }
                }
            }
            self.records += copies;
        }
        self.flush()?;
        if self.encoding == FileEncoding::Binary {
            let file = self.out.get_mut();
            let io = |e| Error::io(&self.path, e);
            file.seek(SeekFrom::Start(COUNT_OFFSET)).map_err(io)?;
            file.write_all(&self.records.to_le_bytes()).map_err(io)?;
            file.seek(SeekFrom::End(0)).map_err(io)?;
            file.flush().map_err(io)?;
        }
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

pub fn write_chain(chain: &CompactChain, path: impl AsRef<Path>, format: ChainFormat, encoding: FileEncoding) -> Result<()> {
    let mut w = ChainWriter::create(path, chain.ndim, format, encoding)?;
    w.append(&chain.rows)
}

/// Result of reading a chain file that may have been cut short.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainFile {
    pub chain: CompactChain,
    pub encoding: FileEncoding,
    /// Incomplete trailing records that were skipped.
    pub truncated: usize,
}

pub fn read_chain(path: impl AsRef<Path>) -> Result<CompactChain> {
    Ok(read_chain_file(path)?.chain)
}

pub fn read_chain_file(path: impl AsRef<Path>) -> Result<ChainFile> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(CHAIN_MAGIC) {
        read_binary(path, &bytes)
    } else {
        read_ascii(path, &bytes)
    }
}

fn read_ascii(path: &Path, bytes: &[u8]) -> Result<ChainFile> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::parse(path, 0, format!("not utf-8: {e}")))?;
    let mut lines = text.split_inclusive('\n');
    let header = lines
        .next()
        .filter(|h| h.ends_with('\n'))
        .ok_or_else(|| Error::parse(path, 1, "missing header line"))?;
    let columns: Vec<&str> = header.trim_end().split(',').map(str::trim).collect();
    if columns.len() < 8 || columns[..7] != super::CHAIN_META_COLUMNS {
        return Err(Error::parse(path, 1, "unexpected chain header"));
    }
    let ndim = columns.len() - 7;
    let mut rows = Vec::new();
    let mut truncated = 0;
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        if !line.ends_with('\n') {
            // interrupted mid-write
            truncated += 1;
            break;
        }
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        rows.push(parse_ascii_row(line, ndim).map_err(|m| Error::parse(path, lineno, m))?);
    }
    Ok(ChainFile {
        chain: CompactChain::from_rows(ndim, CompactChain::recompact(rows)),
        encoding: FileEncoding::Ascii,
        truncated,
    })
}

fn parse_ascii_row(line: &str, ndim: usize) -> std::result::Result<ChainRow, String> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 7 + ndim {
        return Err(format!("expected {} fields, found {}", 7 + ndim, fields.len()));
    }
    fn int<T: std::str::FromStr>(s: &str, what: &str) -> std::result::Result<T, String> {
        s.parse().map_err(|_| format!("invalid {what} '{s}'"))
    }
    fn real(s: &str, what: &str) -> std::result::Result<f64, String> {
        s.parse().map_err(|_| format!("invalid {what} '{s}'"))
    }
    let weight: u64 = int(fields[5], "SampleWeight")?;
    if weight == 0 {
        return Err("SampleWeight must be at least 1".into());
    }
    Ok(ChainRow {
        process_id: int(fields[0], "ProcessID")?,
        dr_stage: int(fields[1], "DelayedRejectionStage")?,
        mean_accept_rate: real(fields[2], "MeanAcceptanceRate")?,
        adaptation_measure: real(fields[3], "AdaptationMeasure")?,
        burnin_loc: int(fields[4], "BurninLocation")?,
        weight,
        logf: real(fields[6], "SampleLogFunc")?,
        state: fields[7..]
            .iter()
            .map(|s| real(s, "state coordinate"))
            .collect::<std::result::Result<_, _>>()?,
    })
}

fn read_binary(path: &Path, bytes: &[u8]) -> Result<ChainFile> {
    let mut u = Unpacker::new(bytes);
    let short = || Error::parse(path, 0, "binary chain header is incomplete");
    u.bytes4().ok_or_else(short)?;
    let version = u.u32().ok_or_else(short)?;
    if version != FORMAT_VERSION {
        return Err(Error::parse(path, 0, format!("unsupported chain version {version}")));
    }
    let ndim = u.u32().ok_or_else(short)? as usize;
    let count = u.u64().ok_or_else(short)?;
    let row_len = binary_row_len(ndim);
    let available = (u.remaining() / row_len) as u64;
    let complete = count.min(available);
    let mut rows = Vec::with_capacity(complete as usize);
    for k in 0..complete {
        let bad = || Error::parse(path, k as usize + 1, "short binary record");
        let process_id = u.i32().ok_or_else(bad)?;
        let dr_stage = u.i32().ok_or_else(bad)?;
        let mean_accept_rate = u.f64().ok_or_else(bad)?;
        let adaptation_measure = u.f64().ok_or_else(bad)?;
        let _reserved = u.f64().ok_or_else(bad)?;
        let burnin_loc = u.i64().ok_or_else(bad)?;
        let weight = u.i64().ok_or_else(bad)?;
        let logf = u.f64().ok_or_else(bad)?;
        let state = u.f64s(ndim).ok_or_else(bad)?;
        if weight < 1 || process_id < 0 || dr_stage < 0 || burnin_loc < 0 {
            return Err(Error::parse(path, k as usize + 1, "negative or zero field in binary record"));
        }
        rows.push(ChainRow {
            process_id: process_id as u32,
            dr_stage: dr_stage as u32,
            mean_accept_rate,
            adaptation_measure,
            burnin_loc: burnin_loc as u64,
            weight: weight as u64,
            logf,
            state,
        });
    }
    // Bytes past the committed count are uncommitted and ignored.
    Ok(ChainFile {
        chain: CompactChain::from_rows(ndim, CompactChain::recompact(rows)),
        encoding: FileEncoding::Binary,
        truncated: (count - complete) as usize,
    })
}

/// Rewrites `path` so it holds exactly `rows`, then reopens it for appending.
pub(crate) fn rewrite_chain(
    path: &Path,
    ndim: usize,
    rows: &[ChainRow],
    format: ChainFormat,
    encoding: FileEncoding,
) -> Result<ChainWriter> {
    let mut w = ChainWriter::create(path, ndim, format, encoding)?;
    w.append(rows)?;
    Ok(w)
}
