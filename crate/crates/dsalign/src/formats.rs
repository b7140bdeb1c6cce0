//! On-disk formats.
//!
//! - Embeddings: first line `<count> <dim>`, then `token f1 … fd` per word in
//!   frequency order (the fastText `.vec` layout).
//! - Dictionaries: one `source target` pair per line.
//! - Matrices: two header lines (`<d>`, then `dsalign-matrix <binary|text> 1`)
//!   followed by `d·d` little-endian `f64` values or `d` text rows.
//! - Optimization traces: one JSON object per line.
//! - Precision reports and ranked translations: tab-separated text.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use dsalign_core::embedding::EmbeddingMatrix;
use dsalign_core::inference::{PrecisionReport, RetrievalResult};
use dsalign_core::{BilingualDictionary, Mat};
use serde::{Deserialize, Serialize};

use crate::error::DataError;

pub const MATRIX_FORMAT_VERSION: u32 = 1;
const MATRIX_MAGIC: &str = "dsalign-matrix";

fn open(path: &Path) -> Result<BufReader<File>, DataError> {
    File::open(path).map(BufReader::new).map_err(|e| DataError::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, DataError> {
    File::create(path).map(BufWriter::new).map_err(|e| DataError::io(path, e))
}

/// Reads raw lines, keeping invalid UTF-8 visible to the caller.
struct Lines<R> {
    reader: R,
    buf: Vec<u8>,
    number: usize,
}

impl<R: BufRead> Lines<R> {
    fn new(reader: R) -> Self {
        Lines {
            reader,
            buf: Vec::new(),
            number: 0,
        }
    }

    /// Next line without its terminator, with its 1-based number.
    fn next_line(&mut self) -> std::io::Result<Option<(usize, &[u8])>> {
        self.buf.clear();
        if self.reader.read_until(b'\n', &mut self.buf)? == 0 {
            return Ok(None);
        }
        self.number += 1;
        let mut end = self.buf.len();
        while end > 0 && (self.buf[end - 1] == b'\n' || self.buf[end - 1] == b'\r') {
            end -= 1;
        }
        Ok(Some((self.number, &self.buf[..end])))
    }
}

/// Loads embeddings in file order.
///
/// At most `max_vocab` distinct words are kept. Repeated tokens after the
/// first are skipped and counted in a log message. The result is raw
/// (not normalized).
pub fn load_embeddings(path: &Path, max_vocab: Option<usize>) -> Result<EmbeddingMatrix, DataError> {
    let mut lines = Lines::new(open(path)?);
    let header = match lines.next_line().map_err(|e| DataError::io(path, e))? {
        None => return Err(DataError::EmptyFile { path: path.into() }),
        Some((_, bytes)) => String::from_utf8_lossy(bytes).into_owned(),
    };
    let malformed_header = || DataError::MalformedHeader {
        path: path.into(),
        header: header.clone(),
    };
    let fields: Vec<&str> = header.split_whitespace().collect();
    let (declared, dim) = match fields.as_slice() {
        [count, dim] => (
            count.parse::<usize>().map_err(|_| malformed_header())?,
            dim.parse::<usize>().map_err(|_| malformed_header())?,
        ),
        _ => return Err(malformed_header()),
    };
    if dim == 0 {
        return Err(malformed_header());
    }

    let limit = max_vocab.unwrap_or(usize::MAX);
    let mut vocab: Vec<String> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut duplicates = 0usize;
    while vocab.len() < limit {
        let Some((number, bytes)) = lines.next_line().map_err(|e| DataError::io(path, e))? else {
            break;
        };
        let row_error = |detail: String| DataError::MalformedRow {
            path: path.into(),
            line: number,
            detail,
        };
        let text = std::str::from_utf8(bytes).map_err(|e| row_error(format!("invalid UTF-8: {e}")))?;
        if text.trim().is_empty() {
            continue;
        }
        let mut parts = text.split_whitespace();
        let word = parts.next().expect("line is not blank");
        let start = values.len();
        for (k, field) in parts.enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| row_error(format!("value {} ({field:?}) is not a number", k + 1)))?;
            if !v.is_finite() {
                return Err(row_error(format!("value {} is not finite", k + 1)));
            }
            values.push(v);
        }
        let found = values.len() - start;
        if found != dim {
            return Err(row_error(format!("expected {dim} values after {word:?}, found {found}")));
        }
        if seen.insert(word.to_string()) {
            vocab.push(word.to_string());
        } else {
            values.truncate(start);
            duplicates += 1;
        }
    }
    if duplicates > 0 {
        log::warn!("{}: skipped {duplicates} repeated words", path.display());
    }
    if vocab.is_empty() {
        return Err(DataError::EmptyFile { path: path.into() });
    }
    if vocab.len() < limit && vocab.len() + duplicates != declared {
        log::warn!(
            "{}: header declares {declared} rows but the file holds {}",
            path.display(),
            vocab.len() + duplicates
        );
    }
    let matrix = Mat::from_vec(vocab.len(), dim, values);
    EmbeddingMatrix::new(vocab, matrix).map_err(|e| DataError::format(path, e.to_string()))
}

pub fn write_embeddings(path: &Path, embeddings: &EmbeddingMatrix) -> Result<(), DataError> {
    let mut out = create(path)?;
    let io = |e| DataError::io(path, e);
    writeln!(out, "{} {}", embeddings.len(), embeddings.dim()).map_err(io)?;
    for (i, word) in embeddings.vocab().iter().enumerate() {
        write!(out, "{word}").map_err(io)?;
        for v in embeddings.vectors().row(i) {
            write!(out, " {v}").map_err(io)?;
        }
        writeln!(out).map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Parses a dictionary of whitespace-separated `source target` lines. Blank
/// lines are ignored and repeated pairs collapse to one.
pub fn load_dictionary(path: &Path) -> Result<BilingualDictionary, DataError> {
    let mut lines = Lines::new(open(path)?);
    let mut pairs = Vec::new();
    while let Some((number, bytes)) = lines.next_line().map_err(|e| DataError::io(path, e))? {
        let malformed = |found| DataError::MalformedLine {
            path: path.into(),
            line: number,
            found,
        };
        let text = std::str::from_utf8(bytes).map_err(|_| malformed(0))?;
        let tokens: Vec<&str> = text.split_whitespace().collect();
        match tokens.as_slice() {
            [] => continue,
            [s, t] => pairs.push((s.to_string(), t.to_string())),
            other => return Err(malformed(other.len())),
        }
    }
    BilingualDictionary::from_pairs(pairs).map_err(|_| DataError::EmptyDictionary { path: path.into() })
}

/// Loads a dictionary and flags entries that cannot be evaluated against the
/// given vocabularies.
pub fn load_dictionary_for(
    path: &Path,
    source: &EmbeddingMatrix,
    target: &EmbeddingMatrix,
) -> Result<BilingualDictionary, DataError> {
    let mut dict = load_dictionary(path)?;
    let oov = dict.mark_oov(source, target);
    if oov > 0 {
        log::info!(
            "{}: {oov} of {} source words are out of vocabulary",
            path.display(),
            dict.num_queries()
        );
    }
    Ok(dict)
}

pub fn write_dictionary(path: &Path, dict: &BilingualDictionary) -> Result<(), DataError> {
    let mut out = create(path)?;
    let io = |e| DataError::io(path, e);
    for (s, t) in dict.pairs() {
        writeln!(out, "{s} {t}").map_err(io)?;
    }
    out.flush().map_err(io)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MatrixFormat {
    #[default]
    Binary,
    Text,
}

impl MatrixFormat {
    fn tag(self) -> &'static str {
        match self {
            MatrixFormat::Binary => "binary",
            MatrixFormat::Text => "text",
        }
    }
}

/// Writes a square matrix with the two-line header.
pub fn write_matrix(path: &Path, m: &Mat, format: MatrixFormat) -> Result<(), DataError> {
    if !m.is_square() {
        return Err(DataError::format(path, format!("expected a square matrix, got {:?}", m.shape())));
    }
    let mut out = create(path)?;
    let io = |e| DataError::io(path, e);
    writeln!(out, "{}", m.rows()).map_err(io)?;
    writeln!(out, "{MATRIX_MAGIC} {} {MATRIX_FORMAT_VERSION}", format.tag()).map_err(io)?;
    match format {
        MatrixFormat::Binary => {
            for v in m.as_slice() {
                out.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        MatrixFormat::Text => {
            for i in 0..m.rows() {
                let row: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
                writeln!(out, "{}", row.join(" ")).map_err(io)?;
            }
        }
    }
    out.flush().map_err(io)
}

/// Reads a matrix written by [`write_matrix`] in either format.
pub fn load_matrix(path: &Path) -> Result<Mat, DataError> {
    let mut reader = open(path)?;
    let mut header = String::new();
    let mut read_header_line = |reader: &mut BufReader<File>| -> Result<String, DataError> {
        header.clear();
        reader.read_line(&mut header).map_err(|e| DataError::io(path, e))?;
        Ok(header.trim_end().to_string())
    };
    let first = read_header_line(&mut reader)?;
    if first.is_empty() {
        return Err(DataError::EmptyFile { path: path.into() });
    }
    let d: usize = first
        .parse()
        .map_err(|_| DataError::format(path, format!("bad dimension line {first:?}")))?;
    let second = read_header_line(&mut reader)?;
    let fields: Vec<&str> = second.split_whitespace().collect();
    let format = match fields.as_slice() {
        [MATRIX_MAGIC, "binary", v] if *v == MATRIX_FORMAT_VERSION.to_string() => MatrixFormat::Binary,
        [MATRIX_MAGIC, "text", v] if *v == MATRIX_FORMAT_VERSION.to_string() => MatrixFormat::Text,
        _ => return Err(DataError::format(path, format!("unrecognised matrix header {second:?}"))),
    };
    let values = match format {
        MatrixFormat::Binary => {
            let mut bytes = Vec::new();
            reader.read_to_end(&mut bytes).map_err(|e| DataError::io(path, e))?;
            if bytes.len() != d * d * 8 {
                return Err(DataError::format(
                    path,
                    format!("expected {} payload bytes for d = {d}, found {}", d * d * 8, bytes.len()),
                ));
            }
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of eight")))
                .collect::<Vec<f64>>()
        }
        MatrixFormat::Text => {
            let mut values = Vec::with_capacity(d * d);
            let mut lines = Lines::new(reader);
            while let Some((number, bytes)) = lines.next_line().map_err(|e| DataError::io(path, e))? {
                let text = String::from_utf8_lossy(bytes);
                for field in text.split_whitespace() {
                    let v = field.parse().map_err(|_| DataError::MalformedRow {
                        path: path.into(),
                        line: number + 2,
                        detail: format!("{field:?} is not a number"),
                    })?;
                    values.push(v);
                }
            }
            if values.len() != d * d {
                return Err(DataError::format(path, format!("expected {} values, found {}", d * d, values.len())));
            }
            values
        }
    };
    if !values.iter().all(|v| v.is_finite()) {
        return Err(DataError::format(path, "matrix holds non-finite values"));
    }
    Ok(Mat::from_vec(d, d, values))
}

/// One line of an exported optimization trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// Vocabulary size of the curriculum stage (the full size for GW).
    pub stage: usize,
    pub iteration: usize,
    pub objective: f64,
    /// Fisher norm of the Riemannian gradient; absent for GW outer steps.
    pub grad_norm: Option<f64>,
    /// Accepted step; absent for the initial record and for GW.
    pub step: Option<f64>,
    /// Wall time since the start of the optimization; absent for GW.
    pub millis: Option<f64>,
}

pub fn write_trace(path: &Path, records: &[TraceRecord]) -> Result<(), DataError> {
    let mut out = create(path)?;
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| DataError::format(path, e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| DataError::io(path, e))?;
    }
    out.flush().map_err(|e| DataError::io(path, e))
}

pub fn load_trace(path: &Path) -> Result<Vec<TraceRecord>, DataError> {
    let mut lines = Lines::new(open(path)?);
    let mut records = Vec::new();
    while let Some((number, bytes)) = lines.next_line().map_err(|e| DataError::io(path, e))? {
        if bytes.iter().all(|b| b.is_ascii_whitespace()) {
            continue;
        }
        let record = serde_json::from_slice(bytes).map_err(|e| DataError::MalformedRow {
            path: path.into(),
            line: number,
            detail: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

pub const REPORT_HEADER: &str = "metric\tvalue\thits\tqueries";

/// Tab-separated precision record. Precision is reported twice: over the
/// evaluated queries, and with out-of-vocabulary queries counted as misses.
pub fn format_report(report: &PrecisionReport) -> String {
    let total = report.total_queries();
    let mut s = String::new();
    s.push_str(REPORT_HEADER);
    s.push('\n');
    let mut row = |name: &str, value: f64, hits: usize, queries: usize| {
        s.push_str(&format!("{name}\t{value:.6}\t{hits}\t{queries}\n"));
    };
    row("p@1", report.p_at_1, report.hits_at_1, report.evaluated_queries);
    row("p@5", report.p_at_5, report.hits_at_5, report.evaluated_queries);
    row("p@1_with_oov", report.p_at_1_all(), report.hits_at_1, total);
    row("p@5_with_oov", report.p_at_5_all(), report.hits_at_5, total);
    s.push_str(&format!("skipped_oov\t{}\t0\t{total}\n", report.skipped_oov));
    s
}

/// Parses the precision and count fields back out of [`format_report`] output.
pub fn parse_report(text: &str) -> Option<PrecisionReport> {
    let mut lines = text.lines();
    if lines.next()? != REPORT_HEADER {
        return None;
    }
    let mut fields = std::collections::HashMap::new();
    for line in lines {
        let cols: Vec<&str> = line.split('\t').collect();
        if let [name, value, hits, queries] = cols.as_slice() {
            fields.insert(*name, (value.parse::<f64>().ok()?, hits.parse::<usize>().ok()?, queries.parse::<usize>().ok()?));
        }
    }
    let (p1, h1, evaluated) = *fields.get("p@1")?;
    let (p5, h5, _) = *fields.get("p@5")?;
    let (skipped, _, _) = *fields.get("skipped_oov")?;
    Some(PrecisionReport {
        p_at_1: p1,
        p_at_5: p5,
        evaluated_queries: evaluated,
        skipped_oov: skipped as usize,
        hits_at_1: h1,
        hits_at_5: h5,
    })
}

/// Ranked translations as `source<TAB>target<TAB>score`, best first within
/// each query.
pub fn write_ranked_pairs(
    path: &Path,
    queries: &[usize],
    retrieved: &RetrievalResult,
    source: &EmbeddingMatrix,
    target: &EmbeddingMatrix,
) -> Result<(), DataError> {
    let mut out = create(path)?;
    let io = |e| DataError::io(path, e);
    for (&q, ranked) in queries.iter().zip(&retrieved.neighbors) {
        for &(j, score) in ranked {
            writeln!(out, "{}\t{}\t{score}", source.vocab()[q], target.vocab()[j]).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}
