//! The `attn-corpus` v1 file format.
//!
//! UTF-8 text with one JSON object per line. The first line is the header
//! `{"format":"attn-corpus","version":1,"model":..,"layers":l,"heads":a}`;
//! every following line is a sentence record
//! `{"id":..,"tokens":[..],"attn":{"u.v":[n*n row-major floats],..}}`.
//! Whole-file gzip is detected on read by its magic bytes.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FORMAT_NAME: &str = "attn-corpus";
pub const FORMAT_VERSION: u32 = 1;

/// Rows whose mass lies within this band of 1 are renormalized; others are rejected.
pub const ROW_SUM_TOLERANCE: f64 = 1e-2;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: invalid JSON: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("format error: {0}")]
    Format(String),
    #[error("sentence {sentence}, head {head}, row {row}: row sums to {sum}")]
    RowSum { sentence: String, head: HeadId, row: usize, sum: f64 },
    #[error("sentence {sentence}, head {head}, row {row}: entry {value} is negative or not finite")]
    BadEntry { sentence: String, head: HeadId, row: usize, value: f64 },
    #[error("sentence {sentence}, head {head}: expected {expected} values, found {found}")]
    Shape { sentence: String, head: HeadId, expected: usize, found: usize },
    #[error("sentence {sentence}: {message}")]
    Record { sentence: String, message: String },
}

/// Head `v` of layer `u`, both 1-based. Ordered by `(layer, index)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HeadId {
    pub layer: usize,
    pub index: usize,
}

impl HeadId {
    pub fn new(layer: usize, index: usize) -> Self {
        HeadId { layer, index }
    }

    /// `(u - 1) * a + (v - 1)`.
    pub fn flat(&self, heads_per_layer: usize) -> usize {
        (self.layer - 1) * heads_per_layer + (self.index - 1)
    }

    pub fn from_flat(flat: usize, heads_per_layer: usize) -> Self {
        HeadId { layer: flat / heads_per_layer + 1, index: flat % heads_per_layer + 1 }
    }
}

impl fmt::Display for HeadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.layer, self.index)
    }
}

impl FromStr for HeadId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (u, v) = s.split_once('.').ok_or_else(|| format!("head key {s:?} is not of the form u.v"))?;
        let layer: usize = u.parse().map_err(|_| format!("bad layer in head key {s:?}"))?;
        let index: usize = v.parse().map_err(|_| format!("bad head index in head key {s:?}"))?;
        if layer == 0 || index == 0 {
            return Err(format!("head key {s:?} must be 1-based"));
        }
        Ok(HeadId { layer, index })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusHeader {
    #[serde(rename = "format")]
    pub format_name: String,
    pub version: u32,
    #[serde(rename = "model")]
    pub model_name: String,
    #[serde(rename = "layers")]
    pub num_layers: usize,
    #[serde(rename = "heads")]
    pub heads_per_layer: usize,
}

impl CorpusHeader {
    pub fn new(model_name: impl Into<String>, num_layers: usize, heads_per_layer: usize) -> Self {
        CorpusHeader {
            format_name: FORMAT_NAME.to_string(),
            version: FORMAT_VERSION,
            model_name: model_name.into(),
            num_layers,
            heads_per_layer,
        }
    }

    pub fn num_heads(&self) -> usize {
        self.num_layers * self.heads_per_layer
    }

    /// All heads in `(layer, index)` order.
    pub fn heads(&self) -> impl Iterator<Item = HeadId> + '_ {
        (0..self.num_heads()).map(|f| HeadId::from_flat(f, self.heads_per_layer))
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.format_name != FORMAT_NAME {
            return Err(CorpusError::Format(format!(
                "expected format {FORMAT_NAME:?}, found {:?}",
                self.format_name
            )));
        }
        if self.version != FORMAT_VERSION {
            return Err(CorpusError::Format(format!("unsupported version {}", self.version)));
        }
        if self.num_layers < 1 || self.heads_per_layer < 1 {
            return Err(CorpusError::Format("layers and heads must both be at least 1".into()));
        }
        Ok(())
    }
}

/// A square row-stochastic matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnMatrix {
    n: usize,
    data: Vec<f64>,
}

impl AttnMatrix {
    /// Wraps raw values without validation.
    pub fn from_raw(n: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * n, "matrix data must hold n*n values");
        AttnMatrix { n, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for r in rows {
            assert_eq!(r.len(), n, "matrix must be square");
            data.extend_from_slice(r);
        }
        AttnMatrix { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Row `x` (0-based): the attention distribution of token `x`.
    pub fn row(&self, x: usize) -> &[f64] {
        &self.data[x * self.n..(x + 1) * self.n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.n.max(1))
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Uniform average of several same-sized matrices.
    pub fn mean<'a>(mats: impl IntoIterator<Item = &'a AttnMatrix>) -> Option<AttnMatrix> {
        let mut iter = mats.into_iter();
        let first = iter.next()?;
        let mut acc = first.data.clone();
        let mut count = 1.0;
        for m in iter {
            assert_eq!(m.n, first.n, "matrices must share a size");
            for (a, v) in acc.iter_mut().zip(&m.data) {
                *a += v;
            }
            count += 1.0;
        }
        acc.iter_mut().for_each(|a| *a /= count);
        Some(AttnMatrix { n: first.n, data: acc })
    }

    /// Checks entries and row sums, rescaling every row to sum to exactly 1.
    fn normalize_rows(&mut self, sentence: &str, head: HeadId) -> Result<(), CorpusError> {
        let n = self.n;
        for (row, chunk) in self.data.chunks_mut(n).enumerate() {
            if let Some(&value) = chunk.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(CorpusError::BadEntry { sentence: sentence.to_string(), head, row, value });
            }
            let sum: f64 = chunk.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(CorpusError::RowSum { sentence: sentence.to_string(), head, row, sum });
            }
            chunk.iter_mut().for_each(|v| *v /= sum);
        }
        Ok(())
    }
}

/// One sentence with the attention matrix of every head.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceRecord {
    pub id: String,
    pub tokens: Vec<String>,
    pub attn: BTreeMap<HeadId, AttnMatrix>,
}

impl SentenceRecord {
    pub fn n(&self) -> usize {
        self.tokens.len()
    }

    pub fn head(&self, head: HeadId) -> Option<&AttnMatrix> {
        self.attn.get(&head)
    }

    /// Validates the record against a header and renormalizes its rows.
    pub fn validate(&mut self, header: &CorpusHeader) -> Result<(), CorpusError> {
        let n = self.tokens.len();
        if n == 0 {
            return Err(self.record_error("sentence has no tokens"));
        }
        if self.attn.len() != header.num_heads() {
            return Err(self.record_error(&format!(
                "expected {} heads, found {}",
                header.num_heads(),
                self.attn.len()
            )));
        }
        for (head, m) in self.attn.iter_mut() {
            if head.layer > header.num_layers || head.index > header.heads_per_layer {
                return Err(CorpusError::Record {
                    sentence: self.id.clone(),
                    message: format!("head {head} outside {}x{}", header.num_layers, header.heads_per_layer),
                });
            }
            if m.n != n || m.data.len() != n * n {
                return Err(CorpusError::Shape {
                    sentence: self.id.clone(),
                    head: *head,
                    expected: n * n,
                    found: m.data.len(),
                });
            }
            m.normalize_rows(&self.id, *head)?;
        }
        Ok(())
    }

    fn record_error(&self, message: &str) -> CorpusError {
        CorpusError::Record { sentence: self.id.clone(), message: message.to_string() }
    }
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    id: String,
    tokens: Vec<String>,
    attn: BTreeMap<String, Vec<f64>>,
}

impl RecordLine {
    fn into_record(self) -> Result<SentenceRecord, CorpusError> {
        let n = self.tokens.len();
        let mut attn = BTreeMap::new();
        for (key, values) in self.attn {
            let head: HeadId = key
                .parse()
                .map_err(|message| CorpusError::Record { sentence: self.id.clone(), message })?;
            if values.len() != n * n {
                return Err(CorpusError::Shape {
                    sentence: self.id.clone(),
                    head,
                    expected: n * n,
                    found: values.len(),
                });
            }
            attn.insert(head, AttnMatrix { n, data: values });
        }
        Ok(SentenceRecord { id: self.id, tokens: self.tokens, attn })
    }
}

/// Streaming reader over a corpus file. Yields validated, renormalized records.
pub struct CorpusReader {
    header: CorpusHeader,
    lines: io::Lines<Box<dyn BufRead>>,
    line_no: usize,
}

impl CorpusReader {
    pub fn from_reader(reader: Box<dyn BufRead>) -> Result<Self, CorpusError> {
        let mut lines = reader.lines();
        let first = lines
            .next()
            .ok_or_else(|| CorpusError::Format("file is empty; expected a header line".into()))??;
        let header: CorpusHeader = serde_json::from_str(&first)
            .map_err(|e| CorpusError::Format(format!("malformed header: {e}")))?;
        header.validate()?;
        Ok(CorpusReader { header, lines, line_no: 1 })
    }

    pub fn header(&self) -> &CorpusHeader {
        &self.header
    }
}

impl Iterator for CorpusReader {
    type Item = Result<SentenceRecord, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: RecordLine = match serde_json::from_str(&line) {
                Ok(r) => r,
                Err(source) => return Some(Err(CorpusError::Json { line: self.line_no, source })),
            };
            let header = &self.header;
            return Some(parsed.into_record().and_then(|mut r| r.validate(header).map(|_| r)));
        }
    }
}

/// Opens a corpus file, transparently decompressing gzip.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<CorpusReader, CorpusError> {
    let mut file = BufReader::new(File::open(path)?);
    let gz = {
        let buf = file.fill_buf()?;
        buf.len() >= 2 && buf[0] == 0x1F && buf[1] == 0x8B
    };
    let reader: Box<dyn BufRead> = if gz {
        Box::new(BufReader::new(GzDecoder::new(file)))
    } else {
        Box::new(file)
    };
    CorpusReader::from_reader(reader)
}

/// Parses a corpus held in memory (plain text only).
pub fn read_corpus_str(text: &str) -> Result<CorpusReader, CorpusError> {
    let owned = text.to_string().into_bytes();
    CorpusReader::from_reader(Box::new(BufReader::new(io::Cursor::new(owned))))
}

/// Reads a whole corpus into memory.
pub fn read_all(path: impl AsRef<Path>) -> Result<(CorpusHeader, Vec<SentenceRecord>), CorpusError> {
    let reader = read_corpus(path)?;
    let header = reader.header().clone();
    let records = reader.collect::<Result<Vec<_>, _>>()?;
    Ok((header, records))
}

/// Writes a header line followed by one line per record.
pub fn write_corpus_to<'a, W: Write>(
    header: &CorpusHeader,
    records: impl IntoIterator<Item = &'a SentenceRecord>,
    out: W,
) -> Result<(), CorpusError> {
    let mut out = BufWriter::new(out);
    serde_json::to_writer(&mut out, header).map_err(io::Error::from)?;
    out.write_all(b"\n")?;
    for r in records {
        let line = RecordLine {
            id: r.id.clone(),
            tokens: r.tokens.clone(),
            attn: r.attn.iter().map(|(h, m)| (h.to_string(), m.data.clone())).collect(),
        };
        serde_json::to_writer(&mut out, &line).map_err(io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Writes a corpus file; paths ending in `.gz` are gzip-compressed.
pub fn write_corpus<'a>(
    header: &CorpusHeader,
    records: impl IntoIterator<Item = &'a SentenceRecord>,
    path: impl AsRef<Path>,
) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let file = File::create(path)?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut enc = GzEncoder::new(file, Compression::default());
        write_corpus_to(header, records, &mut enc)?;
        enc.finish()?;
        Ok(())
    } else {
        write_corpus_to(header, records, file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = r#"{"format":"attn-corpus","version":1,"model":"toy","layers":1,"heads":1}"#;

    fn one_head_file(row_json: &str) -> String {
        format!("{HEADER}\n{{\"id\":\"s1\",\"tokens\":[\"a\",\"b\"],\"attn\":{{\"1.1\":{row_json}}}}}\n")
    }

    #[test]
    fn reads_minimal_file() {
        let text = one_head_file("[0.5,0.5,1,0]");
        let mut reader = read_corpus_str(&text).unwrap();
        assert_eq!(reader.header().num_heads(), 1);
        let rec = reader.next().unwrap().unwrap();
        assert_eq!(rec.n(), 2);
        assert_eq!(rec.head(HeadId::new(1, 1)).unwrap().row(1), &[1.0, 0.0]);
        assert!(reader.next().is_none());
    }

    #[test]
    fn rejects_row_outside_band() {
        let text = one_head_file("[0.45,0.45,1,0]");
        let err = read_corpus_str(&text).unwrap().next().unwrap().unwrap_err();
        match err {
            CorpusError::RowSum { sentence, head, row, .. } => {
                assert_eq!(sentence, "s1");
                assert_eq!(head, HeadId::new(1, 1));
                assert_eq!(row, 0);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn renormalizes_small_drift() {
        // 0.50002 + 0.50002 = 1.00004, inside the band.
        let text = one_head_file("[0.50002,0.50002,1,0]");
        let rec = read_corpus_str(&text).unwrap().next().unwrap().unwrap();
        let row = rec.head(HeadId::new(1, 1)).unwrap().row(0);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((row[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn band_edges() {
        let inside = one_head_file("[0.5,0.5049,1,0]");
        assert!(read_corpus_str(&inside).unwrap().next().unwrap().is_ok());
        let outside = one_head_file("[0.5,0.5101,1,0]");
        assert!(read_corpus_str(&outside).unwrap().next().unwrap().is_err());
    }

    #[test]
    fn rejects_shape_mismatch_and_empty_sentence() {
        let text = one_head_file("[0.5,0.5,1]");
        assert!(matches!(
            read_corpus_str(&text).unwrap().next().unwrap(),
            Err(CorpusError::Shape { expected: 4, found: 3, .. })
        ));
        let empty = format!("{HEADER}\n{{\"id\":\"e\",\"tokens\":[],\"attn\":{{\"1.1\":[]}}}}\n");
        assert!(matches!(
            read_corpus_str(&empty).unwrap().next().unwrap(),
            Err(CorpusError::Record { .. })
        ));
    }

    #[test]
    fn rejects_bad_headers() {
        assert!(read_corpus_str("").is_err());
        assert!(read_corpus_str("{\"format\":\"other\",\"version\":1,\"model\":\"m\",\"layers\":1,\"heads\":1}\n").is_err());
        assert!(read_corpus_str("{\"format\":\"attn-corpus\",\"version\":1,\"model\":\"m\",\"layers\":0,\"heads\":1}\n").is_err());
        assert!(read_corpus_str("not json\n").is_err());
    }

    #[test]
    fn rejects_missing_heads() {
        let text = format!(
            "{}\n{}\n",
            r#"{"format":"attn-corpus","version":1,"model":"toy","layers":1,"heads":2}"#,
            r#"{"id":"s","tokens":["a"],"attn":{"1.1":[1.0]}}"#
        );
        assert!(read_corpus_str(&text).unwrap().next().unwrap().is_err());
    }

    #[test]
    fn head_flat_index_bijection() {
        let a = 12;
        for f in 0..144 {
            let h = HeadId::from_flat(f, a);
            assert_eq!(h.flat(a), f);
            assert_eq!(h.to_string().parse::<HeadId>().unwrap(), h);
        }
        assert!(HeadId::new(1, 12) < HeadId::new(2, 1));
        assert!("0.1".parse::<HeadId>().is_err());
    }
}
