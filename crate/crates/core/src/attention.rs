//! Attention dumps and most-attended-word extraction.
//!
//! Per document: average the heads of the dumped layer, drop special tokens,
//! merge subwords into words by averaging every subword-pair cell, then keep
//! the words whose column mean (attention received from every position)
//! strictly exceeds the mean of the whole word-level matrix. Corpus-level
//! scores average each term's per-document column mean over the documents
//! that contain it.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{is_punctuation, TokenizationPolicy};
use crate::featsel::{Method, MethodTag, TermRanking};
use crate::par;

pub const SCHEMA_VERSION: u32 = 1;
/// Allowed deviation of a dumped attention row from summing to one.
pub const ROW_SUM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum DumpError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed dump record: {message}")]
    Malformed { path: String, line: usize, message: String },
    #[error("unknown schema version {0}")]
    UnknownSchema(u32),
    #[error("{doc_id}: dimension mismatch: {what}")]
    DimensionMismatch { doc_id: String, what: String },
    #[error("{doc_id}: row-stochastic violation: head {head} row {row} sums to {sum}")]
    RowStochastic { doc_id: String, head: usize, row: usize, sum: f64 },
    #[error("{doc_id}: invalid record: {message}")]
    Invalid { doc_id: String, message: String },
    #[error("no content tokens")]
    NoContentTokens,
    #[error("empty attention stream")]
    EmptyStream,
}

pub type Result<T> = std::result::Result<T, DumpError>;

/// Dense square matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    pub fn filled(n: usize, value: f64) -> Self {
        Self { n, data: vec![value; n * n] }
    }

    /// Builds from nested rows; `None` unless every row has `rows.len()` entries.
    pub fn from_rows(rows: &[Vec<f64>]) -> Option<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return None;
        }
        Some(Self { n, data: rows.iter().flatten().copied().collect() })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }

    /// Mean over all entries; 0 for the empty matrix.
    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.data.iter().sum::<f64>() / self.data.len() as f64
        }
    }

    /// Submatrix keeping rows and columns at `keep`.
    pub fn select(&self, keep: &[usize]) -> SquareMatrix {
        let mut out = SquareMatrix::zeros(keep.len());
        for (a, &i) in keep.iter().enumerate() {
            for (b, &j) in keep.iter().enumerate() {
                out.set(a, b, self.get(i, j));
            }
        }
        out
    }

    pub fn scale(&self, c: f64) -> SquareMatrix {
        Self { n: self.n, data: self.data.iter().map(|x| x * c).collect() }
    }
}

/// Weights of the dumped layer: either every head or their precomputed mean.
#[derive(Debug, Clone, PartialEq)]
pub enum AttentionWeights {
    Mean(SquareMatrix),
    Heads(Vec<SquareMatrix>),
}

/// One document's attention at a single layer, with subword alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    pub doc_id: String,
    pub layer: i64,
    pub tokens: Vec<String>,
    pub special: Vec<bool>,
    pub word_ids: Vec<Option<usize>>,
    pub weights: AttentionWeights,
    pub truncated: Option<bool>,
}

/// On-disk shape of one dump line.
#[derive(Debug, Serialize, Deserialize)]
struct DumpLine {
    doc_id: String,
    schema_version: u32,
    layer: i64,
    tokens: Vec<String>,
    special: Vec<u8>,
    word_ids: Vec<Option<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    attn_mean: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    attn_heads: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    truncated: Option<bool>,
}

impl AttentionRecord {
    /// Checks every record invariant: shapes, special/word-id consistency,
    /// non-negative entries and row sums within [`ROW_SUM_TOLERANCE`].
    pub fn validate(&self) -> Result<()> {
        let n = self.tokens.len();
        let invalid = |message: String| DumpError::Invalid { doc_id: self.doc_id.clone(), message };
        let mismatch = |what: String| DumpError::DimensionMismatch { doc_id: self.doc_id.clone(), what };
        if self.special.len() != n {
            return Err(mismatch(format!("{} special flags for {n} tokens", self.special.len())));
        }
        if self.word_ids.len() != n {
            return Err(mismatch(format!("{} word ids for {n} tokens", self.word_ids.len())));
        }
        let mut last: Option<usize> = None;
        for (i, (&sp, wid)) in self.special.iter().zip(&self.word_ids).enumerate() {
            match (sp, wid) {
                (true, Some(_)) => return Err(invalid(format!("special token {i} has a word id"))),
                (false, None) => return Err(invalid(format!("content token {i} has no word id"))),
                (false, Some(w)) => {
                    if last.is_some_and(|l| *w < l) {
                        return Err(invalid(format!("word ids decrease at token {i}")));
                    }
                    last = Some(*w);
                }
                (true, None) => {}
            }
        }
        let heads: Vec<&SquareMatrix> = match &self.weights {
            AttentionWeights::Mean(m) => vec![m],
            AttentionWeights::Heads(hs) => {
                if hs.is_empty() {
                    return Err(invalid("empty head stack".into()));
                }
                hs.iter().collect()
            }
        };
        for (h, m) in heads.iter().enumerate() {
            if m.size() != n {
                return Err(mismatch(format!("matrix is {0}x{0} for {n} tokens", m.size())));
            }
            for r in 0..n {
                let row = m.row(r);
                if row.iter().any(|x| !x.is_finite() || *x < 0.0) {
                    return Err(invalid(format!("head {h} row {r} has a negative or non-finite entry")));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                    return Err(DumpError::RowStochastic { doc_id: self.doc_id.clone(), head: h, row: r, sum });
                }
            }
        }
        Ok(())
    }

    /// Parses and validates one dump line.
    pub fn from_json(line: &str) -> std::result::Result<Self, DumpError> {
        let raw: DumpLine = serde_json::from_str(line).map_err(|e| DumpError::Malformed {
            path: String::new(),
            line: 0,
            message: e.to_string(),
        })?;
        Self::from_raw(raw)
    }

    fn from_raw(raw: DumpLine) -> Result<Self> {
        if raw.schema_version != SCHEMA_VERSION {
            return Err(DumpError::UnknownSchema(raw.schema_version));
        }
        let doc_id = raw.doc_id;
        let mismatch = |what: String| DumpError::DimensionMismatch { doc_id: doc_id.clone(), what };
        let matrix = |rows: &[Vec<f64>]| {
            SquareMatrix::from_rows(rows).ok_or_else(|| {
                let cols = rows.first().map_or(0, Vec::len);
                mismatch(format!("matrix is {}x{} for {} tokens", rows.len(), cols, raw.tokens.len()))
            })
        };
        let weights = match (&raw.attn_mean, &raw.attn_heads) {
            (Some(m), None) => AttentionWeights::Mean(matrix(m)?),
            (None, Some(hs)) => AttentionWeights::Heads(hs.iter().map(|h| matrix(h)).collect::<Result<_>>()?),
            _ => {
                return Err(DumpError::Invalid {
                    doc_id,
                    message: "exactly one of attn_mean or attn_heads is required".into(),
                })
            }
        };
        let mut word_ids = Vec::with_capacity(raw.word_ids.len());
        for w in &raw.word_ids {
            word_ids.push(match w {
                None => None,
                Some(v) if *v >= 0 => Some(*v as usize),
                Some(v) => {
                    return Err(DumpError::Invalid { doc_id, message: format!("negative word id {v}") })
                }
            });
        }
        let special = raw
            .special
            .iter()
            .map(|&s| match s {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(other),
            })
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|v| DumpError::Invalid { doc_id: doc_id.clone(), message: format!("special flag {v} is not 0/1") })?;
        let rec = AttentionRecord {
            doc_id,
            layer: raw.layer,
            tokens: raw.tokens,
            special,
            word_ids,
            weights,
            truncated: raw.truncated,
        };
        rec.validate()?;
        Ok(rec)
    }

    /// Serializes as one dump line. Floats keep full round-trip precision.
    pub fn to_json(&self) -> String {
        let (attn_mean, attn_heads) = match &self.weights {
            AttentionWeights::Mean(m) => (Some(m.rows()), None),
            AttentionWeights::Heads(hs) => (None, Some(hs.iter().map(SquareMatrix::rows).collect())),
        };
        let raw = DumpLine {
            doc_id: self.doc_id.clone(),
            schema_version: SCHEMA_VERSION,
            layer: self.layer,
            tokens: self.tokens.clone(),
            special: self.special.iter().map(|&s| u8::from(s)).collect(),
            word_ids: self.word_ids.iter().map(|w| w.map(|x| x as i64)).collect(),
            attn_mean,
            attn_heads,
            truncated: self.truncated,
        };
        serde_json::to_string(&raw).expect("dump record serializes")
    }

    /// Head mean, special-token removal and subword merging in one step.
    pub fn word_matrix(&self) -> Result<WordAttentionMatrix> {
        let mean = head_mean(self);
        let (stripped, kept) = strip_special(&mean, &self.special)?;
        let tokens: Vec<String> = kept.iter().map(|&i| self.tokens[i].clone()).collect();
        let ids: Vec<usize> = kept
            .iter()
            .map(|&i| self.word_ids[i].expect("validated: content tokens carry word ids"))
            .collect();
        Ok(merge_subwords(&stripped, &tokens, &ids))
    }
}

/// Iterates over the validated records of one dump file.
#[derive(Debug)]
pub struct DumpReader<R> {
    lines: std::io::Lines<R>,
    path: String,
    line: usize,
}

impl DumpReader<BufReader<fs::File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|source| DumpError::Io { path: path.display().to_string(), source })?;
        Ok(Self::new(BufReader::new(file), path.display().to_string()))
    }
}

impl<R: BufRead> DumpReader<R> {
    pub fn new(reader: R, path: impl Into<String>) -> Self {
        Self { lines: reader.lines(), path: path.into(), line: 0 }
    }
}

impl<R: BufRead> Iterator for DumpReader<R> {
    type Item = Result<AttentionRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = self.lines.next()?;
            self.line += 1;
            let line = match line {
                Ok(l) => l,
                Err(source) => return Some(Err(DumpError::Io { path: self.path.clone(), source })),
            };
            if line.trim().is_empty() {
                continue;
            }
            let raw: DumpLine = match serde_json::from_str(&line) {
                Ok(r) => r,
                Err(e) => {
                    return Some(Err(DumpError::Malformed {
                        path: self.path.clone(),
                        line: self.line,
                        message: e.to_string(),
                    }))
                }
            };
            return Some(AttentionRecord::from_raw(raw));
        }
    }
}

/// Dump files under `path`: the file itself, or every regular file in the
/// directory sorted by name.
pub fn dump_files(path: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let path = path.as_ref();
    let io = |source| DumpError::Io { path: path.display().to_string(), source };
    if path.is_dir() {
        let mut files = Vec::new();
        for entry in fs::read_dir(path).map_err(io)? {
            let p = entry.map_err(io)?.path();
            if p.is_file() {
                files.push(p);
            }
        }
        files.sort();
        Ok(files)
    } else {
        fs::metadata(path).map_err(io)?;
        Ok(vec![path.to_path_buf()])
    }
}

/// Loads every record from a dump file or directory, failing on the first
/// invalid one.
pub fn load_dumps(path: impl AsRef<Path>) -> Result<Vec<AttentionRecord>> {
    let mut out = Vec::new();
    for file in dump_files(path)? {
        for rec in DumpReader::open(&file)? {
            out.push(rec?);
        }
    }
    Ok(out)
}

/// Writes records as a dump file.
pub fn write_dumps<'a>(mut w: impl Write, records: impl IntoIterator<Item = &'a AttentionRecord>) -> std::io::Result<()> {
    for r in records {
        writeln!(w, "{}", r.to_json())?;
    }
    Ok(())
}

/// Elementwise mean over heads. Pre-averaged records pass through.
pub fn head_mean(record: &AttentionRecord) -> SquareMatrix {
    match &record.weights {
        AttentionWeights::Mean(m) => m.clone(),
        AttentionWeights::Heads(heads) => {
            let n = heads[0].size();
            let mut out = SquareMatrix::zeros(n);
            for h in heads {
                for (o, x) in out.data.iter_mut().zip(&h.data) {
                    *o += x;
                }
            }
            let k = heads.len() as f64;
            out.data.iter_mut().for_each(|x| *x /= k);
            out
        }
    }
}

/// Removes rows and columns of special tokens. Remaining weights are kept
/// as they are, without renormalization.
pub fn strip_special(matrix: &SquareMatrix, special: &[bool]) -> Result<(SquareMatrix, Vec<usize>)> {
    let keep: Vec<usize> = (0..matrix.size()).filter(|&i| !special.get(i).copied().unwrap_or(false)).collect();
    if keep.is_empty() {
        return Err(DumpError::NoContentTokens);
    }
    Ok((matrix.select(&keep), keep))
}

/// Word-level attention for one document.
#[derive(Debug, Clone, PartialEq)]
pub struct WordAttentionMatrix {
    pub words: Vec<String>,
    pub weights: SquareMatrix,
}

impl WordAttentionMatrix {
    pub fn new(words: Vec<String>, weights: SquareMatrix) -> Self {
        assert_eq!(words.len(), weights.size(), "one word per matrix row");
        Self { words, weights }
    }

    /// CSV with a header row of words and one row per attending word.
    pub fn to_csv(&self) -> String {
        let esc = |w: &str| {
            if w.contains([',', '"', '\n']) {
                format!("\"{}\"", w.replace('"', "\"\""))
            } else {
                w.to_string()
            }
        };
        let mut out = String::from("word");
        for w in &self.words {
            out.push(',');
            out.push_str(&esc(w));
        }
        out.push('\n');
        for (i, w) in self.words.iter().enumerate() {
            out.push_str(&esc(w));
            for x in self.weights.row(i) {
                out.push(',');
                out.push_str(&crate::format::f10(*x));
            }
            out.push('\n');
        }
        out
    }
}

/// Strips WordPiece continuation (`##`) and SentencePiece/BPE word-start
/// markers from a subword.
fn strip_marker(piece: &str) -> &str {
    piece
        .strip_prefix("##")
        .or_else(|| piece.strip_prefix('\u{2581}'))
        .or_else(|| piece.strip_prefix('\u{0120}'))
        .unwrap_or(piece)
}

/// Groups consecutive subwords sharing a word id. Cell (i, j) of the result
/// is the mean of every subword-pair cell between word i and word j.
pub fn merge_subwords(matrix: &SquareMatrix, tokens: &[String], word_ids: &[usize]) -> WordAttentionMatrix {
    assert_eq!(tokens.len(), matrix.size());
    assert_eq!(word_ids.len(), matrix.size());
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut words: Vec<String> = Vec::new();
    for (i, &w) in word_ids.iter().enumerate() {
        if i > 0 && word_ids[i - 1] == w {
            groups.last_mut().expect("group open").push(i);
            words.last_mut().expect("word open").push_str(strip_marker(&tokens[i]));
        } else {
            groups.push(vec![i]);
            words.push(strip_marker(&tokens[i]).to_string());
        }
    }
    let mut out = SquareMatrix::zeros(groups.len());
    for (a, ga) in groups.iter().enumerate() {
        for (b, gb) in groups.iter().enumerate() {
            let mut sum = 0.0;
            for &s in ga {
                for &t in gb {
                    sum += matrix.get(s, t);
                }
            }
            out.set(a, b, sum / (ga.len() * gb.len()) as f64);
        }
    }
    WordAttentionMatrix::new(words, out)
}

/// Column means: the attention each word receives, averaged over rows.
pub fn vertical_attention(wam: &WordAttentionMatrix) -> Vec<f64> {
    let n = wam.weights.size();
    if n == 0 {
        return Vec::new();
    }
    let mut cols = vec![0.0; n];
    for i in 0..n {
        for (c, x) in cols.iter_mut().zip(wam.weights.row(i)) {
            *c += x;
        }
    }
    cols.iter_mut().for_each(|c| *c /= n as f64);
    cols
}

/// Relative margin below which a column mean counts as equal to the matrix
/// mean. The two are summed in different orders, so a uniform matrix would
/// otherwise select columns on rounding noise.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Positions whose vertical attention is strictly above the matrix mean.
pub fn select_attended_positions(wam: &WordAttentionMatrix) -> Vec<usize> {
    let mean = wam.weights.mean();
    let threshold = mean + TIE_TOLERANCE * mean.abs();
    vertical_attention(wam)
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > threshold)
        .map(|(i, _)| i)
        .collect()
}

/// Words whose vertical attention is strictly above the matrix mean.
pub fn select_attended(wam: &WordAttentionMatrix) -> BTreeSet<String> {
    select_attended_positions(wam).into_iter().map(|i| wam.words[i].clone()).collect()
}

/// Per-document summary used by the corpus reduction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentAttention {
    pub doc_id: String,
    /// Mean vertical attention of each distinct (normalized) word.
    pub scores: BTreeMap<String, f64>,
    pub selected: BTreeSet<String>,
    pub tokens: BTreeSet<String>,
}

/// Runs the per-document pipeline and normalizes words with `policy`
/// (case only; stopwords and punctuation are kept).
pub fn document_attention(record: &AttentionRecord, policy: &TokenizationPolicy) -> Result<DocumentAttention> {
    let wam = record.word_matrix()?;
    let vertical = vertical_attention(&wam);
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (w, s) in wam.words.iter().zip(&vertical) {
        let e = acc.entry(policy.normalize(w)).or_insert((0.0, 0));
        e.0 += s;
        e.1 += 1;
    }
    let scores = acc.into_iter().map(|(w, (s, c))| (w, s / c as f64)).collect();
    let selected = select_attended_positions(&wam).into_iter().map(|i| policy.normalize(&wam.words[i])).collect();
    let tokens = record
        .tokens
        .iter()
        .zip(&record.special)
        .filter(|(_, &sp)| !sp)
        .map(|(t, _)| t.clone())
        .collect();
    Ok(DocumentAttention { doc_id: record.doc_id.clone(), scores, selected, tokens })
}

/// Corpus-level attended vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct AttendedVocabulary {
    /// Mean per-document vertical attention of every seen term.
    pub scores: BTreeMap<String, f64>,
    /// Number of documents in which each term occurs.
    pub doc_counts: BTreeMap<String, usize>,
    /// Number of documents in which each term was selected.
    pub selection_events: BTreeMap<String, usize>,
    /// Terms selected in at least one document.
    pub attended: BTreeSet<String>,
    /// Attended terms by mean attention, descending.
    pub ranking: TermRanking,
    pub documents: usize,
    /// Distinct non-special dump tokens (subword types).
    pub token_types: usize,
}

impl AttendedVocabulary {
    /// Attended terms over all distinct words seen.
    pub fn word_fraction(&self) -> f64 {
        ratio(self.attended.len(), self.scores.len())
    }

    /// Attended terms over distinct subword types seen in the dumps.
    pub fn token_fraction(&self) -> f64 {
        ratio(self.attended.len(), self.token_types)
    }

    /// Ranking with stopwords and punctuation-only terms removed.
    pub fn content_ranking(&self, policy: &TokenizationPolicy) -> TermRanking {
        self.ranking.filtered(|t| !is_punctuation(t) && !policy.is_stopword(t))
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Reduces per-document summaries in the given order.
pub fn reduce_documents(docs: &[DocumentAttention]) -> Result<AttendedVocabulary> {
    if docs.is_empty() {
        return Err(DumpError::EmptyStream);
    }
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    let mut events: BTreeMap<String, usize> = BTreeMap::new();
    let mut tokens: BTreeSet<&str> = BTreeSet::new();
    for d in docs {
        for (w, s) in &d.scores {
            let e = sums.entry(w.clone()).or_insert((0.0, 0));
            e.0 += s;
            e.1 += 1;
        }
        for w in &d.selected {
            *events.entry(w.clone()).or_insert(0) += 1;
        }
        tokens.extend(d.tokens.iter().map(String::as_str));
    }
    let scores: BTreeMap<String, f64> = sums.iter().map(|(w, (s, c))| (w.clone(), s / *c as f64)).collect();
    let doc_counts = sums.iter().map(|(w, (_, c))| (w.clone(), *c)).collect();
    let attended: BTreeSet<String> = events.keys().cloned().collect();
    let ranking = TermRanking::from_scores(
        MethodTag::plain(Method::Attention),
        attended.iter().map(|w| (w.clone(), scores[w])),
    );
    Ok(AttendedVocabulary {
        scores,
        doc_counts,
        selection_events: events,
        attended,
        ranking,
        documents: docs.len(),
        token_types: tokens.len(),
    })
}

/// Aggregates attention over a set of records. Per-record work runs in
/// parallel; the reduction is sequential in record order.
pub fn aggregate_attention(records: &[AttentionRecord], policy: &TokenizationPolicy) -> Result<AttendedVocabulary> {
    if records.is_empty() {
        return Err(DumpError::EmptyStream);
    }
    let docs = par::map(records, |r| document_attention(r, policy)).into_iter().collect::<Result<Vec<_>>>()?;
    reduce_documents(&docs)
}
