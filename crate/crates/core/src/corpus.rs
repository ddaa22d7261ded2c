//! Labeled document corpus, its two-level category taxonomy, tokenization,
//! vocabulary construction and cross-validation folds.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::format::sha256_hex;
use crate::par;

/// Stopword list bundled with the crate. Bump [`DEFAULT_STOPWORDS_VERSION`]
/// whenever the file changes.
pub const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords_en.txt");
pub const DEFAULT_STOPWORDS_VERSION: &str = "en-1";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: document {id:?} has empty categories")]
    EmptyCategories { line: usize, id: String },
    #[error("duplicate document id {0:?}")]
    DuplicateId(String),
    #[error("document {id:?} references unknown category {code:?}")]
    UnknownCategory { id: String, code: String },
    #[error("invalid taxonomy: {0}")]
    Taxonomy(String),
    #[error("corpus is empty")]
    Empty,
    #[error("stopword {0:?} is not lowercase")]
    StopwordCase(String),
    #[error("fold count {k} out of range for {n} documents (need 2 <= k <= n)")]
    FoldCount { k: usize, n: usize },
}

pub type Result<T> = std::result::Result<T, CorpusError>;

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// One taxonomy entry. First-level categories have no parent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub code: String,
    pub name: String,
    #[serde(default)]
    pub parent: Option<String>,
}

/// Two-level category taxonomy.
#[derive(Debug, Clone)]
pub struct LabelTaxonomy {
    categories: Vec<Category>,
    index: HashMap<String, usize>,
}

impl LabelTaxonomy {
    /// Validates uniqueness of codes and that every parent is an existing
    /// first-level category, which rules out cycles and deeper levels.
    pub fn new(categories: Vec<Category>) -> Result<Self> {
        let mut index = HashMap::with_capacity(categories.len());
        for (i, c) in categories.iter().enumerate() {
            if c.code.is_empty() {
                return Err(CorpusError::Taxonomy("empty category code".into()));
            }
            if index.insert(c.code.clone(), i).is_some() {
                return Err(CorpusError::Taxonomy(format!("duplicate code {:?}", c.code)));
            }
        }
        for c in &categories {
            if let Some(parent) = &c.parent {
                let Some(&pi) = index.get(parent) else {
                    return Err(CorpusError::Taxonomy(format!(
                        "category {:?} has unknown parent {:?}",
                        c.code, parent
                    )));
                };
                if categories[pi].parent.is_some() {
                    return Err(CorpusError::Taxonomy(format!(
                        "category {:?} nests below second level (parent {:?} is not first level)",
                        c.code, parent
                    )));
                }
            }
        }
        Ok(Self { categories, index })
    }

    /// Parses line-delimited JSON records `{code, name, parent}`.
    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut categories = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let c: Category = serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })?;
            categories.push(c);
        }
        Self::new(categories)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_jsonl(&read_to_string(path.as_ref())?)
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn contains(&self, code: &str) -> bool {
        self.index.contains_key(code)
    }

    pub fn get(&self, code: &str) -> Option<&Category> {
        self.index.get(code).map(|&i| &self.categories[i])
    }

    pub fn name(&self, code: &str) -> Option<&str> {
        self.get(code).map(|c| c.name.as_str())
    }

    /// 1 for first-level codes, 2 for second-level codes.
    pub fn level(&self, code: &str) -> Option<u8> {
        self.get(code).map(|c| if c.parent.is_some() { 2 } else { 1 })
    }

    /// Codes at `level`, in file order.
    pub fn codes_at_level(&self, level: u8) -> Vec<String> {
        self.categories
            .iter()
            .filter(|c| self.level(&c.code) == Some(level))
            .map(|c| c.code.clone())
            .collect()
    }

    /// Projects a set of assigned codes onto `level`: second-level codes
    /// contribute their parent at level 1.
    pub fn project(&self, codes: &BTreeSet<String>, level: u8) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for code in codes {
            let Some(cat) = self.get(code) else { continue };
            match (level, &cat.parent) {
                (1, None) => {
                    out.insert(code.clone());
                }
                (1, Some(parent)) => {
                    out.insert(parent.clone());
                }
                (2, Some(_)) => {
                    out.insert(code.clone());
                }
                _ => {}
            }
        }
        out
    }
}

/// A labeled article: title, abstract and taxonomy codes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    #[serde(default)]
    pub title: String,
    #[serde(rename = "abstract", default)]
    pub abstract_text: String,
    pub categories: BTreeSet<String>,
}

impl Document {
    /// Analysis text: title, one space, abstract.
    pub fn text(&self) -> String {
        let mut s = String::with_capacity(self.title.len() + self.abstract_text.len() + 1);
        s.push_str(&self.title);
        s.push(' ');
        s.push_str(&self.abstract_text);
        s
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    documents: Vec<Document>,
    taxonomy: LabelTaxonomy,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(documents: Vec<Document>, taxonomy: LabelTaxonomy) -> Result<Self> {
        if documents.is_empty() {
            return Err(CorpusError::Empty);
        }
        let mut by_id = HashMap::with_capacity(documents.len());
        for (i, d) in documents.iter().enumerate() {
            if d.categories.is_empty() {
                return Err(CorpusError::EmptyCategories { line: i + 1, id: d.id.clone() });
            }
            if let Some(code) = d.categories.iter().find(|c| !taxonomy.contains(c)) {
                return Err(CorpusError::UnknownCategory { id: d.id.clone(), code: code.clone() });
            }
            if by_id.insert(d.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId(d.id.clone()));
            }
        }
        Ok(Self { documents, taxonomy, by_id })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn taxonomy(&self) -> &LabelTaxonomy {
        &self.taxonomy
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    /// Labels of document `doc` projected to taxonomy `level`.
    pub fn labels(&self, doc: usize, level: u8) -> BTreeSet<String> {
        self.taxonomy.project(&self.documents[doc].categories, level)
    }

    /// Categories at `level` that at least one document carries, in
    /// taxonomy order.
    pub fn active_categories(&self, level: u8) -> Vec<String> {
        let used: BTreeSet<String> =
            (0..self.len()).flat_map(|i| self.labels(i, level)).collect();
        self.taxonomy
            .codes_at_level(level)
            .into_iter()
            .filter(|c| used.contains(c))
            .collect()
    }

    /// New corpus holding the documents at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Corpus> {
        let docs = indices.iter().map(|&i| self.documents[i].clone()).collect();
        Corpus::new(docs, self.taxonomy.clone())
    }

    /// SHA-256 over the canonical JSON of every document in order.
    pub fn content_hash(&self) -> String {
        let mut buf = Vec::new();
        for d in &self.documents {
            serde_json::to_writer(&mut buf, d).expect("document serializes");
            buf.push(b'\n');
        }
        sha256_hex(&buf)
    }
}

/// Reads a line-delimited corpus file.
pub fn load_corpus(path: impl AsRef<Path>, taxonomy: LabelTaxonomy) -> Result<Corpus> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_corpus(file, taxonomy)
}

/// Parses line-delimited corpus records from any reader.
pub fn parse_corpus(reader: impl Read, taxonomy: LabelTaxonomy) -> Result<Corpus> {
    let mut documents = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| CorpusError::Malformed { line: line_no, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line)
            .map_err(|e| CorpusError::Malformed { line: line_no, message: e.to_string() })?;
        if doc.categories.is_empty() {
            return Err(CorpusError::EmptyCategories { line: line_no, id: doc.id });
        }
        if !seen.insert(doc.id.clone()) {
            return Err(CorpusError::DuplicateId(doc.id));
        }
        if let Some(code) = doc.categories.iter().find(|c| !taxonomy.contains(c)) {
            return Err(CorpusError::UnknownCategory { id: doc.id.clone(), code: code.clone() });
        }
        documents.push(doc);
    }
    Corpus::new(documents, taxonomy)
}

/// How raw text becomes terms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizationPolicy {
    pub lowercase: bool,
    pub keep_punctuation: bool,
    stopwords: BTreeSet<String>,
}

impl TokenizationPolicy {
    pub fn new(lowercase: bool, keep_punctuation: bool, stopwords: BTreeSet<String>) -> Result<Self> {
        if let Some(w) = stopwords.iter().find(|w| w.to_lowercase() != **w) {
            return Err(CorpusError::StopwordCase(w.clone()));
        }
        Ok(Self { lowercase, keep_punctuation, stopwords })
    }

    /// Lowercasing, punctuation dropped, bundled English stopwords.
    pub fn english() -> Self {
        Self::new(true, false, parse_stopwords(DEFAULT_STOPWORDS)).expect("bundled list is lowercase")
    }

    /// Lowercasing only; nothing filtered.
    pub fn plain() -> Self {
        Self { lowercase: true, keep_punctuation: false, stopwords: BTreeSet::new() }
    }

    pub fn stopwords(&self) -> &BTreeSet<String> {
        &self.stopwords
    }

    pub fn is_stopword(&self, term: &str) -> bool {
        !self.stopwords.is_empty() && self.stopwords.contains(&term.to_lowercase())
    }

    /// Hash of the stopword list (one term per line, sorted).
    pub fn stopword_hash(&self) -> String {
        let joined: String = self.stopwords.iter().map(|w| format!("{w}\n")).collect();
        sha256_hex(joined.as_bytes())
    }

    pub fn normalize(&self, term: &str) -> String {
        if self.lowercase {
            term.to_lowercase()
        } else {
            term.to_string()
        }
    }
}

pub fn parse_stopwords(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

pub fn load_stopwords(path: impl AsRef<Path>) -> Result<BTreeSet<String>> {
    Ok(parse_stopwords(&read_to_string(path.as_ref())?))
}

/// True when `term` has no alphanumeric character.
pub fn is_punctuation(term: &str) -> bool {
    !term.chars().any(char::is_alphanumeric)
}

/// Splits on non-alphanumeric boundaries. Each punctuation character becomes
/// its own token when the policy keeps punctuation.
pub fn tokenize(text: &str, policy: &TokenizationPolicy) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let push = |tok: String, tokens: &mut Vec<String>| {
        let tok = policy.normalize(&tok);
        if !policy.is_stopword(&tok) {
            tokens.push(tok);
        }
    };
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.push(ch);
            continue;
        }
        if !current.is_empty() {
            push(std::mem::take(&mut current), &mut tokens);
        }
        if policy.keep_punctuation && !ch.is_whitespace() && !ch.is_control() {
            push(ch.to_string(), &mut tokens);
        }
    }
    if !current.is_empty() {
        push(current, &mut tokens);
    }
    tokens
}

/// Seeded, balanced k-fold split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    k: usize,
    /// Fold of each document, by corpus index.
    folds: Vec<usize>,
    ids: Vec<String>,
    by_id: HashMap<String, usize>,
}

impl FoldAssignment {
    /// Builds an assignment from explicit per-document folds.
    pub fn from_folds(corpus: &Corpus, k: usize, folds: Vec<usize>) -> Result<Self> {
        if k < 2 || k > corpus.len() || folds.len() != corpus.len() || folds.iter().any(|&f| f >= k) {
            return Err(CorpusError::FoldCount { k, n: corpus.len() });
        }
        let ids: Vec<String> = corpus.documents().iter().map(|d| d.id.clone()).collect();
        let by_id = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        Ok(Self { k, folds, ids, by_id })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn fold_of_index(&self, doc: usize) -> usize {
        self.folds[doc]
    }

    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).map(|&i| self.folds[i])
    }

    /// Corpus indices held out in `fold`, ascending.
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.folds.len()).filter(|&i| self.folds[i] == fold).collect()
    }

    /// Corpus indices used for training when `fold` is held out, ascending.
    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.folds.len()).filter(|&i| self.folds[i] != fold).collect()
    }

    /// `(doc_id, fold)` pairs in corpus order.
    pub fn pairs(&self) -> impl Iterator<Item = (&str, usize)> {
        self.ids.iter().map(String::as_str).zip(self.folds.iter().copied())
    }
}

/// Shuffles document indices with a ChaCha8 stream seeded by `seed`, then
/// deals them round-robin into `k` folds.
pub fn make_folds(corpus: &Corpus, k: usize, seed: u64) -> Result<FoldAssignment> {
    let n = corpus.len();
    if k < 2 || k > n {
        return Err(CorpusError::FoldCount { k, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![0; n];
    for (pos, &doc) in order.iter().enumerate() {
        folds[doc] = pos % k;
    }
    FoldAssignment::from_folds(corpus, k, folds)
}

/// Corpus-wide statistics for one term.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TermStats {
    /// Indices of documents containing the term, ascending.
    pub presence: Vec<usize>,
    /// Total occurrences across the corpus.
    pub tf: u64,
}

impl TermStats {
    pub fn df(&self) -> usize {
        self.presence.len()
    }
}

/// Vocabulary with a per-term presence index and per-document term counts.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    terms: BTreeMap<String, TermStats>,
    doc_terms: Vec<BTreeMap<String, u32>>,
    doc_ids: Vec<String>,
}

impl Vocabulary {
    fn from_doc_terms(doc_terms: Vec<BTreeMap<String, u32>>, doc_ids: Vec<String>) -> Self {
        let mut terms: BTreeMap<String, TermStats> = BTreeMap::new();
        for (i, counts) in doc_terms.iter().enumerate() {
            for (term, &c) in counts {
                let st = terms.entry(term.clone()).or_default();
                st.presence.push(i);
                st.tf += u64::from(c);
            }
        }
        Self { terms, doc_terms, doc_ids }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn doc_count(&self) -> usize {
        self.doc_terms.len()
    }

    pub fn contains(&self, term: &str) -> bool {
        self.terms.contains_key(term)
    }

    /// Terms in lexicographic order.
    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.terms.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &TermStats)> {
        self.terms.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn stats(&self, term: &str) -> Option<&TermStats> {
        self.terms.get(term)
    }

    /// Document indices containing `term` (empty for unseen terms).
    pub fn presence(&self, term: &str) -> &[usize] {
        self.terms.get(term).map(|s| s.presence.as_slice()).unwrap_or(&[])
    }

    /// Document ids containing `term`.
    pub fn presence_ids(&self, term: &str) -> BTreeSet<&str> {
        self.presence(term).iter().map(|&i| self.doc_ids[i].as_str()).collect()
    }

    pub fn tf(&self, term: &str) -> u64 {
        self.terms.get(term).map_or(0, |s| s.tf)
    }

    /// Term counts of document `doc`.
    pub fn doc_terms(&self, doc: usize) -> &BTreeMap<String, u32> {
        &self.doc_terms[doc]
    }

    /// Vocabulary restricted to the documents at `indices`, re-indexed in
    /// that order. Matches `build_vocabulary` on the corresponding subset.
    pub fn subset(&self, indices: &[usize]) -> Vocabulary {
        let doc_terms = indices.iter().map(|&i| self.doc_terms[i].clone()).collect();
        let doc_ids = indices.iter().map(|&i| self.doc_ids[i].clone()).collect();
        Self::from_doc_terms(doc_terms, doc_ids)
    }

    /// Drops terms present in fewer than `min_df` documents.
    pub fn prune(&mut self, min_df: usize) -> usize {
        let before = self.terms.len();
        self.terms.retain(|_, s| s.df() >= min_df);
        let kept = &self.terms;
        for counts in &mut self.doc_terms {
            counts.retain(|t, _| kept.contains_key(t));
        }
        before - self.terms.len()
    }
}

/// Tokenizes every document (title + abstract) and indexes term presence.
pub fn build_vocabulary(corpus: &Corpus, policy: &TokenizationPolicy) -> Vocabulary {
    let doc_terms = par::map(corpus.documents(), |d| {
        let mut counts: BTreeMap<String, u32> = BTreeMap::new();
        for tok in tokenize(&d.text(), policy) {
            *counts.entry(tok).or_insert(0) += 1;
        }
        counts
    });
    let ids = corpus.documents().iter().map(|d| d.id.clone()).collect();
    Vocabulary::from_doc_terms(doc_terms, ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn taxonomy() -> LabelTaxonomy {
        LabelTaxonomy::from_jsonl(
            r#"{"code":"08","name":"Information and Computing Sciences","parent":null}
{"code":"06","name":"Biological Sciences","parent":null}
{"code":"0801","name":"Artificial Intelligence","parent":"08"}"#,
        )
        .unwrap()
    }

    fn record(id: &str, title: &str, cats: &[&str]) -> String {
        serde_json::json!({"id": id, "title": title, "abstract": "", "categories": cats}).to_string()
    }

    fn corpus_of(texts: &[&str]) -> Corpus {
        let docs = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Document {
                id: format!("d{}", i + 1),
                title: t.to_string(),
                abstract_text: String::new(),
                categories: ["08".to_string()].into(),
            })
            .collect();
        Corpus::new(docs, taxonomy()).unwrap()
    }

    #[test]
    fn loads_three_records() {
        let text = [record("a", "x", &["08"]), record("b", "y", &["06"]), record("c", "z", &["0801"])].join("\n");
        let c = parse_corpus(text.as_bytes(), taxonomy()).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.labels(2, 1), ["08".to_string()].into());
        assert_eq!(c.labels(2, 2), ["0801".to_string()].into());
    }

    #[test]
    fn rejects_empty_categories() {
        let text = [record("a", "x", &["08"]), record("b", "y", &[])].join("\n");
        let err = parse_corpus(text.as_bytes(), taxonomy()).unwrap_err();
        assert!(err.to_string().contains("empty categories"), "{err}");
        assert!(matches!(err, CorpusError::EmptyCategories { line: 2, .. }));
    }

    #[test]
    fn rejects_duplicate_id() {
        let text = [record("d1", "x", &["08"]), record("d1", "y", &["06"])].join("\n");
        let err = parse_corpus(text.as_bytes(), taxonomy()).unwrap_err();
        assert!(err.to_string().contains("d1"));
    }

    #[test]
    fn rejects_unknown_category_and_malformed_line() {
        let text = record("a", "x", &["99"]);
        assert!(matches!(
            parse_corpus(text.as_bytes(), taxonomy()),
            Err(CorpusError::UnknownCategory { .. })
        ));
        let text = format!("{}\n{{not json", record("a", "x", &["08"]));
        assert!(matches!(
            parse_corpus(text.as_bytes(), taxonomy()),
            Err(CorpusError::Malformed { line: 2, .. })
        ));
    }

    #[test]
    fn taxonomy_rejects_three_levels_and_unknown_parent() {
        let deep = r#"{"code":"1","name":"a"}
{"code":"11","name":"b","parent":"1"}
{"code":"111","name":"c","parent":"11"}"#;
        assert!(LabelTaxonomy::from_jsonl(deep).is_err());
        let orphan = r#"{"code":"11","name":"b","parent":"1"}"#;
        assert!(LabelTaxonomy::from_jsonl(orphan).is_err());
        let cyc = r#"{"code":"1","name":"a","parent":"2"}
{"code":"2","name":"b","parent":"1"}"#;
        assert!(LabelTaxonomy::from_jsonl(cyc).is_err());
    }

    #[test]
    fn tokenize_examples() {
        let plain = TokenizationPolicy::plain();
        assert_eq!(
            tokenize("Deep Bidirectional Transformers", &plain),
            vec!["deep", "bidirectional", "transformers"]
        );
        let sw = TokenizationPolicy::new(true, false, ["the".into(), "of".into()].into()).unwrap();
        assert_eq!(tokenize("the gene of life", &sw), vec!["gene", "life"]);
        assert!(tokenize("", &sw).is_empty());
    }

    #[test]
    fn punctuation_kept_only_on_request() {
        let keep = TokenizationPolicy::new(true, true, BTreeSet::new()).unwrap();
        assert_eq!(tokenize("cells, (DNA).", &keep), vec!["cells", ",", "(", "dna", ")", "."]);
        assert_eq!(tokenize("cells, (DNA).", &TokenizationPolicy::plain()), vec!["cells", "dna"]);
    }

    #[test]
    fn stopwords_must_be_lowercase() {
        assert!(TokenizationPolicy::new(true, false, ["The".into()].into()).is_err());
        let english = TokenizationPolicy::english();
        assert!(english.is_stopword("the"));
        assert_eq!(english.stopword_hash().len(), 64);
    }

    #[test]
    fn folds_balanced_and_deterministic() {
        let c = corpus_of(&["a"; 10]);
        let f = make_folds(&c, 5, 7).unwrap();
        for fold in 0..5 {
            assert_eq!(f.test_indices(fold).len(), 2);
        }
        assert_eq!(f, make_folds(&c, 5, 7).unwrap());
        assert!(matches!(make_folds(&c, 11, 7), Err(CorpusError::FoldCount { .. })));
        assert!(make_folds(&c, 1, 7).is_err());
    }

    #[test]
    fn vocabulary_union_and_presence() {
        let c = corpus_of(&["a b", "b c"]);
        let v = build_vocabulary(&c, &TokenizationPolicy::plain());
        assert_eq!(v.terms().collect::<Vec<_>>(), vec!["a", "b", "c"]);
        assert_eq!(v.presence_ids("b"), ["d1", "d2"].into());
        assert!(v.presence("zz").is_empty());

        let empty = corpus_of(&["", ""]);
        assert!(build_vocabulary(&empty, &TokenizationPolicy::plain()).is_empty());
    }

    #[test]
    fn subset_matches_rebuild() {
        let c = corpus_of(&["a b a", "b c", "c d e", "a e"]);
        let policy = TokenizationPolicy::plain();
        let v = build_vocabulary(&c, &policy);
        let idx = [3, 1];
        let sub = v.subset(&idx);
        let rebuilt = build_vocabulary(&c.subset(&idx).unwrap(), &policy);
        assert_eq!(sub.iter().collect::<Vec<_>>(), rebuilt.iter().collect::<Vec<_>>());
    }

    proptest! {
        #[test]
        fn tokenize_idempotent_on_alphabetic(words in proptest::collection::vec("[a-z]{1,8}", 0..12)) {
            let policy = TokenizationPolicy::plain();
            let toks = tokenize(&words.join(" "), &policy);
            prop_assert_eq!(&toks, &words);
            prop_assert_eq!(tokenize(&toks.join(" "), &policy), toks);
        }

        #[test]
        fn folds_partition_corpus(n in 2usize..60, k_raw in 2usize..10, seed in any::<u64>()) {
            let k = k_raw.min(n);
            let c = corpus_of(&vec!["x"; n]);
            let f = make_folds(&c, k, seed).unwrap();
            let mut all: Vec<usize> = (0..k).flat_map(|i| f.test_indices(i)).collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            let sizes: Vec<usize> = (0..k).map(|i| f.test_indices(i).len()).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }

        #[test]
        fn presence_bounded_by_corpus(texts in proptest::collection::vec("[a-d ]{0,12}", 1..15)) {
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let c = corpus_of(&refs);
            let v = build_vocabulary(&c, &TokenizationPolicy::plain());
            for (_, st) in v.iter() {
                prop_assert!(st.df() <= c.len());
            }
        }
    }
}
