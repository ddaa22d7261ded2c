//! Chi-square, information gain, document frequency and categorical
//! proportional difference over per-(term, category) contingency tables,
//! plus the ranking type shared with the attention side.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{is_punctuation, Corpus, TokenizationPolicy, Vocabulary};
use crate::format::f10;
use crate::par;

#[derive(Debug, Error)]
pub enum FeatselError {
    #[error("unknown term {0:?}")]
    UnknownTerm(String),
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
    #[error("unknown method {0:?}")]
    UnknownMethod(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Term-ranking source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Attention,
    Chi,
    Ig,
    Df,
    Pd,
}

impl Method {
    /// The four feature selectors, in report order.
    pub const SELECTORS: [Method; 4] = [Method::Df, Method::Ig, Method::Chi, Method::Pd];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Attention => "attention",
            Method::Chi => "chi",
            Method::Ig => "ig",
            Method::Df => "df",
            Method::Pd => "pd",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = FeatselError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "attention" => Ok(Method::Attention),
            "chi" => Ok(Method::Chi),
            "ig" => Ok(Method::Ig),
            // the tables call document frequency "dc"
            "df" | "dc" => Ok(Method::Df),
            "pd" => Ok(Method::Pd),
            other => Err(FeatselError::UnknownMethod(other.to_string())),
        }
    }
}

/// Frequency re-weighting applied to an existing ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    Tf,
    Tfidf,
}

impl Weighting {
    pub fn as_str(self) -> &'static str {
        match self {
            Weighting::Tf => "tf",
            Weighting::Tfidf => "tfidf",
        }
    }
}

impl FromStr for Weighting {
    type Err = FeatselError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tf" => Ok(Weighting::Tf),
            "tfidf" => Ok(Weighting::Tfidf),
            other => Err(FeatselError::UnknownMethod(other.to_string())),
        }
    }
}

/// Method plus optional frequency weighting, e.g. `chi`, `attention_tf`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MethodTag {
    pub method: Method,
    pub weighting: Option<Weighting>,
}

impl MethodTag {
    pub const fn plain(method: Method) -> Self {
        Self { method, weighting: None }
    }

    pub const fn weighted(method: Method, weighting: Weighting) -> Self {
        Self { method, weighting: Some(weighting) }
    }
}

impl fmt::Display for MethodTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.weighting {
            None => write!(f, "{}", self.method),
            Some(w) => write!(f, "{}_{}", self.method, w.as_str()),
        }
    }
}

impl FromStr for MethodTag {
    type Err = FeatselError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.rsplit_once('_') {
            Some((m, w)) => Ok(Self::weighted(m.parse()?, w.parse()?)),
            None => Ok(Self::plain(s.parse()?)),
        }
    }
}

/// Ordered `(term, score)` list: score descending, then term ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct TermRanking {
    pub tag: MethodTag,
    entries: Vec<(String, f64)>,
}

impl TermRanking {
    /// Sorts scores into ranking order. A repeated term keeps its last score.
    pub fn from_scores(tag: MethodTag, scores: impl IntoIterator<Item = (String, f64)>) -> Self {
        let unique: BTreeMap<String, f64> = scores.into_iter().collect();
        let mut entries: Vec<(String, f64)> = unique.into_iter().collect();
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self { tag, entries }
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(t, _)| t.as_str())
    }

    pub fn term_list(&self) -> Vec<String> {
        self.entries.iter().map(|(t, _)| t.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The first `k` terms (all of them when shorter).
    pub fn top(&self, k: usize) -> &[(String, f64)] {
        &self.entries[..k.min(self.entries.len())]
    }

    pub fn top_set(&self, k: usize) -> BTreeSet<String> {
        self.top(k).iter().map(|(t, _)| t.clone()).collect()
    }

    pub fn truncated(&self, k: usize) -> TermRanking {
        Self { tag: self.tag, entries: self.top(k).to_vec() }
    }

    /// Keeps entries whose term satisfies `keep`, preserving order.
    pub fn filtered(&self, keep: impl Fn(&str) -> bool) -> TermRanking {
        Self { tag: self.tag, entries: self.entries.iter().filter(|(t, _)| keep(t)).cloned().collect() }
    }

    pub fn with_tag(mut self, tag: MethodTag) -> Self {
        self.tag = tag;
        self
    }

    /// `rank, term, score, method` rows, 1-based ranks, 10 significant digits.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("# method={}\nrank\tterm\tscore\tmethod\n", self.tag);
        for (i, (t, s)) in self.entries.iter().enumerate() {
            out.push_str(&format!("{}\t{}\t{}\t{}\n", i + 1, sanitize(t), f10(*s), self.tag));
        }
        out
    }

    /// Parses [`TermRanking::to_tsv`] output. Other `#` comment lines are
    /// skipped.
    pub fn from_tsv(text: &str) -> Result<Self, FeatselError> {
        let mut tag = None;
        let mut entries = Vec::new();
        let mut header_seen = false;
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if let Some(t) = line.strip_prefix("# method=") {
                tag = Some(t.trim().parse()?);
                continue;
            }
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            if !header_seen {
                header_seen = true;
                if line.starts_with("rank\t") {
                    continue;
                }
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(FeatselError::Parse { line: line_no, message: format!("expected 4 columns, got {}", cols.len()) });
            }
            let score: f64 = cols[2]
                .parse()
                .map_err(|e| FeatselError::Parse { line: line_no, message: format!("score: {e}") })?;
            let t: MethodTag = cols[3].parse()?;
            if tag.is_some_and(|x| x != t) {
                return Err(FeatselError::Parse { line: line_no, message: "mixed methods".into() });
            }
            tag = Some(t);
            entries.push((cols[1].to_string(), score));
        }
        let tag = tag.ok_or(FeatselError::Parse { line: 0, message: "empty ranking".into() })?;
        Ok(Self::from_scores(tag, entries))
    }
}

fn sanitize(term: &str) -> String {
    term.replace(['\t', '\n', '\r'], " ")
}

/// Document counts for one (term, category) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ContingencyTable {
    /// In the category, containing the term.
    pub a: u64,
    /// Outside the category, containing the term.
    pub b: u64,
    /// In the category, lacking the term.
    pub c: u64,
    /// Outside the category, lacking the term.
    pub d: u64,
}

impl ContingencyTable {
    pub const fn new(a: u64, b: u64, c: u64, d: u64) -> Self {
        Self { a, b, c, d }
    }

    pub fn n(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }

    /// Swaps the roles of the category and its complement.
    pub fn complement(&self) -> Self {
        Self { a: self.b, b: self.a, c: self.d, d: self.c }
    }
}

/// `N (AD - CB)^2 / ((A+C)(B+D)(A+B)(C+D))`, zero when a marginal is empty.
pub fn chi_square(ct: &ContingencyTable) -> f64 {
    let (a, b, c, d) = (ct.a as f64, ct.b as f64, ct.c as f64, ct.d as f64);
    let denom = (a + c) * (b + d) * (a + b) * (c + d);
    if denom == 0.0 {
        return 0.0;
    }
    let diff = a * d - c * b;
    (a + b + c + d) * diff * diff / denom
}

/// Binary entropy in bits with `0 log 0 = 0`.
fn entropy2(p: f64) -> f64 {
    let h = |x: f64| if x <= 0.0 { 0.0 } else { -x * x.log2() };
    h(p) + h(1.0 - p)
}

/// Reduction of category-membership entropy from splitting on term presence.
pub fn info_gain(ct: &ContingencyTable) -> f64 {
    let n = ct.n() as f64;
    if n == 0.0 {
        return 0.0;
    }
    let (a, b, c, d) = (ct.a as f64, ct.b as f64, ct.c as f64, ct.d as f64);
    let prior = entropy2((a + c) / n);
    let with = if a + b > 0.0 { (a + b) / n * entropy2(a / (a + b)) } else { 0.0 };
    let without = if c + d > 0.0 { (c + d) / n * entropy2(c / (c + d)) } else { 0.0 };
    // rounding can push a perfect split a hair below zero
    (prior - with - without).max(0.0)
}

/// Entropy of category membership alone, the upper bound of [`info_gain`].
pub fn class_entropy(ct: &ContingencyTable) -> f64 {
    let n = ct.n() as f64;
    if n == 0.0 {
        0.0
    } else {
        entropy2((ct.a + ct.c) as f64 / n)
    }
}

/// Number of documents containing `term`.
pub fn doc_frequency(term: &str, vocab: &Vocabulary) -> usize {
    vocab.presence(term).len()
}

/// `(A - B) / (A + B)`; `None` when the term occurs in no document.
pub fn prop_difference(ct: &ContingencyTable) -> Option<f64> {
    let s = ct.a + ct.b;
    (s > 0).then(|| (ct.a as f64 - ct.b as f64) / s as f64)
}

/// Builds the table for one term and one category at `level`.
pub fn build_contingency(
    corpus: &Corpus,
    vocab: &Vocabulary,
    term: &str,
    category: &str,
    level: u8,
) -> Result<ContingencyTable, FeatselError> {
    if !vocab.contains(term) {
        return Err(FeatselError::UnknownTerm(term.to_string()));
    }
    if corpus.taxonomy().level(category) != Some(level) {
        return Err(FeatselError::UnknownCategory(category.to_string()));
    }
    let presence: BTreeSet<usize> = vocab.presence(term).iter().copied().collect();
    let mut t = ContingencyTable::default();
    for doc in 0..corpus.len() {
        let in_cat = corpus.labels(doc, level).contains(category);
        match (in_cat, presence.contains(&doc)) {
            (true, true) => t.a += 1,
            (false, true) => t.b += 1,
            (true, false) => t.c += 1,
            (false, false) => t.d += 1,
        }
    }
    Ok(t)
}

/// Precomputed category membership for fast scoring of every term.
#[derive(Debug, Clone)]
pub struct FeatureScorer<'a> {
    vocab: &'a Vocabulary,
    categories: Vec<String>,
    /// Category indices carried by each document.
    membership: Vec<Vec<usize>>,
    cat_sizes: Vec<u64>,
    n: u64,
}

impl<'a> FeatureScorer<'a> {
    /// `corpus` and `vocab` must describe the same documents in the same order.
    pub fn new(corpus: &Corpus, vocab: &'a Vocabulary, level: u8) -> Self {
        assert_eq!(corpus.len(), vocab.doc_count(), "corpus and vocabulary disagree on document count");
        let categories = corpus.active_categories(level);
        let index: BTreeMap<&str, usize> = categories.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
        let membership: Vec<Vec<usize>> = (0..corpus.len())
            .map(|d| corpus.labels(d, level).iter().filter_map(|c| index.get(c.as_str()).copied()).collect())
            .collect();
        let mut cat_sizes = vec![0u64; categories.len()];
        for m in &membership {
            for &c in m {
                cat_sizes[c] += 1;
            }
        }
        Self { vocab, categories, membership, cat_sizes, n: corpus.len() as u64 }
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn category_index(&self, code: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == code)
    }

    /// One table per category for `term`.
    pub fn tables(&self, term: &str) -> Vec<ContingencyTable> {
        let mut a = vec![0u64; self.categories.len()];
        let presence = self.vocab.presence(term);
        for &doc in presence {
            for &c in &self.membership[doc] {
                a[c] += 1;
            }
        }
        let df = presence.len() as u64;
        a.iter()
            .zip(&self.cat_sizes)
            .map(|(&a, &size)| {
                let b = df - a;
                let c = size - a;
                ContingencyTable::new(a, b, c, self.n - a - b - c)
            })
            .collect()
    }

    fn table_score(method: Method, t: &ContingencyTable) -> Option<f64> {
        match method {
            Method::Chi => Some(chi_square(t)),
            Method::Ig => Some(info_gain(t)),
            Method::Pd => prop_difference(t),
            Method::Df => Some((t.a + t.b) as f64),
            Method::Attention => None,
        }
    }

    /// Max over categories (df is category-free). `None` if undefined for
    /// every category.
    pub fn score(&self, method: Method, term: &str) -> Option<f64> {
        if method == Method::Df {
            return Some(self.vocab.presence(term).len() as f64);
        }
        self.tables(term)
            .iter()
            .filter_map(|t| Self::table_score(method, t))
            .max_by(f64::total_cmp)
    }

    /// Score against a single category. For df this is the number of the
    /// category's documents containing the term.
    pub fn score_for_category(&self, method: Method, term: &str, category: usize) -> Option<f64> {
        let t = self.tables(term)[category];
        if method == Method::Df {
            return Some(t.a as f64);
        }
        Self::table_score(method, &t)
    }

    fn candidate_terms(&self, policy: &TokenizationPolicy) -> Vec<&'a str> {
        self.vocab.terms().filter(|t| !is_punctuation(t) && !policy.is_stopword(t)).collect()
    }

    /// Ranks the whole vocabulary, skipping stopwords and punctuation.
    pub fn rank(&self, method: Method, policy: &TokenizationPolicy) -> TermRanking {
        let terms = self.candidate_terms(policy);
        let scored = par::map(&terms, |t| self.score(method, t).map(|s| (t.to_string(), s)));
        TermRanking::from_scores(MethodTag::plain(method), scored.into_iter().flatten())
    }

    /// Ranks the vocabulary against one category. Terms absent from the
    /// category's documents are left out.
    pub fn rank_for_category(&self, method: Method, category: usize, policy: &TokenizationPolicy) -> TermRanking {
        let terms = self.candidate_terms(policy);
        let scored = par::map(&terms, |t| {
            let table = self.tables(t)[category];
            if table.a == 0 {
                return None;
            }
            self.score_for_category(method, t, category).map(|s| (t.to_string(), s))
        });
        TermRanking::from_scores(MethodTag::plain(method), scored.into_iter().flatten())
    }
}

/// Ranks every vocabulary term with a feature selector at taxonomy `level`.
pub fn rank_terms(method: Method, corpus: &Corpus, vocab: &Vocabulary, level: u8, policy: &TokenizationPolicy) -> TermRanking {
    FeatureScorer::new(corpus, vocab, level).rank(method, policy)
}

/// Re-scores the terms of `ranking` by term frequency in `tf_source`, times
/// `log(N / df)` over `idf_source` for tf-idf, and re-sorts.
pub fn weight_ranking_with(ranking: &TermRanking, tf_source: &Vocabulary, idf_source: &Vocabulary, scheme: Weighting) -> TermRanking {
    let n = idf_source.doc_count() as f64;
    let scores = ranking.terms().map(|t| {
        let tf = tf_source.tf(t) as f64;
        let score = match scheme {
            Weighting::Tf => tf,
            Weighting::Tfidf => {
                let df = idf_source.presence(t).len();
                if df == 0 {
                    0.0
                } else {
                    tf * (n / df as f64).ln()
                }
            }
        };
        (t.to_string(), score)
    });
    TermRanking::from_scores(MethodTag::weighted(ranking.tag.method, scheme), scores)
}

/// [`weight_ranking_with`] using one vocabulary for both statistics.
pub fn weight_ranking(ranking: &TermRanking, vocab: &Vocabulary, scheme: Weighting) -> TermRanking {
    weight_ranking_with(ranking, vocab, vocab, scheme)
}
