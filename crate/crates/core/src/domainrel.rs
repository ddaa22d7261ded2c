//! Domain relevance of top-ranked terms via ConceptNet.
//!
//! A term counts as relevant to a category when one of its contexts matches
//! a concept mapped to that category. Contexts are the `HasContext` targets
//! of the term's root concepts (`FormOf` resolves inflections), each
//! extended one `IsA` step upwards.
//!
//! Three graph backends share the [`KnowledgeGraph`] trait: [`MemoryGraph`]
//! (fixtures, or a filtered edge dump loaded into memory) and [`LiveGraph`]
//! (the public REST API), the latter normally wrapped in [`CachedGraph`] so
//! repeated runs never refetch.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::is_punctuation;
use crate::featsel::{MethodTag, TermRanking};

#[derive(Debug, Error)]
pub enum KgError {
    #[error("knowledge-graph access failed: {message}")]
    Access { message: String, retryable: bool },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("category {0:?} has no mapped concepts")]
    UnmappedCategory(String),
    #[error("invalid concept identifier {0:?}")]
    InvalidConcept(String),
}

pub type Result<T> = std::result::Result<T, KgError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Relation {
    FormOf,
    HasContext,
    IsA,
}

impl Relation {
    pub const ALL: [Relation; 3] = [Relation::FormOf, Relation::HasContext, Relation::IsA];

    pub fn path(self) -> &'static str {
        match self {
            Relation::FormOf => "/r/FormOf",
            Relation::HasContext => "/r/HasContext",
            Relation::IsA => "/r/IsA",
        }
    }

    pub fn from_path(path: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.path() == path)
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.path())
    }
}

/// `/c/en/<word>` with spaces joined by underscores.
pub fn concept_id(word: &str) -> String {
    format!("/c/en/{}", word.trim().to_lowercase().replace(' ', "_"))
}

/// Drops sense and part-of-speech suffixes: `/c/en/network/n/wn/…` becomes
/// `/c/en/network`. `None` for non-English or malformed identifiers.
pub fn normalize_concept(id: &str) -> Option<String> {
    let mut parts = id.split('/');
    match (parts.next(), parts.next(), parts.next(), parts.next()) {
        (Some(""), Some("c"), Some("en"), Some(term)) if !term.is_empty() => Some(format!("/c/en/{term}")),
        _ => None,
    }
}

/// Read access to the three relations used here. Edges are followed from
/// `concept` as the start node.
pub trait KnowledgeGraph: Sync {
    /// Whether the graph knows `concept` at all.
    fn has_node(&self, concept: &str) -> Result<bool>;
    /// Normalized English targets of `rel` edges leaving `concept`.
    fn targets(&self, concept: &str, rel: Relation) -> Result<BTreeSet<String>>;
}

impl<G: KnowledgeGraph + ?Sized> KnowledgeGraph for &G {
    fn has_node(&self, concept: &str) -> Result<bool> {
        (**self).has_node(concept)
    }

    fn targets(&self, concept: &str, rel: Relation) -> Result<BTreeSet<String>> {
        (**self).targets(concept, rel)
    }
}

/// In-memory edge set.
#[derive(Debug, Clone, Default)]
pub struct MemoryGraph {
    edges: BTreeMap<(String, Relation), BTreeSet<String>>,
    nodes: BTreeSet<String>,
}

impl MemoryGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `start -rel-> end`. Identifiers are normalized; non-English
    /// edges are ignored.
    pub fn add_edge(&mut self, start: &str, rel: Relation, end: &str) -> &mut Self {
        if let (Some(s), Some(e)) = (normalize_concept(start), normalize_concept(end)) {
            self.nodes.insert(s.clone());
            self.nodes.insert(e.clone());
            self.edges.entry((s, rel)).or_default().insert(e);
        }
        self
    }

    /// Builder form of [`MemoryGraph::add_edge`] taking bare English words.
    pub fn with(mut self, start: &str, rel: Relation, end: &str) -> Self {
        self.add_edge(&concept_id(start), rel, &concept_id(end));
        self
    }

    pub fn edge_count(&self) -> usize {
        self.edges.values().map(BTreeSet::len).sum()
    }

    /// Loads an edge dump: either three tab-separated columns
    /// `relation, start, end`, or ConceptNet's five-column assertion CSV
    /// `uri, relation, start, end, json`. Relations other than FormOf,
    /// HasContext and IsA are skipped.
    pub fn load_edge_dump(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| KgError::Io { path: path.display().to_string(), source })?;
        let mut g = Self::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| KgError::Io { path: path.display().to_string(), source })?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let (rel, start, end) = match cols.len() {
                3 => (cols[0], cols[1], cols[2]),
                n if n >= 4 => (cols[1], cols[2], cols[3]),
                n => {
                    return Err(KgError::Parse {
                        path: path.display().to_string(),
                        line: i + 1,
                        message: format!("expected 3 or 5 columns, got {n}"),
                    })
                }
            };
            if let Some(rel) = Relation::from_path(rel) {
                g.add_edge(start, rel, end);
            }
        }
        Ok(g)
    }
}

impl KnowledgeGraph for MemoryGraph {
    fn has_node(&self, concept: &str) -> Result<bool> {
        Ok(self.nodes.contains(concept))
    }

    fn targets(&self, concept: &str, rel: Relation) -> Result<BTreeSet<String>> {
        Ok(self.edges.get(&(concept.to_string(), rel)).cloned().unwrap_or_default())
    }
}

/// Client for the public ConceptNet REST API with a shared rate gate and
/// exponential backoff on throttling, server errors and transport failures.
#[derive(Debug)]
pub struct LiveGraph {
    endpoint: String,
    agent: ureq::Agent,
    min_interval: Duration,
    last_request: Mutex<Option<Instant>>,
    max_retries: u32,
    base_delay: Duration,
}

#[derive(Debug, Deserialize)]
struct ApiEdge {
    end: ApiNode,
}

#[derive(Debug, Deserialize)]
struct ApiNode {
    #[serde(rename = "@id")]
    id: String,
}

#[derive(Debug, Deserialize)]
struct ApiPage {
    #[serde(default)]
    edges: Vec<ApiEdge>,
}

#[derive(Debug, Deserialize)]
struct ApiNodePage {
    #[serde(default)]
    edges: Vec<serde_json::Value>,
}

impl LiveGraph {
    pub const DEFAULT_ENDPOINT: &'static str = "https://api.conceptnet.io";

    pub fn new(endpoint: impl Into<String>, requests_per_second: f64) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(30)))
            .http_status_as_error(false)
            .build()
            .into();
        let min_interval = if requests_per_second > 0.0 {
            Duration::from_secs_f64(1.0 / requests_per_second)
        } else {
            Duration::ZERO
        };
        Self {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            agent,
            min_interval,
            last_request: Mutex::new(None),
            max_retries: 4,
            base_delay: Duration::from_millis(500),
        }
    }

    pub fn with_retries(mut self, max_retries: u32, base_delay: Duration) -> Self {
        self.max_retries = max_retries;
        self.base_delay = base_delay;
        self
    }

    fn throttle(&self) {
        let mut last = self.last_request.lock().expect("rate gate poisoned");
        if let Some(t) = *last {
            let elapsed = t.elapsed();
            if elapsed < self.min_interval {
                std::thread::sleep(self.min_interval - elapsed);
            }
        }
        *last = Some(Instant::now());
    }

    fn get(&self, path_and_query: &str) -> Result<String> {
        let url = format!("{}{}", self.endpoint, path_and_query);
        let mut attempt = 0;
        loop {
            self.throttle();
            let outcome = match self.agent.get(&url).call() {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    match status {
                        200..=299 => match resp.body_mut().read_to_string() {
                            Ok(body) => return Ok(body),
                            Err(e) => KgError::Access { message: format!("{url}: {e}"), retryable: true },
                        },
                        429 | 500..=599 => KgError::Access { message: format!("{url}: HTTP {status}"), retryable: true },
                        _ => return Err(KgError::Access { message: format!("{url}: HTTP {status}"), retryable: false }),
                    }
                }
                Err(e) => KgError::Access { message: format!("{url}: {e}"), retryable: true },
            };
            if attempt >= self.max_retries {
                return Err(outcome);
            }
            let delay = self.base_delay * 2u32.saturating_pow(attempt);
            log::warn!("{outcome}; retrying in {delay:?}");
            std::thread::sleep(delay);
            attempt += 1;
        }
    }
}

impl KnowledgeGraph for LiveGraph {
    fn has_node(&self, concept: &str) -> Result<bool> {
        let body = self.get(&format!("/query?node={concept}&limit=1"))?;
        let page: ApiNodePage = serde_json::from_str(&body)
            .map_err(|e| KgError::Access { message: format!("bad response for {concept}: {e}"), retryable: false })?;
        Ok(!page.edges.is_empty())
    }

    fn targets(&self, concept: &str, rel: Relation) -> Result<BTreeSet<String>> {
        let body = self.get(&format!("/query?start={concept}&rel={}&limit=1000", rel.path()))?;
        let page: ApiPage = serde_json::from_str(&body)
            .map_err(|e| KgError::Access { message: format!("bad response for {concept}: {e}"), retryable: false })?;
        Ok(page.edges.iter().filter_map(|e| normalize_concept(&e.end.id)).collect())
    }
}

/// Where a cached answer came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CacheSource {
    Live,
    Dump,
    Fixture,
}

/// One cached query answer. Entries are never rewritten.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptCacheEntry {
    pub key: String,
    pub edges: Vec<String>,
    pub timestamp: u64,
    pub source: CacheSource,
}

/// Memoizes another graph, optionally persisting answers to an append-only
/// line-delimited file. Readers run concurrently; appends are serialized.
#[derive(Debug)]
pub struct CachedGraph<G> {
    inner: G,
    source: CacheSource,
    entries: RwLock<HashMap<String, Vec<String>>>,
    file: Option<Mutex<File>>,
    path: Option<PathBuf>,
}

impl<G: KnowledgeGraph> CachedGraph<G> {
    pub fn in_memory(inner: G, source: CacheSource) -> Self {
        Self { inner, source, entries: RwLock::new(HashMap::new()), file: None, path: None }
    }

    /// Loads existing entries from `path` (if present) and appends new ones.
    pub fn with_file(inner: G, source: CacheSource, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let io = |source| KgError::Io { path: path.display().to_string(), source };
        let mut entries = HashMap::new();
        if path.exists() {
            let text = fs::read_to_string(path).map_err(io)?;
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let e: ConceptCacheEntry = serde_json::from_str(line).map_err(|e| KgError::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
                // first answer wins
                entries.entry(e.key).or_insert(e.edges);
            }
        } else if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        Ok(Self {
            inner,
            source,
            entries: RwLock::new(entries),
            file: Some(Mutex::new(file)),
            path: Some(path.to_path_buf()),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn lookup(&self, key: String, fetch: impl FnOnce() -> Result<Vec<String>>) -> Result<Vec<String>> {
        if let Some(hit) = self.entries.read().expect("cache poisoned").get(&key) {
            return Ok(hit.clone());
        }
        let edges = fetch()?;
        let mut map = self.entries.write().expect("cache poisoned");
        if let Some(hit) = map.get(&key) {
            return Ok(hit.clone());
        }
        if let Some(file) = &self.file {
            let entry = ConceptCacheEntry {
                key: key.clone(),
                edges: edges.clone(),
                timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
                source: self.source,
            };
            let mut f = file.lock().expect("cache file poisoned");
            writeln!(f, "{}", serde_json::to_string(&entry).expect("cache entry serializes")).map_err(|source| KgError::Io {
                path: self.path.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
                source,
            })?;
        }
        map.insert(key, edges.clone());
        Ok(edges)
    }
}

impl<G: KnowledgeGraph> KnowledgeGraph for CachedGraph<G> {
    fn has_node(&self, concept: &str) -> Result<bool> {
        let edges = self.lookup(format!("node|{concept}"), || {
            Ok(if self.inner.has_node(concept)? { vec![concept.to_string()] } else { Vec::new() })
        })?;
        Ok(!edges.is_empty())
    }

    fn targets(&self, concept: &str, rel: Relation) -> Result<BTreeSet<String>> {
        let edges = self.lookup(format!("{}|{concept}", rel.path()), || {
            Ok(self.inner.targets(concept, rel)?.into_iter().collect())
        })?;
        Ok(edges.into_iter().collect())
    }
}

/// Category code to ConceptNet concepts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConceptMapping {
    map: BTreeMap<String, BTreeSet<String>>,
}

impl ConceptMapping {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, category: &str, concept: &str) -> Result<()> {
        let c = normalize_concept(concept).ok_or_else(|| KgError::InvalidConcept(concept.to_string()))?;
        self.map.entry(category.to_string()).or_default().insert(c);
        Ok(())
    }

    pub fn with(mut self, category: &str, concept: &str) -> Self {
        self.insert(category, concept).expect("valid concept");
        self
    }

    /// Parses `category_code, concept_id` pairs, one per line, separated by a
    /// comma or a tab. `#` comments and a `category_code` header are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Self::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("category_code") {
                continue;
            }
            let (cat, concept) = line
                .split_once('\t')
                .or_else(|| line.split_once(','))
                .ok_or_else(|| KgError::Parse { path: "mapping".into(), line: i + 1, message: "expected two fields".into() })?;
            m.insert(cat.trim(), concept.trim())?;
        }
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| KgError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text).map_err(|e| match e {
            KgError::Parse { line, message, .. } => KgError::Parse { path: path.display().to_string(), line, message },
            other => other,
        })
    }

    pub fn concepts(&self, category: &str) -> Option<&BTreeSet<String>> {
        self.map.get(category).filter(|s| !s.is_empty())
    }

    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Every root concept of `word`: its FormOf targets, or the word's own
/// concept when it has none. `None` when the graph lacks the word.
pub fn resolve_roots(word: &str, kg: &impl KnowledgeGraph) -> Result<Option<BTreeSet<String>>> {
    let concept = concept_id(word);
    if !kg.has_node(&concept)? {
        return Ok(None);
    }
    let roots = kg.targets(&concept, Relation::FormOf)?;
    Ok(Some(if roots.is_empty() { [concept].into() } else { roots }))
}

/// Representative root concept: the lexicographically smallest root.
pub fn resolve_root(word: &str, kg: &impl KnowledgeGraph) -> Result<Option<String>> {
    Ok(resolve_roots(word, kg)?.and_then(|r| r.into_iter().next()))
}

/// HasContext targets of `concept`, plus each target's IsA parents (one
/// level, not transitive).
pub fn contexts_of(concept: &str, kg: &impl KnowledgeGraph) -> Result<BTreeSet<String>> {
    let direct = kg.targets(concept, Relation::HasContext)?;
    let mut out = direct.clone();
    for ctx in &direct {
        out.extend(kg.targets(ctx, Relation::IsA)?);
    }
    Ok(out)
}

/// Contexts unioned over every root of `word`; empty for unknown words.
pub fn word_contexts(word: &str, kg: &impl KnowledgeGraph) -> Result<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    for root in resolve_roots(word, kg)?.unwrap_or_default() {
        out.extend(contexts_of(&root, kg)?);
    }
    Ok(out)
}

/// Single alphanumeric words only; multi-word terms and punctuation cannot
/// be looked up.
pub fn is_lookup_candidate(term: &str) -> bool {
    !term.is_empty() && !is_punctuation(term) && term.chars().all(char::is_alphanumeric)
}

/// Memo of word contexts shared across rankings and categories.
#[derive(Debug)]
pub struct ContextResolver<'g, G> {
    kg: &'g G,
    memo: RwLock<HashMap<String, BTreeSet<String>>>,
}

impl<'g, G: KnowledgeGraph> ContextResolver<'g, G> {
    pub fn new(kg: &'g G) -> Self {
        Self { kg, memo: RwLock::new(HashMap::new()) }
    }

    pub fn contexts(&self, word: &str) -> Result<BTreeSet<String>> {
        if let Some(hit) = self.memo.read().expect("memo poisoned").get(word) {
            return Ok(hit.clone());
        }
        let ctx = word_contexts(word, self.kg)?;
        self.memo.write().expect("memo poisoned").insert(word.to_string(), ctx.clone());
        Ok(ctx)
    }

    /// Number of the first `n` lookup candidates of `ranking` whose contexts
    /// meet the category's concepts.
    pub fn domain_relevance(&self, ranking: &TermRanking, category: &str, mapping: &ConceptMapping, n: usize) -> Result<usize> {
        let targets = mapping.concepts(category).ok_or_else(|| KgError::UnmappedCategory(category.to_string()))?;
        let mut count = 0;
        for term in ranking.terms().filter(|t| is_lookup_candidate(t)).take(n) {
            if !self.contexts(term)?.is_disjoint(targets) {
                count += 1;
            }
        }
        Ok(count)
    }
}

/// Counts how many of the top `n` terms of `ranking` carry a context mapped
/// to `category`.
pub fn domain_relevance(
    ranking: &TermRanking,
    category: &str,
    mapping: &ConceptMapping,
    kg: &impl KnowledgeGraph,
    n: usize,
) -> Result<usize> {
    ContextResolver::new(kg).domain_relevance(ranking, category, mapping, n)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelevanceRow {
    pub category: String,
    pub tag: MethodTag,
    pub count: usize,
}

/// Category × ranking-method counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainRelevanceReport {
    pub n: usize,
    pub rows: Vec<RelevanceRow>,
}

impl DomainRelevanceReport {
    pub fn count(&self, category: &str, tag: MethodTag) -> Option<usize> {
        self.rows.iter().find(|r| r.category == category && r.tag == tag).map(|r| r.count)
    }

    /// Column order of first appearance.
    pub fn tags(&self) -> Vec<MethodTag> {
        let mut seen = Vec::new();
        for r in &self.rows {
            if !seen.contains(&r.tag) {
                seen.push(r.tag);
            }
        }
        seen
    }

    pub fn categories(&self) -> Vec<&str> {
        let mut seen: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !seen.contains(&r.category.as_str()) {
                seen.push(&r.category);
            }
        }
        seen
    }

    /// Wide layout: one row per category, one column per method, then a
    /// total row.
    pub fn to_tsv(&self, names: impl Fn(&str) -> Option<String>) -> String {
        let tags = self.tags();
        let mut out = String::from("category\tname");
        for t in &tags {
            out.push('\t');
            out.push_str(&t.to_string());
        }
        out.push('\n');
        let mut totals = vec![0usize; tags.len()];
        for cat in self.categories() {
            out.push_str(cat);
            out.push('\t');
            out.push_str(&names(cat).unwrap_or_default().replace('\t', " "));
            for (i, t) in tags.iter().enumerate() {
                let c = self.count(cat, *t).unwrap_or(0);
                totals[i] += c;
                out.push_str(&format!("\t{c}"));
            }
            out.push('\n');
        }
        out.push_str("total\t");
        for t in totals {
            out.push_str(&format!("\t{t}"));
        }
        out.push('\n');
        out
    }
}

/// One report row per (category, ranking). Each category brings its own
/// rankings so per-category attention and selector scores can be used.
pub fn relevance_report(
    per_category: &[(String, Vec<TermRanking>)],
    mapping: &ConceptMapping,
    kg: &impl KnowledgeGraph,
    n: usize,
) -> Result<DomainRelevanceReport> {
    let resolver = ContextResolver::new(kg);
    let mut rows = Vec::new();
    for (category, rankings) in per_category {
        for r in rankings {
            let count = resolver.domain_relevance(r, category, mapping, n)?;
            rows.push(RelevanceRow { category: category.clone(), tag: r.tag, count });
        }
    }
    Ok(DomainRelevanceReport { n, rows })
}
