//! Config-driven orchestration of the analysis stages.
//!
//! Each stage reads the run inputs plus the artifacts of earlier stages from
//! the output directory and writes its own files into `<output_dir>/<stage>/`
//! together with a `manifest.json`. Every text artifact starts with a
//! `# attnsel config=<hash>` line; later stages refuse artifacts produced
//! under a different configuration. Nothing time- or host-dependent is
//! written, so identical inputs give byte-identical outputs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::{document_attention, load_dumps, reduce_documents, DocumentAttention, DumpError};
use crate::classify::{
    cross_validate, fold_ranking, ClassifyError, CvPlan, FeatureSet, FeatureSource, FeatureWeighting, Hyperparameters,
    ModelKind,
};
use crate::corpus::{
    build_vocabulary, load_corpus, load_stopwords, make_folds, Corpus, CorpusError, FoldAssignment, LabelTaxonomy,
    TokenizationPolicy, Vocabulary, DEFAULT_STOPWORDS_VERSION,
};
use crate::domainrel::{
    relevance_report, CacheSource, CachedGraph, ConceptMapping, KgError, KnowledgeGraph, LiveGraph, MemoryGraph,
};
use crate::featsel::{weight_ranking, weight_ranking_with, FeatselError, FeatureScorer, Method, MethodTag, TermRanking, Weighting};
use crate::format::{f10, sha256_hex};
use crate::par;
use crate::rankcmp::{overlap_at_k, rbo, stability, RankCmpError, RboParams, DEFAULT_P_GRID};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Failure classes with distinct exit codes.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    External(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Data(_) => 3,
            PipelineError::External(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "config",
            PipelineError::Data(_) => "data",
            PipelineError::External(_) => "external",
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

impl From<CorpusError> for PipelineError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::FoldCount { .. } => PipelineError::Config(e.to_string()),
            _ => PipelineError::Data(e.to_string()),
        }
    }
}

impl From<DumpError> for PipelineError {
    fn from(e: DumpError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<FeatselError> for PipelineError {
    fn from(e: FeatselError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<RankCmpError> for PipelineError {
    fn from(e: RankCmpError) -> Self {
        match e {
            RankCmpError::InvalidPersistence(_) | RankCmpError::ZeroK | RankCmpError::ZeroDepth => {
                PipelineError::Config(e.to_string())
            }
            _ => PipelineError::Data(e.to_string()),
        }
    }
}

impl From<KgError> for PipelineError {
    fn from(e: KgError) -> Self {
        match e {
            KgError::Access { .. } => PipelineError::External(e.to_string()),
            KgError::UnmappedCategory(_) | KgError::InvalidConcept(_) => PipelineError::Config(e.to_string()),
            _ => PipelineError::Data(e.to_string()),
        }
    }
}

impl From<ClassifyError> for PipelineError {
    fn from(e: ClassifyError) -> Self {
        match e {
            ClassifyError::InvalidHyperparameter(_) | ClassifyError::UnknownModel(_) | ClassifyError::UnknownWeighting(_) => {
                PipelineError::Config(e.to_string())
            }
            _ => PipelineError::Data(e.to_string()),
        }
    }
}

fn io_error(path: &Path, e: impl fmt::Display) -> PipelineError {
    PipelineError::Data(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FoldConfig {
    pub k: usize,
    pub seed: u64,
}

impl Default for FoldConfig {
    fn default() -> Self {
        Self { k: 5, seed: 42 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectConfig {
    pub methods: Vec<Method>,
    /// Re-weightings applied to the top-k prefix of every ranking.
    pub weightings: Vec<Weighting>,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self { methods: Method::SELECTORS.to_vec(), weightings: vec![Weighting::Tf, Weighting::Tfidf] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    pub p_grid: Vec<f64>,
    /// Overlap depth and weighting prefix; defaults to the number of
    /// attended content words.
    pub k: Option<usize>,
    pub stability_k: usize,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self { p_grid: DEFAULT_P_GRID.to_vec(), k: None, stability_k: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainsConfig {
    pub top_n: usize,
}

impl Default for DomainsConfig {
    fn default() -> Self {
        Self { top_n: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub k_grid: Vec<usize>,
    pub methods: Vec<Method>,
    pub weightings: Vec<FeatureWeighting>,
    pub models: Vec<ModelKind>,
    pub hyper: Hyperparameters,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            k_grid: vec![100, 500, 1000, 5000],
            methods: vec![Method::Attention, Method::Chi, Method::Ig, Method::Df, Method::Pd],
            weightings: vec![FeatureWeighting::Tf],
            models: vec![ModelKind::NaiveBayes, ModelKind::LogisticRegression],
            hyper: Hyperparameters::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KgBackend {
    #[default]
    None,
    Dump,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KgConfig {
    pub backend: KgBackend,
    /// Edge dump for the `dump` backend.
    pub edges: Option<PathBuf>,
    /// Append-only response cache for the `live` backend.
    pub cache: Option<PathBuf>,
    pub endpoint: String,
    pub requests_per_second: f64,
    pub retries: u32,
}

impl Default for KgConfig {
    fn default() -> Self {
        Self {
            backend: KgBackend::None,
            edges: None,
            cache: None,
            endpoint: LiveGraph::DEFAULT_ENDPOINT.to_string(),
            requests_per_second: 3.0,
            retries: 4,
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_level() -> u8 {
    1
}

fn default_min_df() -> usize {
    1
}

/// Run configuration. Relative paths resolve against the config file's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub taxonomy: PathBuf,
    #[serde(default)]
    pub dumps: Option<PathBuf>,
    /// Defaults to the bundled English list.
    #[serde(default)]
    pub stopwords: Option<PathBuf>,
    #[serde(default)]
    pub mapping: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_level")]
    pub level: u8,
    #[serde(default = "default_min_df")]
    pub min_df: usize,
    /// Write each document's word-level attention matrix as CSV.
    #[serde(default)]
    pub emit_matrices: bool,
    #[serde(default)]
    pub folds: FoldConfig,
    #[serde(default)]
    pub select: SelectConfig,
    #[serde(default)]
    pub compare: CompareConfig,
    #[serde(default)]
    pub domains: DomainsConfig,
    #[serde(default)]
    pub evaluate: EvaluateConfig,
    #[serde(default)]
    pub kg: KgConfig,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl RunConfig {
    /// Minimal config over the given inputs; paths are used as given.
    pub fn new(corpus: impl Into<PathBuf>, taxonomy: impl Into<PathBuf>) -> Self {
        Self {
            corpus: corpus.into(),
            taxonomy: taxonomy.into(),
            dumps: None,
            stopwords: None,
            mapping: None,
            output_dir: default_output_dir(),
            level: default_level(),
            min_df: default_min_df(),
            emit_matrices: false,
            folds: FoldConfig::default(),
            select: SelectConfig::default(),
            compare: CompareConfig::default(),
            domains: DomainsConfig::default(),
            evaluate: EvaluateConfig::default(),
            kg: KgConfig::default(),
            base_dir: PathBuf::new(),
        }
    }

    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| PipelineError::Config(format!("invalid config: {e}")))?;
        cfg.base_dir = base_dir.into();
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = dir.into();
        self
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_path(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    /// Hash of every setting that can change an artifact; the output
    /// directory is excluded so runs into different directories compare.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let json = serde_json::to_string(&c).expect("config serializes");
        sha256_hex(json.as_bytes())[..16].to_string()
    }

    /// Checks referenced paths and grid sanity.
    pub fn validate(&self) -> Result<()> {
        let must_exist = |what: &str, p: &Path| -> Result<()> {
            let full = self.resolve(p);
            if full.exists() {
                Ok(())
            } else {
                Err(PipelineError::Config(format!("{what} path does not exist: {}", full.display())))
            }
        };
        must_exist("corpus", &self.corpus)?;
        must_exist("taxonomy", &self.taxonomy)?;
        for (what, p) in [("dumps", &self.dumps), ("stopwords", &self.stopwords), ("mapping", &self.mapping), ("kg.edges", &self.kg.edges)] {
            if let Some(p) = p {
                must_exist(what, p)?;
            }
        }
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if !(1..=2).contains(&self.level) {
            return bad("level must be 1 or 2");
        }
        if self.folds.k < 2 {
            return bad("folds.k must be at least 2");
        }
        if self.compare.p_grid.is_empty() {
            return bad("compare.p_grid is empty");
        }
        if let Some(p) = self.compare.p_grid.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return Err(PipelineError::Config(format!("compare.p_grid value {p} outside (0, 1)")));
        }
        if self.compare.k == Some(0) || self.compare.stability_k == 0 || self.domains.top_n == 0 {
            return bad("compare.k, compare.stability_k and domains.top_n must be positive");
        }
        if self.select.methods.is_empty() || self.select.methods.contains(&Method::Attention) {
            return bad("select.methods must list feature selectors (chi, ig, df, pd)");
        }
        let ev = &self.evaluate;
        if ev.k_grid.is_empty() || ev.k_grid.contains(&0) || ev.methods.is_empty() || ev.weightings.is_empty() || ev.models.is_empty() {
            return bad("evaluate grids must be non-empty with positive k");
        }
        ev.hyper.validate()?;
        if self.kg.backend == KgBackend::Dump && self.kg.edges.is_none() {
            return bad("kg.backend = \"dump\" needs kg.edges");
        }
        if self.kg.requests_per_second.is_nan() || self.kg.requests_per_second < 0.0 {
            return bad("kg.requests_per_second must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    Attend,
    Select,
    Compare,
    Domains,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] =
        [Stage::Ingest, Stage::Attend, Stage::Select, Stage::Compare, Stage::Domains, Stage::Evaluate, Stage::Report];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Attend => "attend",
            Stage::Select => "select",
            Stage::Compare => "compare",
            Stage::Domains => "domains",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }

    /// File printed by `--stdout`.
    pub fn primary_artifact(self) -> &'static str {
        match self {
            Stage::Ingest => "corpus_summary.tsv",
            Stage::Attend => "attended_vocabulary.tsv",
            Stage::Select => "summary.tsv",
            Stage::Compare => "comparison.tsv",
            Stage::Domains => "domain_relevance.tsv",
            Stage::Evaluate => "evaluation.tsv",
            Stage::Report => "report.md",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| PipelineError::Config(format!("unknown command {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub file: String,
    pub sha256: String,
}

/// Provenance written next to every stage's artifacts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub version: String,
    pub config_hash: String,
    pub corpus_sha256: String,
    pub stopwords_sha256: String,
    pub stopwords_version: String,
    /// Content hashes of the input files the stage read, by role.
    pub inputs: BTreeMap<String, String>,
    pub artifacts: Vec<ArtifactEntry>,
}

/// Files written by one stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageOutput {
    pub stage: Stage,
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
}

impl StageOutput {
    pub fn primary(&self) -> PathBuf {
        self.dir.join(self.stage.primary_artifact())
    }
}

struct StageWriter {
    stage: Stage,
    dir: PathBuf,
    header: String,
    entries: Vec<ArtifactEntry>,
    files: Vec<PathBuf>,
    inputs: BTreeMap<String, String>,
}

impl StageWriter {
    fn new(out: &Path, stage: Stage, hash: &str) -> Result<Self> {
        let dir = out.join(stage.as_str());
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
        }
        fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
        Ok(Self {
            stage,
            dir,
            header: format!("attnsel config={hash}"),
            entries: Vec::new(),
            files: Vec::new(),
            inputs: BTreeMap::new(),
        })
    }

    fn write(&mut self, name: &str, body: &str) -> Result<()> {
        let head = if name.ends_with(".md") { format!("<!-- {} -->\n", self.header) } else { format!("# {}\n", self.header) };
        let content = head + body;
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
        }
        fs::write(&path, &content).map_err(|e| io_error(&path, e))?;
        self.entries.push(ArtifactEntry { file: name.to_string(), sha256: sha256_hex(content.as_bytes()) });
        self.files.push(path);
        Ok(())
    }

    fn input(&mut self, role: &str, sha: String) {
        self.inputs.insert(role.to_string(), sha);
    }

    fn finish(mut self, pipeline: &Pipeline) -> Result<StageOutput> {
        let (corpus_sha, stop_sha) = match pipeline.inputs.get() {
            Some(inp) => (inp.corpus.content_hash(), inp.policy.stopword_hash()),
            None => (String::new(), String::new()),
        };
        let manifest = Manifest {
            stage: self.stage.to_string(),
            version: VERSION.to_string(),
            config_hash: pipeline.hash.clone(),
            corpus_sha256: corpus_sha,
            stopwords_sha256: stop_sha,
            stopwords_version: pipeline.stopwords_version(),
            inputs: std::mem::take(&mut self.inputs),
            artifacts: std::mem::take(&mut self.entries),
        };
        let path = self.dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        fs::write(&path, json).map_err(|e| io_error(&path, e))?;
        self.files.push(path);
        Ok(StageOutput { stage: self.stage, dir: self.dir, files: self.files })
    }
}

struct Inputs {
    corpus: Corpus,
    policy: TokenizationPolicy,
    vocab: Vocabulary,
    pruned: usize,
}

/// A validated configuration bound to its output directory.
#[derive(Debug)]
pub struct Pipeline {
    config: RunConfig,
    hash: String,
    out: PathBuf,
    inputs: OnceLock<Inputs>,
}

impl fmt::Debug for Inputs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Inputs").field("documents", &self.corpus.len()).field("terms", &self.vocab.len()).finish()
    }
}

fn file_sha(path: &Path) -> Result<String> {
    if path.is_dir() {
        let mut all = String::new();
        for f in crate::attention::dump_files(path)? {
            let bytes = fs::read(&f).map_err(|e| io_error(&f, e))?;
            all.push_str(&sha256_hex(&bytes));
        }
        return Ok(sha256_hex(all.as_bytes()));
    }
    let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn tsv_escape(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

fn safe_file_name(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' }).collect()
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let hash = config.hash();
        let out = config.output_path();
        Ok(Self { config, hash, out, inputs: OnceLock::new() })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn output_dir(&self) -> &Path {
        &self.out
    }

    fn stopwords_version(&self) -> String {
        if self.config.stopwords.is_some() {
            "custom".into()
        } else {
            DEFAULT_STOPWORDS_VERSION.into()
        }
    }

    fn inputs(&self) -> Result<&Inputs> {
        if let Some(inp) = self.inputs.get() {
            return Ok(inp);
        }
        let cfg = &self.config;
        let taxonomy = LabelTaxonomy::load(cfg.resolve(&cfg.taxonomy))?;
        let corpus = load_corpus(cfg.resolve(&cfg.corpus), taxonomy)?;
        let policy = match &cfg.stopwords {
            Some(p) => TokenizationPolicy::new(true, false, load_stopwords(cfg.resolve(p))?)?,
            None => TokenizationPolicy::english(),
        };
        let mut vocab = build_vocabulary(&corpus, &policy);
        let pruned = vocab.prune(cfg.min_df);
        log::info!("corpus: {} documents, {} terms ({} pruned)", corpus.len(), vocab.len(), pruned);
        Ok(self.inputs.get_or_init(|| Inputs { corpus, policy, vocab, pruned }))
    }

    /// Reads an artifact of an earlier stage, checking its config hash.
    fn read_artifact(&self, stage: Stage, name: &str) -> Result<String> {
        let path = self.out.join(stage.as_str()).join(name);
        let text = fs::read_to_string(&path).map_err(|_| {
            PipelineError::Data(format!("missing artifact {}; run `attnsel {stage}` first", path.display()))
        })?;
        let expected = format!("attnsel config={}", self.hash);
        let first = text.lines().next().unwrap_or("");
        let found = first.trim_start_matches("<!--").trim_start_matches('#').trim_end_matches("-->").trim();
        if found != expected {
            return Err(PipelineError::Data(format!(
                "artifact {} was written under a different config ({found}); rerun `attnsel {stage}`",
                path.display()
            )));
        }
        Ok(text)
    }

    fn read_ranking(&self, stage: Stage, name: &str) -> Result<TermRanking> {
        Ok(TermRanking::from_tsv(&self.read_artifact(stage, name)?)?)
    }

    fn read_documents(&self) -> Result<Vec<DocumentAttention>> {
        let text = self.read_artifact(Stage::Attend, "documents.jsonl")?;
        text.lines()
            .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .map_err(|e| PipelineError::Data(format!("attend/documents.jsonl record {}: {e}", i + 1)))
            })
            .collect()
    }

    fn read_folds(&self, corpus: &Corpus) -> Result<FoldAssignment> {
        let text = self.read_artifact(Stage::Ingest, "folds.tsv")?;
        let mut by_id = BTreeMap::new();
        for line in text.lines().filter(|l| !l.starts_with('#')).skip(1) {
            let (id, fold) = line
                .split_once('\t')
                .ok_or_else(|| PipelineError::Data(format!("ingest/folds.tsv: bad line {line:?}")))?;
            let fold: usize = fold.parse().map_err(|_| PipelineError::Data(format!("ingest/folds.tsv: bad fold {fold:?}")))?;
            by_id.insert(id.to_string(), fold);
        }
        let folds = corpus
            .documents()
            .iter()
            .map(|d| {
                by_id
                    .get(&d.id)
                    .copied()
                    .ok_or_else(|| PipelineError::Data(format!("ingest/folds.tsv lacks document {:?}; rerun ingest", d.id)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FoldAssignment::from_folds(corpus, self.config.folds.k, folds)?)
    }

    fn ranking_file(tag: MethodTag) -> String {
        format!("{tag}.tsv")
    }

    /// Runs one stage under the given worker cap.
    pub fn run(&self, stage: Stage, jobs: Option<usize>) -> Result<StageOutput> {
        log::info!("stage {stage} (config {})", self.hash);
        par::with_jobs(jobs, || match stage {
            Stage::Ingest => self.ingest(),
            Stage::Attend => self.attend(),
            Stage::Select => self.select(),
            Stage::Compare => self.compare(),
            Stage::Domains => self.domains(),
            Stage::Evaluate => self.evaluate(),
            Stage::Report => self.report(),
        })
    }

    /// Every stage in order. Domains is skipped when no knowledge graph is
    /// configured.
    pub fn run_all(&self, jobs: Option<usize>) -> Result<Vec<StageOutput>> {
        let mut outs = Vec::new();
        for stage in Stage::ALL {
            if stage == Stage::Domains && (self.config.kg.backend == KgBackend::None || self.config.mapping.is_none()) {
                log::info!("skipping domains: no knowledge graph or mapping configured");
                continue;
            }
            outs.push(self.run(stage, jobs)?);
        }
        Ok(outs)
    }

    fn ingest(&self) -> Result<StageOutput> {
        let inp = self.inputs()?;
        let cfg = &self.config;
        let folds = make_folds(&inp.corpus, cfg.folds.k, cfg.folds.seed)?;
        let mut w = StageWriter::new(&self.out, Stage::Ingest, &self.hash)?;
        w.input("corpus", file_sha(&cfg.resolve(&cfg.corpus))?);
        w.input("taxonomy", file_sha(&cfg.resolve(&cfg.taxonomy))?);

        let tax = inp.corpus.taxonomy();
        let mut summary = String::from("key\tvalue\n");
        let _ = writeln!(summary, "documents\t{}", inp.corpus.len());
        let _ = writeln!(summary, "level\t{}", cfg.level);
        let _ = writeln!(summary, "active_categories\t{}", inp.corpus.active_categories(cfg.level).len());
        let _ = writeln!(summary, "taxonomy_level1\t{}", tax.codes_at_level(1).len());
        let _ = writeln!(summary, "taxonomy_level2\t{}", tax.codes_at_level(2).len());
        let _ = writeln!(summary, "vocabulary\t{}", inp.vocab.len());
        let _ = writeln!(summary, "min_df\t{}", cfg.min_df);
        let _ = writeln!(summary, "pruned_terms\t{}", inp.pruned);
        let _ = writeln!(summary, "stopwords\t{}", inp.policy.stopwords().len());
        let _ = writeln!(summary, "stopwords_version\t{}", self.stopwords_version());
        let _ = writeln!(summary, "stopwords_sha256\t{}", inp.policy.stopword_hash());
        let _ = writeln!(summary, "corpus_sha256\t{}", inp.corpus.content_hash());
        let _ = writeln!(summary, "folds\t{}", cfg.folds.k);
        let _ = writeln!(summary, "fold_seed\t{}", cfg.folds.seed);
        w.write("corpus_summary.tsv", &summary)?;

        let mut sizes = String::from("code\tname\tlevel\tdocuments\n");
        for c in tax.categories() {
            let level = tax.level(&c.code).unwrap_or(1);
            let n = (0..inp.corpus.len()).filter(|&d| inp.corpus.labels(d, level).contains(&c.code)).count();
            let _ = writeln!(sizes, "{}\t{}\t{level}\t{n}", c.code, tsv_escape(&c.name));
        }
        w.write("category_sizes.tsv", &sizes)?;

        let mut vocab = String::from("term\tdf\ttf\n");
        for (t, s) in inp.vocab.iter() {
            let _ = writeln!(vocab, "{}\t{}\t{}", tsv_escape(t), s.df(), s.tf);
        }
        w.write("vocabulary.tsv", &vocab)?;

        let mut fold_tsv = String::from("doc_id\tfold\n");
        for (id, f) in folds.pairs() {
            let _ = writeln!(fold_tsv, "{}\t{f}", tsv_escape(id));
        }
        w.write("folds.tsv", &fold_tsv)?;
        w.finish(self)
    }

    fn attend(&self) -> Result<StageOutput> {
        let cfg = &self.config;
        let dumps = cfg
            .dumps
            .as_ref()
            .map(|p| cfg.resolve(p))
            .ok_or_else(|| PipelineError::Config("attend needs `dumps` in the config".into()))?;
        let inp = self.inputs()?;
        let records = load_dumps(&dumps)?;
        let mut seen = BTreeSet::new();
        for r in &records {
            if !seen.insert(r.doc_id.as_str()) {
                return Err(PipelineError::Data(format!("duplicate dump record for document {:?}", r.doc_id)));
            }
        }
        let unmatched = records.iter().filter(|r| inp.corpus.index_of(&r.doc_id).is_none()).count();
        if unmatched > 0 {
            log::warn!("{unmatched} dump records have no corpus document");
        }
        let docs = par::map(&records, |r| document_attention(r, &inp.policy)).into_iter().collect::<std::result::Result<Vec<_>, _>>()?;
        let av = reduce_documents(&docs)?;
        let content = av.content_ranking(&inp.policy);

        let mut w = StageWriter::new(&self.out, Stage::Attend, &self.hash)?;
        w.input("dumps", file_sha(&dumps)?);

        let mut jsonl = String::new();
        for d in &docs {
            jsonl.push_str(&serde_json::to_string(d).expect("summary serializes"));
            jsonl.push('\n');
        }
        w.write("documents.jsonl", &jsonl)?;

        let mut vocab = String::from("rank\tterm\tscore\tdocuments\tselections\n");
        for (i, (t, s)) in av.ranking.entries().iter().enumerate() {
            let _ = writeln!(vocab, "{}\t{}\t{}\t{}\t{}", i + 1, tsv_escape(t), f10(*s), av.doc_counts[t], av.selection_events[t]);
        }
        w.write("attended_vocabulary.tsv", &vocab)?;
        w.write("attention_ranking.tsv", &content.to_tsv())?;

        let mut events: Vec<(&String, &usize)> = av.selection_events.iter().collect();
        events.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
        let mut freq = String::from("rank\tterm\tselections\n");
        for (i, (t, n)) in events.iter().enumerate() {
            let _ = writeln!(freq, "{}\t{}\t{n}", i + 1, tsv_escape(t));
        }
        w.write("frequent_attended.tsv", &freq)?;

        let mut summary = String::from("key\tvalue\n");
        let _ = writeln!(summary, "documents\t{}", av.documents);
        let _ = writeln!(summary, "unmatched_documents\t{unmatched}");
        let _ = writeln!(summary, "distinct_words\t{}", av.scores.len());
        let _ = writeln!(summary, "attended_words\t{}", av.attended.len());
        let _ = writeln!(summary, "attended_content_words\t{}", content.len());
        let _ = writeln!(summary, "word_fraction\t{}", f10(av.word_fraction()));
        let _ = writeln!(summary, "token_types\t{}", av.token_types);
        let _ = writeln!(summary, "token_fraction\t{}", f10(av.token_fraction()));
        w.write("summary.tsv", &summary)?;

        if cfg.emit_matrices {
            for r in &records {
                let wam = r.word_matrix()?;
                w.write(&format!("matrices/{}.csv", safe_file_name(&r.doc_id)), &wam.to_csv())?;
            }
        }
        w.finish(self)
    }

    /// Overlap depth: configured, else the attended content vocabulary size.
    fn overlap_k(&self, attention: &TermRanking) -> usize {
        self.config.compare.k.unwrap_or(attention.len()).max(1)
    }

    fn select(&self) -> Result<StageOutput> {
        let inp = self.inputs()?;
        let cfg = &self.config;
        let attention = self.read_ranking(Stage::Attend, "attention_ranking.tsv")?;
        let k = self.overlap_k(&attention);
        let scorer = FeatureScorer::new(&inp.corpus, &inp.vocab, cfg.level);
        let rankings: Vec<TermRanking> = cfg.select.methods.iter().map(|&m| scorer.rank(m, &inp.policy)).collect();

        let mut w = StageWriter::new(&self.out, Stage::Select, &self.hash)?;
        let mut summary = String::from("method\tterms\tprefix_k\n");
        for r in &rankings {
            w.write(&Self::ranking_file(r.tag), &r.to_tsv())?;
            let _ = writeln!(summary, "{}\t{}\t", r.tag, r.len());
        }
        for &scheme in &cfg.select.weightings {
            for base in std::iter::once(&attention).chain(&rankings) {
                let weighted = weight_ranking(&base.truncated(k), &inp.vocab, scheme);
                w.write(&Self::ranking_file(weighted.tag), &weighted.to_tsv())?;
                let _ = writeln!(summary, "{}\t{}\t{k}", weighted.tag, weighted.len());
            }
        }
        w.write("summary.tsv", &summary)?;
        w.finish(self)
    }

    fn variant_tags(&self) -> Vec<(MethodTag, Vec<MethodTag>)> {
        let cfg = &self.config;
        let mut out = vec![(
            MethodTag::plain(Method::Attention),
            cfg.select.methods.iter().map(|&m| MethodTag::plain(m)).collect(),
        )];
        for &w in &cfg.select.weightings {
            out.push((
                MethodTag::weighted(Method::Attention, w),
                cfg.select.methods.iter().map(|&m| MethodTag::weighted(m, w)).collect(),
            ));
        }
        out
    }

    fn load_tagged(&self, tag: MethodTag) -> Result<TermRanking> {
        if tag == MethodTag::plain(Method::Attention) {
            self.read_ranking(Stage::Attend, "attention_ranking.tsv")
        } else {
            self.read_ranking(Stage::Select, &Self::ranking_file(tag))
        }
    }

    fn compare(&self) -> Result<StageOutput> {
        let inp = self.inputs()?;
        let cfg = &self.config;
        let attention = self.load_tagged(MethodTag::plain(Method::Attention))?;
        let k = self.overlap_k(&attention);
        let params = cfg.compare.p_grid.iter().map(|&p| RboParams::new(p)).collect::<std::result::Result<Vec<_>, _>>()?;

        let mut table = String::from("method_a\tmethod_b\tk\toverlap\tp\trbo_min\tresidual\trbo_ext\n");
        let mut series = String::from("method_a,method_b,p,rbo_ext\n");
        for (att_tag, others) in self.variant_tags() {
            let att = self.load_tagged(att_tag)?;
            for tag in others {
                let other = self.load_tagged(tag)?;
                let overlap = overlap_at_k(&att, &other, k)?;
                for prm in &params {
                    let r = rbo(&att, &other, *prm)?;
                    let _ = writeln!(
                        table,
                        "{att_tag}\t{tag}\t{k}\t{}\t{}\t{}\t{}\t{}",
                        f10(overlap),
                        f10(prm.p()),
                        f10(r.min),
                        f10(r.residual),
                        f10(r.ext)
                    );
                    let _ = writeln!(series, "{att_tag},{tag},{},{}", f10(prm.p()), f10(r.ext));
                }
            }
        }

        let folds = self.read_folds(&inp.corpus)?;
        let docs = self.read_documents()?;
        let mut sources = vec![FeatureSet { tag: MethodTag::plain(Method::Attention), source: FeatureSource::Attention(docs) }];
        for &m in &cfg.select.methods {
            sources.push(FeatureSet { tag: MethodTag::plain(m), source: FeatureSource::Selector(m) });
        }
        let kf = folds.k();
        let sets = par::map_range(sources.len() * kf, |j| {
            let s = &sources[j / kf];
            fold_ranking(&s.source, s.tag, &inp.corpus, &inp.vocab, &folds, j % kf, cfg.level, &inp.policy)
                .map(|r| r.top_set(cfg.compare.stability_k))
        })
        .into_iter()
        .collect::<std::result::Result<Vec<_>, _>>()?;
        let mut stab = String::from("method\tk\tfolds\tmean_jaccard\n");
        let mut pairwise = String::from("method\tfold_a\tfold_b\tjaccard\n");
        for (s, chunk) in sources.iter().zip(sets.chunks(kf)) {
            let rep = stability(chunk.to_vec(), s.tag)?;
            let _ = writeln!(stab, "{}\t{}\t{kf}\t{}", s.tag, cfg.compare.stability_k, f10(rep.mean_jaccard));
            for i in 0..kf {
                for j in i + 1..kf {
                    let _ = writeln!(pairwise, "{}\t{i}\t{j}\t{}", s.tag, f10(rep.pairwise[i][j]));
                }
            }
        }

        let mut w = StageWriter::new(&self.out, Stage::Compare, &self.hash)?;
        w.write("comparison.tsv", &table)?;
        w.write("rbo_series.csv", &series)?;
        w.write("stability.tsv", &stab)?;
        w.write("stability_pairwise.tsv", &pairwise)?;
        w.finish(self)
    }

    fn knowledge_graph(&self) -> Result<Box<dyn KnowledgeGraph>> {
        let cfg = &self.config;
        match cfg.kg.backend {
            KgBackend::None => Err(PipelineError::Config("domains needs a [kg] backend (dump or live)".into())),
            KgBackend::Dump => {
                let edges = cfg.kg.edges.as_ref().expect("validated");
                Ok(Box::new(MemoryGraph::load_edge_dump(cfg.resolve(edges))?))
            }
            KgBackend::Live => {
                let cache = cfg.resolve(cfg.kg.cache.as_deref().unwrap_or(Path::new("conceptnet_cache.jsonl")));
                let live = LiveGraph::new(cfg.kg.endpoint.clone(), cfg.kg.requests_per_second)
                    .with_retries(cfg.kg.retries, std::time::Duration::from_millis(500));
                Ok(Box::new(CachedGraph::with_file(live, CacheSource::Live, cache)?))
            }
        }
    }

    fn domains(&self) -> Result<StageOutput> {
        let inp = self.inputs()?;
        let cfg = &self.config;
        let mapping_path = cfg
            .mapping
            .as_ref()
            .map(|p| cfg.resolve(p))
            .ok_or_else(|| PipelineError::Config("domains needs `mapping` in the config".into()))?;
        let mapping = ConceptMapping::load(&mapping_path)?;
        let kg = self.knowledge_graph()?;
        let docs = self.read_documents()?;
        let by_id: BTreeMap<&str, &DocumentAttention> = docs.iter().map(|d| (d.doc_id.as_str(), d)).collect();
        let scorer = FeatureScorer::new(&inp.corpus, &inp.vocab, cfg.level);

        let mut per_category = Vec::new();
        for (ci, code) in scorer.categories().iter().enumerate() {
            let members: Vec<usize> =
                (0..inp.corpus.len()).filter(|&d| inp.corpus.labels(d, cfg.level).contains(code)).collect();
            let att_docs: Vec<DocumentAttention> = members
                .iter()
                .filter_map(|&d| by_id.get(inp.corpus.documents()[d].id.as_str()).map(|a| (*a).clone()))
                .collect();
            let attention = if att_docs.is_empty() {
                TermRanking::from_scores(MethodTag::plain(Method::Attention), std::iter::empty())
            } else {
                reduce_documents(&att_docs)?.content_ranking(&inp.policy)
            };
            let k = self.overlap_k(&attention);
            let mut rankings = vec![attention.clone()];
            let selected: Vec<TermRanking> =
                cfg.select.methods.iter().map(|&m| scorer.rank_for_category(m, ci, &inp.policy)).collect();
            rankings.extend(selected.iter().cloned());
            let tf_source = inp.vocab.subset(&members);
            for &scheme in &cfg.select.weightings {
                for base in std::iter::once(&attention).chain(&selected) {
                    rankings.push(weight_ranking_with(&base.truncated(k), &tf_source, &inp.vocab, scheme));
                }
            }
            per_category.push((code.clone(), rankings));
        }
        let report = relevance_report(&per_category, &mapping, &kg.as_ref(), cfg.domains.top_n)?;

        let mut w = StageWriter::new(&self.out, Stage::Domains, &self.hash)?;
        w.input("mapping", file_sha(&mapping_path)?);
        if let (KgBackend::Dump, Some(edges)) = (cfg.kg.backend, &cfg.kg.edges) {
            w.input("kg_edges", file_sha(&cfg.resolve(edges))?);
        }
        let tax = inp.corpus.taxonomy();
        w.write("domain_relevance.tsv", &report.to_tsv(|c| tax.name(c).map(str::to_string)))?;
        let mut long = String::from("category\tmethod\ttop_n\tcount\n");
        for r in &report.rows {
            let _ = writeln!(long, "{}\t{}\t{}\t{}", r.category, r.tag, report.n, r.count);
        }
        w.write("domain_relevance_long.tsv", &long)?;
        w.finish(self)
    }

    fn evaluate(&self) -> Result<StageOutput> {
        let inp = self.inputs()?;
        let cfg = &self.config;
        let folds = self.read_folds(&inp.corpus)?;
        let mut sets = Vec::new();
        for &m in &cfg.evaluate.methods {
            let source = if m == Method::Attention {
                FeatureSource::Attention(self.read_documents()?)
            } else {
                FeatureSource::Selector(m)
            };
            sets.push(FeatureSet { tag: MethodTag::plain(m), source });
        }
        let plan = CvPlan {
            sets,
            ks: cfg.evaluate.k_grid.clone(),
            weightings: cfg.evaluate.weightings.clone(),
            kinds: cfg.evaluate.models.clone(),
            hyper: cfg.evaluate.hyper,
            level: cfg.level,
        };
        let report = cross_validate(&inp.corpus, &inp.vocab, &folds, &plan, &inp.policy)?;
        let mut w = StageWriter::new(&self.out, Stage::Evaluate, &self.hash)?;
        w.write("evaluation.tsv", &report.to_tsv())?;
        w.write("f1_series.csv", &report.series_csv())?;
        w.finish(self)
    }

    fn report(&self) -> Result<StageOutput> {
        let sections: [Section<'_>; 9] = [
            ("Corpus", Stage::Ingest, "corpus_summary.tsv", None),
            ("Attention", Stage::Attend, "summary.tsv", None),
            ("Most frequently attended words", Stage::Attend, "frequent_attended.tsv", Some(&|l: &str| rank_at_most(l, 20))),
            ("Rankings", Stage::Select, "summary.tsv", None),
            ("Overlap and rank-biased overlap", Stage::Compare, "comparison.tsv", None),
            ("Fold stability", Stage::Compare, "stability.tsv", None),
            ("Domain relevance", Stage::Domains, "domain_relevance.tsv", None),
            ("Classification (pooled over folds)", Stage::Evaluate, "evaluation.tsv", Some(&|l: &str| l.split('\t').nth(4) == Some("all"))),
            ("Classification series", Stage::Evaluate, "f1_series.csv", Some(&|_| false)),
        ];
        let mut md = format!("# attnsel report\n\n- version: {VERSION}\n- config: {}\n", self.hash);
        if let Ok(m) = self.read_manifest(Stage::Ingest) {
            let _ = writeln!(md, "- corpus sha256: {}\n- stopwords: {} ({})", m.corpus_sha256, m.stopwords_version, m.stopwords_sha256);
        }
        for (title, stage, file, keep) in sections {
            if keep.is_some_and(|k| !k("")) && file.ends_with(".csv") {
                continue;
            }
            let _ = write!(md, "\n## {title}\n\n");
            let path = self.out.join(stage.as_str()).join(file);
            if !path.exists() {
                let _ = writeln!(md, "Not available: run `attnsel {stage}`.");
                continue;
            }
            let text = self.read_artifact(stage, file)?;
            md.push_str(&tsv_to_markdown(&text, keep));
        }
        let mut w = StageWriter::new(&self.out, Stage::Report, &self.hash)?;
        w.write("report.md", &md)?;
        w.finish(self)
    }

    fn read_manifest(&self, stage: Stage) -> Result<Manifest> {
        let path = self.out.join(stage.as_str()).join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
        serde_json::from_str(&text).map_err(|e| io_error(&path, e))
    }
}

/// Report section: title, source stage, artifact and optional row filter.
type Section<'a> = (&'a str, Stage, &'a str, Option<&'a dyn Fn(&str) -> bool>);

fn rank_at_most(line: &str, n: usize) -> bool {
    line.split('\t').next().and_then(|r| r.parse::<usize>().ok()).is_some_and(|r| r <= n)
}

/// Markdown table from a headed TSV artifact; `keep` filters data rows.
fn tsv_to_markdown(text: &str, keep: Option<&dyn Fn(&str) -> bool>) -> String {
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.is_empty());
    let Some(header) = lines.next() else {
        return "Empty.\n".into();
    };
    let cols = header.split('\t').count();
    let mut out = format!("| {} |\n|{}\n", header.replace('\t', " | "), " --- |".repeat(cols));
    for l in lines.filter(|l| keep.is_none_or(|k| k(l))) {
        let _ = writeln!(out, "| {} |", l.replace('|', "\\|").replace('\t', " | "));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{write_fixture_workspace, write_planted_workspace, PlantedSpec};

    fn fixture_config(dir: &Path) -> RunConfig {
        let paths = write_fixture_workspace(dir.join("inputs")).unwrap();
        let mut cfg = RunConfig::new(&paths.corpus, &paths.taxonomy);
        cfg.dumps = Some(paths.dumps);
        cfg.mapping = Some(paths.mapping);
        cfg.kg.backend = KgBackend::Dump;
        cfg.kg.edges = Some(paths.edges);
        cfg.folds.k = 3;
        cfg.evaluate.k_grid = vec![5];
        cfg.output_dir = dir.join("out");
        cfg
    }

    #[test]
    fn config_round_trip_and_hash() {
        let text = r#"
            corpus = "c.jsonl"
            taxonomy = "t.jsonl"
            output_dir = "o1"
            [folds]
            k = 4
            [evaluate]
            models = ["nb"]
            weightings = ["tfidf"]
            [evaluate.hyper]
            epochs = 10
        "#;
        let a = RunConfig::parse(text, "/x").unwrap();
        assert_eq!(a.folds.k, 4);
        assert_eq!(a.folds.seed, 42);
        assert_eq!(a.evaluate.models, vec![ModelKind::NaiveBayes]);
        assert_eq!(a.evaluate.hyper.epochs, 10);
        assert_eq!(a.evaluate.hyper.alpha, 1.0);
        assert_eq!(a.resolve(Path::new("c.jsonl")), PathBuf::from("/x/c.jsonl"));
        let b = RunConfig::parse(&text.replace("o1", "o2"), "/y").unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = RunConfig::parse(&text.replace("k = 4", "k = 3"), "/x").unwrap();
        assert_ne!(a.hash(), c.hash());
        let again = RunConfig::parse(&a.to_toml(), "/x").unwrap();
        assert_eq!(again, a);
    }

    #[test]
    fn config_errors() {
        assert!(matches!(RunConfig::parse("corpus = 1", "."), Err(PipelineError::Config(_))));
        assert!(matches!(RunConfig::parse("corpus = \"a\"\ntaxonomy = \"b\"\nbogus = 1", "."), Err(PipelineError::Config(_))));
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::new(dir.path().join("missing.jsonl"), dir.path().join("t.jsonl"));
        let err = Pipeline::new(cfg).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("corpus"));
        let mut cfg = fixture_config(dir.path());
        cfg.compare.p_grid = vec![1.0];
        assert_eq!(Pipeline::new(cfg).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn stages_need_their_predecessors() {
        let dir = tempfile::tempdir().unwrap();
        let p = Pipeline::new(fixture_config(dir.path())).unwrap();
        let err = p.run(Stage::Select, None).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("attnsel attend"));
    }

    #[test]
    fn fixture_pipeline_end_to_end() {
        let dir = tempfile::tempdir().unwrap();
        let p = Pipeline::new(fixture_config(dir.path())).unwrap();
        let outs = p.run_all(Some(2)).unwrap();
        assert_eq!(outs.len(), 7);
        let vocab = fs::read_to_string(outs[1].primary()).unwrap();
        let terms: Vec<&str> = vocab.lines().skip(2).map(|l| l.split('\t').nth(1).unwrap()).collect();
        assert_eq!(terms, vec!["gene", "regulation"]);
        let dom = fs::read_to_string(outs[4].primary()).unwrap();
        assert!(dom.lines().nth(2).unwrap().starts_with("01\tField 1\t1"));
        let report = fs::read_to_string(outs[6].primary()).unwrap();
        assert!(report.contains("## Fold stability"));
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(outs[0].dir.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest.config_hash, p.config_hash());
    }

    #[test]
    fn stale_artifacts_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = fixture_config(dir.path());
        Pipeline::new(cfg.clone()).unwrap().run(Stage::Ingest, None).unwrap();
        Pipeline::new(cfg.clone()).unwrap().run(Stage::Attend, None).unwrap();
        let mut changed = cfg;
        changed.min_df = 2;
        let err = Pipeline::new(changed).unwrap().run(Stage::Select, None).unwrap_err();
        assert!(err.to_string().contains("different config"));
    }

    #[test]
    fn planted_run_is_thread_count_independent() {
        let dir = tempfile::tempdir().unwrap();
        let spec = PlantedSpec { documents: 60, ..Default::default() };
        let paths = write_planted_workspace(dir.path().join("in"), &spec).unwrap();
        let mut cfg = RunConfig::new(&paths.corpus, &paths.taxonomy);
        cfg.dumps = Some(paths.dumps.clone());
        cfg.evaluate.k_grid = vec![20];
        cfg.evaluate.hyper.epochs = 20;
        let run = |sub: &str, jobs| {
            let mut c = cfg.clone();
            c.output_dir = dir.path().join(sub);
            Pipeline::new(c).unwrap().run_all(Some(jobs)).unwrap()
        };
        let a = run("a", 1);
        let b = run("b", 4);
        for (x, y) in a.iter().zip(&b) {
            for (fx, fy) in x.files.iter().zip(&y.files) {
                assert_eq!(fs::read(fx).unwrap(), fs::read(fy).unwrap(), "{}", fx.display());
            }
        }
    }
}
