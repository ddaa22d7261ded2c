//! Synthetic data with known structure: a planted-marker corpus, attention
//! dumps that favour the markers, a tiny knowledge graph, and the 3-document
//! attention fixture.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::attention::{write_dumps, AttentionRecord, AttentionWeights, SquareMatrix};
use crate::corpus::{Category, Corpus, Document, LabelTaxonomy};

/// Shape of a planted corpus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedSpec {
    pub documents: usize,
    pub categories: usize,
    pub markers_per_category: usize,
    pub background: usize,
    pub words_per_document: usize,
    pub markers_per_document: usize,
    /// Non-exclusive words favoured by one category.
    pub topical_per_category: usize,
    pub topical_per_document: usize,
    /// Chance that a topical token comes from the document's own category.
    pub topical_affinity: f64,
    pub seed: u64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        Self {
            documents: 500,
            categories: 5,
            markers_per_category: 5,
            background: 300,
            words_per_document: 30,
            markers_per_document: 3,
            topical_per_category: 5,
            topical_per_document: 4,
            topical_affinity: 0.5,
            seed: 7,
        }
    }
}

/// Function words mixed into the background at the top of the frequency
/// curve.
const FUNCTION_WORDS: [&str; 8] = ["the", "of", "and", "in", "to", "a", "is", "for"];

const ONSETS: [&str; 14] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const NUCLEI: [&str; 5] = ["a", "e", "i", "o", "u"];
const CODAS: [&str; 6] = ["", "n", "r", "s", "x", "l"];

fn pseudo_word(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(ONSETS.choose(rng).expect("non-empty"));
        w.push_str(NUCLEI.choose(rng).expect("non-empty"));
        w.push_str(CODAS.choose(rng).expect("non-empty"));
    }
    w
}

/// Generated corpus plus the ground truth used to build it.
#[derive(Debug, Clone)]
pub struct PlantedCorpus {
    pub corpus: Corpus,
    /// Marker terms per category code.
    pub markers: BTreeMap<String, Vec<String>>,
    /// Topical terms per home category code.
    pub topical: BTreeMap<String, Vec<String>>,
    pub background: Vec<String>,
    /// Topic word standing for each category in the knowledge graph.
    pub topics: BTreeMap<String, String>,
}

impl PlantedCorpus {
    pub fn all_markers(&self) -> BTreeSet<String> {
        self.markers.values().flatten().cloned().collect()
    }
}

pub fn planted_taxonomy(categories: usize) -> LabelTaxonomy {
    let cats = (1..=categories)
        .map(|i| Category { code: format!("{i:02}"), name: format!("Field {i}"), parent: None })
        .collect();
    LabelTaxonomy::new(cats).expect("generated taxonomy is valid")
}

/// Documents cycle through the categories. Each carries
/// `markers_per_document` of its category's exclusive markers and
/// `topical_per_document` topical words (from its own category with
/// probability `topical_affinity`, otherwise from any category), placed at
/// random positions among Zipf-distributed background words.
pub fn planted_corpus(spec: &PlantedSpec) -> PlantedCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut used: BTreeSet<String> = FUNCTION_WORDS.iter().map(|s| s.to_string()).collect();
    let mut fresh = |rng: &mut ChaCha8Rng, syllables: usize| loop {
        let w = pseudo_word(rng, syllables);
        if used.insert(w.clone()) {
            return w;
        }
    };
    let taxonomy = planted_taxonomy(spec.categories);
    let codes = taxonomy.codes_at_level(1);
    let mut markers = BTreeMap::new();
    let mut topical = BTreeMap::new();
    let mut topics = BTreeMap::new();
    for code in &codes {
        markers.insert(code.clone(), (0..spec.markers_per_category).map(|_| fresh(&mut rng, 3)).collect::<Vec<_>>());
        topical.insert(code.clone(), (0..spec.topical_per_category).map(|_| fresh(&mut rng, 2)).collect::<Vec<_>>());
        topics.insert(code.clone(), fresh(&mut rng, 2));
    }
    let all_topical: Vec<String> = topical.values().flatten().cloned().collect();
    let mut background: Vec<String> = FUNCTION_WORDS.iter().map(|s| s.to_string()).collect();
    while background.len() < spec.background {
        let syl = if background.len().is_multiple_of(3) { 3 } else { 2 };
        background.push(fresh(&mut rng, syl));
    }
    let zipf = WeightedIndex::new((1..=background.len()).map(|r| 1.0 / r as f64)).expect("positive weights");

    let mut documents = Vec::with_capacity(spec.documents);
    for i in 0..spec.documents {
        let code = &codes[i % codes.len()];
        let own = &markers[code];
        let planted_count = spec.markers_per_document + spec.topical_per_document;
        let mut words: Vec<String> = (0..spec.words_per_document.saturating_sub(planted_count))
            .map(|_| background[zipf.sample(&mut rng)].clone())
            .collect();
        let mut planted_words = Vec::with_capacity(planted_count);
        for _ in 0..spec.markers_per_document {
            planted_words.push(own.choose(&mut rng).expect("markers exist").clone());
        }
        for _ in 0..spec.topical_per_document {
            let pool = if rng.gen_bool(spec.topical_affinity) { &topical[code] } else { &all_topical };
            if let Some(t) = pool.choose(&mut rng) {
                planted_words.push(t.clone());
            }
        }
        for w in planted_words {
            let at = rng.gen_range(0..=words.len());
            words.insert(at, w);
        }
        let split = words.len().min(6);
        documents.push(Document {
            id: format!("p{i:04}"),
            title: words[..split].join(" "),
            abstract_text: format!("{} .", words[split..].join(" ")),
            categories: [code.clone()].into(),
        });
    }
    let corpus = Corpus::new(documents, taxonomy).expect("generated corpus is valid");
    PlantedCorpus { corpus, markers, topical, background, topics }
}

fn split_subwords(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    if chars.len() <= 6 {
        return vec![word.to_string()];
    }
    let head: String = chars[..4].iter().collect();
    let tail: String = chars[4..].iter().collect();
    vec![head, format!("##{tail}")]
}

/// One record per document: `[CLS] subwords… [SEP]` with a pre-averaged
/// matrix whose columns favour special tokens and marker subwords.
pub fn planted_dumps(planted: &PlantedCorpus, seed: u64) -> Vec<AttentionRecord> {
    let markers = planted.all_markers();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    planted
        .corpus
        .documents()
        .iter()
        .map(|doc| {
            let mut tokens = vec!["[CLS]".to_string()];
            let mut word_ids = vec![None];
            let mut column = vec![3.0];
            for (w, word) in doc.text().split_whitespace().enumerate() {
                let weight = if markers.contains(word) {
                    4.0
                } else if FUNCTION_WORDS.contains(&word) || word == "." {
                    1.5
                } else {
                    1.0
                };
                for piece in split_subwords(word) {
                    tokens.push(piece);
                    word_ids.push(Some(w));
                    column.push(weight);
                }
            }
            tokens.push("[SEP]".to_string());
            word_ids.push(None);
            column.push(3.0);
            let n = tokens.len();
            let mut m = SquareMatrix::zeros(n);
            for i in 0..n {
                let row: Vec<f64> = column.iter().map(|c| c * rng.gen_range(0.8..1.2)).collect();
                let total: f64 = row.iter().sum();
                for (j, v) in row.iter().enumerate() {
                    m.set(i, j, v / total);
                }
            }
            let special = word_ids.iter().map(Option::is_none).collect();
            AttentionRecord {
                doc_id: doc.id.clone(),
                layer: 11,
                tokens,
                special,
                word_ids,
                weights: AttentionWeights::Mean(m),
                truncated: Some(false),
            }
        })
        .collect()
}

/// Edge dump (relation, start, end) linking the markers of each category to
/// its topic, partly through FormOf roots and IsA parents, plus unrelated
/// contexts for some background words.
pub fn planted_edges(planted: &PlantedCorpus) -> String {
    let mut out = String::new();
    let c = |w: &str| format!("/c/en/{w}");
    for (code, markers) in &planted.markers {
        let topic = &planted.topics[code];
        let parent = format!("{topic}field");
        let _ = writeln!(out, "/r/IsA\t{}\t{}", c(&format!("{topic}lore")), c(topic));
        for (i, m) in markers.iter().enumerate() {
            match i % 3 {
                0 => {
                    let _ = writeln!(out, "/r/HasContext\t{}\t{}", c(m), c(topic));
                }
                1 => {
                    let root = format!("{m}root");
                    let _ = writeln!(out, "/r/FormOf\t{}\t{}", c(m), c(&root));
                    let _ = writeln!(out, "/r/HasContext\t{}\t{}", c(&root), c(topic));
                }
                _ => {
                    let _ = writeln!(out, "/r/HasContext\t{}\t{}", c(m), c(&format!("{topic}lore")));
                }
            }
        }
        let _ = writeln!(out, "/r/IsA\t{}\t{}", c(topic), c(&parent));
    }
    for (i, w) in planted.background.iter().enumerate().skip(FUNCTION_WORDS.len()).step_by(7) {
        let _ = writeln!(out, "/r/HasContext\t{}\t{}", c(w), c(&format!("misc{}", i % 4)));
    }
    out
}

/// `category_code,concept_id` lines mapping each category to its topic.
pub fn planted_mapping(planted: &PlantedCorpus) -> String {
    let mut out = String::from("category_code,concept_id\n");
    for (code, topic) in &planted.topics {
        let _ = writeln!(out, "{code},/c/en/{topic}");
    }
    out
}

fn corpus_jsonl(corpus: &Corpus) -> String {
    let mut out = String::new();
    for d in corpus.documents() {
        out.push_str(&serde_json::to_string(d).expect("document serializes"));
        out.push('\n');
    }
    out
}

fn taxonomy_jsonl(taxonomy: &LabelTaxonomy) -> String {
    let mut out = String::new();
    for c in taxonomy.categories() {
        out.push_str(&serde_json::to_string(c).expect("category serializes"));
        out.push('\n');
    }
    out
}

/// Input files of a generated workspace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkspacePaths {
    pub root: PathBuf,
    pub corpus: PathBuf,
    pub taxonomy: PathBuf,
    pub dumps: PathBuf,
    pub mapping: PathBuf,
    pub edges: PathBuf,
}

impl WorkspacePaths {
    fn under(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
            corpus: root.join("corpus.jsonl"),
            taxonomy: root.join("taxonomy.jsonl"),
            dumps: root.join("dumps.jsonl"),
            mapping: root.join("mapping.csv"),
            edges: root.join("edges.tsv"),
        }
    }
}

/// Writes corpus, taxonomy, dumps, knowledge-graph edges and category
/// mapping for a planted corpus into `dir`.
pub fn write_planted_workspace(dir: impl AsRef<Path>, spec: &PlantedSpec) -> io::Result<WorkspacePaths> {
    let planted = planted_corpus(spec);
    let paths = WorkspacePaths::under(dir.as_ref());
    fs::create_dir_all(&paths.root)?;
    fs::write(&paths.corpus, corpus_jsonl(&planted.corpus))?;
    fs::write(&paths.taxonomy, taxonomy_jsonl(planted.corpus.taxonomy()))?;
    fs::write(&paths.edges, planted_edges(&planted))?;
    fs::write(&paths.mapping, planted_mapping(&planted))?;
    let records = planted_dumps(&planted, spec.seed.wrapping_add(1));
    let mut buf = Vec::new();
    write_dumps(&mut buf, &records)?;
    fs::write(&paths.dumps, buf)?;
    Ok(paths)
}

/// Three hand-built records. Expected outcome per document (word-level
/// column means against the matrix mean):
///
/// * `f1`: gene 0.2333, regulation 0.2, the 0.1, mean 0.1778, so gene and
///   regulation are attended; "regulation" is two subwords.
/// * `f2`: protein 0.2, gene 0.55, mean 0.375, so only gene.
/// * `f3`: uniform weights, nothing attended.
pub fn fixture_records() -> Vec<AttentionRecord> {
    fn rec(id: &str, tokens: &[&str], word_ids: &[Option<usize>], rows: &[Vec<f64>]) -> AttentionRecord {
        AttentionRecord {
            doc_id: id.to_string(),
            layer: 11,
            tokens: tokens.iter().map(|t| t.to_string()).collect(),
            special: word_ids.iter().map(Option::is_none).collect(),
            word_ids: word_ids.to_vec(),
            weights: AttentionWeights::Mean(SquareMatrix::from_rows(rows).expect("square")),
            truncated: Some(false),
        }
    }
    vec![
        rec(
            "f1",
            &["[CLS]", "gene", "regul", "##ation", "the", "[SEP]"],
            &[None, Some(0), Some(1), Some(1), Some(2), None],
            &[
                vec![0.30, 0.10, 0.20, 0.20, 0.05, 0.15],
                vec![0.10, 0.30, 0.20, 0.20, 0.10, 0.10],
                vec![0.10, 0.20, 0.25, 0.25, 0.10, 0.10],
                vec![0.10, 0.20, 0.25, 0.25, 0.10, 0.10],
                vec![0.20, 0.20, 0.15, 0.15, 0.10, 0.20],
                vec![0.30, 0.20, 0.10, 0.10, 0.10, 0.20],
            ],
        ),
        rec(
            "f2",
            &["[CLS]", "protein", "gene", "[SEP]"],
            &[None, Some(0), Some(1), None],
            &[
                vec![0.50, 0.10, 0.30, 0.10],
                vec![0.20, 0.20, 0.50, 0.10],
                vec![0.10, 0.20, 0.60, 0.10],
                vec![0.40, 0.10, 0.30, 0.20],
            ],
        ),
        rec("f3", &["[CLS]", "cell", "gene", "protein", "[SEP]"], &[None, Some(0), Some(1), Some(2), None], &vec![vec![0.2; 5]; 5]),
    ]
}

/// Corpus matching [`fixture_records`], with two categories.
pub fn fixture_corpus() -> Corpus {
    let taxonomy = planted_taxonomy(2);
    let doc = |id: &str, title: &str, abs: &str, cat: &str| Document {
        id: id.into(),
        title: title.into(),
        abstract_text: abs.into(),
        categories: [cat.to_string()].into(),
    };
    Corpus::new(
        vec![
            doc("f1", "gene", "regulation the", "01"),
            doc("f2", "protein", "gene", "01"),
            doc("f3", "cell", "gene protein", "02"),
        ],
        taxonomy,
    )
    .expect("fixture corpus is valid")
}

/// Writes the fixture corpus, taxonomy and dumps into `dir`.
pub fn write_fixture_workspace(dir: impl AsRef<Path>) -> io::Result<WorkspacePaths> {
    let paths = WorkspacePaths::under(dir.as_ref());
    fs::create_dir_all(&paths.root)?;
    let corpus = fixture_corpus();
    fs::write(&paths.corpus, corpus_jsonl(&corpus))?;
    fs::write(&paths.taxonomy, taxonomy_jsonl(corpus.taxonomy()))?;
    let mut buf = Vec::new();
    write_dumps(&mut buf, &fixture_records())?;
    fs::write(&paths.dumps, buf)?;
    fs::write(&paths.edges, "/r/HasContext\t/c/en/gene\t/c/en/biology\n")?;
    fs::write(&paths.mapping, "01,/c/en/biology\n02,/c/en/biology\n")?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{aggregate_attention, load_dumps};
    use crate::corpus::{load_corpus, TokenizationPolicy};

    fn small() -> PlantedSpec {
        PlantedSpec { documents: 50, ..Default::default() }
    }

    #[test]
    fn planted_is_deterministic_and_balanced() {
        let a = planted_corpus(&small());
        let b = planted_corpus(&small());
        assert_eq!(a.corpus.documents(), b.corpus.documents());
        assert_eq!(a.markers.len(), 5);
        assert_eq!(a.all_markers().len(), 25);
        for code in a.markers.keys() {
            assert_eq!(a.corpus.documents().iter().filter(|d| d.categories.contains(code)).count(), 10);
        }
        let other = planted_corpus(&PlantedSpec { seed: 8, ..small() });
        assert_ne!(a.corpus.documents(), other.corpus.documents());
    }

    #[test]
    fn markers_are_exclusive() {
        let p = planted_corpus(&small());
        for d in p.corpus.documents() {
            let code = d.categories.iter().next().unwrap();
            let text = d.text();
            let words: BTreeSet<&str> = text.split_whitespace().collect();
            for (other, ms) in &p.markers {
                let hits = ms.iter().filter(|m| words.contains(m.as_str())).count();
                if other == code {
                    assert!(hits >= 1);
                } else {
                    assert_eq!(hits, 0);
                }
            }
        }
    }

    #[test]
    fn planted_dumps_validate_and_favour_markers() {
        let p = planted_corpus(&small());
        let recs = planted_dumps(&p, 1);
        assert_eq!(recs.len(), 50);
        for r in &recs {
            r.validate().unwrap();
        }
        let av = aggregate_attention(&recs, &TokenizationPolicy::english()).unwrap();
        let top: BTreeSet<String> = av.ranking.top_set(25);
        assert!(p.all_markers().iter().filter(|m| top.contains(*m)).count() >= 20);
    }

    #[test]
    fn fixture_records_validate() {
        for r in fixture_records() {
            r.validate().unwrap();
        }
        assert_eq!(fixture_corpus().len(), 3);
    }

    #[test]
    fn workspace_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let paths = write_planted_workspace(dir.path(), &small()).unwrap();
        let tax = LabelTaxonomy::load(&paths.taxonomy).unwrap();
        let corpus = load_corpus(&paths.corpus, tax).unwrap();
        assert_eq!(corpus.len(), 50);
        assert_eq!(load_dumps(&paths.dumps).unwrap().len(), 50);
        let g = crate::domainrel::MemoryGraph::load_edge_dump(&paths.edges).unwrap();
        assert!(g.edge_count() > 0);
        let m = crate::domainrel::ConceptMapping::load(&paths.mapping).unwrap();
        assert_eq!(m.categories().count(), 5);
    }
}
