//! Multilabel classifiers trained from scratch on selected feature sets.
//!
//! Both models are one-vs-rest and linear in the feature vector: multinomial
//! Naive Bayes (log-odds form) and L2-regularized logistic regression fitted
//! by full-batch gradient descent. [`cross_validate`] re-derives every
//! feature set on the training split of each fold before training.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::{reduce_documents, DocumentAttention};
use crate::corpus::{tokenize, Corpus, FoldAssignment, TokenizationPolicy, Vocabulary};
use crate::featsel::{FeatureScorer, Method, MethodTag, TermRanking};
use crate::format::sig;
use crate::par;

#[derive(Debug, Error, PartialEq)]
pub enum ClassifyError {
    #[error("empty training set")]
    EmptyTraining,
    #[error("fold {0} has no test documents")]
    EmptyFold(usize),
    #[error("dimension mismatch: model has {expected} features, vector has {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("duplicate feature term {0:?}")]
    DuplicateTerm(String),
    #[error("loss became non-finite at epoch {epoch}; lower the step size")]
    Diverged { epoch: usize },
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error("attention source lacks records for the training split of fold {0}")]
    NoAttention(usize),
    #[error("unknown model kind {0:?}")]
    UnknownModel(String),
    #[error("unknown feature weighting {0:?}")]
    UnknownWeighting(String),
}

pub type Result<T> = std::result::Result<T, ClassifyError>;

/// How feature values are derived from term counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureWeighting {
    Binary,
    Tf,
    Tfidf,
}

impl FeatureWeighting {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureWeighting::Binary => "binary",
            FeatureWeighting::Tf => "tf",
            FeatureWeighting::Tfidf => "tfidf",
        }
    }
}

impl fmt::Display for FeatureWeighting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureWeighting {
    type Err = ClassifyError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(Self::Binary),
            "tf" => Ok(Self::Tf),
            "tfidf" | "tf-idf" => Ok(Self::Tfidf),
            _ => Err(ClassifyError::UnknownWeighting(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "nb")]
    NaiveBayes,
    #[serde(rename = "lr")]
    LogisticRegression,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::NaiveBayes => "nb",
            ModelKind::LogisticRegression => "lr",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = ClassifyError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nb" | "naive-bayes" => Ok(Self::NaiveBayes),
            "lr" | "logistic-regression" => Ok(Self::LogisticRegression),
            _ => Err(ClassifyError::UnknownModel(s.to_string())),
        }
    }
}

/// Training settings shared by both model kinds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparameters {
    /// Laplace smoothing for Naive Bayes.
    pub alpha: f64,
    /// L2 penalty for logistic regression.
    pub l2: f64,
    pub step: f64,
    pub epochs: usize,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self { alpha: 1.0, l2: 1e-4, step: 0.1, epochs: 300 }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(ClassifyError::InvalidHyperparameter(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(ClassifyError::InvalidHyperparameter(format!("l2 must be non-negative, got {}", self.l2)));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(ClassifyError::InvalidHyperparameter(format!("step must be positive, got {}", self.step)));
        }
        Ok(())
    }
}

/// Ordered feature terms plus the value scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSpace {
    terms: Vec<String>,
    index: HashMap<String, usize>,
    pub weighting: FeatureWeighting,
}

impl FeatureSpace {
    pub fn new(terms: Vec<String>, weighting: FeatureWeighting) -> Result<Self> {
        let mut index = HashMap::with_capacity(terms.len());
        for (i, t) in terms.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(ClassifyError::DuplicateTerm(t.clone()));
            }
        }
        Ok(Self { terms, index, weighting })
    }

    /// The first `k` terms of `ranking`.
    pub fn from_ranking(ranking: &TermRanking, k: usize, weighting: FeatureWeighting) -> Self {
        Self::new(ranking.truncated(k).term_list(), weighting).expect("rankings hold unique terms")
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn position(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }
}

/// Document-frequency statistics for tf-idf, taken from training documents.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusStats {
    pub documents: usize,
    df: HashMap<String, usize>,
}

impl CorpusStats {
    pub fn from_vocabulary(vocab: &Vocabulary) -> Self {
        Self { documents: vocab.doc_count(), df: vocab.iter().map(|(t, s)| (t.to_string(), s.df())).collect() }
    }

    pub fn df(&self, term: &str) -> usize {
        self.df.get(term).copied().unwrap_or(0)
    }

    /// `ln(N / df)`; zero for terms unseen in training.
    pub fn idf(&self, term: &str) -> f64 {
        match self.df(term) {
            0 => 0.0,
            df => (self.documents as f64 / df as f64).ln(),
        }
    }
}

/// Sparse vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVector {
    pub dim: usize,
    pub entries: Vec<(usize, f64)>,
}

impl SparseVector {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, entries: Vec::new() }
    }

    pub fn from_dense(values: &[f64]) -> Self {
        let entries = values.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, v)| (i, *v)).collect();
        Self { dim: values.len(), entries }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(i, v) in &self.entries {
            out[i] = v;
        }
        out
    }

    pub fn get(&self, i: usize) -> f64 {
        self.entries.binary_search_by_key(&i, |e| e.0).map_or(0.0, |p| self.entries[p].1)
    }

    pub fn dot(&self, weights: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, v)| weights[i] * v).sum()
    }

}

/// Feature vector of one document given its term counts.
pub fn vectorize_counts(counts: &BTreeMap<String, u32>, space: &FeatureSpace, stats: &CorpusStats) -> SparseVector {
    let mut entries: Vec<(usize, f64)> = counts
        .iter()
        .filter_map(|(t, &c)| {
            let i = space.position(t)?;
            let v = match space.weighting {
                FeatureWeighting::Binary => 1.0,
                FeatureWeighting::Tf => f64::from(c),
                FeatureWeighting::Tfidf => f64::from(c) * stats.idf(t),
            };
            (v != 0.0).then_some((i, v))
        })
        .collect();
    entries.sort_by_key(|e| e.0);
    SparseVector { dim: space.len(), entries }
}

/// Tokenizes `text` and vectorizes it.
pub fn vectorize(text: &str, policy: &TokenizationPolicy, space: &FeatureSpace, stats: &CorpusStats) -> SparseVector {
    let mut counts = BTreeMap::new();
    for t in tokenize(text, policy) {
        *counts.entry(t).or_insert(0u32) += 1;
    }
    vectorize_counts(&counts, space, stats)
}

/// One linear scorer per category: `p = sigmoid(w · x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub kind: ModelKind,
    pub categories: Vec<String>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    pub hyper: Hyperparameters,
}

impl LinearModel {
    pub fn dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Independent per-category probabilities.
pub fn predict(model: &LinearModel, x: &SparseVector) -> Result<Vec<f64>> {
    if x.dim != model.dim() {
        return Err(ClassifyError::DimensionMismatch { expected: model.dim(), found: x.dim });
    }
    Ok(model.weights.iter().zip(&model.biases).map(|(w, b)| sigmoid(x.dot(w) + b)).collect())
}

/// Category labels with probability at least 0.5.
pub fn predict_labels(model: &LinearModel, x: &SparseVector) -> Result<Vec<bool>> {
    Ok(predict(model, x)?.into_iter().map(|p| p >= 0.5).collect())
}

fn check_training(xs: &[SparseVector], labels: &[Vec<bool>], dim: usize) -> Result<()> {
    if xs.is_empty() {
        return Err(ClassifyError::EmptyTraining);
    }
    assert_eq!(xs.len(), labels.len(), "one label row per document");
    if let Some(x) = xs.iter().find(|x| x.dim != dim) {
        return Err(ClassifyError::DimensionMismatch { expected: dim, found: x.dim });
    }
    Ok(())
}

/// One-vs-rest multinomial Naive Bayes. `labels[d][c]` marks document `d` as
/// a member of category `c`.
///
/// The per-category score is the posterior log-odds
/// `ln P(c)/P(¬c) + Σ_j x_j ln(θ_cj / θ_¬cj)` with Laplace-smoothed term
/// distributions, so `sigmoid(score)` is the exact two-class posterior.
/// A category without positive (or without negative) training documents
/// gets zero weights and a bias from the smoothed prior.
pub fn train_nb(
    xs: &[SparseVector],
    labels: &[Vec<bool>],
    categories: &[String],
    dim: usize,
    hyper: &Hyperparameters,
) -> Result<LinearModel> {
    hyper.validate()?;
    check_training(xs, labels, dim)?;
    let alpha = hyper.alpha;
    let n = xs.len() as f64;
    let fitted = par::map_range(categories.len(), |c| {
        let mut pos = vec![0.0; dim];
        let mut neg = vec![0.0; dim];
        let mut n_pos = 0usize;
        for (x, y) in xs.iter().zip(labels) {
            let acc = if y[c] {
                n_pos += 1;
                &mut pos
            } else {
                &mut neg
            };
            for &(i, v) in &x.entries {
                acc[i] += v;
            }
        }
        let n_neg = xs.len() - n_pos;
        if n_pos == 0 || n_neg == 0 {
            let prior = ((n + alpha) / alpha).ln();
            return (vec![0.0; dim], if n_pos == 0 { -prior } else { prior });
        }
        let total_pos: f64 = pos.iter().sum::<f64>() + alpha * dim as f64;
        let total_neg: f64 = neg.iter().sum::<f64>() + alpha * dim as f64;
        let w = pos
            .iter()
            .zip(&neg)
            .map(|(p, q)| ((p + alpha) / total_pos).ln() - ((q + alpha) / total_neg).ln())
            .collect();
        (w, (n_pos as f64 / n_neg as f64).ln())
    });
    let (weights, biases) = fitted.into_iter().unzip();
    Ok(LinearModel {
        kind: ModelKind::NaiveBayes,
        categories: categories.to_vec(),
        weights,
        biases,
        hyper: *hyper,
    })
}

/// Mean log loss plus `l2 / 2 · ‖w‖²` of one binary problem, with its
/// gradient in `w` and in the (unpenalized) bias.
pub fn logreg_loss_and_grad(xs: &[SparseVector], ys: &[bool], w: &[f64], b: f64, l2: f64) -> (f64, Vec<f64>, f64) {
    let n = xs.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; w.len()];
    let mut grad_b = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let z = x.dot(w) + b;
        loss += softplus(z) - if y { z } else { 0.0 };
        let r = sigmoid(z) - if y { 1.0 } else { 0.0 };
        for &(i, v) in &x.entries {
            grad[i] += r * v;
        }
        grad_b += r;
    }
    let reg: f64 = w.iter().map(|v| v * v).sum::<f64>();
    for (g, wi) in grad.iter_mut().zip(w) {
        *g = *g / n + l2 * wi;
    }
    (loss / n + 0.5 * l2 * reg, grad, grad_b / n)
}

/// Fitted binary problem plus the loss before every update and after the
/// last one.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryFit {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub losses: Vec<f64>,
}

/// Full-batch gradient descent from zero for one category.
pub fn fit_logreg_binary(xs: &[SparseVector], ys: &[bool], dim: usize, hyper: &Hyperparameters) -> Result<BinaryFit> {
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut losses = Vec::with_capacity(hyper.epochs + 1);
    for epoch in 0..=hyper.epochs {
        let (loss, g, gb) = logreg_loss_and_grad(xs, ys, &w, b, hyper.l2);
        if !loss.is_finite() {
            return Err(ClassifyError::Diverged { epoch });
        }
        losses.push(loss);
        if epoch == hyper.epochs {
            break;
        }
        for (wi, gi) in w.iter_mut().zip(&g) {
            *wi -= hyper.step * gi;
        }
        b -= hyper.step * gb;
    }
    Ok(BinaryFit { weights: w, bias: b, losses })
}

/// One-vs-rest logistic regression on the raw feature values.
pub fn train_logreg(
    xs: &[SparseVector],
    labels: &[Vec<bool>],
    categories: &[String],
    dim: usize,
    hyper: &Hyperparameters,
) -> Result<LinearModel> {
    hyper.validate()?;
    check_training(xs, labels, dim)?;
    let fits = par::map_range(categories.len(), |c| {
        let ys: Vec<bool> = labels.iter().map(|l| l[c]).collect();
        fit_logreg_binary(xs, &ys, dim, hyper)
    });
    let mut weights = Vec::with_capacity(categories.len());
    let mut biases = Vec::with_capacity(categories.len());
    for f in fits {
        let f = f?;
        weights.push(f.weights);
        biases.push(f.bias);
    }
    Ok(LinearModel {
        kind: ModelKind::LogisticRegression,
        categories: categories.to_vec(),
        weights,
        biases,
        hyper: *hyper,
    })
}

pub fn train(
    kind: ModelKind,
    xs: &[SparseVector],
    labels: &[Vec<bool>],
    categories: &[String],
    dim: usize,
    hyper: &Hyperparameters,
) -> Result<LinearModel> {
    match kind {
        ModelKind::NaiveBayes => train_nb(xs, labels, categories, dim, hyper),
        ModelKind::LogisticRegression => train_logreg(xs, labels, categories, dim, hyper),
    }
}

/// Pooled decision counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Counts {
    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn add(&mut self, other: &Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }

    pub fn precision(&self) -> f64 {
        frac(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        frac(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        f1(self.precision(), self.recall())
    }
}

fn frac(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Counts per category from predictions against gold labels.
pub fn evaluate(predicted: &[Vec<bool>], gold: &[Vec<bool>], categories: usize) -> Vec<Counts> {
    let mut per = vec![Counts::default(); categories];
    for (p, g) in predicted.iter().zip(gold) {
        for c in 0..categories {
            per[c].record(p[c], g[c]);
        }
    }
    per
}

/// Where the feature terms of a configuration come from.
#[derive(Debug, Clone)]
pub enum FeatureSource {
    /// The same ranking in every fold.
    Fixed(TermRanking),
    /// A selector re-run on each training split.
    Selector(Method),
    /// Attention summaries; each fold ranks the training documents' summaries.
    Attention(Vec<DocumentAttention>),
}

/// A named feature source.
#[derive(Debug, Clone)]
pub struct FeatureSet {
    pub tag: MethodTag,
    pub source: FeatureSource,
}

/// Grid of configurations evaluated by [`cross_validate`].
#[derive(Debug, Clone)]
pub struct CvPlan {
    pub sets: Vec<FeatureSet>,
    pub ks: Vec<usize>,
    pub weightings: Vec<FeatureWeighting>,
    pub kinds: Vec<ModelKind>,
    pub hyper: Hyperparameters,
    pub level: u8,
}

/// One evaluated configuration on one fold (`fold = None` for the pooled
/// row).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub feature_method: MethodTag,
    pub k: usize,
    pub weighting: FeatureWeighting,
    pub model: ModelKind,
    pub fold: Option<usize>,
    /// Features actually available (rankings may be shorter than `k`).
    pub features: usize,
    pub per_category: Vec<Counts>,
}

impl EvalRow {
    pub fn micro(&self) -> Counts {
        let mut all = Counts::default();
        for c in &self.per_category {
            all.add(c);
        }
        all
    }

    pub fn precision(&self) -> f64 {
        self.micro().precision()
    }

    pub fn recall(&self) -> f64 {
        self.micro().recall()
    }

    pub fn f1(&self) -> f64 {
        self.micro().f1()
    }

    /// Unweighted mean of per-category F1.
    pub fn macro_f1(&self) -> f64 {
        if self.per_category.is_empty() {
            return 0.0;
        }
        self.per_category.iter().map(Counts::f1).sum::<f64>() / self.per_category.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub categories: Vec<String>,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn pooled(&self) -> impl Iterator<Item = &EvalRow> {
        self.rows.iter().filter(|r| r.fold.is_none())
    }

    pub fn find(&self, tag: MethodTag, k: usize, weighting: FeatureWeighting, model: ModelKind) -> Option<&EvalRow> {
        self.pooled().find(|r| r.feature_method == tag && r.k == k && r.weighting == weighting && r.model == model)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("feature_method\tk\tweighting\tmodel\tfold\tprecision\trecall\tf1\tmacro_f1\n");
        for r in &self.rows {
            let fold = r.fold.map_or_else(|| "all".to_string(), |f| f.to_string());
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                r.feature_method,
                r.k,
                r.weighting,
                r.model,
                fold,
                sig(r.precision(), 10),
                sig(r.recall(), 10),
                sig(r.f1(), 10),
                sig(r.macro_f1(), 10)
            ));
        }
        out
    }

    /// `method,weighting,model,k,f1` over pooled rows.
    pub fn series_csv(&self) -> String {
        let mut out = String::from("method,weighting,model,k,f1\n");
        for r in self.pooled() {
            out.push_str(&format!("{},{},{},{},{}\n", r.feature_method, r.weighting, r.model, r.k, sig(r.f1(), 10)));
        }
        out
    }
}

/// Ranking of one feature source on the training split of `fold`.
#[allow(clippy::too_many_arguments)]
pub fn fold_ranking(
    source: &FeatureSource,
    tag: MethodTag,
    corpus: &Corpus,
    vocab: &Vocabulary,
    folds: &FoldAssignment,
    fold: usize,
    level: u8,
    policy: &TokenizationPolicy,
) -> Result<TermRanking> {
    let train = folds.train_indices(fold);
    let ranking = match source {
        FeatureSource::Fixed(r) => r.clone(),
        FeatureSource::Selector(method) => {
            let sub = corpus.subset(&train).map_err(|_| ClassifyError::EmptyTraining)?;
            let sub_vocab = vocab.subset(&train);
            FeatureScorer::new(&sub, &sub_vocab, level).rank(*method, policy)
        }
        FeatureSource::Attention(docs) => {
            let in_train: Vec<DocumentAttention> =
                docs.iter().filter(|d| folds.fold_of(&d.doc_id).is_some_and(|f| f != fold)).cloned().collect();
            reduce_documents(&in_train).map_err(|_| ClassifyError::NoAttention(fold))?.content_ranking(policy)
        }
    };
    Ok(ranking.with_tag(tag))
}

/// K-fold evaluation of every configuration in `plan`. Feature rankings and
/// tf-idf statistics come from the training split only.
pub fn cross_validate(
    corpus: &Corpus,
    vocab: &Vocabulary,
    folds: &FoldAssignment,
    plan: &CvPlan,
    policy: &TokenizationPolicy,
) -> Result<EvalReport> {
    plan.hyper.validate()?;
    let k_folds = folds.k();
    for f in 0..k_folds {
        if folds.test_indices(f).is_empty() {
            return Err(ClassifyError::EmptyFold(f));
        }
    }
    let categories = corpus.active_categories(plan.level);
    let gold: Vec<Vec<bool>> = (0..corpus.len())
        .map(|d| {
            let labels = corpus.labels(d, plan.level);
            categories.iter().map(|c| labels.contains(c)).collect()
        })
        .collect();

    // rankings[set][fold]
    let n_sets = plan.sets.len();
    let rankings = par::map_range(n_sets * k_folds, |j| {
        let set = &plan.sets[j / k_folds];
        fold_ranking(&set.source, set.tag, corpus, vocab, folds, j % k_folds, plan.level, policy)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let stats: Vec<CorpusStats> =
        par::map_range(k_folds, |f| CorpusStats::from_vocabulary(&vocab.subset(&folds.train_indices(f))));

    let mut jobs = Vec::new();
    for s in 0..n_sets {
        for &k in &plan.ks {
            for &weighting in &plan.weightings {
                for &kind in &plan.kinds {
                    for fold in 0..k_folds {
                        jobs.push((s, k, weighting, kind, fold));
                    }
                }
            }
        }
    }
    let results = par::map(&jobs, |&(s, k, weighting, kind, fold)| -> Result<EvalRow> {
        let space = FeatureSpace::from_ranking(&rankings[s * k_folds + fold], k, weighting);
        let vec_of = |d: usize| vectorize_counts(vocab.doc_terms(d), &space, &stats[fold]);
        let train_docs = folds.train_indices(fold);
        let test = folds.test_indices(fold);
        let xs: Vec<SparseVector> = train_docs.iter().map(|&d| vec_of(d)).collect();
        let ys: Vec<Vec<bool>> = train_docs.iter().map(|&d| gold[d].clone()).collect();
        let model = train(kind, &xs, &ys, &categories, space.len(), &plan.hyper)?;
        let mut per = vec![Counts::default(); categories.len()];
        for &d in &test {
            let p = predict(&model, &vec_of(d))?;
            for c in 0..categories.len() {
                per[c].record(p[c] >= 0.5, gold[d][c]);
            }
        }
        Ok(EvalRow {
            feature_method: plan.sets[s].tag,
            k,
            weighting,
            model: kind,
            fold: Some(fold),
            features: space.len(),
            per_category: per,
        })
    });

    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(results.len() + results.len() / k_folds.max(1));
    for chunk in results.chunks(k_folds) {
        let mut pooled = chunk[0].clone();
        pooled.fold = None;
        pooled.features = chunk.iter().map(|r| r.features).max().unwrap_or(0);
        for r in &chunk[1..] {
            for (a, b) in pooled.per_category.iter_mut().zip(&r.per_category) {
                a.add(b);
            }
        }
        rows.extend_from_slice(chunk);
        rows.push(pooled);
    }
    Ok(EvalReport { categories, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cats(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    fn space(terms: &[&str], w: FeatureWeighting) -> FeatureSpace {
        FeatureSpace::new(terms.iter().map(|s| s.to_string()).collect(), w).unwrap()
    }

    fn counts(pairs: &[(&str, u32)]) -> BTreeMap<String, u32> {
        pairs.iter().map(|(t, c)| (t.to_string(), *c)).collect()
    }

    fn stats(n: usize, df: &[(&str, usize)]) -> CorpusStats {
        CorpusStats { documents: n, df: df.iter().map(|(t, d)| (t.to_string(), *d)).collect() }
    }

    #[test]
    fn vectorize_examples() {
        let s = space(&["gene", "cell"], FeatureWeighting::Binary);
        let st = stats(10, &[("gene", 2), ("cell", 5)]);
        assert!(vectorize_counts(&counts(&[("star", 3)]), &s, &st).entries.is_empty());
        assert_eq!(vectorize_counts(&counts(&[("gene", 5)]), &s, &st).get(0), 1.0);
        let tfidf = space(&["gene", "cell"], FeatureWeighting::Tfidf);
        let v = vectorize_counts(&counts(&[("gene", 3), ("cell", 1), ("x", 9)]), &tfidf, &st);
        assert!((v.get(0) - 3.0 * 5f64.ln()).abs() < 1e-12);
        assert!((v.get(1) - 2f64.ln()).abs() < 1e-12);
        let tf = space(&["gene", "cell"], FeatureWeighting::Tf);
        assert_eq!(vectorize_counts(&counts(&[("cell", 4)]), &tf, &st).to_dense(), vec![0.0, 4.0]);
    }

    #[test]
    fn vectorize_text_tokenizes() {
        let s = space(&["gene"], FeatureWeighting::Tf);
        let v = vectorize("Gene gene GENE cells", &TokenizationPolicy::english(), &s, &stats(1, &[]));
        assert_eq!(v.to_dense(), vec![3.0]);
    }

    #[test]
    fn duplicate_terms_rejected() {
        assert_eq!(
            FeatureSpace::new(vec!["a".into(), "a".into()], FeatureWeighting::Tf),
            Err(ClassifyError::DuplicateTerm("a".into()))
        );
    }

    #[test]
    fn predict_examples() {
        let m = LinearModel {
            kind: ModelKind::LogisticRegression,
            categories: cats(3),
            weights: vec![vec![0.0; 2]; 3],
            biases: vec![0.0; 3],
            hyper: Hyperparameters::default(),
        };
        assert_eq!(predict(&m, &SparseVector::zeros(2)).unwrap(), vec![0.5; 3]);
        assert_eq!(
            predict(&m, &SparseVector::zeros(3)),
            Err(ClassifyError::DimensionMismatch { expected: 2, found: 3 })
        );
        let m = LinearModel { weights: vec![vec![1.5, -2.0]], biases: vec![0.25], categories: cats(1), ..m };
        let p = predict(&m, &SparseVector::from_dense(&[2.0, 1.0])).unwrap()[0];
        // 1.5*2 - 2*1 + 0.25 = 1.25
        assert!((p - 1.0 / (1.0 + (-1.25f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_and_softplus_extremes() {
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert!((softplus(1000.0) - 1000.0).abs() < 1e-12);
        assert!(softplus(-1000.0) >= 0.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }

    fn separable() -> (Vec<SparseVector>, Vec<Vec<bool>>) {
        // term 0 marks class 0, term 1 marks class 1
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..10 {
            let first = i % 2 == 0;
            xs.push(SparseVector::from_dense(if first { &[2.0, 0.0] } else { &[0.0, 3.0] }));
            ys.push(vec![first, !first]);
        }
        (xs, ys)
    }

    #[test]
    fn nb_separable() {
        let (xs, ys) = separable();
        let m = train_nb(&xs, &ys, &cats(2), 2, &Hyperparameters::default()).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            assert_eq!(&predict_labels(&m, x).unwrap(), y);
        }
    }

    #[test]
    fn nb_prior_collapse() {
        let xs: Vec<SparseVector> = (0..6).map(|i| SparseVector::from_dense(&[i as f64, 1.0])).collect();
        let ys = vec![vec![true, false]; 6];
        let m = train_nb(&xs, &ys, &cats(2), 2, &Hyperparameters::default()).unwrap();
        assert_eq!(m.weights, vec![vec![0.0; 2]; 2]);
        for x in &xs {
            assert_eq!(predict_labels(&m, x).unwrap(), vec![true, false]);
        }
        assert!((m.biases[0] - 7f64.ln()).abs() < 1e-12);
        assert_eq!(train_nb(&[], &[], &cats(1), 2, &Hyperparameters::default()), Err(ClassifyError::EmptyTraining));
    }

    /// Posterior by Bayes' rule over the two class-conditional multinomials,
    /// computed in probability space.
    fn bayes_oracle(xs: &[Vec<f64>], ys: &[bool], alpha: f64, x: &[f64]) -> f64 {
        let dim = x.len();
        let mut joint = [0.0; 2];
        for (cls, slot) in joint.iter_mut().enumerate() {
            let member = |y: bool| (y as usize) == 1 - cls;
            let docs: Vec<&Vec<f64>> = xs.iter().zip(ys).filter(|(_, &y)| member(y)).map(|(x, _)| x).collect();
            let prior = docs.len() as f64 / xs.len() as f64;
            let mut totals = vec![alpha; dim];
            for d in &docs {
                for j in 0..dim {
                    totals[j] += d[j];
                }
            }
            let sum: f64 = totals.iter().sum();
            let mut lik = 1.0;
            for j in 0..dim {
                lik *= (totals[j] / sum).powf(x[j]);
            }
            *slot = prior * lik;
        }
        joint[0] / (joint[0] + joint[1])
    }

    #[test]
    fn nb_matches_bayes_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let dense: Vec<Vec<f64>> = (0..20).map(|_| (0..4).map(|_| rng.gen_range(0..4) as f64).collect()).collect();
        let ys: Vec<bool> = (0..20).map(|i| i % 3 == 0).collect();
        let xs: Vec<SparseVector> = dense.iter().map(|d| SparseVector::from_dense(d)).collect();
        let labels: Vec<Vec<bool>> = ys.iter().map(|&y| vec![y]).collect();
        let hyper = Hyperparameters { alpha: 0.5, ..Default::default() };
        let m = train_nb(&xs, &labels, &cats(1), 4, &hyper).unwrap();
        for (x, d) in xs.iter().zip(&dense) {
            let p = predict(&m, x).unwrap()[0];
            assert!((p - bayes_oracle(&dense, &ys, 0.5, d)).abs() < 1e-9);
        }
    }

    #[test]
    fn nb_doubled_training_keeps_decisions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<SparseVector> =
            (0..30).map(|_| SparseVector::from_dense(&(0..5).map(|_| rng.gen_range(0..3) as f64).collect::<Vec<_>>())).collect();
        let ys: Vec<Vec<bool>> = (0..30).map(|i| vec![i % 4 == 0, i % 3 == 0]).collect();
        let hyper = Hyperparameters::default();
        let once = train_nb(&xs, &ys, &cats(2), 5, &hyper).unwrap();
        let xs2: Vec<SparseVector> = xs.iter().chain(&xs).cloned().collect();
        let ys2: Vec<Vec<bool>> = ys.iter().chain(&ys).cloned().collect();
        let twice = train_nb(&xs2, &ys2, &cats(2), 5, &Hyperparameters { alpha: 2.0, ..hyper }).unwrap();
        // doubling counts and alpha leaves every θ and the prior unchanged
        for x in &xs {
            let a = predict(&once, x).unwrap();
            let b = predict(&twice, x).unwrap();
            for (p, q) in a.iter().zip(&b) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn logreg_separable() {
        let (xs, ys) = separable();
        let hyper = Hyperparameters { epochs: 200, step: 1.0, ..Default::default() };
        let m = train_logreg(&xs, &ys, &cats(2), 2, &hyper).unwrap();
        let pred: Vec<Vec<bool>> = xs.iter().map(|x| predict_labels(&m, x).unwrap()).collect();
        let per = evaluate(&pred, &ys, 2);
        let mut all = Counts::default();
        per.iter().for_each(|c| all.add(c));
        assert_eq!(all.f1(), 1.0);
    }

    #[test]
    fn logreg_heavy_penalty_shrinks_to_prior() {
        let (xs, mut ys) = separable();
        ys.iter_mut().take(8).for_each(|y| y[0] = true);
        let hyper = Hyperparameters { l2: 1e4, step: 1e-4, epochs: 3000, ..Default::default() };
        let m = train_logreg(&xs, &ys, &cats(2), 2, &hyper).unwrap();
        assert!(m.weights[0].iter().all(|w| w.abs() < 1e-3));
        // bias heads towards the base-rate logit ln(9/1)
        assert!(m.biases[0] > 0.0);
    }

    #[test]
    fn logreg_loss_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<SparseVector> = (0..40)
            .map(|_| SparseVector::from_dense(&(0..6).map(|_| rng.gen_range(0.0..2.0)).collect::<Vec<_>>()))
            .collect();
        let ys: Vec<bool> = xs.iter().map(|x| x.get(0) + 0.3 * rng.gen_range(-1.0..1.0) > 0.4).collect();
        let fit = fit_logreg_binary(&xs, &ys, 6, &Hyperparameters::default()).unwrap();
        for w in fit.losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
        assert!(fit.losses.last().unwrap() < &fit.losses[0]);
    }

    #[test]
    fn logreg_divergence_is_an_error() {
        let xs = vec![SparseVector::from_dense(&[1e200]), SparseVector::from_dense(&[-1e200])];
        let ys = vec![true, false];
        let hyper = Hyperparameters { step: 1e200, epochs: 5, ..Default::default() };
        assert!(matches!(fit_logreg_binary(&xs, &ys, 1, &hyper), Err(ClassifyError::Diverged { .. })));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xs: Vec<SparseVector> =
            (0..15).map(|_| SparseVector::from_dense(&(0..4).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>())).collect();
        let ys: Vec<bool> = (0..15).map(|_| rng.gen_bool(0.4)).collect();
        let w: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let b = 0.3;
        let (_, g, gb) = logreg_loss_and_grad(&xs, &ys, &w, b, 0.1);
        let h = 1e-6;
        for j in 0..4 {
            let mut up = w.clone();
            let mut down = w.clone();
            up[j] += h;
            down[j] -= h;
            let num = (logreg_loss_and_grad(&xs, &ys, &up, b, 0.1).0 - logreg_loss_and_grad(&xs, &ys, &down, b, 0.1).0) / (2.0 * h);
            assert!((num - g[j]).abs() <= 1e-4 * g[j].abs().max(1e-6));
        }
        let num_b = (logreg_loss_and_grad(&xs, &ys, &w, b + h, 0.1).0 - logreg_loss_and_grad(&xs, &ys, &w, b - h, 0.1).0) / (2.0 * h);
        assert!((num_b - gb).abs() <= 1e-4 * gb.abs().max(1e-6));
    }

    #[test]
    fn counts_examples() {
        let gold = vec![vec![true, true]; 4];
        let perfect = evaluate(&gold, &gold, 2);
        assert!(perfect.iter().all(|c| c.f1() == 1.0));
        let negative = evaluate(&vec![vec![false, false]; 4], &gold, 2);
        assert!(negative.iter().all(|c| c.recall() == 0.0 && c.f1() == 0.0));
    }

    proptest! {
        #[test]
        fn f1_consistent(tp in 0u64..50, fp in 0u64..50, fn_ in 0u64..50) {
            let c = Counts { tp, fp, fn_, tn: 0 };
            let (p, r, f) = (c.precision(), c.recall(), c.f1());
            prop_assert!((0.0..=1.0).contains(&p) && (0.0..=1.0).contains(&r) && (0.0..=1.0).contains(&f));
            if p + r > 0.0 {
                prop_assert!((f - 2.0 * p * r / (p + r)).abs() < 1e-9);
            }
        }

        #[test]
        fn predictions_invariant_to_column_order(
            w in prop::collection::vec(-3.0f64..3.0, 5),
            x in prop::collection::vec(0.0f64..4.0, 5),
            seed in any::<u64>(),
        ) {
            let mut perm: Vec<usize> = (0..5).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..5).rev() {
                perm.swap(i, rng.gen_range(0..=i));
            }
            let model = |w: Vec<f64>| LinearModel {
                kind: ModelKind::NaiveBayes,
                categories: cats(1),
                weights: vec![w],
                biases: vec![0.1],
                hyper: Hyperparameters::default(),
            };
            let a = predict(&model(w.clone()), &SparseVector::from_dense(&x)).unwrap()[0];
            let pw: Vec<f64> = perm.iter().map(|&i| w[i]).collect();
            let px: Vec<f64> = perm.iter().map(|&i| x[i]).collect();
            let b = predict(&model(pw), &SparseVector::from_dense(&px)).unwrap()[0];
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
