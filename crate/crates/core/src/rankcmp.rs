//! Agreement between rankings and term sets: top-k overlap, rank-biased
//! overlap and fold stability.
//!
//! RBO follows Webber, Moffat & Zobel (2010), "A similarity measure for
//! indefinite rankings". For lists of different length the shorter list's
//! agreement is extrapolated over the longer list's tail, and the point
//! estimate assumes the agreement observed at the evaluation depth continues
//! indefinitely.

use std::collections::{BTreeSet, HashSet};
use std::hash::Hash;

use thiserror::Error;

use crate::featsel::{MethodTag, TermRanking};

#[derive(Debug, Error, PartialEq)]
pub enum RankCmpError {
    #[error("persistence p must satisfy 0 < p < 1, got {0}")]
    InvalidPersistence(f64),
    #[error("rankings must be non-empty")]
    EmptyList,
    #[error("ranking contains duplicate items")]
    Duplicates,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("depth must be at least 1")]
    ZeroDepth,
    #[error("stability needs at least 2 folds, got {0}")]
    TooFewFolds(usize),
}

pub type Result<T> = std::result::Result<T, RankCmpError>;

/// The persistence values reported by default.
pub const DEFAULT_P_GRID: [f64; 4] = [0.9, 0.99, 0.999, 0.9999];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RboParams {
    p: f64,
    /// Evaluation depth; `None` means the longer list's length.
    depth: Option<usize>,
}

impl RboParams {
    pub fn new(p: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(RankCmpError::InvalidPersistence(p));
        }
        Ok(Self { p, depth: None })
    }

    pub fn with_depth(self, depth: usize) -> Result<Self> {
        if depth == 0 {
            return Err(RankCmpError::ZeroDepth);
        }
        Ok(Self { depth: Some(depth), ..self })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn depth(&self) -> Option<usize> {
        self.depth
    }
}

/// Lower bound, residual and extrapolated point estimate.
///
/// `0 <= min <= ext <= min + residual <= 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RboResult {
    pub min: f64,
    pub residual: f64,
    pub ext: f64,
}

fn has_duplicates<T: Eq + Hash>(xs: &[T]) -> bool {
    let mut seen = HashSet::with_capacity(xs.len());
    !xs.iter().all(|x| seen.insert(x))
}

/// RBO of two duplicate-free lists.
pub fn rbo_lists<T: Eq + Hash>(first: &[T], second: &[T], params: RboParams) -> Result<RboResult> {
    if first.is_empty() || second.is_empty() {
        return Err(RankCmpError::EmptyList);
    }
    if has_duplicates(first) || has_duplicates(second) {
        return Err(RankCmpError::Duplicates);
    }
    let depth = params.depth.unwrap_or_else(|| first.len().max(second.len()));
    let first = &first[..first.len().min(depth)];
    let second = &second[..second.len().min(depth)];
    let (short, long) = if first.len() <= second.len() { (first, second) } else { (second, first) };
    let (s, l) = (short.len(), long.len());
    let p = params.p;

    let mut seen_short: HashSet<&T> = HashSet::with_capacity(s);
    let mut seen_long: HashSet<&T> = HashSet::with_capacity(l);
    let mut overlap = 0usize;
    let mut overlap_at_s = 0usize;
    // (1 - p) p^(d-1)
    let mut w = 1.0 - p;
    let mut min = 0.0;
    let mut ext_tail = 0.0;
    let mut res_tail = 0.0;
    for d in 1..=l {
        let y = &long[d - 1];
        if d <= s {
            let x = &short[d - 1];
            if x == y {
                overlap += 1;
            } else {
                overlap += usize::from(seen_long.contains(x)) + usize::from(seen_short.contains(y));
            }
            seen_short.insert(x);
        } else if seen_short.contains(y) {
            overlap += 1;
        }
        seen_long.insert(y);
        if d == s {
            overlap_at_s = overlap;
        }
        let df = d as f64;
        min += w * overlap as f64 / df;
        if d > s {
            let unseen = (d - s) as f64;
            ext_tail += w * overlap_at_s as f64 * unseen / (s as f64 * df);
            let best = (overlap as f64 + unseen).min(df);
            res_tail += w * (best - overlap as f64) / df;
        }
        w *= p;
    }
    let tail_mass = p.powi(l as i32);
    let final_agreement = (overlap as f64 - overlap_at_s as f64) / l as f64 + overlap_at_s as f64 / s as f64;
    let ext = min + ext_tail + final_agreement * tail_mass;
    Ok(RboResult { min, residual: res_tail + tail_mass, ext })
}

/// RBO between two term rankings (ties already resolved by ranking order).
pub fn rbo(r1: &TermRanking, r2: &TermRanking, params: RboParams) -> Result<RboResult> {
    let a: Vec<&str> = r1.terms().collect();
    let b: Vec<&str> = r2.terms().collect();
    rbo_lists(&a, &b, params)
}

/// Share of the total RBO weight carried by ranks `1..=d` at persistence `p`.
pub fn rbo_prefix_weight(d: usize, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(RankCmpError::InvalidPersistence(p));
    }
    if d == 0 {
        return Err(RankCmpError::ZeroDepth);
    }
    let mut partial = 0.0;
    let mut pi = 1.0;
    for i in 1..d {
        pi *= p;
        partial += pi / i as f64;
    }
    let df = d as f64;
    Ok(1.0 - p.powi(d as i32 - 1) + (1.0 - p) / p * df * ((1.0 / (1.0 - p)).ln() - partial))
}

/// `|top_k(r1) ∩ top_k(r2)| / k`; shorter rankings contribute all their terms.
pub fn overlap_at_k(r1: &TermRanking, r2: &TermRanking, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(RankCmpError::ZeroK);
    }
    let a = r1.top_set(k);
    let b = r2.top_set(k);
    Ok(a.intersection(&b).count() as f64 / k as f64)
}

/// `|a ∩ b| / |a ∪ b|`, 1 for two empty sets.
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Feature-set stability across cross-validation folds.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub tag: MethodTag,
    pub fold_sets: Vec<BTreeSet<String>>,
    /// Mean Jaccard over all unordered fold pairs.
    pub mean_jaccard: f64,
    /// Symmetric, unit diagonal.
    pub pairwise: Vec<Vec<f64>>,
}

pub fn stability(fold_sets: Vec<BTreeSet<String>>, tag: MethodTag) -> Result<StabilityReport> {
    let k = fold_sets.len();
    if k < 2 {
        return Err(RankCmpError::TooFewFolds(k));
    }
    let mut pairwise = vec![vec![1.0; k]; k];
    let mut total = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            let v = jaccard(&fold_sets[i], &fold_sets[j]);
            pairwise[i][j] = v;
            pairwise[j][i] = v;
            total += v;
        }
    }
    let pairs = (k * (k - 1) / 2) as f64;
    Ok(StabilityReport { tag, fold_sets, mean_jaccard: total / pairs, pairwise })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featsel::Method;
    use proptest::prelude::*;

    fn chars(s: &str) -> Vec<char> {
        s.chars().collect()
    }

    fn ranking(terms: &[&str]) -> TermRanking {
        let n = terms.len();
        TermRanking::from_scores(
            MethodTag::plain(Method::Chi),
            terms.iter().enumerate().map(|(i, t)| (t.to_string(), (n - i) as f64)),
        )
    }

    /// Truncated-series evaluation of extrapolated RBO: builds the agreement
    /// at every depth from prefix sets, extends the short list's agreement
    /// over the long list, holds the final agreement constant afterwards and
    /// sums `(1 - p) p^(d-1) A_d` until the weights vanish.
    fn rbo_ext_series(a: &[char], b: &[char], p: f64) -> f64 {
        let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
        let (s, l) = (short.len(), long.len());
        let x = |d: usize| -> f64 {
            let ps: HashSet<char> = short[..d.min(s)].iter().copied().collect();
            let pl: HashSet<char> = long[..d.min(l)].iter().copied().collect();
            ps.intersection(&pl).count() as f64
        };
        let xs = x(s);
        let xl = x(l);
        let mut total = 0.0;
        let mut d = 1usize;
        loop {
            let w = (1.0 - p) * p.powi(d as i32 - 1);
            if w < 1e-18 {
                break;
            }
            let agreement = if d <= l {
                let mut a = x(d) / d as f64;
                if d > s {
                    a += xs * (d - s) as f64 / (s as f64 * d as f64);
                }
                a
            } else {
                (xl - xs) / l as f64 + xs / s as f64
            };
            total += w * agreement;
            d += 1;
        }
        total
    }

    #[test]
    fn identical_lists_score_one() {
        for p in [0.5, 0.9, 0.99, 0.9999] {
            let r = rbo_lists(&chars("abcdefg"), &chars("abcdefg"), RboParams::new(p).unwrap()).unwrap();
            assert!((r.ext - 1.0).abs() < 1e-9, "p={p}");
            assert!((r.min + r.residual - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn disjoint_lists_score_zero() {
        let r = rbo_lists(&chars("abc"), &chars("xyz"), RboParams::new(0.9).unwrap()).unwrap();
        assert_eq!(r.ext, 0.0);
        assert_eq!(r.min, 0.0);
    }

    #[test]
    fn three_item_swap_against_series_oracle() {
        let r = rbo_lists(&chars("abc"), &chars("acb"), RboParams::new(0.9).unwrap()).unwrap();
        let oracle = rbo_ext_series(&chars("abc"), &chars("acb"), 0.9);
        assert!((r.ext - oracle).abs() < 1e-9);
        // Hand value: 0.729 + (0.1/0.9)(0.9 + 0.405 + 0.729).
        assert!((r.ext - (0.729 + 0.1 / 0.9 * 2.034)).abs() < 1e-12);
    }

    #[test]
    fn min_is_the_truncated_partial_sum() {
        let r = rbo_lists(&chars("abcdefg"), &chars("abcdefg"), RboParams::new(0.9).unwrap()).unwrap();
        assert!((r.min - (1.0 - 0.9f64.powi(7))).abs() < 1e-12);
        assert!((r.residual - 0.9f64.powi(7)).abs() < 1e-12);
    }

    #[test]
    fn uneven_lists_respect_bounds() {
        let r = rbo_lists(&chars("a"), &chars("abcdefghijklmnop"), RboParams::new(0.9).unwrap()).unwrap();
        assert!(r.min <= r.ext && r.ext <= r.min + r.residual + 1e-12);
        assert!((r.ext - rbo_ext_series(&chars("a"), &chars("abcdefghijklmnop"), 0.9)).abs() < 1e-9);
    }

    #[test]
    fn errors() {
        assert!(RboParams::new(1.0).is_err());
        assert!(RboParams::new(0.0).is_err());
        let p = RboParams::new(0.9).unwrap();
        assert_eq!(rbo_lists::<char>(&[], &chars("a"), p), Err(RankCmpError::EmptyList));
        assert_eq!(rbo_lists(&chars("aa"), &chars("a"), p), Err(RankCmpError::Duplicates));
        assert!(overlap_at_k(&ranking(&["a"]), &ranking(&["a"]), 0).is_err());
        assert!(stability(vec![BTreeSet::new()], MethodTag::plain(Method::Chi)).is_err());
    }

    #[test]
    fn prefix_weight_examples() {
        for (d, p) in [(10, 0.9), (100, 0.99), (1000, 0.999), (10000, 0.9999)] {
            let w = rbo_prefix_weight(d, p).unwrap();
            assert!((0.85..=0.87).contains(&w), "d={d} p={p} w={w}");
        }
        let mut last = 0.0;
        for d in 1..400 {
            let w = rbo_prefix_weight(d, 0.95).unwrap();
            assert!(w > last);
            last = w;
        }
        assert!((1.0 - last).abs() < 1e-6);
    }

    #[test]
    fn prefix_weight_matches_per_rank_weights() {
        // Rank i is counted at every depth j >= i with weight (1-p) p^(j-1) / j.
        let p: f64 = 0.9;
        let rank_weight = |i: usize| -> f64 {
            (i..5000).map(|j| (1.0 - p) * p.powi(j as i32 - 1) / j as f64).sum()
        };
        let mut acc = 0.0;
        for d in 1..=30 {
            acc += rank_weight(d);
            assert!((rbo_prefix_weight(d, p).unwrap() - acc).abs() < 1e-10, "d={d}");
        }
    }

    #[test]
    fn overlap_examples() {
        let a = ranking(&["a", "b", "c", "d", "e"]);
        assert_eq!(overlap_at_k(&a, &a, 5).unwrap(), 1.0);
        assert_eq!(overlap_at_k(&a, &ranking(&["v", "w", "x", "y", "z"]), 5).unwrap(), 0.0);
        let b = ranking(&["c", "d", "e", "f", "g"]);
        assert!((overlap_at_k(&a, &b, 5).unwrap() - 0.6).abs() < 1e-15);
        // short ranking keeps the denominator at k
        assert!((overlap_at_k(&ranking(&["a"]), &a, 4).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn jaccard_examples() {
        let s = |xs: &[&str]| xs.iter().map(|x| x.to_string()).collect::<BTreeSet<_>>();
        assert_eq!(jaccard(&s(&["a", "b"]), &s(&["a", "b"])), 1.0);
        assert_eq!(jaccard(&s(&["a"]), &s(&["b"])), 0.0);
        assert_eq!(jaccard(&s(&["a", "b", "c"]), &s(&["b", "c", "d"])), 0.5);
        assert_eq!(jaccard(&s(&[]), &s(&[])), 1.0);
    }

    #[test]
    fn stability_examples() {
        let s = |xs: &[&str]| xs.iter().map(|x| x.to_string()).collect::<BTreeSet<_>>();
        let tag = MethodTag::plain(Method::Df);
        let same = stability(vec![s(&["a", "b"]); 4], tag).unwrap();
        assert_eq!(same.mean_jaccard, 1.0);
        let disjoint = stability(vec![s(&["a"]), s(&["b"]), s(&["c"])], tag).unwrap();
        assert_eq!(disjoint.mean_jaccard, 0.0);
        // J(1,2) = 1/2, J(1,3) = 1/5, J(2,3) = 2/5
        let sets = vec![s(&["a"]), s(&["a", "b"]), s(&["a", "b", "c", "d", "e"])];
        let pw = [
            jaccard(&sets[0], &sets[1]),
            jaccard(&sets[0], &sets[2]),
            jaccard(&sets[1], &sets[2]),
        ];
        assert_eq!(pw, [0.5, 0.2, 0.4]);
        let r = stability(sets, tag).unwrap();
        assert!((r.mean_jaccard - 0.366_666_666_666_666_7).abs() < 1e-9);
        for i in 0..3 {
            assert_eq!(r.pairwise[i][i], 1.0);
            for j in 0..3 {
                assert_eq!(r.pairwise[i][j], r.pairwise[j][i]);
            }
        }
    }

    fn list() -> impl Strategy<Value = Vec<char>> {
        proptest::sample::subsequence(('a'..='z').collect::<Vec<_>>(), 1..20).prop_shuffle()
    }

    proptest! {
        #[test]
        fn rbo_symmetric_and_bounded(a in list(), b in list(), p in 0.05f64..0.99) {
            let params = RboParams::new(p).unwrap();
            let x = rbo_lists(&a, &b, params).unwrap();
            let y = rbo_lists(&b, &a, params).unwrap();
            prop_assert!((x.ext - y.ext).abs() < 1e-12);
            prop_assert!((x.min - y.min).abs() < 1e-12);
            prop_assert!(x.min >= 0.0);
            prop_assert!(x.min <= x.ext + 1e-12);
            prop_assert!(x.ext <= x.min + x.residual + 1e-12);
            prop_assert!(x.min + x.residual <= 1.0 + 1e-12);
            prop_assert!((x.ext - rbo_ext_series(&a, &b, p)).abs() < 1e-9);
        }

        #[test]
        fn rbo_self_is_one(a in list(), p in 0.05f64..0.9999, depth in 1usize..25) {
            let params = RboParams::new(p).unwrap().with_depth(depth).unwrap();
            prop_assert!((rbo_lists(&a, &a, params).unwrap().ext - 1.0).abs() < 1e-9);
        }

        #[test]
        fn truncation_keeps_min(a in list(), b in list(), depth in 1usize..20) {
            let params = RboParams::new(0.8).unwrap().with_depth(depth).unwrap();
            let full = rbo_lists(&a, &b, params).unwrap();
            let ta = &a[..a.len().min(depth)];
            let tb = &b[..b.len().min(depth)];
            let cut = rbo_lists(ta, tb, params).unwrap();
            prop_assert!((full.min - cut.min).abs() < 1e-15);
        }

        #[test]
        fn rbo_invariant_under_relabeling(a in list(), b in list()) {
            let shift = |xs: &[char]| -> Vec<u32> { xs.iter().map(|c| *c as u32 * 7 + 1000).collect() };
            let params = RboParams::new(0.9).unwrap();
            let x = rbo_lists(&a, &b, params).unwrap();
            let y = rbo_lists(&shift(&a), &shift(&b), params).unwrap();
            prop_assert_eq!(x, y);
        }

        #[test]
        fn overlap_symmetric(a in list(), b in list(), k in 1usize..20) {
            let ra = ranking(&a.iter().map(|c| c.to_string()).collect::<Vec<_>>().iter().map(String::as_str).collect::<Vec<_>>());
            let rb = ranking(&b.iter().map(|c| c.to_string()).collect::<Vec<_>>().iter().map(String::as_str).collect::<Vec<_>>());
            prop_assert_eq!(overlap_at_k(&ra, &rb, k).unwrap(), overlap_at_k(&rb, &ra, k).unwrap());
        }

        #[test]
        fn jaccard_distance_triangle(
            a in proptest::collection::btree_set(0u8..12, 0..8),
            b in proptest::collection::btree_set(0u8..12, 0..8),
            c in proptest::collection::btree_set(0u8..12, 0..8),
        ) {
            let d = |x: &BTreeSet<u8>, y: &BTreeSet<u8>| 1.0 - jaccard(x, y);
            prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
        }
    }
}
