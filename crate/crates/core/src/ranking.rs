//! Head ranking by the regularized chart objective and selection of K.
//!
//! The ranking recursion rewards similarity inside a span and dissimilarity
//! between the two halves of each split, and weights every span by its
//! relative length:
//!
//! ```text
//! span(i, j)     = (j - i + 1) / n * (comp(i, j) + min_k split(i, k, j))
//! split(i, k, j) = span(i, k) + span(k + 1, j) - cross(i, k, j)
//! ```
//!
//! A head's score on a sentence is `span(1, n)`; lower is more syntactic.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attnstore::{HeadId, SentenceRecord};
use crate::chart::{self, centroid, check_rows, ChartError, Chart, Composition, Distance, HeadScorer, ScoreConfig};
use crate::tree::ParseTree;

#[derive(Debug, Error)]
pub enum RankError {
    #[error(transparent)]
    Chart(#[from] ChartError),
    #[error("no sentence with 2..={max_len} tokens to rank on")]
    EmptyCorpus { max_len: usize },
    #[error("sentence {sentence} has {found} heads, expected {expected}")]
    HeadMismatch { sentence: String, expected: usize, found: usize },
}

/// How the two halves of a split are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Cross {
    /// Mean distance over the cross product of the halves.
    PairCross,
    /// Distance between the centroids of the halves.
    CharacteristicCross,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RankScoreConfig {
    pub distance: Distance,
    pub comp: Composition,
    pub cross: Cross,
}

impl RankScoreConfig {
    pub fn new(distance: Distance, comp: Composition, cross: Cross) -> Self {
        RankScoreConfig { distance, comp, cross }
    }

    /// All eight combinations.
    pub fn all() -> impl Iterator<Item = RankScoreConfig> {
        ScoreConfig::ALL.into_iter().flat_map(|c| {
            [Cross::PairCross, Cross::CharacteristicCross]
                .into_iter()
                .map(move |x| RankScoreConfig::new(c.distance, c.comp, x))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankMode {
    /// Length-weighted recursion with the cross term, averaged over 8 combos.
    Regularized,
    /// Unmodified chart cost averaged over the 4 chart combos. Prefers
    /// degenerate heads; kept as an ablation.
    Plain,
}

impl fmt::Display for RankMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RankMode::Regularized => f.write_str("regularized"),
            RankMode::Plain => f.write_str("plain"),
        }
    }
}

/// Mean distance over all pairs drawn one from `left` and one from `right`.
pub fn s_pair_cross(left: &[&[f64]], right: &[&[f64]], f: Distance) -> Result<f64, ChartError> {
    if left.is_empty() || right.is_empty() {
        return Err(ChartError::EmptySubspan);
    }
    check_rows(&[left, right].concat())?;
    let total: f64 = left.iter().flat_map(|p| right.iter().map(move |q| f.eval(p, q))).sum();
    Ok(total / (left.len() * right.len()) as f64)
}

/// Distance between the centroids of `left` and `right`.
pub fn s_characteristic_cross(left: &[&[f64]], right: &[&[f64]], f: Distance) -> Result<f64, ChartError> {
    if left.is_empty() || right.is_empty() {
        return Err(ChartError::EmptySubspan);
    }
    check_rows(&[left, right].concat())?;
    Ok(f.eval(&centroid(left), &centroid(right)))
}

pub fn rank_with_scorer(scorer: &HeadScorer<'_>, cfg: RankScoreConfig) -> (ParseTree, f64) {
    let n = scorer.n();
    let table = scorer.comp_table(cfg.distance, cfg.comp);
    let cross = |i: usize, k: usize, j: usize| match cfg.cross {
        Cross::PairCross => scorer.pair_cross(cfg.distance, i, k, j),
        Cross::CharacteristicCross => scorer.characteristic_cross(cfg.distance, i, k, j),
    };
    let chart = Chart::fill(n, |i, j| table[(i - 1) * n + (j - 1)], Some(&cross), true);
    (chart.tree(), chart.score())
}

/// Min-cost tree of one head under the regularized recursion, and its cost.
pub fn rank_span_score(
    record: &SentenceRecord,
    head: HeadId,
    cfg: RankScoreConfig,
) -> Result<(ParseTree, f64), ChartError> {
    let scorer = HeadScorer::new(chart::head_matrix(record, head)?);
    Ok(rank_with_scorer(&scorer, cfg))
}

/// Per-sentence score of one head, averaged over the mode's combinations.
pub fn head_sentence_score(scorer: &HeadScorer<'_>, mode: RankMode) -> f64 {
    match mode {
        RankMode::Regularized => {
            let scores: Vec<f64> = RankScoreConfig::all().map(|c| rank_with_scorer(scorer, c).1).collect();
            scores.iter().sum::<f64>() / scores.len() as f64
        }
        RankMode::Plain => {
            let scores: Vec<f64> =
                ScoreConfig::ALL.iter().map(|&c| chart::parse_with_scorer(scorer, c).1).collect();
            scores.iter().sum::<f64>() / scores.len() as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingEntry {
    #[serde(flatten)]
    pub head: HeadKey,
    pub score: f64,
}

/// Serialized form of a [`HeadId`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadKey {
    pub layer: usize,
    pub head: usize,
}

impl From<HeadId> for HeadKey {
    fn from(h: HeadId) -> Self {
        HeadKey { layer: h.layer, head: h.index }
    }
}

impl From<HeadKey> for HeadId {
    fn from(k: HeadKey) -> Self {
        HeadId::new(k.layer, k.head)
    }
}

impl RankingEntry {
    pub fn head_id(&self) -> HeadId {
        self.head.into()
    }
}

/// Heads sorted by ascending mean score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingTable {
    pub mode: RankMode,
    pub num_sentences: usize,
    pub entries: Vec<RankingEntry>,
}

impl RankingTable {
    /// Sorts `(head, score)` pairs ascending; ties keep head order.
    pub fn from_scores(mode: RankMode, num_sentences: usize, mut scores: Vec<(HeadId, f64)>) -> Self {
        scores.sort_by_key(|(h, _)| *h);
        scores.sort_by(|a, b| a.1.total_cmp(&b.1));
        RankingTable {
            mode,
            num_sentences,
            entries: scores.into_iter().map(|(h, score)| RankingEntry { head: h.into(), score }).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The first `k` heads.
    pub fn top(&self, k: usize) -> Vec<HeadId> {
        self.entries.iter().take(k).map(RankingEntry::head_id).collect()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.score).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ranking table serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// Sentences scored per parallel batch when ranking a stream.
const BATCH: usize = 32;

/// Scores every head on every sentence with `2 <= n <= max_len` and averages.
///
/// Per-head sums are taken over sorted per-sentence scores, so the table does
/// not depend on corpus order or thread scheduling.
pub fn rank_heads<I>(corpus: I, mode: RankMode, max_len: usize) -> Result<RankingTable, RankError>
where
    I: IntoIterator<Item = SentenceRecord>,
{
    let mut heads: Option<Vec<HeadId>> = None;
    let mut per_head: Vec<Vec<f64>> = Vec::new();
    let mut batch = Vec::with_capacity(BATCH);
    let mut num_sentences = 0;

    let flush = |batch: &mut Vec<SentenceRecord>, heads: &mut Option<Vec<HeadId>>, per_head: &mut Vec<Vec<f64>>| -> Result<(), RankError> {
        if batch.is_empty() {
            return Ok(());
        }
        let hs = heads.get_or_insert_with(|| batch[0].attn.keys().copied().collect());
        if per_head.is_empty() {
            per_head.resize(hs.len(), Vec::new());
        }
        for r in batch.iter() {
            if r.attn.len() != hs.len() || !hs.iter().all(|h| r.attn.contains_key(h)) {
                return Err(RankError::HeadMismatch {
                    sentence: r.id.clone(),
                    expected: hs.len(),
                    found: r.attn.len(),
                });
            }
        }
        let hs: &[HeadId] = hs;
        let scored: Vec<Vec<f64>> = batch
            .par_iter()
            .map(|r| {
                hs.iter()
                    .map(|h| head_sentence_score(&HeadScorer::new(&r.attn[h]), mode))
                    .collect()
            })
            .collect();
        for row in scored {
            for (acc, s) in per_head.iter_mut().zip(row) {
                acc.push(s);
            }
        }
        batch.clear();
        Ok(())
    };

    for r in corpus {
        if r.n() < 2 || r.n() > max_len {
            continue;
        }
        num_sentences += 1;
        batch.push(r);
        if batch.len() == BATCH {
            flush(&mut batch, &mut heads, &mut per_head)?;
        }
    }
    flush(&mut batch, &mut heads, &mut per_head)?;

    let heads = match heads {
        Some(h) if num_sentences > 0 => h,
        _ => return Err(RankError::EmptyCorpus { max_len }),
    };
    let scores = heads
        .into_iter()
        .zip(per_head)
        .map(|(h, mut v)| {
            v.sort_by(f64::total_cmp);
            (h, v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect();
    Ok(RankingTable::from_scores(mode, num_sentences, scores))
}

/// Per-head scores on a single sentence, keyed by head.
pub fn sentence_head_scores(record: &SentenceRecord, mode: RankMode) -> BTreeMap<HeadId, f64> {
    record
        .attn
        .iter()
        .map(|(h, m)| (*h, head_sentence_score(&HeadScorer::new(m), mode)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicKConfig {
    pub delta: usize,
    pub k_min: usize,
    pub k_max_fraction: f64,
}

impl Default for DynamicKConfig {
    fn default() -> Self {
        DynamicKConfig { delta: 3, k_min: 30, k_max_fraction: 0.75 }
    }
}

/// Smoothed forward gradient of the sorted score curve at 1-based rank `k`.
pub fn smoothed_gradient(scores: &[f64], k: usize, delta: usize) -> f64 {
    let h = scores.len() as i64;
    let k = k as i64;
    let mut g = 0.0;
    for d in -(delta as i64)..=(delta as i64) {
        if d == 0 || k + d < 1 || k + d > h {
            continue;
        }
        g += (scores[(k + d - 1) as usize] - scores[(k - 1) as usize]) / d as f64;
    }
    g
}

/// Picks K at the steepest smoothed rise of the score curve within
/// `[k_min, floor(k_max_fraction * H)]`; ties go to the smaller rank.
pub fn select_k_dynamic(table: &RankingTable, cfg: &DynamicKConfig) -> usize {
    select_k_from_scores(&table.scores(), cfg)
}

pub fn select_k_from_scores(scores: &[f64], cfg: &DynamicKConfig) -> usize {
    let h = scores.len();
    assert!(h > 0, "cannot select K from an empty ranking");
    assert!(cfg.delta >= 1 && cfg.k_min >= 1, "invalid dynamic K configuration");
    let k_max = (cfg.k_max_fraction * h as f64).floor() as usize;
    if cfg.k_min > k_max {
        return h.min(cfg.k_min);
    }
    let mut best_k = cfg.k_min;
    let mut best_g = f64::NEG_INFINITY;
    for k in cfg.k_min..=k_max {
        let g = smoothed_gradient(scores, k, cfg.delta);
        if k == cfg.k_min || g > best_g + 1e-9 * (1.0 + best_g.abs()) {
            best_g = g;
            best_k = k;
        }
    }
    best_k
}

pub const LAZY_K: usize = 30;

pub fn select_k_lazy(table: &RankingTable) -> usize {
    LAZY_K.min(table.len())
}
