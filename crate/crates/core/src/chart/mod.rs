//! Minimum-cost chart parsing over attention distributions.
//!
//! A span `(i, j)` of length one costs nothing. A longer span costs its
//! compositionality score plus the cheapest split into two sub-spans:
//!
//! ```text
//! span(i, j)     = comp(i, j) + min_{i <= k < j} split(i, k, j)
//! split(i, k, j) = span(i, k) + span(k + 1, j)
//! ```
//!
//! The parser returns the tree realizing `span(1, n)` together with that
//! cost. Ties between splits go to the smallest `k`.

mod distance;
mod scorer;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attnstore::{AttnMatrix, HeadId, SentenceRecord};
use crate::tree::ParseTree;

pub use distance::{hellinger, jsd};
pub use scorer::HeadScorer;

#[derive(Debug, Error, PartialEq)]
pub enum ChartError {
    #[error("distributions have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("span needs at least two members, got {0}")]
    SpanTooShort(usize),
    #[error("both sub-spans must be non-empty")]
    EmptySubspan,
    #[error("sentence {sentence} has no head {head}")]
    MissingHead { sentence: String, head: HeadId },
}

/// Distance between two attention distributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    Jsd,
    Hellinger,
}

impl Distance {
    pub const ALL: [Distance; 2] = [Distance::Jsd, Distance::Hellinger];

    /// Evaluates the distance without checking lengths.
    pub fn eval(self, p: &[f64], q: &[f64]) -> f64 {
        match self {
            Distance::Jsd => distance::jsd_unchecked(p, q),
            Distance::Hellinger => distance::hellinger_unchecked(p, q),
        }
    }
}

/// How the members of one span are compared with each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Composition {
    /// Mean distance over all unordered member pairs.
    Pair,
    /// Mean distance from each member to the span centroid.
    Characteristic,
}

impl Composition {
    pub const ALL: [Composition; 2] = [Composition::Pair, Composition::Characteristic];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub distance: Distance,
    pub comp: Composition,
}

impl ScoreConfig {
    pub const ALL: [ScoreConfig; 4] = [
        ScoreConfig { distance: Distance::Jsd, comp: Composition::Pair },
        ScoreConfig { distance: Distance::Jsd, comp: Composition::Characteristic },
        ScoreConfig { distance: Distance::Hellinger, comp: Composition::Pair },
        ScoreConfig { distance: Distance::Hellinger, comp: Composition::Characteristic },
    ];

    pub fn new(distance: Distance, comp: Composition) -> Self {
        ScoreConfig { distance, comp }
    }
}

impl fmt::Display for ScoreConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = match self.distance {
            Distance::Jsd => "jsd",
            Distance::Hellinger => "hel",
        };
        let c = match self.comp {
            Composition::Pair => "pair",
            Composition::Characteristic => "char",
        };
        write!(f, "{d}/{c}")
    }
}

/// Mean distance over all unordered pairs of `rows`.
pub fn s_pair(rows: &[&[f64]], f: Distance) -> Result<f64, ChartError> {
    if rows.len() < 2 {
        return Err(ChartError::SpanTooShort(rows.len()));
    }
    check_rows(rows)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (x, p) in rows.iter().enumerate() {
        for q in &rows[x + 1..] {
            total += f.eval(p, q);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Mean distance of each row to the uniform mean of `rows`.
pub fn s_characteristic(rows: &[&[f64]], f: Distance) -> Result<f64, ChartError> {
    if rows.len() < 2 {
        return Err(ChartError::SpanTooShort(rows.len()));
    }
    check_rows(rows)?;
    let c = centroid(rows);
    Ok(rows.iter().map(|r| f.eval(r, &c)).sum::<f64>() / rows.len() as f64)
}

pub(crate) fn centroid(rows: &[&[f64]]) -> Vec<f64> {
    let mut c = vec![0.0; rows[0].len()];
    for r in rows {
        for (a, v) in c.iter_mut().zip(r.iter()) {
            *a += v;
        }
    }
    let len = rows.len() as f64;
    c.iter_mut().for_each(|a| *a /= len);
    c
}

pub(crate) fn check_rows(rows: &[&[f64]]) -> Result<(), ChartError> {
    let width = rows[0].len();
    match rows.iter().find(|r| r.len() != width) {
        Some(r) => Err(ChartError::LengthMismatch(width, r.len())),
        None => Ok(()),
    }
}

/// Relative margin below which two split costs count as tied.
pub(crate) const TIE_EPS: f64 = 1e-12;

/// Filled chart: best cost and best split of every span.
#[derive(Debug, Clone)]
pub struct Chart {
    n: usize,
    span_score: Vec<f64>,
    best_split: Vec<usize>,
}

impl Chart {
    /// Fills a chart bottom-up by span length.
    ///
    /// `comp(i, j)` is the span's own score; `cross(i, k, j)`, when given,
    /// is subtracted from every split; `length_weighted` multiplies each
    /// span's cost by `(j - i + 1) / n`.
    pub fn fill(
        n: usize,
        comp: impl Fn(usize, usize) -> f64,
        cross: Option<&dyn Fn(usize, usize, usize) -> f64>,
        length_weighted: bool,
    ) -> Chart {
        let mut span_score = vec![0.0; n * n];
        let mut best_split = vec![0; n * n];
        let at = |i: usize, j: usize| (i - 1) * n + (j - 1);
        for len in 2..=n {
            for i in 1..=(n + 1 - len) {
                let j = i + len - 1;
                let mut best = f64::INFINITY;
                let mut best_k = i;
                for k in i..j {
                    let mut s = span_score[at(i, k)] + span_score[at(k + 1, j)];
                    if let Some(cross) = cross {
                        s -= cross(i, k, j);
                    }
                    if k == i || s < best - TIE_EPS * (1.0 + best.abs()) {
                        best = s;
                        best_k = k;
                    }
                }
                let mut score = comp(i, j) + best;
                if length_weighted {
                    score *= len as f64 / n as f64;
                }
                span_score[at(i, j)] = score;
                best_split[at(i, j)] = best_k;
            }
        }
        Chart { n, span_score, best_split }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn span_score(&self, i: usize, j: usize) -> f64 {
        self.span_score[(i - 1) * self.n + (j - 1)]
    }

    pub fn best_split(&self, i: usize, j: usize) -> usize {
        self.best_split[(i - 1) * self.n + (j - 1)]
    }

    /// Cost of the whole sentence.
    pub fn score(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.span_score(1, self.n)
        }
    }

    pub fn tree(&self) -> ParseTree {
        ParseTree::from_splits(self.n, |i, j| self.best_split(i, j))
    }
}

/// Parses one attention matrix under one configuration.
pub fn parse_matrix(matrix: &AttnMatrix, cfg: ScoreConfig) -> (ParseTree, f64) {
    let scorer = HeadScorer::new(matrix);
    parse_with_scorer(&scorer, cfg)
}

pub fn parse_with_scorer(scorer: &HeadScorer<'_>, cfg: ScoreConfig) -> (ParseTree, f64) {
    let n = scorer.n();
    let table = scorer.comp_table(cfg.distance, cfg.comp);
    let chart = Chart::fill(n, |i, j| table[(i - 1) * n + (j - 1)], None, false);
    (chart.tree(), chart.score())
}

pub(crate) fn head_matrix(record: &SentenceRecord, head: HeadId) -> Result<&AttnMatrix, ChartError> {
    record
        .head(head)
        .ok_or_else(|| ChartError::MissingHead { sentence: record.id.clone(), head })
}

/// Min-cost tree of one head under one configuration, with its cost.
pub fn cky_parse(record: &SentenceRecord, head: HeadId, cfg: ScoreConfig) -> Result<(ParseTree, f64), ChartError> {
    Ok(parse_matrix(head_matrix(record, head)?, cfg))
}

/// [`cky_parse`] under all four configurations, sharing one scorer.
pub fn parse_with_combos(
    record: &SentenceRecord,
    head: HeadId,
) -> Result<BTreeMap<ScoreConfig, (ParseTree, f64)>, ChartError> {
    let scorer = HeadScorer::new(head_matrix(record, head)?);
    Ok(ScoreConfig::ALL.iter().map(|&cfg| (cfg, parse_with_scorer(&scorer, cfg))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::Span;

    fn record_from_rows(rows: &[Vec<f64>]) -> SentenceRecord {
        let n = rows.len();
        SentenceRecord {
            id: "t".into(),
            tokens: (1..=n).map(|i| format!("w{i}")).collect(),
            attn: [(HeadId::new(1, 1), AttnMatrix::from_rows(rows))].into_iter().collect(),
        }
    }

    fn one_hot(n: usize, at: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[at] = 1.0;
        v
    }

    #[test]
    fn s_pair_examples() {
        let same = [0.3, 0.7];
        assert_eq!(s_pair(&[&same, &same, &same], Distance::Jsd).unwrap(), 0.0);
        let (a, b) = ([1.0, 0.0], [0.0, 1.0]);
        assert!((s_pair(&[&a, &b], Distance::Hellinger).unwrap() - 1.0).abs() < 1e-15);
        let (x, y, z) = ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]);
        assert!((s_pair(&[&x, &y, &z], Distance::Hellinger).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(s_pair(&[&x], Distance::Jsd), Err(ChartError::SpanTooShort(1)));
    }

    #[test]
    fn s_characteristic_examples() {
        let same = [0.3, 0.7];
        assert_eq!(s_characteristic(&[&same, &same], Distance::Hellinger).unwrap(), 0.0);
        let (a, b) = ([1.0, 0.0], [0.0, 1.0]);
        let hel = s_characteristic(&[&a, &b], Distance::Hellinger).unwrap();
        assert!((hel - (1.0 - 0.5f64.sqrt()).sqrt()).abs() < 1e-12);
        let js = s_characteristic(&[&a, &b], Distance::Jsd).unwrap();
        assert!((js - jsd(&[0.5, 0.5], &[1.0, 0.0]).unwrap()).abs() < 1e-12);
        assert!((js - 0.5579).abs() < 5e-5);
        assert!(s_characteristic(&[&a], Distance::Jsd).is_err());
    }

    #[test]
    fn trivial_sentences() {
        let rec = record_from_rows(&[vec![1.0]]);
        let (t, s) = cky_parse(&rec, HeadId::new(1, 1), ScoreConfig::ALL[0]).unwrap();
        assert_eq!(t, ParseTree::leaf());
        assert_eq!(s, 0.0);

        let rows = vec![vec![0.9, 0.1], vec![0.2, 0.8]];
        let rec = record_from_rows(&rows);
        for cfg in ScoreConfig::ALL {
            let (t, s) = cky_parse(&rec, HeadId::new(1, 1), cfg).unwrap();
            assert_eq!(t.spans().len(), 3);
            let r: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
            let expected = match cfg.comp {
                Composition::Pair => s_pair(&r, cfg.distance).unwrap(),
                Composition::Characteristic => s_characteristic(&r, cfg.distance).unwrap(),
            };
            assert!((s - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn three_token_left_leaning() {
        // Rows 1-2 identical one-hots, row 3 disjoint: (1,2) is free, so the
        // left-leaning tree costs comp(1,3) while the alternative pays extra.
        let rows = vec![one_hot(3, 0), one_hot(3, 0), one_hot(3, 2)];
        let rec = record_from_rows(&rows);
        let cfg = ScoreConfig::new(Distance::Hellinger, Composition::Pair);
        let (t, s) = cky_parse(&rec, HeadId::new(1, 1), cfg).unwrap();
        assert!(t.contains(&Span::new(1, 2)));
        // comp(1,3) = mean of {0, 1, 1} = 2/3; right tree adds comp(2,3) = 1.
        assert!((s - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_head_ties_break_right_branching() {
        let n = 5;
        let rows = vec![vec![1.0 / n as f64; n]; n];
        let rec = record_from_rows(&rows);
        let combos = parse_with_combos(&rec, HeadId::new(1, 1)).unwrap();
        assert_eq!(combos.len(), 4);
        let right = ParseTree::from_splits(n, |i, _| i);
        // centroids of identical rows are off by an ulp
        for (_, (t, s)) in combos {
            assert!(s.abs() < 1e-12, "{s}");
            assert_eq!(t, right);
        }
    }

    #[test]
    fn missing_head_is_reported() {
        let rec = record_from_rows(&[vec![1.0]]);
        assert!(matches!(
            cky_parse(&rec, HeadId::new(2, 1), ScoreConfig::ALL[0]),
            Err(ChartError::MissingHead { .. })
        ));
    }

    #[test]
    fn scorer_matches_direct_scores() {
        let rows = vec![
            vec![0.5, 0.25, 0.25, 0.0],
            vec![0.1, 0.6, 0.2, 0.1],
            vec![0.0, 0.0, 0.3, 0.7],
            vec![0.25, 0.25, 0.25, 0.25],
        ];
        let m = AttnMatrix::from_rows(&rows);
        let scorer = HeadScorer::new(&m);
        for f in Distance::ALL {
            for i in 1..=4 {
                for j in (i + 1)..=4 {
                    let r: Vec<&[f64]> = rows[i - 1..j].iter().map(|r| r.as_slice()).collect();
                    assert!((scorer.pair(f, i, j) - s_pair(&r, f).unwrap()).abs() < 1e-12);
                    assert!((scorer.characteristic(f, i, j) - s_characteristic(&r, f).unwrap()).abs() < 1e-12);
                }
            }
        }
    }
}
