//! Merging per-head chart trees through syntactic distances.
//!
//! Each tree becomes a vector of `n - 1` gap heights (the height of the
//! lowest common ancestor of adjacent leaves). Vectors are rank-normalized,
//! averaged, and decoded top-down by splitting at the largest gap.

use thiserror::Error;

use crate::attnstore::{AttnMatrix, HeadId, SentenceRecord};
use crate::chart::{self, ChartError, HeadScorer, ScoreConfig};
use crate::ranking::RankingTable;
use crate::tree::{ParseTree, Span};

#[derive(Debug, Error, PartialEq)]
pub enum EnsembleError {
    #[error(transparent)]
    Chart(#[from] ChartError),
    #[error("ensemble needs at least one head")]
    NoHeads,
    #[error("ensemble needs at least one score configuration")]
    NoCombos,
    #[error("layer ensemble must hold all {expected} heads of one layer")]
    BadLayer { expected: usize },
    #[error("bracketed tree: {0}")]
    Bracket(String),
}

/// Gap `i` (0-based) sits between leaves `i + 1` and `i + 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntacticDistance(pub Vec<f64>);

impl SyntacticDistance {
    pub fn gaps(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// LCA height of every adjacent leaf pair; leaves have height 0.
pub fn tree_to_distance(tree: &ParseTree) -> SyntacticDistance {
    let mut gaps = vec![0.0; tree.n().saturating_sub(1)];
    fill_heights(tree, Span::new(1, tree.n()), &mut gaps);
    SyntacticDistance(gaps)
}

fn fill_heights(tree: &ParseTree, span: Span, gaps: &mut [f64]) -> usize {
    match tree.children(span) {
        None => 0,
        Some((l, r)) => {
            let h = 1 + fill_heights(tree, l, gaps).max(fill_heights(tree, r, gaps));
            gaps[l.j - 1] = h as f64;
            h
        }
    }
}

/// Top-down decoding: split each range at its largest gap, leftmost on ties.
pub fn distance_to_tree(d: &SyntacticDistance) -> ParseTree {
    let gaps = d.gaps();
    ParseTree::from_splits(gaps.len() + 1, |i, j| {
        // gaps between leaves i..j are gaps[i-1..j-1]
        let mut best = i;
        for k in (i + 1)..j {
            if gaps[k - 1] > gaps[best - 1] {
                best = k;
            }
        }
        best
    })
}

/// Replaces every gap by its rank (1 = smallest); ties share their mean rank.
pub fn rank_normalize(d: &SyntacticDistance) -> SyntacticDistance {
    let v = d.gaps();
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && v[order[end]] == v[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end share their mean
        let mean = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = mean;
        }
        start = end;
    }
    SyntacticDistance(ranks)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnsembleScope {
    TopK,
    Layer,
    Single,
}

/// What gets merged: per-head trees, or attention matrices averaged first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MergeMode {
    #[default]
    Trees,
    Matrices,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec {
    pub heads: Vec<HeadId>,
    pub scope: EnsembleScope,
    pub combos: Vec<ScoreConfig>,
    pub merge: MergeMode,
}

impl EnsembleSpec {
    pub fn top_k(table: &RankingTable, k: usize) -> Result<Self, EnsembleError> {
        Self::checked(table.top(k), EnsembleScope::TopK)
    }

    pub fn layer(layer: usize, heads_per_layer: usize) -> Result<Self, EnsembleError> {
        Self::checked((1..=heads_per_layer).map(|v| HeadId::new(layer, v)).collect(), EnsembleScope::Layer)
    }

    pub fn single(head: HeadId) -> Self {
        EnsembleSpec {
            heads: vec![head],
            scope: EnsembleScope::Single,
            combos: ScoreConfig::ALL.to_vec(),
            merge: MergeMode::Trees,
        }
    }

    pub fn with_heads(heads: Vec<HeadId>) -> Result<Self, EnsembleError> {
        Self::checked(heads, EnsembleScope::TopK)
    }

    fn checked(heads: Vec<HeadId>, scope: EnsembleScope) -> Result<Self, EnsembleError> {
        if heads.is_empty() {
            return Err(EnsembleError::NoHeads);
        }
        Ok(EnsembleSpec { heads, scope, combos: ScoreConfig::ALL.to_vec(), merge: MergeMode::Trees })
    }

    pub fn combos(mut self, combos: Vec<ScoreConfig>) -> Self {
        self.combos = combos;
        self
    }

    pub fn merge(mut self, merge: MergeMode) -> Self {
        self.merge = merge;
        self
    }

    /// Checks the spec against a model shape.
    pub fn validate(&self, heads_per_layer: usize) -> Result<(), EnsembleError> {
        if self.heads.is_empty() {
            return Err(EnsembleError::NoHeads);
        }
        if self.combos.is_empty() {
            return Err(EnsembleError::NoCombos);
        }
        if self.scope == EnsembleScope::Layer {
            let layer = self.heads[0].layer;
            let mut idx: Vec<usize> = self.heads.iter().filter(|h| h.layer == layer).map(|h| h.index).collect();
            idx.sort_unstable();
            idx.dedup();
            if self.heads.len() != heads_per_layer || idx != (1..=heads_per_layer).collect::<Vec<_>>() {
                return Err(EnsembleError::BadLayer { expected: heads_per_layer });
            }
        }
        Ok(())
    }
}

/// Averages rank-normalized distance vectors of every tree and decodes.
pub fn merge_trees<'a>(n: usize, trees: impl IntoIterator<Item = &'a ParseTree>) -> ParseTree {
    if n <= 1 {
        return ParseTree::leaf();
    }
    let mut acc = vec![0.0; n - 1];
    let mut count = 0.0;
    for t in trees {
        let r = rank_normalize(&tree_to_distance(t));
        for (a, v) in acc.iter_mut().zip(r.gaps()) {
            *a += v;
        }
        count += 1.0;
    }
    acc.iter_mut().for_each(|a| *a /= count);
    distance_to_tree(&SyntacticDistance(acc))
}

/// Parses one sentence with an ensemble of heads.
pub fn ensemble_parse(record: &SentenceRecord, spec: &EnsembleSpec) -> Result<ParseTree, EnsembleError> {
    if spec.heads.is_empty() {
        return Err(EnsembleError::NoHeads);
    }
    if spec.combos.is_empty() {
        return Err(EnsembleError::NoCombos);
    }
    let mats = spec
        .heads
        .iter()
        .map(|&h| chart::head_matrix(record, h))
        .collect::<Result<Vec<&AttnMatrix>, _>>()?;
    let n = record.n();
    if n <= 1 {
        return Ok(ParseTree::leaf());
    }
    let trees: Vec<ParseTree> = match spec.merge {
        MergeMode::Trees => mats
            .iter()
            .flat_map(|m| {
                let scorer = HeadScorer::new(m);
                spec.combos.iter().map(move |&c| chart::parse_with_scorer(&scorer, c).0).collect::<Vec<_>>()
            })
            .collect(),
        MergeMode::Matrices => {
            let avg = AttnMatrix::mean(mats.iter().copied()).expect("at least one head");
            let scorer = HeadScorer::new(&avg);
            spec.combos.iter().map(|&c| chart::parse_with_scorer(&scorer, c).0).collect()
        }
    };
    Ok(merge_trees(n, &trees))
}

/// Parses an unlabeled bracketed tree such as `((w1 w2) (w3 w4))`.
///
/// Every parenthesized group is a constituent; groups with a single member
/// are transparent. Non-binary groups are rejected.
pub fn parse_unlabeled(line: &str) -> Result<(Vec<String>, ParseTree), EnsembleError> {
    #[derive(Debug)]
    enum Node {
        Word(usize),
        Group(Vec<Node>),
    }

    fn tokenize(s: &str) -> Vec<&str> {
        let mut out = Vec::new();
        let mut start = None;
        for (idx, ch) in s.char_indices() {
            if ch == '(' || ch == ')' || ch.is_whitespace() {
                if let Some(st) = start.take() {
                    out.push(&s[st..idx]);
                }
                if !ch.is_whitespace() {
                    out.push(&s[idx..idx + 1]);
                }
            } else if start.is_none() {
                start = Some(idx);
            }
        }
        if let Some(st) = start {
            out.push(&s[st..]);
        }
        out
    }

    let toks = tokenize(line);
    let mut words = Vec::new();
    let mut stack: Vec<Vec<Node>> = vec![Vec::new()];
    for t in toks {
        match t {
            "(" => stack.push(Vec::new()),
            ")" => {
                let group = stack.pop().filter(|_| !stack.is_empty()).ok_or_else(|| EnsembleError::Bracket("unbalanced ')'".into()))?;
                stack.last_mut().expect("outer frame").push(Node::Group(group));
            }
            w => {
                words.push(w.to_string());
                stack.last_mut().expect("frame").push(Node::Word(words.len()));
            }
        }
    }
    if stack.len() != 1 {
        return Err(EnsembleError::Bracket("unbalanced '('".into()));
    }
    let mut top = stack.pop().expect("outer frame");
    if top.len() != 1 {
        return Err(EnsembleError::Bracket(format!("expected one tree, found {} items", top.len())));
    }
    if words.is_empty() {
        return Err(EnsembleError::Bracket("tree has no words".into()));
    }

    fn collect(node: &Node, spans: &mut Vec<Span>) -> Result<Span, EnsembleError> {
        match node {
            Node::Word(i) => Ok(Span::new(*i, *i)),
            Node::Group(items) if items.len() == 1 => collect(&items[0], spans),
            Node::Group(items) if items.len() == 2 => {
                let l = collect(&items[0], spans)?;
                let r = collect(&items[1], spans)?;
                let s = Span::new(l.i, r.j);
                spans.push(s);
                Ok(s)
            }
            Node::Group(items) => Err(EnsembleError::Bracket(format!("constituent with {} children is not binary", items.len()))),
        }
    }

    let mut spans: Vec<Span> = (1..=words.len()).map(|i| Span::new(i, i)).collect();
    collect(&top.remove(0), &mut spans)?;
    let tree = ParseTree::from_spans(words.len(), spans).map_err(|e| EnsembleError::Bracket(e.to_string()))?;
    Ok((words, tree))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn right(n: usize) -> ParseTree {
        ParseTree::from_splits(n, |i, _| i)
    }

    fn balanced4() -> ParseTree {
        ParseTree::from_spans(4, [(1, 4), (1, 2), (3, 4), (1, 1), (2, 2), (3, 3), (4, 4)].map(|(i, j)| Span::new(i, j))).unwrap()
    }

    #[test]
    fn distance_examples() {
        assert_eq!(tree_to_distance(&right(4)).0, vec![3.0, 2.0, 1.0]);
        assert_eq!(tree_to_distance(&balanced4()).0, vec![1.0, 2.0, 1.0]);
        assert_eq!(tree_to_distance(&right(2)).0, vec![1.0]);
        assert!(tree_to_distance(&ParseTree::leaf()).is_empty());
    }

    #[test]
    fn decode_examples() {
        assert_eq!(distance_to_tree(&SyntacticDistance(vec![3.0, 2.0, 1.0])), right(4));
        assert_eq!(distance_to_tree(&SyntacticDistance(vec![1.0, 2.0, 1.0])), balanced4());
        assert_eq!(distance_to_tree(&SyntacticDistance(vec![])), ParseTree::leaf());
        // all ties: leftmost split everywhere gives right branching
        assert_eq!(distance_to_tree(&SyntacticDistance(vec![0.0; 4])), right(5));
    }

    #[test]
    fn rank_normalize_examples() {
        assert_eq!(rank_normalize(&SyntacticDistance(vec![3.0, 2.0, 1.0])).0, vec![3.0, 2.0, 1.0]);
        assert_eq!(rank_normalize(&SyntacticDistance(vec![0.1, 9.0, 0.1])).0, vec![1.5, 3.0, 1.5]);
        assert_eq!(rank_normalize(&SyntacticDistance(vec![5.0])).0, vec![1.0]);
        assert_eq!(rank_normalize(&SyntacticDistance(vec![2.0, 2.0, 2.0, 1.0])).0, vec![3.0, 3.0, 3.0, 1.0]);
    }

    #[test]
    fn unlabeled_round_trip() {
        let words = ["w1", "w2", "w3", "w4", "w5"];
        let t = ParseTree::from_spans(
            5,
            [(1, 5), (1, 2), (3, 5), (4, 5), (1, 1), (2, 2), (3, 3), (4, 4), (5, 5)].map(|(i, j)| Span::new(i, j)),
        )
        .unwrap();
        let line = t.to_bracketed(&words);
        assert_eq!(line, "((w1 w2) (w3 (w4 w5)))");
        let (w, back) = parse_unlabeled(&line).unwrap();
        assert_eq!(w, words);
        assert_eq!(back, t);
        assert_eq!(parse_unlabeled("solo").unwrap().1, ParseTree::leaf());
        assert_eq!(parse_unlabeled("(solo)").unwrap(), (vec!["solo".to_string()], ParseTree::leaf()));
        assert!(parse_unlabeled("((a b)").is_err());
        assert!(parse_unlabeled("(a b c)").is_err());
        assert!(parse_unlabeled("(a b))").is_err());
    }

    #[test]
    fn layer_spec_validation() {
        let spec = EnsembleSpec::layer(2, 4).unwrap();
        assert!(spec.validate(4).is_ok());
        assert_eq!(spec.validate(5), Err(EnsembleError::BadLayer { expected: 5 }));
        let mut bad = spec.clone();
        bad.heads[3] = HeadId::new(3, 4);
        assert!(bad.validate(4).is_err());
        assert_eq!(EnsembleSpec::with_heads(vec![]), Err(EnsembleError::NoHeads));
    }
}
