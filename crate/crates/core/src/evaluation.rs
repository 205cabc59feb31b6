//! Unlabeled F1, per-label recall and many-to-one accuracies.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::treebank::{BinarizedTree, LabeledSpans};
use crate::tree::{ParseTree, Span};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("sentence {index}: prediction has {pred} tokens, gold has {gold}")]
    TokenCount { index: usize, pred: usize, gold: usize },
    #[error("corpus sizes differ: {pred} predictions, {gold} gold items")]
    CorpusSize { pred: usize, gold: usize },
    #[error("nothing to evaluate")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalConfig {
    /// Drop the whole-sentence span before scoring (length-1 spans always are).
    pub exclude_whole_sentence: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { exclude_whole_sentence: true }
    }
}

impl EvalConfig {
    fn keeps(&self, span: &Span, n: usize) -> bool {
        span.len() >= 2 && !(self.exclude_whole_sentence && span.i == 1 && span.j == n)
    }
}

fn reduce<'a>(spans: impl IntoIterator<Item = &'a Span>, n: usize, cfg: &EvalConfig) -> BTreeSet<Span> {
    spans.into_iter().copied().filter(|s| cfg.keeps(s, n)).collect()
}

/// F1 between the non-trivial spans of `pred` and `gold`; 1 when both are empty.
pub fn sentence_f1(pred: &ParseTree, gold_n: usize, gold: &BTreeSet<Span>, cfg: &EvalConfig) -> Result<f64, EvalError> {
    if pred.n() != gold_n {
        return Err(EvalError::TokenCount { index: 0, pred: pred.n(), gold: gold_n });
    }
    Ok(span_f1(&reduce(pred.spans(), gold_n, cfg), &reduce(gold, gold_n, cfg)))
}

fn span_f1(pred: &BTreeSet<Span>, gold: &BTreeSet<Span>) -> f64 {
    if pred.is_empty() && gold.is_empty() {
        return 1.0;
    }
    let hit = pred.intersection(gold).count() as f64;
    if hit == 0.0 {
        return 0.0;
    }
    let p = hit / pred.len() as f64;
    let r = hit / gold.len() as f64;
    2.0 * p * r / (p + r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecall {
    pub recall: f64,
    pub found: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_sentence_f1: f64,
    pub num_sentences: usize,
    pub per_label_recall: BTreeMap<String, LabelRecall>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn recall(&self, label: &str) -> Option<f64> {
        self.per_label_recall.get(label).map(|r| r.recall)
    }

    /// Aligned plain-text rendering; F1 and recalls in percent.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<12} {:>8}", "sentences", self.num_sentences);
        let _ = writeln!(out, "{:<12} {:>8.1}", "F1", 100.0 * self.mean_sentence_f1);
        if !self.per_label_recall.is_empty() {
            let _ = writeln!(out, "{:<12} {:>8} {:>8}", "label", "recall", "gold");
            for (label, r) in &self.per_label_recall {
                let _ = writeln!(out, "{:<12} {:>8.1} {:>8}", label, 100.0 * r.recall, r.total);
            }
        }
        out
    }
}

/// Mean sentence F1 and per-label recall of gold constituents.
pub fn corpus_f1(preds: &[ParseTree], golds: &[LabeledSpans], cfg: &EvalConfig) -> Result<EvalReport, EvalError> {
    if preds.len() != golds.len() {
        return Err(EvalError::CorpusSize { pred: preds.len(), gold: golds.len() });
    }
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut f1_sum = 0.0;
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (index, (pred, gold)) in preds.iter().zip(golds).enumerate() {
        if pred.n() != gold.n {
            return Err(EvalError::TokenCount { index, pred: pred.n(), gold: gold.n });
        }
        f1_sum += sentence_f1(pred, gold.n, &gold.unlabeled(), cfg)?;
        for (span, label) in &gold.spans {
            if !cfg.keeps(span, gold.n) {
                continue;
            }
            let c = counts.entry(label.clone()).or_default();
            c.1 += 1;
            if pred.contains(span) {
                c.0 += 1;
            }
        }
    }
    Ok(EvalReport {
        mean_sentence_f1: f1_sum / preds.len() as f64,
        num_sentences: preds.len(),
        per_label_recall: counts
            .into_iter()
            .map(|(l, (found, total))| (l, LabelRecall { recall: found as f64 / total as f64, found, total }))
            .collect(),
    })
}

/// Induced symbol -> gold label, by largest co-occurrence count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct M1Mapping {
    pub map: BTreeMap<String, String>,
    pub counts: BTreeMap<String, BTreeMap<String, usize>>,
}

impl M1Mapping {
    pub fn get(&self, induced: &str) -> Option<&str> {
        self.map.get(induced).map(String::as_str)
    }
}

/// Builds the many-to-one mapping from aligned `(induced, gold)` pairs.
/// Ties go to the lexicographically smallest gold label.
pub fn m1_map<I, A, B>(pairs: I) -> Result<M1Mapping, EvalError>
where
    I: IntoIterator<Item = (A, B)>,
    A: AsRef<str>,
    B: AsRef<str>,
{
    let mut counts: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for (induced, gold) in pairs {
        *counts
            .entry(induced.as_ref().to_string())
            .or_default()
            .entry(gold.as_ref().to_string())
            .or_default() += 1;
    }
    if counts.is_empty() {
        return Err(EvalError::Empty);
    }
    let map = counts
        .iter()
        .map(|(induced, row)| {
            // BTreeMap iterates labels in order, so the first maximum is the smallest label.
            let mut best: Option<(&String, usize)> = None;
            for (label, &c) in row {
                if best.is_none_or(|(_, b)| c > b) {
                    best = Some((label, c));
                }
            }
            (induced.clone(), best.expect("non-empty row").0.clone())
        })
        .collect();
    Ok(M1Mapping { map, counts })
}

/// Fraction of tokens whose mapped induced tag equals the gold tag.
pub fn preterminal_accuracy<S: AsRef<str>, T: AsRef<str>>(
    pred: &[Vec<S>],
    gold: &[Vec<T>],
    mapping: &M1Mapping,
) -> Result<f64, EvalError> {
    if pred.len() != gold.len() {
        return Err(EvalError::CorpusSize { pred: pred.len(), gold: gold.len() });
    }
    let mut correct = 0usize;
    let mut total = 0usize;
    for (index, (p, g)) in pred.iter().zip(gold).enumerate() {
        if p.len() != g.len() {
            return Err(EvalError::TokenCount { index, pred: p.len(), gold: g.len() });
        }
        for (a, b) in p.iter().zip(g) {
            total += 1;
            if mapping.get(a.as_ref()) == Some(b.as_ref()) {
                correct += 1;
            }
        }
    }
    if total == 0 {
        return Err(EvalError::Empty);
    }
    Ok(correct as f64 / total as f64)
}

/// `(induced, gold)` label pairs of internal nodes sharing a span.
pub fn nonterminal_pairs<'a>(pred: &'a BinarizedTree, gold: &'a BinarizedTree) -> Vec<(&'a str, &'a str)> {
    let mut gold_at: HashMap<Span, &str> = HashMap::new();
    gold.visit(1, &mut |node, span| {
        if matches!(node, BinarizedTree::Node { .. }) {
            gold_at.insert(span, node.label());
        }
    });
    let mut out = Vec::new();
    pred.visit(1, &mut |node, span| {
        if let (BinarizedTree::Node { label, .. }, Some(g)) = (node, gold_at.get(&span)) {
            out.push((label.as_str(), *g));
        }
    });
    out
}

/// Fraction of predicted binary rule instances whose mapped production
/// appears in the gold tree at the same span with the same split.
///
/// Leaf children are mapped with `pt_map`, internal ones with `nt_map`.
pub fn rule_accuracy(
    preds: &[BinarizedTree],
    golds: &[BinarizedTree],
    nt_map: &M1Mapping,
    pt_map: &M1Mapping,
) -> Result<f64, EvalError> {
    if preds.len() != golds.len() {
        return Err(EvalError::CorpusSize { pred: preds.len(), gold: golds.len() });
    }
    let mut correct = 0usize;
    let mut total = 0usize;
    for (index, (p, g)) in preds.iter().zip(golds).enumerate() {
        if p.num_words() != g.num_words() {
            return Err(EvalError::TokenCount { index, pred: p.num_words(), gold: g.num_words() });
        }
        let gold_rules: HashMap<(Span, usize), (&str, &str, &str)> =
            g.productions().into_iter().map(|(s, k, a, b, c)| ((s, k), (a, b, c))).collect();
        p.visit(1, &mut |node, span| {
            if let BinarizedTree::Node { label, left, right, .. } = node {
                total += 1;
                let k = span.i + left.num_words() - 1;
                let map_child = |c: &BinarizedTree| match c {
                    BinarizedTree::Leaf { label, .. } => pt_map.get(label),
                    BinarizedTree::Node { label, .. } => nt_map.get(label),
                };
                let mapped = (nt_map.get(label), map_child(left), map_child(right));
                if let (Some(a), Some(b), Some(c)) = mapped {
                    if gold_rules.get(&(span, k)) == Some(&(a, b, c)) {
                        correct += 1;
                    }
                }
            }
        });
    }
    if total == 0 {
        return Err(EvalError::Empty);
    }
    Ok(correct as f64 / total as f64)
}

/// Many-to-one accuracies of a labeled corpus against binarized gold trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelingReport {
    pub num_sentences: usize,
    pub num_tokens: usize,
    pub preterminal_accuracy: f64,
    /// `None` when no prediction has an internal node.
    pub rule_accuracy: Option<f64>,
    pub preterminal_map: BTreeMap<String, String>,
    pub nonterminal_map: BTreeMap<String, String>,
}

impl LabelingReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<16} {:>8}", "sentences", self.num_sentences);
        let _ = writeln!(out, "{:<16} {:>8}", "tokens", self.num_tokens);
        let _ = writeln!(out, "{:<16} {:>8.1}", "preterminal acc", 100.0 * self.preterminal_accuracy);
        match self.rule_accuracy {
            Some(r) => writeln!(out, "{:<16} {:>8.1}", "rule acc", 100.0 * r),
            None => writeln!(out, "{:<16} {:>8}", "rule acc", "-"),
        }
        .ok();
        out
    }
}

/// Maps induced symbols with M-1 and scores preterminals and rules.
pub fn labeling_report(preds: &[BinarizedTree], golds: &[BinarizedTree]) -> Result<LabelingReport, EvalError> {
    if preds.len() != golds.len() {
        return Err(EvalError::CorpusSize { pred: preds.len(), gold: golds.len() });
    }
    let pred_tags: Vec<Vec<&str>> = preds.iter().map(BinarizedTree::leaf_labels).collect();
    let gold_tags: Vec<Vec<&str>> = golds.iter().map(BinarizedTree::leaf_labels).collect();
    for (index, (p, g)) in pred_tags.iter().zip(&gold_tags).enumerate() {
        if p.len() != g.len() {
            return Err(EvalError::TokenCount { index, pred: p.len(), gold: g.len() });
        }
    }
    let pt_map = m1_map(pred_tags.iter().zip(&gold_tags).flat_map(|(p, g)| p.iter().zip(g.iter())))?;
    let nt_pairs: Vec<(&str, &str)> = preds.iter().zip(golds).flat_map(|(p, g)| nonterminal_pairs(p, g)).collect();
    let nt_map = if nt_pairs.is_empty() {
        M1Mapping { map: BTreeMap::new(), counts: BTreeMap::new() }
    } else {
        m1_map(nt_pairs)?
    };
    let rule_accuracy = match rule_accuracy(preds, golds, &nt_map, &pt_map) {
        Ok(r) => Some(r),
        Err(EvalError::Empty) => None,
        Err(e) => return Err(e),
    };
    Ok(LabelingReport {
        num_sentences: preds.len(),
        num_tokens: pred_tags.iter().map(Vec::len).sum(),
        preterminal_accuracy: preterminal_accuracy(&pred_tags, &gold_tags, &pt_map)?,
        rule_accuracy,
        preterminal_map: pt_map.map,
        nonterminal_map: nt_map.map,
    })
}
