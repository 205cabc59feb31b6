//! Gold treebank loading and alignment with predicted trees.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use attnparse::ensemble::parse_unlabeled;
use attnparse::treebank::{
    binarize_gold, preprocess, read_bracketed, strip_to_spans, BinarizedTree, LabeledSpans, LabeledTree,
    PunctuationSet, Sentence,
};
use attnparse::ParseTree;

/// A gold tree after punctuation removal and unary collapse.
pub struct GoldItem {
    pub sentence: Sentence,
    pub tree: LabeledTree,
}

impl GoldItem {
    pub fn spans(&self) -> LabeledSpans {
        strip_to_spans(&self.tree)
    }

    /// Binarized gold tree whose leaves carry the gold POS tags.
    pub fn binarized(&self) -> Result<BinarizedTree> {
        let pos = self.sentence.gold_pos.as_ref().context("gold tree has no POS tags")?;
        Ok(binarize_gold(&self.tree.with_preterminals(pos)))
    }
}

/// Reads and preprocesses a treebank; trees that are all punctuation are dropped.
pub fn load_gold(path: &Path) -> Result<Vec<GoldItem>> {
    let trees = read_bracketed(path).with_context(|| format!("reading treebank {}", path.display()))?;
    let punct = PunctuationSet::default();
    let items: Vec<GoldItem> = trees
        .iter()
        .filter_map(|t| preprocess(t, &punct))
        .map(|(sentence, tree)| GoldItem { sentence, tree })
        .collect();
    if items.is_empty() {
        bail!("{} contains no usable trees", path.display());
    }
    Ok(items)
}

/// Reads one unlabeled bracketed tree per non-empty line.
pub fn read_unlabeled(path: &Path) -> Result<Vec<(Vec<String>, ParseTree)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(no, l)| parse_unlabeled(l).with_context(|| format!("{} line {}", path.display(), no + 1)))
        .collect()
}

/// Fails on the first sentence whose words differ from the gold sentence.
pub fn check_aligned<P: AsRef<[S]>, S: AsRef<str>>(pred: &[P], gold: &[GoldItem]) -> Result<()> {
    for (idx, (p, g)) in pred.iter().zip(gold).enumerate() {
        let p = p.as_ref();
        let id = idx + 1;
        if p.len() != g.sentence.words.len() {
            bail!(
                "sentence {id} is misaligned: prediction has {} tokens, gold has {}",
                p.len(),
                g.sentence.words.len()
            );
        }
        if let Some(t) = p.iter().zip(&g.sentence.words).position(|(a, b)| a.as_ref() != b) {
            bail!(
                "sentence {id} is misaligned at token {}: {:?} in predictions, {:?} in gold",
                t + 1,
                p[t].as_ref(),
                g.sentence.words[t]
            );
        }
    }
    if pred.len() != gold.len() {
        bail!("corpus sizes differ: {} predicted sentences, {} gold sentences", pred.len(), gold.len());
    }
    Ok(())
}
