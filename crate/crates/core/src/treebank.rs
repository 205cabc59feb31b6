//! Bracketed treebank trees: reading, preprocessing, binarization, baselines.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::tree::{ParseTree, Span};

#[derive(Debug, Error)]
pub enum TreebankError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("tree is not binary: {0}")]
    NotBinary(String),
}

/// A treebank tree. A preterminal is a node whose only child is a terminal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabeledTree {
    Node { label: String, children: Vec<LabeledTree> },
    Terminal(String),
}

impl LabeledTree {
    pub fn node(label: impl Into<String>, children: Vec<LabeledTree>) -> Self {
        LabeledTree::Node { label: label.into(), children }
    }

    pub fn preterminal(label: impl Into<String>, word: impl Into<String>) -> Self {
        LabeledTree::Node { label: label.into(), children: vec![LabeledTree::Terminal(word.into())] }
    }

    pub fn label(&self) -> Option<&str> {
        match self {
            LabeledTree::Node { label, .. } => Some(label),
            LabeledTree::Terminal(_) => None,
        }
    }

    pub fn is_preterminal(&self) -> bool {
        matches!(self, LabeledTree::Node { children, .. }
            if children.len() == 1 && matches!(children[0], LabeledTree::Terminal(_)))
    }

    /// Words at the leaves, left to right.
    pub fn words(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.walk_preterminals(&mut |_, w| out.push(w));
        out
    }

    /// Labels of the nodes directly above each word.
    pub fn pos_tags(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.walk_preterminals(&mut |t, _| out.push(t));
        out
    }

    fn walk_preterminals<'a>(&'a self, f: &mut impl FnMut(&'a str, &'a str)) {
        if let LabeledTree::Node { label, children } = self {
            for c in children {
                match c {
                    LabeledTree::Terminal(w) => f(label, w),
                    node => node.walk_preterminals(f),
                }
            }
        }
    }

    pub fn num_words(&self) -> usize {
        match self {
            LabeledTree::Terminal(_) => 1,
            LabeledTree::Node { children, .. } => children.iter().map(LabeledTree::num_words).sum(),
        }
    }

    /// Replaces the label above each word with `tags[i]`.
    pub fn with_preterminals<S: AsRef<str>>(&self, tags: &[S]) -> LabeledTree {
        fn go<S: AsRef<str>>(t: &LabeledTree, tags: &[S], next: &mut usize) -> LabeledTree {
            match t {
                LabeledTree::Terminal(w) => LabeledTree::Terminal(w.clone()),
                LabeledTree::Node { label, children } => {
                    let is_pre = children.len() == 1 && matches!(children[0], LabeledTree::Terminal(_));
                    let label = if is_pre {
                        *next += 1;
                        tags[*next - 1].as_ref().to_string()
                    } else {
                        label.clone()
                    };
                    LabeledTree::Node { label, children: children.iter().map(|c| go(c, tags, next)).collect() }
                }
            }
        }
        go(self, tags, &mut 0)
    }
}

impl fmt::Display for LabeledTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabeledTree::Terminal(w) => f.write_str(w),
            LabeledTree::Node { label, children } => {
                write!(f, "({label}")?;
                for c in children {
                    write!(f, " {c}")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// Reads every tree of a bracketed treebank file.
pub fn read_bracketed(path: impl AsRef<Path>) -> Result<Vec<LabeledTree>, TreebankError> {
    parse_bracketed(&fs::read_to_string(path)?)
}

/// Parses whitespace-insensitive bracketed trees.
///
/// Function tags (`NP-SBJ`, `NP=2`) are stripped, `-NONE-` subtrees are
/// removed together with any node left empty, and an unlabeled outer
/// wrapper `( (S ..) )` is unwrapped.
pub fn parse_bracketed(text: &str) -> Result<Vec<LabeledTree>, TreebankError> {
    parse_with(text, true)
}

/// Like [`parse_bracketed`] but keeps labels and empty elements as written.
pub fn parse_bracketed_verbatim(text: &str) -> Result<Vec<LabeledTree>, TreebankError> {
    parse_with(text, false)
}

fn parse_with(text: &str, cleanup: bool) -> Result<Vec<LabeledTree>, TreebankError> {
    let mut parser = SexpParser { text: text.as_bytes(), pos: 0 };
    let mut out = Vec::new();
    loop {
        parser.skip_ws();
        if parser.pos >= parser.text.len() {
            break;
        }
        if parser.text[parser.pos] != b'(' {
            return Err(parser.error("expected '('"));
        }
        let raw = parser.tree()?;
        let tree = match raw {
            LabeledTree::Node { label, mut children } if label.is_empty() && children.len() == 1 => children.remove(0),
            other => other,
        };
        if !cleanup {
            out.push(tree);
        } else if let Some(t) = clean(tree) {
            out.push(t);
        }
    }
    Ok(out)
}

struct SexpParser<'a> {
    text: &'a [u8],
    pos: usize,
}

impl SexpParser<'_> {
    fn error(&self, message: &str) -> TreebankError {
        TreebankError::Parse { offset: self.pos, message: message.to_string() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.text.len() && self.text[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn atom(&mut self) -> String {
        let start = self.pos;
        while self.pos < self.text.len() {
            let b = self.text[self.pos];
            if b.is_ascii_whitespace() || b == b'(' || b == b')' {
                break;
            }
            self.pos += 1;
        }
        String::from_utf8_lossy(&self.text[start..self.pos]).into_owned()
    }

    // at '('
    fn tree(&mut self) -> Result<LabeledTree, TreebankError> {
        self.pos += 1;
        self.skip_ws();
        let label = match self.text.get(self.pos) {
            None => return Err(self.error("unexpected end of input")),
            Some(b'(') | Some(b')') => String::new(),
            Some(_) => self.atom(),
        };
        let mut children = Vec::new();
        loop {
            self.skip_ws();
            match self.text.get(self.pos) {
                None => return Err(self.error("unbalanced brackets: unexpected end of input")),
                Some(b')') => {
                    self.pos += 1;
                    break;
                }
                Some(b'(') => children.push(self.tree()?),
                Some(_) => children.push(LabeledTree::Terminal(self.atom())),
            }
        }
        if children.is_empty() {
            return Err(self.error("empty constituent"));
        }
        Ok(LabeledTree::Node { label, children })
    }
}

/// `NP-SBJ-1` -> `NP`, `NP=2` -> `NP`; labels such as `-NONE-` are kept.
pub fn strip_function_tags(label: &str) -> &str {
    if label.starts_with('-') {
        return label;
    }
    match label.char_indices().find(|&(i, c)| i > 0 && (c == '-' || c == '=')) {
        Some((i, _)) => &label[..i],
        None => label,
    }
}

fn clean(tree: LabeledTree) -> Option<LabeledTree> {
    match tree {
        LabeledTree::Terminal(w) => Some(LabeledTree::Terminal(w)),
        LabeledTree::Node { label, children } => {
            if label == "-NONE-" {
                return None;
            }
            let children: Vec<LabeledTree> = children.into_iter().filter_map(clean).collect();
            if children.is_empty() {
                return None;
            }
            Some(LabeledTree::Node { label: strip_function_tags(&label).to_string(), children })
        }
    }
}

/// Tokens dropped before parsing and evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PunctuationSet {
    pub tags: BTreeSet<String>,
}

impl Default for PunctuationSet {
    fn default() -> Self {
        let tags = ["#", "$", "''", "``", ",", ".", ":", "-LRB-", "-RRB-"];
        PunctuationSet { tags: tags.iter().map(|s| s.to_string()).collect() }
    }
}

impl PunctuationSet {
    pub fn is_punct_tag(&self, tag: &str) -> bool {
        self.tags.contains(tag)
    }

    /// Fallback for raw text: a token made only of non-alphanumeric characters.
    pub fn is_punct_token(token: &str) -> bool {
        !token.is_empty() && !token.chars().any(char::is_alphanumeric)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub words: Vec<String>,
    pub gold_pos: Option<Vec<String>>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Drops punctuation and collapses unary chains (topmost label wins).
///
/// Returns `None` when nothing survives. The returned sentence keeps the
/// surface forms and the original POS tags of the surviving words.
pub fn preprocess(tree: &LabeledTree, punct: &PunctuationSet) -> Option<(Sentence, LabeledTree)> {
    let pruned = drop_punct(tree, punct)?;
    let words = pruned.words().into_iter().map(str::to_string).collect();
    let gold_pos = Some(pruned.pos_tags().into_iter().map(str::to_string).collect());
    Some((Sentence { words, gold_pos }, collapse_unary(pruned)))
}

fn drop_punct(tree: &LabeledTree, punct: &PunctuationSet) -> Option<LabeledTree> {
    match tree {
        LabeledTree::Terminal(w) => Some(LabeledTree::Terminal(w.clone())),
        LabeledTree::Node { label, children } => {
            if tree.is_preterminal() && punct.is_punct_tag(label) {
                return None;
            }
            let kept: Vec<LabeledTree> = children.iter().filter_map(|c| drop_punct(c, punct)).collect();
            if kept.is_empty() {
                None
            } else {
                Some(LabeledTree::Node { label: label.clone(), children: kept })
            }
        }
    }
}

fn collapse_unary(tree: LabeledTree) -> LabeledTree {
    match tree {
        LabeledTree::Terminal(w) => LabeledTree::Terminal(w),
        LabeledTree::Node { label, mut children } => {
            // descend through unary chains, keeping the topmost label
            while children.len() == 1 {
                match children.pop().expect("one child") {
                    LabeledTree::Terminal(w) => {
                        return LabeledTree::Node { label, children: vec![LabeledTree::Terminal(w)] };
                    }
                    LabeledTree::Node { children: inner, .. } => children = inner,
                }
            }
            LabeledTree::Node { label, children: children.into_iter().map(collapse_unary).collect() }
        }
    }
}

/// A fully binary labeled tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BinarizedTree {
    Leaf { label: String, word: String },
    /// `propagated` marks nodes introduced by binarization.
    Node { label: String, left: Box<BinarizedTree>, right: Box<BinarizedTree>, propagated: bool },
}

impl BinarizedTree {
    pub fn label(&self) -> &str {
        match self {
            BinarizedTree::Leaf { label, .. } | BinarizedTree::Node { label, .. } => label,
        }
    }

    pub fn num_words(&self) -> usize {
        match self {
            BinarizedTree::Leaf { .. } => 1,
            BinarizedTree::Node { left, right, .. } => left.num_words() + right.num_words(),
        }
    }

    pub fn words(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.visit(1, &mut |node, _| {
            if let BinarizedTree::Leaf { word, .. } = node {
                out.push(word.as_str());
            }
        });
        out
    }

    /// Labels of the leaves.
    pub fn leaf_labels(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.visit(1, &mut |node, _| {
            if let BinarizedTree::Leaf { label, .. } = node {
                out.push(label.as_str());
            }
        });
        out
    }

    /// Pre-order walk with the span of every node.
    pub fn visit<'a>(&'a self, start: usize, f: &mut impl FnMut(&'a BinarizedTree, Span)) {
        let span = Span::new(start, start + self.num_words() - 1);
        f(self, span);
        if let BinarizedTree::Node { left, right, .. } = self {
            let mid = start + left.num_words();
            left.visit(start, f);
            right.visit(mid, f);
        }
    }

    /// Internal nodes as `(span, split, parent, left label, right label)`.
    pub fn productions(&self) -> Vec<(Span, usize, &str, &str, &str)> {
        let mut out = Vec::new();
        self.visit(1, &mut |node, span| {
            if let BinarizedTree::Node { label, left, right, .. } = node {
                let k = span.i + left.num_words() - 1;
                out.push((span, k, label.as_str(), left.label(), right.label()));
            }
        });
        out
    }

    pub fn to_parse_tree(&self) -> ParseTree {
        let mut spans = Vec::new();
        self.visit(1, &mut |_, s| spans.push(s));
        ParseTree::from_spans(self.num_words(), spans).expect("binary tree yields a valid span set")
    }

    /// Converts a labeled tree that is already binary, with a preterminal
    /// over every word.
    pub fn from_labeled(tree: &LabeledTree) -> Result<BinarizedTree, TreebankError> {
        match tree {
            LabeledTree::Node { label, children } => match children.as_slice() {
                [LabeledTree::Terminal(w)] => Ok(BinarizedTree::Leaf { label: label.clone(), word: w.clone() }),
                [l, r] => Ok(BinarizedTree::Node {
                    label: label.clone(),
                    left: Box::new(BinarizedTree::from_labeled(l)?),
                    right: Box::new(BinarizedTree::from_labeled(r)?),
                    propagated: false,
                }),
                _ => Err(TreebankError::NotBinary(format!("{label} has {} children", children.len()))),
            },
            LabeledTree::Terminal(w) => Err(TreebankError::NotBinary(format!("bare word {w:?} without a preterminal"))),
        }
    }

    /// Builds a labeled tree over `words` shaped like `tree`.
    pub fn from_parse_tree<S: AsRef<str>>(
        tree: &ParseTree,
        words: &[S],
        mut label: impl FnMut(Span) -> String,
    ) -> BinarizedTree {
        fn go<S: AsRef<str>>(t: &ParseTree, s: Span, words: &[S], label: &mut impl FnMut(Span) -> String) -> BinarizedTree {
            match t.children(s) {
                None => BinarizedTree::Leaf { label: label(s), word: words[s.i - 1].as_ref().to_string() },
                Some((l, r)) => BinarizedTree::Node {
                    label: label(s),
                    left: Box::new(go(t, l, words, label)),
                    right: Box::new(go(t, r, words, label)),
                    propagated: false,
                },
            }
        }
        go(tree, Span::new(1, tree.n()), words, &mut label)
    }

    /// Undoes binarization by splicing propagated nodes into their parents.
    pub fn unbinarize(&self) -> LabeledTree {
        match self {
            BinarizedTree::Leaf { label, word } => LabeledTree::preterminal(label.clone(), word.clone()),
            BinarizedTree::Node { label, left, right, .. } => {
                let mut children = vec![left.unbinarize()];
                let mut rest = right.as_ref();
                loop {
                    match rest {
                        BinarizedTree::Node { left, right, propagated: true, .. } => {
                            children.push(left.unbinarize());
                            rest = right;
                        }
                        other => {
                            children.push(other.unbinarize());
                            break;
                        }
                    }
                }
                LabeledTree::Node { label: label.clone(), children }
            }
        }
    }
}

impl fmt::Display for BinarizedTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BinarizedTree::Leaf { label, word } => write!(f, "({label} {word})"),
            BinarizedTree::Node { label, left, right, .. } => write!(f, "({label} {left} {right})"),
        }
    }
}

/// Right-branching binarization: `A -> B C D` becomes `A -> B A`, `A -> C D`.
/// Unary nodes above other nodes are dropped, keeping the upper label.
pub fn binarize_gold(tree: &LabeledTree) -> BinarizedTree {
    match tree {
        LabeledTree::Terminal(w) => BinarizedTree::Leaf { label: String::new(), word: w.clone() },
        LabeledTree::Node { label, children } => {
            if children.len() == 1 {
                return match &children[0] {
                    LabeledTree::Terminal(w) => BinarizedTree::Leaf { label: label.clone(), word: w.clone() },
                    inner => relabel(binarize_gold(inner), label),
                };
            }
            let mut parts: Vec<BinarizedTree> = children.iter().map(binarize_gold).collect();
            let mut right = parts.pop().expect("at least two children");
            let mut left = parts.pop().expect("at least two children");
            loop {
                let propagated = !parts.is_empty();
                let node = BinarizedTree::Node { label: label.clone(), left: Box::new(left), right: Box::new(right), propagated };
                match parts.pop() {
                    Some(next) => {
                        right = node;
                        left = next;
                    }
                    None => return node,
                }
            }
        }
    }
}

fn relabel(t: BinarizedTree, label: &str) -> BinarizedTree {
    match t {
        BinarizedTree::Leaf { word, .. } => BinarizedTree::Leaf { label: label.to_string(), word },
        BinarizedTree::Node { left, right, propagated, .. } => {
            BinarizedTree::Node { label: label.to_string(), left, right, propagated }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMode {
    Right,
    Left,
    Balanced,
}

pub fn baseline_tree(n: usize, mode: BaselineMode) -> ParseTree {
    match mode {
        BaselineMode::Right => ParseTree::from_splits(n, |i, _| i),
        BaselineMode::Left => ParseTree::from_splits(n, |_, j| j - 1),
        // left half takes ceil(len / 2) leaves
        BaselineMode::Balanced => ParseTree::from_splits(n, |i, j| i + (j - i + 1).div_ceil(2) - 1),
    }
}

/// Gold constituents of a tree as labeled spans over word positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSpans {
    pub n: usize,
    pub spans: Vec<(Span, String)>,
}

impl LabeledSpans {
    pub fn unlabeled(&self) -> BTreeSet<Span> {
        self.spans.iter().map(|(s, _)| *s).collect()
    }
}

/// Every node's span and label, preterminals included.
pub fn strip_to_spans(tree: &LabeledTree) -> LabeledSpans {
    fn go(t: &LabeledTree, start: usize, out: &mut Vec<(Span, String)>) -> usize {
        match t {
            LabeledTree::Terminal(_) => 1,
            LabeledTree::Node { label, children } => {
                let mut width = 0;
                for c in children {
                    width += go(c, start + width, out);
                }
                out.push((Span::new(start, start + width - 1), label.clone()));
                width
            }
        }
    }
    let mut spans = Vec::new();
    let n = go(tree, 1, &mut spans);
    spans.sort();
    LabeledSpans { n, spans }
}
