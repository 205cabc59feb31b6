//! Tabular PCFG with anonymized symbols.
//!
//! Rules are `S -> A` (A a nonterminal), `A -> B C` (B, C nonterminals or
//! preterminals) and `T -> w` (T a preterminal). Nonterminals are named
//! `NT-1..`, preterminals `T-1..`. Probabilities are stored as plain
//! tables; every chart computation runs on rescaled vectors that carry
//! their magnitude as a separate log term.

mod em;
mod inside;

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tree::{ParseTree, Span};
use crate::treebank::BinarizedTree;

pub use em::{em_train, TrainConfig, TrainReport};
pub use inside::{best_preterminal, marginal_loglik, tree_joint_loglik, viterbi_label};

pub const UNK: &str = "<unk>";
const NORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum PcfgError {
    #[error("word {0:?} is not in the vocabulary and the grammar has no UNK")]
    OutOfVocabulary(String),
    #[error("single-word sentences have no derivation (S -> A needs a nonterminal)")]
    SingleWord,
    #[error("tree has {tree} leaves but the sentence has {words} words")]
    LengthMismatch { tree: usize, words: usize },
    #[error("training corpus has no sentence with at least two words")]
    EmptyCorpus,
    #[error("invalid grammar: {0}")]
    Invalid(String),
}

/// A grammar symbol: nonterminal or preterminal, 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Symbol {
    Nt(usize),
    Pt(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grammar {
    num_nt: usize,
    num_pt: usize,
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    unk: Option<usize>,
    root: Vec<f64>,
    // num_nt x M x M with M = num_nt + num_pt; nonterminals first
    binary: Vec<f64>,
    // num_pt x |vocab|
    lexical: Vec<f64>,
}

impl Grammar {
    /// Builds a grammar from flat tables and validates normalization.
    ///
    /// `vocab` lists the terminal words; if it contains [`UNK`], unknown
    /// words map to it.
    pub fn new(
        num_nt: usize,
        num_pt: usize,
        vocab: Vec<String>,
        root: Vec<f64>,
        binary: Vec<f64>,
        lexical: Vec<f64>,
    ) -> Result<Self, PcfgError> {
        let m = num_nt + num_pt;
        if num_nt == 0 || num_pt == 0 {
            return Err(PcfgError::Invalid("need at least one nonterminal and one preterminal".into()));
        }
        if root.len() != num_nt || binary.len() != num_nt * m * m || lexical.len() != num_pt * vocab.len() {
            return Err(PcfgError::Invalid("table sizes do not match the symbol inventory".into()));
        }
        let index: HashMap<String, usize> = vocab.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        if index.len() != vocab.len() {
            return Err(PcfgError::Invalid("vocabulary has duplicates".into()));
        }
        let unk = index.get(UNK).copied();
        let g = Grammar { num_nt, num_pt, vocab, index, unk, root, binary, lexical };
        g.validate()?;
        Ok(g)
    }

    pub fn num_nt(&self) -> usize {
        self.num_nt
    }

    pub fn num_pt(&self) -> usize {
        self.num_pt
    }

    pub fn num_symbols(&self) -> usize {
        self.num_nt + self.num_pt
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub(crate) fn sym_index(&self, s: Symbol) -> usize {
        match s {
            Symbol::Nt(a) => a,
            Symbol::Pt(t) => self.num_nt + t,
        }
    }

    pub fn symbol_name(&self, s: Symbol) -> String {
        match s {
            Symbol::Nt(a) => format!("NT-{}", a + 1),
            Symbol::Pt(t) => format!("T-{}", t + 1),
        }
    }

    fn parse_symbol(&self, name: &str) -> Option<Symbol> {
        let (kind, id) = name.split_once('-')?;
        let id: usize = id.parse().ok()?;
        match kind {
            "NT" if id >= 1 && id <= self.num_nt => Some(Symbol::Nt(id - 1)),
            "T" if id >= 1 && id <= self.num_pt => Some(Symbol::Pt(id - 1)),
            _ => None,
        }
    }

    pub fn root_prob(&self, a: usize) -> f64 {
        self.root[a]
    }

    pub fn binary_prob(&self, a: usize, b: Symbol, c: Symbol) -> f64 {
        let m = self.num_symbols();
        self.binary[(a * m + self.sym_index(b)) * m + self.sym_index(c)]
    }

    pub fn lexical_prob(&self, t: usize, word: usize) -> f64 {
        self.lexical[t * self.vocab.len() + word]
    }

    pub(crate) fn binary_row(&self, a: usize) -> &[f64] {
        let m = self.num_symbols();
        &self.binary[a * m * m..(a + 1) * m * m]
    }

    /// Vocabulary index of a surface word (lowercased, rare words to UNK).
    pub fn word_id(&self, word: &str) -> Result<usize, PcfgError> {
        let lower = word.to_lowercase();
        self.index
            .get(&lower)
            .copied()
            .or(self.unk)
            .ok_or(PcfgError::OutOfVocabulary(lower))
    }

    pub fn validate(&self) -> Result<(), PcfgError> {
        let all = self.root.iter().chain(&self.binary).chain(&self.lexical);
        if all.clone().any(|p| !(0.0..=1.0 + NORM_TOLERANCE).contains(p)) {
            return Err(PcfgError::Invalid("probability outside [0, 1]".into()));
        }
        let check = |row: &[f64], what: String| {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > NORM_TOLERANCE {
                Err(PcfgError::Invalid(format!("{what} sums to {s}")))
            } else {
                Ok(())
            }
        };
        check(&self.root, "root distribution".into())?;
        for a in 0..self.num_nt {
            check(self.binary_row(a), format!("rules of NT-{}", a + 1))?;
        }
        let v = self.vocab.len();
        for t in 0..self.num_pt {
            check(&self.lexical[t * v..(t + 1) * v], format!("emissions of T-{}", t + 1))?;
        }
        Ok(())
    }

    /// Grammar with Dirichlet(1) rows drawn from `rng`.
    pub fn random<R: Rng>(num_nt: usize, num_pt: usize, vocab: Vec<String>, rng: &mut R) -> Result<Self, PcfgError> {
        let m = num_nt + num_pt;
        let v = vocab.len();
        let mut draw = |len: usize| -> Vec<f64> {
            let mut row: Vec<f64> = (0..len).map(|_| rng.sample::<f64, _>(rand_distr::Exp1)).collect();
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= s);
            row
        };
        let root = draw(num_nt);
        let binary = (0..num_nt).flat_map(|_| draw(m * m)).collect();
        let lexical = (0..num_pt).flat_map(|_| draw(v)).collect();
        Grammar::new(num_nt, num_pt, vocab, root, binary, lexical)
    }

    /// Samples a sentence with its labeled derivation. Returns `None` if
    /// the derivation exceeds `max_words`.
    pub fn sample<R: Rng>(&self, rng: &mut R, max_words: usize) -> Option<BinarizedTree> {
        fn pick<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (i, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    return i;
                }
            }
            probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
        }
        fn expand<R: Rng>(g: &Grammar, rng: &mut R, sym: usize, budget: &mut usize) -> Option<BinarizedTree> {
            let m = g.num_symbols();
            if sym >= g.num_nt {
                let t = sym - g.num_nt;
                if *budget == 0 {
                    return None;
                }
                *budget -= 1;
                let v = g.vocab.len();
                let w = pick(rng, &g.lexical[t * v..(t + 1) * v]);
                return Some(BinarizedTree::Leaf { label: g.symbol_name(Symbol::Pt(t)), word: g.vocab[w].clone() });
            }
            let bc = pick(rng, g.binary_row(sym));
            let left = expand(g, rng, bc / m, budget)?;
            let right = expand(g, rng, bc % m, budget)?;
            Some(BinarizedTree::Node {
                label: g.symbol_name(Symbol::Nt(sym)),
                left: Box::new(left),
                right: Box::new(right),
                propagated: false,
            })
        }
        let a = pick(rng, &self.root);
        let mut budget = max_words;
        expand(self, rng, a, &mut budget)
    }

    pub fn to_json(&self) -> String {
        let nt = |a: usize| self.symbol_name(Symbol::Nt(a));
        let sym = |i: usize| {
            if i < self.num_nt {
                self.symbol_name(Symbol::Nt(i))
            } else {
                self.symbol_name(Symbol::Pt(i - self.num_nt))
            }
        };
        let m = self.num_symbols();
        let v = self.vocab.len();
        let doc = GrammarDoc {
            start: "S".into(),
            nonterminals: (0..self.num_nt).map(nt).collect(),
            preterminals: (0..self.num_pt).map(|t| self.symbol_name(Symbol::Pt(t))).collect(),
            vocabulary: self.vocab.clone(),
            unk: self.unk.map(|_| UNK.to_string()),
            root: (0..self.num_nt).filter(|&a| self.root[a] > 0.0).map(|a| (nt(a), self.root[a].ln())).collect(),
            binary: (0..self.num_nt)
                .map(|a| {
                    let row = self.binary_row(a);
                    let rules = (0..m * m)
                        .filter(|&bc| row[bc] > 0.0)
                        .map(|bc| (format!("{} {}", sym(bc / m), sym(bc % m)), row[bc].ln()))
                        .collect();
                    (nt(a), rules)
                })
                .collect(),
            lexical: (0..self.num_pt)
                .map(|t| {
                    let row = &self.lexical[t * v..(t + 1) * v];
                    let words = (0..v).filter(|&w| row[w] > 0.0).map(|w| (self.vocab[w].clone(), row[w].ln())).collect();
                    (self.symbol_name(Symbol::Pt(t)), words)
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("grammar serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PcfgError> {
        let doc: GrammarDoc = serde_json::from_str(text).map_err(|e| PcfgError::Invalid(e.to_string()))?;
        let num_nt = doc.nonterminals.len();
        let num_pt = doc.preterminals.len();
        let m = num_nt + num_pt;
        let v = doc.vocabulary.len();
        let mut shell = Grammar {
            num_nt,
            num_pt,
            vocab: doc.vocabulary.clone(),
            index: HashMap::new(),
            unk: None,
            root: vec![0.0; num_nt],
            binary: vec![0.0; num_nt * m * m],
            lexical: vec![0.0; num_pt * v],
        };
        let bad = |what: &str| PcfgError::Invalid(format!("unknown symbol {what:?}"));
        let nt_of = |g: &Grammar, s: &str| match g.parse_symbol(s) {
            Some(Symbol::Nt(a)) => Ok(a),
            _ => Err(bad(s)),
        };
        for (s, lp) in &doc.root {
            let a = nt_of(&shell, s)?;
            shell.root[a] = lp.exp();
        }
        for (s, rules) in &doc.binary {
            let a = nt_of(&shell, s)?;
            for (rhs, lp) in rules {
                let (b, c) = rhs.split_once(' ').ok_or_else(|| bad(rhs))?;
                let b = shell.parse_symbol(b).ok_or_else(|| bad(b))?;
                let c = shell.parse_symbol(c).ok_or_else(|| bad(c))?;
                let idx = (a * m + shell.sym_index(b)) * m + shell.sym_index(c);
                shell.binary[idx] = lp.exp();
            }
        }
        let windex: HashMap<&str, usize> = doc.vocabulary.iter().enumerate().map(|(i, w)| (w.as_str(), i)).collect();
        for (s, words) in &doc.lexical {
            let t = match shell.parse_symbol(s) {
                Some(Symbol::Pt(t)) => t,
                _ => return Err(bad(s)),
            };
            for (w, lp) in words {
                let wi = *windex.get(w.as_str()).ok_or_else(|| PcfgError::Invalid(format!("word {w:?} not in vocabulary")))?;
                shell.lexical[t * v + wi] = lp.exp();
            }
        }
        // exp(ln p) drifts by an ulp or two; renormalize rows
        renormalize(&mut shell.root);
        for a in 0..num_nt {
            renormalize(&mut shell.binary[a * m * m..(a + 1) * m * m]);
        }
        for t in 0..num_pt {
            renormalize(&mut shell.lexical[t * v..(t + 1) * v]);
        }
        Grammar::new(num_nt, num_pt, doc.vocabulary, shell.root, shell.binary, shell.lexical)
    }
}

fn renormalize(row: &mut [f64]) {
    let s: f64 = row.iter().sum();
    if s > 0.0 {
        row.iter_mut().for_each(|x| *x /= s);
    }
}

#[derive(Serialize, Deserialize)]
struct GrammarDoc {
    start: String,
    nonterminals: Vec<String>,
    preterminals: Vec<String>,
    vocabulary: Vec<String>,
    unk: Option<String>,
    root: BTreeMap<String, f64>,
    binary: BTreeMap<String, BTreeMap<String, f64>>,
    lexical: BTreeMap<String, BTreeMap<String, f64>>,
}

/// Post-order view of a binary tree: leaves and internal nodes with child indices.
#[derive(Debug, Clone)]
pub(crate) struct TreeNodes {
    pub nodes: Vec<TreeNode>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct TreeNode {
    pub span: Span,
    pub kids: Option<(usize, usize)>,
}

impl TreeNodes {
    pub fn new(tree: &ParseTree) -> Self {
        fn go(t: &ParseTree, s: Span, out: &mut Vec<TreeNode>) -> usize {
            let kids = t.children(s).map(|(l, r)| (go(t, l, out), go(t, r, out)));
            out.push(TreeNode { span: s, kids });
            out.len() - 1
        }
        let mut nodes = Vec::with_capacity(2 * tree.n() - 1);
        go(tree, Span::new(1, tree.n()), &mut nodes);
        TreeNodes { nodes }
    }

    pub fn root(&self) -> usize {
        self.nodes.len() - 1
    }
}
