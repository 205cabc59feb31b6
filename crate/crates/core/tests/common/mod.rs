//! Shared fixtures and brute-force oracles for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use attnparse::chart::{s_characteristic, s_pair};
use attnparse::pcfg::{Grammar, Symbol};
use attnparse::ranking::{s_characteristic_cross, s_pair_cross, Cross, RankScoreConfig};
use attnparse::{AttnMatrix, Composition, Distance, HeadId, ParseTree, ScoreConfig, SentenceRecord, Span};
use rand::Rng;
use rand_distr::Exp1;

/// Every binary tree over leaves `i..=j`, as lists of spans.
fn span_lists(i: usize, j: usize) -> Vec<Vec<Span>> {
    if i == j {
        return vec![vec![Span::new(i, i)]];
    }
    let mut out = Vec::new();
    for k in i..j {
        let left = span_lists(i, k);
        let right = span_lists(k + 1, j);
        for l in &left {
            for r in &right {
                let mut s = Vec::with_capacity(l.len() + r.len() + 1);
                s.push(Span::new(i, j));
                s.extend_from_slice(l);
                s.extend_from_slice(r);
                out.push(s);
            }
        }
    }
    out
}

pub fn all_trees(n: usize) -> Vec<ParseTree> {
    span_lists(1, n).into_iter().map(|s| ParseTree::from_spans(n, s).unwrap()).collect()
}

pub fn catalan(m: usize) -> usize {
    (0..m).fold(1usize, |c, k| c * 2 * (2 * k + 1) / (k + 2))
}

/// Uniform random split at every node.
pub fn random_tree<R: Rng>(rng: &mut R, n: usize) -> ParseTree {
    ParseTree::from_splits(n, |i, j| rng.random_range(i..j))
}

/// Rows drawn from a flat Dirichlet, with an occasional exact zero.
pub fn random_matrix<R: Rng>(rng: &mut R, n: usize) -> AttnMatrix {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let mut r: Vec<f64> =
                (0..n).map(|_| if rng.random_bool(0.1) { 0.0 } else { rng.sample::<f64, _>(Exp1) }).collect();
            if r.iter().all(|&v| v == 0.0) {
                r[0] = 1.0;
            }
            let s: f64 = r.iter().sum();
            r.iter_mut().for_each(|v| *v /= s);
            r
        })
        .collect();
    AttnMatrix::from_rows(&rows)
}

fn depths(tree: &ParseTree) -> BTreeMap<Span, usize> {
    let mut out = BTreeMap::new();
    let mut stack = vec![(Span::new(1, tree.n()), 0)];
    while let Some((s, d)) = stack.pop() {
        out.insert(s, d);
        if let Some((l, r)) = tree.children(s) {
            stack.push((l, d + 1));
            stack.push((r, d + 1));
        }
    }
    out
}

/// Each row is the normalized sum of the indicators of the token's ancestor
/// spans, a span at depth `d` weighted by `base^d`.
pub fn planted_matrix(tree: &ParseTree, base: f64) -> AttnMatrix {
    let n = tree.n();
    let mut rows = vec![vec![0.0; n]; n];
    for (s, d) in depths(tree) {
        let w = base.powi(d as i32);
        for x in s.i..=s.j {
            for y in s.i..=s.j {
                rows[x - 1][y - 1] += w;
            }
        }
    }
    for r in &mut rows {
        let t: f64 = r.iter().sum();
        r.iter_mut().for_each(|v| *v /= t);
    }
    AttnMatrix::from_rows(&rows)
}

pub fn uniform_matrix(n: usize) -> AttnMatrix {
    AttnMatrix::from_rows(&vec![vec![1.0 / n as f64; n]; n])
}

pub fn identity_matrix(n: usize) -> AttnMatrix {
    let rows: Vec<Vec<f64>> = (0..n).map(|x| (0..n).map(|y| if x == y { 1.0 } else { 0.0 }).collect()).collect();
    AttnMatrix::from_rows(&rows)
}

pub fn record(id: &str, mats: Vec<(HeadId, AttnMatrix)>) -> SentenceRecord {
    let n = mats[0].1.n();
    SentenceRecord { id: id.to_string(), tokens: (1..=n).map(|x| format!("w{x}")).collect(), attn: mats.into_iter().collect() }
}

fn rows(m: &AttnMatrix, i: usize, j: usize) -> Vec<&[f64]> {
    (i..=j).map(|x| m.row(x - 1)).collect()
}

/// Span and split scores of one matrix, computed with the standalone scoring
/// functions so the oracles never touch the chart code.
pub struct Scores {
    n: usize,
    comp: Vec<f64>,
    cross: Vec<f64>,
}

impl Scores {
    pub fn plain(m: &AttnMatrix, cfg: ScoreConfig) -> Self {
        Self::build(m, cfg.distance, cfg.comp, None)
    }

    pub fn ranking(m: &AttnMatrix, cfg: RankScoreConfig) -> Self {
        Self::build(m, cfg.distance, cfg.comp, Some(cfg.cross))
    }

    fn build(m: &AttnMatrix, f: Distance, c: Composition, cross: Option<Cross>) -> Self {
        let n = m.n();
        let mut comp = vec![0.0; n * n];
        let mut xs = vec![0.0; if cross.is_some() { n * n * n } else { 0 }];
        for i in 1..=n {
            for j in (i + 1)..=n {
                let r = rows(m, i, j);
                comp[(i - 1) * n + j - 1] = match c {
                    Composition::Pair => s_pair(&r, f).unwrap(),
                    Composition::Characteristic => s_characteristic(&r, f).unwrap(),
                };
                if let Some(x) = cross {
                    for k in i..j {
                        let (l, rr) = (rows(m, i, k), rows(m, k + 1, j));
                        xs[((i - 1) * n + k - 1) * n + j - 1] = match x {
                            Cross::PairCross => s_pair_cross(&l, &rr, f).unwrap(),
                            Cross::CharacteristicCross => s_characteristic_cross(&l, &rr, f).unwrap(),
                        };
                    }
                }
            }
        }
        Scores { n, comp, cross: xs }
    }

    fn comp(&self, s: Span) -> f64 {
        self.comp[(s.i - 1) * self.n + s.j - 1]
    }

    /// Plain cost: the sum of the internal span scores.
    pub fn tree_cost(&self, tree: &ParseTree) -> f64 {
        tree.internal_spans().map(|s| self.comp(s)).sum()
    }

    /// Length-weighted cost with the cross term subtracted at every split.
    pub fn rank_cost(&self, tree: &ParseTree) -> f64 {
        let n = self.n as f64;
        fn go(sc: &Scores, tree: &ParseTree, s: Span, n: f64) -> f64 {
            match tree.children(s) {
                None => 0.0,
                Some((l, r)) => {
                    let x = sc.cross[((s.i - 1) * sc.n + l.j - 1) * sc.n + s.j - 1];
                    s.len() as f64 / n * (sc.comp(s) + go(sc, tree, l, n) + go(sc, tree, r, n) - x)
                }
            }
        }
        go(self, tree, Span::new(1, self.n), n)
    }
}

/// Minimum of `cost` over `trees`.
pub fn brute_min(trees: &[ParseTree], cost: impl Fn(&ParseTree) -> f64) -> f64 {
    trees.iter().map(cost).fold(f64::INFINITY, f64::min)
}

/// Joint probability of a sentence and a tree, summed over every labeling
/// of the tree's nodes by explicit enumeration.
pub fn brute_joint(g: &Grammar, words: &[&str], tree: &ParseTree) -> f64 {
    let internal: Vec<Span> = tree.internal_spans().collect();
    let n = tree.n();
    let ids: Vec<usize> = words.iter().map(|w| g.word_id(w).unwrap()).collect();
    let slot = |s: &Span| if s.is_leaf() { internal.len() + s.i - 1 } else { internal.iter().position(|t| t == s).unwrap() };
    let radix: Vec<usize> = (0..internal.len()).map(|_| g.num_nt()).chain((0..n).map(|_| g.num_pt())).collect();
    let mut labels = vec![0usize; radix.len()];
    let mut total = 0.0;
    loop {
        let sym = |s: &Span| if s.is_leaf() { Symbol::Pt(labels[slot(s)]) } else { Symbol::Nt(labels[slot(s)]) };
        let mut p = g.root_prob(labels[slot(&Span::new(1, n))]);
        for s in &internal {
            let (l, r) = tree.children(*s).unwrap();
            p *= g.binary_prob(labels[slot(s)], sym(&l), sym(&r));
        }
        for (x, &w) in ids.iter().enumerate() {
            p *= g.lexical_prob(labels[internal.len() + x], w);
        }
        total += p;
        // mixed-radix increment
        let mut d = 0;
        while d < labels.len() {
            labels[d] += 1;
            if labels[d] < radix[d] {
                break;
            }
            labels[d] = 0;
            d += 1;
        }
        if d == labels.len() {
            return total;
        }
    }
}

pub fn brute_marginal(g: &Grammar, words: &[&str]) -> f64 {
    all_trees(words.len()).iter().map(|t| brute_joint(g, words, t)).sum()
}
