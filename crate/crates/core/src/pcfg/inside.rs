use super::{Grammar, PcfgError, Symbol, TreeNodes};
use crate::tree::ParseTree;
use crate::treebank::BinarizedTree;

/// A chart vector stored as `exp(log_scale) * v` with `max(v) == 1`.
#[derive(Debug, Clone)]
pub(crate) struct Scaled {
    pub v: Vec<f64>,
    pub log_scale: f64,
}

impl Scaled {
    pub fn normalized(mut v: Vec<f64>, mut log_scale: f64) -> Self {
        let m = v.iter().fold(0.0f64, |a, &b| a.max(b));
        if m > 0.0 {
            v.iter_mut().for_each(|x| *x /= m);
            log_scale += m.ln();
        } else {
            log_scale = f64::NEG_INFINITY;
        }
        Scaled { v, log_scale }
    }
}

/// Offset into the unified symbol space for a child covering `len` words.
pub(crate) fn child_range(g: &Grammar, len: usize) -> (usize, usize) {
    if len == 1 {
        (g.num_nt, g.num_pt)
    } else {
        (0, g.num_nt)
    }
}

pub(crate) fn encode<S: AsRef<str>>(g: &Grammar, words: &[S]) -> Result<Vec<usize>, PcfgError> {
    if words.len() < 2 {
        return Err(PcfgError::SingleWord);
    }
    words.iter().map(|w| g.word_id(w.as_ref())).collect()
}

pub(crate) fn leaf_vector(g: &Grammar, word: usize) -> Scaled {
    Scaled::normalized((0..g.num_pt).map(|t| g.lexical_prob(t, word)).collect(), 0.0)
}

/// Inside vectors for every node of a fixed bracketing, in post-order.
pub(crate) fn tree_inside(g: &Grammar, ids: &[usize], nodes: &TreeNodes) -> Vec<Scaled> {
    let m = g.num_symbols();
    let mut out: Vec<Scaled> = Vec::with_capacity(nodes.nodes.len());
    for node in &nodes.nodes {
        let s = match node.kids {
            None => leaf_vector(g, ids[node.span.i - 1]),
            Some((l, r)) => {
                let (bl, br) = (&out[l], &out[r]);
                let (ol, _) = child_range(g, nodes.nodes[l].span.len());
                let (or, _) = child_range(g, nodes.nodes[r].span.len());
                let v = (0..g.num_nt)
                    .map(|a| {
                        let row = g.binary_row(a);
                        let mut total = 0.0;
                        for (b, &x) in bl.v.iter().enumerate() {
                            if x == 0.0 {
                                continue;
                            }
                            let base = (ol + b) * m + or;
                            let inner: f64 = row[base..base + br.v.len()].iter().zip(&br.v).map(|(p, y)| p * y).sum();
                            total += x * inner;
                        }
                        total
                    })
                    .collect();
                Scaled::normalized(v, bl.log_scale + br.log_scale)
            }
        };
        out.push(s);
    }
    out
}

pub(crate) fn root_loglik(g: &Grammar, beta: &Scaled) -> f64 {
    let z: f64 = beta.v.iter().enumerate().map(|(a, x)| g.root_prob(a) * x).sum();
    z.ln() + beta.log_scale
}

fn check_tree(tree: &ParseTree, n: usize) -> Result<(), PcfgError> {
    if tree.n() != n {
        return Err(PcfgError::LengthMismatch { tree: tree.n(), words: n });
    }
    Ok(())
}

/// `log P(words, tree)` with symbol labels summed out.
pub fn tree_joint_loglik<S: AsRef<str>>(g: &Grammar, words: &[S], tree: &ParseTree) -> Result<f64, PcfgError> {
    let ids = encode(g, words)?;
    check_tree(tree, ids.len())?;
    let nodes = TreeNodes::new(tree);
    let inside = tree_inside(g, &ids, &nodes);
    Ok(root_loglik(g, &inside[nodes.root()]))
}

/// `log P(words)` summed over every binary bracketing (CKY inside).
pub fn marginal_loglik<S: AsRef<str>>(g: &Grammar, words: &[S]) -> Result<f64, PcfgError> {
    let ids = encode(g, words)?;
    let n = ids.len();
    let m = g.num_symbols();
    let at = |i: usize, j: usize| i * n + j;
    let mut chart: Vec<Option<Scaled>> = vec![None; n * n];
    for (i, &w) in ids.iter().enumerate() {
        chart[at(i, i)] = Some(leaf_vector(g, w));
    }
    let mut acc = vec![0.0; m * m];
    for len in 2..=n {
        for i in 0..=n - len {
            let j = i + len - 1;
            let parts: Vec<(&Scaled, &Scaled, usize, usize)> = (i..j)
                .map(|k| {
                    let l = chart[at(i, k)].as_ref().unwrap();
                    let r = chart[at(k + 1, j)].as_ref().unwrap();
                    (l, r, child_range(g, k - i + 1).0, child_range(g, j - k).0)
                })
                .collect();
            let top = parts
                .iter()
                .map(|(l, r, _, _)| l.log_scale + r.log_scale)
                .fold(f64::NEG_INFINITY, f64::max);
            if top == f64::NEG_INFINITY {
                chart[at(i, j)] = Some(Scaled { v: vec![0.0; g.num_nt], log_scale: f64::NEG_INFINITY });
                continue;
            }
            acc.iter_mut().for_each(|x| *x = 0.0);
            for (l, r, ol, or) in &parts {
                let w = (l.log_scale + r.log_scale - top).exp();
                if w == 0.0 {
                    continue;
                }
                for (b, &x) in l.v.iter().enumerate() {
                    let x = w * x;
                    if x == 0.0 {
                        continue;
                    }
                    let base = (ol + b) * m + or;
                    for (slot, &y) in acc[base..base + r.v.len()].iter_mut().zip(&r.v) {
                        *slot += x * y;
                    }
                }
            }
            let v = (0..g.num_nt)
                .map(|a| g.binary_row(a).iter().zip(&acc).map(|(p, y)| p * y).sum())
                .collect();
            chart[at(i, j)] = Some(Scaled::normalized(v, top));
        }
    }
    Ok(root_loglik(g, chart[at(0, n - 1)].as_ref().unwrap()))
}

/// Preterminal with the highest emission probability for `word`, lowest id on ties.
///
/// Single-word sentences have no derivation under the grammar; this is the
/// fallback used to label them.
pub fn best_preterminal(g: &Grammar, word: &str) -> Result<usize, PcfgError> {
    let w = g.word_id(word)?;
    let mut best = 0;
    for t in 1..g.num_pt {
        if g.lexical_prob(t, w) > g.lexical_prob(best, w) {
            best = t;
        }
    }
    Ok(best)
}

/// Most probable symbol assignment for a fixed bracketing. Ties go to the
/// lowest symbol id. Returns the labeled tree and its log probability.
pub fn viterbi_label<S: AsRef<str>>(
    g: &Grammar,
    words: &[S],
    tree: &ParseTree,
) -> Result<(BinarizedTree, f64), PcfgError> {
    let ids = encode(g, words)?;
    check_tree(tree, ids.len())?;
    let nodes = TreeNodes::new(tree);
    let m = g.num_symbols();
    // per node: best log score per symbol in its range, and backpointers
    let mut delta: Vec<Vec<f64>> = Vec::with_capacity(nodes.nodes.len());
    let mut back: Vec<Vec<(usize, usize)>> = Vec::with_capacity(nodes.nodes.len());
    for node in &nodes.nodes {
        match node.kids {
            None => {
                let w = ids[node.span.i - 1];
                delta.push((0..g.num_pt).map(|t| g.lexical_prob(t, w).ln()).collect());
                back.push(Vec::new());
            }
            Some((l, r)) => {
                let (ol, _) = child_range(g, nodes.nodes[l].span.len());
                let (or, _) = child_range(g, nodes.nodes[r].span.len());
                let mut d = Vec::with_capacity(g.num_nt);
                let mut bp = Vec::with_capacity(g.num_nt);
                for a in 0..g.num_nt {
                    let row = g.binary_row(a);
                    let mut best = (f64::NEG_INFINITY, (0, 0));
                    for (b, &x) in delta[l].iter().enumerate() {
                        for (c, &y) in delta[r].iter().enumerate() {
                            let s = row[(ol + b) * m + or + c].ln() + x + y;
                            if s > best.0 {
                                best = (s, (b, c));
                            }
                        }
                    }
                    d.push(best.0);
                    bp.push(best.1);
                }
                delta.push(d);
                back.push(bp);
            }
        }
    }
    let root = nodes.root();
    let mut best = (f64::NEG_INFINITY, 0);
    for (a, &x) in delta[root].iter().enumerate() {
        let s = g.root_prob(a).ln() + x;
        if s > best.0 {
            best = (s, a);
        }
    }

    fn build<S: AsRef<str>>(
        g: &Grammar,
        nodes: &TreeNodes,
        back: &[Vec<(usize, usize)>],
        words: &[S],
        idx: usize,
        sym: usize,
    ) -> BinarizedTree {
        let node = nodes.nodes[idx];
        match node.kids {
            None => BinarizedTree::Leaf {
                label: g.symbol_name(Symbol::Pt(sym)),
                word: words[node.span.i - 1].as_ref().to_string(),
            },
            Some((l, r)) => {
                let (b, c) = back[idx][sym];
                BinarizedTree::Node {
                    label: g.symbol_name(Symbol::Nt(sym)),
                    left: Box::new(build(g, nodes, back, words, l, b)),
                    right: Box::new(build(g, nodes, back, words, r, c)),
                    propagated: false,
                }
            }
        }
    }
    Ok((build(g, &nodes, &back, words, root, best.1), best.0))
}
