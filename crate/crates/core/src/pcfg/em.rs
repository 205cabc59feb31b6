use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::inside::{child_range, root_loglik, tree_inside, Scaled};
use super::{Grammar, PcfgError, TreeNodes, UNK};
use crate::tree::ParseTree;

// Fixed so that results do not depend on the thread count.
const CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub num_nt: usize,
    pub num_pt: usize,
    /// Words seen fewer times than this become UNK.
    pub min_count: usize,
    pub max_iters: usize,
    /// Relative log-likelihood change that counts as converged.
    pub tol: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { num_nt: 30, num_pt: 60, min_count: 2, max_iters: 50, tol: 1e-5, restarts: 3, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    /// Corpus log-likelihood before each M-step, one list per restart.
    pub histories: Vec<Vec<f64>>,
    pub best_restart: usize,
    pub final_loglik: f64,
    pub num_sentences: usize,
    /// Sentences dropped for having fewer than two words.
    pub skipped: usize,
    pub vocab_size: usize,
}

struct Counts {
    root: Vec<f64>,
    binary: Vec<f64>,
    lexical: Vec<f64>,
}

impl Counts {
    fn zeros(g: &Grammar) -> Self {
        let m = g.num_symbols();
        Counts {
            root: vec![0.0; g.num_nt],
            binary: vec![0.0; g.num_nt * m * m],
            lexical: vec![0.0; g.num_pt * g.vocab.len()],
        }
    }

    fn add(&mut self, other: &Counts) {
        for (a, b) in [(&mut self.root, &other.root), (&mut self.binary, &other.binary), (&mut self.lexical, &other.lexical)] {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

struct Example {
    ids: Vec<usize>,
    nodes: TreeNodes,
}

/// Expected rule counts for one bracketed sentence; returns its log-likelihood.
fn accumulate(g: &Grammar, ex: &Example, counts: &mut Counts) -> f64 {
    let m = g.num_symbols();
    let nodes = &ex.nodes.nodes;
    let beta = tree_inside(g, &ex.ids, &ex.nodes);
    let root = ex.nodes.root();
    let log_z = root_loglik(g, &beta[root]);
    if !log_z.is_finite() {
        return log_z;
    }
    let z_scaled: f64 = beta[root].v.iter().enumerate().map(|(a, x)| g.root_prob(a) * x).sum();
    for (a, x) in beta[root].v.iter().enumerate() {
        counts.root[a] += g.root_prob(a) * x / z_scaled;
    }

    let mut alpha: Vec<Option<Scaled>> = vec![None; nodes.len()];
    alpha[root] = Some(Scaled { v: (0..g.num_nt).map(|a| g.root_prob(a)).collect(), log_scale: 0.0 });
    for idx in (0..nodes.len()).rev() {
        let out = alpha[idx].take().expect("parent visited first");
        let node = nodes[idx];
        match node.kids {
            None => {
                let c0 = (out.log_scale + beta[idx].log_scale - log_z).exp();
                let w = ex.ids[node.span.i - 1];
                let v = g.vocab.len();
                for t in 0..g.num_pt {
                    counts.lexical[t * v + w] += c0 * out.v[t] * beta[idx].v[t];
                }
            }
            Some((l, r)) => {
                let (bl, br) = (&beta[l], &beta[r]);
                let (ol, _) = child_range(g, nodes[l].span.len());
                let (or, _) = child_range(g, nodes[r].span.len());
                let c0 = (out.log_scale + bl.log_scale + br.log_scale - log_z).exp();
                let mut al = vec![0.0; bl.v.len()];
                let mut ar = vec![0.0; br.v.len()];
                for (a, &pa) in out.v.iter().enumerate() {
                    if pa == 0.0 {
                        continue;
                    }
                    let row = g.binary_row(a);
                    let crow = &mut counts.binary[a * m * m..(a + 1) * m * m];
                    for (b, &x) in bl.v.iter().enumerate() {
                        let base = (ol + b) * m + or;
                        let mut acc_l = 0.0;
                        for (c, &y) in br.v.iter().enumerate() {
                            let w = pa * row[base + c];
                            acc_l += w * y;
                            ar[c] += w * x;
                            crow[base + c] += c0 * w * x * y;
                        }
                        al[b] += acc_l;
                    }
                }
                alpha[l] = Some(Scaled::normalized(al, out.log_scale + br.log_scale));
                alpha[r] = Some(Scaled::normalized(ar, out.log_scale + bl.log_scale));
            }
        }
    }
    log_z
}

fn e_step(g: &Grammar, data: &[Example]) -> (f64, Counts) {
    let parts: Vec<(Vec<f64>, Counts)> = data
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut counts = Counts::zeros(g);
            let lls = chunk.iter().map(|ex| accumulate(g, ex, &mut counts)).collect();
            (lls, counts)
        })
        .collect();
    let mut total = Counts::zeros(g);
    let mut ll = Vec::with_capacity(data.len());
    for (lls, counts) in &parts {
        ll.extend_from_slice(lls);
        total.add(counts);
    }
    (neumaier_sum(&ll), total)
}

fn neumaier_sum(xs: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn m_step(g: &mut Grammar, counts: &Counts) {
    fn update(target: &mut [f64], counts: &[f64]) {
        let s: f64 = counts.iter().sum();
        // parents never used keep their old distribution
        if s > 0.0 {
            target.iter_mut().zip(counts).for_each(|(t, c)| *t = c / s);
        }
    }
    let m = g.num_symbols();
    let v = g.vocab.len();
    update(&mut g.root, &counts.root);
    for a in 0..g.num_nt {
        update(&mut g.binary[a * m * m..(a + 1) * m * m], &counts.binary[a * m * m..(a + 1) * m * m]);
    }
    for t in 0..g.num_pt {
        update(&mut g.lexical[t * v..(t + 1) * v], &counts.lexical[t * v..(t + 1) * v]);
    }
}

fn build_vocab<S: AsRef<str>>(sentences: &[&[S]], min_count: usize) -> Vec<String> {
    let mut freq: BTreeMap<String, usize> = BTreeMap::new();
    for s in sentences {
        for w in s.iter() {
            *freq.entry(w.as_ref().to_lowercase()).or_default() += 1;
        }
    }
    let mut vocab: Vec<String> = freq.into_iter().filter(|(w, c)| *c >= min_count && w != UNK).map(|(w, _)| w).collect();
    if min_count > 1 {
        vocab.push(UNK.to_string());
    }
    vocab
}

/// Fits a grammar to bracketed sentences by EM with symbol labels latent.
///
/// Runs `restarts` independent initializations and keeps the one with the
/// highest final log-likelihood.
pub fn em_train<S: AsRef<str> + Sync>(
    sentences: &[Vec<S>],
    trees: &[ParseTree],
    cfg: &TrainConfig,
) -> Result<(Grammar, TrainReport), PcfgError> {
    if sentences.len() != trees.len() {
        return Err(PcfgError::Invalid(format!("{} sentences but {} trees", sentences.len(), trees.len())));
    }
    for (s, t) in sentences.iter().zip(trees) {
        if s.len() != t.n() {
            return Err(PcfgError::LengthMismatch { tree: t.n(), words: s.len() });
        }
    }
    let kept: Vec<usize> = (0..sentences.len()).filter(|&i| sentences[i].len() >= 2).collect();
    if kept.is_empty() {
        return Err(PcfgError::EmptyCorpus);
    }
    let words: Vec<&[S]> = kept.iter().map(|&i| sentences[i].as_slice()).collect();
    let vocab = build_vocab(&words, cfg.min_count);
    let restarts = cfg.restarts.max(1);

    let mut best: Option<(Grammar, f64, usize)> = None;
    let mut histories = Vec::with_capacity(restarts);
    let mut data: Option<Vec<Example>> = None;
    for r in 0..restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(r as u64));
        let mut g = Grammar::random(cfg.num_nt, cfg.num_pt, vocab.clone(), &mut rng)?;
        let data = match &data {
            Some(d) => d,
            None => {
                let built = kept
                    .iter()
                    .map(|&i| {
                        let ids = sentences[i].iter().map(|w| g.word_id(w.as_ref())).collect::<Result<_, _>>()?;
                        Ok(Example { ids, nodes: TreeNodes::new(&trees[i]) })
                    })
                    .collect::<Result<Vec<_>, PcfgError>>()?;
                data.insert(built)
            }
        };
        let mut history: Vec<f64> = Vec::new();
        loop {
            let (ll, counts) = e_step(&g, data);
            let converged = history.last().is_some_and(|&prev: &f64| (ll - prev).abs() <= cfg.tol * prev.abs());
            history.push(ll);
            if converged || history.len() >= cfg.max_iters.max(1) {
                break;
            }
            m_step(&mut g, &counts);
        }
        let ll = *history.last().unwrap();
        if best.as_ref().is_none_or(|b| ll > b.1) {
            best = Some((g, ll, r));
        }
        histories.push(history);
    }
    let (grammar, final_loglik, best_restart) = best.unwrap();
    let report = TrainReport {
        histories,
        best_restart,
        final_loglik,
        num_sentences: kept.len(),
        skipped: sentences.len() - kept.len(),
        vocab_size: grammar.vocab.len(),
    };
    Ok((grammar, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pcfg::tree_joint_loglik;

    fn toy() -> (Vec<Vec<String>>, Vec<ParseTree>) {
        let raw = [
            vec!["the", "dog", "barks"],
            vec!["the", "cat", "sleeps"],
            vec!["a", "dog", "sleeps", "loudly"],
            vec!["the", "cat", "barks"],
            vec!["a", "bird", "sings"],
        ];
        let sents: Vec<Vec<String>> = raw.iter().map(|s| s.iter().map(|w| w.to_string()).collect()).collect();
        let trees = sents.iter().map(|s| ParseTree::from_splits(s.len(), |_, j| j - 1)).collect();
        (sents, trees)
    }

    #[test]
    fn loglik_never_decreases() {
        let (s, t) = toy();
        let cfg = TrainConfig { num_nt: 3, num_pt: 4, min_count: 1, max_iters: 30, tol: 0.0, restarts: 2, seed: 9 };
        let (g, report) = em_train(&s, &t, &cfg).unwrap();
        for h in &report.histories {
            for w in h.windows(2) {
                assert!(w[1] >= w[0] - 1e-9 * w[0].abs(), "{} -> {}", w[0], w[1]);
            }
        }
        let direct: f64 = s.iter().zip(&t).map(|(w, t)| tree_joint_loglik(&g, w, t).unwrap()).sum();
        assert!((direct - report.final_loglik).abs() < 1e-8);
        g.validate().unwrap();
    }

    #[test]
    fn deterministic_across_runs() {
        let (s, t) = toy();
        let cfg = TrainConfig { num_nt: 2, num_pt: 3, min_count: 2, max_iters: 5, tol: 1e-5, restarts: 1, seed: 4 };
        let (a, ra) = em_train(&s, &t, &cfg).unwrap();
        let (b, rb) = em_train(&s, &t, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.histories, rb.histories);
        assert!(a.vocab().contains(&UNK.to_string()));
    }

    #[test]
    fn short_sentences_skipped() {
        let s = vec![vec!["x".to_string()], vec!["x".to_string(), "y".to_string()]];
        let t = vec![ParseTree::leaf(), ParseTree::from_splits(2, |i, _| i)];
        let cfg = TrainConfig { num_nt: 1, num_pt: 1, min_count: 1, max_iters: 2, restarts: 1, ..Default::default() };
        let (_, r) = em_train(&s, &t, &cfg).unwrap();
        assert_eq!((r.num_sentences, r.skipped), (1, 1));
        assert_eq!(em_train(&s[..1], &t[..1], &cfg).unwrap_err(), PcfgError::EmptyCorpus);
    }

    #[test]
    fn neumaier_is_accurate() {
        let xs = [1e16, 1.0, -1e16];
        assert_eq!(neumaier_sum(&xs), 1.0);
    }
}
