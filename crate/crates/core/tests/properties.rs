mod common;

use std::collections::BTreeSet;

use attnparse::attnstore::{read_corpus_str, write_corpus_to};
use attnparse::chart::cky_parse;
use attnparse::ensemble::{distance_to_tree, tree_to_distance};
use attnparse::evaluation::{m1_map, preterminal_accuracy, sentence_f1, EvalConfig};
use attnparse::pcfg::{em_train, marginal_loglik, tree_joint_loglik, Grammar, TrainConfig};
use attnparse::ranking::{rank_heads, rank_span_score, select_k_from_scores, DynamicKConfig, RankMode, RankScoreConfig};
use attnparse::treebank::{baseline_tree, binarize_gold, BaselineMode, LabeledTree};
use attnparse::{CorpusHeader, HeadId, ParseTree, ScoreConfig, Span};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn labeled_tree(r: &mut ChaCha8Rng, words: usize, depth: usize) -> LabeledTree {
    let labels = ["NP", "VP", "PP", "S"];
    if words == 1 {
        return LabeledTree::preterminal(["DT", "NN", "VB"][r.random_range(0..3)], format!("w{}", r.random_range(0..9)));
    }
    let arity = if depth > 3 { words.min(2) } else { r.random_range(2..=words.min(4)) };
    // split `words` into `arity` non-empty parts
    let mut cuts: Vec<usize> = (1..words).collect();
    cuts.shuffle(r);
    let mut cuts: Vec<usize> = cuts[..arity - 1].to_vec();
    cuts.sort();
    let mut sizes = Vec::new();
    let mut prev = 0;
    for c in cuts.into_iter().chain([words]) {
        sizes.push(c - prev);
        prev = c;
    }
    let children = sizes.into_iter().map(|s| labeled_tree(r, s, depth + 1)).collect();
    LabeledTree::node(labels[r.random_range(0..4)], children)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chart_matches_enumeration(seed in any::<u64>(), n in 2usize..=8) {
        let mut r = rng(seed);
        let m = random_matrix(&mut r, n);
        let head = HeadId::new(1, 1);
        let rec = record("s", vec![(head, m.clone())]);
        let all = all_trees(n);
        for cfg in ScoreConfig::ALL {
            let sc = Scores::plain(&m, cfg);
            let best = brute_min(&all, |t| sc.tree_cost(t));
            let (t, s) = cky_parse(&rec, head, cfg).unwrap();
            prop_assert!((s - best).abs() < 1e-9);
            prop_assert!((sc.tree_cost(&t) - best).abs() < 1e-9);
        }
    }

    #[test]
    fn ranking_chart_matches_enumeration(seed in any::<u64>(), n in 2usize..=7) {
        let mut r = rng(seed);
        let m = random_matrix(&mut r, n);
        let head = HeadId::new(1, 1);
        let rec = record("s", vec![(head, m.clone())]);
        let all = all_trees(n);
        for cfg in RankScoreConfig::all() {
            let sc = Scores::ranking(&m, cfg);
            let best = brute_min(&all, |t| sc.rank_cost(t));
            let (t, s) = rank_span_score(&rec, head, cfg).unwrap();
            prop_assert!((s - best).abs() < 1e-9);
            prop_assert!((sc.rank_cost(&t) - best).abs() < 1e-9);
        }
    }

    #[test]
    fn distances_round_trip_random_trees(seed in any::<u64>(), n in 1usize..=40) {
        let t = random_tree(&mut rng(seed), n);
        prop_assert_eq!(distance_to_tree(&tree_to_distance(&t)), t);
    }

    #[test]
    fn dynamic_k_ignores_positive_affine_maps(
        steps in proptest::collection::vec(0u32..5, 20..120),
        scale in prop::sample::select(vec![0.5, 2.0, 8.0]),
        shift in -50i32..50,
    ) {
        let mut scores: Vec<f64> = Vec::new();
        let mut acc = 0.0;
        for s in steps {
            acc += s as f64;
            scores.push(acc);
        }
        let moved: Vec<f64> = scores.iter().map(|s| scale * s + shift as f64).collect();
        let cfg = DynamicKConfig { delta: 3, k_min: 5, k_max_fraction: 0.75 };
        prop_assert_eq!(select_k_from_scores(&scores, &cfg), select_k_from_scores(&moved, &cfg));
    }

    #[test]
    fn baselines_are_valid_trees(n in 1usize..=64) {
        for mode in [BaselineMode::Right, BaselineMode::Left, BaselineMode::Balanced] {
            let t = baseline_tree(n, mode);
            prop_assert!(t.validate().is_ok());
            prop_assert_eq!(t.spans().len(), 2 * n - 1);
        }
    }

    #[test]
    fn f1_is_symmetric(seed in any::<u64>(), n in 2usize..=30) {
        let mut r = rng(seed);
        let (a, b) = (random_tree(&mut r, n), random_tree(&mut r, n));
        let cfg = EvalConfig::default();
        let spans = |t: &ParseTree| -> BTreeSet<Span> { t.spans().clone() };
        let ab = sentence_f1(&a, n, &spans(&b), &cfg).unwrap();
        let ba = sentence_f1(&b, n, &spans(&a), &cfg).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((sentence_f1(&a, n, &spans(&a), &cfg).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn binarization_round_trips(seed in any::<u64>(), words in 1usize..=15) {
        let t = labeled_tree(&mut rng(seed), words, 0);
        let b = binarize_gold(&t);
        prop_assert_eq!(b.num_words(), words);
        prop_assert!(b.to_parse_tree().validate().is_ok());
        prop_assert_eq!(b.unbinarize(), t);
    }

    #[test]
    fn m1_mapping_is_optimal(pairs in proptest::collection::vec((0usize..3, 0usize..3), 1..40)) {
        let pred: Vec<Vec<String>> = vec![pairs.iter().map(|p| format!("i{}", p.0)).collect()];
        let gold: Vec<Vec<String>> = vec![pairs.iter().map(|p| format!("g{}", p.1)).collect()];
        let map = m1_map(pred[0].iter().zip(&gold[0])).unwrap();
        let acc = preterminal_accuracy(&pred, &gold, &map).unwrap();
        // every function from three induced tags to three gold tags
        let mut best = 0usize;
        for code in 0..27usize {
            let f = [code % 3, code / 3 % 3, code / 9];
            best = best.max(pairs.iter().filter(|(i, g)| f[*i] == *g).count());
        }
        prop_assert!((acc - best as f64 / pairs.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn corpus_round_trips_through_text(seed in any::<u64>(), sentences in 1usize..6) {
        let mut r = rng(seed);
        let header = CorpusHeader::new("toy", 2, 2);
        let records: Vec<_> = (0..sentences)
            .map(|s| {
                let n = r.random_range(1..=9);
                let heads = header.heads().map(|h| (h, random_matrix(&mut r, n))).collect();
                record(&format!("s{s}"), heads)
            })
            .collect();
        let mut buf = Vec::new();
        write_corpus_to(&header, &records, &mut buf).unwrap();
        let reader = read_corpus_str(std::str::from_utf8(&buf).unwrap()).unwrap();
        prop_assert_eq!(reader.header(), &header);
        let back: Vec<_> = reader.collect::<Result<_, _>>().unwrap();
        prop_assert_eq!(back.len(), records.len());
        for (a, b) in back.iter().zip(&records) {
            prop_assert_eq!(&a.id, &b.id);
            prop_assert_eq!(&a.tokens, &b.tokens);
            for (h, m) in &a.attn {
                let diff = m.data().iter().zip(b.attn[h].data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                prop_assert!(diff < 1e-12);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ranking_ignores_corpus_order(seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut corpus: Vec<_> = (0..12)
            .map(|s| {
                let n = r.random_range(2..=9);
                let heads = (1..=3).map(|v| (HeadId::new(1, v), random_matrix(&mut r, n))).collect();
                record(&format!("s{s}"), heads)
            })
            .collect();
        let before = rank_heads(corpus.clone(), RankMode::Regularized, 64).unwrap();
        corpus.shuffle(&mut r);
        let after = rank_heads(corpus, RankMode::Regularized, 64).unwrap();
        prop_assert_eq!(before, after);
    }

    #[test]
    fn marginal_bounds_joint(seed in any::<u64>(), nt in 1usize..=3, pt in 1usize..=3, n in 2usize..=6) {
        let mut r = rng(seed);
        let vocab: Vec<String> = ["p", "q", "r", "s"].map(String::from).to_vec();
        let g = Grammar::random(nt, pt, vocab.clone(), &mut r).unwrap();
        let words: Vec<&str> = (0..n).map(|_| vocab[r.random_range(0..4)].as_str()).collect();
        let marginal = marginal_loglik(&g, &words).unwrap();
        for t in all_trees(n).iter().take(20) {
            prop_assert!(tree_joint_loglik(&g, &words, t).unwrap() <= marginal + 1e-9);
        }
    }

    #[test]
    fn em_never_lowers_the_likelihood(seed in any::<u64>()) {
        let mut r = rng(seed);
        let vocab: Vec<String> = (0..6).map(|w| format!("w{w}")).collect();
        let g = Grammar::random(2, 2, vocab, &mut r).unwrap();
        let mut golds = Vec::new();
        while golds.len() < 30 {
            if let Some(t) = g.sample(&mut r, 10) {
                golds.push(t);
            }
        }
        let sentences: Vec<Vec<&str>> = golds.iter().map(|t| t.words()).collect();
        let trees: Vec<ParseTree> = golds.iter().map(|t| t.to_parse_tree()).collect();
        let cfg = TrainConfig { num_nt: 2, num_pt: 3, min_count: 1, max_iters: 30, tol: 0.0, restarts: 1, seed };
        let (_, report) = em_train(&sentences, &trees, &cfg).unwrap();
        for h in &report.histories {
            for w in h.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0), "{} then {}", w[0], w[1]);
            }
        }
    }
}

#[test]
fn catalan_counts_match_enumeration() {
    for n in 1..=9 {
        assert_eq!(all_trees(n).len(), catalan(n - 1));
        let distinct: BTreeSet<Vec<Span>> = all_trees(n).iter().map(|t| t.spans().iter().copied().collect()).collect();
        assert_eq!(distinct.len(), catalan(n - 1));
    }
}
