use std::fs;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use rayon::prelude::*;
use serde_json::json;

use attnparse::evaluation::labeling_report;
use attnparse::pcfg::{best_preterminal, em_train, viterbi_label, Grammar, Symbol, TrainConfig};
use attnparse::treebank::{parse_bracketed_verbatim, BinarizedTree};
use attnparse::ParseTree;

use crate::commands::{output, write_report};
use crate::gold::{check_aligned, load_gold, read_unlabeled};
use crate::UsageError;

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training trees, one unlabeled bracketed tree per line.
    #[arg(long, conflicts_with = "from_gold")]
    trees: Option<PathBuf>,
    /// Train on the binarized gold structures of --gold instead.
    #[arg(long, requires = "gold")]
    from_gold: bool,
    /// Treebank for M-1 accuracy of the labeled training trees.
    #[arg(long)]
    gold: Option<PathBuf>,
    /// Grammar output.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Also write the Viterbi-labeled training trees.
    #[arg(long)]
    labeled_out: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    nt: usize,
    #[arg(long, default_value_t = 60)]
    pt: usize,
    /// Words seen fewer times become <unk>.
    #[arg(long, default_value_t = 2)]
    min_count: usize,
    #[arg(long, default_value_t = 50)]
    max_iters: usize,
    /// Relative log-likelihood change treated as converged.
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    #[arg(long, default_value_t = 3)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
pub struct LabelArgs {
    #[arg(long)]
    grammar: PathBuf,
    #[arg(long)]
    trees: PathBuf,
    /// Output file; standard output if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Labeled trees written by `pcfg label`.
    #[arg(long)]
    labeled: PathBuf,
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

fn read_grammar(path: &PathBuf) -> Result<Grammar> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Grammar::from_json(&text).with_context(|| format!("loading grammar {}", path.display()))
}

/// Viterbi labels for every sentence; one-word sentences get their best preterminal.
fn label_all(g: &Grammar, corpus: &[(Vec<String>, ParseTree)]) -> Result<Vec<BinarizedTree>> {
    corpus
        .par_iter()
        .enumerate()
        .map(|(i, (words, tree))| {
            let labeled = if words.len() == 1 {
                best_preterminal(g, &words[0])
                    .map(|t| BinarizedTree::Leaf { label: g.symbol_name(Symbol::Pt(t)), word: words[0].clone() })
            } else {
                viterbi_label(g, words, tree).map(|(t, _)| t)
            };
            labeled.with_context(|| format!("labeling sentence {}", i + 1))
        })
        .collect()
}

pub fn train(a: TrainArgs) -> Result<()> {
    let gold = a.gold.as_deref().map(load_gold).transpose()?;
    let corpus: Vec<(Vec<String>, ParseTree)> = match (&a.trees, a.from_gold, &gold) {
        (Some(p), false, _) => read_unlabeled(p)?,
        (None, true, Some(items)) => items
            .iter()
            .map(|g| Ok((g.sentence.words.clone(), g.binarized()?.to_parse_tree())))
            .collect::<Result<_>>()?,
        _ => return Err(UsageError("give --trees FILE or --from-gold with --gold".into()).into()),
    };
    if let Some(items) = &gold {
        let words: Vec<&Vec<String>> = corpus.iter().map(|(w, _)| w).collect();
        check_aligned(&words, items)?;
    }
    if a.nt == 0 || a.pt == 0 {
        return Err(UsageError("--nt and --pt must be at least 1".into()).into());
    }
    let cfg = TrainConfig {
        num_nt: a.nt,
        num_pt: a.pt,
        min_count: a.min_count,
        max_iters: a.max_iters,
        tol: a.tol,
        restarts: a.restarts,
        seed: a.seed,
    };
    let (sentences, trees): (Vec<Vec<String>>, Vec<ParseTree>) = corpus.iter().cloned().unzip();
    let (grammar, report) = em_train(&sentences, &trees, &cfg)?;
    fs::write(&a.out, format!("{}\n", grammar.to_json())).with_context(|| format!("writing {}", a.out.display()))?;

    println!(
        "trained on {} sentences ({} single-word skipped), vocabulary {}",
        report.num_sentences, report.skipped, report.vocab_size
    );
    println!("{:>8} {:>6} {:>16}", "restart", "iters", "log-likelihood");
    for (r, h) in report.histories.iter().enumerate() {
        let mark = if r == report.best_restart { " *" } else { "" };
        println!("{:>8} {:>6} {:>16.4}{mark}", r, h.len(), h.last().copied().unwrap_or(f64::NAN));
    }

    let accuracy = if a.gold.is_some() || a.labeled_out.is_some() {
        let labeled = label_all(&grammar, &corpus)?;
        if let Some(p) = &a.labeled_out {
            let mut out = output(Some(p))?;
            for t in &labeled {
                writeln!(out, "{t}")?;
            }
            out.flush()?;
        }
        match &gold {
            Some(items) => {
                let golds = items.iter().map(|g| g.binarized()).collect::<Result<Vec<_>>>()?;
                let acc = labeling_report(&labeled, &golds)?;
                print!("{}", acc.to_table());
                Some(acc)
            }
            None => None,
        }
    } else {
        None
    };
    let doc = json!({ "training": report, "accuracy": accuracy });
    write_report(a.report.as_deref(), &serde_json::to_string_pretty(&doc)?)
}

pub fn label(a: LabelArgs) -> Result<()> {
    let grammar = read_grammar(&a.grammar)?;
    let corpus = read_unlabeled(&a.trees)?;
    let labeled = label_all(&grammar, &corpus)?;
    let mut out = output(a.out.as_deref())?;
    for t in &labeled {
        writeln!(out, "{t}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let gold = load_gold(&a.gold)?;
    let text = fs::read_to_string(&a.labeled).with_context(|| format!("reading {}", a.labeled.display()))?;
    let preds = parse_bracketed_verbatim(&text)
        .with_context(|| format!("parsing {}", a.labeled.display()))?
        .iter()
        .enumerate()
        .map(|(i, t)| BinarizedTree::from_labeled(t).with_context(|| format!("labeled tree {}", i + 1)))
        .collect::<Result<Vec<_>>>()?;
    let words: Vec<Vec<&str>> = preds.iter().map(|t| t.words()).collect();
    check_aligned(&words, &gold)?;
    let golds = gold.iter().map(|g| g.binarized()).collect::<Result<Vec<_>>>()?;
    let report = labeling_report(&preds, &golds)?;
    print!("{}", report.to_table());
    write_report(a.report.as_deref(), &report.to_json())
}
