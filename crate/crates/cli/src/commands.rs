use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use attnparse::attnstore::{read_corpus, CorpusError, CorpusHeader};
use attnparse::ensemble::{ensemble_parse, EnsembleSpec, MergeMode};
use attnparse::evaluation::{corpus_f1, EvalConfig, EvalReport};
use attnparse::ranking::{rank_heads, select_k_dynamic, select_k_lazy, DynamicKConfig, RankMode, RankingTable};
use attnparse::treebank::{baseline_tree, BaselineMode};
use attnparse::{Composition, Distance, HeadId, ParseTree, ScoreConfig, SentenceRecord};

use crate::gold::{check_aligned, load_gold, read_unlabeled};
use crate::{
    BaselineArg, BaselineArgs, EvalArgs, KArg, MergeArg, ParseArgs, RankArgs, RankModeArg, ScopeArg, SentencesArgs,
    UsageError, ValidateArgs,
};

// Sentences parsed per parallel batch; output order is preserved.
const PARSE_BATCH: usize = 256;

pub fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

pub fn write_report(path: Option<&Path>, json: &str) -> Result<()> {
    if let Some(p) = path {
        fs::write(p, format!("{json}\n")).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn load_ranking(path: &Path) -> Result<RankingTable> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let table = RankingTable::from_json(&text).with_context(|| format!("parsing ranking {}", path.display()))?;
    if table.is_empty() {
        bail!("ranking {} has no entries", path.display());
    }
    Ok(table)
}

fn check_ranking_matches(table: &RankingTable, header: &CorpusHeader) -> Result<()> {
    let ranked: BTreeSet<HeadId> = table.entries.iter().map(|e| e.head_id()).collect();
    let corpus: BTreeSet<HeadId> = header.heads().collect();
    if ranked != corpus || ranked.len() != table.len() {
        bail!(
            "header mismatch: ranking covers {} heads but the corpus has {} layers x {} heads",
            table.len(),
            header.num_layers,
            header.heads_per_layer
        );
    }
    Ok(())
}

/// Stops a record stream at the first error and keeps it for later.
struct Records<I> {
    inner: I,
    error: Option<CorpusError>,
}

impl<I: Iterator<Item = Result<SentenceRecord, CorpusError>>> Iterator for &mut Records<I> {
    type Item = SentenceRecord;

    fn next(&mut self) -> Option<SentenceRecord> {
        if self.error.is_some() {
            return None;
        }
        match self.inner.next()? {
            Ok(r) => Some(r),
            Err(e) => {
                self.error = Some(e);
                None
            }
        }
    }
}

pub fn validate(a: ValidateArgs) -> Result<()> {
    let mut header = None;
    if let Some(p) = &a.attn {
        let reader = read_corpus(p).with_context(|| format!("reading {}", p.display()))?;
        let h = reader.header().clone();
        let (mut count, mut tokens, mut longest) = (0usize, 0usize, 0usize);
        for r in reader {
            let r = r.with_context(|| format!("in {}", p.display()))?;
            count += 1;
            tokens += r.n();
            longest = longest.max(r.n());
        }
        println!("{}: ok", p.display());
        println!("  {:<12} {}", "model", h.model_name);
        println!("  {:<12} {} x {}", "heads", h.num_layers, h.heads_per_layer);
        println!("  {:<12} {}", "sentences", count);
        println!("  {:<12} {}", "tokens", tokens);
        println!("  {:<12} {}", "longest", longest);
        header = Some(h);
    }
    if let Some(p) = &a.treebank {
        let items = load_gold(p)?;
        let tokens: usize = items.iter().map(|g| g.sentence.words.len()).sum();
        println!("{}: ok", p.display());
        println!("  {:<12} {}", "sentences", items.len());
        println!("  {:<12} {}", "tokens", tokens);
    }
    if let Some(p) = &a.ranking {
        let t = load_ranking(p)?;
        if let Some(h) = &header {
            check_ranking_matches(&t, h)?;
        }
        println!("{}: ok", p.display());
        println!("  {:<12} {}", "mode", t.mode);
        println!("  {:<12} {}", "heads", t.len());
        println!("  {:<12} {}", "sentences", t.num_sentences);
    }
    Ok(())
}

pub fn sentences(a: SentencesArgs) -> Result<()> {
    let items = load_gold(&a.treebank)?;
    let mut out = output(a.out.as_deref())?;
    for g in &items {
        writeln!(out, "{}", g.sentence.words.join(" "))?;
    }
    out.flush()?;
    Ok(())
}

pub fn rank(a: RankArgs) -> Result<()> {
    let reader = read_corpus(&a.attn).with_context(|| format!("reading {}", a.attn.display()))?;
    let mode = match a.mode {
        RankModeArg::Regularized => RankMode::Regularized,
        RankModeArg::Plain => RankMode::Plain,
    };
    let mut records = Records { inner: reader, error: None };
    let table = rank_heads(&mut records, mode, a.max_len);
    if let Some(e) = records.error {
        return Err(e).with_context(|| format!("in {}", a.attn.display()));
    }
    let table = table?;
    fs::write(&a.out, format!("{}\n", table.to_json())).with_context(|| format!("writing {}", a.out.display()))?;

    let scores = table.scores();
    println!(
        "ranked {} heads on {} sentences ({} mode); scores {:.4} .. {:.4}",
        table.len(),
        table.num_sentences,
        table.mode,
        scores[0],
        scores[scores.len() - 1]
    );
    println!("{:>5}  {:>6}  {:>10}", "rank", "head", "score");
    for (i, e) in table.entries.iter().take(10).enumerate() {
        println!("{:>5}  {:>6}  {:>10.4}", i + 1, e.head_id().to_string(), e.score);
    }
    Ok(())
}

fn parse_combo(s: &str) -> Result<ScoreConfig> {
    let (d, c) = s.split_once('/').ok_or_else(|| UsageError(format!("bad combo {s:?}; expected e.g. jsd/pair")))?;
    let distance = match d {
        "jsd" => Distance::Jsd,
        "hel" => Distance::Hellinger,
        _ => return Err(UsageError(format!("unknown distance {d:?}; expected jsd or hel")).into()),
    };
    let comp = match c {
        "pair" => Composition::Pair,
        "char" => Composition::Characteristic,
        _ => return Err(UsageError(format!("unknown composition {c:?}; expected pair or char")).into()),
    };
    Ok(ScoreConfig::new(distance, comp))
}

pub fn parse(a: ParseArgs) -> Result<()> {
    let reader = read_corpus(&a.attn).with_context(|| format!("reading {}", a.attn.display()))?;
    let header = reader.header().clone();
    let mut combos = a.combos.iter().map(|s| parse_combo(s)).collect::<Result<Vec<_>>>()?;
    if combos.is_empty() {
        combos = ScoreConfig::ALL.to_vec();
    }

    let spec = match a.scope {
        ScopeArg::TopK => {
            let path = a.ranking.as_deref().ok_or_else(|| UsageError("--scope top-k needs --ranking".into()))?;
            let table = load_ranking(path)?;
            check_ranking_matches(&table, &header)?;
            let h = table.len();
            let k = match a.k {
                KArg::Dynamic => {
                    let cfg = DynamicKConfig { delta: a.delta, k_min: a.k_min, k_max_fraction: a.k_max_fraction };
                    if cfg.delta == 0 || cfg.k_min == 0 || !(0.0..=1.0).contains(&cfg.k_max_fraction) {
                        return Err(UsageError("dynamic K needs delta >= 1, k-min >= 1, 0 <= k-max-fraction <= 1".into()).into());
                    }
                    select_k_dynamic(&table, &cfg)
                }
                KArg::Lazy => select_k_lazy(&table),
                KArg::Full => h,
                KArg::Fixed(k) if k > h => bail!("--k {k} exceeds the {h} ranked heads"),
                KArg::Fixed(k) => k,
            };
            eprintln!("K = {k} ({} of {h} heads)", a.k);
            EnsembleSpec::top_k(&table, k)?
        }
        ScopeArg::Layer(u) => {
            if u > header.num_layers {
                bail!("layer {u} out of range; the corpus has {} layers", header.num_layers);
            }
            eprintln!("layer {u}: {} heads", header.heads_per_layer);
            EnsembleSpec::layer(u, header.heads_per_layer)?
        }
        ScopeArg::Head(h) => {
            if h.layer > header.num_layers || h.index > header.heads_per_layer {
                bail!("head {h} out of range; the corpus has {} x {} heads", header.num_layers, header.heads_per_layer);
            }
            EnsembleSpec::single(h)
        }
    };
    let merge = match a.merge {
        MergeArg::Trees => MergeMode::Trees,
        MergeArg::Matrices => MergeMode::Matrices,
    };
    let spec = spec.combos(combos).merge(merge);
    spec.validate(header.heads_per_layer)?;

    let mut out = output(a.out.as_deref())?;
    let mut records = Records { inner: reader, error: None };
    let mut batch: Vec<SentenceRecord> = Vec::with_capacity(PARSE_BATCH);
    let mut count = 0usize;
    loop {
        batch.clear();
        batch.extend((&mut records).take(PARSE_BATCH));
        if batch.is_empty() {
            break;
        }
        let trees: Vec<Result<ParseTree, _>> = batch.par_iter().map(|r| ensemble_parse(r, &spec)).collect();
        for (r, t) in batch.iter().zip(trees) {
            let t = t.with_context(|| format!("sentence {}", r.id))?;
            writeln!(out, "{}", t.to_bracketed(&r.tokens))?;
        }
        count += batch.len();
    }
    if let Some(e) = records.error {
        return Err(e).with_context(|| format!("in {}", a.attn.display()));
    }
    out.flush()?;
    eprintln!("parsed {count} sentences");
    Ok(())
}

fn eval_config(keep_whole_span: bool) -> EvalConfig {
    EvalConfig { exclude_whole_sentence: !keep_whole_span }
}

pub fn baseline(a: BaselineArgs) -> Result<()> {
    let gold = load_gold(&a.gold)?;
    let spans: Vec<_> = gold.iter().map(|g| g.spans()).collect();
    let cfg = eval_config(a.keep_whole_span);
    let modes: Vec<(BaselineArg, BaselineMode)> = [
        (BaselineArg::Right, BaselineMode::Right),
        (BaselineArg::Left, BaselineMode::Left),
        (BaselineArg::Balanced, BaselineMode::Balanced),
    ]
    .into_iter()
    .filter(|(arg, _)| a.mode.is_none_or(|m| m == *arg))
    .collect();

    let mut reports: BTreeMap<String, EvalReport> = BTreeMap::new();
    println!("{:<10} {:>8}", "baseline", "F1");
    for (arg, mode) in &modes {
        let trees: Vec<ParseTree> = gold.iter().map(|g| baseline_tree(g.sentence.words.len(), *mode)).collect();
        let report = corpus_f1(&trees, &spans, &cfg)?;
        let name = format!("{arg:?}").to_lowercase();
        println!("{:<10} {:>8.1}", name, 100.0 * report.mean_sentence_f1);
        if let Some(p) = &a.out {
            let mut out = output(Some(p))?;
            for (g, t) in gold.iter().zip(&trees) {
                writeln!(out, "{}", t.to_bracketed(&g.sentence.words))?;
            }
            out.flush()?;
        }
        reports.insert(name, report);
    }
    write_report(a.report.as_deref(), &serde_json::to_string_pretty(&reports)?)
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let gold = load_gold(&a.gold)?;
    let pred = read_unlabeled(&a.pred)?;
    let words: Vec<&Vec<String>> = pred.iter().map(|(w, _)| w).collect();
    check_aligned(&words, &gold)?;
    let trees: Vec<ParseTree> = pred.into_iter().map(|(_, t)| t).collect();
    let spans: Vec<_> = gold.iter().map(|g| g.spans()).collect();
    let report = corpus_f1(&trees, &spans, &eval_config(a.keep_whole_span))?;
    print!("{}", report.to_table());
    write_report(a.report.as_deref(), &report.to_json())
}
