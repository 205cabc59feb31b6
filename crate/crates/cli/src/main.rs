mod commands;
mod gold;
mod pcfg_cmd;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

use attnparse::HeadId;

/// Unsupervised constituency parsing from transformer attention heads.
#[derive(Parser, Debug)]
#[command(name = "attnparse", version)]
struct Cli {
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check attention corpora, treebanks and ranking files.
    Validate(ValidateArgs),
    /// Write the preprocessed gold sentences, one per line.
    Sentences(SentencesArgs),
    /// Rank heads by how tree-like their attention is.
    Rank(RankArgs),
    /// Parse a corpus with an ensemble of heads.
    Parse(ParseArgs),
    /// Score trivial right, left and balanced trees.
    Baseline(BaselineArgs),
    /// Score predicted trees against a treebank.
    Eval(EvalArgs),
    /// Learn and evaluate a PCFG over induced trees.
    #[command(subcommand)]
    Pcfg(PcfgCommand),
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("input").required(true).multiple(true))]
struct ValidateArgs {
    #[arg(long, group = "input")]
    attn: Option<PathBuf>,
    #[arg(long, group = "input")]
    treebank: Option<PathBuf>,
    #[arg(long, group = "input")]
    ranking: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SentencesArgs {
    #[arg(long)]
    treebank: PathBuf,
    /// Output file; standard output if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum RankModeArg {
    Regularized,
    Plain,
}

#[derive(Args, Debug)]
struct RankArgs {
    #[arg(long)]
    attn: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "regularized")]
    mode: RankModeArg,
    /// Longest sentence used for ranking.
    #[arg(long, default_value_t = 64)]
    max_len: usize,
}

/// How many top-ranked heads to ensemble.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum KArg {
    Dynamic,
    Lazy,
    Full,
    Fixed(usize),
}

impl FromStr for KArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dynamic" => Ok(KArg::Dynamic),
            "lazy" => Ok(KArg::Lazy),
            "full" => Ok(KArg::Full),
            _ => match s.parse::<usize>() {
                Ok(k) if k >= 1 => Ok(KArg::Fixed(k)),
                _ => Err(format!("expected dynamic, lazy, full or a positive integer, got {s:?}")),
            },
        }
    }
}

impl fmt::Display for KArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KArg::Dynamic => f.write_str("dynamic"),
            KArg::Lazy => f.write_str("lazy"),
            KArg::Full => f.write_str("full"),
            KArg::Fixed(k) => write!(f, "{k}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ScopeArg {
    TopK,
    Layer(usize),
    Head(HeadId),
}

impl FromStr for ScopeArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "top-k" {
            return Ok(ScopeArg::TopK);
        }
        if let Some(u) = s.strip_prefix("layer:") {
            return match u.parse::<usize>() {
                Ok(u) if u >= 1 => Ok(ScopeArg::Layer(u)),
                _ => Err(format!("bad layer in {s:?}")),
            };
        }
        if let Some(h) = s.strip_prefix("head:") {
            return h.parse::<HeadId>().map(ScopeArg::Head).map_err(|e| format!("bad head in {s:?}: {e}"));
        }
        Err(format!("expected top-k, layer:U or head:U.V, got {s:?}"))
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum MergeArg {
    Trees,
    Matrices,
}

#[derive(Args, Debug)]
struct ParseArgs {
    /// Attention corpus to parse.
    #[arg(long)]
    attn: PathBuf,
    /// Ranking produced by `rank`; required for the top-k scope.
    #[arg(long)]
    ranking: Option<PathBuf>,
    /// Output trees; standard output if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// dynamic, lazy (30), full, or a fixed count.
    #[arg(long, default_value = "dynamic")]
    k: KArg,
    /// top-k, layer:U or head:U.V
    #[arg(long, default_value = "top-k")]
    scope: ScopeArg,
    #[arg(long, value_enum, default_value = "trees")]
    merge: MergeArg,
    /// Chart configurations to ensemble, e.g. jsd/pair; all four by default.
    #[arg(long, value_delimiter = ',')]
    combos: Vec<String>,
    /// Smoothing half-width for dynamic K.
    #[arg(long, default_value_t = 3)]
    delta: usize,
    /// Smallest K considered by dynamic K.
    #[arg(long, default_value_t = 30)]
    k_min: usize,
    /// Largest K considered, as a fraction of the head count.
    #[arg(long, default_value_t = 0.75)]
    k_max_fraction: f64,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum BaselineArg {
    Right,
    Left,
    Balanced,
}

#[derive(Args, Debug)]
struct BaselineArgs {
    #[arg(long)]
    gold: PathBuf,
    /// A single baseline; all three if omitted.
    #[arg(long, value_enum)]
    mode: Option<BaselineArg>,
    /// Write the baseline trees (requires --mode).
    #[arg(long, requires = "mode")]
    out: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Count the whole-sentence span when scoring.
    #[arg(long)]
    keep_whole_span: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Predicted trees, one unlabeled bracketed tree per line.
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    keep_whole_span: bool,
}

#[derive(Subcommand, Debug)]
enum PcfgCommand {
    /// Fit a grammar to bracketed sentences with EM.
    Train(pcfg_cmd::TrainArgs),
    /// Label bracketed sentences with their best symbol assignment.
    Label(pcfg_cmd::LabelArgs),
    /// M-1 preterminal and rule accuracy of labeled trees.
    Eval(pcfg_cmd::EvalArgs),
}

/// An invalid flag combination detected after argument parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Validate(a) => commands::validate(a),
        Command::Sentences(a) => commands::sentences(a),
        Command::Rank(a) => commands::rank(a),
        Command::Parse(a) => commands::parse(a),
        Command::Baseline(a) => commands::baseline(a),
        Command::Eval(a) => commands::eval(a),
        Command::Pcfg(PcfgCommand::Train(a)) => pcfg_cmd::train(a),
        Command::Pcfg(PcfgCommand::Label(a)) => pcfg_cmd::label(a),
        Command::Pcfg(PcfgCommand::Eval(a)) => pcfg_cmd::eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn k_and_scope_parse() {
        assert_eq!("dynamic".parse::<KArg>().unwrap(), KArg::Dynamic);
        assert_eq!("30".parse::<KArg>().unwrap(), KArg::Fixed(30));
        assert!("0".parse::<KArg>().is_err());
        assert_eq!("layer:3".parse::<ScopeArg>().unwrap(), ScopeArg::Layer(3));
        assert_eq!("head:2.5".parse::<ScopeArg>().unwrap(), ScopeArg::Head(HeadId::new(2, 5)));
        assert!("layer:0".parse::<ScopeArg>().is_err());
    }
}
