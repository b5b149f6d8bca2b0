//! `gridlink`: generate data, train the feature tables and the matcher, link
//! texts, and run the evaluation grid.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gridlink::eval::{cross_validate, load_corpus, save_corpus, EvalReport, TimingReport};
use gridlink::linker::format_results;
use gridlink::matchnet::desk_check;
use gridlink::{
    generate, run_ablation, train_matcher, FeatureTables, KnowledgeGraph, Lexicon, Linker, LinkerVariant, MatchModel,
};
use serde::Serialize;

use config::FileConfig;

const KG_FILE: &str = "kg.json";
const LEXICON_FILE: &str = "lexicon.tsv";
const CORPUS_FILE: &str = "corpus.tsv";
const MODEL_FILE: &str = "model.json";
const MANIFEST_FILE: &str = "manifest.json";
const THREADS_ENV: &str = "GRIDLINK_THREADS";
const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "gridlink", version, about = "Entity linking for distribution-dispatch texts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Master seed; overrides `seed` in the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct DataArg {
    /// Directory holding kg.json, lexicon.tsv and corpus.tsv.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a knowledge graph, lexicon and labelled corpus.
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the semantic, pronunciation and part-of-speech tables on a corpus.
    TrainEmbeddings {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the matching network on a corpus.
    TrainMatcher {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        /// Directory written by train-embeddings.
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long, default_value = "full")]
        variant: LinkerVariant,
        #[arg(long)]
        out: PathBuf,
    },
    /// Link texts to knowledge-graph entities.
    Link {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        /// Tab-separated texts: id, text, and an optional ignored third column.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Checkpoint written by train-matcher.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value = "full")]
        variant: LinkerVariant,
        /// Decision threshold on the match probability.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validate one variant.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[arg(long, default_value = "full")]
        variant: LinkerVariant,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validate every configured variant and write the comparison table.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Existing data directory; generated from the config when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic gradients with central differences on a small random
    /// instance.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Serialize)]
struct RunManifest {
    subcommand: String,
    config: Option<PathBuf>,
    seed: u64,
    out: Option<PathBuf>,
    started_unix: f64,
    finished_unix: f64,
    version: &'static str,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write(path: impl AsRef<Path>, contents: impl AsRef<[u8]>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

struct Data {
    kg: KnowledgeGraph,
    lexicon: Lexicon,
}

fn load_data(dir: &Path) -> Result<Data> {
    let kg = KnowledgeGraph::load(dir.join(KG_FILE))?;
    let lexicon = Lexicon::load_tsv(dir.join(LEXICON_FILE))?;
    Ok(Data { kg, lexicon })
}

fn load_labeled(dir: &Path) -> Result<Vec<gridlink::LabeledText>> {
    Ok(load_corpus(dir.join(CORPUS_FILE))?)
}

fn read_texts(path: &Path) -> Result<Vec<(String, String)>> {
    let s = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (n, line) in s.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        match (fields.next(), fields.next()) {
            (Some(id), Some(text)) if !id.is_empty() => out.push((id.to_string(), text.to_string())),
            _ => bail!("{}:{}: expected `id<TAB>text`", path.display(), n + 1),
        }
    }
    Ok(out)
}

fn print_table(report: &EvalReport, timing: &TimingReport) {
    print!("{}", report.to_table(Some(timing)));
}

/// Runs a subcommand; returns its outcome and the output directory that
/// receives the manifest.
fn run(command: Command) -> Result<(bool, Option<PathBuf>)> {
    let progress = |fold: usize, v: Option<LinkerVariant>, stage: &str| match v {
        Some(v) => eprintln!("fold {fold}: {v} {stage}"),
        None => eprintln!("fold {fold}: {stage}"),
    };
    match command {
        Command::Gen { common, out } => {
            let cfg = FileConfig::load(common.config.as_deref(), common.seed)?;
            let g = generate(&cfg.gen)?;
            create_dir(&out)?;
            g.kg.save(out.join(KG_FILE))?;
            g.lexicon.save_tsv(out.join(LEXICON_FILE))?;
            save_corpus(&g.corpus, out.join(CORPUS_FILE))?;
            eprintln!("{} entities, {} texts, {} lexicon entries", g.kg.len(), g.corpus.len(), g.lexicon.len());
            Ok((true, Some(out)))
        }
        Command::TrainEmbeddings { common, data, out } => {
            let cfg = FileConfig::load(common.config.as_deref(), common.seed)?;
            let d = load_data(&data.data)?;
            let corpus = load_labeled(&data.data)?;
            let sentences: Vec<_> = corpus.iter().map(|t| gridlink::segment(&t.text, &d.lexicon)).filter(|s| !s.is_empty()).collect();
            let tables = FeatureTables::train(&sentences, &cfg.embedding)?;
            tables.save_dir(&out)?;
            Ok((true, Some(out)))
        }
        Command::TrainMatcher { common, data, embeddings, variant, out } => {
            let cfg = FileConfig::load(common.config.as_deref(), common.seed)?;
            let Some(options) = variant.options() else {
                bail!("variant {variant} has no matcher to train");
            };
            let d = load_data(&data.data)?;
            let corpus = load_labeled(&data.data)?;
            let tables = FeatureTables::load_dir(&embeddings)?;
            let outcome = train_matcher(&corpus, &d.kg, &d.lexicon, &tables, &cfg.eval_config(), options)?;
            create_dir(&out)?;
            outcome.model.save(out.join(MODEL_FILE))?;
            #[derive(Serialize)]
            struct Curves<'a> {
                variant: LinkerVariant,
                loss: &'a [f64],
                accuracy: &'a [f64],
            }
            let curves = Curves { variant, loss: &outcome.loss_curve, accuracy: &outcome.accuracy_curve };
            write(out.join("training.json"), serde_json::to_string_pretty(&curves)? + "\n")?;
            if let Some(l) = outcome.loss_curve.last() {
                eprintln!("final loss {l:.6}");
            }
            Ok((true, Some(out)))
        }
        Command::Link { common, data, input, embeddings, model, variant, threshold, out } => {
            let _ = FileConfig::load(common.config.as_deref(), common.seed)?;
            let d = load_data(&data.data)?;
            let mut linker = if variant.is_neural() {
                let (Some(emb), Some(model)) = (embeddings, model) else {
                    bail!("variant {variant} needs --embeddings and --model");
                };
                let tables = FeatureTables::load_dir(&emb)?;
                let model = MatchModel::load(&model).with_context(|| format!("loading {}", model.display()))?;
                Linker::neural(&d.kg, d.lexicon, tables, &model, variant)?
            } else {
                Linker::baseline(&d.kg, d.lexicon, variant)?
            };
            if let Some(t) = threshold {
                linker.set_threshold(t)?;
            }
            let texts = read_texts(&input)?;
            let results = linker.link_all(&texts)?;
            create_dir(&out)?;
            write(out.join("links.tsv"), format_results(&results))?;
            Ok((true, Some(out)))
        }
        Command::Eval { common, data, variant, out } => {
            let cfg = FileConfig::load(common.config.as_deref(), common.seed)?;
            let d = load_data(&data.data)?;
            let corpus = load_labeled(&data.data)?;
            let (row, timing) = cross_validate(&corpus, &d.kg, &d.lexicon, &cfg.eval_config(), variant)?;
            let report = EvalReport { seed: cfg.seed, folds: cfg.eval.folds, texts: corpus.len(), rows: vec![row] };
            let timing = TimingReport { rows: vec![timing] };
            create_dir(&out)?;
            write(out.join("eval.json"), report.to_json_string())?;
            write(out.join("eval.txt"), report.to_table(None))?;
            write(out.join("timing.json"), timing.to_json_string())?;
            print_table(&report, &timing);
            Ok((true, Some(out)))
        }
        Command::Ablate { common, data, out } => {
            let cfg = FileConfig::load(common.config.as_deref(), common.seed)?;
            let (kg, lexicon, corpus) = match data {
                Some(dir) => {
                    let d = load_data(&dir)?;
                    (d.kg, d.lexicon, load_labeled(&dir)?)
                }
                None => {
                    let g = generate(&cfg.gen)?;
                    (g.kg, g.lexicon, g.corpus)
                }
            };
            let mut progress = progress;
            let (report, timing) = run_ablation(&corpus, &kg, &lexicon, &cfg.eval_config(), Some(&mut progress))?;
            create_dir(&out)?;
            write(out.join("report.json"), report.to_json_string())?;
            write(out.join("report.txt"), report.to_table(None))?;
            write(out.join("timing.json"), timing.to_json_string())?;
            print_table(&report, &timing);
            Ok((true, Some(out)))
        }
        Command::Gradcheck { common, out } => {
            let cfg = FileConfig::load(common.config.as_deref(), common.seed)?;
            let lines = desk_check(cfg.seed)?;
            let mut ok = true;
            let mut text = String::new();
            for (name, err) in &lines {
                let pass = *err < GRAD_TOLERANCE;
                ok &= pass;
                text.push_str(&format!("{name:<24} {err:.3e} {}\n", if pass { "ok" } else { "FAIL" }));
            }
            print!("{text}");
            if let Some(dir) = &out {
                create_dir(dir)?;
                write(dir.join("gradcheck.txt"), &text)?;
            }
            if !ok {
                eprintln!("gradient check failed: relative error at or above {GRAD_TOLERANCE:e}");
            }
            Ok((ok, out))
        }
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.parse().with_context(|| format!("{THREADS_ENV} must be a positive integer, got {v:?}"))?;
        if n == 0 {
            bail!("{THREADS_ENV} must be a positive integer");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring thread pool")?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let started = now();
    let (name, common) = match &cli.command {
        Command::Gen { common, .. } => ("gen", common),
        Command::TrainEmbeddings { common, .. } => ("train-embeddings", common),
        Command::TrainMatcher { common, .. } => ("train-matcher", common),
        Command::Link { common, .. } => ("link", common),
        Command::Eval { common, .. } => ("eval", common),
        Command::Ablate { common, .. } => ("ablate", common),
        Command::Gradcheck { common, .. } => ("gradcheck", common),
    };
    let common = common.clone();
    let result = configure_threads().and_then(|_| run(cli.command));
    match result {
        Ok((ok, out)) => {
            if let Some(dir) = out {
                let seed = FileConfig::load(common.config.as_deref(), common.seed).map(|c| c.seed).unwrap_or_default();
                let manifest = RunManifest {
                    subcommand: name.to_string(),
                    config: common.config,
                    seed,
                    out: Some(dir.clone()),
                    started_unix: started,
                    finished_unix: now(),
                    version: env!("CARGO_PKG_VERSION"),
                };
                let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
                if let Err(e) = write(dir.join(MANIFEST_FILE), json) {
                    eprintln!("error: {e:#}");
                    return ExitCode::FAILURE;
                }
            }
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(3)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
