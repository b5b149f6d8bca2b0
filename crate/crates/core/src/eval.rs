//! Cross-validated evaluation: negative sampling, exact-set accuracy metrics,
//! link timing and the variant ablation grid.

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::{FeatureTables, SkipGramConfig};
use crate::error::{io_err, Error, Result};
use crate::features::{SimTable, TokenVectors, LINK_CAP};
use crate::kg::{KnowledgeGraph, RelationType};
use crate::linker::{pair_links, Linker, LinkerVariant};
use crate::matchnet::{
    train_epochwise, MatchModel, MatchModelConfig, ModelOptions, PairSet, PairSide, TrainOutcome, TrainingPair,
};
use crate::text::{segment, Lexicon, Token};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledText {
    pub text_id: String,
    pub text: String,
    pub gold: BTreeSet<String>,
}

/// Parses `text_id<TAB>text<TAB>id,id,...` records. The gold field may be
/// empty.
pub fn corpus_from_str(s: &str) -> Result<Vec<LabeledText>> {
    let mut out = Vec::new();
    for (n, line) in s.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse(format!("corpus line {}: expected 3 tab-separated fields, got {}", n + 1, fields.len())));
        }
        if fields[0].is_empty() {
            return Err(Error::Parse(format!("corpus line {}: empty text id", n + 1)));
        }
        let gold = fields[2].split(',').map(str::trim).filter(|g| !g.is_empty()).map(String::from).collect();
        out.push(LabeledText { text_id: fields[0].to_string(), text: fields[1].to_string(), gold });
    }
    Ok(out)
}

pub fn corpus_to_string(corpus: &[LabeledText]) -> String {
    let mut s = String::new();
    for t in corpus {
        let gold: Vec<&str> = t.gold.iter().map(String::as_str).collect();
        let _ = writeln!(s, "{}\t{}\t{}", t.text_id, t.text, gold.join(","));
    }
    s
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<LabeledText>> {
    let path = path.as_ref();
    corpus_from_str(&std::fs::read_to_string(path).map_err(io_err(path))?)
}

pub fn save_corpus(corpus: &[LabeledText], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, corpus_to_string(corpus)).map_err(io_err(path))
}

/// Checks that every gold id names a link target in `kg`.
pub fn validate_corpus(corpus: &[LabeledText], kg: &KnowledgeGraph) -> Result<()> {
    for t in corpus {
        for g in &t.gold {
            if kg.relation_of(g).is_none() {
                return Err(Error::Parse(format!("text `{}` has gold id `{g}` that is not a link target", t.text_id)));
            }
        }
    }
    Ok(())
}

/// Fraction of texts whose predicted set equals the gold set.
pub fn accuracy(results: &[(BTreeSet<String>, BTreeSet<String>)]) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::EmptyDenominator("accuracy over zero texts".into()));
    }
    let correct = results.iter().filter(|(p, g)| p == g).count();
    Ok(correct as f64 / results.len() as f64)
}

fn restrict(set: &BTreeSet<String>, rt: RelationType, kg: &KnowledgeGraph) -> BTreeSet<String> {
    set.iter().filter(|id| kg.relation_of(id) == Some(rt)).cloned().collect()
}

/// `(correct, denominator)` of the type-restricted exact-set metric.
pub fn type_counts(results: &[(BTreeSet<String>, BTreeSet<String>)], rt: RelationType, kg: &KnowledgeGraph) -> (usize, usize) {
    let mut correct = 0;
    let mut total = 0;
    for (p, g) in results {
        let gr = restrict(g, rt, kg);
        if gr.is_empty() {
            continue;
        }
        total += 1;
        if restrict(p, rt, kg) == gr {
            correct += 1;
        }
    }
    (correct, total)
}

/// Over texts with at least one gold entity of type `rt`, the fraction whose
/// `rt`-restricted prediction equals the `rt`-restricted gold set.
pub fn accuracy_by_type(results: &[(BTreeSet<String>, BTreeSet<String>)], rt: RelationType, kg: &KnowledgeGraph) -> Result<f64> {
    match type_counts(results, rt, kg) {
        (_, 0) => Err(Error::EmptyDenominator(format!("no text has a gold {rt} entity"))),
        (c, n) => Ok(c as f64 / n as f64),
    }
}

/// `n` distinct link targets outside the text's gold set, uniformly drawn
/// and returned in id order.
pub fn sample_negatives(text: &LabeledText, kg: &KnowledgeGraph, n: usize, seed: u64) -> Result<Vec<String>> {
    let pool: Vec<&str> = kg.candidates().map(|e| e.id.as_str()).filter(|id| !text.gold.contains(*id)).collect();
    if pool.len() < n {
        return Err(Error::InsufficientCandidates { needed: n, available: pool.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<String> = pool.choose_multiple(&mut rng, n).map(|s| s.to_string()).collect();
    picked.sort();
    Ok(picked)
}

/// Shuffles `0..len` with `seed` and deals it into `k` folds whose sizes
/// differ by at most one.
pub fn fold_indices(len: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Config("cross-validation needs at least 2 folds".into()));
    }
    if len < k {
        return Err(Error::Config(format!("corpus of {len} texts is too small for {k} folds")));
    }
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = len / k;
    let extra = len % k;
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        out.push(idx[start..start + size].to_vec());
        start += size;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegativeSampling {
    /// One draw per training text per fold.
    OncePerText,
    /// A fresh draw every epoch.
    PerEpoch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub folds: usize,
    pub negatives: usize,
    pub negative_sampling: NegativeSampling,
    pub seed: u64,
    pub embedding: SkipGramConfig,
    pub matcher: MatchModelConfig,
    pub variants: Vec<LinkerVariant>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            negatives: 7,
            negative_sampling: NegativeSampling::OncePerText,
            seed: 0,
            embedding: SkipGramConfig::default(),
            matcher: MatchModelConfig::default(),
            variants: LinkerVariant::ALL.to_vec(),
        }
    }
}

/// Correct-count and denominator of one metric.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Count {
    pub correct: usize,
    pub total: usize,
}

impl Count {
    pub fn rate(self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub all: Count,
    pub name: Count,
    pub state: Count,
    pub operation: Count,
}

impl FoldMetrics {
    pub fn from_results(results: &[(BTreeSet<String>, BTreeSet<String>)], kg: &KnowledgeGraph) -> Self {
        let c = |(correct, total)| Count { correct, total };
        Self {
            all: Count { correct: results.iter().filter(|(p, g)| p == g).count(), total: results.len() },
            name: c(type_counts(results, RelationType::Name, kg)),
            state: c(type_counts(results, RelationType::State, kg)),
            operation: c(type_counts(results, RelationType::Operation, kg)),
        }
    }

    pub fn get(&self, rt: Option<RelationType>) -> Count {
        match rt {
            None => self.all,
            Some(RelationType::Name) => self.name,
            Some(RelationType::State) => self.state,
            Some(RelationType::Operation) => self.operation,
        }
    }
}

/// One row of the ablation table. Accuracies are means over folds; a
/// per-type mean skips folds without that type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantRow {
    pub variant: String,
    pub acc: f64,
    pub acc_name: Option<f64>,
    pub acc_state: Option<f64>,
    pub acc_operate: Option<f64>,
    pub folds: Vec<FoldMetrics>,
    /// Per-fold final training loss (neural variants).
    pub final_loss: Vec<f64>,
}

impl VariantRow {
    fn from_folds(variant: LinkerVariant, folds: Vec<FoldMetrics>, final_loss: Vec<f64>) -> Self {
        let mean = |rt| {
            let rates: Vec<f64> = folds.iter().filter_map(|f| f.get(rt).rate()).collect();
            (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64)
        };
        Self {
            variant: variant.as_str().to_string(),
            acc: mean(None).unwrap_or(0.0),
            acc_name: mean(Some(RelationType::Name)),
            acc_state: mean(Some(RelationType::State)),
            acc_operate: mean(Some(RelationType::Operation)),
            folds,
            final_loss,
        }
    }

    pub fn linker_variant(&self) -> LinkerVariant {
        self.variant.parse().expect("row holds a valid variant name")
    }
}

/// Deterministic part of an evaluation: metrics only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub folds: usize,
    pub texts: usize,
    pub rows: Vec<VariantRow>,
}

impl EvalReport {
    pub fn row(&self, v: LinkerVariant) -> Option<&VariantRow> {
        self.rows.iter().find(|r| r.variant == v.as_str())
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Aligned text table; with `timing`, a mean link-time column is added.
    pub fn to_table(&self, timing: Option<&TimingReport>) -> String {
        let pct = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{:.2}", 100.0 * x));
        let mut s = String::new();
        let _ = write!(s, "{:<14}{:>9}{:>10}{:>11}{:>13}", "variant", "acc", "acc_name", "acc_state", "acc_operate");
        if timing.is_some() {
            let _ = write!(s, "{:>12}", "t/s");
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(
                s,
                "{:<14}{:>9}{:>10}{:>11}{:>13}",
                r.variant,
                pct(Some(r.acc)),
                pct(r.acc_name),
                pct(r.acc_state),
                pct(r.acc_operate)
            );
            if let Some(t) = timing.and_then(|t| t.rows.iter().find(|x| x.variant == r.variant)) {
                let _ = write!(s, "{:>12.6}", t.mean_seconds);
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub variant: String,
    /// Mean wall time per test text, averaged over folds.
    pub mean_seconds: f64,
    pub max_seconds: f64,
    pub fold_means: Vec<f64>,
}

/// Wall-clock link times; kept apart from [`EvalReport`] because they vary
/// between runs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub rows: Vec<TimingRow>,
}

impl TimingReport {
    pub fn row(&self, v: LinkerVariant) -> Option<&TimingRow> {
        self.rows.iter().find(|r| r.variant == v.as_str())
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("timing serializes") + "\n"
    }
}

/// Everything a fold needs that does not depend on the variant.
struct FoldData {
    tables: FeatureTables,
    pairs: PairSet,
}

struct Prepared<'a> {
    kg: &'a KnowledgeGraph,
    corpus: &'a [LabeledText],
    text_tokens: Vec<Vec<Token>>,
    entity_tokens: BTreeMap<String, Vec<Token>>,
    sim: SimTable,
}

impl Prepared<'_> {
    fn fold_tables(&self, train: &[usize], cfg: &SkipGramConfig) -> Result<FeatureTables> {
        let sentences: Vec<Vec<Token>> =
            train.iter().map(|&i| self.text_tokens[i].clone()).filter(|s| !s.is_empty()).collect();
        FeatureTables::train(&sentences, cfg)
    }

    fn pair_set(&self, train: &[usize], tables: &FeatureTables, cfg: &EvalConfig, fold: usize, epoch: Option<usize>) -> Result<PairSet> {
        let mut set = PairSet::new(tables.dim());
        let side = |set: &mut PairSet, toks: &[Token]| -> (Vec<u32>, Vec<TokenVectors>) {
            let vecs: Vec<TokenVectors> = toks.iter().map(|t| TokenVectors::of(t, tables)).collect();
            let rows = toks.iter().zip(&vecs).map(|(t, v)| set.store.intern(&t.surface, v)).collect();
            (rows, vecs)
        };
        for &i in train {
            let text = &self.corpus[i];
            let toks = &self.text_tokens[i];
            if toks.is_empty() {
                continue;
            }
            let (t_rows, t_vecs) = side(&mut set, toks);
            let seed = derive_seed(cfg.seed, &[fold as u64, i as u64, epoch.map_or(u64::MAX, |e| e as u64)]);
            let negatives = sample_negatives(text, self.kg, cfg.negatives, seed)?;
            let labelled = text.gold.iter().map(|g| (g, true)).chain(negatives.iter().map(|g| (g, false)));
            for (id, label) in labelled {
                let e_toks = &self.entity_tokens[id];
                let (e_rows, e_vecs) = side(&mut set, e_toks);
                let (e_links, t_links) = pair_links(e_toks, &e_vecs, toks, &t_vecs, &self.sim, LINK_CAP);
                set.pairs.push(TrainingPair {
                    entity: PairSide { rows: e_rows, links: e_links },
                    text: PairSide { rows: t_rows.clone(), links: t_links },
                    label,
                });
            }
        }
        Ok(set)
    }
}

/// Mixes `parts` into `seed` (splitmix64 steps).
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut z = seed;
    for &p in parts {
        z = z.wrapping_add(p).wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

/// Progress callback: `(fold, variant, stage)`.
pub type Progress<'a> = &'a mut dyn FnMut(usize, Option<LinkerVariant>, &str);

/// k-fold cross-validation of every configured variant. Per fold, the
/// training texts train the feature tables and the matcher; negatives are
/// shared by all neural variants.
pub fn run_ablation(
    corpus: &[LabeledText],
    kg: &KnowledgeGraph,
    lexicon: &Lexicon,
    cfg: &EvalConfig,
    progress: Option<Progress<'_>>,
) -> Result<(EvalReport, TimingReport)> {
    let mut noop = |_: usize, _: Option<LinkerVariant>, _: &str| {};
    let progress: Progress<'_> = match progress {
        Some(p) => p,
        None => &mut noop,
    };
    validate_corpus(corpus, kg)?;
    if cfg.variants.is_empty() {
        return Err(Error::Config("no variants to evaluate".into()));
    }
    if cfg.matcher.dim != cfg.embedding.dim {
        return Err(Error::Config(format!(
            "matcher dim {} differs from embedding dim {}",
            cfg.matcher.dim, cfg.embedding.dim
        )));
    }
    let folds = fold_indices(corpus.len(), cfg.folds, cfg.seed)?;
    let prep = Prepared {
        kg,
        corpus,
        text_tokens: corpus.iter().map(|t| segment(&t.text, lexicon)).collect(),
        entity_tokens: kg.candidates().map(|e| (e.id.clone(), segment(&e.surface, lexicon))).collect(),
        sim: SimTable::default(),
    };

    let mut metrics: BTreeMap<LinkerVariant, Vec<FoldMetrics>> = BTreeMap::new();
    let mut losses: BTreeMap<LinkerVariant, Vec<f64>> = BTreeMap::new();
    let mut times: BTreeMap<LinkerVariant, Vec<(f64, f64)>> = BTreeMap::new();

    for (f, test) in folds.iter().enumerate() {
        let train: Vec<usize> = folds.iter().enumerate().filter(|(g, _)| *g != f).flat_map(|(_, v)| v.iter().copied()).collect();
        let needs_model = cfg.variants.iter().any(|v| v.is_neural());
        let data = if needs_model {
            progress(f, None, "embeddings");
            let emb_cfg = SkipGramConfig { seed: derive_seed(cfg.embedding.seed, &[f as u64]), ..cfg.embedding.clone() };
            let tables = prep.fold_tables(&train, &emb_cfg)?;
            progress(f, None, "pairs");
            let pairs = prep.pair_set(&train, &tables, cfg, f, None)?;
            Some(FoldData { tables, pairs })
        } else {
            None
        };
        let test_texts: Vec<&LabeledText> = test.iter().map(|&i| &corpus[i]).collect();

        for &variant in &cfg.variants {
            let linker = match (&data, variant.options()) {
                (Some(d), Some(options)) => {
                    progress(f, Some(variant), "train");
                    let mcfg = MatchModelConfig { options, seed: derive_seed(cfg.matcher.seed, &[f as u64]), ..cfg.matcher.clone() };
                    let model = MatchModel::new(mcfg)?;
                    let outcome = match cfg.negative_sampling {
                        NegativeSampling::OncePerText => train_epochwise(model, |_| Ok(Cow::Borrowed(&d.pairs)))?,
                        NegativeSampling::PerEpoch => train_epochwise(model, |e| {
                            let set = if e == 0 { d.pairs.clone() } else { prep.pair_set(&train, &d.tables, cfg, f, Some(e))? };
                            Ok(Cow::Owned(set))
                        })?,
                    };
                    losses.entry(variant).or_default().push(*outcome.loss_curve.last().unwrap_or(&f64::NAN));
                    Linker::neural(kg, lexicon.clone(), d.tables.clone(), &outcome.model, variant)?
                }
                _ => Linker::baseline(kg, lexicon.clone(), variant)?,
            };
            progress(f, Some(variant), "link");
            let mut results = Vec::with_capacity(test_texts.len());
            let mut total = 0.0;
            let mut worst: f64 = 0.0;
            for t in &test_texts {
                let start = Instant::now();
                let predicted = if t.text.trim().is_empty() {
                    BTreeSet::new()
                } else {
                    linker.link(&t.text_id, &t.text)?.entity_ids()
                };
                let secs = start.elapsed().as_secs_f64();
                total += secs;
                worst = worst.max(secs);
                results.push((predicted, t.gold.clone()));
            }
            metrics.entry(variant).or_default().push(FoldMetrics::from_results(&results, kg));
            times.entry(variant).or_default().push((total / test_texts.len() as f64, worst));
        }
    }

    let rows = cfg
        .variants
        .iter()
        .map(|&v| VariantRow::from_folds(v, metrics.remove(&v).unwrap_or_default(), losses.remove(&v).unwrap_or_default()))
        .collect();
    let timing = TimingReport {
        rows: cfg
            .variants
            .iter()
            .map(|&v| {
                let t = times.remove(&v).unwrap_or_default();
                let fold_means: Vec<f64> = t.iter().map(|x| x.0).collect();
                TimingRow {
                    variant: v.as_str().to_string(),
                    mean_seconds: fold_means.iter().sum::<f64>() / fold_means.len().max(1) as f64,
                    max_seconds: t.iter().map(|x| x.1).fold(0.0, f64::max),
                    fold_means,
                }
            })
            .collect(),
    };
    Ok((EvalReport { seed: cfg.seed, folds: cfg.folds, texts: corpus.len(), rows }, timing))
}

/// Trains a matcher on the whole corpus with the given feature tables, using
/// the same pair construction as cross-validation.
pub fn train_matcher(
    corpus: &[LabeledText],
    kg: &KnowledgeGraph,
    lexicon: &Lexicon,
    tables: &FeatureTables,
    cfg: &EvalConfig,
    options: ModelOptions,
) -> Result<TrainOutcome> {
    validate_corpus(corpus, kg)?;
    if cfg.matcher.dim != tables.dim() {
        return Err(Error::Config(format!("matcher dim {} differs from table dim {}", cfg.matcher.dim, tables.dim())));
    }
    let prep = Prepared {
        kg,
        corpus,
        text_tokens: corpus.iter().map(|t| segment(&t.text, lexicon)).collect(),
        entity_tokens: kg.candidates().map(|e| (e.id.clone(), segment(&e.surface, lexicon))).collect(),
        sim: SimTable::default(),
    };
    let all: Vec<usize> = (0..corpus.len()).collect();
    let model = MatchModel::new(MatchModelConfig { options, ..cfg.matcher.clone() })?;
    match cfg.negative_sampling {
        NegativeSampling::OncePerText => {
            let set = prep.pair_set(&all, tables, cfg, 0, None)?;
            train_epochwise(model, |_| Ok(Cow::Borrowed(&set)))
        }
        NegativeSampling::PerEpoch => train_epochwise(model, |e| Ok(Cow::Owned(prep.pair_set(&all, tables, cfg, 0, Some(e))?))),
    }
}

/// Cross-validation of a single variant.
pub fn cross_validate(
    corpus: &[LabeledText],
    kg: &KnowledgeGraph,
    lexicon: &Lexicon,
    cfg: &EvalConfig,
    variant: LinkerVariant,
) -> Result<(VariantRow, TimingRow)> {
    let cfg = EvalConfig { variants: vec![variant], ..cfg.clone() };
    let (mut report, mut timing) = run_ablation(corpus, kg, lexicon, &cfg, None)?;
    Ok((report.rows.remove(0), timing.rows.remove(0)))
}
