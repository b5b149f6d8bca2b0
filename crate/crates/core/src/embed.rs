//! Feature-vector tables: word semantics (skip-gram), syllable pronunciation
//! (pinyin2vec) and part of speech (pos2vec).
//!
//! All three trainers share one full-softmax skip-gram core: a center item
//! selects a row of the input matrix, the output matrix maps it to scores
//! over the target vocabulary, and each target contributes a softmax
//! cross-entropy term. Only the choice of input and target vocabularies
//! differs between the three tables.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::text::{PosTag, Token, UNKNOWN_SYLLABLE_PREFIX};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        Self { dim: 50, window: 2, learning_rate: 0.05, epochs: 30, seed: 0 }
    }
}

impl SkipGramConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.window == 0 || self.epochs == 0 {
            return Err(Error::Config("skip-gram dim, window and epochs must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("skip-gram learning rate must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate for `epoch`, decayed linearly to 10% at the last epoch.
    pub fn rate_at(&self, epoch: usize) -> f64 {
        let span = self.epochs.saturating_sub(1).max(1) as f64;
        self.learning_rate * (1.0 - 0.9 * epoch as f64 / span)
    }
}

/// Softmax over `z`, in place.
pub fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// One training instance: a center item and the items it must predict.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub center: usize,
    pub targets: Vec<usize>,
}

/// Full-softmax skip-gram parameters. `input` is `n_in × dim` (row per center
/// item); `output` is `dim × n_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct SkipGram {
    pub n_in: usize,
    pub n_out: usize,
    pub dim: usize,
    pub input: Vec<f64>,
    pub output: Vec<f64>,
}

/// Gradient of one example's loss. Only the center row of the input matrix
/// receives gradient.
#[derive(Clone, Debug)]
pub struct SkipGramGrad {
    pub input_row: Vec<f64>,
    pub output: Vec<f64>,
}

impl SkipGram {
    pub fn new(n_in: usize, n_out: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 0.5 / dim as f64;
        let mut draw = |n: usize| (0..n).map(|_| rng.gen_range(-bound..=bound)).collect::<Vec<_>>();
        let input = draw(n_in * dim);
        let output = draw(dim * n_out);
        Self { n_in, n_out, dim, input, output }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.input[i * self.dim..(i + 1) * self.dim]
    }

    fn scores(&self, center: usize) -> Vec<f64> {
        let h = self.row(center);
        let mut z = vec![0.0; self.n_out];
        for (d, &hd) in h.iter().enumerate() {
            let out_row = &self.output[d * self.n_out..(d + 1) * self.n_out];
            for (zk, &w) in z.iter_mut().zip(out_row) {
                *zk += hd * w;
            }
        }
        z
    }

    /// Softmax distribution over output items for `center`.
    pub fn predict(&self, center: usize) -> Vec<f64> {
        let mut z = self.scores(center);
        softmax_in_place(&mut z);
        z
    }

    /// Sum over targets of the softmax cross-entropy.
    pub fn loss(&self, ex: &Example) -> f64 {
        let z = self.scores(ex.center);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        ex.targets.iter().map(|&t| lse - z[t]).sum()
    }

    /// Loss and its error signal `dz = n·p − Σ onehot(t)`.
    fn error_signal(&self, ex: &Example) -> (f64, Vec<f64>) {
        let z = self.scores(ex.center);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = ex.targets.iter().map(|&t| lse - z[t]).sum();
        let n = ex.targets.len() as f64;
        let mut dz: Vec<f64> = z.iter().map(|v| n * (v - lse).exp()).collect();
        for &t in &ex.targets {
            dz[t] -= 1.0;
        }
        (loss, dz)
    }

    pub fn gradient(&self, ex: &Example) -> (f64, SkipGramGrad) {
        let (loss, dz) = self.error_signal(ex);
        let h = self.row(ex.center);
        let mut input_row = vec![0.0; self.dim];
        let mut output = vec![0.0; self.dim * self.n_out];
        for d in 0..self.dim {
            let w = &self.output[d * self.n_out..(d + 1) * self.n_out];
            input_row[d] = w.iter().zip(&dz).map(|(a, b)| a * b).sum();
            for (g, &e) in output[d * self.n_out..(d + 1) * self.n_out].iter_mut().zip(&dz) {
                *g = h[d] * e;
            }
        }
        (loss, SkipGramGrad { input_row, output })
    }

    /// Largest relative error between [`SkipGram::gradient`] and central
    /// differences of [`SkipGram::loss`] over the center row and the output
    /// matrix.
    pub fn grad_check(&self, ex: &Example, step: f64) -> f64 {
        let (_, g) = self.gradient(ex);
        let mut probe = self.clone();
        let mut worst: f64 = 0.0;
        let offset = ex.center * self.dim;
        let params = g.input_row.iter().enumerate().map(|(d, &a)| (true, offset + d, a));
        let params = params.chain(g.output.iter().enumerate().map(|(i, &a)| (false, i, a)));
        for (input, i, analytic) in params {
            let orig = if input { probe.input[i] } else { probe.output[i] };
            let mut loss_at = |v: f64| {
                if input { probe.input[i] = v } else { probe.output[i] = v }
                probe.loss(ex)
            };
            let up = loss_at(orig + step);
            let down = loss_at(orig - step);
            loss_at(orig);
            worst = worst.max(crate::matchnet::relative_error(analytic, (up - down) / (2.0 * step)));
        }
        worst
    }

    /// One plain SGD step on a single example; returns the pre-step loss.
    pub fn sgd_step(&mut self, ex: &Example, lr: f64) -> f64 {
        let (loss, dz) = self.error_signal(ex);
        let dim = self.dim;
        let n_out = self.n_out;
        let c = ex.center;
        let mut dh = vec![0.0; dim];
        for d in 0..dim {
            let hd = self.input[c * dim + d];
            let w = &mut self.output[d * n_out..(d + 1) * n_out];
            let mut acc = 0.0;
            for (wk, &e) in w.iter_mut().zip(&dz) {
                acc += *wk * e;
                *wk -= lr * hd * e;
            }
            dh[d] = acc;
        }
        for (v, g) in self.input[c * dim..(c + 1) * dim].iter_mut().zip(&dh) {
            *v -= lr * g;
        }
        loss
    }

    /// Runs `cfg.epochs` passes of SGD over `examples`, visiting them in a
    /// seeded shuffled order each epoch. Returns the mean loss per epoch.
    pub fn fit(&mut self, examples: &[Example], cfg: &SkipGramConfig, rng: &mut impl Rng) -> Result<Vec<f64>> {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let mut curve = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            order.shuffle(rng);
            let lr = cfg.rate_at(epoch);
            let mut total = 0.0;
            for &i in &order {
                total += self.sgd_step(&examples[i], lr);
            }
            let mean = total / examples.len().max(1) as f64;
            if !mean.is_finite() {
                return Err(Error::NonFinite(format!("skip-gram epoch {epoch}")));
            }
            curve.push(mean);
        }
        Ok(curve)
    }
}

/// Indexes the distinct items of `items`, in sorted order.
fn vocab_of<'a>(items: impl Iterator<Item = &'a str>) -> (Vec<String>, HashMap<String, usize>) {
    let set: BTreeSet<&str> = items.collect();
    let vocab: Vec<String> = set.into_iter().map(str::to_string).collect();
    let index = vocab.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
    (vocab, index)
}

/// Row-major vector table keyed by string.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorTable {
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    dim: usize,
    vectors: Vec<f64>,
}

impl VectorTable {
    pub fn new(vocab: Vec<String>, dim: usize, vectors: Vec<f64>) -> Result<Self> {
        if vectors.len() != vocab.len() * dim {
            return Err(Error::Parse(format!(
                "vector table: {} values for {} rows of width {dim}",
                vectors.len(),
                vocab.len()
            )));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse("vector table contains non-finite values".into()));
        }
        let index: HashMap<String, usize> = vocab.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        if index.len() != vocab.len() {
            return Err(Error::Parse("vector table vocabulary has duplicates".into()));
        }
        Ok(Self { vocab, index, dim, vectors })
    }

    pub fn get(&self, key: &str) -> Option<&[f64]> {
        self.index.get(key).map(|&i| self.row(i))
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn vectors(&self) -> &[f64] {
        &self.vectors
    }
}

/// Word-level semantic vectors (rows of the trained input matrix).
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticTable(pub VectorTable);

/// Per-syllable pronunciation vectors of width `char_dim = dim / max_word_len`.
#[derive(Clone, Debug, PartialEq)]
pub struct SyllableTable {
    pub table: VectorTable,
    pub dim: usize,
    pub char_dim: usize,
    pub max_word_len: usize,
}

/// Word-level part-of-speech vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct PosVecTable {
    pub table: VectorTable,
    /// Observed tags; the output layer had one column per tag.
    pub tags: Vec<PosTag>,
}

impl PosVecTable {
    pub fn tag_count(&self) -> usize {
        self.tags.len()
    }
}

pub fn context_indices(len: usize, i: usize, window: usize) -> impl Iterator<Item = usize> {
    let lo = i.saturating_sub(window);
    let hi = (i + window).min(len - 1);
    (lo..=hi).filter(move |&j| j != i)
}

/// Skip-gram examples over index sequences: each position predicts its
/// in-sentence neighbours within `window`.
pub fn window_examples(sentences: &[Vec<usize>], window: usize) -> Vec<Example> {
    let mut out = Vec::new();
    for s in sentences {
        for i in 0..s.len() {
            let targets: Vec<usize> = context_indices(s.len(), i, window).map(|j| s[j]).collect();
            if !targets.is_empty() {
                out.push(Example { center: s[i], targets });
            }
        }
    }
    out
}

pub fn train_semantic(corpus: &[Vec<String>], cfg: &SkipGramConfig) -> Result<SemanticTable> {
    Ok(train_semantic_traced(corpus, cfg)?.0)
}

/// Like [`train_semantic`], also returning the per-epoch mean loss.
pub fn train_semantic_traced(corpus: &[Vec<String>], cfg: &SkipGramConfig) -> Result<(SemanticTable, Vec<f64>)> {
    cfg.validate()?;
    if corpus.is_empty() || corpus.iter().all(Vec::is_empty) {
        return Err(Error::Empty("semantic training corpus"));
    }
    let (vocab, index) = vocab_of(corpus.iter().flatten().map(String::as_str));
    let ids: Vec<Vec<usize>> = corpus.iter().map(|s| s.iter().map(|w| index[w]).collect()).collect();
    let examples = window_examples(&ids, cfg.window);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = SkipGram::new(vocab.len(), vocab.len(), cfg.dim, &mut rng);
    let curve = model.fit(&examples, cfg, &mut rng)?;
    Ok((SemanticTable(VectorTable::new(vocab, cfg.dim, model.input)?), curve))
}

/// Pronunciation width per character: `floor(dim / max_word_len)`.
pub fn char_dim(dim: usize, max_word_len: usize) -> Result<usize> {
    if max_word_len == 0 {
        return Err(Error::Config("maximum word length must be positive".into()));
    }
    if max_word_len > dim {
        return Err(Error::Config(format!(
            "maximum word length {max_word_len} exceeds vector dimension {dim}"
        )));
    }
    Ok(dim / max_word_len)
}

fn is_known_syllable(s: &str) -> bool {
    !s.starts_with(UNKNOWN_SYLLABLE_PREFIX)
}

/// Trains syllable vectors over per-sentence character-syllable streams.
/// Placeholder syllables of unknown characters keep their stream position
/// but are neither centers nor targets.
pub fn train_pinyin2vec(corpus: &[Vec<String>], cfg: &SkipGramConfig, max_word_len: usize) -> Result<SyllableTable> {
    cfg.validate()?;
    let c = char_dim(cfg.dim, max_word_len)?;
    let (vocab, index) = vocab_of(corpus.iter().flatten().map(String::as_str).filter(|s| is_known_syllable(s)));
    if vocab.is_empty() {
        return Err(Error::Empty("pronunciation training corpus"));
    }
    let mut examples = Vec::new();
    for s in corpus {
        for i in 0..s.len() {
            let Some(&center) = index.get(&s[i]) else { continue };
            let targets: Vec<usize> = context_indices(s.len(), i, cfg.window)
                .filter_map(|j| index.get(&s[j]).copied())
                .collect();
            if !targets.is_empty() {
                examples.push(Example { center, targets });
            }
        }
    }
    let sub = SkipGramConfig { dim: c, ..cfg.clone() };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut model = SkipGram::new(vocab.len(), vocab.len(), c, &mut rng);
    model.fit(&examples, &sub, &mut rng)?;
    Ok(SyllableTable { table: VectorTable::new(vocab, c, model.input)?, dim: cfg.dim, char_dim: c, max_word_len })
}

/// Builds the pos2vec examples: each word predicts the tags of its window
/// neighbours and its own tag.
pub fn pos_examples(sentences: &[Vec<(usize, usize)>], window: usize) -> Vec<Example> {
    let mut out = Vec::new();
    for s in sentences {
        for i in 0..s.len() {
            let mut targets: Vec<usize> = context_indices(s.len(), i, window).map(|j| s[j].1).collect();
            targets.push(s[i].1);
            out.push(Example { center: s[i].0, targets });
        }
    }
    out
}

pub fn train_pos2vec(corpus: &[Vec<(String, PosTag)>], cfg: &SkipGramConfig) -> Result<PosVecTable> {
    cfg.validate()?;
    if corpus.is_empty() || corpus.iter().all(Vec::is_empty) {
        return Err(Error::Empty("part-of-speech training corpus"));
    }
    let (vocab, index) = vocab_of(corpus.iter().flatten().map(|(w, _)| w.as_str()));
    let tags: Vec<PosTag> = corpus.iter().flatten().map(|(_, t)| *t).collect::<BTreeSet<_>>().into_iter().collect();
    let tag_index: BTreeMap<PosTag, usize> = tags.iter().enumerate().map(|(i, &t)| (t, i)).collect();
    let ids: Vec<Vec<(usize, usize)>> = corpus
        .iter()
        .map(|s| s.iter().map(|(w, t)| (index[w], tag_index[t])).collect())
        .collect();
    let examples = pos_examples(&ids, cfg.window);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let mut model = SkipGram::new(vocab.len(), tags.len(), cfg.dim, &mut rng);
    model.fit(&examples, cfg, &mut rng)?;
    Ok(PosVecTable { table: VectorTable::new(vocab, cfg.dim, model.input)?, tags })
}

/// Longest token (in characters) over a segmented corpus.
pub fn max_word_len(corpus: &[Vec<Token>]) -> usize {
    corpus.iter().flatten().map(Token::len_chars).max().unwrap_or(0)
}

/// Concatenates the syllable vectors of the token's characters into a
/// `dim`-vector, zero-padding the tail. Characters beyond the table's maximum
/// word length are dropped; unknown syllables leave their slice at zero.
pub fn compose_pronunciation(token: &Token, table: &SyllableTable, dim: usize) -> Vec<f64> {
    let c = table.char_dim;
    let mut out = vec![0.0; dim];
    for (n, syl) in token.syllables.iter().take(table.max_word_len).enumerate() {
        if (n + 1) * c > dim {
            break;
        }
        if let Some(v) = table.table.get(syl) {
            out[n * c..(n + 1) * c].copy_from_slice(v);
        }
    }
    out
}

/// The three tables a feature matrix is built from.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTables {
    pub semantic: SemanticTable,
    pub pinyin: SyllableTable,
    pub pos: PosVecTable,
}

impl FeatureTables {
    /// Trains all three tables on segmented sentences.
    pub fn train(sentences: &[Vec<Token>], cfg: &SkipGramConfig) -> Result<Self> {
        let words: Vec<Vec<String>> = sentences.iter().map(|s| s.iter().map(|t| t.surface.clone()).collect()).collect();
        let syllables: Vec<Vec<String>> =
            sentences.iter().map(|s| s.iter().flat_map(|t| t.syllables.iter().cloned()).collect()).collect();
        let tagged: Vec<Vec<(String, PosTag)>> =
            sentences.iter().map(|s| s.iter().map(|t| (t.surface.clone(), t.pos)).collect()).collect();
        let m = max_word_len(sentences);
        Ok(Self {
            semantic: train_semantic(&words, cfg)?,
            pinyin: train_pinyin2vec(&syllables, cfg, m)?,
            pos: train_pos2vec(&tagged, cfg)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.semantic.0.dim()
    }

    /// Static (pair-independent) vectors of a token for the three layers;
    /// words missing from a table map to zero vectors.
    pub fn token_vectors(&self, token: &Token) -> [Vec<f64>; 3] {
        let d = self.dim();
        let lookup = |t: &VectorTable| t.get(&token.surface).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; d]);
        [
            lookup(&self.semantic.0),
            compose_pronunciation(token, &self.pinyin, d),
            lookup(&self.pos.table),
        ]
    }

    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        save_checkpoint(&TableCheckpoint::from_semantic(&self.semantic), dir.join("semantic.json"))?;
        save_checkpoint(&TableCheckpoint::from_pinyin(&self.pinyin), dir.join("pinyin.json"))?;
        save_checkpoint(&TableCheckpoint::from_pos(&self.pos), dir.join("pos.json"))
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let tables = Self {
            semantic: load_checkpoint(dir.join("semantic.json"))?.into_semantic()?,
            pinyin: load_checkpoint(dir.join("pinyin.json"))?.into_pinyin()?,
            pos: load_checkpoint(dir.join("pos.json"))?.into_pos()?,
        };
        if tables.pinyin.dim != tables.dim() || tables.pos.table.dim() != tables.dim() {
            return Err(Error::Parse("embedding tables disagree on dimension".into()));
        }
        Ok(tables)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableKind {
    Semantic,
    Pinyin,
    Pos,
}

/// On-disk form of a vector table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableCheckpoint {
    pub kind: TableKind,
    pub dim: usize,
    pub vocab: Vec<String>,
    pub vectors: Vec<f64>,
    #[serde(rename = "C", default, skip_serializing_if = "Option::is_none")]
    pub char_dim: Option<usize>,
    #[serde(rename = "M", default, skip_serializing_if = "Option::is_none")]
    pub max_word_len: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tags: Option<Vec<String>>,
}

impl TableCheckpoint {
    pub fn from_semantic(t: &SemanticTable) -> Self {
        Self {
            kind: TableKind::Semantic,
            dim: t.0.dim(),
            vocab: t.0.vocab().to_vec(),
            vectors: t.0.vectors().to_vec(),
            char_dim: None,
            max_word_len: None,
            tags: None,
        }
    }

    pub fn from_pinyin(t: &SyllableTable) -> Self {
        Self {
            kind: TableKind::Pinyin,
            dim: t.dim,
            vocab: t.table.vocab().to_vec(),
            vectors: t.table.vectors().to_vec(),
            char_dim: Some(t.char_dim),
            max_word_len: Some(t.max_word_len),
            tags: None,
        }
    }

    pub fn from_pos(t: &PosVecTable) -> Self {
        Self {
            kind: TableKind::Pos,
            dim: t.table.dim(),
            vocab: t.table.vocab().to_vec(),
            vectors: t.table.vectors().to_vec(),
            char_dim: None,
            max_word_len: None,
            tags: Some(t.tags.iter().map(|t| t.code().to_string()).collect()),
        }
    }

    fn expect(&self, kind: TableKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Parse(format!("expected a {kind:?} table, found {:?}", self.kind)));
        }
        Ok(())
    }

    pub fn into_semantic(self) -> Result<SemanticTable> {
        self.expect(TableKind::Semantic)?;
        Ok(SemanticTable(VectorTable::new(self.vocab, self.dim, self.vectors)?))
    }

    pub fn into_pinyin(self) -> Result<SyllableTable> {
        self.expect(TableKind::Pinyin)?;
        let (c, m) = match (self.char_dim, self.max_word_len) {
            (Some(c), Some(m)) => (c, m),
            _ => return Err(Error::Parse("pinyin table needs C and M".into())),
        };
        if c != char_dim(self.dim, m)? {
            return Err(Error::Parse(format!("pinyin table: C={c} inconsistent with dim={} M={m}", self.dim)));
        }
        Ok(SyllableTable { table: VectorTable::new(self.vocab, c, self.vectors)?, dim: self.dim, char_dim: c, max_word_len: m })
    }

    pub fn into_pos(self) -> Result<PosVecTable> {
        self.expect(TableKind::Pos)?;
        let tags = self
            .tags
            .unwrap_or_default()
            .iter()
            .map(|s| s.parse())
            .collect::<Result<Vec<PosTag>>>()?;
        Ok(PosVecTable { table: VectorTable::new(self.vocab, self.dim, self.vectors)?, tags })
    }
}

pub fn save_checkpoint(ck: &TableCheckpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, serde_json::to_string(ck)? + "\n").map_err(io_err(path))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TableCheckpoint> {
    let path = path.as_ref();
    let s = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&s).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(s: &str) -> Vec<String> {
        s.split(' ').map(str::to_string).collect()
    }

    fn small_cfg() -> SkipGramConfig {
        SkipGramConfig { dim: 8, window: 2, learning_rate: 0.05, epochs: 5, seed: 3 }
    }

    #[test]
    fn semantic_shape_follows_vocab() {
        let corpus = vec![words("a b c"); 4];
        let t = train_semantic(&corpus, &small_cfg()).unwrap();
        assert_eq!(t.0.len(), 3);
        assert_eq!(t.0.dim(), 8);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(train_semantic(&[], &small_cfg()), Err(Error::Empty(_))));
        assert!(matches!(train_pos2vec(&[], &small_cfg()), Err(Error::Empty(_))));
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = SkipGram::new(5, 7, 4, &mut rng);
        for c in 0..5 {
            let s: f64 = m.predict(c).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn char_dim_rounds_down() {
        assert_eq!(char_dim(50, 5).unwrap(), 10);
        assert_eq!(char_dim(50, 7).unwrap(), 7);
        assert!(char_dim(4, 5).is_err());
    }

    fn token(syl: &[&str]) -> Token {
        Token {
            surface: "x".repeat(syl.len()),
            chars: vec!['x'; syl.len()],
            syllables: syl.iter().map(|s| s.to_string()).collect(),
            pos: PosTag::Noun,
            span: (0, 0),
        }
    }

    fn syllable_table() -> SyllableTable {
        let vocab = words("ba1 ma3");
        let vectors: Vec<f64> = (1..=20).map(f64::from).collect();
        SyllableTable { table: VectorTable::new(vocab, 10, vectors).unwrap(), dim: 50, char_dim: 10, max_word_len: 5 }
    }

    #[test]
    fn pronunciation_single_char_pads_with_zeros() {
        let v = compose_pronunciation(&token(&["ma3"]), &syllable_table(), 50);
        assert_eq!(&v[..10], &(11..=20).map(f64::from).collect::<Vec<_>>()[..]);
        assert!(v[10..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn pronunciation_full_length_fills_c_times_m() {
        let v = compose_pronunciation(&token(&["ba1", "ma3", "ba1", "ma3", "ba1"]), &syllable_table(), 50);
        assert!(v.iter().all(|&x| x != 0.0));
        let t = SyllableTable { max_word_len: 4, ..syllable_table() };
        let v = compose_pronunciation(&token(&["ba1", "ma3", "ba1", "ma3", "ba1"]), &t, 50);
        assert!(v[40..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn pronunciation_unknown_syllable_slice_is_zero() {
        let v = compose_pronunciation(&token(&["ba1", "unk:电"]), &syllable_table(), 50);
        assert_eq!(v[0], 1.0);
        assert!(v[10..20].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn homophones_share_one_vector() {
        // Two different characters with the same reading produce the same stream.
        let corpus = vec![words("ba1 ma3 ta1"), words("ta1 ba1 ma3")];
        let t = train_pinyin2vec(&corpus, &small_cfg(), 2).unwrap();
        assert_eq!(t.char_dim, 4);
        let a = Token { chars: vec!['八'], ..token(&["ba1"]) };
        let b = Token { chars: vec!['巴'], ..token(&["ba1"]) };
        let va = compose_pronunciation(&a, &t, 8);
        let vb = compose_pronunciation(&b, &t, 8);
        assert_eq!(va.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), vb.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn pos2vec_shape() {
        let s = vec![
            ("w1".to_string(), PosTag::Noun),
            ("w2".to_string(), PosTag::Verb),
            ("w3".to_string(), PosTag::Noun),
            ("w4".to_string(), PosTag::Adverb),
        ];
        let t = train_pos2vec(&[s], &small_cfg()).unwrap();
        assert_eq!(t.table.len(), 4);
        assert_eq!(t.tag_count(), 3);
    }

    #[test]
    fn pos_examples_include_own_tag() {
        let ex = pos_examples(&[vec![(0, 0), (1, 1), (2, 2)]], 2);
        assert_eq!(ex[0], Example { center: 0, targets: vec![1, 2, 0] });
        assert_eq!(ex[1].targets, vec![0, 2, 1]);
    }

    #[test]
    fn windows_stop_at_sentence_edges() {
        let ex = window_examples(&[vec![0, 1, 2, 3, 4]], 2);
        assert_eq!(ex[0].targets, vec![1, 2]);
        assert_eq!(ex[2].targets, vec![0, 1, 3, 4]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let corpus = vec![words("a b c d")];
        let t = train_semantic(&corpus, &small_cfg()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        save_checkpoint(&TableCheckpoint::from_semantic(&t), &p).unwrap();
        assert_eq!(load_checkpoint(&p).unwrap().into_semantic().unwrap(), t);
        assert!(load_checkpoint(&p).unwrap().into_pos().is_err());
    }

    #[test]
    fn cosine_of_zero_vector_is_zero() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 2.0]), 0.0);
        assert!((cosine(&[1.0, 2.0], &[2.0, 4.0]) - 1.0).abs() < 1e-12);
    }
}
