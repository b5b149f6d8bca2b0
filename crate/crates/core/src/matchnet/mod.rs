//! Three-channel convolutional matching network.
//!
//! Shape chain for one side of `L` tokens:
//! `L × (D+2) × 3` → wide convolution → `F × (L+h−1) × 3` → attention
//! combination (+ relu) → `F × (L+h−1)` → k-max average pooling → `F`.
//! The entity vector `x1` and text vector `x2` are scored with the bilinear
//! form `x1 · U · x2ᵀ`, spliced into `[x1, x_sim, x2]` and classified by an
//! affine map followed by a two-class softmax.
//!
//! Internally a convolution is evaluated through per-row projections: row
//! `r` of layer `l` is multiplied by every filter row once, giving
//! `proj[r][f·h + i]`, and output position `p` sums the diagonal
//! `proj[p−h+1+i][f·h + i]`. The static part of a projection (columns
//! `0..D`) depends only on the token, which lets training and linking share
//! it across pairs through a matrix product.

mod gradcheck;
mod train;

use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::features::{FeatureMatrix, LinkValues, TokenVectors, LAYERS};

pub use gradcheck::{desk_check, grad_check, relative_error, GradCheckReport, ParamGroup, GRAD_CHECK_STEP};
pub use train::{pair_gradient, train, train_epochwise, train_pairs, Gradients, PairSet, PairSide, TokenStore, TrainOutcome, TrainingPair};

pub const CHECKPOINT_FORMAT: &str = "gridlink-matchnet/1";

/// Switches that select the model variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelOptions {
    /// Which of the semantic, pronunciation and part-of-speech layers feed the
    /// convolution.
    pub layers: [bool; LAYERS],
    /// Whether the direct-link column (`D+1`) is read.
    pub link_column: bool,
    /// When false the attention vectors are fixed at `[1, 1, 1]`.
    pub train_attention: bool,
    pub relu: bool,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self { layers: [true; LAYERS], link_column: true, train_attention: true, relu: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchModelConfig {
    pub filter_count: usize,
    pub window_height: usize,
    pub kma_k: usize,
    pub dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub decision_threshold: f64,
    pub optimizer: Optimizer,
    pub options: ModelOptions,
}

impl Default for MatchModelConfig {
    fn default() -> Self {
        Self {
            filter_count: 100,
            window_height: 5,
            kma_k: 2,
            dim: 50,
            learning_rate: 0.01,
            epochs: 10,
            batch_size: 32,
            seed: 0,
            decision_threshold: 0.5,
            optimizer: Optimizer::Adam,
            options: ModelOptions::default(),
        }
    }
}

impl MatchModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.filter_count == 0 || self.window_height == 0 || self.kma_k == 0 || self.dim == 0 {
            return Err(Error::Config("filter count, window height, k and dim must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.decision_threshold > 0.0 && self.decision_threshold < 1.0) {
            return Err(Error::Config("decision threshold must lie in (0, 1)".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate for `epoch`, decayed linearly to 10% at the last epoch.
    pub fn rate_at(&self, epoch: usize) -> f64 {
        let span = self.epochs.saturating_sub(1).max(1) as f64;
        self.learning_rate * (1.0 - 0.9 * epoch as f64 / span)
    }
}

/// Model parameters. Filter weights are shared by the entity and text sides;
/// only the attention vectors differ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchModel {
    pub config: MatchModelConfig,
    /// Per layer, an `(F·h) × (D+2)` row-major matrix; row `f·h + i` is
    /// window offset `i` of filter `f`.
    pub filters: [Vec<f64>; LAYERS],
    /// `F × 3`, index `f·3 + layer`.
    pub biases: Vec<f64>,
    pub entity_attention: [f64; LAYERS],
    pub text_attention: [f64; LAYERS],
    /// `F × F` row-major.
    pub similarity: Vec<f64>,
    /// `2 × (2F+1)` row-major; row 1 scores the match class.
    pub classifier: Vec<f64>,
    pub classifier_bias: [f64; 2],
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    #[serde(flatten)]
    model: MatchModel,
}

impl MatchModel {
    /// Filters uniform in `[−0.1, 0.1]`, zero biases, unit attention, identity
    /// similarity matrix and a zero classifier (so an untrained model outputs
    /// exactly 0.5).
    pub fn new(config: MatchModelConfig) -> Result<Self> {
        config.validate()?;
        let f = config.filter_count;
        let fh = f * config.window_height;
        let width = config.dim + 2;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut filters: [Vec<f64>; LAYERS] = Default::default();
        for layer in filters.iter_mut() {
            *layer = (0..fh * width).map(|_| rng.gen_range(-0.1..=0.1)).collect();
        }
        let mut similarity = vec![0.0; f * f];
        for i in 0..f {
            similarity[i * f + i] = 1.0;
        }
        Ok(Self {
            filters,
            biases: vec![0.0; f * LAYERS],
            entity_attention: [1.0; LAYERS],
            text_attention: [1.0; LAYERS],
            similarity,
            classifier: vec![0.0; 2 * (2 * f + 1)],
            classifier_bias: [0.0; 2],
            config,
        })
    }

    pub fn filter_count(&self) -> usize {
        self.config.filter_count
    }

    pub fn window_height(&self) -> usize {
        self.config.window_height
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    fn fh(&self) -> usize {
        self.config.filter_count * self.config.window_height
    }

    pub fn options(&self) -> ModelOptions {
        self.config.options
    }

    /// Returns a copy running under different variant switches.
    pub fn with_options(&self, options: ModelOptions) -> Self {
        let mut m = self.clone();
        m.config.options = options;
        m
    }

    pub(crate) fn attention(&self, side: Side) -> [f64; LAYERS] {
        if !self.config.options.train_attention {
            return [1.0; LAYERS];
        }
        match side {
            Side::Entity => self.entity_attention,
            Side::Text => self.text_attention,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.filters.iter().flatten().all(|v| v.is_finite())
            && self.biases.iter().all(|v| v.is_finite())
            && self.entity_attention.iter().chain(&self.text_attention).all(|v| v.is_finite())
            && self.similarity.iter().all(|v| v.is_finite())
            && self.classifier.iter().chain(&self.classifier_bias).all(|v| v.is_finite())
    }

    pub fn to_json_string(&self) -> String {
        let ck = Checkpoint { format: CHECKPOINT_FORMAT.to_string(), model: self.clone() };
        serde_json::to_string(&ck).expect("model serializes")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(s).map_err(|e| Error::Parse(format!("model checkpoint: {e}")))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Parse(format!("unsupported model format `{}`", ck.format)));
        }
        let m = ck.model;
        m.config.validate()?;
        let (f, fh, w) = (m.filter_count(), m.fh(), m.dim() + 2);
        let shapes_ok = m.filters.iter().all(|l| l.len() == fh * w)
            && m.biases.len() == f * LAYERS
            && m.similarity.len() == f * f
            && m.classifier.len() == 2 * (2 * f + 1);
        if !shapes_ok {
            return Err(Error::Parse("model checkpoint parameter shapes do not match its config".into()));
        }
        if !m.is_finite() {
            return Err(Error::Parse("model checkpoint contains non-finite parameters".into()));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string() + "\n").map_err(io_err(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json_str(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }

    /// Maps a projection index `i·F + f` to its filter row `f·h + i`.
    pub(crate) fn filter_row(&self, j: usize) -> usize {
        let f_n = self.filter_count();
        (j % f_n) * self.window_height() + j / f_n
    }

    /// Filter weights rearranged by projection index, so that one window
    /// offset of all filters is contiguous. Link weights read as zero when the
    /// link column is off.
    pub(crate) fn proj_weights(&self) -> ProjWeights {
        let d = self.dim();
        let w = d + 2;
        let fh = self.fh();
        let on = self.config.options.link_column;
        let at = |l: usize, j: usize, c: usize| self.filters[l][self.filter_row(j) * w + c];
        ProjWeights {
            stat: std::array::from_fn(|l| Array2::from_shape_fn((fh, d), |(j, c)| at(l, j, c))),
            lsf: std::array::from_fn(|l| (0..fh).map(|j| at(l, j, d)).collect()),
            link: std::array::from_fn(|l| (0..fh).map(|j| if on { at(l, j, d + 1) } else { 0.0 }).collect()),
        }
    }

    /// Static projections of `rows` (each `D` long) for every layer:
    /// `rows.len() × (F·h)` per layer, by projection index.
    pub(crate) fn project_static(&self, pw: &ProjWeights, rows: &[[&[f64]; LAYERS]]) -> [Array2<f64>; LAYERS] {
        let d = self.dim();
        let fh = self.fh();
        std::array::from_fn(|l| {
            if !self.config.options.layers[l] || rows.is_empty() {
                return Array2::zeros((rows.len(), fh));
            }
            let s = Array2::from_shape_fn((rows.len(), d), |(i, c)| rows[i][l][c]);
            s.dot(&pw.stat[l].t())
        })
    }

    /// Convolution, attention combination and pooling of one side. The
    /// projection of each row is its static part plus the link-column terms;
    /// window offset `i` of that projection lands on position `r + h − 1 − i`.
    pub(crate) fn side_forward(&self, input: &SideInput<'_>, pw: &ProjWeights, att: &[f64; LAYERS]) -> SideCache {
        let f_n = self.filter_count();
        let h = self.window_height();
        let fh = self.fh();
        let len = input.slots.len();
        let positions = len + h - 1;
        let plane = positions * f_n;
        let mut conv = vec![0.0; LAYERS * plane];
        let mut comb = vec![0.0; fh];
        for l in 0..LAYERS {
            if !self.config.options.layers[l] {
                continue;
            }
            let conv_l = &mut conv[l * plane..(l + 1) * plane];
            for p in 0..positions {
                for (f, v) in conv_l[p * f_n..(p + 1) * f_n].iter_mut().enumerate() {
                    *v = self.biases[f * LAYERS + l];
                }
            }
            let stat = input.static_rows[l];
            for (r, (&slot, lk)) in input.slots.iter().zip(input.links).enumerate() {
                let [lsf, link] = lk[l];
                let row = &stat[slot * fh..(slot + 1) * fh];
                for (((c, &sv), &wl), &wk) in comb.iter_mut().zip(row).zip(&pw.lsf[l]).zip(&pw.link[l]) {
                    *c = sv + wl * lsf + wk * link;
                }
                for i in 0..h {
                    let p = r + h - 1 - i;
                    for (v, &c) in conv_l[p * f_n..(p + 1) * f_n].iter_mut().zip(&comb[i * f_n..(i + 1) * f_n]) {
                        *v += c;
                    }
                }
            }
        }
        let mut pre = vec![0.0; plane];
        for l in 0..LAYERS {
            if !self.config.options.layers[l] {
                continue;
            }
            let a = att[l];
            for (dst, &c) in pre.iter_mut().zip(&conv[l * plane..(l + 1) * plane]) {
                *dst += a * c;
            }
        }
        let relu = self.config.options.relu;
        let kk = self.config.kma_k.min(positions);
        let mut top = Vec::with_capacity(f_n * kk);
        let mut x = vec![0.0; f_n];
        for f in 0..f_n {
            let act = |p: usize| {
                let v = pre[p * f_n + f];
                if relu { v.max(0.0) } else { v }
            };
            let start = top.len();
            push_top_k(positions, kk, act, &mut top);
            x[f] = top[start..].iter().map(|&p| act(p)).sum::<f64>() / kk as f64;
        }
        SideCache { positions, kk, conv, pre, top, x }
    }

    pub(crate) fn pair_forward(&self, entity: &SideInput<'_>, text: &SideInput<'_>, pw: &ProjWeights) -> PairCache {
        let e = self.side_forward(entity, pw, &self.attention(Side::Entity));
        let t = self.side_forward(text, pw, &self.attention(Side::Text));
        self.head_forward(e, t)
    }

    fn head_forward(&self, e: SideCache, t: SideCache) -> PairCache {
        let f_n = self.filter_count();
        let u = &self.similarity;
        let mut u_x2 = vec![0.0; f_n];
        let mut ut_x1 = vec![0.0; f_n];
        for i in 0..f_n {
            let row = &u[i * f_n..(i + 1) * f_n];
            u_x2[i] = row.iter().zip(&t.x).map(|(a, b)| a * b).sum();
            for (acc, &uij) in ut_x1.iter_mut().zip(row) {
                *acc += uij * e.x[i];
            }
        }
        let xsim: f64 = e.x.iter().zip(&u_x2).map(|(a, b)| a * b).sum();
        let mut joint = Vec::with_capacity(2 * f_n + 1);
        joint.extend_from_slice(&e.x);
        joint.push(xsim);
        joint.extend_from_slice(&t.x);
        let width = joint.len();
        let mut logits = [0.0; 2];
        for (c, logit) in logits.iter_mut().enumerate() {
            let w = &self.classifier[c * width..(c + 1) * width];
            *logit = self.classifier_bias[c] + w.iter().zip(&joint).map(|(a, b)| a * b).sum::<f64>();
        }
        let max = logits[0].max(logits[1]);
        let lse = max + ((logits[0] - max).exp() + (logits[1] - max).exp()).ln();
        let log_probs = [logits[0] - lse, logits[1] - lse];
        PairCache { entity: e, text: t, u_x2, ut_x1, joint, log_probs }
    }

    /// Match probability for a pair of feature matrices (entity side first).
    pub fn forward(&self, entity: &FeatureMatrix, text: &FeatureMatrix) -> f64 {
        self.forward_probs(entity, text)[1]
    }

    /// `[P(no match), P(match)]`.
    pub fn forward_probs(&self, entity: &FeatureMatrix, text: &FeatureMatrix) -> [f64; 2] {
        let cache = self.forward_matrices(entity, text);
        [cache.log_probs[0].exp(), cache.log_probs[1].exp()]
    }

    /// The spliced `[x1, x_sim, x2]` vector fed to the classifier.
    pub fn joint_vector(&self, entity: &FeatureMatrix, text: &FeatureMatrix) -> Vec<f64> {
        self.forward_matrices(entity, text).joint
    }

    pub(crate) fn forward_matrices(&self, entity: &FeatureMatrix, text: &FeatureMatrix) -> PairCache {
        let pw = self.proj_weights();
        let (e, t) = (self.project_matrix(&pw, entity), self.project_matrix(&pw, text));
        self.pair_forward(&e.input(), &t.input(), &pw)
    }

    pub(crate) fn project_matrix(&self, pw: &ProjWeights, fm: &FeatureMatrix) -> OwnedSide {
        let d = self.dim();
        assert_eq!(fm.dim(), d, "feature matrix dimension differs from the model's");
        let rows: Vec<[&[f64]; LAYERS]> =
            (0..fm.len()).map(|r| std::array::from_fn(|l| &fm.row(l, r)[..d])).collect();
        let links = (0..fm.len()).map(|r| std::array::from_fn(|l| [fm.row(l, r)[d], fm.row(l, r)[d + 1]])).collect();
        OwnedSide { stat: self.project_static(pw, &rows), slots: (0..fm.len()).collect(), links }
    }

    /// Precomputes the static projections of one side's tokens, for repeated
    /// scoring against different opposite sides.
    pub fn project_tokens(&self, vecs: &[TokenVectors]) -> ProjectedTokens {
        self.project_tokens_with(&self.proj_weights(), vecs)
    }

    pub(crate) fn project_tokens_with(&self, pw: &ProjWeights, vecs: &[TokenVectors]) -> ProjectedTokens {
        let rows: Vec<[&[f64]; LAYERS]> =
            vecs.iter().map(|v| std::array::from_fn(|l| v.layers[l].as_slice())).collect();
        ProjectedTokens { len: vecs.len(), layers: self.project_static(pw, &rows) }
    }

    /// Match probability from precomputed token projections and the pair's
    /// link columns.
    pub fn score_projected(
        &self,
        entity: &ProjectedTokens,
        entity_links: &[LinkValues],
        text: &ProjectedTokens,
        text_links: &[LinkValues],
    ) -> f64 {
        self.score_projected_with(&self.proj_weights(), entity, entity_links, text, text_links)
    }

    /// [`MatchModel::score_projected`] with the rearranged weights computed
    /// once by the caller.
    pub(crate) fn score_projected_with(
        &self,
        pw: &ProjWeights,
        entity: &ProjectedTokens,
        entity_links: &[LinkValues],
        text: &ProjectedTokens,
        text_links: &[LinkValues],
    ) -> f64 {
        let e_slots: Vec<usize> = (0..entity.len).collect();
        let t_slots: Vec<usize> = (0..text.len).collect();
        let cache = self.pair_forward(&entity.input(&e_slots, entity_links), &text.input(&t_slots, text_links), pw);
        cache.log_probs[1].exp()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Side {
    Entity,
    Text,
}

/// Static projections of a token sequence under one model.
#[derive(Clone, Debug)]
pub struct ProjectedTokens {
    len: usize,
    layers: [Array2<f64>; LAYERS],
}

impl ProjectedTokens {
    fn input<'a>(&'a self, slots: &'a [usize], links: &'a [LinkValues]) -> SideInput<'a> {
        SideInput { static_rows: std::array::from_fn(|l| self.layers[l].as_slice().expect("contiguous")), slots, links }
    }
}

/// One side of a pair: static projections (`slot × (F·h)` per layer), the
/// slots of its rows, and its link columns.
#[derive(Clone, Copy, Debug)]
pub(crate) struct SideInput<'a> {
    pub static_rows: [&'a [f64]; LAYERS],
    pub slots: &'a [usize],
    pub links: &'a [LinkValues],
}

#[derive(Clone, Debug)]
pub(crate) struct OwnedSide {
    stat: [Array2<f64>; LAYERS],
    slots: Vec<usize>,
    links: Vec<LinkValues>,
}

impl OwnedSide {
    pub(crate) fn input(&self) -> SideInput<'_> {
        SideInput {
            static_rows: std::array::from_fn(|l| self.stat[l].as_slice().expect("contiguous")),
            slots: &self.slots,
            links: &self.links,
        }
    }
}

/// Filter weights by projection index `i·F + f` (see
/// [`MatchModel::filter_row`]).
#[derive(Clone, Debug)]
pub(crate) struct ProjWeights {
    /// Per layer, `(F·h) × D` static-column weights.
    pub stat: [Array2<f64>; LAYERS],
    /// Per layer, the `F·h` weights on the LSF and link columns.
    pub lsf: [Vec<f64>; LAYERS],
    pub link: [Vec<f64>; LAYERS],
}

#[derive(Clone, Debug)]
pub(crate) struct SideCache {
    pub positions: usize,
    pub kk: usize,
    /// `3 × positions × F`, bias included.
    pub conv: Vec<f64>,
    /// Attention-combined pre-activation, `positions × F`.
    pub pre: Vec<f64>,
    /// Pooled positions, `F × kk`.
    pub top: Vec<usize>,
    pub x: Vec<f64>,
}

#[derive(Clone, Debug)]
pub(crate) struct PairCache {
    pub entity: SideCache,
    pub text: SideCache,
    pub u_x2: Vec<f64>,
    pub ut_x1: Vec<f64>,
    pub joint: Vec<f64>,
    pub log_probs: [f64; 2],
}

/// Appends to `out` the indices of the `k` largest values, largest first,
/// ties broken by lower index.
fn push_top_k(n: usize, k: usize, value: impl Fn(usize) -> f64, out: &mut Vec<usize>) {
    let start = out.len();
    for p in 0..n {
        let v = value(p);
        let picked = &out[start..];
        let pos = picked.iter().position(|&q| v > value(q)).unwrap_or(picked.len());
        if pos < k {
            out.insert(start + pos, p);
            out.truncate(start + k);
        }
    }
}

/// Channel map of a wide convolution: `F × (L+h−1) × 3`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelMap {
    pub filters: usize,
    pub positions: usize,
    data: Vec<f64>,
}

impl ChannelMap {
    pub fn get(&self, f: usize, p: usize, layer: usize) -> f64 {
        self.data[(f * self.positions + p) * LAYERS + layer]
    }

    pub fn channels(&self, f: usize, p: usize) -> [f64; LAYERS] {
        let i = (f * self.positions + p) * LAYERS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// Zero-padded (wide) convolution of every layer of `fm`, by direct
/// summation over each `h × (D+2)` window.
pub fn wide_conv(fm: &FeatureMatrix, model: &MatchModel) -> ChannelMap {
    let f_n = model.filter_count();
    let h = model.window_height();
    let w = fm.width();
    assert_eq!(w, model.dim() + 2);
    let len = fm.len();
    let positions = len + h - 1;
    let mut data = vec![0.0; f_n * positions * LAYERS];
    for f in 0..f_n {
        for p in 0..positions {
            for l in 0..LAYERS {
                let mut acc = model.biases[f * LAYERS + l];
                for i in 0..h {
                    let r = p as isize - (h as isize - 1) + i as isize;
                    if r < 0 || r >= len as isize {
                        continue;
                    }
                    let row = fm.row(l, r as usize);
                    let wrow = &model.filters[l][(f * h + i) * w..(f * h + i + 1) * w];
                    acc += wrow.iter().zip(row).map(|(a, b)| a * b).sum::<f64>();
                }
                data[(f * positions + p) * LAYERS + l] = acc;
            }
        }
    }
    ChannelMap { filters: f_n, positions, data }
}

/// `combined[f, p] = act(⟨r, a⟩)` with `r = map[f, p, ·]`; `act` is relu or
/// the identity.
pub fn attention_combine(map: &ChannelMap, a: &[f64; LAYERS], relu: bool) -> Vec<Vec<f64>> {
    (0..map.filters)
        .map(|f| {
            (0..map.positions)
                .map(|p| {
                    let r = map.channels(f, p);
                    let v: f64 = r.iter().zip(a).map(|(x, y)| x * y).sum();
                    if relu {
                        v.max(0.0)
                    } else {
                        v
                    }
                })
                .collect()
        })
        .collect()
}

/// Mean of the `min(k, len)` largest values.
pub fn kma_pool(values: &[f64], k: usize) -> f64 {
    assert!(!values.is_empty(), "k-max pooling of an empty vector");
    let kk = k.min(values.len()).max(1);
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted[..kk].iter().sum::<f64>() / kk as f64
}

/// `x1 · U · x2ᵀ` with `U` row-major `n × n`.
pub fn bilinear_sim(x1: &[f64], u: &[f64], x2: &[f64]) -> f64 {
    let n = x1.len();
    assert_eq!(x2.len(), n);
    assert_eq!(u.len(), n * n);
    x1.iter()
        .enumerate()
        .map(|(i, a)| a * u[i * n..(i + 1) * n].iter().zip(x2).map(|(b, c)| b * c).sum::<f64>())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> MatchModelConfig {
        MatchModelConfig { filter_count: 3, window_height: 2, kma_k: 2, dim: 4, seed: 11, ..Default::default() }
    }

    fn random_matrix(len: usize, dim: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = FeatureMatrix::zeros(len, dim);
        for l in 0..LAYERS {
            for r in 0..len {
                for v in m.row_mut(l, r) {
                    *v = rng.gen_range(-1.0..1.0);
                }
            }
        }
        m
    }

    fn randomize(model: &mut MatchModel, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in model.biases.iter_mut().chain(model.classifier.iter_mut()).chain(model.similarity.iter_mut()) {
            *v = rng.gen_range(-0.5..0.5);
        }
        for a in model.entity_attention.iter_mut().chain(model.text_attention.iter_mut()) {
            *a = rng.gen_range(0.5..1.5);
        }
    }

    #[test]
    fn wide_conv_output_length() {
        let m = MatchModel::new(MatchModelConfig { window_height: 5, ..small_config() }).unwrap();
        let map = wide_conv(&random_matrix(3, 4, 1), &m);
        assert_eq!(map.positions, 7);
    }

    #[test]
    fn zero_input_gives_bias() {
        let mut m = MatchModel::new(small_config()).unwrap();
        randomize(&mut m, 2);
        let map = wide_conv(&FeatureMatrix::zeros(3, 4), &m);
        for f in 0..3 {
            for p in 0..map.positions {
                for l in 0..LAYERS {
                    assert_eq!(map.get(f, p, l), m.biases[f * LAYERS + l]);
                }
            }
        }
    }

    #[test]
    fn projection_route_matches_direct_convolution() {
        let mut m = MatchModel::new(MatchModelConfig { window_height: 3, ..small_config() }).unwrap();
        randomize(&mut m, 3);
        let fm = random_matrix(4, 4, 4);
        let map = wide_conv(&fm, &m);
        let pw = m.proj_weights();
        let cache = m.side_forward(&m.project_matrix(&pw, &fm).input(), &pw, &[1.0, 1.0, 1.0]);
        for f in 0..3 {
            for p in 0..map.positions {
                for l in 0..LAYERS {
                    let fast = cache.conv[(l * cache.positions + p) * 3 + f];
                    assert!((fast - map.get(f, p, l)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn attention_combine_cases() {
        let map = ChannelMap { filters: 1, positions: 1, data: vec![2.0, 3.0, 4.0] };
        assert_eq!(attention_combine(&map, &[1.0, 1.0, 1.0], false)[0][0], 9.0);
        assert_eq!(attention_combine(&map, &[1.0, 0.0, 0.0], false)[0][0], 2.0);
        assert_eq!(attention_combine(&map, &[0.5, 0.5, 0.0], true)[0][0], 2.5);
        let neg = ChannelMap { filters: 1, positions: 1, data: vec![-2.0, 0.0, 0.0] };
        assert_eq!(attention_combine(&neg, &[1.0, 1.0, 1.0], true)[0][0], 0.0);
    }

    #[test]
    fn kma_cases() {
        assert_eq!(kma_pool(&[3.0, 1.0, 2.0, 0.0], 2), 2.5);
        assert_eq!(kma_pool(&[5.0, 5.0, 5.0], 2), 5.0);
        assert_eq!(kma_pool(&[4.0, 2.0], 3), 3.0);
    }

    #[test]
    fn bilinear_cases() {
        let u = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        assert_eq!(bilinear_sim(&[0.0, 1.0, 0.0], &u, &[0.0, 1.0, 0.0]), 1.0);
        assert_eq!(bilinear_sim(&[0.0; 3], &[0.7; 9], &[1.0, 2.0, 3.0]), 0.0);
    }

    #[test]
    fn forward_probabilities_sum_to_one() {
        let mut m = MatchModel::new(small_config()).unwrap();
        randomize(&mut m, 5);
        let p = m.forward_probs(&random_matrix(2, 4, 6), &random_matrix(5, 4, 7));
        assert!((p[0] + p[1] - 1.0).abs() < 1e-9);
        assert!(p[1] > 0.0 && p[1] < 1.0);
    }

    #[test]
    fn joint_vector_length() {
        let m = MatchModel::new(MatchModelConfig { filter_count: 100, dim: 4, ..Default::default() }).unwrap();
        assert_eq!(m.joint_vector(&random_matrix(2, 4, 1), &random_matrix(3, 4, 2)).len(), 201);
    }

    #[test]
    fn forward_is_side_asymmetric() {
        let mut m = MatchModel::new(small_config()).unwrap();
        randomize(&mut m, 8);
        let (a, b) = (random_matrix(2, 4, 9), random_matrix(4, 4, 10));
        assert!((m.forward(&a, &b) - m.forward(&b, &a)).abs() > 1e-9);
    }

    #[test]
    fn pipeline_matches_reference_ops() {
        let mut m = MatchModel::new(small_config()).unwrap();
        randomize(&mut m, 12);
        let (e, t) = (random_matrix(2, 4, 13), random_matrix(3, 4, 14));
        let pooled = |fm: &FeatureMatrix, a: &[f64; 3]| -> Vec<f64> {
            attention_combine(&wide_conv(fm, &m), a, true).iter().map(|row| kma_pool(row, 2)).collect()
        };
        let x1 = pooled(&e, &m.entity_attention);
        let x2 = pooled(&t, &m.text_attention);
        let joint = m.joint_vector(&e, &t);
        for (a, b) in joint[..3].iter().zip(&x1) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((joint[3] - bilinear_sim(&x1, &m.similarity, &x2)).abs() < 1e-12);
    }

    #[test]
    fn untrained_model_is_undecided() {
        let m = MatchModel::new(small_config()).unwrap();
        assert_eq!(m.forward(&random_matrix(2, 4, 1), &random_matrix(3, 4, 2)), 0.5);
    }

    #[test]
    fn checkpoint_round_trip_and_format_tag() {
        let mut m = MatchModel::new(small_config()).unwrap();
        randomize(&mut m, 15);
        let s = m.to_json_string();
        assert!(s.contains(CHECKPOINT_FORMAT));
        assert_eq!(MatchModel::from_json_str(&s).unwrap(), m);
        let bad = s.replace(CHECKPOINT_FORMAT, "other/9");
        assert!(MatchModel::from_json_str(&bad).is_err());
    }

    #[test]
    fn invalid_threshold_rejected() {
        let cfg = MatchModelConfig { decision_threshold: 1.0, ..small_config() };
        assert!(MatchModel::new(cfg).is_err());
    }
}
