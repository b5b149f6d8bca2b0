//! Backpropagation and minibatch training.

use std::borrow::Cow;
use std::collections::HashMap;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{MatchModel, Optimizer, PairCache, Side, SideCache, SideInput};
use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, LinkValues, TokenVectors, LAYERS};

/// Interned static token rows (the first `D` columns of each layer).
#[derive(Clone, Debug, Default)]
pub struct TokenStore {
    dim: usize,
    layers: [Vec<f64>; LAYERS],
    keys: HashMap<String, u32>,
    len: usize,
}

impl TokenStore {
    pub fn new(dim: usize) -> Self {
        Self { dim, ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Adds `vecs` under `key`, or returns the id already stored for `key`.
    pub fn intern(&mut self, key: &str, vecs: &TokenVectors) -> u32 {
        if let Some(&id) = self.keys.get(key) {
            return id;
        }
        let id = self.push(vecs);
        self.keys.insert(key.to_string(), id);
        id
    }

    /// Adds an anonymous row.
    pub fn push(&mut self, vecs: &TokenVectors) -> u32 {
        for (l, v) in vecs.layers.iter().enumerate() {
            assert_eq!(v.len(), self.dim, "token vector dimension mismatch");
            self.layers[l].extend_from_slice(v);
        }
        self.len += 1;
        (self.len - 1) as u32
    }

    pub fn row(&self, layer: usize, id: u32) -> &[f64] {
        let i = id as usize * self.dim;
        &self.layers[layer][i..i + self.dim]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairSide {
    pub rows: Vec<u32>,
    pub links: Vec<LinkValues>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub entity: PairSide,
    pub text: PairSide,
    pub label: bool,
}

/// Labelled (entity, text) pairs over a shared token store.
#[derive(Clone, Debug, Default)]
pub struct PairSet {
    pub store: TokenStore,
    pub pairs: Vec<TrainingPair>,
}

impl PairSet {
    pub fn new(dim: usize) -> Self {
        Self { store: TokenStore::new(dim), pairs: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.store.dim
    }

    /// Builds a set from explicit feature matrices, one store row per matrix
    /// row.
    pub fn from_matrices(pairs: &[(FeatureMatrix, FeatureMatrix, bool)]) -> Result<Self> {
        let dim = pairs.first().map(|p| p.0.dim()).ok_or(Error::Empty("training pairs"))?;
        let mut set = Self::new(dim);
        for (e, t, label) in pairs {
            let entity = set.side_from_matrix(e)?;
            let text = set.side_from_matrix(t)?;
            set.pairs.push(TrainingPair { entity, text, label: *label });
        }
        Ok(set)
    }

    fn side_from_matrix(&mut self, fm: &FeatureMatrix) -> Result<PairSide> {
        let d = self.store.dim;
        if fm.dim() != d {
            return Err(Error::Config(format!("feature matrix dim {} differs from {d}", fm.dim())));
        }
        let mut side = PairSide { rows: Vec::with_capacity(fm.len()), links: Vec::with_capacity(fm.len()) };
        for r in 0..fm.len() {
            let tv = TokenVectors { layers: std::array::from_fn(|l| fm.row(l, r)[..d].to_vec()) };
            side.rows.push(self.store.push(&tv));
            side.links.push(std::array::from_fn(|l| [fm.row(l, r)[d], fm.row(l, r)[d + 1]]));
        }
        Ok(side)
    }
}

/// Parameter-shaped gradient buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub filters: [Vec<f64>; LAYERS],
    pub biases: Vec<f64>,
    pub entity_attention: [f64; LAYERS],
    pub text_attention: [f64; LAYERS],
    pub similarity: Vec<f64>,
    pub classifier: Vec<f64>,
    pub classifier_bias: [f64; 2],
}

impl Gradients {
    pub fn zeros_like(m: &MatchModel) -> Self {
        Self {
            filters: std::array::from_fn(|l| vec![0.0; m.filters[l].len()]),
            biases: vec![0.0; m.biases.len()],
            entity_attention: [0.0; LAYERS],
            text_attention: [0.0; LAYERS],
            similarity: vec![0.0; m.similarity.len()],
            classifier: vec![0.0; m.classifier.len()],
            classifier_bias: [0.0; 2],
        }
    }

    fn slices(&self) -> [&[f64]; 9] {
        [
            &self.filters[0],
            &self.filters[1],
            &self.filters[2],
            &self.biases,
            &self.entity_attention,
            &self.text_attention,
            &self.similarity,
            &self.classifier,
            &self.classifier_bias,
        ]
    }

    fn scale(&mut self, s: f64) {
        for v in self.filters.iter_mut().flatten() {
            *v *= s;
        }
        for v in self
            .biases
            .iter_mut()
            .chain(self.entity_attention.iter_mut())
            .chain(self.text_attention.iter_mut())
            .chain(self.similarity.iter_mut())
            .chain(self.classifier.iter_mut())
            .chain(self.classifier_bias.iter_mut())
        {
            *v *= s;
        }
    }
}

fn param_slices(m: &mut MatchModel) -> [&mut [f64]; 9] {
    let [f0, f1, f2] = &mut m.filters;
    [
        f0,
        f1,
        f2,
        &mut m.biases,
        &mut m.entity_attention,
        &mut m.text_attention,
        &mut m.similarity,
        &mut m.classifier,
        &mut m.classifier_bias,
    ]
}

impl MatchModel {
    /// Gradient of the mean cross-entropy over `indices` of `set`; returns
    /// the summed loss, the number of correct decisions and the gradients.
    pub(crate) fn batch_gradient(&self, set: &PairSet, indices: &[usize]) -> (f64, usize, Gradients) {
        let fh = self.fh();
        let d = self.dim();
        let w = d + 2;
        let opts = self.config.options;

        let mut slot_of: HashMap<u32, usize> = HashMap::new();
        let mut ids: Vec<u32> = Vec::new();
        for &i in indices {
            let p = &set.pairs[i];
            for &r in p.entity.rows.iter().chain(&p.text.rows) {
                slot_of.entry(r).or_insert_with(|| {
                    ids.push(r);
                    ids.len() - 1
                });
            }
        }
        let rows: Vec<[&[f64]; LAYERS]> =
            ids.iter().map(|&id| std::array::from_fn(|l| set.store.row(l, id))).collect();
        let pw = self.proj_weights();
        let stat = self.project_static(&pw, &rows);
        let views: [&[f64]; LAYERS] = std::array::from_fn(|l| stat[l].as_slice().expect("contiguous"));

        let mut grads = Gradients::zeros_like(self);
        let mut row_grad: [Vec<f64>; LAYERS] = std::array::from_fn(|_| vec![0.0; ids.len() * fh]);
        // Per layer and projection row: gradients of the LSF and link weights.
        let mut link_grad: [Vec<f64>; LAYERS] = std::array::from_fn(|_| vec![0.0; 2 * fh]);
        let mut loss = 0.0;
        let mut correct = 0;

        for &i in indices {
            let pair = &set.pairs[i];
            let e_slots: Vec<usize> = pair.entity.rows.iter().map(|r| slot_of[r]).collect();
            let t_slots: Vec<usize> = pair.text.rows.iter().map(|r| slot_of[r]).collect();
            let e_in = SideInput { static_rows: views, slots: &e_slots, links: &pair.entity.links };
            let t_in = SideInput { static_rows: views, slots: &t_slots, links: &pair.text.links };
            let cache = self.pair_forward(&e_in, &t_in, &pw);
            let label = usize::from(pair.label);
            loss -= cache.log_probs[label];
            let predicted = cache.log_probs[1].exp() >= self.config.decision_threshold;
            correct += usize::from(predicted == pair.label);

            let mut sink = |side: Side, l: usize, r: usize, j: usize, g: f64| {
                let (slot, lk) = match side {
                    Side::Entity => (e_slots[r], pair.entity.links[r][l]),
                    Side::Text => (t_slots[r], pair.text.links[r][l]),
                };
                row_grad[l][slot * fh + j] += g;
                link_grad[l][2 * j] += g * lk[0];
                link_grad[l][2 * j + 1] += g * lk[1];
            };
            self.pair_backward(&cache, label, &mut grads, &mut sink);
        }

        for l in 0..LAYERS {
            let gf = &mut grads.filters[l];
            for j in 0..fh {
                let row = self.filter_row(j);
                gf[row * w + d] += link_grad[l][2 * j];
                if opts.link_column {
                    gf[row * w + d + 1] += link_grad[l][2 * j + 1];
                }
            }
        }

        for l in 0..LAYERS {
            if !opts.layers[l] || ids.is_empty() {
                continue;
            }
            let g = ArrayView2::from_shape((ids.len(), fh), &row_grad[l]).expect("shape");
            let s = Array2::from_shape_fn((ids.len(), d), |(i, c)| rows[i][l][c]);
            let dw = g.t().dot(&s);
            let gf = &mut grads.filters[l];
            for j in 0..fh {
                let row = self.filter_row(j);
                for c in 0..d {
                    gf[row * w + c] += dw[[j, c]];
                }
            }
        }

        if !opts.train_attention {
            grads.entity_attention = [0.0; LAYERS];
            grads.text_attention = [0.0; LAYERS];
        }
        grads.scale(1.0 / indices.len().max(1) as f64);
        (loss, correct, grads)
    }

    /// Backpropagates one pair's loss into `grads` (head, attention and
    /// biases). Gradients with respect to the side projections are sparse, so
    /// they go to `sink` as `(side, layer, row, projection index, value)`.
    fn pair_backward(
        &self,
        cache: &PairCache,
        label: usize,
        grads: &mut Gradients,
        sink: &mut impl FnMut(Side, usize, usize, usize, f64),
    ) {
        let f_n = self.filter_count();
        let width = 2 * f_n + 1;
        let mut dlogits = [cache.log_probs[0].exp(), cache.log_probs[1].exp()];
        dlogits[label] -= 1.0;
        let mut djoint = vec![0.0; width];
        for (c, &g) in dlogits.iter().enumerate() {
            grads.classifier_bias[c] += g;
            let wrow = &self.classifier[c * width..(c + 1) * width];
            let grow = &mut grads.classifier[c * width..(c + 1) * width];
            for j in 0..width {
                grow[j] += g * cache.joint[j];
                djoint[j] += g * wrow[j];
            }
        }
        let dsim = djoint[f_n];
        let x1 = &cache.entity.x;
        let x2 = &cache.text.x;
        let mut dx1 = djoint[..f_n].to_vec();
        let mut dx2 = djoint[f_n + 1..].to_vec();
        for i in 0..f_n {
            dx1[i] += dsim * cache.u_x2[i];
            dx2[i] += dsim * cache.ut_x1[i];
            let grow = &mut grads.similarity[i * f_n..(i + 1) * f_n];
            for (g, &b) in grow.iter_mut().zip(x2) {
                *g += dsim * x1[i] * b;
            }
        }
        self.side_backward(&cache.entity, Side::Entity, &dx1, grads, sink);
        self.side_backward(&cache.text, Side::Text, &dx2, grads, sink);
    }

    fn side_backward(
        &self,
        cache: &SideCache,
        side: Side,
        dx: &[f64],
        grads: &mut Gradients,
        sink: &mut impl FnMut(Side, usize, usize, usize, f64),
    ) {
        let f_n = self.filter_count();
        let h = self.window_height();
        let positions = cache.positions;
        let len = positions + 1 - h;
        let att = self.attention(side);
        let relu = self.config.options.relu;
        let mut datt = [0.0; LAYERS];
        for f in 0..f_n {
            let share = dx[f] / cache.kk as f64;
            for &p in &cache.top[f * cache.kk..(f + 1) * cache.kk] {
                if relu && cache.pre[p * f_n + f] <= 0.0 {
                    continue;
                }
                for l in 0..LAYERS {
                    if !self.config.options.layers[l] {
                        continue;
                    }
                    datt[l] += share * cache.conv[(l * positions + p) * f_n + f];
                    let g = share * att[l];
                    grads.biases[f * LAYERS + l] += g;
                    for i in 0..h {
                        let r = p as isize + i as isize - (h as isize - 1);
                        if r >= 0 && (r as usize) < len {
                            sink(side, l, r as usize, i * f_n + f, g);
                        }
                    }
                }
            }
        }
        let target = match side {
            Side::Entity => &mut grads.entity_attention,
            Side::Text => &mut grads.text_attention,
        };
        for l in 0..LAYERS {
            target[l] += datt[l];
        }
    }
}

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: MatchModel,
    /// Mean training loss per epoch.
    pub loss_curve: Vec<f64>,
    /// Training-set accuracy per epoch, measured during the epoch.
    pub accuracy_curve: Vec<f64>,
}

struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

/// Minibatch training with cross-entropy loss. Pair order is reshuffled each
/// epoch from the model seed.
pub fn train(model: MatchModel, set: &PairSet) -> Result<TrainOutcome> {
    train_epochwise(model, |_| Ok(Cow::Borrowed(set)))
}

/// Like [`train`], but asks `data` for the pair set of every epoch, which
/// allows the negatives to be redrawn between epochs.
pub fn train_epochwise<'a>(
    mut model: MatchModel,
    mut data: impl FnMut(usize) -> Result<Cow<'a, PairSet>>,
) -> Result<TrainOutcome> {
    model.config.validate()?;
    let cfg = model.config.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_7a1e);
    let mut adam = AdamState {
        m: param_slices(&mut model).iter().map(|s| vec![0.0; s.len()]).collect(),
        v: param_slices(&mut model).iter().map(|s| vec![0.0; s.len()]).collect(),
        t: 0,
    };
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    let mut accuracy_curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let set = data(epoch)?;
        if set.is_empty() {
            return Err(Error::Empty("training pairs"));
        }
        if set.dim() != model.dim() {
            return Err(Error::Config(format!("pair dim {} differs from model dim {}", set.dim(), model.dim())));
        }
        let mut order: Vec<usize> = (0..set.len()).collect();
        order.shuffle(&mut rng);
        let rate = cfg.rate_at(epoch);
        let mut total = 0.0;
        let mut correct = 0;
        for batch in order.chunks(cfg.batch_size) {
            let (loss, ok, grads) = model.batch_gradient(&set, batch);
            total += loss;
            correct += ok;
            apply(&mut model, &grads, rate, cfg.optimizer, &mut adam);
        }
        let mean = total / set.len() as f64;
        if !mean.is_finite() || !model.is_finite() {
            return Err(Error::NonFinite(format!("matcher epoch {}", epoch + 1)));
        }
        loss_curve.push(mean);
        accuracy_curve.push(correct as f64 / set.len() as f64);
    }
    Ok(TrainOutcome { model, loss_curve, accuracy_curve })
}

/// [`train`] over explicit feature matrices.
pub fn train_pairs(model: MatchModel, pairs: &[(FeatureMatrix, FeatureMatrix, bool)]) -> Result<TrainOutcome> {
    train(model, &PairSet::from_matrices(pairs)?)
}

fn apply(model: &mut MatchModel, grads: &Gradients, rate: f64, opt: Optimizer, adam: &mut AdamState) {
    let gs = grads.slices();
    match opt {
        Optimizer::Sgd => {
            for (p, g) in param_slices(model).into_iter().zip(gs) {
                for (a, b) in p.iter_mut().zip(g) {
                    *a -= rate * b;
                }
            }
        }
        Optimizer::Adam => {
            const B1: f64 = 0.9;
            const B2: f64 = 0.999;
            const EPS: f64 = 1e-8;
            adam.t += 1;
            let c1 = 1.0 - B1.powi(adam.t);
            let c2 = 1.0 - B2.powi(adam.t);
            for (k, (p, g)) in param_slices(model).into_iter().zip(gs).enumerate() {
                let (m, v) = (&mut adam.m[k], &mut adam.v[k]);
                for i in 0..p.len() {
                    m[i] = B1 * m[i] + (1.0 - B1) * g[i];
                    v[i] = B2 * v[i] + (1.0 - B2) * g[i] * g[i];
                    p[i] -= rate * (m[i] / c1) / ((v[i] / c2).sqrt() + EPS);
                }
            }
        }
    }
}

/// Loss and gradients of a single labelled pair.
pub fn pair_gradient(model: &MatchModel, entity: &FeatureMatrix, text: &FeatureMatrix, label: bool) -> (f64, Gradients) {
    let set = PairSet::from_matrices(&[(entity.clone(), text.clone(), label)]).expect("one pair");
    let (loss, _, g) = model.batch_gradient(&set, &[0]);
    (loss, g)
}
