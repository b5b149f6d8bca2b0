//! Finite-difference gradient check for the matching network.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::train::{pair_gradient, Gradients};
use super::{MatchModel, MatchModelConfig};
use crate::embed::{Example, SkipGram};
use crate::error::Result;
use crate::features::{FeatureMatrix, LAYERS};

/// Central-difference step.
pub const GRAD_CHECK_STEP: f64 = 1e-5;

/// Magnitude below which a gradient is compared absolutely rather than
/// relatively. Central differences of a locally flat loss land around 1e-12,
/// which would otherwise register as a 100% error against an exact zero.
const MAGNITUDE_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamGroup {
    Filters,
    Biases,
    EntityAttention,
    TextAttention,
    Similarity,
    Classifier,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 6] = [
        ParamGroup::Filters,
        ParamGroup::Biases,
        ParamGroup::EntityAttention,
        ParamGroup::TextAttention,
        ParamGroup::Similarity,
        ParamGroup::Classifier,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ParamGroup::Filters => "filters",
            ParamGroup::Biases => "biases",
            ParamGroup::EntityAttention => "entity_attention",
            ParamGroup::TextAttention => "text_attention",
            ParamGroup::Similarity => "similarity",
            ParamGroup::Classifier => "classifier",
        }
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub group: ParamGroup,
    pub params: usize,
    pub max_relative_error: f64,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR)
}

fn group_values(g: &Gradients, group: ParamGroup) -> Vec<f64> {
    match group {
        ParamGroup::Filters => g.filters.concat(),
        ParamGroup::Biases => g.biases.clone(),
        ParamGroup::EntityAttention => g.entity_attention.to_vec(),
        ParamGroup::TextAttention => g.text_attention.to_vec(),
        ParamGroup::Similarity => g.similarity.clone(),
        ParamGroup::Classifier => [g.classifier.as_slice(), &g.classifier_bias].concat(),
    }
}

fn param_mut(m: &mut MatchModel, group: ParamGroup, mut i: usize) -> &mut f64 {
    match group {
        ParamGroup::Filters => {
            for layer in m.filters.iter_mut() {
                if i < layer.len() {
                    return &mut layer[i];
                }
                i -= layer.len();
            }
            panic!("filter index out of range")
        }
        ParamGroup::Biases => &mut m.biases[i],
        ParamGroup::EntityAttention => &mut m.entity_attention[i],
        ParamGroup::TextAttention => &mut m.text_attention[i],
        ParamGroup::Similarity => &mut m.similarity[i],
        ParamGroup::Classifier => {
            let n = m.classifier.len();
            if i < n {
                &mut m.classifier[i]
            } else {
                &mut m.classifier_bias[i - n]
            }
        }
    }
}

fn loss(m: &MatchModel, entity: &FeatureMatrix, text: &FeatureMatrix, label: bool) -> f64 {
    -m.forward_matrices(entity, text).log_probs[usize::from(label)]
}

/// Compares analytic gradients of the cross-entropy loss on one pair with
/// central differences, per parameter group.
pub fn grad_check(model: &MatchModel, entity: &FeatureMatrix, text: &FeatureMatrix, label: bool) -> Vec<GradCheckReport> {
    let (_, grads) = pair_gradient(model, entity, text, label);
    let mut probe = model.clone();
    ParamGroup::ALL
        .iter()
        .map(|&group| {
            let analytic = group_values(&grads, group);
            let mut worst: f64 = 0.0;
            for (i, &a) in analytic.iter().enumerate() {
                let orig = *param_mut(&mut probe, group, i);
                *param_mut(&mut probe, group, i) = orig + GRAD_CHECK_STEP;
                let up = loss(&probe, entity, text, label);
                *param_mut(&mut probe, group, i) = orig - GRAD_CHECK_STEP;
                let down = loss(&probe, entity, text, label);
                *param_mut(&mut probe, group, i) = orig;
                let numeric = (up - down) / (2.0 * GRAD_CHECK_STEP);
                worst = worst.max(relative_error(a, numeric));
            }
            GradCheckReport { group, params: analytic.len(), max_relative_error: worst }
        })
        .collect()
}

/// Gradient checks on a small random instance: every matcher parameter
/// group (D = 6, F = 4, h = 3, entity length 3, text length 6) and the
/// skip-gram trainer at the vocabulary shapes of the three feature tables.
/// Returns `(check name, max relative error)`.
pub fn desk_check(seed: u64) -> Result<Vec<(String, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = 6;
    let mut model = MatchModel::new(MatchModelConfig { filter_count: 4, window_height: 3, dim, seed, ..Default::default() })?;
    // Move off the symmetric initial point so no gradient is trivially zero.
    for v in model
        .biases
        .iter_mut()
        .chain(model.classifier.iter_mut())
        .chain(model.classifier_bias.iter_mut())
        .chain(model.similarity.iter_mut())
    {
        *v = rng.gen_range(-0.5..0.5);
    }
    for v in model.entity_attention.iter_mut().chain(model.text_attention.iter_mut()) {
        *v = rng.gen_range(0.5..1.5);
    }
    let mut matrix = |len: usize| {
        let mut fm = FeatureMatrix::zeros(len, dim);
        for l in 0..LAYERS {
            for r in 0..len {
                for v in fm.row_mut(l, r) {
                    *v = rng.gen_range(-1.0..1.0);
                }
            }
        }
        fm
    };
    let (entity, text) = (matrix(3), matrix(6));
    let label = seed % 2 == 0;
    let mut out: Vec<(String, f64)> =
        grad_check(&model, &entity, &text, label).into_iter().map(|r| (format!("matcher/{}", r.group), r.max_relative_error)).collect();
    // The three tables share one trainer; they differ in vocabulary sizes.
    for (name, n_in, n_out) in [("semantic", 6, 6), ("pinyin", 5, 5), ("pos", 6, 4)] {
        let sg = SkipGram::new(n_in, n_out, dim, &mut rng);
        let ex = Example { center: rng.gen_range(0..n_in), targets: (0..3).map(|_| rng.gen_range(0..n_out)).collect() };
        out.push((format!("skipgram/{name}"), sg.grad_check(&ex, GRAD_CHECK_STEP)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!(relative_error(0.0, 1e-12) < 1e-5);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-12);
    }

    #[test]
    fn small_model_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = MatchModelConfig { filter_count: 3, window_height: 2, dim: 4, seed: 1, ..Default::default() };
        let mut m = MatchModel::new(cfg).unwrap();
        for v in m.classifier.iter_mut().chain(m.biases.iter_mut()) {
            *v = rng.gen_range(-0.5..0.5);
        }
        let mut mat = |len| {
            let mut fm = FeatureMatrix::zeros(len, 4);
            for l in 0..LAYERS {
                for r in 0..len {
                    for v in fm.row_mut(l, r) {
                        *v = rng.gen_range(-1.0..1.0);
                    }
                }
            }
            fm
        };
        let (e, t) = (mat(2), mat(4));
        for r in grad_check(&m, &e, &t, true) {
            assert!(r.max_relative_error < 1e-4, "{r:?}");
        }
    }
}
