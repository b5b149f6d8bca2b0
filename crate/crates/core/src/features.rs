//! Pair-dependent three-layer feature matrices.
//!
//! Each side of a (entity, text) pair becomes three `L × (D+2)` layers
//! (semantic, pronunciation, part of speech). Columns `0..D` hold the word's
//! static vector for that layer, column `D` the lexical-semantic-feature
//! (LSF) value against the opposite side, and column `D+1` the direct-link
//! value: literal edit distance, syllable edit distance, or part-of-speech
//! relatedness, respectively.

use crate::embed::{cosine, FeatureTables};
use crate::text::{PosTag, Token};

/// Upper limit of the LSF and direct-link values.
pub const LINK_CAP: u32 = 10;

pub const LAYERS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Layer {
    Semantic = 0,
    Pronunciation = 1,
    PartOfSpeech = 2,
}

impl Layer {
    pub const ALL: [Layer; 3] = [Layer::Semantic, Layer::Pronunciation, Layer::PartOfSpeech];
}

/// Symmetric part-of-speech relatedness used by the POS direct-link column.
#[derive(Clone, Debug, PartialEq)]
pub struct SimTable {
    values: [[f64; 9]; 9],
}

impl Default for SimTable {
    /// 0 for equal tags; 0.3 between a nominal verb and a noun or verb, and
    /// between a nominal adjective and a noun or adjective; 1 otherwise.
    fn default() -> Self {
        let mut values = [[1.0; 9]; 9];
        for (i, row) in values.iter_mut().enumerate() {
            row[i] = 0.0;
        }
        let related = [
            (PosTag::NominalVerb, PosTag::Noun),
            (PosTag::NominalVerb, PosTag::Verb),
            (PosTag::NominalAdjective, PosTag::Noun),
            (PosTag::NominalAdjective, PosTag::Adjective),
        ];
        for (a, b) in related {
            values[a.index()][b.index()] = 0.3;
            values[b.index()][a.index()] = 0.3;
        }
        Self { values }
    }
}

impl SimTable {
    pub fn sim(&self, a: PosTag, b: PosTag) -> f64 {
        self.values[a.index()][b.index()]
    }
}

/// Levenshtein distance with unit insert, delete and substitute costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=a.len()).collect();
    let mut cur = vec![0; a.len() + 1];
    for (j, y) in b.iter().enumerate() {
        cur[0] = j + 1;
        for (i, x) in a.iter().enumerate() {
            let sub = prev[i] + usize::from(x != y);
            cur[i + 1] = sub.min(prev[i + 1] + 1).min(cur[i] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[a.len()]
}

/// `ceil((1 − max(0, max_k cos(query, other_k))) · t)`.
pub fn lsf_value<'a>(query: &[f64], others: impl IntoIterator<Item = &'a [f64]>, t: u32) -> u32 {
    let best = others.into_iter().map(|v| cosine(query, v)).fold(0.0_f64, f64::max);
    lsf_from_cosine(best, t)
}

pub(crate) fn lsf_from_cosine(max_cos: f64, t: u32) -> u32 {
    let v = (1.0 - max_cos.max(0.0)) * f64::from(t);
    // Absorb rounding noise so that cos = 1 maps to exactly 0.
    (v - 1e-9).ceil().clamp(0.0, f64::from(t)) as u32
}

fn capped_min(values: impl Iterator<Item = usize>, t: u32) -> f64 {
    values.min().map_or(f64::from(t), |d| d.min(t as usize) as f64)
}

/// Literal link: smallest character edit distance to any opposite word.
pub fn lit_value(word: &Token, other_side: &[Token], t: u32) -> f64 {
    capped_min(other_side.iter().map(|o| edit_distance(&word.chars, &o.chars)), t)
}

/// Pronunciation link: smallest syllable-sequence edit distance.
pub fn pron_value(word: &Token, other_side: &[Token], t: u32) -> f64 {
    capped_min(other_side.iter().map(|o| edit_distance(&word.syllables, &o.syllables)), t)
}

/// Part-of-speech link: smallest relatedness to any opposite word's tag.
pub fn part_value(word: &Token, other_side: &[Token], sim: &SimTable) -> f64 {
    other_side.iter().map(|o| sim.sim(word.pos, o.pos)).fold(f64::INFINITY, f64::min).min(1.0)
}

/// Static vectors of one token with precomputed norms.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenVectors {
    pub layers: [Vec<f64>; 3],
}

impl TokenVectors {
    pub fn of(token: &Token, tables: &FeatureTables) -> Self {
        Self { layers: tables.token_vectors(token) }
    }
}

/// LSF and direct-link values of one token, per layer: `[layer][0]` is the
/// LSF value and `[layer][1]` the direct-link value.
pub type LinkValues = [[f64; 2]; LAYERS];

/// Computes the LSF and direct-link columns of every token of `side` against
/// `other`.
pub fn link_columns(
    side: &[Token],
    side_vecs: &[TokenVectors],
    other: &[Token],
    other_vecs: &[TokenVectors],
    sim: &SimTable,
    t: u32,
) -> Vec<LinkValues> {
    side.iter()
        .zip(side_vecs)
        .map(|(tok, vecs)| {
            let mut out = [[0.0; 2]; LAYERS];
            for l in 0..LAYERS {
                let lsf = lsf_value(&vecs.layers[l], other_vecs.iter().map(|o| o.layers[l].as_slice()), t);
                out[l][0] = f64::from(lsf);
            }
            out[0][1] = lit_value(tok, other, t);
            out[1][1] = pron_value(tok, other, t);
            out[2][1] = part_value(tok, other, sim);
            out
        })
        .collect()
}

/// Three `len × (dim+2)` layers, stored layer-major then row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    len: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn zeros(len: usize, dim: usize) -> Self {
        Self { len, dim, data: vec![0.0; LAYERS * len * (dim + 2)] }
    }

    /// Assembles rows from static vectors and link values.
    pub fn from_parts(dim: usize, vecs: &[TokenVectors], links: &[LinkValues]) -> Self {
        assert_eq!(vecs.len(), links.len());
        let mut m = Self::zeros(vecs.len(), dim);
        for (r, (v, lk)) in vecs.iter().zip(links).enumerate() {
            for l in 0..LAYERS {
                let row = m.row_mut(l, r);
                row[..dim].copy_from_slice(&v.layers[l]);
                row[dim] = lk[l][0];
                row[dim + 1] = lk[l][1];
            }
        }
        m
    }

    /// Number of rows (tokens).
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Vector dimension `D`; each row has `D + 2` columns.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn width(&self) -> usize {
        self.dim + 2
    }

    pub fn row(&self, layer: usize, r: usize) -> &[f64] {
        let w = self.width();
        let start = (layer * self.len + r) * w;
        &self.data[start..start + w]
    }

    pub fn row_mut(&mut self, layer: usize, r: usize) -> &mut [f64] {
        let w = self.width();
        let start = (layer * self.len + r) * w;
        &mut self.data[start..start + w]
    }

    pub fn get(&self, layer: usize, r: usize, c: usize) -> f64 {
        self.row(layer, r)[c]
    }

    /// `(L, D+2, 3)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.len, self.width(), LAYERS)
    }
}

/// Builds the entity-side and text-side matrices for one pair.
pub fn build_pair_matrices(
    text_tokens: &[Token],
    entity_tokens: &[Token],
    tables: &FeatureTables,
    sim: &SimTable,
    t: u32,
) -> (FeatureMatrix, FeatureMatrix) {
    let dim = tables.dim();
    let tv: Vec<TokenVectors> = text_tokens.iter().map(|tok| TokenVectors::of(tok, tables)).collect();
    let ev: Vec<TokenVectors> = entity_tokens.iter().map(|tok| TokenVectors::of(tok, tables)).collect();
    let e_links = link_columns(entity_tokens, &ev, text_tokens, &tv, sim, t);
    let t_links = link_columns(text_tokens, &tv, entity_tokens, &ev, sim, t);
    (FeatureMatrix::from_parts(dim, &ev, &e_links), FeatureMatrix::from_parts(dim, &tv, &t_links))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok(s: &str, syl: &[&str], pos: PosTag) -> Token {
        Token {
            surface: s.into(),
            chars: s.chars().collect(),
            syllables: syl.iter().map(|x| x.to_string()).collect(),
            pos,
            span: (0, 0),
        }
    }

    #[test]
    fn sim_table_cases() {
        let s = SimTable::default();
        for t in PosTag::ALL {
            assert_eq!(s.sim(t, t), 0.0);
        }
        assert_eq!(s.sim(PosTag::NominalVerb, PosTag::Noun), 0.3);
        assert_eq!(s.sim(PosTag::Verb, PosTag::NominalVerb), 0.3);
        assert_eq!(s.sim(PosTag::NominalAdjective, PosTag::Noun), 0.3);
        assert_eq!(s.sim(PosTag::Adjective, PosTag::NominalAdjective), 0.3);
        assert_eq!(s.sim(PosTag::Preposition, PosTag::Adverb), 1.0);
        assert_eq!(s.sim(PosTag::NominalVerb, PosTag::Adjective), 1.0);
    }

    #[test]
    fn lsf_boundaries() {
        let q = [1.0, 0.0];
        assert_eq!(lsf_value(&q, [&[2.0, 0.0][..]], 10), 0);
        assert_eq!(lsf_value(&q, [&[-1.0, 0.0][..], &[0.0, 3.0][..]], 10), 10);
        assert_eq!(lsf_value(&q, [&[0.0, 0.0][..]], 10), 10);
        assert_eq!(lsf_from_cosine(0.55, 10), 5);
    }

    #[test]
    fn lsf_at_cos_055() {
        // cos = 0.55 exactly via a constructed vector.
        let c: f64 = 0.55;
        let v = [c, (1.0 - c * c).sqrt()];
        assert_eq!(lsf_value(&[1.0, 0.0], [&v[..]], 10), 5);
    }

    #[test]
    fn lit_cases() {
        let w = tok("AB", &["a", "b"], PosTag::Noun);
        assert_eq!(lit_value(&w, &[tok("AB", &["a", "b"], PosTag::Noun)], 10), 0.0);
        assert_eq!(lit_value(&w, &[tok("XYZW", &["x"; 4], PosTag::Noun), tok("AC", &["a", "c"], PosTag::Noun)], 10), 1.0);
        let long = tok("ABCDEFGHIJKLMNO", &["x"; 15], PosTag::Noun);
        assert_eq!(lit_value(&long, &[tok("Z", &["z"], PosTag::Noun)], 10), 10.0);
    }

    #[test]
    fn pron_cases() {
        let w = tok("检修", &["jian3", "xiu1"], PosTag::NominalVerb);
        assert_eq!(pron_value(&w, &[tok("减休", &["jian3", "xiu1"], PosTag::Verb)], 10), 0.0);
        assert_eq!(pron_value(&w, &[tok("检查", &["jian3", "cha2"], PosTag::Verb)], 10), 1.0);
        let one = tok("开", &["kai1"], PosTag::Verb);
        assert_eq!(pron_value(&one, &[tok("关", &["guan1"], PosTag::Verb)], 10), 1.0);
    }

    #[test]
    fn part_cases() {
        let s = SimTable::default();
        let nv = tok("a", &["a"], PosTag::NominalVerb);
        assert_eq!(part_value(&nv, &[tok("b", &["b"], PosTag::Adverb), tok("c", &["c"], PosTag::NominalVerb)], &s), 0.0);
        assert_eq!(part_value(&nv, &[tok("b", &["b"], PosTag::Adverb), tok("c", &["c"], PosTag::Noun)], &s), 0.3);
        let p = tok("p", &["p"], PosTag::Preposition);
        assert_eq!(part_value(&p, &[tok("d", &["d"], PosTag::Adverb)], &s), 1.0);
    }

    #[test]
    fn edit_distance_basics() {
        assert_eq!(edit_distance(b"kitten", b"sitting"), 3);
        assert_eq!(edit_distance::<u8>(b"", b"abc"), 3);
        assert_eq!(edit_distance::<u8>(b"abc", b""), 3);
    }
}
