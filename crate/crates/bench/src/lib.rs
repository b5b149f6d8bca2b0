//! Shared fixtures for the benchmarks.

use gridlink::{generate, FeatureTables, GenConfig, Generated, SkipGramConfig};

/// A small generated corpus with feature tables trained on all of it.
pub struct Fixture {
    pub data: Generated,
    pub tables: FeatureTables,
}

pub fn fixture(n_texts: usize) -> Fixture {
    let data = generate(&GenConfig { n_texts, seed: 11, ..Default::default() }).expect("generator config is valid");
    let sentences: Vec<_> = data.corpus.iter().map(|t| gridlink::segment(&t.text, &data.lexicon)).collect();
    let cfg = SkipGramConfig { epochs: 3, ..Default::default() };
    let tables = FeatureTables::train(&sentences, &cfg).expect("embedding training succeeds");
    Fixture { data, tables }
}
