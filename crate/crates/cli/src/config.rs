//! TOML run configuration. Every section is optional; missing keys take the
//! library defaults.
//!
//! ```toml
//! seed = 7
//!
//! [gen]
//! n_texts = 2000
//! phonetic_sub = 0.15
//!
//! [embedding]
//! dim = 50
//! window = 2
//!
//! [matcher]
//! filter_count = 100
//! optimizer = "adam"
//!
//! [eval]
//! folds = 5
//! negatives = 7
//! negative_sampling = "per-epoch"
//! variants = ["full", "direct"]
//! ```

use std::path::Path;

use anyhow::{Context, Result};
use gridlink::eval::derive_seed;
use gridlink::{EvalConfig, GenConfig, LinkerVariant, MatchModelConfig, NegativeSampling, SkipGramConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: u64,
    pub gen: GenConfig,
    pub embedding: SkipGramConfig,
    pub matcher: MatchModelConfig,
    pub eval: EvalSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub folds: usize,
    pub negatives: usize,
    pub negative_sampling: NegativeSampling,
    pub variants: Vec<LinkerVariant>,
}

impl Default for EvalSection {
    fn default() -> Self {
        let d = EvalConfig::default();
        Self { folds: d.folds, negatives: d.negatives, negative_sampling: d.negative_sampling, variants: d.variants }
    }
}

impl FileConfig {
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let mut cfg: FileConfig = match path {
            Some(p) => {
                let s = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&s).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => FileConfig::default(),
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        // One master seed drives every stage.
        cfg.gen.seed = derive_seed(cfg.seed, &[0x67]);
        cfg.embedding.seed = derive_seed(cfg.seed, &[0x65]);
        cfg.matcher.seed = derive_seed(cfg.seed, &[0x6d]);
        cfg.matcher.dim = cfg.embedding.dim;
        Ok(cfg)
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            folds: self.eval.folds,
            negatives: self.eval.negatives,
            negative_sampling: self.eval.negative_sampling,
            seed: self.seed,
            embedding: self.embedding.clone(),
            matcher: self.matcher.clone(),
            variants: self.eval.variants.clone(),
        }
    }
}
