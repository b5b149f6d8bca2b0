#![allow(dead_code)]

use std::sync::OnceLock;

use gridlink::text::LexEntry;
use gridlink::{generate, segment, FeatureTables, GenConfig, Generated, Lexicon, PosTag, SkipGramConfig, Token};

pub struct Fixture {
    pub data: Generated,
    pub tables: FeatureTables,
}

pub fn small_config() -> GenConfig {
    GenConfig { n_name: 20, n_state: 6, n_operation: 6, n_texts: 120, seed: 11, ..Default::default() }
}

/// Small generated world with cheaply trained feature tables, shared by every
/// test in a binary.
pub fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let data = generate(&small_config()).unwrap();
        let sentences: Vec<Vec<Token>> = data.corpus.iter().map(|t| segment(&t.text, &data.lexicon)).collect();
        let cfg = SkipGramConfig { dim: 8, epochs: 3, ..Default::default() };
        let tables = FeatureTables::train(&sentences, &cfg).unwrap();
        Fixture { data, tables }
    })
}

/// Lexicon of lowercase words; each word's syllables are its characters.
pub fn lexicon_of(words: &[String]) -> Lexicon {
    let mut lex = Lexicon::new();
    for w in words {
        let syllables = w.chars().map(|c| format!("s{c}")).collect();
        lex.insert(w, LexEntry { parts: vec![], syllables, pos: PosTag::Noun }).unwrap();
    }
    lex
}

/// Textbook recursive Levenshtein, memoized on suffix lengths.
pub fn levenshtein_oracle<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    fn go<T: PartialEq>(a: &[T], b: &[T], memo: &mut Vec<Vec<Option<usize>>>) -> usize {
        if let Some(v) = memo[a.len()][b.len()] {
            return v;
        }
        let v = if a.is_empty() {
            b.len()
        } else if b.is_empty() {
            a.len()
        } else {
            let cost = usize::from(a[0] != b[0]);
            (go(&a[1..], &b[1..], memo) + cost).min(go(&a[1..], b, memo) + 1).min(go(a, &b[1..], memo) + 1)
        };
        memo[a.len()][b.len()] = Some(v);
        v
    }
    let mut memo = vec![vec![None; b.len() + 1]; a.len() + 1];
    go(a, b, &mut memo)
}
