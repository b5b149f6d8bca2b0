//! Dictionary segmentation at minimum granularity, with per-character
//! syllables and part-of-speech tags taken from the lexicon.
//!
//! Segmentation is forward maximum matching over the lexicon; a matched
//! compound is then replaced by its stored parts. Runs of ASCII letters and
//! digits that contain at least one digit (equipment codes such as `16730`
//! or `G224`) are cut out as single [`PosTag::NumCode`] tokens before any
//! dictionary lookup. Material the lexicon does not know becomes
//! single-character tokens tagged [`PosTag::Other`] whose syllable is the
//! character prefixed with [`UNKNOWN_SYLLABLE_PREFIX`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::kg::KnowledgeGraph;

pub const UNKNOWN_SYLLABLE_PREFIX: &str = "unk:";

/// Part-of-speech tags. String forms follow the ICTCLAS short codes used by
/// common Chinese dictionaries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PosTag {
    Noun,
    Verb,
    Adjective,
    Adverb,
    Preposition,
    NumCode,
    NominalVerb,
    NominalAdjective,
    Other,
}

impl PosTag {
    pub const ALL: [PosTag; 9] = [
        PosTag::Noun,
        PosTag::Verb,
        PosTag::Adjective,
        PosTag::Adverb,
        PosTag::Preposition,
        PosTag::NumCode,
        PosTag::NominalVerb,
        PosTag::NominalAdjective,
        PosTag::Other,
    ];

    pub fn code(self) -> &'static str {
        match self {
            PosTag::Noun => "n",
            PosTag::Verb => "v",
            PosTag::Adjective => "a",
            PosTag::Adverb => "d",
            PosTag::Preposition => "p",
            PosTag::NumCode => "m",
            PosTag::NominalVerb => "vn",
            PosTag::NominalAdjective => "an",
            PosTag::Other => "x",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for PosTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for PosTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PosTag::ALL
            .iter()
            .copied()
            .find(|t| t.code() == s)
            .ok_or_else(|| Error::Parse(format!("unknown part-of-speech tag `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LexEntry {
    /// Minimum-granularity parts; empty when the word is atomic.
    pub parts: Vec<String>,
    /// One syllable per character.
    pub syllables: Vec<String>,
    pub pos: PosTag,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Lexicon {
    entries: BTreeMap<String, LexEntry>,
    inventory: BTreeSet<String>,
    char_syllables: HashMap<char, String>,
    max_word_chars: usize,
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, word: &str, entry: LexEntry) -> Result<()> {
        let lex_err = |reason: String| Error::Lexicon { word: word.to_string(), reason };
        if word.is_empty() {
            return Err(lex_err("empty word".into()));
        }
        let n_chars = word.chars().count();
        if entry.syllables.len() != n_chars {
            return Err(lex_err(format!(
                "{} syllables for {} characters",
                entry.syllables.len(),
                n_chars
            )));
        }
        if let Some(s) = entry.syllables.iter().find(|s| s.is_empty() || s.chars().any(char::is_whitespace)) {
            return Err(lex_err(format!("invalid syllable `{s}`")));
        }
        if !entry.parts.is_empty() {
            let joined: String = entry.parts.concat();
            if joined != word {
                return Err(lex_err(format!("parts `{}` do not concatenate to the word", entry.parts.join(","))));
            }
            if entry.parts.iter().any(String::is_empty) {
                return Err(lex_err("empty part".into()));
            }
        }
        for (c, s) in word.chars().zip(&entry.syllables) {
            self.char_syllables.entry(c).or_insert_with(|| s.clone());
            self.inventory.insert(s.clone());
        }
        self.max_word_chars = self.max_word_chars.max(n_chars);
        self.entries.insert(word.to_string(), entry);
        Ok(())
    }

    pub fn get(&self, word: &str) -> Option<&LexEntry> {
        self.entries.get(word)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.entries.contains_key(word)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &LexEntry)> {
        self.entries.iter().map(|(w, e)| (w.as_str(), e))
    }

    pub fn syllable_inventory(&self) -> &BTreeSet<String> {
        &self.inventory
    }

    /// Reading of a single character, from the first lexicon entry containing it.
    pub fn char_syllable(&self, c: char) -> Option<&str> {
        self.char_syllables.get(&c).map(String::as_str)
    }

    pub fn max_word_chars(&self) -> usize {
        self.max_word_chars
    }

    /// Parses the TSV form: `word \t parts \t syllables \t pos`, parts
    /// comma-joined (empty if atomic), syllables space-joined.
    pub fn from_tsv_str(s: &str) -> Result<Self> {
        let mut lex = Lexicon::new();
        for (lineno, line) in s.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(Error::Parse(format!(
                    "lexicon line {}: expected 4 tab-separated columns, found {}",
                    lineno + 1,
                    cols.len()
                )));
            }
            let parts = if cols[1].is_empty() {
                Vec::new()
            } else {
                cols[1].split(',').map(str::to_string).collect()
            };
            let syllables = cols[2].split(' ').filter(|s| !s.is_empty()).map(str::to_string).collect();
            let pos = cols[3]
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("lexicon line {}: {e}", lineno + 1)))?;
            lex.insert(cols[0], LexEntry { parts, syllables, pos })?;
        }
        Ok(lex)
    }

    pub fn load_tsv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_tsv_str(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn to_tsv_string(&self) -> String {
        let mut out = String::new();
        for (w, e) in &self.entries {
            out.push_str(w);
            out.push('\t');
            out.push_str(&e.parts.join(","));
            out.push('\t');
            out.push_str(&e.syllables.join(" "));
            out.push('\t');
            out.push_str(e.pos.code());
            out.push('\n');
        }
        out
    }

    pub fn save_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv_string()).map_err(io_err(path))
    }
}

/// Loads the base lexicon file and extends it with every word of every
/// entity surface in `kg`.
pub fn build_lexicon(base_entries: impl AsRef<Path>, kg: &KnowledgeGraph) -> Result<Lexicon> {
    extend_with_graph(Lexicon::load_tsv(base_entries)?, kg)
}

/// Segments each entity surface under `lex` and records the resulting words
/// (and, for separator-free multi-word surfaces, the compound with its parts).
pub fn extend_with_graph(mut lex: Lexicon, kg: &KnowledgeGraph) -> Result<Lexicon> {
    for e in kg.entities() {
        let tokens = segment(&e.surface, &lex);
        for t in &tokens {
            if let Some((c, _)) = t
                .chars
                .iter()
                .zip(&t.syllables)
                .find(|(_, s)| s.starts_with(UNKNOWN_SYLLABLE_PREFIX))
            {
                return Err(Error::Lexicon {
                    word: e.surface.clone(),
                    reason: format!("no pinyin for character `{c}`"),
                });
            }
        }
        for t in &tokens {
            if !lex.contains(&t.surface) {
                lex.insert(
                    &t.surface,
                    LexEntry {
                        parts: Vec::new(),
                        syllables: t.syllables.clone(),
                        pos: t.pos,
                    },
                )?;
            }
        }
        let contiguous = !e.surface.chars().any(is_separator);
        if contiguous && tokens.len() > 1 && !lex.contains(&e.surface) {
            let last = tokens.last().expect("non-empty");
            lex.insert(
                &e.surface,
                LexEntry {
                    parts: tokens.iter().map(|t| t.surface.clone()).collect(),
                    syllables: tokens.iter().flat_map(|t| t.syllables.iter().cloned()).collect(),
                    pos: last.pos,
                },
            )?;
        }
    }
    Ok(lex)
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Token {
    pub surface: String,
    pub chars: Vec<char>,
    /// Same length as `chars`.
    pub syllables: Vec<String>,
    pub pos: PosTag,
    /// Byte range of the token in the segmented text.
    pub span: (usize, usize),
}

impl Token {
    pub fn len_chars(&self) -> usize {
        self.chars.len()
    }
}

/// Whitespace and punctuation separate words but never become tokens.
pub fn is_separator(c: char) -> bool {
    c.is_whitespace()
        || c.is_ascii_punctuation()
        || matches!(
            c,
            '，' | '。' | '；' | '：' | '！' | '？' | '、' | '（' | '）' | '“' | '”' | '‘' | '’' | '《' | '》'
        )
}

fn is_code_char(c: char) -> bool {
    c.is_ascii_alphanumeric()
}

/// A unit emitted by maximum matching, before compounds are split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) enum Piece {
    Word { start: usize, end: usize },
    Code { start: usize, end: usize },
    Unknown { start: usize, end: usize },
}

/// Forward maximum matching over `text`; separators are skipped.
pub(crate) fn match_pieces(text: &str, lex: &Lexicon) -> Vec<Piece> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let byte_at = |i: usize| if i < chars.len() { chars[i].0 } else { text.len() };
    let mut pieces = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i].1;
        if is_separator(c) {
            i += 1;
            continue;
        }
        if is_code_char(c) {
            let mut j = i;
            while j < chars.len() && is_code_char(chars[j].1) {
                j += 1;
            }
            if chars[i..j].iter().any(|(_, c)| c.is_ascii_digit()) {
                pieces.push(Piece::Code { start: byte_at(i), end: byte_at(j) });
                i = j;
                continue;
            }
        }
        let mut best = None;
        let limit = lex.max_word_chars().min(chars.len() - i);
        for len in (1..=limit).rev() {
            let (s, e) = (byte_at(i), byte_at(i + len));
            if lex.contains(&text[s..e]) {
                best = Some(len);
                break;
            }
        }
        match best {
            Some(len) => {
                pieces.push(Piece::Word { start: byte_at(i), end: byte_at(i + len) });
                i += len;
            }
            None => {
                pieces.push(Piece::Unknown { start: byte_at(i), end: byte_at(i + 1) });
                i += 1;
            }
        }
    }
    pieces
}

fn char_syllables(surface: &str, lex: &Lexicon) -> Vec<String> {
    surface
        .chars()
        .map(|c| match lex.char_syllable(c) {
            Some(s) => s.to_string(),
            None => format!("{UNKNOWN_SYLLABLE_PREFIX}{c}"),
        })
        .collect()
}

fn make_token(text: &str, start: usize, end: usize, syllables: Vec<String>, pos: PosTag) -> Token {
    let surface = text[start..end].to_string();
    let chars = surface.chars().collect();
    Token { surface, chars, syllables, pos, span: (start, end) }
}

/// Segments `text` into minimum-granularity tokens annotated with syllables
/// and POS tags.
pub fn segment(text: &str, lex: &Lexicon) -> Vec<Token> {
    let mut tokens = Vec::new();
    for piece in match_pieces(text, lex) {
        match piece {
            Piece::Code { start, end } => {
                let syl = char_syllables(&text[start..end], lex);
                tokens.push(make_token(text, start, end, syl, PosTag::NumCode));
            }
            Piece::Unknown { start, end } => {
                let c = &text[start..end];
                tokens.push(make_token(
                    text,
                    start,
                    end,
                    vec![format!("{UNKNOWN_SYLLABLE_PREFIX}{c}")],
                    PosTag::Other,
                ));
            }
            Piece::Word { start, end } => {
                let entry = lex.get(&text[start..end]).expect("matched word is in the lexicon");
                if entry.parts.is_empty() {
                    tokens.push(make_token(text, start, end, entry.syllables.clone(), entry.pos));
                    continue;
                }
                let mut byte = start;
                let mut ch = 0;
                for part in &entry.parts {
                    let n = part.chars().count();
                    let syl = entry.syllables[ch..ch + n].to_vec();
                    tokens.push(make_token(text, byte, byte + part.len(), syl, PosTag::Other));
                    byte += part.len();
                    ch += n;
                }
            }
        }
    }
    annotate_pos(tokens, lex)
}

fn is_code_surface(s: &str) -> bool {
    !s.is_empty() && s.chars().all(is_code_char) && s.chars().any(|c| c.is_ascii_digit())
}

/// Assigns POS tags: lexicon tag when the word is known, [`PosTag::NumCode`]
/// for letter/digit codes, [`PosTag::Other`] otherwise.
pub fn annotate_pos(mut tokens: Vec<Token>, lex: &Lexicon) -> Vec<Token> {
    for t in &mut tokens {
        t.pos = if let Some(e) = lex.get(&t.surface) {
            e.pos
        } else if is_code_surface(&t.surface) {
            PosTag::NumCode
        } else {
            PosTag::Other
        };
    }
    tokens
}
