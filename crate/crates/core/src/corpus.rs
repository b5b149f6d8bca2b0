//! Seeded generator for a synthetic dispatch language: knowledge graph,
//! lexicon and labelled texts with controllable noise.
//!
//! Words are runs of fresh CJK code points, each character carrying a
//! generated syllable such as `zhang3`. Name entities follow
//! place + code + device; states are head noun + qualifier; operations are
//! object noun + action. Three noise channels perturb text surfaces while
//! keeping gold labels:
//!
//! * phonetic substitution replaces a place word by a homophone (all or one
//!   of its characters swapped for characters with the same syllable);
//! * synonym swap replaces a qualifier or action by a variant with the same
//!   part-of-speech tag;
//! * discontinuity fuses the shared device noun of two coordinated names.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{derive_seed, LabeledText};
use crate::kg::{Entity, EntityKind, KnowledgeGraph, RelationType, Triple};
use crate::text::{extend_with_graph, segment, LexEntry, Lexicon, PosTag};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub n_name: usize,
    pub n_state: usize,
    pub n_operation: usize,
    pub n_texts: usize,
    pub phonetic_sub: f64,
    pub synonym_swap: f64,
    pub discontinuity: f64,
    /// Fraction of names, states and operations that belong to a confusable
    /// pair: two names that differ only in the place word, or two
    /// states/operations that differ only in the qualifier/action.
    pub confusable_rate: f64,
    pub seed: u64,
    /// One weight per template, in [`TEMPLATES`] order.
    pub template_weights: Vec<f64>,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_name: 120,
            n_state: 40,
            n_operation: 40,
            n_texts: 2000,
            phonetic_sub: 0.15,
            synonym_swap: 0.15,
            discontinuity: 0.10,
            confusable_rate: 0.10,
            seed: 0,
            template_weights: TEMPLATES.iter().map(|t| t.weight).collect(),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_name < 2 || self.n_state < 1 || self.n_operation < 1 {
            return Err(Error::Config("need at least 2 names, 1 state and 1 operation".into()));
        }
        for (name, r) in [
            ("phonetic_sub", self.phonetic_sub),
            ("synonym_swap", self.synonym_swap),
            ("discontinuity", self.discontinuity),
            ("confusable_rate", self.confusable_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.template_weights.len() != TEMPLATES.len() {
            return Err(Error::Config(format!("expected {} template weights", TEMPLATES.len())));
        }
        if self.template_weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) || self.template_weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("template weights must be non-negative with a positive sum".into()));
        }
        Ok(())
    }

    /// Same graph and language, all noise channels off.
    pub fn noiseless(&self) -> Self {
        Self { phonetic_sub: 0.0, synonym_swap: 0.0, discontinuity: 0.0, ..self.clone() }
    }
}

/// Number of confusable pairs among `n` entities.
fn pair_count(n: usize, rate: f64) -> usize {
    ((n as f64 * rate / 2.0).round() as usize).min(n / 2)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Slot {
    Name,
    State,
    Op,
    /// Filler word by index into [`FILLERS`].
    Fill(usize),
    Punct(&'static str),
}

/// Filler words: gloss and tag.
const FILLERS: [(&str, PosTag); 7] = [
    ("is-indeed-in", PosTag::Other),
    ("on", PosTag::Preposition),
    ("under", PosTag::Preposition),
    ("both-sides", PosTag::Other),
    ("and", PosTag::Other),
    ("already", PosTag::Other),
    ("complete", PosTag::Other),
];
const AND: usize = 4;

pub struct Template {
    pub shape: &'static str,
    pub weight: f64,
    slots: &'static [Slot],
}

use Slot::{Fill, Name as N, Op as O, Punct, State as S};

/// Text shapes modelled on real dispatch utterances.
pub const TEMPLATES: [Template; 11] = [
    Template { shape: "NAME is-indeed-in STATE", weight: 1.0, slots: &[N, Fill(0), S] },
    Template { shape: "NAME: OPERATION NAME", weight: 2.0, slots: &[N, Punct("："), O, N] },
    Template { shape: "OPERATION on NAME", weight: 1.0, slots: &[O, Fill(1), N] },
    Template { shape: "OPERATION, STATE", weight: 1.0, slots: &[O, Punct("，"), S] },
    Template { shape: "NAME: NAME under STATE", weight: 2.0, slots: &[N, Punct("："), N, Fill(2), S] },
    Template { shape: "NAME, NAME both-sides", weight: 1.0, slots: &[N, Punct("，"), N, Fill(3)] },
    Template { shape: "OPERATION NAME and NAME under STATE", weight: 4.0, slots: &[O, N, Fill(AND), N, Fill(2), S] },
    Template { shape: "NAME and NAME already OPERATION", weight: 2.0, slots: &[N, Fill(AND), N, Fill(5), O] },
    Template { shape: "NAME: OPERATION NAME and NAME", weight: 4.0, slots: &[N, Punct("："), O, N, Fill(AND), N] },
    Template { shape: "NAME: OPERATION NAME, STATE", weight: 4.0, slots: &[N, Punct("："), O, N, Punct("，"), S] },
    Template {
        shape: "NAME and NAME: OPERATION complete, STATE",
        weight: 4.0,
        slots: &[N, Fill(AND), N, Punct("："), O, Fill(6), Punct("，"), S],
    },
];

#[derive(Clone, Debug)]
struct Word {
    surface: String,
    syllables: Vec<String>,
    pos: PosTag,
}

/// Vocabulary and character/syllable allocator.
struct Language {
    words: Vec<Word>,
    next_char: u32,
    used_readings: HashSet<Vec<String>>,
    inventory: Vec<String>,
    places: Vec<usize>,
    homophones: BTreeMap<usize, Vec<usize>>,
    devices: Vec<usize>,
    state_heads: Vec<usize>,
    op_objects: Vec<usize>,
    qualifiers: [Vec<usize>; 2],
    actions: [Vec<usize>; 2],
    variants: BTreeMap<usize, Vec<usize>>,
    fillers: Vec<usize>,
    code_chars: BTreeMap<char, String>,
}

const STATE_TAGS: [PosTag; 2] = [PosTag::Adjective, PosTag::Adverb];
const OP_TAGS: [PosTag; 2] = [PosTag::Verb, PosTag::NominalVerb];
const CODE_LETTERS: &str = "ABCDEFGHJKLMNPRSTUVWXYZ";

fn syllable_inventory() -> Vec<String> {
    let onsets = ["b", "p", "m", "f", "d", "t", "n", "l", "g", "k", "h", "j", "q", "x", "zh", "ch", "sh", "r", "z", "c", "s"];
    let rimes = ["a", "o", "e", "i", "u", "ai", "ei", "ao", "ou", "an", "en", "ang", "eng", "ong", "ia", "ie", "iu", "in", "ing", "un"];
    let mut out = Vec::new();
    for o in onsets {
        for r in rimes {
            for tone in 1..=4 {
                out.push(format!("{o}{r}{tone}"));
            }
        }
    }
    out
}

impl Language {
    fn new(cfg: &GenConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[1]));
        let mut lang = Language {
            words: Vec::new(),
            next_char: 0x4E00,
            used_readings: HashSet::new(),
            inventory: syllable_inventory(),
            places: Vec::new(),
            homophones: BTreeMap::new(),
            devices: Vec::new(),
            state_heads: Vec::new(),
            op_objects: Vec::new(),
            qualifiers: [Vec::new(), Vec::new()],
            actions: [Vec::new(), Vec::new()],
            variants: BTreeMap::new(),
            fillers: Vec::new(),
            code_chars: BTreeMap::new(),
        };
        for c in ('0'..='9').chain(CODE_LETTERS.chars()) {
            let syl = lang.inventory[rng.gen_range(0..lang.inventory.len())].clone();
            lang.code_chars.insert(c, syl);
        }

        let n_places = (cfg.n_name * 3).div_ceil(4).max(2);
        for _ in 0..n_places {
            let p = lang.fresh_word(2, PosTag::Noun, &mut rng);
            let full = lang.homophone(p, false, &mut rng);
            let partial = lang.homophone(p, true, &mut rng);
            lang.places.push(p);
            lang.homophones.insert(p, vec![full, partial]);
        }
        for i in 0..6 {
            let w = lang.fresh_word(1 + i % 2, PosTag::Noun, &mut rng);
            lang.devices.push(w);
        }
        for _ in 0..cfg.n_state - pair_count(cfg.n_state, cfg.confusable_rate) {
            let w = lang.fresh_word(2, PosTag::Noun, &mut rng);
            lang.state_heads.push(w);
        }
        for _ in 0..cfg.n_operation - pair_count(cfg.n_operation, cfg.confusable_rate) {
            let w = lang.fresh_word(2, PosTag::Noun, &mut rng);
            lang.op_objects.push(w);
        }
        for (k, &tag) in STATE_TAGS.iter().enumerate() {
            for _ in 0..cfg.n_state.div_ceil(4).max(1) {
                let w = lang.fresh_word(2, tag, &mut rng);
                lang.qualifiers[k].push(w);
                let vs = (0..2).map(|_| lang.fresh_word(2, tag, &mut rng)).collect();
                lang.variants.insert(w, vs);
            }
        }
        for (k, &tag) in OP_TAGS.iter().enumerate() {
            for _ in 0..cfg.n_operation.div_ceil(4).max(1) {
                let w = lang.fresh_word(2, tag, &mut rng);
                lang.actions[k].push(w);
                let vs = (0..2).map(|_| lang.fresh_word(2, tag, &mut rng)).collect();
                lang.variants.insert(w, vs);
            }
        }
        for (gloss, tag) in FILLERS {
            let n = if gloss == "and" || gloss == "on" { 1 } else { 2 };
            let w = lang.fresh_word(n, tag, &mut rng);
            lang.fillers.push(w);
        }
        lang
    }

    fn alloc_char(&mut self) -> char {
        let c = char::from_u32(self.next_char).expect("CJK block");
        self.next_char += 1;
        c
    }

    /// A word of fresh characters whose reading differs from every word made
    /// so far.
    fn fresh_word(&mut self, n_chars: usize, pos: PosTag, rng: &mut ChaCha8Rng) -> usize {
        let syllables = loop {
            let s: Vec<String> = (0..n_chars).map(|_| self.inventory[rng.gen_range(0..self.inventory.len())].clone()).collect();
            if self.used_readings.insert(s.clone()) {
                break s;
            }
        };
        let surface = (0..n_chars).map(|_| self.alloc_char()).collect();
        self.words.push(Word { surface, syllables, pos });
        self.words.len() - 1
    }

    /// A homophone of `of`: all characters replaced, or (when `partial`) only
    /// the last one.
    fn homophone(&mut self, of: usize, partial: bool, rng: &mut ChaCha8Rng) -> usize {
        let base = self.words[of].clone();
        let n = base.surface.chars().count();
        let keep = if partial { n - 1 } else { 0 };
        let _ = rng.gen::<u32>();
        let mut surface: String = base.surface.chars().take(keep).collect();
        for _ in keep..n {
            surface.push(self.alloc_char());
        }
        self.words.push(Word { surface, syllables: base.syllables, pos: base.pos });
        self.words.len() - 1
    }

    fn surface(&self, w: usize) -> &str {
        &self.words[w].surface
    }

    fn lexicon(&self) -> Result<Lexicon> {
        let mut lex = Lexicon::new();
        for (c, syl) in &self.code_chars {
            lex.insert(&c.to_string(), LexEntry { parts: vec![], syllables: vec![syl.clone()], pos: PosTag::NumCode })?;
        }
        for w in &self.words {
            lex.insert(&w.surface, LexEntry { parts: vec![], syllables: w.syllables.clone(), pos: w.pos })?;
        }
        Ok(lex)
    }
}

#[derive(Clone, Debug)]
struct NameSpec {
    id: String,
    place: usize,
    code: String,
    device: usize,
}

#[derive(Clone, Debug)]
struct PairSpec {
    id: String,
    head: usize,
    tail: usize,
}

/// The graph's entities in generator terms.
struct Plan {
    names: Vec<NameSpec>,
    states: Vec<PairSpec>,
    ops: Vec<PairSpec>,
    kg: KnowledgeGraph,
}

fn random_code(rng: &mut ChaCha8Rng) -> String {
    let letter = |rng: &mut ChaCha8Rng| CODE_LETTERS.as_bytes()[rng.gen_range(0..CODE_LETTERS.len())] as char;
    match rng.gen_range(0..10) {
        0..=5 => format!("{}", rng.gen_range(1000..10000)),
        6..=7 => format!("{}", rng.gen_range(10000..100000)),
        _ => format!("{}{}{}", letter(rng), rng.gen_range(10..100), letter(rng)),
    }
}

fn plan(lang: &Language, cfg: &GenConfig) -> Result<Plan> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[2]));
    let mut entities = Vec::new();
    let mut triples = Vec::new();
    for (i, &d) in lang.devices.iter().enumerate() {
        entities.push(Entity { id: format!("cat{i:02}"), kind: EntityKind::Category, surface: lang.surface(d).to_string(), category_id: None });
    }
    let category = |i: usize| format!("cat{:02}", i % lang.devices.len());

    // Confusable pairs share code and device, so only the place word tells
    // them apart. Every other name has a code of its own.
    let n_pairs = pair_count(cfg.n_name, cfg.confusable_rate);
    let n_codes = cfg.n_name - n_pairs;
    let mut codes: Vec<(String, usize)> = Vec::new();
    let mut seen_codes = HashSet::new();
    while codes.len() < n_codes {
        let c = random_code(&mut rng);
        if seen_codes.insert(c.clone()) {
            codes.push((c, rng.gen_range(0..lang.devices.len())));
        }
    }
    let mut names = Vec::new();
    let mut used = HashSet::new();
    let mut attempts = 0;
    while names.len() < cfg.n_name {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::Config("cannot place that many distinct names".into()));
        }
        let i = names.len();
        let (code, dev_idx) = codes[if i < 2 * n_pairs { i / 2 } else { i - n_pairs }].clone();
        let place = lang.places[rng.gen_range(0..lang.places.len())];
        if !used.insert((place, code.clone())) {
            continue;
        }
        let id = format!("name{i:03}");
        let device = lang.devices[dev_idx];
        let surface = format!("{}{}{}", lang.surface(place), code, lang.surface(device));
        entities.push(Entity { id: id.clone(), kind: EntityKind::Name, surface, category_id: Some(format!("cat{dev_idx:02}")) });
        triples.push(Triple { head: format!("cat{dev_idx:02}"), predicate: RelationType::Name, tail: id.clone() });
        names.push(NameSpec { id, place, code, device });
    }

    // The first pairs share a head and differ in the tail's tag; the rest
    // have a head of their own.
    let mut pairs = |n: usize, heads: &[usize], tails: &[Vec<usize>; 2], prefix: &str, kind: EntityKind, rng: &mut ChaCha8Rng| {
        let n_pairs = pair_count(n, cfg.confusable_rate);
        let mut out = Vec::new();
        for i in 0..n {
            let head = heads[if i < 2 * n_pairs { i / 2 } else { i - n_pairs }];
            let pool = &tails[i % 2];
            let tail = pool[rng.gen_range(0..pool.len())];
            let id = format!("{prefix}{i:02}");
            let cat = category(i);
            let surface = format!("{}{}", lang.surface(head), lang.surface(tail));
            entities.push(Entity { id: id.clone(), kind, surface, category_id: Some(cat.clone()) });
            triples.push(Triple { head: cat, predicate: kind.relation().expect("link target"), tail: id.clone() });
            out.push(PairSpec { id, head, tail });
        }
        out
    };
    let states = pairs(cfg.n_state, &lang.state_heads, &lang.qualifiers, "state", EntityKind::State, &mut rng);
    let ops = pairs(cfg.n_operation, &lang.op_objects, &lang.actions, "op", EntityKind::Operation, &mut rng);
    let kg = KnowledgeGraph::new(entities, triples)?;
    Ok(Plan { names, states, ops, kg })
}

/// Builds the knowledge graph for `cfg`.
pub fn gen_kg(cfg: &GenConfig) -> Result<KnowledgeGraph> {
    cfg.validate()?;
    Ok(plan(&Language::new(cfg), cfg)?.kg)
}

/// Generated graph, lexicon and corpus.
pub struct Generated {
    pub kg: KnowledgeGraph,
    pub lexicon: Lexicon,
    pub corpus: Vec<LabeledText>,
}

pub fn generate(cfg: &GenConfig) -> Result<Generated> {
    let kg = gen_kg(cfg)?;
    let (corpus, lexicon) = gen_corpus(&kg, cfg)?;
    Ok(Generated { kg, lexicon, corpus })
}

/// One token of a text under construction.
#[derive(Clone, Debug)]
struct Piece {
    surface: String,
    /// Separator text printed before this piece.
    lead: &'static str,
}

struct Draft {
    pieces: Vec<Piece>,
    gold: BTreeSet<String>,
}

impl Draft {
    fn text(&self) -> String {
        self.pieces.iter().map(|p| format!("{}{}", p.lead, p.surface)).collect()
    }
}

/// Noise sites of a draft, as piece positions.
#[derive(Default)]
struct Sites {
    /// Place words, with the place index.
    places: Vec<(usize, usize)>,
    /// Qualifiers and actions, with the word index.
    swaps: Vec<(usize, usize)>,
    /// Device nouns that may be dropped before "and".
    fusions: Vec<usize>,
}

/// Instantiates a template. Noise is applied later, from its own stream, so
/// the drafts and their gold sets do not depend on the noise rates.
fn instantiate(lang: &Language, plan: &Plan, template: &Template, rng: &mut ChaCha8Rng) -> (Draft, Sites) {
    let mut pieces = Vec::new();
    let mut gold = BTreeSet::new();
    let mut sites = Sites::default();
    let mut lead = "";
    let mut used_names: Vec<usize> = Vec::new();
    let push = |pieces: &mut Vec<Piece>, surface: &str, lead: &mut &'static str| {
        pieces.push(Piece { surface: surface.to_string(), lead });
        *lead = "";
    };
    for (k, slot) in template.slots.iter().enumerate() {
        match *slot {
            Slot::Punct(p) => lead = p,
            Slot::Fill(i) => push(&mut pieces, lang.surface(lang.fillers[i]), &mut lead),
            Slot::Name => {
                let after_and = k >= 2 && template.slots[k - 1] == Slot::Fill(AND) && template.slots[k - 2] == Slot::Name;
                let idx = loop {
                    let candidate = if after_and && rng.gen_bool(0.5) {
                        let prev = &plan.names[*used_names.last().expect("previous name")];
                        let same: Vec<usize> =
                            (0..plan.names.len()).filter(|&j| plan.names[j].device == prev.device).collect();
                        same[rng.gen_range(0..same.len())]
                    } else {
                        rng.gen_range(0..plan.names.len())
                    };
                    if !used_names.contains(&candidate) {
                        break candidate;
                    }
                };
                let spec = &plan.names[idx];
                if after_and {
                    let prev = &plan.names[*used_names.last().expect("previous name")];
                    if prev.device == spec.device {
                        // "X c1 D and Y c2 D" may lose its first D.
                        sites.fusions.push(pieces.len() - 2);
                    }
                }
                used_names.push(idx);
                gold.insert(spec.id.clone());
                sites.places.push((pieces.len(), spec.place));
                push(&mut pieces, lang.surface(spec.place), &mut lead);
                push(&mut pieces, &spec.code, &mut lead);
                push(&mut pieces, lang.surface(spec.device), &mut lead);
            }
            Slot::State | Slot::Op => {
                let list = if *slot == Slot::State { &plan.states } else { &plan.ops };
                let spec = &list[rng.gen_range(0..list.len())];
                gold.insert(spec.id.clone());
                push(&mut pieces, lang.surface(spec.head), &mut lead);
                sites.swaps.push((pieces.len(), spec.tail));
                push(&mut pieces, lang.surface(spec.tail), &mut lead);
            }
        }
    }
    (Draft { pieces, gold }, sites)
}

/// Entity matching by surface containment and by word containment, used to
/// reject drafts that are ambiguous before any noise.
struct Checker {
    surfaces: Vec<(String, String)>,
    words: Vec<(String, BTreeSet<String>)>,
}

impl Checker {
    fn new(kg: &KnowledgeGraph, lex: &Lexicon) -> Self {
        Self {
            surfaces: kg.candidates().map(|e| (e.id.clone(), e.surface.clone())).collect(),
            words: kg.candidates().map(|e| (e.id.clone(), segment(&e.surface, lex).into_iter().map(|t| t.surface).collect())).collect(),
        }
    }

    fn direct(&self, text: &str) -> BTreeSet<String> {
        self.surfaces.iter().filter(|(_, s)| text.contains(s.as_str())).map(|(id, _)| id.clone()).collect()
    }

    fn wordwise(&self, words: &BTreeSet<String>) -> BTreeSet<String> {
        self.words.iter().filter(|(_, w)| w.is_subset(words)).map(|(id, _)| id.clone()).collect()
    }
}

fn segments_as(text: &str, lex: &Lexicon, pieces: &[Piece]) -> bool {
    let toks = segment(text, lex);
    toks.len() == pieces.len() && toks.iter().zip(pieces).all(|(t, p)| t.surface == p.surface)
}

/// Generates the labelled corpus and the lexicon for a graph made by
/// [`gen_kg`] with the same configuration.
pub fn gen_corpus(kg: &KnowledgeGraph, cfg: &GenConfig) -> Result<(Vec<LabeledText>, Lexicon)> {
    cfg.validate()?;
    let lang = Language::new(cfg);
    let plan = plan(&lang, cfg)?;
    if plan.kg != *kg {
        return Err(Error::Config("knowledge graph was not generated from this configuration".into()));
    }
    let lexicon = extend_with_graph(lang.lexicon()?, kg)?;
    let checker = Checker::new(kg, &lexicon);
    let total_weight: f64 = cfg.template_weights.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[3]));
    let mut corpus = Vec::with_capacity(cfg.n_texts);

    for i in 0..cfg.n_texts {
        let mut attempts = 0;
        let (draft, sites) = loop {
            attempts += 1;
            if attempts > 1000 {
                return Err(Error::Config("could not generate an unambiguous text; enlarge the graph".into()));
            }
            let mut pick = rng.gen::<f64>() * total_weight;
            let mut t = TEMPLATES.len() - 1;
            for (k, w) in cfg.template_weights.iter().enumerate() {
                if pick < *w {
                    t = k;
                    break;
                }
                pick -= w;
            }
            let (draft, sites) = instantiate(&lang, &plan, &TEMPLATES[t], &mut rng);
            let text = draft.text();
            if !segments_as(&text, &lexicon, &draft.pieces) {
                continue;
            }
            let words: BTreeSet<String> = draft.pieces.iter().map(|p| p.surface.clone()).collect();
            if checker.wordwise(&words) != draft.gold || checker.direct(&text) != draft.gold {
                continue;
            }
            break (draft, sites);
        };

        let mut noise = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[4, i as u64]));
        let mut pieces = draft.pieces;
        for &(pos, place) in &sites.places {
            if noise.gen_bool(cfg.phonetic_sub) {
                let h = lang.homophones[&place].choose(&mut noise).expect("homophones exist");
                pieces[pos].surface = lang.surface(*h).to_string();
            }
        }
        for &(pos, word) in &sites.swaps {
            if noise.gen_bool(cfg.synonym_swap) {
                let v = lang.variants[&word].choose(&mut noise).expect("variants exist");
                pieces[pos].surface = lang.surface(*v).to_string();
            }
        }
        // Later sites first, so earlier positions stay valid.
        for &pos in sites.fusions.iter().rev() {
            if noise.gen_bool(cfg.discontinuity) {
                let mut fused = pieces.clone();
                fused.remove(pos);
                let fused = Draft { pieces: fused, gold: draft.gold.clone() };
                // Keep the drop only if it cannot create a spurious match.
                if segments_as(&fused.text(), &lexicon, &fused.pieces) && checker.direct(&fused.text()).is_subset(&draft.gold) {
                    pieces = fused.pieces;
                }
            }
        }
        let noisy_draft = Draft { pieces, gold: draft.gold };
        let text = noisy_draft.text();
        if !segments_as(&text, &lexicon, &noisy_draft.pieces) {
            return Err(Error::Config(format!("noisy text {i} does not segment as generated")));
        }
        corpus.push(LabeledText { text_id: format!("t{i:05}"), text, gold: noisy_draft.gold });
    }
    Ok((corpus, lexicon))
}
