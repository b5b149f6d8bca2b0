//! Linking a dispatch text to knowledge-graph entities, plus the two
//! string-matching baselines.

use std::collections::BTreeSet;
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::embed::FeatureTables;
use crate::error::{Error, Result};
use crate::features::{link_columns, LinkValues, SimTable, TokenVectors, LINK_CAP};
use crate::kg::{KnowledgeGraph, RelationType};
use crate::matchnet::{ProjWeights, MatchModel, ModelOptions, ProjectedTokens};
use crate::text::{segment, Lexicon, Token};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LinkerVariant {
    Full,
    NoPron,
    NoPos,
    NoNewDims,
    NoAttention,
    LsfScnnBaseline,
    Direct,
    WordWise,
}

impl LinkerVariant {
    pub const ALL: [LinkerVariant; 8] = [
        LinkerVariant::Full,
        LinkerVariant::NoPron,
        LinkerVariant::NoPos,
        LinkerVariant::NoNewDims,
        LinkerVariant::NoAttention,
        LinkerVariant::LsfScnnBaseline,
        LinkerVariant::Direct,
        LinkerVariant::WordWise,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LinkerVariant::Full => "full",
            LinkerVariant::NoPron => "no-pron",
            LinkerVariant::NoPos => "no-pos",
            LinkerVariant::NoNewDims => "no-new-dims",
            LinkerVariant::NoAttention => "no-attention",
            LinkerVariant::LsfScnnBaseline => "lsf-scnn",
            LinkerVariant::Direct => "direct",
            LinkerVariant::WordWise => "word-wise",
        }
    }

    pub fn is_neural(self) -> bool {
        !matches!(self, LinkerVariant::Direct | LinkerVariant::WordWise)
    }

    /// Model switches for a neural variant.
    pub fn options(self) -> Option<ModelOptions> {
        let full = ModelOptions::default();
        Some(match self {
            LinkerVariant::Full => full,
            LinkerVariant::NoPron => ModelOptions { layers: [true, false, true], ..full },
            LinkerVariant::NoPos => ModelOptions { layers: [true, true, false], ..full },
            LinkerVariant::NoNewDims => ModelOptions { link_column: false, ..full },
            LinkerVariant::NoAttention => ModelOptions { train_attention: false, ..full },
            LinkerVariant::LsfScnnBaseline => ModelOptions {
                layers: [true, false, false],
                link_column: false,
                train_attention: false,
                relu: false,
            },
            LinkerVariant::Direct | LinkerVariant::WordWise => return None,
        })
    }
}

impl fmt::Display for LinkerVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for LinkerVariant {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for LinkerVariant {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl FromStr for LinkerVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        LinkerVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == norm)
            .ok_or_else(|| Error::Parse(format!("unknown variant `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntityMatch {
    pub entity_id: String,
    pub relation: RelationType,
    pub score: f64,
}

/// Matched entities of one text, grouped by relation type and ordered by id
/// within each group.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct LinkResult {
    pub text_id: String,
    pub matches: Vec<EntityMatch>,
}

impl LinkResult {
    pub fn entity_ids(&self) -> BTreeSet<String> {
        self.matches.iter().map(|m| m.entity_id.clone()).collect()
    }

    pub fn of_relation(&self, rt: RelationType) -> impl Iterator<Item = &EntityMatch> {
        self.matches.iter().filter(move |m| m.relation == rt)
    }

    /// `text_id<TAB>id:score<TAB>...`
    pub fn to_line(&self) -> String {
        let mut s = self.text_id.clone();
        for m in &self.matches {
            let _ = write!(s, "\t{}:{:.6}", m.entity_id, m.score);
        }
        s
    }
}

/// Renders results in the link output format, one line per text.
pub fn format_results(results: &[LinkResult]) -> String {
    results.iter().map(|r| r.to_line() + "\n").collect()
}

/// LSF and direct-link columns of both sides of a pair: `(entity, text)`.
pub fn pair_links(
    entity: &[Token],
    entity_vecs: &[TokenVectors],
    text: &[Token],
    text_vecs: &[TokenVectors],
    sim: &SimTable,
    t: u32,
) -> (Vec<LinkValues>, Vec<LinkValues>) {
    (
        link_columns(entity, entity_vecs, text, text_vecs, sim, t),
        link_columns(text, text_vecs, entity, entity_vecs, sim, t),
    )
}

struct PreparedEntity {
    id: String,
    relation: RelationType,
    tokens: Vec<Token>,
    vecs: Vec<TokenVectors>,
    proj: ProjectedTokens,
}

enum Method {
    Neural { tables: FeatureTables, model: MatchModel, weights: ProjWeights, entities: Vec<PreparedEntity> },
    Direct { surfaces: Vec<(String, RelationType, String)> },
    WordWise { words: Vec<(String, RelationType, BTreeSet<String>)> },
}

/// A linker bound to one graph, lexicon and variant. Static entity features
/// are computed once at construction.
pub struct Linker {
    lexicon: Lexicon,
    variant: LinkerVariant,
    threshold: f64,
    sim: SimTable,
    link_cap: u32,
    method: Method,
}

impl Linker {
    /// Neural linker. The model's switches are set to the variant's.
    pub fn neural(
        kg: &KnowledgeGraph,
        lexicon: Lexicon,
        tables: FeatureTables,
        model: &MatchModel,
        variant: LinkerVariant,
    ) -> Result<Self> {
        let options = variant
            .options()
            .ok_or_else(|| Error::Config(format!("variant `{variant}` does not use a model")))?;
        if tables.dim() != model.dim() {
            return Err(Error::Config(format!(
                "feature tables have dim {} but the model expects {}",
                tables.dim(),
                model.dim()
            )));
        }
        let model = model.with_options(options);
        let mut entities = Vec::new();
        for rt in RelationType::ALL {
            for e in kg.entities_by_relation(rt) {
                let tokens = segment(&e.surface, &lexicon);
                let vecs: Vec<TokenVectors> = tokens.iter().map(|t| TokenVectors::of(t, &tables)).collect();
                let proj = model.project_tokens(&vecs);
                entities.push(PreparedEntity { id: e.id.clone(), relation: rt, tokens, vecs, proj });
            }
        }
        let threshold = model.config.decision_threshold;
        Ok(Self {
            lexicon,
            variant,
            threshold,
            sim: SimTable::default(),
            link_cap: LINK_CAP,
            method: Method::Neural { tables, weights: model.proj_weights(), model, entities },
        })
    }

    /// String-matching linker for [`LinkerVariant::Direct`] or
    /// [`LinkerVariant::WordWise`].
    pub fn baseline(kg: &KnowledgeGraph, lexicon: Lexicon, variant: LinkerVariant) -> Result<Self> {
        let method = match variant {
            LinkerVariant::Direct => Method::Direct {
                surfaces: RelationType::ALL
                    .iter()
                    .flat_map(|&rt| kg.entities_by_relation(rt).into_iter().map(move |e| (e.id.clone(), rt, e.surface.clone())))
                    .collect(),
            },
            LinkerVariant::WordWise => Method::WordWise {
                words: RelationType::ALL
                    .iter()
                    .flat_map(|&rt| {
                        let lexicon = &lexicon;
                        kg.entities_by_relation(rt).into_iter().map(move |e| (e.id.clone(), rt, word_set(&e.surface, lexicon)))
                    })
                    .collect(),
            },
            other => return Err(Error::Config(format!("variant `{other}` needs a trained model"))),
        };
        Ok(Self { lexicon, variant, threshold: 0.5, sim: SimTable::default(), link_cap: LINK_CAP, method })
    }

    pub fn variant(&self) -> LinkerVariant {
        self.variant
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn set_threshold(&mut self, threshold: f64) -> Result<()> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::Config("decision threshold must lie in (0, 1)".into()));
        }
        self.threshold = threshold;
        Ok(())
    }

    /// Links one text. Every candidate of every relation type is scored; all
    /// with probability at least the threshold are returned.
    pub fn link(&self, text_id: &str, text: &str) -> Result<LinkResult> {
        if text.trim().is_empty() {
            return Err(Error::Empty("text"));
        }
        let matches = match &self.method {
            Method::Direct { surfaces } => surfaces
                .iter()
                .filter(|(_, _, s)| text.contains(s.as_str()))
                .map(|(id, rt, _)| EntityMatch { entity_id: id.clone(), relation: *rt, score: 1.0 })
                .collect(),
            Method::WordWise { words } => {
                let text_words = word_set(text, &self.lexicon);
                words
                    .iter()
                    .filter(|(_, _, w)| w.is_subset(&text_words))
                    .map(|(id, rt, _)| EntityMatch { entity_id: id.clone(), relation: *rt, score: 1.0 })
                    .collect()
            }
            Method::Neural { tables, model, weights, entities } => {
                let tokens = segment(text, &self.lexicon);
                let vecs: Vec<TokenVectors> = tokens.iter().map(|t| TokenVectors::of(t, tables)).collect();
                let proj = model.project_tokens_with(weights, &vecs);
                let mut out = Vec::new();
                for e in entities {
                    let (e_links, t_links) = pair_links(&e.tokens, &e.vecs, &tokens, &vecs, &self.sim, self.link_cap);
                    let score = model.score_projected_with(weights, &e.proj, &e_links, &proj, &t_links);
                    if score >= self.threshold {
                        out.push(EntityMatch { entity_id: e.id.clone(), relation: e.relation, score });
                    }
                }
                out
            }
        };
        Ok(LinkResult { text_id: text_id.to_string(), matches })
    }

    /// Links many `(text_id, text)` records in parallel; output order follows
    /// input order.
    pub fn link_all(&self, texts: &[(String, String)]) -> Result<Vec<LinkResult>> {
        texts.par_iter().map(|(id, t)| self.link(id, t)).collect()
    }
}

fn word_set(s: &str, lex: &Lexicon) -> BTreeSet<String> {
    segment(s, lex).into_iter().map(|t| t.surface).collect()
}

/// Single-text linking with a freshly built linker.
pub fn link_text(
    text: &str,
    kg: &KnowledgeGraph,
    model: &MatchModel,
    tables: &FeatureTables,
    lexicon: &Lexicon,
    variant: LinkerVariant,
) -> Result<LinkResult> {
    let linker = if variant.is_neural() {
        Linker::neural(kg, lexicon.clone(), tables.clone(), model, variant)?
    } else {
        Linker::baseline(kg, lexicon.clone(), variant)?
    };
    linker.link("", text)
}

/// Entities whose full surface occurs verbatim in `text`.
pub fn baseline_direct(text: &str, kg: &KnowledgeGraph) -> LinkResult {
    let linker = Linker::baseline(kg, Lexicon::new(), LinkerVariant::Direct).expect("baseline variant");
    linker.link("", text).unwrap_or_default()
}

/// Entities all of whose segmented words occur among the text's words.
pub fn baseline_wordwise(text: &str, kg: &KnowledgeGraph, lexicon: &Lexicon) -> LinkResult {
    let linker = Linker::baseline(kg, lexicon.clone(), LinkerVariant::WordWise).expect("baseline variant");
    linker.link("", text).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{Entity, EntityKind, Triple};
    use crate::text::{LexEntry, PosTag};

    fn lexicon() -> Lexicon {
        let mut lex = Lexicon::new();
        for (w, pos) in [
            ("phase", PosTag::Noun),
            ("sequence", PosTag::Noun),
            ("correct", PosTag::Adjective),
            ("and", PosTag::Other),
            ("pull", PosTag::Verb),
            ("open", PosTag::Verb),
            ("Sanyuan", PosTag::Noun),
            ("D45P", PosTag::NumCode),
            ("switch", PosTag::Noun),
        ] {
            let syl = vec!["x"; w.chars().count()].join(" ");
            lex.insert(w, LexEntry { parts: vec![], syllables: syl.split(' ').map(String::from).collect(), pos }).unwrap();
        }
        lex
    }

    fn kg(items: &[(&str, EntityKind, &str)]) -> KnowledgeGraph {
        let mut ents = vec![Entity { id: "cat".into(), kind: EntityKind::Category, surface: "device".into(), category_id: None }];
        let mut triples = vec![];
        for (id, kind, surface) in items {
            ents.push(Entity { id: id.to_string(), kind: *kind, surface: surface.to_string(), category_id: Some("cat".into()) });
            triples.push(Triple { head: "cat".into(), predicate: kind.relation().unwrap(), tail: id.to_string() });
        }
        KnowledgeGraph::new(ents, triples).unwrap()
    }

    #[test]
    fn variant_names_round_trip() {
        for v in LinkerVariant::ALL {
            assert_eq!(v.as_str().parse::<LinkerVariant>().unwrap(), v);
        }
        assert_eq!("No_Pron".parse::<LinkerVariant>().unwrap(), LinkerVariant::NoPron);
        assert!("bogus".parse::<LinkerVariant>().is_err());
    }

    #[test]
    fn direct_matches_contained_surface() {
        let g = kg(&[("n1", EntityKind::Name, "Sanyuan D45P switch")]);
        assert_eq!(baseline_direct("pull open Sanyuan D45P switch", &g).entity_ids().len(), 1);
        assert!(baseline_direct("pull open Sanyuan and D45P switch", &g).matches.is_empty());
    }

    #[test]
    fn wordwise_handles_discontinuity() {
        let g = kg(&[("s1", EntityKind::State, "phase correct")]);
        let text = "phase and phase sequence correct";
        assert!(baseline_direct(text, &g).matches.is_empty());
        let r = baseline_wordwise(text, &g, &lexicon());
        assert_eq!(r.matches.len(), 1);
        assert_eq!(r.matches[0].score, 1.0);
        assert!(baseline_wordwise("phase sequence", &g, &lexicon()).matches.is_empty());
    }

    #[test]
    fn empty_graph_gives_no_matches() {
        let g = KnowledgeGraph::new(vec![], vec![]).unwrap();
        assert!(baseline_direct("anything", &g).matches.is_empty());
    }

    #[test]
    fn empty_text_is_an_error() {
        let g = kg(&[("n1", EntityKind::Name, "switch")]);
        let l = Linker::baseline(&g, lexicon(), LinkerVariant::Direct).unwrap();
        assert!(matches!(l.link("t", "  "), Err(Error::Empty(_))));
    }

    #[test]
    fn result_line_format() {
        let r = LinkResult {
            text_id: "t1".into(),
            matches: vec![
                EntityMatch { entity_id: "a".into(), relation: RelationType::Name, score: 0.9 },
                EntityMatch { entity_id: "b".into(), relation: RelationType::State, score: 1.0 },
            ],
        };
        assert_eq!(r.to_line(), "t1\ta:0.900000\tb:1.000000");
        assert_eq!(LinkResult { text_id: "t2".into(), matches: vec![] }.to_line(), "t2");
    }

    #[test]
    fn variant_options() {
        assert!(LinkerVariant::Direct.options().is_none());
        let o = LinkerVariant::LsfScnnBaseline.options().unwrap();
        assert_eq!(o.layers, [true, false, false]);
        assert!(!o.relu && !o.link_column && !o.train_attention);
        assert_eq!(LinkerVariant::NoPos.options().unwrap().layers, [true, true, false]);
    }
}
