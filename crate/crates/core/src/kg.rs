//! Distribution-network knowledge graph.
//!
//! Category entities (station and equipment types) own the concrete name,
//! state and operation entities through typed triples. Only the latter three
//! kinds are link targets; they are indexed by relation type so the linker can
//! walk each candidate set in turn.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationType {
    Name,
    State,
    Operation,
}

impl RelationType {
    pub const ALL: [RelationType; 3] = [RelationType::Name, RelationType::State, RelationType::Operation];

    pub fn as_str(self) -> &'static str {
        match self {
            RelationType::Name => "name",
            RelationType::State => "state",
            RelationType::Operation => "operation",
        }
    }

    /// Entity kind that sits at the tail of a triple with this predicate.
    pub fn entity_kind(self) -> EntityKind {
        match self {
            RelationType::Name => EntityKind::Name,
            RelationType::State => EntityKind::State,
            RelationType::Operation => EntityKind::Operation,
        }
    }
}

impl fmt::Display for RelationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RelationType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "name" => Ok(RelationType::Name),
            "state" => Ok(RelationType::State),
            "operation" => Ok(RelationType::Operation),
            other => Err(Error::Parse(format!("unknown relation type `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Category,
    Name,
    State,
    Operation,
}

impl EntityKind {
    /// Relation type under which entities of this kind are indexed.
    /// Categories are never link targets.
    pub fn relation(self) -> Option<RelationType> {
        match self {
            EntityKind::Category => None,
            EntityKind::Name => Some(RelationType::Name),
            EntityKind::State => Some(RelationType::State),
            EntityKind::Operation => Some(RelationType::Operation),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub kind: EntityKind,
    pub surface: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category_id: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    pub head: String,
    pub predicate: RelationType,
    pub tail: String,
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    entities: Vec<Entity>,
    triples: Vec<Triple>,
}

/// Immutable, validated knowledge graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KnowledgeGraph {
    entities: BTreeMap<String, Entity>,
    triples: Vec<Triple>,
    index: BTreeMap<RelationType, Vec<String>>,
}

impl KnowledgeGraph {
    pub fn new(entities: Vec<Entity>, triples: Vec<Triple>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for e in entities {
            if e.id.is_empty() {
                return Err(Error::InvalidGraph("entity with empty id".into()));
            }
            if e.surface.trim().is_empty() {
                return Err(Error::InvalidGraph(format!("entity `{}` has an empty surface", e.id)));
            }
            if let Some(dup) = map.insert(e.id.clone(), e) {
                return Err(Error::InvalidGraph(format!("duplicate entity id `{}`", dup.id)));
            }
        }

        for e in map.values() {
            match (e.kind, &e.category_id) {
                (EntityKind::Category, Some(_)) => {
                    return Err(Error::InvalidGraph(format!("category `{}` cannot have a category_id", e.id)));
                }
                (EntityKind::Category, None) => {}
                (_, None) => {
                    return Err(Error::InvalidGraph(format!("entity `{}` has no category_id", e.id)));
                }
                (_, Some(cat)) => match map.get(cat) {
                    Some(c) if c.kind == EntityKind::Category => {}
                    Some(_) => {
                        return Err(Error::InvalidGraph(format!(
                            "entity `{}` references `{cat}`, which is not a category",
                            e.id
                        )))
                    }
                    None => {
                        return Err(Error::InvalidGraph(format!(
                            "entity `{}` references missing category `{cat}`",
                            e.id
                        )))
                    }
                },
            }
        }

        for t in &triples {
            let head = map
                .get(&t.head)
                .ok_or_else(|| Error::InvalidGraph(format!("dangling triple head `{}`", t.head)))?;
            let tail = map
                .get(&t.tail)
                .ok_or_else(|| Error::InvalidGraph(format!("dangling triple tail `{}`", t.tail)))?;
            if head.kind != EntityKind::Category {
                return Err(Error::InvalidGraph(format!("triple head `{}` is not a category", t.head)));
            }
            if tail.kind != t.predicate.entity_kind() {
                return Err(Error::InvalidGraph(format!(
                    "triple `{} -{}-> {}` points at a {:?} entity",
                    t.head, t.predicate, t.tail, tail.kind
                )));
            }
        }

        let mut index: BTreeMap<RelationType, Vec<String>> =
            RelationType::ALL.iter().map(|&rt| (rt, Vec::new())).collect();
        for e in map.values() {
            if let Some(rt) = e.kind.relation() {
                index.get_mut(&rt).expect("all relation types present").push(e.id.clone());
            }
        }

        Ok(Self { entities: map, triples, index })
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: GraphFile = serde_json::from_str(s).map_err(|e| Error::Parse(format!("knowledge graph: {e}")))?;
        Self::new(file.entities, file.triples)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json_str(&s)
    }

    pub fn to_json_string(&self) -> String {
        let file = GraphFile {
            entities: self.entities.values().cloned().collect(),
            triples: self.triples.clone(),
        };
        serde_json::to_string_pretty(&file).expect("graph serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string() + "\n").map_err(io_err(path))
    }

    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.entities.get(id)
    }

    /// All entities, in id order.
    pub fn entities(&self) -> impl Iterator<Item = &Entity> {
        self.entities.values()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    /// Entities indexed under `rt`, in id order.
    pub fn entities_by_relation(&self, rt: RelationType) -> Vec<&Entity> {
        self.index[&rt].iter().map(|id| &self.entities[id]).collect()
    }

    /// Every link target (non-category entity), in id order.
    pub fn candidates(&self) -> impl Iterator<Item = &Entity> {
        self.entities.values().filter(|e| e.kind != EntityKind::Category)
    }

    pub fn candidate_ids(&self) -> BTreeSet<&str> {
        self.candidates().map(|e| e.id.as_str()).collect()
    }

    pub fn relation_of(&self, id: &str) -> Option<RelationType> {
        self.entities.get(id).and_then(|e| e.kind.relation())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> &'static str {
        r#"{
          "entities": [
            {"id": "c1", "kind": "category", "surface": "switch"},
            {"id": "n1", "kind": "name", "surface": "Qianjiang 16730 switch", "category_id": "c1"}
          ],
          "triples": [{"head": "c1", "predicate": "name", "tail": "n1"}]
        }"#
    }

    #[test]
    fn loads_minimal_graph() {
        let kg = KnowledgeGraph::from_json_str(minimal()).unwrap();
        assert_eq!(kg.len(), 2);
        assert_eq!(kg.triples().len(), 1);
        let names: Vec<_> = kg.entities_by_relation(RelationType::Name).iter().map(|e| e.surface.as_str()).collect();
        assert_eq!(names, ["Qianjiang 16730 switch"]);
        assert!(kg.entities_by_relation(RelationType::Operation).is_empty());
    }

    #[test]
    fn rejects_dangling_triple() {
        let s = minimal().replace(r#""tail": "n1""#, r#""tail": "n9""#);
        let err = KnowledgeGraph::from_json_str(&s).unwrap_err();
        assert!(matches!(err, Error::InvalidGraph(ref m) if m.contains("n9")), "{err}");
    }

    #[test]
    fn rejects_duplicate_id() {
        let s = minimal().replace(r#""id": "n1""#, r#""id": "c1""#);
        assert!(matches!(KnowledgeGraph::from_json_str(&s), Err(Error::InvalidGraph(_))));
    }

    #[test]
    fn rejects_missing_category() {
        let s = minimal().replace(r#""category_id": "c1""#, r#""category_id": "c7""#);
        assert!(matches!(KnowledgeGraph::from_json_str(&s), Err(Error::InvalidGraph(_))));
    }

    #[test]
    fn rejects_predicate_kind_mismatch() {
        let s = minimal().replace(r#""predicate": "name""#, r#""predicate": "state""#);
        assert!(matches!(KnowledgeGraph::from_json_str(&s), Err(Error::InvalidGraph(_))));
    }

    #[test]
    fn malformed_json_is_a_parse_error() {
        assert!(matches!(KnowledgeGraph::from_json_str("{\"entities\": ["), Err(Error::Parse(_))));
    }

    #[test]
    fn save_then_load_is_identity() {
        let kg = KnowledgeGraph::from_json_str(minimal()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("kg.json");
        kg.save(&p).unwrap();
        assert_eq!(KnowledgeGraph::load(&p).unwrap(), kg);
    }
}
