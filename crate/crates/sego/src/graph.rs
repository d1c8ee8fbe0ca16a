//! Sentence-entity graphs and their ablation transforms.
//!
//! Entities are the lowercased noun surfaces that occur at least twice in
//! a paragraph. An SE edge links an entity to each sentence containing it,
//! labeled with the entity's highest-rank syntactic role there (S over O
//! over X). An SS edge links two sentences that share an entity. The
//! F variant replaces structure with the complete sentence graph; the S
//! variant keeps SS edges but drops entity nodes.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Paragraph, Role};

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("ablation `{transform}` is defined for entity-bearing graphs, not variant F")]
    AblationOnFullGraph { transform: &'static str },
    #[error("remove-entities fraction {0} outside [0, 1]")]
    BadFraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphVariant {
    /// Sentence-entity graph: entity nodes, labeled SE edges, SS edges.
    Se,
    /// Sentence-only graph with the same SS edges, no entities.
    S,
    /// Fully-connected sentence graph, no entities.
    F,
}

impl std::str::FromStr for GraphVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_lowercase().as_str() {
            "se" => Ok(GraphVariant::Se),
            "s" => Ok(GraphVariant::S),
            "f" => Ok(GraphVariant::F),
            other => Err(format!("unknown graph variant `{other}` (se|s|f)")),
        }
    }
}

impl std::fmt::Display for GraphVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GraphVariant::Se => write!(f, "se"),
            GraphVariant::S => write!(f, "s"),
            GraphVariant::F => write!(f, "f"),
        }
    }
}

/// SE edge label: a syntactic role, or the neutral label that the
/// remove-edge-labels ablation substitutes for every role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeLabel {
    S,
    O,
    X,
    Neutral,
}

impl EdgeLabel {
    pub fn from_role(role: Role) -> Self {
        match role {
            Role::S => EdgeLabel::S,
            Role::O => EdgeLabel::O,
            Role::X => EdgeLabel::X,
        }
    }

    /// Row index into the edge-label embedding table.
    pub fn embedding_row(self) -> usize {
        match self {
            EdgeLabel::S => 0,
            EdgeLabel::O => 1,
            EdgeLabel::X => 2,
            EdgeLabel::Neutral => 3,
        }
    }

    pub const COUNT: usize = 4;
}

/// Picks the highest-rank role under S > O > X.
pub fn resolve_edge_label(roles: &[Role]) -> Role {
    debug_assert!(!roles.is_empty());
    *roles
        .iter()
        .max_by_key(|r| r.rank())
        .expect("non-empty role set")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityNode {
    pub id: usize,
    pub surface: String,
    /// Token occurrences in the whole paragraph; at least 2.
    pub occurrences: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeEdge {
    pub sentence: usize,
    pub entity: usize,
    pub label: EdgeLabel,
}

/// Unordered sentence pair, stored with `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SsEdge {
    pub a: usize,
    pub b: usize,
}

impl SsEdge {
    pub fn new(x: usize, y: usize) -> Self {
        debug_assert_ne!(x, y);
        SsEdge {
            a: x.min(y),
            b: x.max(y),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceEntityGraph {
    pub sentence_count: usize,
    pub variant: GraphVariant,
    pub entities: Vec<EntityNode>,
    pub se_edges: Vec<SeEdge>,
    pub ss_edges: Vec<SsEdge>,
}

impl SentenceEntityGraph {
    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    /// Sentence neighbors of sentence `i`, ascending.
    pub fn sentence_neighbors(&self, i: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .ss_edges
            .iter()
            .filter_map(|e| {
                if e.a == i {
                    Some(e.b)
                } else if e.b == i {
                    Some(e.a)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Entity neighbors of sentence `i` with their edge labels.
    pub fn entity_neighbors(&self, i: usize) -> Vec<(usize, EdgeLabel)> {
        let mut out: Vec<(usize, EdgeLabel)> = self
            .se_edges
            .iter()
            .filter(|e| e.sentence == i)
            .map(|e| (e.entity, e.label))
            .collect();
        out.sort_unstable_by_key(|(ent, _)| *ent);
        out
    }

    /// Sentence neighbors of entity `j` with their edge labels.
    pub fn sentences_of_entity(&self, j: usize) -> Vec<(usize, EdgeLabel)> {
        let mut out: Vec<(usize, EdgeLabel)> = self
            .se_edges
            .iter()
            .filter(|e| e.entity == j)
            .map(|e| (e.sentence, e.label))
            .collect();
        out.sort_unstable_by_key(|(s, _)| *s);
        out
    }
}

/// Builds the graph for a paragraph. Construction is a pure function of
/// the paragraph content and the variant; sentence indices refer to the
/// paragraph's storage order.
pub fn build_graph(paragraph: &Paragraph, variant: GraphVariant) -> SentenceEntityGraph {
    let m = paragraph.len();
    if variant == GraphVariant::F {
        let mut ss_edges = Vec::new();
        for a in 0..m {
            for b in a + 1..m {
                ss_edges.push(SsEdge { a, b });
            }
        }
        return SentenceEntityGraph {
            sentence_count: m,
            variant,
            entities: Vec::new(),
            se_edges: Vec::new(),
            ss_edges,
        };
    }

    // Token-occurrence counts over the whole paragraph; a noun repeated
    // twice within one sentence qualifies as an entity.
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for sentence in &paragraph.sentences {
        for token in &sentence.tokens {
            if token.is_noun {
                *counts.entry(token.surface.as_str()).or_insert(0) += 1;
            }
        }
    }
    // Entity ids are lexicographic over surfaces, so they do not depend on
    // the order sentences were presented in.
    let entities: Vec<EntityNode> = counts
        .iter()
        .filter(|(_, c)| **c >= 2)
        .enumerate()
        .map(|(id, (surface, occurrences))| EntityNode {
            id,
            surface: surface.to_string(),
            occurrences: *occurrences,
        })
        .collect();
    let entity_id: BTreeMap<&str, usize> = entities
        .iter()
        .map(|e| (e.surface.as_str(), e.id))
        .collect();

    // Roles of each entity within each sentence, then one labeled SE edge
    // per (sentence, entity) pair.
    let mut roles: BTreeMap<(usize, usize), Vec<Role>> = BTreeMap::new();
    for (s_idx, sentence) in paragraph.sentences.iter().enumerate() {
        for token in &sentence.tokens {
            if !token.is_noun {
                continue;
            }
            if let Some(&ent) = entity_id.get(token.surface.as_str()) {
                roles
                    .entry((s_idx, ent))
                    .or_default()
                    .push(token.role.unwrap_or(Role::X));
            }
        }
    }
    let se_edges: Vec<SeEdge> = roles
        .iter()
        .map(|((sentence, entity), rs)| SeEdge {
            sentence: *sentence,
            entity: *entity,
            label: EdgeLabel::from_role(resolve_edge_label(rs)),
        })
        .collect();

    let ss_edges = ss_from_se(&se_edges);

    match variant {
        GraphVariant::Se => SentenceEntityGraph {
            sentence_count: m,
            variant,
            entities,
            se_edges,
            ss_edges,
        },
        GraphVariant::S => SentenceEntityGraph {
            sentence_count: m,
            variant,
            entities: Vec::new(),
            se_edges: Vec::new(),
            ss_edges,
        },
        GraphVariant::F => unreachable!("handled above"),
    }
}

/// SS edges induced by SE edges: sentences sharing at least one entity.
fn ss_from_se(se_edges: &[SeEdge]) -> Vec<SsEdge> {
    let mut by_entity: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for e in se_edges {
        by_entity.entry(e.entity).or_default().push(e.sentence);
    }
    let mut pairs: BTreeSet<SsEdge> = BTreeSet::new();
    for sentences in by_entity.values() {
        for (i, &a) in sentences.iter().enumerate() {
            for &b in &sentences[i + 1..] {
                if a != b {
                    pairs.insert(SsEdge::new(a, b));
                }
            }
        }
    }
    pairs.into_iter().collect()
}

/// Drops entity nodes and SE edges, keeping SS edges: the S-variant view
/// of an SE graph. Used by the ablation pipeline.
pub fn project_to_s(g: &SentenceEntityGraph) -> SentenceEntityGraph {
    SentenceEntityGraph {
        sentence_count: g.sentence_count,
        variant: GraphVariant::S,
        entities: Vec::new(),
        se_edges: Vec::new(),
        ss_edges: g.ss_edges.clone(),
    }
}

// ── Ablation transforms ─────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AblationTransform {
    /// Rewires SS and SE endpoints to uniformly random valid endpoints,
    /// preserving edge counts and the bipartite SE structure.
    ShuffleEdges { seed: u64 },
    /// Maps every SE label to the neutral label.
    RemoveEdgeLabels,
    /// Deletes `round(fraction * entity_count)` uniformly chosen entities
    /// with their SE edges, then recomputes SS edges.
    RemoveEntities { fraction: f64, seed: u64 },
}

impl AblationTransform {
    pub fn name(&self) -> &'static str {
        match self {
            AblationTransform::ShuffleEdges { .. } => "shuffle-edges",
            AblationTransform::RemoveEdgeLabels => "remove-edge-labels",
            AblationTransform::RemoveEntities { .. } => "remove-entities",
        }
    }
}

/// Applies a corruption transform to a freshly built graph.
pub fn ablate(
    g: &SentenceEntityGraph,
    transform: AblationTransform,
) -> Result<SentenceEntityGraph, GraphError> {
    if g.variant == GraphVariant::F {
        return Err(GraphError::AblationOnFullGraph {
            transform: transform.name(),
        });
    }
    match transform {
        AblationTransform::ShuffleEdges { seed } => Ok(shuffle_edges(g, seed)),
        AblationTransform::RemoveEdgeLabels => {
            let mut out = g.clone();
            for e in &mut out.se_edges {
                e.label = EdgeLabel::Neutral;
            }
            Ok(out)
        }
        AblationTransform::RemoveEntities { fraction, seed } => {
            if !(0.0..=1.0).contains(&fraction) {
                return Err(GraphError::BadFraction(fraction));
            }
            Ok(remove_entities(g, fraction, seed))
        }
    }
}

fn shuffle_edges(g: &SentenceEntityGraph, seed: u64) -> SentenceEntityGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = g.sentence_count;

    // Sample |SS| distinct unordered pairs uniformly.
    let mut all_pairs: Vec<SsEdge> = Vec::new();
    for a in 0..m {
        for b in a + 1..m {
            all_pairs.push(SsEdge { a, b });
        }
    }
    all_pairs.shuffle(&mut rng);
    let mut ss_edges: Vec<SsEdge> = all_pairs
        .into_iter()
        .take(g.ss_edges.len())
        .collect();
    ss_edges.sort();

    // Sample |SE| distinct (sentence, entity) slots uniformly, carrying
    // the original labels across in order.
    let mut all_slots: Vec<(usize, usize)> = Vec::new();
    for s in 0..m {
        for e in 0..g.entity_count() {
            all_slots.push((s, e));
        }
    }
    all_slots.shuffle(&mut rng);
    let mut se_edges: Vec<SeEdge> = all_slots
        .into_iter()
        .take(g.se_edges.len())
        .zip(g.se_edges.iter())
        .map(|((sentence, entity), orig)| SeEdge {
            sentence,
            entity,
            label: orig.label,
        })
        .collect();
    se_edges.sort_by_key(|e| (e.sentence, e.entity));

    SentenceEntityGraph {
        sentence_count: m,
        variant: g.variant,
        entities: g.entities.clone(),
        se_edges,
        ss_edges,
    }
}

fn remove_entities(g: &SentenceEntityGraph, fraction: f64, seed: u64) -> SentenceEntityGraph {
    let total = g.entity_count();
    let k = (fraction * total as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut rng);
    let removed: BTreeSet<usize> = order.into_iter().take(k).collect();

    // Survivors are reindexed densely and keep their SE edges; SS edges
    // are recomputed from the surviving entities.
    let mut remap: BTreeMap<usize, usize> = BTreeMap::new();
    let mut entities = Vec::new();
    for e in &g.entities {
        if !removed.contains(&e.id) {
            remap.insert(e.id, entities.len());
            entities.push(EntityNode {
                id: entities.len(),
                surface: e.surface.clone(),
                occurrences: e.occurrences,
            });
        }
    }
    let se_edges: Vec<SeEdge> = g
        .se_edges
        .iter()
        .filter_map(|e| {
            remap.get(&e.entity).map(|&entity| SeEdge {
                sentence: e.sentence,
                entity,
                label: e.label,
            })
        })
        .collect();
    let ss_edges = ss_from_se(&se_edges);

    SentenceEntityGraph {
        sentence_count: g.sentence_count,
        variant: g.variant,
        entities,
        se_edges,
        ss_edges,
    }
}

// ── Debug dump ──────────────────────────────────────────────────────

/// One dump record per paragraph, for debugging and golden-file tests.
#[derive(Debug, Serialize, Deserialize)]
pub struct GraphRecord {
    pub id: String,
    pub variant: GraphVariant,
    pub sentences: usize,
    pub entities: Vec<EntityNode>,
    pub se_edges: Vec<SeEdge>,
    pub ss_edges: Vec<SsEdge>,
}

pub fn graph_record(id: &str, g: &SentenceEntityGraph) -> GraphRecord {
    GraphRecord {
        id: id.to_string(),
        variant: g.variant,
        sentences: g.sentence_count,
        entities: g.entities.clone(),
        se_edges: g.se_edges.clone(),
        ss_edges: g.ss_edges.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Sentence, Split, Token};

    fn para(sentences: Vec<Vec<Token>>) -> Paragraph {
        Paragraph {
            id: "t".into(),
            split: Split::Train,
            sentences: sentences
                .into_iter()
                .map(|tokens| Sentence { tokens })
                .collect(),
        }
    }

    /// The running four-sentence example: dad links S1-S2, game S2-S3,
    /// crowd S3-S4, and nothing links S1 and S4.
    pub(crate) fn chain_paragraph() -> Paragraph {
        para(vec![
            vec![Token::word("my"), Token::noun("dad", Role::S), Token::word("slept")],
            vec![
                Token::noun("dad", Role::S),
                Token::word("watched"),
                Token::noun("game", Role::O),
            ],
            vec![
                Token::noun("game", Role::S),
                Token::word("excited"),
                Token::noun("crowd", Role::O),
            ],
            vec![Token::noun("crowd", Role::S), Token::word("cheered")],
        ])
    }

    #[test]
    fn chain_example_builds_the_expected_graph() {
        let g = build_graph(&chain_paragraph(), GraphVariant::Se);
        assert_eq!(g.sentence_count, 4);
        let surfaces: Vec<&str> = g.entities.iter().map(|e| e.surface.as_str()).collect();
        assert_eq!(surfaces, vec!["crowd", "dad", "game"]);
        assert_eq!(
            g.ss_edges,
            vec![
                SsEdge { a: 0, b: 1 },
                SsEdge { a: 1, b: 2 },
                SsEdge { a: 2, b: 3 },
            ]
        );
        // every entity connects exactly two sentences
        for e in &g.entities {
            assert_eq!(g.sentences_of_entity(e.id).len(), 2, "{}", e.surface);
        }
        assert!(!g.ss_edges.contains(&SsEdge { a: 0, b: 3 }));
    }

    #[test]
    fn no_repeated_noun_means_no_entities_or_ss_edges() {
        let p = para(vec![
            vec![Token::noun("apple", Role::S), Token::word("fell")],
            vec![Token::noun("tree", Role::S), Token::word("stood")],
        ]);
        let g = build_graph(&p, GraphVariant::Se);
        assert_eq!(g.entity_count(), 0);
        assert!(g.ss_edges.is_empty());
    }

    #[test]
    fn variant_f_is_the_complete_graph() {
        let g = build_graph(&chain_paragraph(), GraphVariant::F);
        assert_eq!(g.ss_edges.len(), 6);
        assert_eq!(g.entity_count(), 0);
        assert!(g.se_edges.is_empty());
    }

    #[test]
    fn s_variant_shares_ss_edges_with_se() {
        let p = chain_paragraph();
        let se = build_graph(&p, GraphVariant::Se);
        let s = build_graph(&p, GraphVariant::S);
        assert_eq!(se.ss_edges, s.ss_edges);
        assert_eq!(s.entity_count(), 0);
    }

    #[test]
    fn label_resolution_follows_the_rank_rule() {
        assert_eq!(resolve_edge_label(&[Role::O, Role::X]), Role::O);
        assert_eq!(resolve_edge_label(&[Role::X]), Role::X);
        assert_eq!(resolve_edge_label(&[Role::S, Role::O, Role::X]), Role::S);
    }

    #[test]
    fn repeated_role_in_one_sentence_takes_the_max() {
        let p = para(vec![
            vec![Token::noun("dog", Role::X), Token::noun("dog", Role::O)],
            vec![Token::noun("dog", Role::X)],
        ]);
        let g = build_graph(&p, GraphVariant::Se);
        let edge = g.se_edges.iter().find(|e| e.sentence == 0).unwrap();
        assert_eq!(edge.label, EdgeLabel::O);
    }

    #[test]
    fn within_sentence_repeat_yields_entity_without_ss_edge() {
        let p = para(vec![
            vec![Token::noun("echo", Role::X), Token::noun("echo", Role::X)],
            vec![Token::word("silence")],
        ]);
        let g = build_graph(&p, GraphVariant::Se);
        assert_eq!(g.entity_count(), 1);
        assert_eq!(g.se_edges.len(), 1);
        assert!(g.ss_edges.is_empty());
    }

    #[test]
    fn remove_all_entities_matches_the_bare_s_graph() {
        let g = build_graph(&chain_paragraph(), GraphVariant::Se);
        let stripped = ablate(
            &g,
            AblationTransform::RemoveEntities {
                fraction: 1.0,
                seed: 5,
            },
        )
        .unwrap();
        assert_eq!(stripped.entity_count(), 0);
        assert!(stripped.se_edges.is_empty());
        assert!(stripped.ss_edges.is_empty());
    }

    #[test]
    fn remove_zero_entities_is_identity() {
        let g = build_graph(&chain_paragraph(), GraphVariant::Se);
        let same = ablate(
            &g,
            AblationTransform::RemoveEntities {
                fraction: 0.0,
                seed: 5,
            },
        )
        .unwrap();
        assert_eq!(same, g);
    }

    #[test]
    fn ablation_on_variant_f_is_a_contract_error() {
        let g = build_graph(&chain_paragraph(), GraphVariant::F);
        let err = ablate(&g, AblationTransform::RemoveEdgeLabels).unwrap_err();
        assert_eq!(
            err,
            GraphError::AblationOnFullGraph {
                transform: "remove-edge-labels"
            }
        );
    }

    #[test]
    fn remove_edge_labels_neutralizes_every_label() {
        let g = build_graph(&chain_paragraph(), GraphVariant::Se);
        let out = ablate(&g, AblationTransform::RemoveEdgeLabels).unwrap();
        assert!(out.se_edges.iter().all(|e| e.label == EdgeLabel::Neutral));
        assert_eq!(out.se_edges.len(), g.se_edges.len());
    }
}
