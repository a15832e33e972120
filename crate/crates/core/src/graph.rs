//! Concept hierarchy and concept graph.
//!
//! A topic is organised in three levels: broader concept areas (BCA),
//! sub-concept areas (SCA) and key concept links (KCL). The concept graph
//! connects nodes of those levels with undirected edges — the concept links
//! that strength scores attach to. A question→concept-link map records which
//! links each assessment question measures.

use crate::ids::{EdgeId, NodeId, QuestionId};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

/// Hierarchy level of a concept node, ascending from most specific.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Level {
    #[serde(rename = "KCL")]
    Kcl,
    #[serde(rename = "SCA")]
    Sca,
    #[serde(rename = "BCA")]
    Bca,
}

impl Level {
    pub fn all() -> [Level; 3] {
        [Level::Kcl, Level::Sca, Level::Bca]
    }

    pub fn name(self) -> &'static str {
        match self {
            Level::Kcl => "KCL",
            Level::Sca => "SCA",
            Level::Bca => "BCA",
        }
    }
}

/// A node of the concept graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptNode {
    pub id: NodeId,
    pub label: String,
    pub level: Level,
}

/// An undirected edge between two concept nodes, optionally carrying the
/// strength a student has shown on this link. Strengths are averages of
/// integer scores in 1..=5, so fractional values are expected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptEdge<S = f64> {
    pub id: EdgeId,
    pub endpoints: (NodeId, NodeId),
    #[serde(default = "none")]
    pub strength: Option<S>,
}

fn none<S>() -> Option<S> {
    None
}

impl<S> ConceptEdge<S> {
    pub fn new(id: impl Into<EdgeId>, a: impl Into<NodeId>, b: impl Into<NodeId>) -> Self {
        Self {
            id: id.into(),
            endpoints: (a.into(), b.into()),
            strength: None,
        }
    }

    pub fn with_strength(mut self, strength: S) -> Self {
        self.strength = Some(strength);
        self
    }

    /// Endpoint pair normalised so that (a, b) and (b, a) compare equal.
    pub fn unordered_endpoints(&self) -> (&NodeId, &NodeId) {
        let (a, b) = (&self.endpoints.0, &self.endpoints.1);
        if a <= b {
            (a, b)
        } else {
            (b, a)
        }
    }

    pub fn touches(&self, node: &NodeId) -> bool {
        &self.endpoints.0 == node || &self.endpoints.1 == node
    }
}

/// The concept graph: nodes partitioned by level plus concept-link edges.
///
/// Values are immutable after construction; all operations are pure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptGraph<S = f64> {
    nodes: Vec<ConceptNode>,
    edges: Vec<ConceptEdge<S>>,
}

impl<S> Default for ConceptGraph<S> {
    fn default() -> Self {
        Self {
            nodes: Vec::new(),
            edges: Vec::new(),
        }
    }
}

impl<S> ConceptGraph<S> {
    /// Build a graph; nodes and edges are stored sorted by id so every
    /// derived output is deterministic.
    pub fn new(mut nodes: Vec<ConceptNode>, mut edges: Vec<ConceptEdge<S>>) -> Self {
        nodes.sort_by(|a, b| a.id.cmp(&b.id));
        edges.sort_by(|a, b| a.id.cmp(&b.id));
        Self { nodes, edges }
    }

    pub fn nodes(&self) -> &[ConceptNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[ConceptEdge<S>] {
        &self.edges
    }

    pub fn node(&self, id: &NodeId) -> Option<&ConceptNode> {
        self.nodes
            .binary_search_by(|n| n.id.cmp(id))
            .ok()
            .map(|i| &self.nodes[i])
    }

    pub fn edge(&self, id: &EdgeId) -> Option<&ConceptEdge<S>> {
        self.edges
            .binary_search_by(|e| e.id.cmp(id))
            .ok()
            .map(|i| &self.edges[i])
    }

    /// Level of an edge: the lower of its two endpoint levels. A KCL–SCA
    /// edge ranks as KCL, an SCA–BCA edge as SCA.
    pub fn edge_level(&self, edge: &ConceptEdge<S>) -> Option<Level> {
        let a = self.node(&edge.endpoints.0)?.level;
        let b = self.node(&edge.endpoints.1)?.level;
        Some(a.min(b))
    }

    /// Edges incident to `node`, in id order.
    pub fn edges_at<'a>(&'a self, node: &'a NodeId) -> impl Iterator<Item = &'a ConceptEdge<S>> {
        self.edges.iter().filter(move |e| e.touches(node))
    }

    /// Nodes of one level, in id order.
    pub fn nodes_at_level(&self, level: Level) -> impl Iterator<Item = &ConceptNode> {
        self.nodes.iter().filter(move |n| n.level == level)
    }

    /// Same graph with strengths replaced according to `strengths`; edges
    /// absent from the map keep their current strength.
    pub fn with_strengths(&self, strengths: &BTreeMap<EdgeId, S>) -> Self
    where
        S: Clone,
    {
        let edges = self
            .edges
            .iter()
            .map(|e| {
                let mut e = e.clone();
                if let Some(s) = strengths.get(&e.id) {
                    e.strength = Some(s.clone());
                }
                e
            })
            .collect();
        Self {
            nodes: self.nodes.clone(),
            edges,
        }
    }

    /// Same graph with all strengths cleared.
    pub fn without_strengths(&self) -> Self
    where
        S: Clone,
    {
        let edges = self
            .edges
            .iter()
            .map(|e| {
                let mut e = e.clone();
                e.strength = None;
                e
            })
            .collect();
        Self {
            nodes: self.nodes.clone(),
            edges,
        }
    }
}

impl<S: Scalar> ConceptGraph<S> {
    /// Check every structural invariant and return all violations found,
    /// sorted by subject id. An empty report means the graph is valid.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();

        let mut node_ids = BTreeSet::new();
        for node in &self.nodes {
            if node.id.as_str().is_empty() {
                violations.push(Violation::new("", "node id is empty"));
            }
            if !node_ids.insert(&node.id) {
                violations.push(Violation::new(
                    node.id.as_str(),
                    format!("duplicate node id {}", node.id),
                ));
            }
        }

        let mut edge_ids = BTreeSet::new();
        let mut endpoint_pairs: BTreeMap<(&NodeId, &NodeId), &EdgeId> = BTreeMap::new();
        for edge in &self.edges {
            if edge.id.as_str().is_empty() {
                violations.push(Violation::new("", "edge id is empty"));
            }
            if !edge_ids.insert(&edge.id) {
                violations.push(Violation::new(
                    edge.id.as_str(),
                    format!("duplicate edge id {}", edge.id),
                ));
            }
            for endpoint in [&edge.endpoints.0, &edge.endpoints.1] {
                if self.node(endpoint).is_none() {
                    violations.push(Violation::new(
                        edge.id.as_str(),
                        format!("dangling endpoint {endpoint}"),
                    ));
                }
            }
            if edge.endpoints.0 == edge.endpoints.1 {
                violations.push(Violation::new(
                    edge.id.as_str(),
                    format!("self-loop at {}", edge.endpoints.0),
                ));
            }
            match endpoint_pairs.entry(edge.unordered_endpoints()) {
                std::collections::btree_map::Entry::Vacant(v) => {
                    v.insert(&edge.id);
                }
                std::collections::btree_map::Entry::Occupied(o) => {
                    violations.push(Violation::new(
                        edge.id.as_str(),
                        format!("duplicate endpoint pair, already used by {}", o.get()),
                    ));
                }
            }
            if let Some(strength) = &edge.strength {
                let lo = S::from_score(1);
                let hi = S::from_score(5);
                if strength < &lo || strength > &hi {
                    violations.push(Violation::new(
                        edge.id.as_str(),
                        format!("strength {strength:?} outside [1,5]"),
                    ));
                }
            }
        }

        ValidationReport::from_violations(violations)
    }
}

/// One invariant violation: the offending node/edge id and why.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Violation {
    pub subject: String,
    pub reason: String,
}

impl Violation {
    pub fn new(subject: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            subject: subject.into(),
            reason: reason.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.subject, self.reason)
    }
}

/// All violations found by a validation pass; empty means valid.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ValidationReport {
    violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn from_violations(mut violations: Vec<Violation>) -> Self {
        violations.sort();
        violations.dedup();
        Self { violations }
    }

    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn violations(&self) -> &[Violation] {
        &self.violations
    }

    pub fn merge(mut self, other: ValidationReport) -> ValidationReport {
        self.violations.extend(other.violations);
        ValidationReport::from_violations(self.violations)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Mapping from each question to the concept links it measures.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QuestionConceptMap {
    entries: BTreeMap<QuestionId, BTreeSet<EdgeId>>,
}

impl QuestionConceptMap {
    pub fn new(entries: BTreeMap<QuestionId, BTreeSet<EdgeId>>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &BTreeMap<QuestionId, BTreeSet<EdgeId>> {
        &self.entries
    }

    /// Concept links mapped to `question_id`.
    pub fn links_for(&self, question_id: &QuestionId) -> Result<&BTreeSet<EdgeId>, MapLookupError> {
        self.entries.get(question_id).ok_or_else(|| MapLookupError {
            question_id: question_id.clone(),
        })
    }

    /// Every distinct concept link referenced by any question, in id order.
    pub fn mapped_links(&self) -> BTreeSet<EdgeId> {
        self.entries.values().flatten().cloned().collect()
    }

    /// Violations of the map against `graph`: empty link sets and links
    /// that do not exist as edges.
    pub fn validate<S: Scalar>(&self, graph: &ConceptGraph<S>) -> ValidationReport {
        let mut violations = Vec::new();
        for (question, links) in &self.entries {
            if links.is_empty() {
                violations.push(Violation::new(
                    question.as_str(),
                    "question maps to no concept links",
                ));
            }
            for link in links {
                if graph.edge(link).is_none() {
                    violations.push(Violation::new(
                        question.as_str(),
                        format!("mapped concept link {link} does not exist"),
                    ));
                }
            }
        }
        ValidationReport::from_violations(violations)
    }
}

/// A question id was looked up that the map does not contain.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown question id: {question_id}")]
pub struct MapLookupError {
    pub question_id: QuestionId,
}
