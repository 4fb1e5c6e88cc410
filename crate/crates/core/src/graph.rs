//! Per-method history of compiled versions.
//!
//! An anomaly (assembly changed, source did not) forks a new open branch. A
//! source modification creates a version that merges every open branch. The
//! open branches of a method are exactly its relevant versions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::equivalence::compare_regions;
use crate::region::MarkedRegion;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VersionId {
    pub method: String,
    pub ordinal: u32,
}

impl VersionId {
    pub fn new(method: impl Into<String>, ordinal: u32) -> Self {
        Self { method: method.into(), ordinal }
    }
}

impl fmt::Display for VersionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.V{}", self.method, self.ordinal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Origin {
    Initial,
    SourceModification,
    AnomalyFork,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct VersionNode {
    pub ordinal: u32,
    pub created_build: String,
    pub origin: Origin,
    /// Versions this one continues from: the forked version, or every branch
    /// tip merged by a modification.
    pub parents: Vec<u32>,
    pub region_snapshot: MarkedRegion,
}

/// What one build meant for one method. Ordinals refer to that method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Outcome {
    Initial { version: u32 },
    Unchanged { version: u32 },
    Modified { version: u32 },
    Fork { version: u32, from: u32 },
    Reverted { version: u32 },
}

impl Outcome {
    /// Version the build's results belong to.
    pub fn version(self) -> u32 {
        match self {
            Outcome::Initial { version }
            | Outcome::Unchanged { version }
            | Outcome::Modified { version }
            | Outcome::Fork { version, .. }
            | Outcome::Reverted { version } => version,
        }
    }

    /// Whether the build created a new version.
    pub fn is_new_version(self) -> bool {
        matches!(self, Outcome::Initial { .. } | Outcome::Modified { .. } | Outcome::Fork { .. })
    }

    pub fn is_fork(self) -> bool {
        matches!(self, Outcome::Fork { .. })
    }

    pub fn describe(self, method: &str) -> String {
        let v = |n: u32| VersionId::new(method, n);
        match self {
            Outcome::Initial { version } => format!("Initial({})", v(version)),
            Outcome::Unchanged { version } => format!("Unchanged({})", v(version)),
            Outcome::Modified { version } => format!("Modified({})", v(version)),
            Outcome::Fork { version, from } => format!("Fork({} from {})", v(version), v(from)),
            Outcome::Reverted { version } => format!("Reverted({})", v(version)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BuildStep {
    pub build_id: String,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MethodHistory {
    pub nodes: Vec<VersionNode>,
    pub steps: Vec<BuildStep>,
    pub open_branches: BTreeSet<u32>,
}

impl MethodHistory {
    pub fn node(&self, ordinal: u32) -> Option<&VersionNode> {
        self.nodes.get(ordinal as usize)
    }

    /// Open branches, most recently referenced by a build step first.
    fn match_order(&self) -> Vec<u32> {
        let mut order = Vec::with_capacity(self.open_branches.len());
        for step in self.steps.iter().rev() {
            let v = step.outcome.version();
            if self.open_branches.contains(&v) && !order.contains(&v) {
                order.push(v);
            }
        }
        for &v in self.open_branches.iter().rev() {
            if !order.contains(&v) {
                order.push(v);
            }
        }
        order
    }

    fn add_node(&mut self, build_id: &str, origin: Origin, parents: Vec<u32>, region: MarkedRegion) -> u32 {
        let ordinal = self.nodes.len() as u32;
        self.nodes.push(VersionNode {
            ordinal,
            created_build: build_id.to_string(),
            origin,
            parents,
            region_snapshot: region,
        });
        ordinal
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildInput {
    pub source_modified: bool,
    pub region: MarkedRegion,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("method `{0}` is not configured")]
    UnknownMethod(String),
    #[error("build supplies no region for method `{0}`")]
    MissingMethod(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PersistError {
    #[error("malformed graph document: {0}")]
    Malformed(String),
    #[error("graph schema {found} is not supported (expected {SCHEMA_VERSION})")]
    SchemaMismatch { found: u32 },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionGraph {
    pub methods: BTreeMap<String, MethodHistory>,
}

impl VersionGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_methods<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut g = Self::new();
        for id in ids {
            g.register_method(id);
        }
        g
    }

    /// Adds a monitored method; existing history is kept.
    pub fn register_method(&mut self, id: impl Into<String>) {
        self.methods.entry(id.into()).or_default();
    }

    pub fn history(&self, method: &str) -> Result<&MethodHistory, GraphError> {
        self.methods.get(method).ok_or_else(|| GraphError::UnknownMethod(method.to_string()))
    }

    /// Records one build. On error the graph is left untouched.
    pub fn record_build(
        &mut self,
        build_id: &str,
        inputs: BTreeMap<String, BuildInput>,
    ) -> Result<BTreeMap<String, Outcome>, GraphError> {
        if let Some(unknown) = inputs.keys().find(|k| !self.methods.contains_key(*k)) {
            return Err(GraphError::UnknownMethod(unknown.clone()));
        }
        if let Some(missing) = self.methods.keys().find(|k| !inputs.contains_key(*k)) {
            return Err(GraphError::MissingMethod(missing.clone()));
        }

        let mut outcomes = BTreeMap::new();
        for (method, input) in inputs {
            let history = self.methods.get_mut(&method).unwrap();
            let outcome = Self::decide(history, build_id, input);
            history.steps.push(BuildStep { build_id: build_id.to_string(), outcome });
            outcomes.insert(method, outcome);
        }
        Ok(outcomes)
    }

    fn decide(history: &mut MethodHistory, build_id: &str, input: BuildInput) -> Outcome {
        if history.nodes.is_empty() {
            let v = history.add_node(build_id, Origin::Initial, Vec::new(), input.region);
            history.open_branches.insert(v);
            return Outcome::Initial { version: v };
        }
        if input.source_modified {
            let parents: Vec<u32> = history.open_branches.iter().copied().collect();
            let v = history.add_node(build_id, Origin::SourceModification, parents, input.region);
            history.open_branches = BTreeSet::from([v]);
            return Outcome::Modified { version: v };
        }

        let order = history.match_order();
        let last = order[0];
        for &candidate in &order {
            let snapshot = &history.nodes[candidate as usize].region_snapshot;
            let equivalent = compare_regions(snapshot, &input.region)
                .map(|v| v.is_equivalent())
                .unwrap_or(false);
            if equivalent {
                return if candidate == last {
                    Outcome::Unchanged { version: candidate }
                } else {
                    Outcome::Reverted { version: candidate }
                };
            }
        }
        let v = history.add_node(build_id, Origin::AnomalyFork, vec![last], input.region);
        history.open_branches.insert(v);
        Outcome::Fork { version: v, from: last }
    }

    /// Versions whose results must be reported together: the open branch tips.
    pub fn relevant_versions(&self, method: &str) -> Result<BTreeSet<VersionId>, GraphError> {
        let history = self.history(method)?;
        Ok(history.open_branches.iter().map(|&o| VersionId::new(method, o)).collect())
    }

    /// The version the latest step of `method` referenced.
    pub fn latest_outcome(&self, method: &str) -> Option<&BuildStep> {
        self.methods.get(method)?.steps.last()
    }

    /// Distinct build ids in recording order.
    pub fn build_ids(&self) -> Vec<String> {
        let mut all: Vec<(usize, &str)> = Vec::new();
        for history in self.methods.values() {
            for (i, step) in history.steps.iter().enumerate() {
                if !all.iter().any(|(_, b)| *b == step.build_id) {
                    all.push((i, &step.build_id));
                }
            }
        }
        all.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(b.1)));
        all.into_iter().map(|(_, b)| b.to_string()).collect()
    }

    /// Outcome of every method in one build.
    pub fn build_outcomes(&self, build_id: &str) -> BTreeMap<String, Outcome> {
        self.methods
            .iter()
            .filter_map(|(m, h)| {
                h.steps.iter().find(|s| s.build_id == build_id).map(|s| (m.clone(), s.outcome))
            })
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.methods.values().all(|h| h.steps.is_empty())
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Doc<'a> {
            schema: u32,
            methods: &'a BTreeMap<String, MethodHistory>,
        }
        serde_json::to_string(&Doc { schema: SCHEMA_VERSION, methods: &self.methods })
            .expect("graph serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, PersistError> {
        #[derive(Deserialize)]
        struct Header {
            schema: u32,
        }
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Doc {
            #[allow(dead_code)]
            schema: u32,
            methods: BTreeMap<String, MethodHistory>,
        }
        let header: Header =
            serde_json::from_str(text).map_err(|e| PersistError::Malformed(e.to_string()))?;
        if header.schema != SCHEMA_VERSION {
            return Err(PersistError::SchemaMismatch { found: header.schema });
        }
        let doc: Doc = serde_json::from_str(text).map_err(|e| PersistError::Malformed(e.to_string()))?;
        Ok(Self { methods: doc.methods })
    }
}
