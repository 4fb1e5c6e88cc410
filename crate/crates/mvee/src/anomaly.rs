//! Anomaly inspection: the verdict between a fork and its origin, with both
//! regions rendered as annotated assembly.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;

use mvee_core::equivalence::Category;
use mvee_core::region::MarkedRegion;
use mvee_core::{compare_regions, Outcome, Verdict, VersionGraph};
use serde::Serialize;
use thiserror::Error;

use crate::state::StateDir;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnomalyLookupError {
    #[error("build `{0}` is not recorded")]
    UnknownBuild(String),
    #[error("section `{0}` is not tracked")]
    UnknownSection(String),
    #[error("section `{section}` has no anomaly in build `{build}`")]
    NotAnomalous { build: String, section: String },
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct AnnotatedLine {
    /// 1-based line in the stored `.s` file.
    pub line: usize,
    pub text: String,
    pub in_region: bool,
    pub categories: Vec<Category>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RegionView {
    pub build_id: String,
    pub version: String,
    pub lines: Vec<AnnotatedLine>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct AnomalyView {
    pub section: String,
    pub build_id: String,
    pub verdict: Verdict,
    pub previous: RegionView,
    pub current: RegionView,
}

fn region_lines(region: &MarkedRegion) -> BTreeSet<usize> {
    region.groups.iter().flat_map(|g| g.lines.iter().copied()).collect()
}

/// Lines from the first to the last region instruction, read from the stored
/// assembly; falls back to the snapshot's instructions when the file is gone.
fn render(
    state: &StateDir,
    region: &MarkedRegion,
    version: String,
    marks: &BTreeMap<usize, BTreeSet<Category>>,
) -> RegionView {
    let in_region = region_lines(region);
    let (Some(&first), Some(&last)) = (in_region.first(), in_region.last()) else {
        return RegionView { build_id: region.build_id.clone(), version, lines: Vec::new() };
    };
    let categories = |l: usize| marks.get(&l).map(|c| c.iter().copied().collect()).unwrap_or_default();
    let lines = match fs::read_to_string(state.asm(&region.build_id)) {
        Ok(text) => text
            .lines()
            .enumerate()
            .skip(first)
            .take(last - first + 1)
            .map(|(i, t)| AnnotatedLine {
                line: i + 1,
                text: t.to_string(),
                in_region: in_region.contains(&i),
                categories: categories(i),
            })
            .collect(),
        Err(_) => region
            .instructions()
            .map(|(l, ins)| AnnotatedLine {
                line: l + 1,
                text: format!("\t{ins}"),
                in_region: true,
                categories: categories(l),
            })
            .collect(),
    };
    RegionView { build_id: region.build_id.clone(), version, lines }
}

pub fn anomaly_view(
    graph: &VersionGraph,
    state: &StateDir,
    build: &str,
    section: &str,
) -> Result<AnomalyView, AnomalyLookupError> {
    if !graph.build_ids().iter().any(|b| b == build) {
        return Err(AnomalyLookupError::UnknownBuild(build.to_string()));
    }
    let history = graph.history(section).map_err(|_| AnomalyLookupError::UnknownSection(section.to_string()))?;
    let step = history.steps.iter().find(|s| s.build_id == build);
    let Some(&Outcome::Fork { version, from }) = step.map(|s| &s.outcome) else {
        return Err(AnomalyLookupError::NotAnomalous { build: build.to_string(), section: section.to_string() });
    };
    let old = &history.node(from).expect("fork origin").region_snapshot;
    let new = &history.node(version).expect("fork version").region_snapshot;
    let verdict = compare_regions(old, new).expect("same section");

    let mut old_marks: BTreeMap<usize, BTreeSet<Category>> = BTreeMap::new();
    let mut new_marks: BTreeMap<usize, BTreeSet<Category>> = BTreeMap::new();
    for e in &verdict.classified_edits {
        if let Some(l) = e.source_line {
            old_marks.entry(l).or_default().insert(e.category);
        }
        if let Some(l) = e.target_line {
            new_marks.entry(l).or_default().insert(e.category);
        }
    }
    Ok(AnomalyView {
        section: section.to_string(),
        build_id: build.to_string(),
        previous: render(state, old, format!("{section}.V{from}"), &old_marks),
        current: render(state, new, format!("{section}.V{version}"), &new_marks),
        verdict,
    })
}
