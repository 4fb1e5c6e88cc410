//! Git-style terminal rendering of the version graph, newest version on top.

use std::collections::BTreeSet;
use std::fmt::Write;

use mvee_core::graph::{MethodHistory, Origin};
use mvee_core::VersionGraph;

/// Lane of every version. Forks open the lowest free lane; a modification
/// continues in the lowest lane of its parents and closes the others.
fn lanes(history: &MethodHistory) -> (Vec<usize>, Vec<BTreeSet<usize>>) {
    let mut lane_of = Vec::with_capacity(history.nodes.len());
    let mut alive_after = Vec::with_capacity(history.nodes.len());
    let mut occupied: BTreeSet<usize> = BTreeSet::new();
    for node in &history.nodes {
        let lane = match node.origin {
            Origin::Initial => 0,
            Origin::AnomalyFork => (0..).find(|l| !occupied.contains(l)).unwrap(),
            Origin::SourceModification => {
                let parent_lanes: BTreeSet<usize> = node.parents.iter().map(|&p| lane_of[p as usize]).collect();
                for l in &parent_lanes {
                    occupied.remove(l);
                }
                parent_lanes.first().copied().unwrap_or(0)
            }
        };
        occupied.insert(lane);
        lane_of.push(lane);
        alive_after.push(occupied.clone());
    }
    (lane_of, alive_after)
}

fn row(width: usize, alive: &BTreeSet<usize>, mark: Option<(usize, char)>) -> String {
    let mut s = String::new();
    for l in 0..width {
        let c = match mark {
            Some((at, c)) if at == l => c,
            _ if alive.contains(&l) => '|',
            _ => ' ',
        };
        s.push(c);
        s.push(' ');
    }
    s
}

pub fn render(graph: &VersionGraph) -> String {
    if graph.build_ids().is_empty() {
        return "no builds recorded\n".to_string();
    }
    let mut out = String::new();
    for (method, history) in &graph.methods {
        let relevant: Vec<String> = history.open_branches.iter().map(|v| format!("V{v}")).collect();
        let _ = writeln!(out, "{method}  (relevant: {})", relevant.join(", "));
        let (lane_of, alive) = lanes(history);
        let width = alive.iter().flat_map(|a| a.iter()).max().map_or(1, |m| m + 1);
        for (i, node) in history.nodes.iter().enumerate().rev() {
            let lane = lane_of[i];
            let what = match node.origin {
                Origin::Initial => "initial".to_string(),
                Origin::AnomalyFork => format!("anomaly, forked from V{}", node.parents.first().copied().unwrap_or(0)),
                Origin::SourceModification if node.parents.len() > 1 => {
                    let ps: Vec<String> = node.parents.iter().map(|p| format!("V{p}")).collect();
                    format!("source modified, merges {}", ps.join(" + "))
                }
                Origin::SourceModification => "source modified".to_string(),
            };
            let tip = if history.open_branches.contains(&node.ordinal) { "  <- relevant" } else { "" };
            let _ = writeln!(
                out,
                "  {}{method}.V{}  {}  {what}{tip}",
                row(width, &alive[i], Some((lane, '*'))),
                node.ordinal,
                node.created_build
            );
            if i == 0 {
                continue;
            }
            let below = &alive[i - 1];
            match node.origin {
                Origin::AnomalyFork => {
                    let _ = writeln!(out, "  {}", row(width, below, Some((lane, '/'))).trim_end());
                }
                Origin::SourceModification => {
                    let merged: Vec<usize> = node
                        .parents
                        .iter()
                        .map(|&p| lane_of[p as usize])
                        .filter(|&l| l != lane)
                        .collect();
                    if !merged.is_empty() {
                        let mut line = row(width, below, None).into_bytes();
                        for l in merged {
                            line[2 * l] = b'\\';
                        }
                        let _ = writeln!(out, "  {}", String::from_utf8(line).unwrap().trim_end());
                    }
                }
                Origin::Initial => {}
            }
        }
        let steps: Vec<String> = history
            .steps
            .iter()
            .map(|s| format!("{} {}", s.build_id, s.outcome.describe(method)))
            .collect();
        let _ = writeln!(out, "  builds: {}", steps.join("; "));
    }
    out
}
