//! A baseline measured in two builds that compiled to different versions:
//! V0 is faster below 100% selectivity, V1 at 100%.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use mvee_core::graph::{BuildInput, Outcome, VersionGraph};
use mvee_core::region::{extract_region, MarkerConvention};
use mvee_core::results::{demo_problem_modes, export_report, ProblemModes, Report, ResultStore};
use mvee_core::parse_asm_file;
use serde_json::Value;

fn fixture(name: &str) -> String {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/problem_modes");
    fs::read_to_string(dir.join(name)).unwrap()
}

fn build(graph: &mut VersionGraph, build_id: &str, asm: &str) -> BTreeMap<String, Outcome> {
    let file = parse_asm_file(&fixture(asm), build_id).unwrap();
    let region = extract_region(&file, "B", &MarkerConvention::default()).unwrap();
    let inputs = BTreeMap::from([("B".to_string(), BuildInput { source_modified: false, region })]);
    graph.record_build(build_id, inputs).unwrap()
}

fn setup() -> (ResultStore, VersionGraph) {
    let mut graph = VersionGraph::with_methods(["B"]);
    let mut store = ResultStore::new();
    let first = build(&mut graph, "20260301T090000", "b_v0.s");
    store.ingest_run(&fixture("run1.json"), "20260301T090000", &first).unwrap();
    let second = build(&mut graph, "20260302T090000", "b_v1.s");
    assert_eq!(second["B"], Outcome::Fork { version: 1, from: 0 });
    store.ingest_run(&fixture("run2.json"), "20260302T090000", &second).unwrap();
    (store, graph)
}

/// (selectivity, value, version, build) for every point of every series, read
/// back from the JSON twin.
type Series = (String, Vec<(f64, f64, u64, String)>);

fn provenance(report: &Report) -> Vec<Series> {
    let doc: Value = serde_json::from_str(&report.to_json()).unwrap();
    doc["series"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| {
            let points = s["points"]
                .as_array()
                .unwrap()
                .iter()
                .map(|p| {
                    (
                        p["param"].as_f64().unwrap(),
                        p["value"].as_f64().unwrap(),
                        p["version"].as_u64().unwrap(),
                        p["buildId"].as_str().unwrap().to_string(),
                    )
                })
                .collect();
            (s["label"].as_str().unwrap().to_string(), points)
        })
        .collect()
}

fn svg_series(report: &Report) -> Vec<String> {
    let doc = roxmltree::Document::parse(&report.svg).unwrap();
    doc.descendants()
        .filter(|n| n.attribute("class") == Some("series"))
        .map(|n| n.attribute("data-label").unwrap().to_string())
        .collect()
}

const B1: &str = "20260301T090000";
const B2: &str = "20260302T090000";

#[test]
fn spliced_chart_mixes_versions_under_one_series() {
    let (store, graph) = setup();
    let ProblemModes { spliced, .. } = demo_problem_modes(&store, &graph, "runtime", "selectivity").unwrap();
    let series = provenance(&spliced);
    assert_eq!(series.len(), 1);
    assert_eq!(series[0].0, "B.V0+V1");
    let expected = vec![
        (0.25, 10.0, 0, B1.to_string()),
        (0.5, 14.0, 0, B1.to_string()),
        (0.75, 24.0, 1, B2.to_string()),
        (1.0, 26.0, 1, B2.to_string()),
    ];
    assert_eq!(series[0].1, expected);
    assert_eq!(svg_series(&spliced), ["B.V0+V1"]);
}

#[test]
fn single_build_chart_shows_only_the_latest_version() {
    let (store, graph) = setup();
    let modes = demo_problem_modes(&store, &graph, "runtime", "selectivity").unwrap();
    let series = provenance(&modes.single_build);
    assert_eq!(series.len(), 1);
    assert_eq!(series[0].0, "B.V1");
    assert!(series[0].1.iter().all(|p| p.2 == 1 && p.3 == B2));
    assert_eq!(svg_series(&modes.single_build), ["B.V1"]);
}

#[test]
fn full_report_shows_both_versions_and_their_crossing() {
    let (store, graph) = setup();
    let report = export_report(&store, &graph, "runtime", "selectivity").unwrap();
    let series = provenance(&report);
    let labels: Vec<&str> = series.iter().map(|s| s.0.as_str()).collect();
    assert_eq!(labels, ["B.V0", "B.V1"]);
    for (label, points) in &series {
        let v = if label.ends_with("V0") { 0 } else { 1 };
        assert!(points.iter().all(|p| p.2 == v), "{label}");
    }
    let at = |s: usize, sel: f64| series[s].1.iter().find(|p| p.0 == sel).map(|p| p.1);
    assert!(at(0, 0.75).unwrap() < at(1, 0.75).unwrap());
    assert!(at(0, 1.0).unwrap() > at(1, 1.0).unwrap());
    assert_eq!(svg_series(&report), ["B.V0", "B.V1"]);

    let modes = demo_problem_modes(&store, &graph, "runtime", "selectivity").unwrap();
    assert_eq!(modes.full, report);
}
