//! One PASS/FAIL line per acceptance criterion; exits nonzero if any fails.

mod common;

#[path = "../../core/tests/common/mod.rs"]
mod gen;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::{core_fixtures, demo_copy, demo_dir, fig2, replay_fig2, Scripted};
use gen::oracle;
use mvee::SourceState;
use mvee_core::diff::{apply, diff, Edit, EditScript};
use mvee_core::equivalence::Category;
use mvee_core::graph::BuildInput;
use mvee_core::region::{extract_region, MarkerConvention};
use mvee_core::results::{demo_problem_modes, export_report, Report};
use mvee_core::tree::{isomorphic, NodeId, TreeNode};
use mvee_core::{compare_regions, parse_asm_file, Outcome, ResultStore, VersionGraph};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Deserialize;
use serde_json::Value;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fig2_replay() -> Check {
    let s = Scripted::new();
    let reports = replay_fig2(&s);
    let script = fig2();
    let init = Outcome::Initial { version: 0 };
    let expected: [[Outcome; 3]; 5] = [
        [init, init, init],
        [Outcome::Modified { version: 1 }, Outcome::Unchanged { version: 0 }, Outcome::Unchanged { version: 0 }],
        [Outcome::Modified { version: 2 }, Outcome::Fork { version: 1, from: 0 }, Outcome::Unchanged { version: 0 }],
        [Outcome::Modified { version: 3 }, Outcome::Reverted { version: 0 }, Outcome::Fork { version: 1, from: 0 }],
        [Outcome::Unchanged { version: 3 }, Outcome::Modified { version: 2 }, Outcome::Unchanged { version: 1 }],
    ];
    ensure(reports.len() == 5, || format!("{} builds replayed", reports.len()))?;
    for (i, (report, want)) in reports.iter().zip(&expected).enumerate() {
        for (method, o) in ["M", "B0", "B1"].iter().zip(want) {
            ensure(report.outcomes.get(*method) == Some(o), || {
                format!("build {}: {method} is {:?}, expected {o:?}", i + 1, report.outcomes.get(*method))
            })?;
        }
        ensure(report.outcomes == script.builds[i].expect, || format!("build {} differs from its script", i + 1))?;
    }
    let p = s.project();
    let relevant = p.relevant(&p.load_graph().map_err(|e| e.to_string())?);
    let got: BTreeMap<&str, Vec<u32>> =
        relevant.iter().map(|(m, vs)| (m.as_str(), vs.iter().map(|v| v.ordinal).collect())).collect();
    let want = BTreeMap::from([("M", vec![3]), ("B0", vec![2]), ("B1", vec![0, 1])]);
    ensure(got == want, || format!("relevant sets {got:?}"))?;
    Ok("5 builds, outcome sequence exact, relevant M={V3} B0={V2} B1={V0,V1}".into())
}

#[derive(Deserialize)]
struct Case {
    name: String,
    category: String,
    expected: String,
    section: String,
}

const CORPUS_CATEGORIES: [&str; 10] = [
    "identical",
    "register_rename",
    "label_rename_consistent",
    "label_rename_inconsistent",
    "immediate_change",
    "memory_displacement_change",
    "instruction_insert_delete",
    "group_reorder",
    "intra_group_reorder",
    "call_group_reorder",
];

fn category_of(label: &str) -> Option<Category> {
    match label {
        "register_rename" => Some(Category::RegisterRenamed),
        "label_rename_consistent" => Some(Category::LabelRenameConsistent),
        "label_rename_inconsistent" => Some(Category::LabelRenameInconsistent),
        "immediate_change" => Some(Category::ImmediateChanged),
        "memory_displacement_change" => Some(Category::MemoryRefChanged),
        "instruction_insert_delete" => Some(Category::StructuralViolation),
        "group_reorder" => Some(Category::GroupReorder),
        "call_group_reorder" | "intra_group_reorder" => Some(Category::IntraGroupReorder),
        _ => None,
    }
}

fn classification_corpus() -> Check {
    let dir = core_fixtures().join("equivalence");
    let cases: Vec<Case> =
        serde_json::from_str(&fs::read_to_string(dir.join("cases.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    for cat in CORPUS_CATEGORIES {
        let n = cases.iter().filter(|c| c.category == cat).count();
        ensure(n >= 2, || format!("only {n} `{cat}` cases"))?;
    }
    ensure(cases.len() >= 14, || format!("only {} cases", cases.len()))?;
    let mut agree = 0;
    let mut oracle_agree = 0;
    let mut problems = Vec::new();
    for case in &cases {
        let load = |side: &str| {
            let text = fs::read_to_string(dir.join(&case.name).join(format!("{side}.s"))).unwrap();
            parse_asm_file(&text, side).unwrap()
        };
        let (a, b) = (load("a"), load("b"));
        let region = |f| {
            extract_region(f, &case.section, &MarkerConvention::default()).or_else(|e| e.into_region()).unwrap()
        };
        let v = compare_regions(&region(&a), &region(&b)).map_err(|e| e.to_string())?;
        let got = if v.is_equivalent() { "Equivalent" } else { "Anomaly" };
        let category_ok = category_of(&case.category).is_none_or(|c| v.classified_edits.iter().any(|e| e.category == c))
            && (case.category != "identical" || v.classified_edits.is_empty());
        if got == case.expected && category_ok {
            agree += 1;
        } else {
            problems.push(format!("{}: {got}", case.name));
        }
        let oracle_says = if oracle::equivalent(&a, &b, &case.section) { "Equivalent" } else { "Anomaly" };
        if oracle_says == case.expected {
            oracle_agree += 1;
        } else {
            problems.push(format!("{}: oracle says {oracle_says}", case.name));
        }
    }
    ensure(problems.is_empty(), || problems.join("; "))?;
    Ok(format!(
        "{} pairs over {} categories, {agree}/{} labels matched, oracle confirms {oracle_agree}/{}",
        cases.len(),
        CORPUS_CATEGORIES.len(),
        cases.len(),
        cases.len()
    ))
}

fn ids(node: &TreeNode) -> Vec<NodeId> {
    node.preorder().into_iter().map(|n| n.id).collect()
}

fn exactly_once(source: &TreeNode, script: &EditScript) -> Result<(), String> {
    let source_ids: HashSet<NodeId> = ids(source).into_iter().collect();
    let mut consumed = HashSet::new();
    let mut inserted = HashSet::new();
    for edit in &script.edits {
        match edit {
            Edit::Delete { node, .. } | Edit::Move { node, .. } => {
                if !consumed.insert(*node) {
                    return Err(format!("node {node} used twice"));
                }
            }
            Edit::Insert { node, .. } => {
                for id in ids(node) {
                    if source_ids.contains(&id) || !inserted.insert(id) {
                        return Err(format!("inserted node {id} is not fresh"));
                    }
                }
            }
            Edit::UpdateLiteral { .. } => {}
        }
    }
    Ok(())
}

fn fuzz_soundness() -> Check {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(0xacce97);
    let pairs = 1200;
    for i in 0..pairs {
        let groups = rng.gen_range(1..8);
        let source = gen::random_region(&mut rng, groups, 6);
        let target = if i % 10 == 9 {
            gen::random_region(&mut rng, 3, 5)
        } else {
            let mutations = rng.gen_range(1..5);
            gen::mutated(&mut rng, &source, mutations)
        };
        for (s, t) in [(&source, &target), (&target, &source)] {
            let script = diff(s, t);
            let result = apply(s, &script).map_err(|e| format!("pair {i}: {e}"))?;
            ensure(isomorphic(&result, t), || format!("pair {i}: apply(S, diff(S,T)) differs from T"))?;
            exactly_once(s, &script).map_err(|e| format!("pair {i}: {e}"))?;
            ensure(diff(s, s).is_empty(), || format!("pair {i}: diff(S,S) not empty"))?;
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("{pairs} pairs (both directions) sound in {:.1}s (limit 60s)", elapsed.as_secs_f64()))
}

fn diff_linearity() -> Check {
    let pair = |n: usize, seed: u64| {
        let mut rng = StdRng::seed_from_u64(seed);
        let s = gen::sized_region(&mut rng, n);
        let t = gen::mutated(&mut rng, &s, n / 50);
        (s, t)
    };
    let best = |runs: usize, s: &TreeNode, t: &TreeNode| {
        (0..runs)
            .map(|_| {
                let start = Instant::now();
                std::hint::black_box(diff(s, t));
                start.elapsed()
            })
            .min()
            .unwrap()
    };
    let (s1, t1) = pair(1_000, 1);
    let (s10, t10) = pair(10_000, 2);
    let small = best(5, &s1, &t1);
    let large = best(3, &s10, &t10);
    let ratio = large.as_secs_f64() / small.as_secs_f64();
    let summary = format!(
        "1k {:.2} ms, 10k {:.2} ms, ratio {ratio:.1} (limit 15), 10k limit 2s",
        small.as_secs_f64() * 1e3,
        large.as_secs_f64() * 1e3
    );
    ensure(ratio <= 15.0 && large < Duration::from_secs(2), || summary.clone())?;
    Ok(summary)
}

type Series = (String, Vec<(f64, u64, String)>);

fn points(report: &Report) -> Vec<Series> {
    let doc: Value = serde_json::from_str(&report.to_json()).unwrap();
    doc["series"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| {
            let pts = s["points"]
                .as_array()
                .unwrap()
                .iter()
                .map(|p| {
                    (p["param"].as_f64().unwrap(), p["version"].as_u64().unwrap(), p["buildId"].as_str().unwrap().to_string())
                })
                .collect();
            (s["label"].as_str().unwrap().to_string(), pts)
        })
        .collect()
}

fn problem_modes() -> Check {
    let dir = core_fixtures().join("problem_modes");
    let read = |n: &str| fs::read_to_string(dir.join(n)).unwrap();
    let mut graph = VersionGraph::with_methods(["B"]);
    let mut store = ResultStore::new();
    let (b1, b2) = ("20260301T090000", "20260302T090000");
    let build = |graph: &mut VersionGraph, id: &str, asm: &str| {
        let file = parse_asm_file(&read(asm), id).unwrap();
        let region = extract_region(&file, "B", &MarkerConvention::default()).unwrap();
        graph
            .record_build(id, BTreeMap::from([("B".to_string(), BuildInput { source_modified: false, region })]))
            .unwrap()
    };
    let first = build(&mut graph, b1, "b_v0.s");
    store.ingest_run(&read("run1.json"), b1, &first).map_err(|e| e.to_string())?;
    let second = build(&mut graph, b2, "b_v1.s");
    ensure(second["B"] == Outcome::Fork { version: 1, from: 0 }, || format!("second build {:?}", second["B"]))?;
    store.ingest_run(&read("run2.json"), b2, &second).map_err(|e| e.to_string())?;

    let modes = demo_problem_modes(&store, &graph, "runtime", "selectivity").map_err(|e| e.to_string())?;
    let spliced = points(&modes.spliced);
    ensure(spliced.len() == 1, || format!("spliced has {} series", spliced.len()))?;
    let versions: Vec<(f64, u64, &str)> = spliced[0].1.iter().map(|(p, v, b)| (*p, *v, b.as_str())).collect();
    ensure(versions == [(0.25, 0, b1), (0.5, 0, b1), (0.75, 1, b2), (1.0, 1, b2)], || format!("spliced points {versions:?}"))?;
    let single = points(&modes.single_build);
    ensure(single.len() == 1 && single[0].1.iter().all(|p| p.1 == 1 && p.2 == b2), || format!("single-build {single:?}"))?;
    let full = points(&export_report(&store, &graph, "runtime", "selectivity").map_err(|e| e.to_string())?);
    let labels: Vec<&str> = full.iter().map(|s| s.0.as_str()).collect();
    ensure(labels == ["B.V0", "B.V1"], || format!("full report series {labels:?}"))?;
    ensure(full.iter().all(|(l, pts)| pts.iter().all(|p| l.ends_with(&format!("V{}", p.1)))), || {
        "full report mixes versions within a series".into()
    })?;
    Ok(format!(
        "spliced: 1 series ({}) mixing V0+V1; single-build: 1 series ({}); full report: {}",
        spliced[0].0,
        single[0].0,
        labels.join(" + ")
    ))
}

fn mvee(dir: &Path, args: &[&str], asm_override: Option<&Path>) -> Result<i32, String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mvee"));
    cmd.arg("--project").arg(dir).args(args).env_remove("MVEE_ASM_OVERRIDE");
    if let Some(p) = asm_override {
        cmd.env("MVEE_ASM_OVERRIDE", p);
    }
    let out = cmd.output().map_err(|e| e.to_string())?;
    let code = out.status.code().ok_or("killed")?;
    if code == 1 {
        return Err(format!("`mvee {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(code)
}

fn end_to_end() -> Check {
    ensure(common::have_compiler(), || "no C++ compiler found".into())?;
    let tmp = demo_copy();
    let dir = tmp.path();
    for args in [&["init"][..], &["build"], &["run"], &["report", "--metric", "runtime", "--param", "selectivity"]] {
        let code = mvee(dir, args, None)?;
        ensure(code == 0, || format!("`mvee {}` exited {code}", args.join(" ")))?;
    }
    let state = dir.join("mvee");
    for f in ["graph.json", "results.jsonl", "report/runtime-selectivity.svg", "report/runtime-selectivity.json"] {
        ensure(state.join(f).is_file(), || format!("missing {f}"))?;
    }
    let records = fs::read_to_string(state.join("results.jsonl")).unwrap().lines().count();
    ensure(records > 0, || "no results stored".into())?;
    let code = mvee(dir, &["build"], Some(&demo_dir().join("fixtures/anomalous.s")))?;
    ensure(code == 2, || format!("anomalous build exited {code}"))?;
    let graph = VersionGraph::from_json(&fs::read_to_string(state.join("graph.json")).unwrap()).unwrap();
    let last = graph.build_ids().into_iter().max().unwrap();
    let outcomes = graph.build_outcomes(&last);
    ensure(outcomes["B0"] == Outcome::Fork { version: 1, from: 0 }, || format!("B0 is {:?}", outcomes["B0"]))?;
    let forks: BTreeSet<&String> = outcomes.iter().filter(|(_, o)| o.is_fork()).map(|(m, _)| m).collect();
    ensure(forks.len() == 1, || format!("forks {forks:?}"))?;
    Ok(format!("init/build/run/report exit 0 ({records} records, SVG written); anomalous .s exits 2 with Fork(B0.V1 from B0.V0)"))
}

fn persistence() -> Check {
    let s = Scripted::new();
    replay_fig2(&s);
    let p = s.project();
    let graph = fs::read_to_string(p.state.graph()).unwrap();
    let source = fs::read_to_string(p.state.source_state()).unwrap();
    let results = fs::read_to_string(p.state.results()).unwrap();
    ensure(VersionGraph::from_json(&graph).map_err(|e| e.to_string())?.to_json() == graph, || "graph.json".into())?;
    ensure(SourceState::from_json(&source).map_err(|e| e.to_string())?.to_json() == source, || "source-state.json".into())?;
    ensure(ResultStore::from_jsonl(&results).map_err(|e| e.to_string())?.to_jsonl() == results, || "results.jsonl".into())?;
    Ok(format!(
        "graph.json ({} B), source-state.json ({} B), results.jsonl ({} lines) byte-stable",
        graph.len(),
        source.len(),
        results.lines().count()
    ))
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("five-build version history replay", fig2_replay),
        ("equivalence classification corpus", classification_corpus),
        ("edit-script soundness fuzz", fuzz_soundness),
        ("diff linearity", diff_linearity),
        ("problem-mode charts", problem_modes),
        ("end-to-end demo pipeline", end_to_end),
        ("persistence round trips", persistence),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match result {
            Ok(detail) => println!("criterion {}: PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
