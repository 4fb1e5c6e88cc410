//! Throwaway projects for driving the orchestrator: a copy of the bundled C++
//! demo, and a scripted project whose "compiler" copies prepared `.s` files.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use mvee::{BuildReport, Project};
use mvee_core::Outcome;
use serde::Deserialize;
use tempfile::TempDir;

pub fn demo_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("demo")
}

pub fn core_fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

pub fn copy_tree(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for entry in fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let name = entry.file_name();
        if name == "build" || name == "mvee" {
            continue;
        }
        let dest = to.join(&name);
        if entry.file_type().unwrap().is_dir() {
            copy_tree(&entry.path(), &dest);
        } else {
            fs::copy(entry.path(), &dest).unwrap();
        }
    }
}

/// Fresh copy of the demo project.
pub fn demo_copy() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    copy_tree(&demo_dir(), dir.path());
    dir
}

pub fn have_compiler() -> bool {
    std::process::Command::new(std::env::var("CXX").unwrap_or_else(|_| "g++".into()))
        .arg("--version")
        .output()
        .is_ok_and(|o| o.status.success())
}

pub const SCRIPTED_CONFIG: &str = r#"{
  "build_command": "cp next.s out.s",
  "asm_output": "out.s",
  "run_command": "cp results.json mvee-results.json",
  "results_output": "mvee-results.json",
  "sections": [
    {"id": "M", "source_files": ["src/M.txt"]},
    {"id": "B0", "source_files": ["src/B0.txt"]},
    {"id": "B1", "source_files": ["src/B1.txt"]}
  ]
}
"#;

/// Project whose build copies `next.s` to the assembly output.
pub struct Scripted {
    pub dir: TempDir,
}

impl Scripted {
    pub fn new() -> Self {
        Self::with_config(SCRIPTED_CONFIG)
    }

    pub fn with_config(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("mvee.json"), config).unwrap();
        fs::create_dir_all(dir.path().join("src")).unwrap();
        for id in ["M", "B0", "B1"] {
            fs::write(dir.path().join(format!("src/{id}.txt")), format!("{id} v0\n")).unwrap();
        }
        Self { dir }
    }

    pub fn root(&self) -> &Path {
        self.dir.path()
    }

    pub fn project(&self) -> Project {
        Project::open(self.root(), None).unwrap()
    }

    pub fn stage(&self, asm: &Path) {
        fs::copy(asm, self.root().join("next.s")).unwrap();
    }

    pub fn modify(&self, section: &str) {
        let path = self.root().join(format!("src/{section}.txt"));
        let mut text = fs::read_to_string(&path).unwrap();
        text.push_str("edit\n");
        fs::write(path, text).unwrap();
    }

    pub fn set_results(&self, json: &str) {
        fs::write(self.root().join("results.json"), json).unwrap();
    }
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Fig2 {
    pub methods: Vec<String>,
    pub builds: Vec<Fig2Build>,
    pub relevant: BTreeMap<String, Vec<u32>>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Fig2Build {
    pub build_id: String,
    pub asm: String,
    pub modified: Vec<String>,
    pub expect: BTreeMap<String, Outcome>,
}

pub fn fig2() -> Fig2 {
    let text = fs::read_to_string(core_fixtures().join("fig2/builds.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

/// Results for every section at two selectivities.
pub fn results_json(scale: f64) -> String {
    let mut rows = Vec::new();
    for section in ["M", "B0", "B1"] {
        for (i, sel) in [0.5, 1.0].iter().enumerate() {
            rows.push(format!(
                r#"{{"section": "{section}", "params": {{"selectivity": {sel}}}, "metric": "runtime", "value": {}, "unit": "ms"}}"#,
                scale * (i + 1) as f64
            ));
        }
    }
    format!("[{}]", rows.join(",\n"))
}

/// Drives the five scripted builds through the project, editing sources
/// where the script says a section was modified, and running after each.
pub fn replay_fig2(s: &Scripted) -> Vec<BuildReport> {
    let script = fig2();
    let project = s.project();
    project.init().unwrap();
    let mut reports = Vec::new();
    for (i, b) in script.builds.iter().enumerate() {
        for m in &b.modified {
            s.modify(m);
        }
        s.stage(&core_fixtures().join("fig2").join(&b.asm));
        reports.push(project.build().unwrap());
        s.set_results(&results_json(i as f64 + 1.0));
        project.run().unwrap();
    }
    reports
}
