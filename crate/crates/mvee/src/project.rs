//! Build, run and report steps over a project directory and its state.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use mvee_core::asm::{parse_asm_file_at, ParseError};
use mvee_core::graph::{BuildInput, GraphError, PersistError};
use mvee_core::region::RegionError;
use mvee_core::results::{demo_problem_modes, IngestError, IngestSummary, Report, ReportError, StoreError};
use mvee_core::{compare_regions, export_report, extract_all, Outcome, ResultStore, Verdict, VersionGraph, VersionId};
use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, ProjectConfig, CONFIG_FILE};
use crate::state::{write_atomic, SourceState, SourceStateError, StateDir};

#[derive(Debug, Error)]
pub enum StateError {
    #[error("no MVEE state in {0}; run `mvee init` first")]
    NotInitialized(PathBuf),
    #[error("{0} is already initialized")]
    AlreadyInitialized(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Graph { path: PathBuf, source: PersistError },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Source(#[from] SourceStateError),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> StateError + '_ {
    move |source| StateError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error(transparent)]
    State(#[from] StateError),
    #[error("build command failed ({status}):\n{output}")]
    CommandFailed { status: String, output: String },
    #[error("build did not produce {0}")]
    MissingAsm(PathBuf),
    #[error("{path}:{}: {}", .error.line + 1, .error.reason)]
    Parse { path: PathBuf, error: ParseError },
    #[error("{0}")]
    Markers(RegionError),
    #[error("section `{0}` has no marks in the assembly")]
    SectionNotMarked(String),
    #[error("section `{section}`: {error}")]
    Region { section: String, error: RegionError },
    #[error("version graph tracks section `{0}`, which is no longer configured")]
    Unconfigured(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    State(#[from] StateError),
    #[error("no build recorded yet; run `mvee build` first")]
    NoBuild,
    #[error("run command failed ({status}):\n{output}")]
    CommandFailed { status: String, output: String },
    #[error("run did not produce {0}")]
    MissingResults(PathBuf),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

#[derive(Debug, Error)]
pub enum ReportFailure {
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Report(#[from] ReportError),
}

#[derive(Debug, Error)]
pub enum ProjectError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    State(#[from] StateError),
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Anomaly {
    pub section: String,
    pub version: u32,
    pub from: u32,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct BuildReport {
    pub build_id: String,
    pub outcomes: BTreeMap<String, Outcome>,
    pub modified: Vec<String>,
    pub anomalies: Vec<Anomaly>,
    pub warnings: Vec<String>,
}

impl BuildReport {
    pub fn has_anomaly(&self) -> bool {
        !self.anomalies.is_empty()
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RunReport {
    pub build_id: String,
    pub added: usize,
    pub replaced: usize,
    pub records: usize,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ReportFiles {
    pub series: Vec<String>,
    pub files: Vec<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct Project {
    pub root: PathBuf,
    pub config: ProjectConfig,
    pub state: StateDir,
}

fn shell(command: &str, dir: &Path, build_id: &str) -> Result<(), (String, String)> {
    let out = Command::new("sh")
        .arg("-c")
        .arg(command)
        .current_dir(dir)
        .env("MVEE_BUILD_ID", build_id)
        .output()
        .map_err(|e| ("not started".to_string(), e.to_string()))?;
    if out.status.success() {
        return Ok(());
    }
    let mut text = String::from_utf8_lossy(&out.stdout).into_owned();
    text.push_str(&String::from_utf8_lossy(&out.stderr));
    let tail: Vec<&str> = text.lines().rev().take(40).collect();
    let text = tail.into_iter().rev().collect::<Vec<_>>().join("\n");
    let status = out.status.code().map_or("killed by signal".to_string(), |c| format!("exit {c}"));
    Err((status, text))
}

impl Project {
    /// Loads `mvee.json` from `root`; `state_dir` overrides the configured one.
    pub fn open(root: impl Into<PathBuf>, state_dir: Option<PathBuf>) -> Result<Self, ProjectError> {
        let root = root.into();
        let config = ProjectConfig::load(&root.join(CONFIG_FILE))?;
        let dir = state_dir.unwrap_or_else(|| config.state_dir.clone());
        let state = StateDir::new(if dir.is_absolute() { dir } else { root.join(dir) });
        Ok(Self { root, config, state })
    }

    pub fn init(&self) -> Result<(), StateError> {
        if self.state.is_initialized() {
            return Err(StateError::AlreadyInitialized(self.state.root().to_path_buf()));
        }
        let graph = VersionGraph::with_methods(self.config.section_ids());
        let source = SourceState::capture(&self.root, &self.config.sections);
        fs::create_dir_all(self.state.asm_dir()).map_err(io(&self.state.asm_dir()))?;
        fs::create_dir_all(self.state.report_dir()).map_err(io(&self.state.report_dir()))?;
        self.save_graph(&graph)?;
        write_atomic(&self.state.results(), b"").map_err(io(&self.state.results()))?;
        self.save_source_state(&source)?;
        Ok(())
    }

    fn require_init(&self) -> Result<(), StateError> {
        if self.state.is_initialized() {
            Ok(())
        } else {
            Err(StateError::NotInitialized(self.state.root().to_path_buf()))
        }
    }

    pub fn load_graph(&self) -> Result<VersionGraph, StateError> {
        self.require_init()?;
        let path = self.state.graph();
        let text = fs::read_to_string(&path).map_err(io(&path))?;
        VersionGraph::from_json(&text).map_err(|source| StateError::Graph { path, source })
    }

    pub fn load_store(&self) -> Result<ResultStore, StateError> {
        self.require_init()?;
        let path = self.state.results();
        let text = fs::read_to_string(&path).map_err(io(&path))?;
        Ok(ResultStore::from_jsonl(&text)?)
    }

    pub fn load_source_state(&self) -> Result<SourceState, StateError> {
        self.require_init()?;
        let path = self.state.source_state();
        let text = fs::read_to_string(&path).map_err(io(&path))?;
        Ok(SourceState::from_json(&text)?)
    }

    fn save_graph(&self, graph: &VersionGraph) -> Result<(), StateError> {
        let path = self.state.graph();
        write_atomic(&path, graph.to_json().as_bytes()).map_err(io(&path))
    }

    fn save_source_state(&self, state: &SourceState) -> Result<(), StateError> {
        let path = self.state.source_state();
        write_atomic(&path, state.to_json().as_bytes()).map_err(io(&path))
    }

    fn new_build_id(graph: &VersionGraph) -> String {
        let base = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ").to_string();
        let last = graph.build_ids().into_iter().max().unwrap_or_default();
        if base > last {
            return base;
        }
        (1..).map(|n| format!("{last}-{n}")).find(|id| *id > last).unwrap()
    }

    /// Compiles, extracts the marked regions and records the build. State
    /// files are only written once every step has succeeded.
    pub fn build(&self) -> Result<BuildReport, BuildError> {
        let mut graph = self.load_graph()?;
        let previous = self.load_source_state()?;
        let build_id = Self::new_build_id(&graph);

        shell(&self.config.build_command, &self.root, &build_id)
            .map_err(|(status, output)| BuildError::CommandFailed { status, output })?;
        let asm_path = self.root.join(&self.config.asm_output);
        let text = fs::read_to_string(&asm_path).map_err(|_| BuildError::MissingAsm(asm_path.clone()))?;
        let stored = self.state.asm(&build_id);
        let file = parse_asm_file_at(&text, &build_id, stored.clone())
            .map_err(|error| BuildError::Parse { path: asm_path.clone(), error })?;

        let mut warnings = Vec::new();
        let mut extracted = extract_all(&file, &self.config.marker_prefixes).map_err(BuildError::Markers)?;
        for id in extracted.keys().filter(|id| !self.config.section_ids().any(|s| s == id.as_str())) {
            warnings.push(format!("section `{id}` is marked but not configured; ignored"));
        }
        for id in graph.methods.keys() {
            if !self.config.section_ids().any(|s| s == id) {
                return Err(BuildError::Unconfigured(id.clone()));
            }
        }

        let current = SourceState::capture(&self.root, &self.config.sections);
        let modified = current.modified_since(&previous);
        let mut inputs = BTreeMap::new();
        for id in self.config.section_ids() {
            let region = match extracted.remove(id) {
                None => return Err(BuildError::SectionNotMarked(id.to_string())),
                Some(Ok(region)) => region,
                Some(Err(e @ RegionError::EndUnreachable { .. })) => {
                    warnings.push(format!("section `{id}`: {e}; using the instructions reached"));
                    e.into_region().unwrap()
                }
                Some(Err(error)) => return Err(BuildError::Region { section: id.to_string(), error }),
            };
            graph.register_method(id);
            let source_modified = modified.iter().any(|m| m == id);
            inputs.insert(id.to_string(), BuildInput { source_modified, region });
        }
        let outcomes = graph.record_build(&build_id, inputs)?;

        let mut anomalies = Vec::new();
        for (section, outcome) in &outcomes {
            if let Outcome::Fork { version, from } = *outcome {
                let history = graph.history(section)?;
                let old = &history.node(from).expect("fork source exists").region_snapshot;
                let new = &history.node(version).expect("fork exists").region_snapshot;
                let verdict = compare_regions(old, new).expect("same section");
                anomalies.push(Anomaly { section: section.clone(), version, from, verdict });
            }
        }

        fs::create_dir_all(self.state.asm_dir()).map_err(|e| StateError::Io { path: self.state.asm_dir(), source: e })?;
        write_atomic(&stored, text.as_bytes()).map_err(|e| StateError::Io { path: stored.clone(), source: e })?;
        self.save_graph(&graph)?;
        self.save_source_state(&current)?;
        Ok(BuildReport { build_id, outcomes, modified, anomalies, warnings })
    }

    /// Runs the benchmark and files its results under the latest build's versions.
    pub fn run(&self) -> Result<RunReport, RunError> {
        let graph = self.load_graph()?;
        let mut store = self.load_store()?;
        let build_id = graph.build_ids().into_iter().max().ok_or(RunError::NoBuild)?;
        let outcomes = graph.build_outcomes(&build_id);

        let results_path = self.root.join(&self.config.results_output);
        // a stale results file from an earlier run must not be ingested again
        let _ = fs::remove_file(&results_path);
        shell(&self.config.run_command, &self.root, &build_id)
            .map_err(|(status, output)| RunError::CommandFailed { status, output })?;
        let text = fs::read_to_string(&results_path).map_err(|_| RunError::MissingResults(results_path.clone()))?;
        let IngestSummary { added, replaced } = store.ingest_run(&text, &build_id, &outcomes)?;
        let path = self.state.results();
        write_atomic(&path, store.to_jsonl().as_bytes()).map_err(|e| StateError::Io { path, source: e })?;
        Ok(RunReport { build_id, added, replaced, records: store.len() })
    }

    pub fn report_data(&self, metric: &str, param: &str) -> Result<Report, ReportFailure> {
        Ok(export_report(&self.load_store()?, &self.load_graph()?, metric, param)?)
    }

    /// Writes the report (and with `problem_modes` the two misleading
    /// variants) as SVG plus JSON under the report directory.
    pub fn report(&self, metric: &str, param: &str, problem_modes: bool) -> Result<ReportFiles, ReportFailure> {
        let store = self.load_store()?;
        let graph = self.load_graph()?;
        let mut reports = Vec::new();
        if problem_modes {
            let modes = demo_problem_modes(&store, &graph, metric, param)?;
            reports.push(("", modes.full));
            reports.push(("-spliced", modes.spliced));
            reports.push(("-single-build", modes.single_build));
        } else {
            reports.push(("", export_report(&store, &graph, metric, param)?));
        }
        let stem = format!("{}-{}", file_safe(metric), file_safe(param));
        let dir = self.state.report_dir();
        let mut files = Vec::new();
        for (suffix, report) in &reports {
            for (ext, body) in [("svg", &report.svg), ("json", &report.to_json())] {
                let path = dir.join(format!("{stem}{suffix}.{ext}"));
                write_atomic(&path, body.as_bytes()).map_err(|e| StateError::Io { path: path.clone(), source: e })?;
                files.push(path);
            }
        }
        let series = reports[0].1.series.iter().map(|s| s.label.clone()).collect();
        Ok(ReportFiles { series, files })
    }

    pub fn relevant(&self, graph: &VersionGraph) -> BTreeMap<String, Vec<VersionId>> {
        graph
            .methods
            .keys()
            .map(|m| (m.clone(), graph.relevant_versions(m).unwrap_or_default().into_iter().collect()))
            .collect()
    }
}

fn file_safe(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Terminal summary of a build: outcomes, then each anomaly's violating edits
/// with `.s` line references.
pub fn render_build_report(report: &BuildReport, state: &StateDir, graph: &VersionGraph) -> String {
    let mut out = format!("build {}\n", report.build_id);
    let width = report.outcomes.keys().map(|k| k.len()).max().unwrap_or(0);
    for (section, outcome) in &report.outcomes {
        let note = if report.modified.contains(section) { "  (source modified)" } else { "" };
        out.push_str(&format!("  {section:width$}  {}{note}\n", outcome.describe(section)));
    }
    for w in &report.warnings {
        out.push_str(&format!("warning: {w}\n"));
    }
    for a in &report.anomalies {
        let old = VersionId::new(&a.section, a.from);
        let new = VersionId::new(&a.section, a.version);
        let old_build = graph
            .history(&a.section)
            .ok()
            .and_then(|h| h.node(a.from))
            .map(|n| n.created_build.clone())
            .unwrap_or_default();
        out.push_str(&format!(
            "anomaly in section {}: {new} is not equivalent to {old}\n",
            a.section
        ));
        let old_file = state.asm(&old_build);
        let new_file = state.asm(&report.build_id);
        let old_text = fs::read_to_string(&old_file).unwrap_or_default();
        let new_text = fs::read_to_string(&new_file).unwrap_or_default();
        let mut by_line: BTreeMap<(Option<usize>, Option<usize>), BTreeSet<&str>> = BTreeMap::new();
        for e in a.verdict.violations() {
            by_line.entry((e.target_line, e.source_line)).or_default().insert(e.category.name());
        }
        for ((target, source), categories) in by_line {
            let at = |file: &Path, line: Option<usize>| {
                line.map(|l| format!("{}:{}", file.display(), l + 1)).unwrap_or_else(|| "-".into())
            };
            let text = match (target, source) {
                (Some(l), _) => new_text.lines().nth(l),
                (None, Some(l)) => old_text.lines().nth(l),
                _ => None,
            };
            out.push_str(&format!(
                "  {} -> {}  {}  [{}]\n",
                at(&old_file, source),
                at(&new_file, target),
                text.unwrap_or("").trim().replace('\t', " "),
                categories.into_iter().collect::<Vec<_>>().join(", ")
            ));
        }
    }
    out
}
