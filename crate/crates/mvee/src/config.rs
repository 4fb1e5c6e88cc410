//! `mvee.json`: what to build, what to run and which sections to watch.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use mvee_core::MarkerConvention;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const CONFIG_FILE: &str = "mvee.json";
pub const DEFAULT_STATE_DIR: &str = "mvee";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionConfig {
    pub id: String,
    /// Files whose content decides whether the section's source changed.
    pub source_files: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectConfig {
    pub build_command: String,
    pub asm_output: PathBuf,
    pub run_command: String,
    pub results_output: PathBuf,
    pub sections: Vec<SectionConfig>,
    pub state_dir: PathBuf,
    pub marker_prefixes: MarkerConvention,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldIssue {
    pub field: String,
    pub reason: String,
}

impl fmt::Display for FieldIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.reason)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path} is not valid JSON: {reason}")]
    Syntax { path: PathBuf, reason: String },
    #[error("invalid configuration:\n{}", list(.0))]
    Invalid(Vec<FieldIssue>),
}

fn list(issues: &[FieldIssue]) -> String {
    issues.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n")
}

impl ConfigError {
    pub fn issues(&self) -> &[FieldIssue] {
        match self {
            ConfigError::Invalid(issues) => issues,
            _ => &[],
        }
    }
}

struct Checker {
    issues: Vec<FieldIssue>,
}

impl Checker {
    fn fail(&mut self, field: impl Into<String>, reason: impl Into<String>) {
        self.issues.push(FieldIssue { field: field.into(), reason: reason.into() });
    }

    fn string(&mut self, obj: &serde_json::Map<String, Value>, field: &str, required: bool) -> Option<String> {
        match obj.get(field) {
            None | Some(Value::Null) if required => {
                self.fail(field, "is required");
                None
            }
            None | Some(Value::Null) => None,
            Some(Value::String(s)) if required && s.trim().is_empty() => {
                self.fail(field, "must not be empty");
                None
            }
            Some(Value::String(s)) => Some(s.clone()),
            Some(_) => {
                self.fail(field, "must be a string");
                None
            }
        }
    }
}

impl ProjectConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text).map_err(|e| match e {
            ConfigError::Syntax { reason, .. } => ConfigError::Syntax { path: path.to_path_buf(), reason },
            other => other,
        })
    }

    /// Parses and validates, reporting every bad field at once.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let doc: Value = serde_json::from_str(text)
            .map_err(|e| ConfigError::Syntax { path: PathBuf::from(CONFIG_FILE), reason: e.to_string() })?;
        let Value::Object(obj) = doc else {
            return Err(ConfigError::Invalid(vec![FieldIssue {
                field: "$".into(),
                reason: "must be an object".into(),
            }]));
        };
        let mut c = Checker { issues: Vec::new() };
        let build_command = c.string(&obj, "build_command", true);
        let asm_output = c.string(&obj, "asm_output", true);
        let run_command = c.string(&obj, "run_command", true);
        let results_output = c.string(&obj, "results_output", true);
        let state_dir = c.string(&obj, "state_dir", false).unwrap_or_else(|| DEFAULT_STATE_DIR.into());

        let mut sections = Vec::new();
        match obj.get("sections") {
            Some(Value::Array(items)) if items.is_empty() => c.fail("sections", "must list at least one section"),
            Some(Value::Array(items)) => {
                let mut seen = HashSet::new();
                for (i, item) in items.iter().enumerate() {
                    let at = format!("sections[{i}]");
                    let Value::Object(s) = item else {
                        c.fail(at, "must be an object");
                        continue;
                    };
                    let id = match s.get("id") {
                        Some(Value::String(id)) if valid_id(id) => Some(id.clone()),
                        Some(Value::String(_)) => {
                            c.fail(format!("{at}.id"), "must be a non-empty identifier ([A-Za-z0-9_])");
                            None
                        }
                        _ => {
                            c.fail(format!("{at}.id"), "is required");
                            None
                        }
                    };
                    if let Some(id) = &id {
                        if !seen.insert(id.clone()) {
                            c.fail(format!("{at}.id"), format!("duplicate section id `{id}`"));
                        }
                    }
                    let files = match s.get("source_files") {
                        None => Vec::new(),
                        Some(Value::Array(fs)) if fs.iter().all(Value::is_string) => {
                            fs.iter().map(|f| PathBuf::from(f.as_str().unwrap())).collect()
                        }
                        Some(_) => {
                            c.fail(format!("{at}.source_files"), "must be an array of paths");
                            Vec::new()
                        }
                    };
                    if let Some(id) = id {
                        sections.push(SectionConfig { id, source_files: files });
                    }
                }
            }
            Some(_) => c.fail("sections", "must be an array"),
            None => c.fail("sections", "is required"),
        }

        let marker_prefixes = match obj.get("marker_prefixes") {
            None | Some(Value::Null) => MarkerConvention::default(),
            Some(Value::Object(m)) => {
                let default = MarkerConvention::default();
                let begin = c.string(m, "begin", false).unwrap_or(default.begin_prefix);
                let end = c.string(m, "end", false).unwrap_or(default.end_prefix);
                MarkerConvention::new(&begin, &end).unwrap_or_else(|e| {
                    c.fail("marker_prefixes", e.to_string());
                    MarkerConvention::default()
                })
            }
            Some(_) => {
                c.fail("marker_prefixes", "must be an object with `begin` and `end`");
                MarkerConvention::default()
            }
        };

        const KNOWN: &[&str] = &[
            "build_command",
            "asm_output",
            "run_command",
            "results_output",
            "sections",
            "state_dir",
            "marker_prefixes",
        ];
        for key in obj.keys().filter(|k| !KNOWN.contains(&k.as_str())) {
            c.fail(key.clone(), "unknown field");
        }

        if !c.issues.is_empty() {
            return Err(ConfigError::Invalid(c.issues));
        }
        Ok(ProjectConfig {
            build_command: build_command.unwrap(),
            asm_output: asm_output.unwrap().into(),
            run_command: run_command.unwrap(),
            results_output: results_output.unwrap().into(),
            sections,
            state_dir: state_dir.into(),
            marker_prefixes,
        })
    }

    pub fn section_ids(&self) -> impl Iterator<Item = &str> {
        self.sections.iter().map(|s| s.id.as_str())
    }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}
