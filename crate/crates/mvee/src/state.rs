//! The state directory: graph, result store, source digests, assembly copies
//! and report exports. Every file is replaced by write-then-rename.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::SectionConfig;

pub const SOURCE_STATE_SCHEMA: u32 = 1;

#[derive(Debug, Clone)]
pub struct StateDir {
    root: PathBuf,
}

impl StateDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn graph(&self) -> PathBuf {
        self.root.join("graph.json")
    }

    pub fn results(&self) -> PathBuf {
        self.root.join("results.jsonl")
    }

    pub fn source_state(&self) -> PathBuf {
        self.root.join("source-state.json")
    }

    pub fn asm_dir(&self) -> PathBuf {
        self.root.join("asm")
    }

    pub fn asm(&self, build_id: &str) -> PathBuf {
        self.asm_dir().join(format!("{build_id}.s"))
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }

    pub fn is_initialized(&self) -> bool {
        self.graph().is_file() && self.results().is_file() && self.source_state().is_file()
    }
}

/// Writes `contents` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("state");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

#[derive(Debug, Error)]
pub enum SourceStateError {
    #[error("source state is malformed: {0}")]
    Malformed(String),
    #[error("source state schema {found} is not supported (expected {SOURCE_STATE_SCHEMA})")]
    SchemaMismatch { found: u32 },
}

/// Digest of each section's configured source files at the last build.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceState {
    pub schema: u32,
    pub sections: BTreeMap<String, String>,
}

impl SourceState {
    pub fn new() -> Self {
        Self { schema: SOURCE_STATE_SCHEMA, sections: BTreeMap::new() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("source state serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SourceStateError> {
        let state: SourceState = serde_json::from_str(text).map_err(|e| SourceStateError::Malformed(e.to_string()))?;
        if state.schema != SOURCE_STATE_SCHEMA {
            return Err(SourceStateError::SchemaMismatch { found: state.schema });
        }
        Ok(state)
    }

    /// Digests of all configured sections, files resolved against `project`.
    pub fn capture(project: &Path, sections: &[SectionConfig]) -> Self {
        let mut state = Self::new();
        for s in sections {
            state.sections.insert(s.id.clone(), digest_files(project, &s.source_files));
        }
        state
    }

    /// Sections whose digest differs from `previous`. A section with no
    /// previous digest counts as modified.
    pub fn modified_since(&self, previous: &SourceState) -> Vec<String> {
        self.sections
            .iter()
            .filter(|(id, d)| previous.sections.get(*id) != Some(*d))
            .map(|(id, _)| id.clone())
            .collect()
    }
}

/// Content digest over the file list; a missing file hashes differently from
/// an empty one.
pub fn digest_files(project: &Path, files: &[PathBuf]) -> String {
    let mut h = Sha256::new();
    for f in files {
        h.update(f.to_string_lossy().as_bytes());
        h.update([0]);
        match fs::read(project.join(f)) {
            Ok(bytes) => {
                h.update(b"present");
                h.update((bytes.len() as u64).to_le_bytes());
                h.update(&bytes);
            }
            Err(_) => h.update(b"missing"),
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
