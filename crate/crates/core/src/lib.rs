//! Assembly-level build anomaly detection and multi-version result tracking.
//!
//! Pipeline: [`asm`] parses `gcc -S` output, [`region`] extracts the marked
//! sections as fallthrough groups, [`tree`] and [`diff`] compute an edit script
//! between two builds, [`equivalence`] classifies it, [`graph`] tracks the
//! resulting versions and [`results`] keeps measurements per version.

pub mod asm;
pub mod chart;
pub mod diff;
pub mod equivalence;
pub mod graph;
pub mod region;
pub mod results;
pub mod tree;

pub use asm::{parse_asm_file, AsmFile};
pub use diff::{apply, diff, Edit, EditScript};
pub use equivalence::{compare_regions, Category, Verdict, VerdictResult};
pub use graph::{BuildInput, Outcome, VersionGraph, VersionId};
pub use region::{extract_all, extract_region, MarkedRegion, MarkerConvention};
pub use results::{demo_problem_modes, export_report, ResultStore};
pub use tree::{build_tree, TreeNode};
