//! Classification of edit scripts against the region equivalence rules.
//!
//! Two regions are equivalent when they contain the same instructions, operate
//! on the same data and have the same control flow. Register assignment and
//! indirect jumps are ignored. Each edit of the diff between the two region
//! trees is classified by one of three checks: structural (inserts, deletes,
//! mnemonic changes), updates (operand literals) and reorders (moves).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::diff::{apply, diff, Edit, EditScript};
use crate::region::MarkedRegion;
use crate::tree::{
    build_tree, node_digest, Digest128, MemoryPart, NodeId, NodeKind, TreeNode, TAG_REGISTER_BLIND,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Category {
    StructuralViolation,
    ImmediateChanged,
    MemoryRefChanged,
    LabelRenameConsistent,
    LabelRenameInconsistent,
    RegisterRenamed,
    GroupReorder,
    IntraGroupReorder,
}

impl Category {
    pub const ALL: [Category; 8] = [
        Category::StructuralViolation,
        Category::ImmediateChanged,
        Category::MemoryRefChanged,
        Category::LabelRenameConsistent,
        Category::LabelRenameInconsistent,
        Category::RegisterRenamed,
        Category::GroupReorder,
        Category::IntraGroupReorder,
    ];

    pub fn is_violating(self) -> bool {
        matches!(
            self,
            Category::StructuralViolation
                | Category::ImmediateChanged
                | Category::MemoryRefChanged
                | Category::LabelRenameInconsistent
                | Category::IntraGroupReorder
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::StructuralViolation => "StructuralViolation",
            Category::ImmediateChanged => "ImmediateChanged",
            Category::MemoryRefChanged => "MemoryRefChanged",
            Category::LabelRenameConsistent => "LabelRenameConsistent",
            Category::LabelRenameInconsistent => "LabelRenameInconsistent",
            Category::RegisterRenamed => "RegisterRenamed",
            Category::GroupReorder => "GroupReorder",
            Category::IntraGroupReorder => "IntraGroupReorder",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ClassifiedEdit {
    #[serde(skip)]
    pub edit: Edit,
    /// Position of the edit in its script.
    #[serde(skip)]
    pub index: usize,
    pub category: Category,
    pub violating: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_line: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_line: Option<usize>,
    pub detail: String,
}

impl ClassifiedEdit {
    fn new(index: usize, edit: &Edit, category: Category, detail: String) -> Self {
        Self {
            edit: edit.clone(),
            index,
            category,
            violating: category.is_violating(),
            source_line: None,
            target_line: None,
            detail,
        }
    }

    pub fn display_color_key(&self) -> &'static str {
        self.category.name()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum VerdictResult {
    Equivalent,
    Anomaly,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Verdict {
    #[serde(rename = "section")]
    pub section_id: String,
    #[serde(rename = "sourceBuild")]
    pub source_build_id: String,
    #[serde(rename = "targetBuild")]
    pub target_build_id: String,
    pub result: VerdictResult,
    #[serde(rename = "edits")]
    pub classified_edits: Vec<ClassifiedEdit>,
    #[serde(skip)]
    pub script: EditScript,
}

impl Verdict {
    pub fn is_equivalent(&self) -> bool {
        self.result == VerdictResult::Equivalent
    }

    pub fn violations(&self) -> impl Iterator<Item = &ClassifiedEdit> {
        self.classified_edits.iter().filter(|e| e.violating)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EquivalenceError {
    #[error("cannot compare section `{source_section}` with section `{target_section}`")]
    SectionMismatch { source_section: String, target_section: String },
}

/// Text of a node for edit details: instructions render as assembly.
pub fn render_node(node: &TreeNode) -> String {
    fn operand(node: &TreeNode) -> String {
        if node.kind != NodeKind::OperandMemory {
            return node.literal.clone().unwrap_or_default();
        }
        let part = |p: MemoryPart| {
            node.children
                .iter()
                .find(|c| c.kind == NodeKind::OperandMemoryPart(p))
                .and_then(|c| c.literal.clone())
        };
        let mut out = String::new();
        if let Some(seg) = part(MemoryPart::Segment) {
            out.push_str(&seg);
            out.push(':');
        }
        out.push_str(&part(MemoryPart::Displacement).unwrap_or_default());
        let (base, index) = (part(MemoryPart::Base), part(MemoryPart::Index));
        if base.is_some() || index.is_some() {
            out.push('(');
            out.push_str(&base.unwrap_or_default());
            if let Some(index) = index {
                out.push(',');
                out.push_str(&index);
                if let Some(scale) = part(MemoryPart::Scale) {
                    out.push(',');
                    out.push_str(&scale);
                }
            }
            out.push(')');
        }
        out
    }
    match node.kind {
        NodeKind::Instruction => {
            let mnemonic = node.children.first().and_then(|m| m.literal.clone()).unwrap_or_default();
            let ops: Vec<String> = node.children.iter().skip(1).map(operand).collect();
            if ops.is_empty() {
                mnemonic
            } else {
                format!("{mnemonic} {}", ops.join(", "))
            }
        }
        NodeKind::Group => {
            let parts: Vec<String> = node
                .children
                .iter()
                .map(|c| match c.kind {
                    NodeKind::LabelDef => format!("{}:", c.literal.as_deref().unwrap_or("")),
                    _ => render_node(c),
                })
                .collect();
            format!("[{}]", parts.join("; "))
        }
        NodeKind::Region => format!("region of {} groups", node.children.len()),
        NodeKind::LabelDef => format!("{}:", node.literal.as_deref().unwrap_or("")),
        _ => operand(node),
    }
}

fn node_index(tree: &TreeNode) -> HashMap<NodeId, &TreeNode> {
    tree.preorder().into_iter().map(|n| (n.id, n)).collect()
}

/// Step 1: inserted or deleted nodes, and changed mnemonics.
pub fn check_structural(script: &EditScript, source: &TreeNode) -> Vec<ClassifiedEdit> {
    let nodes = node_index(source);
    let describe = |id: &NodeId| nodes.get(id).map(|n| render_node(n)).unwrap_or_default();
    script
        .edits
        .iter()
        .enumerate()
        .filter_map(|(i, edit)| {
            let detail = match edit {
                Edit::Insert { node, .. } => format!("insert {} `{}`", node.kind, render_node(node)),
                Edit::Delete { node, kind } => format!("delete {kind} `{}`", describe(node)),
                Edit::UpdateLiteral { kind: NodeKind::Mnemonic, old, new, .. } => {
                    format!("instruction `{old}` became `{new}`")
                }
                _ => return None,
            };
            Some(ClassifiedEdit::new(i, edit, Category::StructuralViolation, detail))
        })
        .collect()
}

fn is_local_label(name: &str) -> bool {
    name.starts_with(".L")
}

/// Step 2: literal updates of operands and labels.
pub fn check_updates(script: &EditScript, source: &TreeNode, target: &TreeNode) -> Vec<ClassifiedEdit> {
    let _ = target;
    let mut out = Vec::new();
    let mut label_updates: Vec<(usize, &Edit, &str, &str)> = Vec::new();
    for (i, edit) in script.edits.iter().enumerate() {
        let Edit::UpdateLiteral { kind, old, new, .. } = edit else { continue };
        let detail = format!("{kind} `{old}` became `{new}`");
        let category = match kind {
            NodeKind::OperandImmediate => Category::ImmediateChanged,
            NodeKind::OperandMemoryPart(MemoryPart::Base | MemoryPart::Index)
            | NodeKind::OperandRegister => Category::RegisterRenamed,
            NodeKind::OperandMemoryPart(_) => Category::MemoryRefChanged,
            NodeKind::LabelDef | NodeKind::OperandLabelRef => {
                label_updates.push((i, edit, old, new));
                continue;
            }
            _ => continue,
        };
        out.push(ClassifiedEdit::new(i, edit, category, detail));
    }
    if label_updates.is_empty() {
        return out;
    }

    let mut occurrences: HashMap<&str, usize> = HashMap::new();
    let mut defined: HashSet<&str> = HashSet::new();
    for n in source.preorder() {
        if n.kind.is_label() {
            let name = n.literal.as_deref().unwrap_or("");
            *occurrences.entry(name).or_default() += 1;
            if n.kind == NodeKind::LabelDef {
                defined.insert(name);
            }
        }
    }

    let mut renames: BTreeMap<&str, HashSet<&str>> = BTreeMap::new();
    let mut update_counts: HashMap<&str, usize> = HashMap::new();
    let mut preimages: HashMap<&str, HashSet<&str>> = HashMap::new();
    for &(_, _, old, new) in &label_updates {
        renames.entry(old).or_default().insert(new);
        *update_counts.entry(old).or_default() += 1;
        preimages.entry(new).or_default().insert(old);
    }
    let consistent = |old: &str| -> Result<(), String> {
        let targets = &renames[old];
        if targets.len() > 1 {
            let mut names: Vec<&str> = targets.iter().copied().collect();
            names.sort_unstable();
            return Err(format!("`{old}` renamed to several names: {}", names.join(", ")));
        }
        let new = *targets.iter().next().unwrap();
        if preimages[new].len() > 1 {
            return Err(format!("several labels renamed to `{new}`"));
        }
        if occurrences.contains_key(new) && !renames.contains_key(new) {
            return Err(format!("`{new}` already names another label"));
        }
        if update_counts[old] != occurrences.get(old).copied().unwrap_or(0) {
            return Err(format!("not every occurrence of `{old}` was renamed"));
        }
        if !defined.contains(old) && !is_local_label(old) {
            return Err(format!("`{old}` refers to an external symbol"));
        }
        Ok(())
    };
    for (i, edit, old, new) in label_updates {
        let (category, detail) = match consistent(old) {
            Ok(()) => (Category::LabelRenameConsistent, format!("label `{old}` renamed to `{new}`")),
            Err(why) => (Category::LabelRenameInconsistent, format!("label `{old}` became `{new}`: {why}")),
        };
        out.push(ClassifiedEdit::new(i, edit, category, detail));
    }
    out.sort_by_key(|e| e.index);
    out
}

/// Next group after every fallthrough group, `None` meaning the region end.
fn fallthrough_successors(tree: &TreeNode) -> HashMap<NodeId, Option<NodeId>> {
    let groups = &tree.children;
    groups
        .iter()
        .enumerate()
        .filter(|(_, g)| g.group_falls_through())
        .map(|(i, g)| (g.id, groups.get(i + 1).map(|n| n.id)))
        .collect()
}

/// Step 3: moved nodes.
pub fn check_reorders(script: &EditScript, source: &TreeNode, target: &TreeNode) -> Vec<ClassifiedEdit> {
    let _ = target;
    let moves: Vec<(usize, &Edit)> = script
        .edits
        .iter()
        .enumerate()
        .filter(|(_, e)| matches!(e, Edit::Move { .. }))
        .collect();
    if moves.is_empty() {
        return Vec::new();
    }

    let result = apply(source, script).ok();

    // Groups whose layout successor matters and changed, plus the groups they
    // used to or now continue into.
    let tied: Option<HashSet<NodeId>> = result.as_ref().map(|result| {
        let before = fallthrough_successors(source);
        let after = fallthrough_successors(result);
        let mut tied = HashSet::new();
        for (group, succ) in &before {
            if let Some(now) = after.get(group) {
                if now != succ {
                    tied.insert(*group);
                    tied.extend(succ.iter().chain(now.iter()).copied());
                }
            }
        }
        tied
    });

    // A node moved between parents that are unchanged up to register names only
    // exchanged registers, e.g. two instructions using different registers.
    let src_norm = register_blind_digests(source);
    let res_norm = result.as_ref().map(register_blind_digests).unwrap_or_default();
    let src_parent = parents(source);
    let names_only = |node: &NodeId, new_parent: &NodeId| {
        let unchanged = |p: &NodeId| {
            src_norm.get(p).is_some_and(|h| res_norm.get(p) == Some(h))
        };
        src_parent.get(node).is_some_and(unchanged) && unchanged(new_parent)
    };

    let nodes = node_index(source);
    moves
        .into_iter()
        .map(|(i, edit)| {
            let Edit::Move { node, kind, parent, .. } = edit else { unreachable!() };
            let text = nodes.get(node).map(|n| render_node(n)).unwrap_or_default();
            let (category, detail) = if *kind == NodeKind::Group {
                let position_dependent = tied.as_ref().is_none_or(|t| t.contains(node));
                if position_dependent {
                    (
                        Category::IntraGroupReorder,
                        format!("group {text} moved and changes where execution falls through"),
                    )
                } else {
                    (Category::GroupReorder, format!("group {text} moved"))
                }
            } else if names_only(node, parent) {
                (
                    Category::RegisterRenamed,
                    format!("{kind} `{text}` moved; the code is unchanged up to register names"),
                )
            } else {
                (Category::IntraGroupReorder, format!("{kind} `{text}` moved"))
            };
            ClassifiedEdit::new(i, edit, category, detail)
        })
        .collect()
}

fn register_blind_digests(tree: &TreeNode) -> HashMap<NodeId, Digest128> {
    fn walk(node: &TreeNode, out: &mut HashMap<NodeId, Digest128>) -> Digest128 {
        let kids: Vec<Digest128> = node.children.iter().map(|c| walk(c, out)).collect();
        let h = node_digest(TAG_REGISTER_BLIND, node, &kids);
        out.insert(node.id, h);
        h
    }
    let mut out = HashMap::new();
    walk(tree, &mut out);
    out
}

fn parents(tree: &TreeNode) -> HashMap<NodeId, NodeId> {
    tree.preorder()
        .into_iter()
        .flat_map(|n| n.children.iter().map(move |c| (c.id, n.id)))
        .collect()
}

fn line_of(nodes: &HashMap<NodeId, &TreeNode>, id: NodeId) -> Option<usize> {
    let node = nodes.get(&id)?;
    node.line.or_else(|| node.preorder().into_iter().find_map(|n| n.line))
}

/// Classifies every edit of `script` and attaches `.s` line references.
pub fn classify(script: &EditScript, source: &TreeNode, target: &TreeNode) -> Vec<ClassifiedEdit> {
    let mut all = check_structural(script, source);
    all.extend(check_updates(script, source, target));
    all.extend(check_reorders(script, source, target));
    all.sort_by_key(|e| e.index);

    let src_nodes = node_index(source);
    let tgt_nodes = node_index(target);
    for e in &mut all {
        e.source_line = e.edit.source_node().and_then(|id| line_of(&src_nodes, id));
        e.target_line = e.edit.target_node().and_then(|id| line_of(&tgt_nodes, id));
        if let Edit::Insert { parent, .. } = &e.edit {
            // inserted nodes have no source line; point at the enclosing one
            e.source_line = line_of(&src_nodes, *parent);
        }
    }
    all
}

pub fn compare_regions(a: &MarkedRegion, b: &MarkedRegion) -> Result<Verdict, EquivalenceError> {
    if a.section_id != b.section_id {
        return Err(EquivalenceError::SectionMismatch {
            source_section: a.section_id.clone(),
            target_section: b.section_id.clone(),
        });
    }
    let source = build_tree(a);
    let target = build_tree(b);
    let script = diff(&source, &target);
    let classified_edits = classify(&script, &source, &target);
    let result = if classified_edits.iter().any(|e| e.violating) {
        VerdictResult::Anomaly
    } else {
        VerdictResult::Equivalent
    };
    Ok(Verdict {
        section_id: a.section_id.clone(),
        source_build_id: a.build_id.clone(),
        target_build_id: b.build_id.clone(),
        result,
        classified_edits,
        script,
    })
}
