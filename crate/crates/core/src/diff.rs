//! Structural tree diff producing edit scripts over region trees.
//!
//! The differ follows the truediff approach: every subtree is hashed over its
//! structure and over its structure plus literals, matching subtrees are
//! reused (each node at most once), and what remains is deleted or inserted.
//! Matching runs in phases:
//!
//! 1. identical groups are matched globally by literal hash, larger subtrees
//!    first;
//! 2. the remaining groups are paired by content overlap or shape;
//! 3. children of every paired node are aligned locally (identical, equal up
//!    to register/label names, equal shape, same position);
//! 4. leftover identical subtrees anywhere are matched globally, which turns
//!    them into moves rather than delete/insert pairs.
//!
//! Script generation then replays the target layout against a simulation of
//! the source tree so that every emitted position is valid when edits are
//! applied in order.

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tree::{
    node_digest, Digest128, NodeId, NodeKind, TreeNode, TAG_FULL, TAG_NORMALIZED, TAG_STRUCTURE,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Edit {
    /// Insert a subtree of fresh nodes. `target` is the id of the inserted
    /// root in the diff target tree.
    Insert { node: TreeNode, parent: NodeId, position: usize, target: NodeId },
    Delete { node: NodeId, kind: NodeKind },
    UpdateLiteral { node: NodeId, kind: NodeKind, old: String, new: String, target: NodeId },
    Move { node: NodeId, kind: NodeKind, parent: NodeId, position: usize, target: NodeId },
}

impl Edit {
    pub fn kind(&self) -> NodeKind {
        match self {
            Edit::Insert { node, .. } => node.kind,
            Edit::Delete { kind, .. } | Edit::UpdateLiteral { kind, .. } | Edit::Move { kind, .. } => {
                *kind
            }
        }
    }

    /// Source-tree node this edit acts on, if any.
    pub fn source_node(&self) -> Option<NodeId> {
        match self {
            Edit::Insert { .. } => None,
            Edit::Delete { node, .. } | Edit::UpdateLiteral { node, .. } | Edit::Move { node, .. } => {
                Some(*node)
            }
        }
    }

    /// Target-tree node this edit produces, if any.
    pub fn target_node(&self) -> Option<NodeId> {
        match self {
            Edit::Delete { .. } => None,
            Edit::Insert { target, .. }
            | Edit::UpdateLiteral { target, .. }
            | Edit::Move { target, .. } => Some(*target),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ScriptJson", into = "ScriptJson")]
pub struct EditScript {
    pub edits: Vec<Edit>,
}

impl EditScript {
    pub fn is_empty(&self) -> bool {
        self.edits.is_empty()
    }

    pub fn len(&self) -> usize {
        self.edits.len()
    }
}

#[derive(Serialize, Deserialize)]
struct ScriptJson {
    edits: Vec<EditJson>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct EditJson {
    op: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    node_id: Option<NodeId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    parent_id: Option<NodeId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    position: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    kind: Option<NodeKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    literal: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    old_literal: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    new_literal: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    target_id: Option<NodeId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    line: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    children: Vec<TreeNode>,
}

impl From<EditScript> for ScriptJson {
    fn from(script: EditScript) -> Self {
        let edits = script
            .edits
            .into_iter()
            .map(|e| {
                let mut j = EditJson {
                    op: String::new(),
                    node_id: None,
                    parent_id: None,
                    position: None,
                    kind: Some(e.kind()),
                    literal: None,
                    old_literal: None,
                    new_literal: None,
                    target_id: e.target_node(),
                    line: None,
                    children: Vec::new(),
                };
                match e {
                    Edit::Insert { node, parent, position, .. } => {
                        j.op = "insert".into();
                        j.node_id = Some(node.id);
                        j.parent_id = Some(parent);
                        j.position = Some(position);
                        j.literal = node.literal;
                        j.line = node.line;
                        j.children = node.children;
                    }
                    Edit::Delete { node, .. } => {
                        j.op = "delete".into();
                        j.node_id = Some(node);
                    }
                    Edit::UpdateLiteral { node, old, new, .. } => {
                        j.op = "update".into();
                        j.node_id = Some(node);
                        j.old_literal = Some(old);
                        j.new_literal = Some(new);
                    }
                    Edit::Move { node, parent, position, .. } => {
                        j.op = "move".into();
                        j.node_id = Some(node);
                        j.parent_id = Some(parent);
                        j.position = Some(position);
                    }
                }
                j
            })
            .collect();
        ScriptJson { edits }
    }
}

impl TryFrom<ScriptJson> for EditScript {
    type Error = String;

    fn try_from(json: ScriptJson) -> Result<Self, Self::Error> {
        let edits = json
            .edits
            .into_iter()
            .map(|j| {
                let missing = |f: &str| format!("`{}` edit is missing `{f}`", j.op);
                let node = j.node_id.ok_or_else(|| missing("nodeId"))?;
                let kind = j.kind.ok_or_else(|| missing("kind"))?;
                let target = || j.target_id.ok_or_else(|| missing("targetId"));
                Ok(match j.op.as_str() {
                    "insert" => Edit::Insert {
                        node: TreeNode {
                            id: node,
                            kind,
                            literal: j.literal.clone(),
                            line: j.line,
                            children: j.children.clone(),
                        },
                        parent: j.parent_id.ok_or_else(|| missing("parentId"))?,
                        position: j.position.ok_or_else(|| missing("position"))?,
                        target: target()?,
                    },
                    "delete" => Edit::Delete { node, kind },
                    "update" => Edit::UpdateLiteral {
                        node,
                        kind,
                        old: j.old_literal.clone().ok_or_else(|| missing("oldLiteral"))?,
                        new: j.new_literal.clone().ok_or_else(|| missing("newLiteral"))?,
                        target: target()?,
                    },
                    "move" => Edit::Move {
                        node,
                        kind,
                        parent: j.parent_id.ok_or_else(|| missing("parentId"))?,
                        position: j.position.ok_or_else(|| missing("position"))?,
                        target: target()?,
                    },
                    other => return Err(format!("unknown edit op `{other}`")),
                })
            })
            .collect::<Result<Vec<_>, String>>()?;
        Ok(EditScript { edits })
    }
}

/// Pre-order flattened view of one tree with its subtree digests.
struct Indexed<'a> {
    nodes: Vec<&'a TreeNode>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    /// Index one past the end of each node's subtree.
    end: Vec<usize>,
    structure: Vec<Digest128>,
    full: Vec<Digest128>,
    normalized: Vec<Digest128>,
}

impl<'a> Indexed<'a> {
    fn new(root: &'a TreeNode) -> Self {
        let n = root.size();
        let mut ix = Indexed {
            nodes: Vec::with_capacity(n),
            parent: Vec::with_capacity(n),
            children: Vec::with_capacity(n),
            end: vec![0; n],
            structure: vec![0; n],
            full: vec![0; n],
            normalized: vec![0; n],
        };
        ix.visit(root, None);
        ix
    }

    fn visit(&mut self, node: &'a TreeNode, parent: Option<usize>) -> usize {
        let me = self.nodes.len();
        self.nodes.push(node);
        self.parent.push(parent);
        self.children.push(Vec::new());
        let mut kids = Vec::with_capacity(node.children.len());
        for c in &node.children {
            kids.push(self.visit(c, Some(me)));
        }
        let collect = |v: &Vec<Digest128>| kids.iter().map(|&k| v[k]).collect::<Vec<_>>();
        self.structure[me] = node_digest(TAG_STRUCTURE, node, &collect(&self.structure));
        self.full[me] = node_digest(TAG_FULL, node, &collect(&self.full));
        self.normalized[me] = node_digest(TAG_NORMALIZED, node, &collect(&self.normalized));
        self.children[me] = kids;
        self.end[me] = self.nodes.len();
        me
    }

    fn kind(&self, i: usize) -> NodeKind {
        self.nodes[i].kind
    }

    fn len(&self) -> usize {
        self.nodes.len()
    }
}

const MAX_POSTINGS: usize = 32;

/// Picks the candidate closest to `pos`, preferring the earlier one on ties.
fn nearest(candidates: impl Iterator<Item = usize>, pos: usize) -> Option<usize> {
    candidates.min_by_key(|&c| (c.abs_diff(pos), c))
}

fn nearest_in(set: &BTreeSet<usize>, pos: usize) -> Option<usize> {
    let below = set.range(..=pos).next_back().copied();
    let above = set.range(pos..).next().copied();
    nearest(below.into_iter().chain(above), pos)
}

struct Matcher<'a, 'b> {
    src: &'b Indexed<'a>,
    tgt: &'b Indexed<'a>,
    src_match: Vec<Option<usize>>,
    tgt_match: Vec<Option<usize>>,
    /// Pairs whose subtrees are identical.
    exact: Vec<bool>,
    unmatched_src: HashMap<Digest128, usize>,
    unmatched_tgt: HashMap<Digest128, usize>,
}

impl<'a, 'b> Matcher<'a, 'b> {
    fn new(src: &'b Indexed<'a>, tgt: &'b Indexed<'a>) -> Self {
        let mut unmatched_src = HashMap::new();
        for &h in &src.full {
            *unmatched_src.entry(h).or_insert(0) += 1;
        }
        let mut unmatched_tgt = HashMap::new();
        for &h in &tgt.full {
            *unmatched_tgt.entry(h).or_insert(0) += 1;
        }
        Matcher {
            src,
            tgt,
            src_match: vec![None; src.len()],
            tgt_match: vec![None; tgt.len()],
            exact: vec![false; src.len()],
            unmatched_src,
            unmatched_tgt,
        }
    }

    fn pair(&mut self, s: usize, t: usize) {
        debug_assert!(self.src_match[s].is_none() && self.tgt_match[t].is_none());
        self.src_match[s] = Some(t);
        self.tgt_match[t] = Some(s);
        *self.unmatched_src.get_mut(&self.src.full[s]).unwrap() -= 1;
        *self.unmatched_tgt.get_mut(&self.tgt.full[t]).unwrap() -= 1;
    }

    fn subtree_free(&self, s: usize, t: usize) -> bool {
        (s..self.src.end[s]).all(|i| self.src_match[i].is_none())
            && (t..self.tgt.end[t]).all(|i| self.tgt_match[i].is_none())
    }

    /// Matches two identical subtrees node by node.
    fn pair_exact(&mut self, s: usize, t: usize) {
        let size = self.src.end[s] - s;
        debug_assert_eq!(size, self.tgt.end[t] - t);
        for k in 0..size {
            self.pair(s + k, t + k);
            self.exact[s + k] = true;
        }
    }

    /// Neither side has an unmatched twin that a global exact match would reuse.
    fn twin_free(&self, s: usize, t: usize) -> bool {
        self.unmatched_tgt.get(&self.src.full[s]).copied().unwrap_or(0) == 0
            && self.unmatched_src.get(&self.tgt.full[t]).copied().unwrap_or(0) == 0
    }

    fn run(&mut self) {
        self.pair(0, 0);
        let pairs = self.match_groups();
        for (s, t) in pairs {
            self.align(s, t);
        }
        self.match_leftovers();
    }

    /// Phases 1 and 2: groups under the region root.
    fn match_groups(&mut self) -> Vec<(usize, usize)> {
        let src_groups = self.src.children[0].clone();
        let tgt_groups = self.tgt.children[0].clone();

        let mut by_full: HashMap<Digest128, BTreeSet<usize>> = HashMap::new();
        for (pos, &g) in src_groups.iter().enumerate() {
            by_full.entry(self.src.full[g]).or_default().insert(pos);
        }
        for (pos, &t) in tgt_groups.iter().enumerate() {
            let Some(set) = by_full.get_mut(&self.tgt.full[t]) else { continue };
            if let Some(p) = nearest_in(set, pos) {
                set.remove(&p);
                self.pair_exact(src_groups[p], t);
            }
        }

        // Remaining groups: index by normalized hash, shape and child content.
        let free: Vec<usize> =
            (0..src_groups.len()).filter(|&p| self.src_match[src_groups[p]].is_none()).collect();
        let mut available: HashSet<usize> = free.iter().copied().collect();
        let mut by_normalized: HashMap<Digest128, BTreeSet<usize>> = HashMap::new();
        let mut by_structure: HashMap<Digest128, BTreeSet<usize>> = HashMap::new();
        let mut by_child: HashMap<Digest128, Vec<usize>> = HashMap::new();
        for &p in &free {
            let g = src_groups[p];
            by_normalized.entry(self.src.normalized[g]).or_default().insert(p);
            by_structure.entry(self.src.structure[g]).or_default().insert(p);
            let mut seen = HashSet::new();
            for &c in &self.src.children[g] {
                if seen.insert(self.src.normalized[c]) {
                    by_child.entry(self.src.normalized[c]).or_default().push(p);
                }
            }
        }
        // Very common instructions say little about which groups correspond.
        by_child.retain(|_, postings| postings.len() <= MAX_POSTINGS);

        let mut pairs = Vec::new();
        for (pos, &t) in tgt_groups.iter().enumerate() {
            if self.tgt_match[t].is_some() || available.is_empty() {
                continue;
            }
            let pick = by_normalized
                .get(&self.tgt.normalized[t])
                .and_then(|set| nearest_in(set, pos))
                .or_else(|| {
                    let mut overlap: HashMap<usize, usize> = HashMap::new();
                    for &c in &self.tgt.children[t] {
                        for &p in by_child.get(&self.tgt.normalized[c]).into_iter().flatten() {
                            if available.contains(&p) {
                                *overlap.entry(p).or_default() += 1;
                            }
                        }
                    }
                    let t_len = self.tgt.children[t].len();
                    overlap
                        .into_iter()
                        .filter(|&(p, n)| {
                            let s_len = self.src.children[src_groups[p]].len();
                            2 * n >= s_len.max(t_len)
                        })
                        .max_by_key(|&(p, n)| {
                            let same_shape =
                                self.src.structure[src_groups[p]] == self.tgt.structure[t];
                            (n, same_shape, std::cmp::Reverse((p.abs_diff(pos), p)))
                        })
                        .map(|(p, _)| p)
                })
                .or_else(|| {
                    by_structure.get(&self.tgt.structure[t]).and_then(|set| nearest_in(set, pos))
                });
            if let Some(p) = pick {
                let g = src_groups[p];
                available.remove(&p);
                by_normalized.get_mut(&self.src.normalized[g]).map(|s| s.remove(&p));
                by_structure.get_mut(&self.src.structure[g]).map(|s| s.remove(&p));
                self.pair(g, t);
                pairs.push((g, t));
            }
        }
        pairs
    }

    /// Phase 3: align the children of a partially matched pair.
    fn align(&mut self, s: usize, t: usize) {
        let sc = self.src.children[s].clone();
        let tc = self.tgt.children[t].clone();
        let free_s = |m: &Self, j: usize| m.src_match[sc[j]].is_none();
        let free_t = |m: &Self, i: usize| m.tgt_match[tc[i]].is_none();
        let mut partial = Vec::new();

        // Operand lists are positional: same-kind operands at the same index
        // that differ only by register or label names stay paired.
        let positional_first =
            matches!(self.src.kind(s), NodeKind::Instruction | NodeKind::OperandMemory);
        if positional_first {
            for i in 0..sc.len().min(tc.len()) {
                let (a, b) = (sc[i], tc[i]);
                if free_s(self, i)
                    && free_t(self, i)
                    && self.src.kind(a) == self.tgt.kind(b)
                    && self.src.normalized[a] == self.tgt.normalized[b]
                {
                    if self.src.full[a] == self.tgt.full[b] {
                        self.pair_exact(a, b);
                    } else {
                        self.pair(a, b);
                        partial.push((a, b));
                    }
                }
            }
        }

        // identical children, nearest index
        for (i, &b) in tc.iter().enumerate() {
            if !free_t(self, i) {
                continue;
            }
            let cand = (0..sc.len())
                .filter(|&j| free_s(self, j) && self.src.full[sc[j]] == self.tgt.full[b])
                .filter(|&j| self.subtree_free(sc[j], b));
            if let Some(j) = nearest(cand, i) {
                self.pair_exact(sc[j], b);
            }
        }

        // equal up to register and label names, nearest index
        for (i, &b) in tc.iter().enumerate() {
            if !free_t(self, i) {
                continue;
            }
            let cand = (0..sc.len()).filter(|&j| {
                free_s(self, j)
                    && self.src.kind(sc[j]) == self.tgt.kind(b)
                    && self.src.normalized[sc[j]] == self.tgt.normalized[b]
            });
            if let Some(j) = nearest(cand, i) {
                self.pair(sc[j], b);
                partial.push((sc[j], b));
            }
        }

        // same shape, nearest index; non-rename leaves only at the same index
        for (i, &b) in tc.iter().enumerate() {
            if !free_t(self, i) {
                continue;
            }
            let leaf = self.tgt.kind(b).is_leaf();
            let cand = (0..sc.len()).filter(|&j| {
                free_s(self, j)
                    && (!leaf || j == i)
                    && self.src.kind(sc[j]) == self.tgt.kind(b)
                    && self.src.structure[sc[j]] == self.tgt.structure[b]
                    && self.twin_free(sc[j], b)
            });
            if let Some(j) = nearest(cand, i) {
                self.pair(sc[j], b);
                partial.push((sc[j], b));
            }
        }

        // same kind at the same index
        for i in 0..sc.len().min(tc.len()) {
            let (a, b) = (sc[i], tc[i]);
            if free_s(self, i)
                && free_t(self, i)
                && self.src.kind(a) == self.tgt.kind(b)
                && self.src.kind(a) != NodeKind::Group
                && self.twin_free(a, b)
            {
                self.pair(a, b);
                partial.push((a, b));
            }
        }

        for (a, b) in partial {
            if !self.src.kind(a).is_leaf() {
                self.align(a, b);
            }
        }
    }

    /// Phase 4: identical subtrees left anywhere, larger first.
    fn match_leftovers(&mut self) {
        // Unmatched source nodes only have unmatched descendants at this point,
        // and the target is visited top-down, so every candidate is free until
        // something inside or above it gets matched.
        let mut index: HashMap<Digest128, BTreeSet<usize>> = HashMap::new();
        for s in 1..self.src.len() {
            if self.src_match[s].is_none() {
                index.entry(self.src.full[s]).or_default().insert(s);
            }
        }
        if index.is_empty() {
            return;
        }
        let mut queue = std::collections::VecDeque::from(self.tgt.children[0].clone());
        while let Some(t) = queue.pop_front() {
            if self.tgt_match[t].is_none() {
                let pick = index.get(&self.tgt.full[t]).and_then(|set| nearest_in(set, t));
                if let Some(s) = pick {
                    for k in s..self.src.end[s] {
                        if let Some(set) = index.get_mut(&self.src.full[k]) {
                            set.remove(&k);
                        }
                    }
                    let mut up = self.src.parent[s];
                    while let Some(a) = up {
                        let removed = index.get_mut(&self.src.full[a]).is_some_and(|set| set.remove(&a));
                        if !removed {
                            break;
                        }
                        up = self.src.parent[a];
                    }
                    self.pair_exact(s, t);
                    continue;
                }
            }
            queue.extend(self.tgt.children[t].iter().copied());
        }
    }
}

/// Live model of the tree being edited, used to compute valid positions.
struct Simulation {
    children: HashMap<NodeId, Vec<NodeId>>,
    parent: HashMap<NodeId, NodeId>,
}

impl Simulation {
    fn new(root: &TreeNode) -> Self {
        let mut sim = Simulation { children: HashMap::new(), parent: HashMap::new() };
        sim.add(root, None);
        sim
    }

    fn add(&mut self, node: &TreeNode, parent: Option<NodeId>) {
        if let Some(p) = parent {
            self.parent.insert(node.id, p);
        }
        self.children.insert(node.id, node.children.iter().map(|c| c.id).collect());
        for c in &node.children {
            self.add(c, Some(node.id));
        }
    }

    fn detach(&mut self, id: NodeId) {
        if let Some(p) = self.parent.remove(&id) {
            let list = self.children.get_mut(&p).unwrap();
            let at = list.iter().position(|&c| c == id).unwrap();
            list.remove(at);
        }
    }

    fn position_after(&self, parent: NodeId, prev: Option<NodeId>) -> usize {
        match prev {
            None => 0,
            Some(p) => self.children[&parent].iter().position(|&c| c == p).unwrap() + 1,
        }
    }

    fn attach(&mut self, id: NodeId, parent: NodeId, position: usize) {
        self.children.get_mut(&parent).unwrap().insert(position, id);
        self.parent.insert(id, parent);
    }
}

/// Computes an edit script transforming `source` into `target`.
///
/// Both trees are expected to be rooted at nodes of the same kind (region
/// trees always are).
pub fn diff(source: &TreeNode, target: &TreeNode) -> EditScript {
    let src = Indexed::new(source);
    let tgt = Indexed::new(target);
    if src.full[0] == tgt.full[0] {
        return EditScript::default();
    }
    debug_assert_eq!(source.kind, target.kind, "diff roots must share a kind");

    let mut m = Matcher::new(&src, &tgt);
    m.run();
    generate(&m)
}

fn generate(m: &Matcher) -> EditScript {
    let (src, tgt) = (m.src, m.tgt);
    let next_id = src.nodes.iter().map(|n| n.id.0).max().unwrap_or(0) + 1;
    let new_id = |t: usize| NodeId(next_id + t as u32);
    let sim_id = |t: usize| match m.tgt_match[t] {
        Some(s) => src.nodes[s].id,
        None => new_id(t),
    };
    let mut edits = Vec::new();

    for t in 0..tgt.len() {
        if let Some(s) = m.tgt_match[t] {
            let (old, new) = (&src.nodes[s].literal, &tgt.nodes[t].literal);
            if !m.exact[s] && old != new {
                edits.push(Edit::UpdateLiteral {
                    node: src.nodes[s].id,
                    kind: src.kind(s),
                    old: old.clone().unwrap_or_default(),
                    new: new.clone().unwrap_or_default(),
                    target: tgt.nodes[t].id,
                });
            }
        }
    }

    let mut sim = Simulation::new(src.nodes[0]);
    let mut deferred = Vec::new();
    for s in 1..src.len() {
        let parent = src.parent[s].unwrap();
        if m.src_match[s].is_some() || m.src_match[parent].is_none() {
            continue;
        }
        let keeps_descendant = (s + 1..src.end[s]).any(|k| m.src_match[k].is_some());
        if keeps_descendant {
            deferred.push(s);
        } else {
            edits.push(Edit::Delete { node: src.nodes[s].id, kind: src.kind(s) });
            sim.detach(src.nodes[s].id);
        }
    }

    let fully_new = |t: usize| (t..tgt.end[t]).all(|k| m.tgt_match[k].is_none());
    let mut t = 0;
    while t < tgt.len() {
        let matched = m.tgt_match[t];
        if matched.is_some_and(|s| m.exact[s]) || (matched.is_none() && fully_new(t) && t != 0) {
            // identical or freshly inserted subtree: nothing to lay out inside
            t = tgt.end[t];
            continue;
        }
        let pid = sim_id(t);
        let kids = &tgt.children[t];

        // Children kept under the same parent whose relative order is unchanged
        // stay in place; everything else is inserted or moved.
        let mut stable = vec![false; kids.len()];
        if let Some(s) = matched {
            let src_rank: HashMap<usize, usize> = src.children[s]
                .iter()
                .filter(|&&sc| m.src_match[sc].is_some_and(|tc| tgt.parent[tc] == Some(t)))
                .enumerate()
                .map(|(rank, &sc)| (sc, rank))
                .collect();
            let mut rank = 0;
            for (i, &tc) in kids.iter().enumerate() {
                if let Some(sc) = m.tgt_match[tc] {
                    if let Some(&r) = src_rank.get(&sc) {
                        stable[i] = r == rank;
                        rank += 1;
                    }
                }
            }
        }

        let mut prev: Option<NodeId> = None;
        for (i, &tc) in kids.iter().enumerate() {
            let id = sim_id(tc);
            if stable[i] {
                prev = Some(id);
                continue;
            }
            match m.tgt_match[tc] {
                None => {
                    let node = if fully_new(tc) {
                        fresh_subtree(tgt, tc, &new_id)
                    } else {
                        TreeNode {
                            id,
                            kind: tgt.kind(tc),
                            literal: tgt.nodes[tc].literal.clone(),
                            line: tgt.nodes[tc].line,
                            children: Vec::new(),
                        }
                    };
                    let position = sim.position_after(pid, prev);
                    sim.add(&node, Some(pid));
                    sim.children.get_mut(&pid).unwrap().insert(position, id);
                    edits.push(Edit::Insert {
                        node,
                        parent: pid,
                        position,
                        target: tgt.nodes[tc].id,
                    });
                }
                Some(sc) => {
                    sim.detach(id);
                    let position = sim.position_after(pid, prev);
                    sim.attach(id, pid, position);
                    edits.push(Edit::Move {
                        node: id,
                        kind: src.kind(sc),
                        parent: pid,
                        position,
                        target: tgt.nodes[tc].id,
                    });
                }
            }
            prev = Some(id);
        }
        t += 1;
    }

    for s in deferred {
        edits.push(Edit::Delete { node: src.nodes[s].id, kind: src.kind(s) });
    }
    EditScript { edits }
}

fn fresh_subtree(tgt: &Indexed, t: usize, new_id: &impl Fn(usize) -> NodeId) -> TreeNode {
    TreeNode {
        id: new_id(t),
        kind: tgt.kind(t),
        literal: tgt.nodes[t].literal.clone(),
        line: tgt.nodes[t].line,
        children: tgt.children[t].iter().map(|&c| fresh_subtree(tgt, c, new_id)).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ApplyError {
    #[error("edit {edit}: node {id} does not exist")]
    DanglingNodeId { edit: usize, id: NodeId },
    #[error("edit {edit}: node {id} already exists")]
    DuplicateNodeId { edit: usize, id: NodeId },
    #[error("edit {edit}: position {position} is out of range")]
    InvalidPosition { edit: usize, position: usize },
    #[error("edit {edit}: node {id} cannot be moved or deleted here")]
    InvalidTarget { edit: usize, id: NodeId },
    #[error("edit {edit}: literal of {id} is not `{expected}`")]
    LiteralMismatch { edit: usize, id: NodeId, expected: String },
}

struct ArenaNode {
    kind: NodeKind,
    literal: Option<String>,
    line: Option<usize>,
    children: Vec<NodeId>,
    parent: Option<NodeId>,
}

/// Applies an edit script to `source`, returning the edited tree.
pub fn apply(source: &TreeNode, script: &EditScript) -> Result<TreeNode, ApplyError> {
    fn load(arena: &mut HashMap<NodeId, ArenaNode>, node: &TreeNode, parent: Option<NodeId>) -> bool {
        if arena.contains_key(&node.id) {
            return false;
        }
        arena.insert(
            node.id,
            ArenaNode {
                kind: node.kind,
                literal: node.literal.clone(),
                line: node.line,
                children: node.children.iter().map(|c| c.id).collect(),
                parent,
            },
        );
        node.children.iter().all(|c| load(arena, c, Some(node.id)))
    }
    fn unload(arena: &mut HashMap<NodeId, ArenaNode>, id: NodeId) {
        if let Some(n) = arena.remove(&id) {
            for c in n.children {
                unload(arena, c);
            }
        }
    }
    fn build(arena: &HashMap<NodeId, ArenaNode>, id: NodeId) -> TreeNode {
        let n = &arena[&id];
        TreeNode {
            id,
            kind: n.kind,
            literal: n.literal.clone(),
            line: n.line,
            children: n.children.iter().map(|&c| build(arena, c)).collect(),
        }
    }

    let mut arena = HashMap::new();
    let root = source.id;
    if !load(&mut arena, source, None) {
        return Err(ApplyError::DuplicateNodeId { edit: 0, id: source.id });
    }
    let dangling = |edit, id| ApplyError::DanglingNodeId { edit, id };

    for (e, edit) in script.edits.iter().enumerate() {
        match edit {
            Edit::Insert { node, parent, position, .. } => {
                let len = arena.get(parent).ok_or_else(|| dangling(e, *parent))?.children.len();
                if *position > len {
                    return Err(ApplyError::InvalidPosition { edit: e, position: *position });
                }
                for n in node.preorder() {
                    if arena.contains_key(&n.id) {
                        return Err(ApplyError::DuplicateNodeId { edit: e, id: n.id });
                    }
                }
                load(&mut arena, node, Some(*parent));
                arena.get_mut(parent).unwrap().children.insert(*position, node.id);
            }
            Edit::Delete { node, .. } => {
                let parent = arena.get(node).ok_or_else(|| dangling(e, *node))?.parent;
                let parent = parent.ok_or(ApplyError::InvalidTarget { edit: e, id: *node })?;
                arena.get_mut(&parent).unwrap().children.retain(|c| c != node);
                unload(&mut arena, *node);
            }
            Edit::UpdateLiteral { node, old, new, .. } => {
                let n = arena.get_mut(node).ok_or_else(|| dangling(e, *node))?;
                if n.literal.as_deref() != Some(old.as_str()) {
                    return Err(ApplyError::LiteralMismatch {
                        edit: e,
                        id: *node,
                        expected: old.clone(),
                    });
                }
                n.literal = Some(new.clone());
            }
            Edit::Move { node, parent, position, .. } => {
                if !arena.contains_key(parent) {
                    return Err(dangling(e, *parent));
                }
                let old_parent = arena.get(node).ok_or_else(|| dangling(e, *node))?.parent;
                let old_parent = old_parent.ok_or(ApplyError::InvalidTarget { edit: e, id: *node })?;
                // the new parent must not lie inside the moved subtree
                let mut cursor = Some(*parent);
                while let Some(c) = cursor {
                    if c == *node {
                        return Err(ApplyError::InvalidTarget { edit: e, id: *node });
                    }
                    cursor = arena[&c].parent;
                }
                arena.get_mut(&old_parent).unwrap().children.retain(|c| c != node);
                let siblings = &mut arena.get_mut(parent).unwrap().children;
                if *position > siblings.len() {
                    return Err(ApplyError::InvalidPosition { edit: e, position: *position });
                }
                siblings.insert(*position, *node);
                arena.get_mut(node).unwrap().parent = Some(*parent);
            }
        }
    }
    Ok(build(&arena, root))
}
