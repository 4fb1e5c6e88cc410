//! Typed tree encoding of a marked region, the input of the differ.
//!
//! Shape: `Region -> Group* -> (LabelDef* Instruction*) -> (Mnemonic operand*)`.
//! Memory operands are an `OperandMemory` node whose leaves are the present
//! reference parts. Node ids are assigned in pre-order starting at 0.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::asm::{classify_control, ControlKind, Instruction, Operand, OperandKind};
use crate::region::MarkedRegion;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MemoryPart {
    Segment,
    Displacement,
    Base,
    Index,
    Scale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum NodeKind {
    Region,
    Group,
    Instruction,
    LabelDef,
    Mnemonic,
    OperandRegister,
    OperandImmediate,
    OperandLabelRef,
    OperandMemory,
    OperandMemoryPart(MemoryPart),
}

impl NodeKind {
    pub fn is_leaf(self) -> bool {
        !matches!(
            self,
            NodeKind::Region | NodeKind::Group | NodeKind::Instruction | NodeKind::OperandMemory
        )
    }

    pub fn is_operand(self) -> bool {
        matches!(
            self,
            NodeKind::OperandRegister
                | NodeKind::OperandImmediate
                | NodeKind::OperandLabelRef
                | NodeKind::OperandMemory
                | NodeKind::OperandMemoryPart(_)
        )
    }

    /// Leaves whose literal names a register.
    pub fn is_register(self) -> bool {
        matches!(
            self,
            NodeKind::OperandRegister
                | NodeKind::OperandMemoryPart(MemoryPart::Base)
                | NodeKind::OperandMemoryPart(MemoryPart::Index)
        )
    }

    /// Leaves whose literal names a label.
    pub fn is_label(self) -> bool {
        matches!(self, NodeKind::LabelDef | NodeKind::OperandLabelRef)
    }
}

impl NodeKind {
    pub fn name(self) -> &'static str {
        match self {
            NodeKind::Region => "Region",
            NodeKind::Group => "Group",
            NodeKind::Instruction => "Instruction",
            NodeKind::LabelDef => "LabelDef",
            NodeKind::Mnemonic => "Mnemonic",
            NodeKind::OperandRegister => "OperandRegister",
            NodeKind::OperandImmediate => "OperandImmediate",
            NodeKind::OperandLabelRef => "OperandLabelRef",
            NodeKind::OperandMemory => "OperandMemory",
            NodeKind::OperandMemoryPart(MemoryPart::Segment) => "OperandMemoryPart:segment",
            NodeKind::OperandMemoryPart(MemoryPart::Displacement) => "OperandMemoryPart:displacement",
            NodeKind::OperandMemoryPart(MemoryPart::Base) => "OperandMemoryPart:base",
            NodeKind::OperandMemoryPart(MemoryPart::Index) => "OperandMemoryPart:index",
            NodeKind::OperandMemoryPart(MemoryPart::Scale) => "OperandMemoryPart:scale",
        }
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl From<NodeKind> for String {
    fn from(kind: NodeKind) -> Self {
        kind.to_string()
    }
}

impl FromStr for NodeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "Region" => NodeKind::Region,
            "Group" => NodeKind::Group,
            "Instruction" => NodeKind::Instruction,
            "LabelDef" => NodeKind::LabelDef,
            "Mnemonic" => NodeKind::Mnemonic,
            "OperandRegister" => NodeKind::OperandRegister,
            "OperandImmediate" => NodeKind::OperandImmediate,
            "OperandLabelRef" => NodeKind::OperandLabelRef,
            "OperandMemory" => NodeKind::OperandMemory,
            "OperandMemoryPart:segment" => NodeKind::OperandMemoryPart(MemoryPart::Segment),
            "OperandMemoryPart:displacement" => {
                NodeKind::OperandMemoryPart(MemoryPart::Displacement)
            }
            "OperandMemoryPart:base" => NodeKind::OperandMemoryPart(MemoryPart::Base),
            "OperandMemoryPart:index" => NodeKind::OperandMemoryPart(MemoryPart::Index),
            "OperandMemoryPart:scale" => NodeKind::OperandMemoryPart(MemoryPart::Scale),
            other => return Err(format!("unknown node kind `{other}`")),
        })
    }
}

impl TryFrom<String> for NodeKind {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: NodeId,
    pub kind: NodeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub literal: Option<String>,
    /// `.s` line of the enclosing instruction (first instruction for groups).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<TreeNode>,
}

impl TreeNode {
    pub fn leaf(kind: NodeKind, literal: impl Into<String>) -> Self {
        Self { id: NodeId(0), kind, literal: Some(literal.into()), line: None, children: Vec::new() }
    }

    pub fn interior(kind: NodeKind, children: Vec<TreeNode>) -> Self {
        Self { id: NodeId(0), kind, literal: None, line: None, children }
    }

    pub fn size(&self) -> usize {
        1 + self.children.iter().map(TreeNode::size).sum::<usize>()
    }

    pub fn preorder(&self) -> Vec<&TreeNode> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(n) = stack.pop() {
            out.push(n);
            stack.extend(n.children.iter().rev());
        }
        out
    }

    pub fn find(&self, id: NodeId) -> Option<&TreeNode> {
        self.preorder().into_iter().find(|n| n.id == id)
    }

    /// Reassigns ids in pre-order starting at 0.
    pub fn renumber(&mut self) {
        fn walk(node: &mut TreeNode, next: &mut u32) {
            node.id = NodeId(*next);
            *next += 1;
            for c in &mut node.children {
                walk(c, next);
            }
        }
        walk(self, &mut 0);
    }

    fn set_line(&mut self, line: usize) {
        self.line = Some(line);
        for c in &mut self.children {
            c.set_line(line);
        }
    }

    /// Control classification of an `Instruction` node from its tree content.
    pub fn instruction_control(&self) -> Option<ControlKind> {
        if self.kind != NodeKind::Instruction {
            return None;
        }
        let mnemonic = self.children.first()?.literal.as_deref()?;
        let operands: Vec<Operand> = self.children[1..]
            .iter()
            .map(|c| {
                let raw = c.literal.clone().unwrap_or_default();
                let kind = match c.kind {
                    NodeKind::OperandLabelRef if !raw.starts_with('*') => {
                        OperandKind::LabelRef { name: raw.clone() }
                    }
                    _ => OperandKind::Immediate { value: None },
                };
                Operand { kind, indirect: raw.starts_with('*'), raw }
            })
            .collect();
        Some(classify_control(mnemonic, &operands))
    }

    /// Whether a `Group` node may continue into the group laid out after it.
    pub fn group_falls_through(&self) -> bool {
        self.children
            .iter()
            .rev()
            .find_map(TreeNode::instruction_control)
            .is_none_or(|c| c.falls_through())
    }
}

/// Structural equality ignoring node ids and line annotations.
pub fn isomorphic(a: &TreeNode, b: &TreeNode) -> bool {
    a.kind == b.kind
        && a.literal == b.literal
        && a.children.len() == b.children.len()
        && a.children.iter().zip(&b.children).all(|(x, y)| isomorphic(x, y))
}

fn operand_node(op: &Operand) -> TreeNode {
    match &op.kind {
        OperandKind::Register { .. } => TreeNode::leaf(NodeKind::OperandRegister, &op.raw),
        OperandKind::Immediate { .. } => TreeNode::leaf(NodeKind::OperandImmediate, &op.raw),
        OperandKind::LabelRef { name } => {
            let literal = if op.indirect { op.raw.clone() } else { name.clone() };
            TreeNode::leaf(NodeKind::OperandLabelRef, literal)
        }
        OperandKind::Memory(m) => {
            let reg = |r: &String| format!("%{r}");
            let parts = [
                (MemoryPart::Segment, m.segment.as_ref().map(reg)),
                (MemoryPart::Displacement, m.displacement.clone()),
                (MemoryPart::Base, m.base.as_ref().map(reg)),
                (MemoryPart::Index, m.index.as_ref().map(reg)),
                (MemoryPart::Scale, m.scale.map(|s| s.to_string())),
            ];
            let children = parts
                .into_iter()
                .filter_map(|(part, lit)| {
                    lit.map(|l| TreeNode::leaf(NodeKind::OperandMemoryPart(part), l))
                })
                .collect();
            TreeNode::interior(NodeKind::OperandMemory, children)
        }
    }
}

pub fn instruction_node(instr: &Instruction) -> TreeNode {
    let mut children = vec![TreeNode::leaf(NodeKind::Mnemonic, &instr.mnemonic)];
    children.extend(instr.operands.iter().map(operand_node));
    TreeNode::interior(NodeKind::Instruction, children)
}

pub fn build_tree(region: &MarkedRegion) -> TreeNode {
    let groups = region
        .groups
        .iter()
        .map(|g| {
            let first = g.lines.first().copied();
            let mut children: Vec<TreeNode> = g
                .leading_labels
                .iter()
                .map(|l| TreeNode::leaf(NodeKind::LabelDef, l))
                .collect();
            if let Some(line) = first {
                children.iter_mut().for_each(|c| c.set_line(line));
            }
            for (instr, &line) in g.instructions.iter().zip(&g.lines) {
                let mut node = instruction_node(instr);
                node.set_line(line);
                children.push(node);
            }
            let mut group = TreeNode::interior(NodeKind::Group, children);
            group.line = first;
            group
        })
        .collect();
    let mut root = TreeNode::interior(NodeKind::Region, groups);
    root.renumber();
    root
}

/// 128-bit truncated SHA-256 digest.
pub type Digest128 = u128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SubtreeHash {
    /// Kinds and shape only.
    pub structure: Digest128,
    /// Kinds, shape and literals.
    pub full: Digest128,
}

fn digest(tag: u8, kind: NodeKind, literal: Option<&str>, children: &[Digest128]) -> Digest128 {
    let mut h = Sha256::new();
    h.update([tag]);
    let name = kind.name();
    h.update((name.len() as u32).to_le_bytes());
    h.update(name.as_bytes());
    match literal {
        Some(l) => {
            h.update([1]);
            h.update((l.len() as u32).to_le_bytes());
            h.update(l.as_bytes());
        }
        None => h.update([0]),
    }
    h.update((children.len() as u32).to_le_bytes());
    for c in children {
        h.update(c.to_le_bytes());
    }
    let out = h.finalize();
    u128::from_le_bytes(out[..16].try_into().unwrap())
}

pub(crate) const TAG_STRUCTURE: u8 = 0;
pub(crate) const TAG_FULL: u8 = 1;
pub(crate) const TAG_NORMALIZED: u8 = 2;
pub(crate) const TAG_REGISTER_BLIND: u8 = 3;

pub(crate) fn node_digest(
    tag: u8,
    node: &TreeNode,
    children: &[Digest128],
) -> Digest128 {
    let literal = match tag {
        TAG_STRUCTURE => None,
        TAG_NORMALIZED if node.kind.is_register() || node.kind.is_label() => None,
        TAG_REGISTER_BLIND if node.kind.is_register() => None,
        _ => node.literal.as_deref(),
    };
    digest(tag, node.kind, literal, children)
}

pub fn hash_tree(root: &TreeNode) -> HashMap<NodeId, SubtreeHash> {
    fn walk(node: &TreeNode, out: &mut HashMap<NodeId, SubtreeHash>) -> SubtreeHash {
        let child: Vec<SubtreeHash> = node.children.iter().map(|c| walk(c, out)).collect();
        let s: Vec<Digest128> = child.iter().map(|h| h.structure).collect();
        let f: Vec<Digest128> = child.iter().map(|h| h.full).collect();
        let h = SubtreeHash {
            structure: node_digest(TAG_STRUCTURE, node, &s),
            full: node_digest(TAG_FULL, node, &f),
        };
        out.insert(node.id, h);
        h
    }
    let mut out = HashMap::new();
    walk(root, &mut out);
    out
}
