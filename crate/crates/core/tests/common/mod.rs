//! Random region trees and mutations shared by the property tests.

#![allow(dead_code)]

pub mod oracle;

use mvee_core::tree::{MemoryPart, NodeKind, TreeNode};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::Rng;

const MNEMONICS: &[&str] = &["movq", "addq", "subq", "leaq", "imulq", "cmpq", "xorl", "testq", "nop"];
const REGISTERS: &[&str] = &["%rax", "%rbx", "%rcx", "%rdx", "%rsi", "%rdi", "%r8", "%r10"];
const LABELS: &[&str] = &[".L1", ".L2", ".L3", ".L4", ".L5", ".L6"];

fn leaf(kind: NodeKind, lit: &str) -> TreeNode {
    TreeNode::leaf(kind, lit)
}

pub fn random_operand(rng: &mut StdRng) -> TreeNode {
    match rng.gen_range(0..10) {
        0..=3 => leaf(NodeKind::OperandRegister, REGISTERS.choose(rng).unwrap()),
        4..=5 => leaf(NodeKind::OperandImmediate, &format!("${}", rng.gen_range(0..16))),
        6 => leaf(NodeKind::OperandLabelRef, LABELS.choose(rng).unwrap()),
        _ => {
            let mut parts = Vec::new();
            if rng.gen_bool(0.7) {
                parts.push(leaf(
                    NodeKind::OperandMemoryPart(MemoryPart::Displacement),
                    &(8 * rng.gen_range(0..8)).to_string(),
                ));
            }
            parts.push(leaf(NodeKind::OperandMemoryPart(MemoryPart::Base), REGISTERS.choose(rng).unwrap()));
            if rng.gen_bool(0.3) {
                parts.push(leaf(NodeKind::OperandMemoryPart(MemoryPart::Index), REGISTERS.choose(rng).unwrap()));
                parts.push(leaf(
                    NodeKind::OperandMemoryPart(MemoryPart::Scale),
                    ["1", "2", "4", "8"].choose(rng).unwrap(),
                ));
            }
            TreeNode::interior(NodeKind::OperandMemory, parts)
        }
    }
}

pub fn random_instruction(rng: &mut StdRng) -> TreeNode {
    let mnemonic = *MNEMONICS.choose(rng).unwrap();
    let n = if mnemonic == "nop" { 0 } else { rng.gen_range(1..=3) };
    let mut children = vec![leaf(NodeKind::Mnemonic, mnemonic)];
    children.extend((0..n).map(|_| random_operand(rng)));
    TreeNode::interior(NodeKind::Instruction, children)
}

fn terminator(rng: &mut StdRng) -> TreeNode {
    match rng.gen_range(0..4) {
        0 => TreeNode::interior(NodeKind::Instruction, vec![leaf(NodeKind::Mnemonic, "ret")]),
        1 => TreeNode::interior(
            NodeKind::Instruction,
            vec![leaf(NodeKind::Mnemonic, "jmp"), leaf(NodeKind::OperandLabelRef, LABELS.choose(rng).unwrap())],
        ),
        2 => TreeNode::interior(
            NodeKind::Instruction,
            vec![leaf(NodeKind::Mnemonic, "call"), leaf(NodeKind::OperandLabelRef, "helper")],
        ),
        _ => random_instruction(rng),
    }
}

pub fn random_group(rng: &mut StdRng, max_instr: usize) -> TreeNode {
    let mut children = Vec::new();
    if rng.gen_bool(0.3) {
        children.push(leaf(NodeKind::LabelDef, LABELS.choose(rng).unwrap()));
    }
    let n = rng.gen_range(1..=max_instr);
    for _ in 1..n {
        children.push(random_instruction(rng));
    }
    children.push(terminator(rng));
    TreeNode::interior(NodeKind::Group, children)
}

pub fn random_region(rng: &mut StdRng, groups: usize, max_instr: usize) -> TreeNode {
    let mut root = TreeNode::interior(
        NodeKind::Region,
        (0..groups).map(|_| random_group(rng, max_instr)).collect(),
    );
    root.renumber();
    root
}

/// Region with roughly `instructions` instructions in groups of 2..=8.
pub fn sized_region(rng: &mut StdRng, instructions: usize) -> TreeNode {
    let mut groups = Vec::new();
    let mut total = 0;
    while total < instructions {
        let g = random_group(rng, 8);
        total += g.children.iter().filter(|c| c.kind == NodeKind::Instruction).count();
        groups.push(g);
    }
    let mut root = TreeNode::interior(NodeKind::Region, groups);
    root.renumber();
    root
}

fn leaves_mut(node: &mut TreeNode) -> Vec<&mut TreeNode> {
    let mut out = Vec::new();
    if node.kind.is_leaf() {
        out.push(node);
    } else {
        for c in &mut node.children {
            out.extend(leaves_mut(c));
        }
    }
    out
}

fn instruction_slots(root: &TreeNode) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (g, group) in root.children.iter().enumerate() {
        for (i, c) in group.children.iter().enumerate() {
            if c.kind == NodeKind::Instruction {
                out.push((g, i));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mutation {
    Literal,
    InsertInstruction,
    DeleteInstruction,
    GroupReorder,
    OperandSwap,
    DuplicateInstruction,
    DeleteGroup,
    InsertGroup,
}

pub const ALL_MUTATIONS: &[Mutation] = &[
    Mutation::Literal,
    Mutation::InsertInstruction,
    Mutation::DeleteInstruction,
    Mutation::GroupReorder,
    Mutation::OperandSwap,
    Mutation::DuplicateInstruction,
    Mutation::DeleteGroup,
    Mutation::InsertGroup,
];

/// Applies one mutation in place; returns false when it was not applicable.
pub fn mutate(rng: &mut StdRng, root: &mut TreeNode, m: Mutation) -> bool {
    match m {
        Mutation::Literal => {
            let mut leaves = leaves_mut(root);
            let Some(leaf) = leaves.choose_mut(rng) else { return false };
            let lit = match leaf.kind {
                NodeKind::Mnemonic => MNEMONICS.choose(rng).unwrap().to_string(),
                NodeKind::OperandImmediate => format!("${}", rng.gen_range(0..16)),
                NodeKind::OperandLabelRef | NodeKind::LabelDef => LABELS.choose(rng).unwrap().to_string(),
                NodeKind::OperandMemoryPart(MemoryPart::Displacement) => (8 * rng.gen_range(0..8)).to_string(),
                NodeKind::OperandMemoryPart(MemoryPart::Scale) => ["1", "2", "4", "8"].choose(rng).unwrap().to_string(),
                _ => REGISTERS.choose(rng).unwrap().to_string(),
            };
            leaf.literal = Some(lit);
            true
        }
        Mutation::InsertInstruction => {
            let g = rng.gen_range(0..root.children.len());
            let group = &mut root.children[g];
            let at = rng.gen_range(0..=group.children.len());
            group.children.insert(at, random_instruction(rng));
            true
        }
        Mutation::DeleteInstruction => {
            let slots = instruction_slots(root);
            let candidates: Vec<_> = slots
                .into_iter()
                .filter(|(g, _)| root.children[*g].children.len() > 1)
                .collect();
            let Some(&(g, i)) = candidates.choose(rng) else { return false };
            root.children[g].children.remove(i);
            true
        }
        Mutation::GroupReorder => {
            if root.children.len() < 2 {
                return false;
            }
            let a = rng.gen_range(0..root.children.len());
            let g = root.children.remove(a);
            let b = rng.gen_range(0..=root.children.len());
            root.children.insert(b, g);
            true
        }
        Mutation::OperandSwap => {
            let slots: Vec<_> = instruction_slots(root)
                .into_iter()
                .filter(|&(g, i)| root.children[g].children[i].children.len() >= 3)
                .collect();
            let Some(&(g, i)) = slots.choose(rng) else { return false };
            let ins = &mut root.children[g].children[i];
            let n = ins.children.len();
            let a = rng.gen_range(1..n);
            let mut b = rng.gen_range(1..n);
            if a == b {
                b = if b + 1 < n { b + 1 } else { 1 };
            }
            ins.children.swap(a, b);
            true
        }
        Mutation::DuplicateInstruction => {
            let slots = instruction_slots(root);
            let Some(&(g, i)) = slots.choose(rng) else { return false };
            let copy = root.children[g].children[i].clone();
            let tg = rng.gen_range(0..root.children.len());
            let at = rng.gen_range(0..=root.children[tg].children.len());
            root.children[tg].children.insert(at, copy);
            true
        }
        Mutation::DeleteGroup => {
            if root.children.len() < 2 {
                return false;
            }
            let g = rng.gen_range(0..root.children.len());
            root.children.remove(g);
            true
        }
        Mutation::InsertGroup => {
            let g = random_group(rng, 5);
            let at = rng.gen_range(0..=root.children.len());
            root.children.insert(at, g);
            true
        }
    }
}

/// Mutated copy of `source` with fresh pre-order ids.
pub fn mutated(rng: &mut StdRng, source: &TreeNode, count: usize) -> TreeNode {
    let mut t = source.clone();
    for _ in 0..count {
        let m = *ALL_MUTATIONS.choose(rng).unwrap();
        mutate(rng, &mut t, m);
    }
    t.renumber();
    t
}
