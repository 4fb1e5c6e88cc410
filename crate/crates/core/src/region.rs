//! Marker discovery, control-flow graph construction and extraction of the
//! marked region between a `mvee_begin_<id>` / `mvee_end_<id>` call pair.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::asm::{AsmFile, ControlKind, Instruction, LineContent};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerConvention {
    pub begin_prefix: String,
    pub end_prefix: String,
}

impl Default for MarkerConvention {
    fn default() -> Self {
        Self { begin_prefix: "mvee_begin_".into(), end_prefix: "mvee_end_".into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MarkerSide {
    Begin,
    End,
}

impl MarkerConvention {
    pub fn new(begin_prefix: &str, end_prefix: &str) -> Result<Self, MarkerError> {
        if begin_prefix.is_empty() || end_prefix.is_empty() {
            return Err(MarkerError::InvalidConvention("marker prefixes must be non-empty".into()));
        }
        if begin_prefix == end_prefix {
            return Err(MarkerError::InvalidConvention("marker prefixes must differ".into()));
        }
        Ok(Self { begin_prefix: begin_prefix.into(), end_prefix: end_prefix.into() })
    }

    /// Recognizes a marker call target, ignoring relocation suffixes like `@PLT`.
    fn classify<'a>(&self, symbol: &'a str) -> Option<(MarkerSide, &'a str)> {
        let symbol = symbol.split('@').next().unwrap_or(symbol);
        let mut sides = [
            (MarkerSide::Begin, self.begin_prefix.as_str()),
            (MarkerSide::End, self.end_prefix.as_str()),
        ];
        // Longer prefix first so that overlapping prefixes resolve unambiguously.
        sides.sort_by_key(|(_, p)| std::cmp::Reverse(p.len()));
        sides.iter().find_map(|(side, prefix)| {
            symbol.strip_prefix(prefix).filter(|id| !id.is_empty()).map(|id| (*side, id))
        })
    }

    fn is_marker_call(&self, instr: &Instruction) -> bool {
        matches!(&instr.control, ControlKind::Call(t) if self.classify(t).is_some())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerPair {
    pub section_id: String,
    pub begin_line: usize,
    /// Ascending; the compiler may duplicate the end mark into several tails.
    pub end_lines: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MarkerError {
    #[error("section `{section_id}` has an unmatched begin or end mark")]
    Unmatched { section_id: String },
    #[error("section `{section_id}` is marked more than once")]
    Duplicate { section_id: String },
    #[error("invalid marker convention: {0}")]
    InvalidConvention(String),
}

pub fn find_markers(
    file: &AsmFile,
    convention: &MarkerConvention,
) -> Result<Vec<MarkerPair>, MarkerError> {
    let mut begins: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    let mut ends: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    let mut first_seen: Vec<(usize, &str)> = Vec::new();
    for line in &file.lines {
        let LineContent::Instruction(instr) = &line.content else { continue };
        let ControlKind::Call(target) = &instr.control else { continue };
        let Some((side, id)) = convention.classify(target) else { continue };
        if !begins.contains_key(id) && !ends.contains_key(id) {
            first_seen.push((line.index, id));
        }
        let slot = match side {
            MarkerSide::Begin => begins.entry(id).or_default(),
            MarkerSide::End => ends.entry(id).or_default(),
        };
        slot.push(line.index);
    }

    let mut pairs = Vec::new();
    for (_, id) in first_seen {
        let b = begins.get(id).map(Vec::as_slice).unwrap_or_default();
        let e = ends.get(id).map(Vec::as_slice).unwrap_or_default();
        if b.len() > 1 {
            return Err(MarkerError::Duplicate { section_id: id.to_string() });
        }
        match (b.first(), e.is_empty()) {
            (Some(&begin_line), false) => pairs.push(MarkerPair {
                section_id: id.to_string(),
                begin_line,
                end_lines: e.to_vec(),
            }),
            _ => return Err(MarkerError::Unmatched { section_id: id.to_string() }),
        }
    }
    pairs.sort_by_key(|p| p.begin_line);
    Ok(pairs)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasicBlock {
    pub id: usize,
    /// Labels defined immediately before the block's first instruction.
    pub labels: Vec<String>,
    /// Line indices of the block's instructions, ascending.
    pub lines: Vec<usize>,
    pub successors: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cfg {
    pub blocks: Vec<BasicBlock>,
    block_of_line: HashMap<usize, usize>,
}

impl Cfg {
    pub fn block_containing(&self, line: usize) -> Option<&BasicBlock> {
        self.block_of_line.get(&line).map(|&b| &self.blocks[b])
    }

    pub fn edge_count(&self) -> usize {
        self.blocks.iter().map(|b| b.successors.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CfgError {
    #[error("line {line}: jump to undefined local label `{name}`")]
    UnknownLabel { name: String, line: usize },
}

/// Local labels must resolve inside the file; other symbols (tail calls into
/// other functions) leave the unit and contribute no edge.
fn is_local_label(name: &str) -> bool {
    name.starts_with(".L")
}

pub fn build_cfg(file: &AsmFile) -> Result<Cfg, CfgError> {
    let mut blocks: Vec<BasicBlock> = Vec::new();
    let mut pending_labels: Vec<String> = Vec::new();
    let mut current: Option<BasicBlock> = None;

    for line in &file.lines {
        match &line.content {
            LineContent::LabelDef { name } => {
                if let Some(block) = current.take() {
                    blocks.push(block);
                }
                pending_labels.push(name.clone());
            }
            LineContent::Instruction(instr) => {
                let block = current.get_or_insert_with(|| BasicBlock {
                    id: 0,
                    labels: std::mem::take(&mut pending_labels),
                    lines: Vec::new(),
                    successors: Vec::new(),
                });
                block.lines.push(line.index);
                if instr.control != ControlKind::Fallthrough {
                    blocks.push(current.take().unwrap());
                }
            }
            _ => {}
        }
    }
    if let Some(block) = current.take() {
        blocks.push(block);
    }

    let mut label_block: HashMap<&str, usize> = HashMap::new();
    let mut block_of_line = HashMap::new();
    for (i, block) in blocks.iter_mut().enumerate() {
        block.id = i;
        for &l in &block.lines {
            block_of_line.insert(l, i);
        }
    }
    for block in &blocks {
        for label in &block.labels {
            label_block.entry(label.as_str()).or_insert(block.id);
        }
    }
    let defined = file.label_lines();

    let count = blocks.len();
    let mut successors = Vec::with_capacity(count);
    for block in &blocks {
        let last = *block.lines.last().expect("blocks are never empty");
        let instr = file.instruction(last).expect("block lines are instructions");
        let next = (block.id + 1 < count).then_some(block.id + 1);
        let resolve = |target: &str| -> Result<Option<usize>, CfgError> {
            if let Some(&b) = label_block.get(target) {
                Ok(Some(b))
            } else if defined.contains_key(target) || !is_local_label(target) {
                Ok(None)
            } else {
                Err(CfgError::UnknownLabel { name: target.to_string(), line: last })
            }
        };
        let succ: Vec<usize> = match &instr.control {
            ControlKind::Fallthrough | ControlKind::Call(_) | ControlKind::IndirectCall => {
                next.into_iter().collect()
            }
            ControlKind::ConditionalJump(t) => resolve(t)?.into_iter().chain(next).collect(),
            ControlKind::UnconditionalJump(t) => resolve(t)?.into_iter().collect(),
            ControlKind::IndirectJump | ControlKind::Return => Vec::new(),
        };
        successors.push(succ);
    }
    for (block, succ) in blocks.iter_mut().zip(successors) {
        block.successors = succ;
    }
    Ok(Cfg { blocks, block_of_line })
}

/// How control leaves a fallthrough-group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Terminator {
    UnconditionalJump,
    IndirectJump,
    Return,
    Call,
    /// Cut before a jump-target label; execution continues in the next group.
    Fallthrough,
    /// Execution continues into the end mark.
    RegionEnd,
}

impl Terminator {
    /// Whether the group's successor depends on which group follows it in layout.
    pub fn is_position_dependent(self) -> bool {
        matches!(self, Terminator::Call | Terminator::Fallthrough | Terminator::RegionEnd)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FallthroughGroup {
    pub leading_labels: Vec<String>,
    pub instructions: Vec<Instruction>,
    /// Source `.s` line of each instruction, parallel to `instructions`.
    pub lines: Vec<usize>,
    pub terminator: Terminator,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkedRegion {
    pub section_id: String,
    pub build_id: String,
    pub groups: Vec<FallthroughGroup>,
    pub entry_group: usize,
}

impl MarkedRegion {
    pub fn instruction_count(&self) -> usize {
        self.groups.iter().map(|g| g.instructions.len()).sum()
    }

    pub fn instructions(&self) -> impl Iterator<Item = (usize, &Instruction)> {
        self.groups.iter().flat_map(|g| g.lines.iter().copied().zip(g.instructions.iter()))
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegionError {
    #[error(transparent)]
    Marker(#[from] MarkerError),
    #[error(transparent)]
    Cfg(#[from] CfgError),
    #[error("no marks found for section `{section_id}`")]
    NotFound { section_id: String },
    #[error("section `{section_id}` contains no instructions between its marks")]
    Empty { section_id: String },
    /// Warning grade: the region built from every visited instruction is attached.
    #[error("end mark of section `{section_id}` is unreachable from its begin mark")]
    EndUnreachable { section_id: String, region: Box<MarkedRegion> },
}

impl RegionError {
    /// Recovers the region carried by a warning-grade error.
    pub fn into_region(self) -> Result<MarkedRegion, RegionError> {
        match self {
            RegionError::EndUnreachable { region, .. } => Ok(*region),
            other => Err(other),
        }
    }
}

pub fn fingerprint(instructions: &[Instruction]) -> String {
    let mut hasher = Sha256::new();
    for instr in instructions {
        hasher.update(instr.to_string().as_bytes());
        hasher.update(b"\n");
    }
    hasher.finalize().iter().take(16).map(|b| format!("{b:02x}")).collect()
}

pub fn extract_region(
    file: &AsmFile,
    section_id: &str,
    convention: &MarkerConvention,
) -> Result<MarkedRegion, RegionError> {
    let markers = find_markers(file, convention)?;
    let cfg = build_cfg(file)?;
    extract_with(file, &cfg, &markers, section_id, convention)
}

/// Extracts every marked section of a file, sharing one CFG.
pub fn extract_all(
    file: &AsmFile,
    convention: &MarkerConvention,
) -> Result<BTreeMap<String, Result<MarkedRegion, RegionError>>, RegionError> {
    let markers = find_markers(file, convention)?;
    let cfg = build_cfg(file)?;
    Ok(markers
        .iter()
        .map(|m| {
            let region = extract_with(file, &cfg, &markers, &m.section_id, convention);
            (m.section_id.clone(), region)
        })
        .collect())
}

fn extract_with(
    file: &AsmFile,
    cfg: &Cfg,
    markers: &[MarkerPair],
    section_id: &str,
    convention: &MarkerConvention,
) -> Result<MarkedRegion, RegionError> {
    let pair = markers
        .iter()
        .find(|m| m.section_id == section_id)
        .ok_or_else(|| RegionError::NotFound { section_id: section_id.to_string() })?;

    let begin_block = cfg.block_containing(pair.begin_line).expect("marker is an instruction");
    let mut visited_blocks = HashSet::new();
    let mut stack: Vec<usize> = begin_block.successors.iter().rev().copied().collect();
    let mut visited_lines: Vec<usize> = Vec::new();
    let mut entry_line = None;
    let mut reached_end = false;

    while let Some(b) = stack.pop() {
        if !visited_blocks.insert(b) {
            continue;
        }
        let block = &cfg.blocks[b];
        let mut stopped = false;
        for &line in &block.lines {
            let is_end = pair.end_lines.contains(&line);
            if is_end || line == pair.begin_line {
                reached_end |= is_end;
                stopped = true;
                break;
            }
            let instr = file.instruction(line).unwrap();
            if convention.is_marker_call(instr) {
                continue;
            }
            entry_line.get_or_insert(line);
            visited_lines.push(line);
        }
        if !stopped {
            stack.extend(block.successors.iter().rev());
        }
    }

    visited_lines.sort_unstable();
    let groups = partition_groups(file, &visited_lines, &pair.end_lines);
    if groups.is_empty() {
        return Err(RegionError::Empty { section_id: section_id.to_string() });
    }
    let entry_group = entry_line
        .and_then(|l| groups.iter().position(|g| g.lines.contains(&l)))
        .unwrap_or(0);
    let region = MarkedRegion {
        section_id: section_id.to_string(),
        build_id: file.build_id.clone(),
        groups,
        entry_group,
    };
    if reached_end {
        Ok(region)
    } else {
        Err(RegionError::EndUnreachable {
            section_id: section_id.to_string(),
            region: Box::new(region),
        })
    }
}

/// Labels jumped to from inside the region; jumps in unreachable code do not count.
fn jump_targets<'a>(file: &'a AsmFile, visited: &[usize]) -> HashSet<&'a str> {
    visited
        .iter()
        .filter_map(|&l| file.instruction(l)?.control.jump_target())
        .collect()
}

fn partition_groups(file: &AsmFile, visited: &[usize], end_lines: &[usize]) -> Vec<FallthroughGroup> {
    let targets = jump_targets(file, visited);
    let next_instruction = |line: usize| {
        file.lines[line + 1..]
            .iter()
            .find(|l| matches!(l.content, LineContent::Instruction(_)))
            .map(|l| l.index)
    };

    let mut groups: Vec<FallthroughGroup> = Vec::new();
    let mut prev: Option<usize> = None;
    for &line in visited {
        // Jump-target labels between the previous instruction and this one.
        let mut labels = Vec::new();
        for l in file.lines[..line].iter().rev() {
            match &l.content {
                LineContent::Instruction(_) => break,
                LineContent::LabelDef { name } if targets.contains(name.as_str()) => {
                    labels.push(name.clone())
                }
                _ => {}
            }
        }
        labels.reverse();

        let instr = file.instruction(line).unwrap();
        let contiguous = prev.is_some_and(|p| next_instruction(p) == Some(line));
        let cut_after_prev = prev.is_some_and(|p| file.instruction(p).unwrap().control.ends_group());
        if groups.is_empty() || !contiguous || cut_after_prev || !labels.is_empty() {
            groups.push(FallthroughGroup {
                leading_labels: labels,
                instructions: Vec::new(),
                lines: Vec::new(),
                terminator: Terminator::RegionEnd,
                fingerprint: String::new(),
            });
        }
        let group = groups.last_mut().unwrap();
        group.instructions.push(instr.clone());
        group.lines.push(line);
        prev = Some(line);
    }

    for group in &mut groups {
        let last_line = *group.lines.last().unwrap();
        group.terminator = match &group.instructions.last().unwrap().control {
            ControlKind::UnconditionalJump(_) => Terminator::UnconditionalJump,
            ControlKind::IndirectJump => Terminator::IndirectJump,
            ControlKind::Return => Terminator::Return,
            ControlKind::Call(_) | ControlKind::IndirectCall => Terminator::Call,
            ControlKind::Fallthrough | ControlKind::ConditionalJump(_) => {
                match next_instruction(last_line) {
                    Some(n) if !end_lines.contains(&n) && visited.binary_search(&n).is_ok() => {
                        Terminator::Fallthrough
                    }
                    _ => Terminator::RegionEnd,
                }
            }
        };
        group.fingerprint = fingerprint(&group.instructions);
    }
    groups
}
