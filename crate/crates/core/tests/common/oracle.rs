//! Brute-force region equivalence used to cross-check the classifier.
//!
//! Works straight from the parsed lines: walks the code from the begin mark
//! depth-first, numbers instructions in visit order and records each
//! instruction with registers blanked out, `.L` names canonicalized by first
//! use and jump targets replaced by visit numbers. Two regions are equivalent
//! when the instruction multisets and these traces agree.

use std::collections::HashMap;

use mvee_core::asm::{AsmFile, LineContent, OperandKind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Succ {
    Node(usize),
    End,
    Outside,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub nodes: Vec<(String, Vec<Succ>)>,
}

impl Trace {
    pub fn multiset(&self) -> Vec<String> {
        let mut v: Vec<String> = self.nodes.iter().map(|(t, _)| t.clone()).collect();
        v.sort();
        v
    }
}

fn marker_id(file: &AsmFile, line: usize) -> Option<String> {
    let ins = file.instruction(line)?;
    if ins.mnemonic != "call" {
        return None;
    }
    let raw = &ins.operands.first()?.raw;
    let sym = raw.split('@').next().unwrap();
    sym.strip_prefix("mvee_begin_")
        .map(|s| format!("begin:{s}"))
        .or_else(|| sym.strip_prefix("mvee_end_").map(|s| format!("end:{s}")))
}

fn blank_registers(text: &str) -> String {
    let mut out = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        if c == '%' {
            while chars.peek().is_some_and(|c| c.is_ascii_alphanumeric()) {
                chars.next();
            }
            out.push_str("%r");
        } else {
            out.push(c);
        }
    }
    out
}

pub fn trace(file: &AsmFile, section: &str) -> Trace {
    let lines = &file.lines;
    let begin = (0..lines.len()).find(|&l| marker_id(file, l) == Some(format!("begin:{section}"))).expect("begin mark");
    let ends: Vec<usize> = (0..lines.len()).filter(|&l| marker_id(file, l) == Some(format!("end:{section}"))).collect();
    assert!(!ends.is_empty(), "end mark");
    let mut label_line = HashMap::new();
    for (i, l) in lines.iter().enumerate() {
        if let LineContent::LabelDef { name } = &l.content {
            label_line.insert(name.clone(), i);
        }
    }
    // first instruction at or after `line`, stepping over other sections' marks
    let resolve = |mut line: usize| -> Succ {
        loop {
            if line >= lines.len() {
                return Succ::Outside;
            }
            if file.instruction(line).is_some() {
                if ends.contains(&line) {
                    return Succ::End;
                }
                if line == begin {
                    return Succ::Outside;
                }
                if marker_id(file, line).is_none() {
                    return Succ::Node(line);
                }
            }
            line += 1;
        }
    };

    let mut order: Vec<usize> = Vec::new();
    let mut number: HashMap<usize, usize> = HashMap::new();
    let mut raw_succ: HashMap<usize, Vec<Succ>> = HashMap::new();
    let mut stack = vec![resolve(begin + 1)];
    while let Some(s) = stack.pop() {
        let Succ::Node(line) = s else { continue };
        if number.contains_key(&line) {
            continue;
        }
        number.insert(line, order.len());
        order.push(line);
        let ins = file.instruction(line).unwrap();
        let m = ins.mnemonic.as_str();
        let target = ins.operands.first().and_then(|o| match &o.kind {
            OperandKind::LabelRef { name } if !o.indirect => Some(name.clone()),
            _ => None,
        });
        let succ: Vec<Succ> = if m == "ret" || m == "retq" || m.ends_with(" ret") {
            vec![]
        } else if m.starts_with('j') {
            let jumped = match &target {
                Some(name) => label_line.get(name).map_or(Succ::Outside, |&l| resolve(l)),
                None => Succ::Outside,
            };
            let indirect = target.is_none();
            match (m == "jmp", indirect) {
                (_, true) if m == "jmp" => vec![],
                (true, _) => vec![jumped],
                (false, _) => vec![resolve(line + 1), jumped],
            }
        } else {
            vec![resolve(line + 1)]
        };
        for s in succ.iter().rev() {
            stack.push(s.clone());
        }
        raw_succ.insert(line, succ);
    }

    let mut names: HashMap<String, String> = HashMap::new();
    let mut nodes = Vec::new();
    for &line in &order {
        let ins = file.instruction(line).unwrap();
        let is_jump = ins.mnemonic.starts_with('j');
        let ops: Vec<String> = ins
            .operands
            .iter()
            .enumerate()
            .filter(|(i, o)| !(is_jump && *i == 0 && matches!(o.kind, OperandKind::LabelRef { .. }) && !o.indirect))
            .map(|(_, o)| match &o.kind {
                OperandKind::LabelRef { name } if name.starts_with(".L") => {
                    let n = names.len();
                    names.entry(name.clone()).or_insert_with(|| format!(".N{n}")).clone()
                }
                _ => blank_registers(&o.raw),
            })
            .collect();
        let text = format!("{} {}", ins.mnemonic, ops.join(","));
        let succ = raw_succ[&line]
            .iter()
            .map(|s| match s {
                Succ::Node(l) => Succ::Node(number[l]),
                other => other.clone(),
            })
            .collect();
        nodes.push((text, succ));
    }
    Trace { nodes }
}

/// Equivalent up to register names, label names and layout of the code.
pub fn equivalent(a: &AsmFile, b: &AsmFile, section: &str) -> bool {
    let (ta, tb) = (trace(a, section), trace(b, section));
    ta.multiset() == tb.multiset() && ta == tb
}
