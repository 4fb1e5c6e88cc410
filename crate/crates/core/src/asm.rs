//! Typed model of GNU-as AT&T x86-64 assembly as emitted by `gcc -S`.
//!
//! Parsing is line oriented. Every line becomes exactly one [`LineContent`]
//! variant and keeps its original text for display. Instructions are not
//! enumerated: any mnemonic is accepted and its operands are parsed with a
//! generic operand grammar. Only the jump, call and return families get a
//! control-flow classification other than [`ControlKind::Fallthrough`].

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {reason}")]
pub struct ParseError {
    /// 0-based line index.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AsmFile {
    pub path: PathBuf,
    pub build_id: String,
    pub lines: Vec<AsmLine>,
    /// Label names defined more than once (legal for numeric local labels).
    pub duplicate_labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AsmLine {
    pub index: usize,
    pub text: String,
    pub content: LineContent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum LineContent {
    Instruction(Instruction),
    LabelDef { name: String },
    Directive { raw: String },
    Comment { raw: String },
    Blank,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Instruction {
    pub mnemonic: String,
    pub operands: Vec<Operand>,
    pub control: ControlKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "target", rename_all = "camelCase")]
pub enum ControlKind {
    Fallthrough,
    ConditionalJump(String),
    UnconditionalJump(String),
    IndirectJump,
    Call(String),
    IndirectCall,
    Return,
}

impl ControlKind {
    /// True if execution may continue with the next instruction in layout order.
    pub fn falls_through(&self) -> bool {
        !matches!(
            self,
            ControlKind::UnconditionalJump(_) | ControlKind::IndirectJump | ControlKind::Return
        )
    }

    /// Instructions after which a fallthrough-group is cut.
    pub fn ends_group(&self) -> bool {
        !matches!(self, ControlKind::Fallthrough | ControlKind::ConditionalJump(_))
    }

    pub fn jump_target(&self) -> Option<&str> {
        match self {
            ControlKind::ConditionalJump(t) | ControlKind::UnconditionalJump(t) => Some(t),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Operand {
    pub kind: OperandKind,
    /// Verbatim operand text, including a leading `*` for indirect operands.
    pub raw: String,
    pub indirect: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum OperandKind {
    Register { name: String },
    /// `value` is `None` for symbolic immediates such as `$.LC0`.
    Immediate { value: Option<i64> },
    Memory(MemoryRef),
    LabelRef { name: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MemoryRef {
    pub segment: Option<String>,
    pub displacement: Option<String>,
    pub base: Option<String>,
    pub index: Option<String>,
    pub scale: Option<u8>,
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.mnemonic)?;
        for (i, op) in self.operands.iter().enumerate() {
            f.write_str(if i == 0 { " " } else { ", " })?;
            f.write_str(&op.raw)?;
        }
        Ok(())
    }
}

impl AsmFile {
    pub fn instruction(&self, line: usize) -> Option<&Instruction> {
        match &self.lines.get(line)?.content {
            LineContent::Instruction(i) => Some(i),
            _ => None,
        }
    }

    /// Maps each label name to the line of its first definition.
    pub fn label_lines(&self) -> HashMap<&str, usize> {
        let mut map = HashMap::new();
        for line in &self.lines {
            if let LineContent::LabelDef { name } = &line.content {
                map.entry(name.as_str()).or_insert(line.index);
            }
        }
        map
    }
}

const PREFIXES: &[&str] = &[
    "rep", "repe", "repz", "repne", "repnz", "lock", "notrack", "bnd", "data16", "data32",
    "addr32", "cs", "ds", "es", "fs", "gs", "ss", "rex", "rex64", "xacquire", "xrelease",
];

const JUMPS: &[&str] = &["jmp", "jmpq", "jmpl", "jmpw"];
const CALLS: &[&str] = &["call", "callq", "calll", "callw"];
const RETURNS: &[&str] = &["ret", "retq", "retl", "retw", "retn"];
const CONDITIONAL_JUMPS: &[&str] = &[
    "ja", "jae", "jb", "jbe", "jc", "je", "jg", "jge", "jl", "jle", "jna", "jnae", "jnb", "jnbe",
    "jnc", "jne", "jng", "jnge", "jnl", "jnle", "jno", "jnp", "jns", "jnz", "jo", "jp", "jpe",
    "jpo", "js", "jz", "jcxz", "jecxz", "jrcxz", "loop", "loope", "loopne", "loopz", "loopnz",
];

/// Control-flow classification of an instruction. Total and deterministic.
pub fn classify_control(mnemonic: &str, operands: &[Operand]) -> ControlKind {
    let base = mnemonic.rsplit(' ').next().unwrap_or(mnemonic);
    let direct = match operands.first() {
        Some(Operand { kind: OperandKind::LabelRef { name }, indirect: false, .. }) => Some(name),
        _ => None,
    };
    if JUMPS.contains(&base) {
        match direct {
            Some(t) => ControlKind::UnconditionalJump(t.clone()),
            None => ControlKind::IndirectJump,
        }
    } else if CONDITIONAL_JUMPS.contains(&base) {
        match direct {
            Some(t) => ControlKind::ConditionalJump(t.clone()),
            None => ControlKind::IndirectJump,
        }
    } else if CALLS.contains(&base) {
        match direct {
            Some(t) => ControlKind::Call(t.clone()),
            None => ControlKind::IndirectCall,
        }
    } else if RETURNS.contains(&base) {
        ControlKind::Return
    } else {
        ControlKind::Fallthrough
    }
}

pub fn parse_asm_file(text: &str, build_id: &str) -> Result<AsmFile, ParseError> {
    parse_asm_file_at(text, build_id, PathBuf::new())
}

pub fn parse_asm_file_at(
    text: &str,
    build_id: &str,
    path: PathBuf,
) -> Result<AsmFile, ParseError> {
    let mut lines = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (index, raw) in text.lines().enumerate() {
        let raw = raw.strip_suffix('\r').unwrap_or(raw);
        let content =
            parse_line(raw).map_err(|reason| ParseError { line: index, reason })?;
        if let LineContent::LabelDef { name } = &content {
            *seen.entry(name.clone()).or_default() += 1;
        }
        lines.push(AsmLine { index, text: raw.to_string(), content });
    }
    let mut duplicate_labels: Vec<String> =
        seen.into_iter().filter(|(_, n)| *n > 1).map(|(name, _)| name).collect();
    duplicate_labels.sort();
    Ok(AsmFile { path, build_id: build_id.to_string(), lines, duplicate_labels })
}

pub fn parse_line(raw: &str) -> Result<LineContent, String> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Ok(LineContent::Blank);
    }
    if trimmed.starts_with('#') || trimmed.starts_with("//") || trimmed.starts_with("/*") {
        return Ok(LineContent::Comment { raw: trimmed.to_string() });
    }
    let code = strip_comment(trimmed).trim_end();

    if let Some((label, rest)) = split_label(code) {
        if !rest.trim().is_empty() {
            return Err(format!("statement after label `{label}` is not supported"));
        }
        return Ok(LineContent::LabelDef { name: label.to_string() });
    }
    if code.starts_with('.') {
        let directive = code.split_whitespace().next().unwrap_or("");
        if directive == ".intel_syntax" {
            return Err("Intel syntax is not supported".into());
        }
        return Ok(LineContent::Directive { raw: code.to_string() });
    }
    parse_instruction(code).map(LineContent::Instruction)
}

fn strip_comment(code: &str) -> &str {
    let mut in_quote = false;
    let mut escaped = false;
    for (i, c) in code.char_indices() {
        match c {
            _ if escaped => escaped = false,
            '\\' if in_quote => escaped = true,
            '"' => in_quote = !in_quote,
            '#' if !in_quote => return &code[..i],
            _ => {}
        }
    }
    code
}

fn is_symbol_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '$' | '@')
}

fn is_symbol(s: &str) -> bool {
    !s.is_empty()
        && s.chars().all(is_symbol_char)
        && !s.starts_with(|c: char| c.is_ascii_digit() || c == '$')
}

fn split_label(code: &str) -> Option<(&str, &str)> {
    let colon = code.find(':')?;
    let name = &code[..colon];
    let valid = is_symbol(name) || (!name.is_empty() && name.chars().all(|c| c.is_ascii_digit()));
    valid.then(|| (name, &code[colon + 1..]))
}

fn parse_instruction(code: &str) -> Result<Instruction, String> {
    // `rep; movsb` style prefixes.
    let normalized;
    let code = if code.contains(';') {
        let (head, tail) = code.split_once(';').unwrap();
        if PREFIXES.contains(&head.trim().to_ascii_lowercase().as_str()) && !tail.contains(';') {
            normalized = format!("{} {}", head.trim(), tail.trim());
            normalized.as_str()
        } else {
            return Err("multiple statements on one line are not supported".into());
        }
    } else {
        code
    };

    let mut rest = code.trim();
    let mut words = Vec::new();
    loop {
        let (word, tail) = match rest.find(char::is_whitespace) {
            Some(i) => (&rest[..i], rest[i..].trim_start()),
            None => (rest, ""),
        };
        let lower = word.to_ascii_lowercase();
        let is_prefix = PREFIXES.contains(&lower.as_str()) && !tail.is_empty();
        if !word.chars().all(|c| c.is_ascii_alphanumeric() || c == '.' || c == '_') {
            return Err(format!("invalid mnemonic `{word}`"));
        }
        words.push(lower);
        rest = tail;
        if !is_prefix {
            break;
        }
    }
    let mnemonic = words.join(" ");
    let operands = split_operands(rest)?
        .into_iter()
        .map(parse_operand)
        .collect::<Result<Vec<_>, _>>()?;
    let control = classify_control(&mnemonic, &operands);
    Ok(Instruction { mnemonic, operands, control })
}

fn split_operands(text: &str) -> Result<Vec<&str>, String> {
    let text = text.trim();
    if text.is_empty() {
        return Ok(Vec::new());
    }
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in text.char_indices() {
        match c {
            '(' | '{' => depth += 1,
            ')' | '}' => {
                depth -= 1;
                if depth < 0 {
                    return Err(format!("unbalanced `{c}` in operands"));
                }
            }
            ',' if depth == 0 => {
                parts.push(text[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    if depth != 0 {
        return Err("unbalanced parentheses in operands".into());
    }
    parts.push(text[start..].trim());
    Ok(parts)
}

/// Parses an integer literal as gas reads it (decimal, `0x` hex, `0b` binary,
/// leading-zero octal), with an optional sign.
pub fn parse_int(text: &str) -> Option<i64> {
    let (negative, digits) = match text.as_bytes().first()? {
        b'-' => (true, &text[1..]),
        b'+' => (false, &text[1..]),
        _ => (false, text),
    };
    let lower = digits.to_ascii_lowercase();
    let magnitude = if let Some(hex) = lower.strip_prefix("0x") {
        u64::from_str_radix(hex, 16).ok()?
    } else if let Some(bin) = lower.strip_prefix("0b") {
        u64::from_str_radix(bin, 2).ok()?
    } else if lower.len() > 1 && lower.starts_with('0') {
        u64::from_str_radix(&lower[1..], 8).ok()?
    } else {
        lower.parse::<u64>().ok()?
    };
    let value = magnitude as i64;
    Some(if negative { value.wrapping_neg() } else { value })
}

fn is_expression(text: &str) -> bool {
    !text.is_empty()
        && text
            .chars()
            .all(|c| is_symbol_char(c) || matches!(c, '+' | '-' | '*' | '/' | '<' | '>' | '~' | '|' | '&' | '^'))
}

fn parse_register(text: &str) -> Result<(String, &str), String> {
    let body = text.strip_prefix('%').ok_or_else(|| format!("expected register in `{text}`"))?;
    let end = body.find(|c: char| !c.is_ascii_alphanumeric()).unwrap_or(body.len());
    let mut name = body[..end].to_string();
    let mut rest = &body[end..];
    if name.is_empty() {
        return Err(format!("empty register name in `{text}`"));
    }
    // x87 stack registers: %st(1)
    if name == "st" && rest.starts_with('(') {
        let close = rest.find(')').ok_or_else(|| format!("unterminated `{text}`"))?;
        name.push_str(&rest[..=close]);
        rest = &rest[close + 1..];
    }
    Ok((name, rest))
}

/// Strips AVX-512 decorations such as `{%k1}{z}`.
fn strip_decorations(mut rest: &str) -> Result<&str, String> {
    while let Some(tail) = rest.strip_prefix('{') {
        let close = tail.find('}').ok_or("unterminated `{` decoration")?;
        rest = &tail[close + 1..];
    }
    Ok(rest)
}

pub fn parse_operand(text: &str) -> Result<Operand, String> {
    let raw = text.trim();
    if raw.is_empty() {
        return Err("empty operand".into());
    }
    let (indirect, body) = match raw.strip_prefix('*') {
        Some(b) => (true, b.trim_start()),
        None => (false, raw),
    };
    let kind = parse_operand_kind(body).map_err(|e| format!("operand `{raw}`: {e}"))?;
    Ok(Operand { kind, raw: raw.to_string(), indirect })
}

fn parse_operand_kind(body: &str) -> Result<OperandKind, String> {
    if let Some(expr) = body.strip_prefix('$') {
        if !is_expression(expr) {
            return Err("malformed immediate".into());
        }
        return Ok(OperandKind::Immediate { value: parse_int(expr) });
    }
    if body.starts_with('%') {
        let (name, rest) = parse_register(body)?;
        if let Some(mem) = rest.strip_prefix(':') {
            let mut m = parse_memory(mem)?;
            m.segment = Some(name);
            return Ok(OperandKind::Memory(m));
        }
        if !strip_decorations(rest)?.is_empty() {
            return Err("trailing characters after register".into());
        }
        return Ok(OperandKind::Register { name });
    }
    if !body.contains('(') && is_symbol(body) {
        return Ok(OperandKind::LabelRef { name: body.to_string() });
    }
    parse_memory(body).map(OperandKind::Memory)
}

fn parse_memory(text: &str) -> Result<MemoryRef, String> {
    let text = strip_decorations_suffix(text)?;
    let (disp, inner) = match text.find('(') {
        Some(open) => {
            let inner = text[open + 1..]
                .strip_suffix(')')
                .ok_or("memory reference must end with `)`")?;
            (&text[..open], Some(inner))
        }
        None => (text, None),
    };
    let mut mem = MemoryRef::default();
    if !disp.is_empty() {
        if !is_expression(disp) {
            return Err(format!("malformed displacement `{disp}`"));
        }
        mem.displacement = Some(disp.to_string());
    }
    if let Some(inner) = inner {
        let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
        if parts.len() > 3 {
            return Err("too many memory reference components".into());
        }
        let register = |p: &str| -> Result<Option<String>, String> {
            if p.is_empty() {
                return Ok(None);
            }
            let (name, rest) = parse_register(p)?;
            if !rest.is_empty() {
                return Err(format!("malformed register `{p}`"));
            }
            Ok(Some(name))
        };
        mem.base = register(parts[0])?;
        if let Some(index) = parts.get(1) {
            mem.index = register(index)?;
        }
        if let Some(scale) = parts.get(2) {
            let value = parse_int(scale).ok_or_else(|| format!("malformed scale `{scale}`"))?;
            if ![1, 2, 4, 8].contains(&value) {
                return Err(format!("scale must be 1, 2, 4 or 8, got {value}"));
            }
            mem.scale = Some(value as u8);
        }
        if mem.base.is_none() && mem.index.is_none() {
            return Err("memory reference without base or index register".into());
        }
    } else if mem.displacement.is_none() {
        return Err("empty memory reference".into());
    }
    Ok(mem)
}

fn strip_decorations_suffix(text: &str) -> Result<&str, String> {
    match text.find('{') {
        Some(i) if text.ends_with('}') => {
            strip_decorations(&text[i..])?;
            Ok(&text[..i])
        }
        Some(_) => Err("malformed decoration".into()),
        None => Ok(text),
    }
}
