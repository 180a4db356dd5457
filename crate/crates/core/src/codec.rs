//! Text serialization of structures for pretraining (CPT) and fine-tuning
//! (SFT) corpora, and parsing of free-form model responses back into
//! structure predictions.
//!
//! Rendering is deterministic and byte-stable: numbers use fixed-decimal,
//! round-half-away-from-zero formatting (lattice parameters to two decimals,
//! translations and Euler angles to three), so a value and its rendering
//! differ by at most half a unit in the last place. Parsing is lenient by
//! default — prose around and between the data lines is skipped, and any
//! punctuation between numbers is accepted — with a strict variant that
//! admits only the canonical rendered shape.

use crate::assembly::Pose;
use crate::frames::{rotated_principal_axis, BuildingBlock};
use crate::lattice::{wrap_frac, FracCoord, LatticeParams};
use crate::rotation::{euler_to_matrix, EulerAngles};
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;
use std::path::Path;

/// Guard digits rendered past the kept decimals when rounding; six digits
/// put the guard well below every tolerance in the toolkit.
const GUARD_DIGITS: usize = 6;

/// Slack accepted beyond the pitch range before a parse is rejected:
/// three-decimal rounding can push a boundary value up to 5e-4 outside.
const ANGLE_QUANTIZATION_SLACK: f64 = 1e-3;

/// Default task-description sentence for the fine-tuning instruction.
const DEFAULT_TASK_DESCRIPTION: &str =
    "You are assembling a metal-organic framework from its building blocks.";

/// Default output-format sentence for the fine-tuning instruction.
const DEFAULT_OUTPUT_FORMAT: &str = "one line with the six lattice parameters \"a b c alpha beta \
gamma\" (lengths in angstroms, angles in degrees), then one line per building block \"[i] \
translation=(x y z) rotation=(roll pitch yaw)\" with fractional translations and Euler angles \
in radians, in the same order as the input blocks.";

/// Errors raised while rendering corpus text.
#[derive(Debug, thiserror::Error)]
pub enum CodecError {
    /// Rendering needs at least one block.
    #[error("at least one building block is required")]
    EmptyBlocks,
    /// Aligned block/pose lists differ in length.
    #[error("block count {0} does not match pose count {1}")]
    CountMismatch(usize, usize),
    /// A template file could not be read.
    #[error("failed to read template file {path}: {source}")]
    TemplateIo {
        path: String,
        source: std::io::Error,
    },
}

/// What went wrong while parsing a response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParseErrorKind {
    /// A numeric token was unusable (scientific notation, overflow).
    MalformedNumber,
    /// A required section never appeared.
    MissingField,
    /// Pose indices are not contiguous from zero.
    IndexGap,
    /// Pose count differs from the declared block count.
    CountMismatch,
    /// No parseable content at all.
    Empty,
    /// A value outside its valid range (invalid cell, pitch beyond ±π/2).
    OutOfRange,
}

/// A single diagnosed parse failure with the byte offset it anchors to.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
#[error("parse error at byte {offset}: {message}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub offset: usize,
    pub message: String,
}

impl ParseError {
    fn new(kind: ParseErrorKind, offset: usize, message: impl Into<String>) -> Self {
        Self { kind, offset, message: message.into() }
    }
}

/// A successfully parsed response: cell parameters plus one pose per block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedPrediction {
    pub lattice: LatticeParams,
    pub poses: Vec<Pose>,
}

/// The text templates the renderers fill in.
///
/// Placeholders are literal `[Name]` keys replaced by value; text that is
/// not a known key (such as the axis `[1,0,0]`) passes through untouched.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    pub cpt: String,
    pub cpt_local_line: String,
    pub cpt_placement_line: String,
    pub sft_instruction: String,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self {
            cpt: include_str!("../templates/cpt.txt").to_string(),
            cpt_local_line: trim_line(include_str!("../templates/cpt_local_line.txt")),
            cpt_placement_line: trim_line(include_str!("../templates/cpt_placement_line.txt")),
            sft_instruction: include_str!("../templates/sft_instruction.txt").to_string(),
        }
    }
}

/// Strips the trailing newline an editor leaves on a single-line template.
fn trim_line(s: &str) -> String {
    s.trim_end_matches('\n').trim_end_matches('\r').to_string()
}

impl TemplateSet {
    /// Loads the four template files (`cpt.txt`, `cpt_local_line.txt`,
    /// `cpt_placement_line.txt`, `sft_instruction.txt`) from a directory.
    pub fn from_dir(dir: &Path) -> Result<Self, CodecError> {
        let read = |name: &str| -> Result<String, CodecError> {
            let path = dir.join(name);
            std::fs::read_to_string(&path).map_err(|source| CodecError::TemplateIo {
                path: path.display().to_string(),
                source,
            })
        };
        Ok(Self {
            cpt: read("cpt.txt")?,
            cpt_local_line: trim_line(&read("cpt_local_line.txt")?),
            cpt_placement_line: trim_line(&read("cpt_placement_line.txt")?),
            sft_instruction: read("sft_instruction.txt")?,
        })
    }
}

/// Renders `value` with a fixed number of decimals, rounding halves away
/// from zero, with `-0.000` normalized to `0.000`.
///
/// The value is first rendered with six guard digits, so a value that is a
/// decimal literal's nearest double (`12.345` stored a hair below the tie)
/// still rounds the way the literal reads.
pub fn format_fixed(value: f64, decimals: usize) -> String {
    if !value.is_finite() {
        return format!("{value}");
    }
    let negative = value < 0.0;
    let guarded = format!("{:.*}", decimals + GUARD_DIGITS, value.abs());
    let (int_part, frac_part) = guarded
        .split_once('.')
        .expect("guarded rendering always has a fractional part");
    let mut digits: Vec<u8> = int_part
        .bytes()
        .chain(frac_part[..decimals].bytes())
        .collect();
    if frac_part[decimals..].as_bytes() >= b"500000".as_slice() {
        // Half or more remains: round the kept digits up, carrying.
        let mut i = digits.len();
        loop {
            if i == 0 {
                digits.insert(0, b'1');
                break;
            }
            i -= 1;
            if digits[i] == b'9' {
                digits[i] = b'0';
            } else {
                digits[i] += 1;
                break;
            }
        }
    }
    let split = digits.len() - decimals;
    let mut out = String::new();
    if negative && digits.iter().any(|&d| d != b'0') {
        out.push('-');
    }
    out.push_str(std::str::from_utf8(&digits[..split]).expect("ascii digits"));
    if decimals > 0 {
        out.push('.');
        out.push_str(std::str::from_utf8(&digits[split..]).expect("ascii digits"));
    }
    out
}

/// Space-separated triple `(x y z)` at the given decimal precision.
fn format_triple(v: [f64; 3], decimals: usize) -> String {
    format!(
        "({} {} {})",
        format_fixed(v[0], decimals),
        format_fixed(v[1], decimals),
        format_fixed(v[2], decimals)
    )
}

/// The six cell parameters `a b c alpha beta gamma`, two decimals each.
pub fn format_lattice(p: &LatticeParams) -> String {
    [p.a, p.b, p.c, p.alpha, p.beta, p.gamma]
        .map(|v| format_fixed(v, 2))
        .join(" ")
}

/// One indexed pose line, three decimals per component; the translation is
/// wrapped to `[0, 1)` first.
pub fn format_pose_line(index: usize, pose: &Pose) -> String {
    format!(
        "[{index}] translation={} rotation={}",
        format_triple(pose.wrapped_translation(), 3),
        format_triple(pose.euler.to_array(), 3)
    )
}

/// One block of a pretraining record: identity, bulk descriptors, and
/// placement, aligned by index with the other blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CptBlockEntry {
    pub smiles: String,
    pub molecular_weight: f64,
    pub pca_span: [f64; 3],
    pub translation: [f64; 3],
    pub euler: EulerAngles,
    pub rotated_axis: [f64; 3],
}

/// Everything the pretraining renderer needs for one structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CptRecord {
    pub topology_code: String,
    pub topology_description: String,
    pub lattice: LatticeParams,
    pub blocks: Vec<CptBlockEntry>,
}

impl CptRecord {
    /// Assembles a record from blocks and their poses, deriving each block's
    /// rotated principal axis from its pose rotation.
    pub fn from_parts(
        topology_code: impl Into<String>,
        topology_description: impl Into<String>,
        lattice: LatticeParams,
        blocks: &[BuildingBlock],
        poses: &[Pose],
    ) -> Result<Self, CodecError> {
        if blocks.len() != poses.len() {
            return Err(CodecError::CountMismatch(blocks.len(), poses.len()));
        }
        if blocks.is_empty() {
            return Err(CodecError::EmptyBlocks);
        }
        let entries = blocks
            .iter()
            .zip(poses)
            .map(|(block, pose)| CptBlockEntry {
                smiles: block.smiles.clone(),
                molecular_weight: block.molecular_weight,
                pca_span: block.pca_span,
                translation: pose.translation,
                euler: pose.euler,
                rotated_axis: rotated_principal_axis(&euler_to_matrix(&pose.euler)),
            })
            .collect();
        Ok(Self {
            topology_code: topology_code.into(),
            topology_description: topology_description.into(),
            lattice,
            blocks: entries,
        })
    }
}

/// Renders one pretraining document from a record and a template set.
pub fn render_cpt(record: &CptRecord, templates: &TemplateSet) -> Result<String, CodecError> {
    if record.blocks.is_empty() {
        return Err(CodecError::EmptyBlocks);
    }
    let local_lines: Vec<String> = record
        .blocks
        .iter()
        .enumerate()
        .map(|(i, b)| {
            templates
                .cpt_local_line
                .replace("[Index]", &i.to_string())
                .replace("[SMILES]", &b.smiles)
                .replace("[Molecular Weight]", &format_fixed(b.molecular_weight, 2))
                .replace("[PCA Span]", &format_triple(b.pca_span, 2))
        })
        .collect();
    let placement_lines: Vec<String> = record
        .blocks
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let wrapped = wrap_frac(&FracCoord::from(b.translation)).to_array();
            templates
                .cpt_placement_line
                .replace("[Index]", &i.to_string())
                .replace("[Translation]", &format_triple(wrapped, 3))
                .replace("[Rotation]", &format_triple(b.euler.to_array(), 3))
                .replace("[Rotated Principal Axis]", &format_triple(b.rotated_axis, 3))
        })
        .collect();
    Ok(templates
        .cpt
        .replace("[Topo Code]", &record.topology_code)
        .replace("[Topo Description]", &record.topology_description)
        .replace("[Lattice Parameters]", &format_lattice(&record.lattice))
        .replace("[Block Local Lines]", &local_lines.join("\n"))
        .replace("[Block Placement Lines]", &placement_lines.join("\n")))
}

/// Renders the fine-tuning instruction for a list of block SMILES.
pub fn render_sft_instruction(
    smiles: &[String],
    templates: &TemplateSet,
) -> Result<String, CodecError> {
    if smiles.is_empty() {
        return Err(CodecError::EmptyBlocks);
    }
    Ok(templates
        .sft_instruction
        .replace("[Task Description]", DEFAULT_TASK_DESCRIPTION)
        .replace("[Output Format]", DEFAULT_OUTPUT_FORMAT)
        .replace("[SMILES List]", &smiles.join(" ")))
}

/// Renders the canonical fine-tuning response: the lattice line, then one
/// pose line per block.
pub fn render_sft_response(
    lattice: &LatticeParams,
    poses: &[Pose],
) -> Result<String, CodecError> {
    if poses.is_empty() {
        return Err(CodecError::EmptyBlocks);
    }
    let mut out = format_lattice(lattice);
    for (i, pose) in poses.iter().enumerate() {
        out.push('\n');
        out.push_str(&format_pose_line(i, pose));
    }
    Ok(out)
}

/// One scanned line of response text.
struct LineScan {
    /// Numeric tokens in order with their byte offsets within the line.
    numbers: Vec<(f64, usize)>,
    /// Leading `[k]` block index, when present.
    index_prefix: Option<usize>,
    /// Offset of the first unusable numeric token, when present.
    malformed: Option<usize>,
}

/// Scans a line for plain decimal numbers (optional sign, digits, optional
/// fraction). Scientific notation and overflowing values are flagged rather
/// than accepted, since the renderer never emits them.
fn scan_line(line: &str) -> LineScan {
    let bytes = line.as_bytes();
    let mut numbers = Vec::new();
    let mut malformed = None;
    let mut index_prefix = None;
    let mut start = 0;

    // Optional `[k]` prefix after leading whitespace.
    let mut i = 0;
    while i < bytes.len() && bytes[i].is_ascii_whitespace() {
        i += 1;
    }
    if i < bytes.len() && bytes[i] == b'[' {
        let digits_start = i + 1;
        let mut j = digits_start;
        while j < bytes.len() && bytes[j].is_ascii_digit() {
            j += 1;
        }
        if j > digits_start && j < bytes.len() && bytes[j] == b']' {
            if let Ok(k) = line[digits_start..j].parse::<usize>() {
                index_prefix = Some(k);
                start = j + 1;
            }
        }
    }

    let mut i = start;
    while i < bytes.len() {
        let b = bytes[i];
        let sign = b == b'-' || b == b'+';
        let digit_at = |k: usize| k < bytes.len() && bytes[k].is_ascii_digit();
        let starts_number = b.is_ascii_digit()
            || (b == b'.' && digit_at(i + 1))
            || (sign && (digit_at(i + 1) || (i + 1 < bytes.len() && bytes[i + 1] == b'.' && digit_at(i + 2))));
        if !starts_number {
            i += 1;
            continue;
        }
        let tok_start = i;
        if sign {
            i += 1;
        }
        while digit_at(i) {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'.' {
            i += 1;
            while digit_at(i) {
                i += 1;
            }
        }
        // A trailing exponent makes the token scientific notation.
        if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
            let mut j = i + 1;
            if j < bytes.len() && (bytes[j] == b'-' || bytes[j] == b'+') {
                j += 1;
            }
            if digit_at(j) {
                while digit_at(j) {
                    j += 1;
                }
                malformed.get_or_insert(tok_start);
                i = j;
                continue;
            }
        }
        match line[tok_start..i].parse::<f64>() {
            Ok(v) if v.is_finite() => numbers.push((v, tok_start)),
            _ => {
                malformed.get_or_insert(tok_start);
            }
        }
    }
    LineScan { numbers, index_prefix, malformed }
}

/// Wraps a periodic angle into `[-π, π]`.
fn wrap_angle(v: f64) -> f64 {
    v.sin().atan2(v.cos())
}

/// Builds a pose from a line's first six numbers. Roll and yaw are periodic
/// and wrap into range; pitch is not, so values beyond ±π/2 (plus rounding
/// slack) are range errors.
fn pose_from_numbers(scan: &LineScan, line_start: usize) -> Result<Pose, ParseError> {
    let v: Vec<f64> = scan.numbers.iter().take(6).map(|t| t.0).collect();
    let translation = wrap_frac(&FracCoord::new(v[0], v[1], v[2])).to_array();
    let (roll, pitch, yaw) = (v[3], v[4], v[5]);
    if pitch.abs() > FRAC_PI_2 + ANGLE_QUANTIZATION_SLACK {
        return Err(ParseError::new(
            ParseErrorKind::OutOfRange,
            line_start + scan.numbers[4].1,
            format!("pitch {pitch} outside [-pi/2, pi/2]"),
        ));
    }
    let euler = EulerAngles::new(
        wrap_angle(roll),
        pitch.clamp(-FRAC_PI_2, FRAC_PI_2),
        wrap_angle(yaw),
    )
    .expect("wrapped and clamped angles are canonical");
    Ok(Pose { translation, euler })
}

/// Parses a model response leniently: prose lines are skipped, any
/// punctuation between numbers is accepted, and indexed lines before the
/// lattice line (echoes of the prompt) are ignored. The first line carrying
/// six valid cell parameters is the lattice; every later line with at least
/// six numbers is a pose.
pub fn parse_response(text: &str, expected_blocks: usize) -> Result<ParsedPrediction, ParseError> {
    if text.trim().is_empty() {
        return Err(ParseError::new(ParseErrorKind::Empty, 0, "response contains no text"));
    }
    let mut lattice: Option<LatticeParams> = None;
    let mut poses: Vec<Pose> = Vec::new();
    let mut first_malformed: Option<usize> = None;
    let mut invalid_lattice_at: Option<usize> = None;
    let mut saw_number = false;

    let mut offset = 0usize;
    for line in text.split('\n') {
        let line_start = offset;
        offset += line.len() + 1;
        let scan = scan_line(line);
        saw_number |= !scan.numbers.is_empty();
        if let Some(off) = scan.malformed {
            // Only lines that might have been data poison the diagnosis.
            if scan.numbers.len() + 1 >= 6 {
                first_malformed.get_or_insert(line_start + off);
            }
            continue;
        }
        if scan.numbers.len() < 6 {
            continue;
        }
        if lattice.is_none() {
            if scan.index_prefix.is_some() {
                continue;
            }
            let v: Vec<f64> = scan.numbers.iter().map(|t| t.0).collect();
            match LatticeParams::new(v[0], v[1], v[2], v[3], v[4], v[5]) {
                Ok(p) => lattice = Some(p),
                Err(_) => {
                    invalid_lattice_at.get_or_insert(line_start + scan.numbers[0].1);
                }
            }
        } else {
            if let Some(k) = scan.index_prefix {
                if k != poses.len() {
                    return Err(ParseError::new(
                        ParseErrorKind::IndexGap,
                        line_start,
                        format!("expected block index {}, found {k}", poses.len()),
                    ));
                }
            }
            poses.push(pose_from_numbers(&scan, line_start)?);
        }
    }

    let lattice = match lattice {
        Some(l) => l,
        None => {
            return Err(if let Some(off) = invalid_lattice_at {
                ParseError::new(
                    ParseErrorKind::OutOfRange,
                    off,
                    "no candidate line held valid cell parameters",
                )
            } else if let Some(off) = first_malformed {
                ParseError::new(ParseErrorKind::MalformedNumber, off, "unusable numeric token")
            } else if saw_number {
                ParseError::new(ParseErrorKind::MissingField, 0, "no lattice parameter line found")
            } else {
                ParseError::new(ParseErrorKind::Empty, 0, "response contains no numeric content")
            });
        }
    };
    if poses.len() != expected_blocks {
        return Err(ParseError::new(
            ParseErrorKind::CountMismatch,
            text.len(),
            format!("expected {expected_blocks} pose lines, found {}", poses.len()),
        ));
    }
    Ok(ParsedPrediction { lattice, poses })
}

/// A cursor over one line for the strict, shape-checked parse.
struct Cursor<'a> {
    line: &'a str,
    pos: usize,
    base: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, message: impl Into<String>) -> ParseError {
        ParseError::new(ParseErrorKind::MalformedNumber, self.base + self.pos, message)
    }

    fn expect(&mut self, lit: &str) -> Result<(), ParseError> {
        if self.line[self.pos..].starts_with(lit) {
            self.pos += lit.len();
            Ok(())
        } else {
            Err(self.err(format!("expected \"{lit}\"")))
        }
    }

    fn digits(&mut self) -> Result<usize, ParseError> {
        let rest = self.line[self.pos..].as_bytes();
        let n = rest.iter().take_while(|b| b.is_ascii_digit()).count();
        if n == 0 {
            return Err(self.err("expected an index"));
        }
        let value = self.line[self.pos..self.pos + n]
            .parse::<usize>()
            .map_err(|_| self.err("index out of range"))?;
        self.pos += n;
        Ok(value)
    }

    fn number(&mut self) -> Result<f64, ParseError> {
        let bytes = self.line.as_bytes();
        let start = self.pos;
        let mut i = self.pos;
        if i < bytes.len() && bytes[i] == b'-' {
            i += 1;
        }
        let digits0 = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if i == digits0 {
            return Err(self.err("expected a number"));
        }
        if i < bytes.len() && bytes[i] == b'.' {
            i += 1;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
        }
        let value = self.line[start..i]
            .parse::<f64>()
            .map_err(|_| self.err("expected a number"))?;
        if !value.is_finite() {
            return Err(self.err("number overflows"));
        }
        self.pos = i;
        Ok(value)
    }

    fn finished(&self) -> bool {
        self.line[self.pos..].trim().is_empty()
    }
}

/// Parses a response admitting only the canonical rendered shape: the first
/// non-blank line is exactly six space-separated cell parameters, and every
/// later non-blank line is exactly `[k] translation=(x y z) rotation=(r p y)`
/// with contiguous indices.
pub fn parse_response_strict(
    text: &str,
    expected_blocks: usize,
) -> Result<ParsedPrediction, ParseError> {
    if text.trim().is_empty() {
        return Err(ParseError::new(ParseErrorKind::Empty, 0, "response contains no text"));
    }
    let mut lattice: Option<LatticeParams> = None;
    let mut poses: Vec<Pose> = Vec::new();
    let mut offset = 0usize;
    for line in text.split('\n') {
        let line_start = offset;
        offset += line.len() + 1;
        if line.trim().is_empty() {
            continue;
        }
        if lattice.is_none() {
            let mut values = [0.0f64; 6];
            let mut count = 0;
            for tok in line.split_whitespace() {
                let tok_offset = line_start + (tok.as_ptr() as usize - line.as_ptr() as usize);
                if count == 6 {
                    return Err(ParseError::new(
                        ParseErrorKind::MalformedNumber,
                        tok_offset,
                        "lattice line must hold exactly six numbers",
                    ));
                }
                let mut cursor = Cursor { line: tok, pos: 0, base: tok_offset };
                values[count] = cursor.number()?;
                if cursor.pos != tok.len() {
                    return Err(ParseError::new(
                        ParseErrorKind::MalformedNumber,
                        tok_offset + cursor.pos,
                        "unexpected trailing characters in a number",
                    ));
                }
                count += 1;
            }
            if count != 6 {
                return Err(ParseError::new(
                    ParseErrorKind::MissingField,
                    line_start,
                    format!("lattice line holds {count} numbers, expected six"),
                ));
            }
            lattice = Some(
                LatticeParams::new(values[0], values[1], values[2], values[3], values[4], values[5])
                    .map_err(|e| {
                        ParseError::new(ParseErrorKind::OutOfRange, line_start, e.to_string())
                    })?,
            );
        } else {
            let trimmed = line.trim_start();
            let base = line_start + (line.len() - trimmed.len());
            let trimmed = trimmed.trim_end();
            let mut c = Cursor { line: trimmed, pos: 0, base };
            c.expect("[")?;
            let k = c.digits()?;
            if k != poses.len() {
                return Err(ParseError::new(
                    ParseErrorKind::IndexGap,
                    base,
                    format!("expected block index {}, found {k}", poses.len()),
                ));
            }
            c.expect("] translation=(")?;
            let tx = c.number()?;
            c.expect(" ")?;
            let ty = c.number()?;
            c.expect(" ")?;
            let tz = c.number()?;
            c.expect(") rotation=(")?;
            let roll = c.number()?;
            c.expect(" ")?;
            let pitch = c.number()?;
            c.expect(" ")?;
            let yaw = c.number()?;
            c.expect(")")?;
            if !c.finished() {
                return Err(c.err("unexpected trailing text on a pose line"));
            }
            if pitch.abs() > FRAC_PI_2 + ANGLE_QUANTIZATION_SLACK {
                return Err(ParseError::new(
                    ParseErrorKind::OutOfRange,
                    base,
                    format!("pitch {pitch} outside [-pi/2, pi/2]"),
                ));
            }
            let euler = EulerAngles::new(
                wrap_angle(roll),
                pitch.clamp(-FRAC_PI_2, FRAC_PI_2),
                wrap_angle(yaw),
            )
            .expect("wrapped and clamped angles are canonical");
            poses.push(Pose {
                translation: wrap_frac(&FracCoord::new(tx, ty, tz)).to_array(),
                euler,
            });
        }
    }
    let lattice = lattice.ok_or_else(|| {
        ParseError::new(ParseErrorKind::Empty, 0, "response contains no numeric content")
    })?;
    if poses.len() != expected_blocks {
        return Err(ParseError::new(
            ParseErrorKind::CountMismatch,
            text.len(),
            format!("expected {expected_blocks} pose lines, found {}", poses.len()),
        ));
    }
    Ok(ParsedPrediction { lattice, poses })
}
