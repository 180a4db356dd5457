//! Dataset ingestion, corpus emission, and batch evaluation.
//!
//! The interchange format is JSONL: one [`StructureRecord`] or [`EvalCase`]
//! per line. Loading is forgiving — a malformed or invalid line is collected
//! as a [`RecordIssue`] with its line number while the rest of the file still
//! loads — because corpus files are large and a single bad record should not
//! abort a run. Writing is strict and deterministic: identical inputs always
//! produce byte-identical files.
//!
//! [`evaluate_cases`] scores candidate response texts against their
//! ground-truth structures through the full parse → assemble → match
//! pipeline and aggregates, per tolerance set, the match rate, the mean
//! RMSE over matched cases, and the mean wall time per structure.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{Pose, Structure};
use crate::codec::{
    parse_response, parse_response_strict, render_cpt, render_sft_instruction,
    render_sft_response, CptRecord, TemplateSet,
};
use crate::frames::BuildingBlock;
use crate::lattice::LatticeParams;
use crate::matching::{structures_match, MatchError, MatchTolerances};
use crate::rotation::EulerAngles;

/// Structures carrying more blocks than this are discarded at load time;
/// beyond it the assembled cells are too large to score usefully.
pub const MAX_BLOCKS_PER_STRUCTURE: usize = 200;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("failed to read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to encode record {id}: {source}")]
    Encode {
        id: String,
        #[source]
        source: serde_json::Error,
    },
    /// A record that does not satisfy the schema invariants.
    #[error("record {id}: {detail}")]
    Schema { id: String, detail: String },
    #[error("no tolerance sets supplied")]
    NoToleranceSets,
    #[error(transparent)]
    Tolerance(#[from] MatchError),
    #[error("failed to build the worker pool: {0}")]
    Workers(#[from] rayon::ThreadPoolBuildError),
}

/// One rejected line from a load: where it was, which record it claimed to
/// be (when that much parsed), and why it was dropped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RecordIssue {
    /// 1-based line number in the source file.
    pub line: usize,
    /// Record id, when the line parsed far enough to have one.
    pub id: Option<String>,
    pub message: String,
}

impl fmt::Display for RecordIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.id {
            Some(id) => write!(f, "line {} ({}): {}", self.line, id, self.message),
            None => write!(f, "line {}: {}", self.line, self.message),
        }
    }
}

/// One stored building block: the geometry that assembly needs plus the
/// SMILES string shown in prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub species: Vec<u8>,
    /// Centered local coordinates, Å, one triple per atom.
    pub local_coords: Vec<[f64; 3]>,
    pub smiles: String,
    /// Optional role annotation from the upstream decomposition (for
    /// example `"node"` or `"linker"`); carried through round trips but not
    /// interpreted here.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology_role: Option<String>,
}

impl BlockRecord {
    /// Validates the stored geometry and derives the weight and span.
    pub fn to_block(&self) -> Result<BuildingBlock, crate::frames::FrameError> {
        BuildingBlock::new(self.species.clone(), self.local_coords.clone(), self.smiles.clone())
    }

    pub fn from_block(block: &BuildingBlock) -> Self {
        Self {
            species: block.species.clone(),
            local_coords: block.local_coords.clone(),
            smiles: block.smiles.clone(),
            topology_role: None,
        }
    }
}

/// One pre-decomposed structure as stored in a dataset file: the cell, the
/// blocks, one pose per block, and optional topology labels used only by
/// the pretraining corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureRecord {
    pub id: String,
    pub lattice: LatticeParams,
    pub blocks: Vec<BlockRecord>,
    pub poses: Vec<Pose>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology_code: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology_description: Option<String>,
}

impl StructureRecord {
    /// Checks every invariant a deserialized record must satisfy. Field
    /// access bypasses the validating constructors, so a loaded record is
    /// re-validated through them here.
    pub fn validate(&self) -> Result<(), DatasetError> {
        self.validate_detail().map_err(|detail| DatasetError::Schema {
            id: self.id.clone(),
            detail,
        })
    }

    fn validate_detail(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("empty id".into());
        }
        let p = &self.lattice;
        LatticeParams::new(p.a, p.b, p.c, p.alpha, p.beta, p.gamma)
            .map_err(|e| format!("invalid lattice: {e}"))?;
        if self.blocks.is_empty() {
            return Err("no blocks".into());
        }
        if self.blocks.len() != self.poses.len() {
            return Err(format!(
                "{} blocks but {} poses",
                self.blocks.len(),
                self.poses.len()
            ));
        }
        for (i, block) in self.blocks.iter().enumerate() {
            block.to_block().map_err(|e| format!("block {i}: {e}"))?;
        }
        for (i, pose) in self.poses.iter().enumerate() {
            let e = &pose.euler;
            EulerAngles::new(e.roll, e.pitch, e.yaw)
                .map_err(|e| format!("pose {i}: {e}"))?;
            Pose::new(pose.translation, pose.euler).map_err(|e| format!("pose {i}: {e}"))?;
        }
        Ok(())
    }

    /// The validated building blocks, in record order.
    pub fn to_blocks(&self) -> Result<Vec<BuildingBlock>, DatasetError> {
        self.blocks
            .iter()
            .enumerate()
            .map(|(i, b)| {
                b.to_block().map_err(|e| DatasetError::Schema {
                    id: self.id.clone(),
                    detail: format!("block {i}: {e}"),
                })
            })
            .collect()
    }

    /// Assembles the record into its periodic structure.
    pub fn assemble(&self) -> Result<Structure, DatasetError> {
        let blocks = self.to_blocks()?;
        crate::assembly::assemble(&self.lattice, &blocks, &self.poses).map_err(|e| {
            DatasetError::Schema {
                id: self.id.clone(),
                detail: format!("assembly failed: {e}"),
            }
        })
    }

    /// The block SMILES strings, in record order, for prompt construction.
    pub fn smiles_list(&self) -> Vec<String> {
        self.blocks.iter().map(|b| b.smiles.clone()).collect()
    }
}

/// Outcome of loading a dataset: the records that passed validation plus
/// one issue per rejected line.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDataset {
    pub records: Vec<StructureRecord>,
    pub issues: Vec<RecordIssue>,
}

/// Loads a JSONL dataset. Only file-level I/O failures are fatal; a line
/// that fails to parse or validate becomes an issue and the rest of the
/// file still loads. Records with more than [`MAX_BLOCKS_PER_STRUCTURE`]
/// blocks are discarded with a warning.
pub fn load_dataset(path: &Path) -> Result<LoadedDataset, DatasetError> {
    let mut records = Vec::new();
    let mut issues = Vec::new();
    for_each_line(path, |line_no, line| {
        let record: StructureRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                issues.push(RecordIssue {
                    line: line_no,
                    id: None,
                    message: format!("malformed record: {e}"),
                });
                return;
            }
        };
        if record.blocks.len() > MAX_BLOCKS_PER_STRUCTURE {
            issues.push(RecordIssue {
                line: line_no,
                id: Some(record.id.clone()),
                message: format!(
                    "discarded: {} blocks exceeds the {MAX_BLOCKS_PER_STRUCTURE}-block cap",
                    record.blocks.len()
                ),
            });
            return;
        }
        match record.validate() {
            Ok(()) => records.push(record),
            Err(e) => issues.push(RecordIssue {
                line: line_no,
                id: Some(record.id.clone()),
                message: e.to_string(),
            }),
        }
    })?;
    Ok(LoadedDataset { records, issues })
}

/// Writes records as JSONL in input order. Rewriting the same records
/// produces a byte-identical file.
pub fn write_dataset(records: &[StructureRecord], path: &Path) -> Result<(), DatasetError> {
    let file = File::create(path).map_err(|source| DatasetError::Write {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = BufWriter::new(file);
    for record in records {
        let line = serde_json::to_string(record).map_err(|source| DatasetError::Encode {
            id: record.id.clone(),
            source,
        })?;
        writeln!(out, "{line}").map_err(|source| DatasetError::Write {
            path: path.display().to_string(),
            source,
        })?;
    }
    out.flush().map_err(|source| DatasetError::Write {
        path: path.display().to_string(),
        source,
    })
}

/// Which training corpus to emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusMode {
    /// Pretraining documents: one `{"text": …}` line per record.
    Cpt,
    /// Fine-tuning pairs: one `{"prompt": …, "response": …}` line per record.
    Sft,
}

/// Counts from one corpus emission, with one reason per skipped record.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct CorpusCounts {
    pub emitted: usize,
    pub skipped: usize,
    pub reasons: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct CptLine {
    text: String,
}

#[derive(Serialize, Deserialize)]
struct SftLine {
    prompt: String,
    response: String,
}

/// Renders each record through the text codec and writes one JSON line per
/// record, in input order. A record the renderer cannot handle — most
/// commonly one missing the topology labels the pretraining template needs —
/// is skipped and counted with a reason rather than aborting the run.
pub fn emit_corpora(
    records: &[StructureRecord],
    mode: CorpusMode,
    out_path: &Path,
    templates: &TemplateSet,
) -> Result<CorpusCounts, DatasetError> {
    let file = File::create(out_path).map_err(|source| DatasetError::Write {
        path: out_path.display().to_string(),
        source,
    })?;
    let mut out = BufWriter::new(file);
    let mut counts = CorpusCounts::default();
    for record in records {
        match render_record(record, mode, templates) {
            Ok(line) => {
                writeln!(out, "{line}").map_err(|source| DatasetError::Write {
                    path: out_path.display().to_string(),
                    source,
                })?;
                counts.emitted += 1;
            }
            Err(reason) => {
                counts.skipped += 1;
                counts.reasons.push(format!("record {}: {reason}", record.id));
            }
        }
    }
    out.flush().map_err(|source| DatasetError::Write {
        path: out_path.display().to_string(),
        source,
    })?;
    Ok(counts)
}

/// Renders one corpus line, or the reason the record cannot be rendered.
fn render_record(
    record: &StructureRecord,
    mode: CorpusMode,
    templates: &TemplateSet,
) -> Result<String, String> {
    match mode {
        CorpusMode::Cpt => {
            let (Some(code), Some(description)) =
                (record.topology_code.as_ref(), record.topology_description.as_ref())
            else {
                return Err("missing topology fields required by the pretraining template".into());
            };
            let blocks = record.to_blocks().map_err(|e| e.to_string())?;
            let cpt = CptRecord::from_parts(
                code.clone(),
                description.clone(),
                record.lattice,
                &blocks,
                &record.poses,
            )
            .map_err(|e| e.to_string())?;
            let text = render_cpt(&cpt, templates).map_err(|e| e.to_string())?;
            serde_json::to_string(&CptLine { text }).map_err(|e| e.to_string())
        }
        CorpusMode::Sft => {
            let prompt = render_sft_instruction(&record.smiles_list(), templates)
                .map_err(|e| e.to_string())?;
            let response =
                render_sft_response(&record.lattice, &record.poses).map_err(|e| e.to_string())?;
            serde_json::to_string(&SftLine { prompt, response }).map_err(|e| e.to_string())
        }
    }
}

/// One evaluation item: the blocks the instruction showed, one or more
/// candidate response texts, and the ground-truth record to score against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCase {
    pub blocks: Vec<BlockRecord>,
    pub candidates: Vec<String>,
    pub gt: StructureRecord,
}

impl EvalCase {
    fn validate_detail(&self) -> Result<(), String> {
        if self.candidates.is_empty() {
            return Err("no candidates".into());
        }
        if self.blocks.is_empty() {
            return Err("no instruction blocks".into());
        }
        for (i, block) in self.blocks.iter().enumerate() {
            block.to_block().map_err(|e| format!("block {i}: {e}"))?;
        }
        self.gt
            .validate_detail()
            .map_err(|e| format!("ground truth: {e}"))
    }
}

/// Outcome of loading an evaluation file, mirroring [`LoadedDataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedCases {
    pub cases: Vec<EvalCase>,
    pub issues: Vec<RecordIssue>,
}

/// Loads JSONL evaluation cases with the same per-line forgiveness as
/// [`load_dataset`].
pub fn load_eval_cases(path: &Path) -> Result<LoadedCases, DatasetError> {
    let mut cases = Vec::new();
    let mut issues = Vec::new();
    for_each_line(path, |line_no, line| {
        let case: EvalCase = match serde_json::from_str(line) {
            Ok(c) => c,
            Err(e) => {
                issues.push(RecordIssue {
                    line: line_no,
                    id: None,
                    message: format!("malformed case: {e}"),
                });
                return;
            }
        };
        match case.validate_detail() {
            Ok(()) => cases.push(case),
            Err(detail) => issues.push(RecordIssue {
                line: line_no,
                id: Some(case.gt.id.clone()),
                message: detail,
            }),
        }
    })?;
    Ok(LoadedCases { cases, issues })
}

/// Streams non-blank lines of `path` to `visit` with 1-based line numbers.
fn for_each_line(
    path: &Path,
    mut visit: impl FnMut(usize, &str),
) -> Result<(), DatasetError> {
    let file = File::open(path).map_err(|source| DatasetError::Read {
        path: path.display().to_string(),
        source,
    })?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| DatasetError::Read {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        visit(i + 1, &line);
    }
    Ok(())
}

/// Options for a batch evaluation run.
#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    /// Worker threads for the case-parallel pass; 0 uses the global default.
    pub workers: usize,
    /// Admit only the canonical rendered shape when parsing candidates.
    pub strict_parse: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { workers: 0, strict_parse: false }
    }
}

/// Aggregates for one tolerance set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToleranceSummary {
    pub tolerances: MatchTolerances,
    /// Percentage of cases where at least one candidate matched.
    pub match_rate_percent: f64,
    /// Mean over matched cases of the best candidate RMSE; absent when
    /// nothing matched.
    pub mean_rmse: Option<f64>,
    /// Mean wall time per case for the full parse → assemble → match pass.
    pub mean_seconds_per_structure: f64,
}

/// Machine-readable evaluation summary; [`EvalSummary::table`] renders the
/// human-readable view.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub cases: usize,
    pub per_tolerance: Vec<ToleranceSummary>,
}

impl EvalSummary {
    /// Renders an aligned text table, one row per tolerance set.
    pub fn table(&self) -> String {
        let header = ["tolerances (stol, ltol, atol)", "MR (%)", "RMSE", "avg time (s)"];
        let mut rows: Vec<[String; 4]> = Vec::new();
        for t in &self.per_tolerance {
            let tol = &t.tolerances;
            rows.push([
                format!("({:.2}, {:.2}, {:.2})", tol.stol, tol.ltol, tol.atol),
                format!("{:.2}", t.match_rate_percent),
                t.mean_rmse.map_or_else(|| "-".to_string(), |r| format!("{r:.3}")),
                format!("{:.3}", t.mean_seconds_per_structure),
            ]);
        }
        let mut widths = header.map(str::len);
        for row in &rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let mut out = String::new();
        let render = |cells: [&str; 4], out: &mut String| {
            for (i, (cell, w)) in cells.iter().zip(widths).enumerate() {
                if i > 0 {
                    out.push_str("  ");
                }
                if i == 0 {
                    out.push_str(&format!("{cell:<w$}"));
                } else {
                    out.push_str(&format!("{cell:>w$}"));
                }
            }
            out.push('\n');
        };
        render(header, &mut out);
        for row in &rows {
            render([&row[0], &row[1], &row[2], &row[3]], &mut out);
        }
        out
    }
}

/// Per-case outcome at one tolerance set.
struct CaseResult {
    matched: bool,
    best_rmse: Option<f64>,
    seconds: f64,
}

/// Scores every candidate of one case at one tolerance set. The case counts
/// as matched when any candidate matches; its RMSE is the best among the
/// matching candidates. A candidate that fails to parse, assemble, or
/// compare simply does not match.
fn evaluate_case(case: &EvalCase, tol: &MatchTolerances, strict: bool) -> CaseResult {
    let start = Instant::now();
    let mut matched = false;
    let mut best_rmse: Option<f64> = None;
    let prepared = case.blocks.iter().map(BlockRecord::to_block).collect::<Result<Vec<_>, _>>();
    if let (Ok(blocks), Ok(gt)) = (prepared, case.gt.assemble()) {
        for text in &case.candidates {
            let parsed = if strict {
                parse_response_strict(text, blocks.len())
            } else {
                parse_response(text, blocks.len())
            };
            let Ok(prediction) = parsed else { continue };
            let Ok(pred) = crate::assembly::assemble(&prediction.lattice, &blocks, &prediction.poses)
            else {
                continue;
            };
            let Ok(report) = structures_match(&pred, &gt, tol) else { continue };
            if report.matched {
                matched = true;
                if let Some(rmse) = report.rmse {
                    best_rmse = Some(best_rmse.map_or(rmse, |b| b.min(rmse)));
                }
            }
        }
    }
    CaseResult { matched, best_rmse, seconds: start.elapsed().as_secs_f64() }
}

/// Evaluates every case at every tolerance set, cases in parallel, and
/// aggregates per set. Results are ordered and deterministic regardless of
/// the worker count; only the timings vary between runs.
pub fn evaluate_cases(
    cases: &[EvalCase],
    tolerance_sets: &[MatchTolerances],
    options: &EvalOptions,
) -> Result<EvalSummary, DatasetError> {
    if tolerance_sets.is_empty() {
        return Err(DatasetError::NoToleranceSets);
    }
    for tol in tolerance_sets {
        tol.validate()?;
    }
    let run = |tol: &MatchTolerances| -> Vec<CaseResult> {
        cases
            .par_iter()
            .map(|case| evaluate_case(case, tol, options.strict_parse))
            .collect()
    };
    let per_set: Vec<Vec<CaseResult>> = if options.workers > 0 {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(options.workers).build()?;
        pool.install(|| tolerance_sets.iter().map(run).collect())
    } else {
        tolerance_sets.iter().map(run).collect()
    };
    let per_tolerance = tolerance_sets
        .iter()
        .zip(&per_set)
        .map(|(tol, results)| {
            let matched = results.iter().filter(|r| r.matched).count();
            let rmses: Vec<f64> =
                results.iter().filter(|r| r.matched).filter_map(|r| r.best_rmse).collect();
            let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
            ToleranceSummary {
                tolerances: *tol,
                match_rate_percent: if results.is_empty() {
                    0.0
                } else {
                    100.0 * matched as f64 / results.len() as f64
                },
                mean_rmse: if rmses.is_empty() { None } else { Some(mean(&rmses)) },
                mean_seconds_per_structure: if results.is_empty() {
                    0.0
                } else {
                    mean(&results.iter().map(|r| r.seconds).collect::<Vec<_>>())
                },
            }
        })
        .collect();
    Ok(EvalSummary { cases: cases.len(), per_tolerance })
}

/// Loads an evaluation file and scores it; the convenience composition of
/// [`load_eval_cases`] and [`evaluate_cases`].
pub fn evaluate(
    path: &Path,
    tolerance_sets: &[MatchTolerances],
    options: &EvalOptions,
) -> Result<(EvalSummary, Vec<RecordIssue>), DatasetError> {
    let loaded = load_eval_cases(path)?;
    let summary = evaluate_cases(&loaded.cases, tolerance_sets, options)?;
    Ok((summary, loaded.issues))
}
