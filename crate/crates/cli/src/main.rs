//! Command-line surface for the block-level structure toolkit.
//!
//! Every subcommand is deterministic given identical inputs and seeds, and
//! all machine-readable output is UTF-8 JSON or JSONL on stdout; warnings
//! and progress notes go to stderr. Exit codes: 0 on success, 1 on a usage
//! error (bad flags or flag values), 2 on a data error (unreadable files,
//! unparseable content).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use mofkit::codec::{parse_response, parse_response_strict, TemplateSet};
use mofkit::dataset::{
    emit_corpora, evaluate_cases, load_dataset, load_eval_cases, CorpusMode, EvalOptions,
    RecordIssue, StructureRecord,
};
use mofkit::descriptors::{descriptor_report, MIN_GRID_RESOLUTION};
use mofkit::lattice::{matrix_to_params, niggli_reduce, params_to_matrix, LatticeParams};
use mofkit::matching::{structures_match, MatchTolerances};
use mofkit::reward::{compute_reward, SapoConfig};
use mofkit::sim::{canonical_scenario, run_training, TrainConfig};

#[derive(Parser)]
#[command(
    name = "mofkit",
    version,
    about = "Block-level MOF structure prediction toolkit",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the pretraining corpus from a dataset.
    EncodeCpt(EncodeArgs),
    /// Render the fine-tuning corpus from a dataset.
    EncodeSft(EncodeArgs),
    /// Parse a response text into a placement prediction.
    Parse(ParseArgs),
    /// Assemble a stored record into its periodic structure.
    Assemble(AssembleArgs),
    /// Compare a predicted record against a reference record.
    Match(MatchArgs),
    /// Score candidate responses against their ground truths.
    Evaluate(EvaluateArgs),
    /// Compute the scalar reward for each response text.
    Reward(RewardArgs),
    /// Run the toy-policy training simulation.
    TrainSim(TrainSimArgs),
    /// Compute geometric descriptors for each record.
    Descriptors(DescriptorArgs),
    /// Niggli-reduce a cell given as lattice parameters.
    Niggli(NiggliArgs),
}

#[derive(Args)]
struct EncodeArgs {
    /// Input dataset: JSONL, one structure record per line.
    #[arg(long)]
    input: PathBuf,
    /// Output corpus path (JSONL).
    #[arg(long)]
    output: PathBuf,
    /// Template directory; overrides the MOFKIT_TEMPLATE_DIR environment
    /// variable, which in turn overrides the built-in templates.
    #[arg(long)]
    template_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ParseArgs {
    /// Response text file; omitted means read stdin.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Number of blocks the response must place.
    #[arg(long)]
    blocks: usize,
    /// Admit only the canonical rendered shape.
    #[arg(long)]
    strict_parse: bool,
}

#[derive(Args)]
struct AssembleArgs {
    /// File holding one structure record as JSON.
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args)]
struct MatchArgs {
    /// File holding the predicted structure record as JSON.
    #[arg(long)]
    pred: PathBuf,
    /// File holding the reference structure record as JSON.
    #[arg(long)]
    gt: PathBuf,
    /// Tolerance set as "stol,ltol,atol" (default: the tight standard set).
    #[arg(long, value_parser = parse_tolerances)]
    tolerances: Option<MatchTolerances>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Evaluation cases: JSONL, one case per line.
    #[arg(long)]
    input: PathBuf,
    /// Tolerance set as "stol,ltol,atol"; repeat the flag for several
    /// (default: the tight and loose standard sets).
    #[arg(long, value_parser = parse_tolerances)]
    tolerances: Vec<MatchTolerances>,
    /// Use only the first N candidates of each case.
    #[arg(long)]
    samples: Option<usize>,
    /// Worker threads for the case-parallel pass; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Admit only the canonical rendered shape when parsing candidates.
    #[arg(long)]
    strict_parse: bool,
    /// Also write the machine-readable summary JSON here ("-" for stdout).
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct RewardArgs {
    /// JSONL file of {"response": …, "gt": <structure record>} samples.
    #[arg(long)]
    input: PathBuf,
    /// Admit only the canonical rendered shape when parsing responses.
    #[arg(long)]
    strict_parse: bool,
}

#[derive(Args)]
struct TrainSimArgs {
    /// Group-optimization steps after the warm start.
    #[arg(long, default_value_t = 500)]
    steps: usize,
    /// Master seed for rollout sampling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Rollouts per group.
    #[arg(long, default_value_t = 8)]
    group_size: usize,
    /// Gate temperature for positive-advantage samples.
    #[arg(long, default_value_t = 1.0)]
    tau_pos: f64,
    /// Gate temperature for negative-advantage samples.
    #[arg(long, default_value_t = 1.05)]
    tau_neg: f64,
    /// Ascent rate for group-optimization steps.
    #[arg(long, default_value_t = 0.5)]
    learning_rate: f64,
    /// Supervised warm-start steps before optimization.
    #[arg(long, default_value_t = 2000)]
    warmup: usize,
    /// Write per-step metrics JSONL here.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct DescriptorArgs {
    /// Input dataset: JSONL, one structure record per line.
    #[arg(long)]
    input: PathBuf,
    /// Probe radius added to each atom's van der Waals radius, Å.
    #[arg(long, default_value_t = 0.0)]
    probe_radius: f64,
    /// Grid points per axis for the void and cavity scans.
    #[arg(long, default_value_t = 64)]
    grid: usize,
}

#[derive(Args)]
struct NiggliArgs {
    /// Cell as "a,b,c,alpha,beta,gamma" (Å and degrees).
    #[arg(long, value_parser = parse_cell)]
    cell: LatticeParams,
}

/// A failure tagged with the exit code it maps to.
enum CliError {
    /// Bad flags or flag values: exit 1.
    Usage(String),
    /// Unreadable or invalid data: exit 2.
    Data(String),
}

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn parse_tolerances(s: &str) -> Result<MatchTolerances, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected \"stol,ltol,atol\", got {s:?}"));
    }
    let mut values = [0.0f64; 3];
    for (value, part) in values.iter_mut().zip(&parts) {
        *value = part.trim().parse::<f64>().map_err(|e| format!("bad number {part:?}: {e}"))?;
    }
    MatchTolerances::new(values[0], values[1], values[2]).map_err(|e| e.to_string())
}

fn parse_cell(s: &str) -> Result<LatticeParams, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 6 {
        return Err(format!("expected \"a,b,c,alpha,beta,gamma\", got {s:?}"));
    }
    let mut values = [0.0f64; 6];
    for (value, part) in values.iter_mut().zip(&parts) {
        *value = part.trim().parse::<f64>().map_err(|e| format!("bad number {part:?}: {e}"))?;
    }
    LatticeParams::new(values[0], values[1], values[2], values[3], values[4], values[5])
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version surface as clap "errors"; they are not.
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(message)) => {
            eprintln!("usage error: {message}");
            ExitCode::from(1)
        }
        Err(CliError::Data(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::EncodeCpt(args) => run_encode(args, CorpusMode::Cpt),
        Command::EncodeSft(args) => run_encode(args, CorpusMode::Sft),
        Command::Parse(args) => run_parse(args),
        Command::Assemble(args) => run_assemble(args),
        Command::Match(args) => run_match(args),
        Command::Evaluate(args) => run_evaluate(args),
        Command::Reward(args) => run_reward(args),
        Command::TrainSim(args) => run_train_sim(args),
        Command::Descriptors(args) => run_descriptors(args),
        Command::Niggli(args) => run_niggli(args),
    }
}

/// Resolves the template set: flag, then MOFKIT_TEMPLATE_DIR, then built-in.
fn resolve_templates(flag: &Option<PathBuf>) -> Result<TemplateSet, CliError> {
    let dir = flag
        .clone()
        .or_else(|| std::env::var_os("MOFKIT_TEMPLATE_DIR").map(PathBuf::from));
    match dir {
        Some(dir) => TemplateSet::from_dir(&dir).map_err(data),
        None => Ok(TemplateSet::default()),
    }
}

fn warn_issues(issues: &[RecordIssue]) {
    for issue in issues {
        eprintln!("warning: {issue}");
    }
}

/// Reads one structure record stored as a JSON object in its own file.
fn read_record(path: &Path) -> Result<StructureRecord, CliError> {
    let body = std::fs::read_to_string(path)
        .map_err(|e| data(format!("failed to read {}: {e}", path.display())))?;
    let record: StructureRecord = serde_json::from_str(body.trim())
        .map_err(|e| data(format!("{}: {e}", path.display())))?;
    record.validate().map_err(data)?;
    Ok(record)
}

fn run_encode(args: EncodeArgs, mode: CorpusMode) -> Result<(), CliError> {
    let templates = resolve_templates(&args.template_dir)?;
    let loaded = load_dataset(&args.input).map_err(data)?;
    warn_issues(&loaded.issues);
    let counts = emit_corpora(&loaded.records, mode, &args.output, &templates).map_err(data)?;
    for reason in &counts.reasons {
        eprintln!("warning: skipped {reason}");
    }
    println!("{}", serde_json::to_string(&counts).map_err(data)?);
    Ok(())
}

fn run_parse(args: ParseArgs) -> Result<(), CliError> {
    let text = match &args.input {
        Some(path) => std::fs::read_to_string(path)
            .map_err(|e| data(format!("failed to read {}: {e}", path.display())))?,
        None => std::io::read_to_string(std::io::stdin()).map_err(data)?,
    };
    let parsed = if args.strict_parse {
        parse_response_strict(&text, args.blocks)
    } else {
        parse_response(&text, args.blocks)
    };
    match parsed {
        Ok(prediction) => {
            println!("{}", serde_json::to_string(&prediction).map_err(data)?);
            Ok(())
        }
        Err(e) => {
            // The structured diagnosis still goes to stdout so pipelines can
            // consume it; the exit code carries the verdict.
            println!("{}", serde_json::to_string(&e).map_err(data)?);
            Err(data(e))
        }
    }
}

fn run_assemble(args: AssembleArgs) -> Result<(), CliError> {
    let record = read_record(&args.input)?;
    let structure = record.assemble().map_err(data)?;
    println!("{}", serde_json::to_string(&structure).map_err(data)?);
    Ok(())
}

fn run_match(args: MatchArgs) -> Result<(), CliError> {
    let pred = read_record(&args.pred)?.assemble().map_err(data)?;
    let gt = read_record(&args.gt)?.assemble().map_err(data)?;
    let tol = args.tolerances.unwrap_or_else(MatchTolerances::tight);
    let report = structures_match(&pred, &gt, &tol).map_err(data)?;
    println!("{}", serde_json::to_string(&report).map_err(data)?);
    Ok(())
}

fn run_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    if args.samples == Some(0) {
        return Err(usage("--samples must be at least 1"));
    }
    let sets = if args.tolerances.is_empty() {
        vec![MatchTolerances::tight(), MatchTolerances::loose()]
    } else {
        args.tolerances.clone()
    };
    let mut loaded = load_eval_cases(&args.input).map_err(data)?;
    warn_issues(&loaded.issues);
    if let Some(k) = args.samples {
        for case in &mut loaded.cases {
            case.candidates.truncate(k);
        }
    }
    let options = EvalOptions { workers: args.workers, strict_parse: args.strict_parse };
    let summary = evaluate_cases(&loaded.cases, &sets, &options).map_err(data)?;
    print!("{}", summary.table());
    if let Some(path) = &args.json {
        let body = serde_json::to_string(&summary).map_err(data)?;
        if path.as_os_str() == "-" {
            println!("{body}");
        } else {
            std::fs::write(path, body + "\n")
                .map_err(|e| data(format!("failed to write {}: {e}", path.display())))?;
        }
    }
    Ok(())
}

/// One line of reward input: a raw response text and its ground truth.
#[derive(Deserialize)]
struct RewardSample {
    response: String,
    gt: StructureRecord,
}

/// One line of reward output.
#[derive(Serialize)]
struct RewardLine<'a> {
    line: usize,
    id: &'a str,
    reward: f64,
}

fn run_reward(args: RewardArgs) -> Result<(), CliError> {
    let body = std::fs::read_to_string(&args.input)
        .map_err(|e| data(format!("failed to read {}: {e}", args.input.display())))?;
    for (i, line) in body.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let sample: RewardSample = match serde_json::from_str(line) {
            Ok(s) => s,
            Err(e) => {
                eprintln!("warning: line {line_no}: malformed sample: {e}");
                continue;
            }
        };
        let (blocks, gt) = match (sample.gt.to_blocks(), sample.gt.assemble()) {
            (Ok(b), Ok(g)) => (b, g),
            (Err(e), _) | (_, Err(e)) => {
                eprintln!("warning: line {line_no}: {e}");
                continue;
            }
        };
        let parsed = if args.strict_parse {
            parse_response_strict(&sample.response, blocks.len())
        } else {
            parse_response(&sample.response, blocks.len())
        };
        let reward = compute_reward(&parsed, &blocks, &gt);
        let out = RewardLine { line: line_no, id: &sample.gt.id, reward };
        println!("{}", serde_json::to_string(&out).map_err(data)?);
    }
    Ok(())
}

/// Summary printed after a simulation run.
#[derive(Serialize)]
struct TrainSummary {
    steps: usize,
    final_warmup_nll: Option<f64>,
    /// Mean reward over the final (up to) 100 steps.
    trailing_mean_reward: Option<f64>,
}

fn run_train_sim(args: TrainSimArgs) -> Result<(), CliError> {
    let cfg = TrainConfig {
        sapo: SapoConfig {
            group_size: args.group_size,
            tau_pos: args.tau_pos,
            tau_neg: args.tau_neg,
            ..SapoConfig::default()
        },
        learning_rate: args.learning_rate,
        sft_warmup_steps: args.warmup,
        sft_learning_rate: TrainConfig::default().sft_learning_rate,
    };
    // Bad temperatures or group sizes are flag mistakes, not data problems.
    cfg.validate().map_err(usage)?;
    let scenario = canonical_scenario();
    let (_, run) = run_training(&scenario, args.steps, &cfg, args.seed).map_err(data)?;
    if let Some(path) = &args.metrics {
        let file = File::create(path)
            .map_err(|e| data(format!("failed to write {}: {e}", path.display())))?;
        let mut out = BufWriter::new(file);
        for record in &run.records {
            let line = serde_json::to_string(record).map_err(data)?;
            writeln!(out, "{line}").map_err(data)?;
        }
        out.flush().map_err(data)?;
    }
    let trailing = run.records.iter().rev().take(100).map(|r| r.stats.mean_reward);
    let count = trailing.clone().count();
    let summary = TrainSummary {
        steps: run.records.len(),
        final_warmup_nll: run.warmup_nll.last().copied(),
        trailing_mean_reward: if count == 0 {
            None
        } else {
            Some(trailing.sum::<f64>() / count as f64)
        },
    };
    println!("{}", serde_json::to_string(&summary).map_err(data)?);
    Ok(())
}

/// One descriptor output line: the record id plus its report fields.
#[derive(Serialize)]
struct DescriptorLine<'a> {
    id: &'a str,
    #[serde(flatten)]
    report: &'a mofkit::descriptors::DescriptorReport,
}

fn run_descriptors(args: DescriptorArgs) -> Result<(), CliError> {
    if args.grid < MIN_GRID_RESOLUTION {
        return Err(usage(format!(
            "--grid must be at least {MIN_GRID_RESOLUTION}, got {}",
            args.grid
        )));
    }
    if !args.probe_radius.is_finite() || args.probe_radius < 0.0 {
        return Err(usage(format!("--probe-radius must be non-negative, got {}", args.probe_radius)));
    }
    let loaded = load_dataset(&args.input).map_err(data)?;
    warn_issues(&loaded.issues);
    for record in &loaded.records {
        let structure = match record.assemble() {
            Ok(s) => s,
            Err(e) => {
                eprintln!("warning: {e}");
                continue;
            }
        };
        match descriptor_report(&structure, args.probe_radius, args.grid) {
            Ok(report) => {
                let line = DescriptorLine { id: &record.id, report: &report };
                println!("{}", serde_json::to_string(&line).map_err(data)?);
            }
            Err(e) => eprintln!("warning: record {}: {e}", record.id),
        }
    }
    Ok(())
}

/// Output of a cell reduction.
#[derive(Serialize)]
struct NiggliOutput {
    reduced: LatticeParams,
    /// Row-integer change of basis: reduced rows = transform · input rows.
    transform: [[i64; 3]; 3],
    reduced_rows: [[f64; 3]; 3],
}

fn run_niggli(args: NiggliArgs) -> Result<(), CliError> {
    let matrix = params_to_matrix(&args.cell).map_err(data)?;
    let (reduced, transform) = niggli_reduce(&matrix).map_err(data)?;
    let output = NiggliOutput {
        reduced: matrix_to_params(&reduced).map_err(data)?,
        transform: transform.0,
        reduced_rows: reduced.rows(),
    };
    println!("{}", serde_json::to_string(&output).map_err(data)?);
    Ok(())
}
