//! End-to-end tests of the `mofkit` binary: exit codes, JSON outputs, and
//! the pipeline from dataset files through corpora to evaluation.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mofkit::assembly::Pose;
use mofkit::codec::{render_sft_response, TemplateSet};
use mofkit::dataset::{write_dataset, BlockRecord, EvalCase, StructureRecord};
use mofkit::lattice::LatticeParams;
use mofkit::rotation::EulerAngles;

/// Runs the binary with a scrubbed template environment so only the test's
/// own settings are in effect.
fn mofkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mofkit"))
        .args(args)
        .env_remove("MOFKIT_TEMPLATE_DIR")
        .output()
        .expect("failed to launch the binary")
}

fn stdout_str(output: &Output) -> String {
    String::from_utf8(output.stdout.clone()).unwrap()
}

fn stderr_str(output: &Output) -> String {
    String::from_utf8(output.stderr.clone()).unwrap()
}

fn code(output: &Output) -> i32 {
    output.status.code().expect("binary was killed by a signal")
}

/// Two single-atom blocks (Zn and O) on the body diagonal of a 10 Å cube.
fn zn_o_record(id: &str) -> StructureRecord {
    let euler = EulerAngles::new(0.0, 0.0, 0.0).unwrap();
    StructureRecord {
        id: id.to_string(),
        lattice: LatticeParams::new(10.0, 10.0, 10.0, 90.0, 90.0, 90.0).unwrap(),
        blocks: vec![
            BlockRecord {
                species: vec![30],
                local_coords: vec![[0.0, 0.0, 0.0]],
                smiles: "[Zn]".to_string(),
                topology_role: None,
            },
            BlockRecord {
                species: vec![8],
                local_coords: vec![[0.0, 0.0, 0.0]],
                smiles: "[O]".to_string(),
                topology_role: None,
            },
        ],
        poses: vec![
            Pose::new([0.25, 0.25, 0.25], euler).unwrap(),
            Pose::new([0.75, 0.75, 0.75], euler).unwrap(),
        ],
        topology_code: Some("pcu".to_string()),
        topology_description: Some("primitive cubic net".to_string()),
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) {
    std::fs::write(path, serde_json::to_string(value).unwrap()).unwrap();
}

fn temp_path(dir: &tempfile::TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

#[test]
fn help_succeeds_and_usage_errors_exit_one() {
    let help = mofkit(&["--help"]);
    assert_eq!(code(&help), 0);
    let text = stdout_str(&help);
    for subcommand in ["encode-cpt", "encode-sft", "evaluate", "train-sim", "niggli"] {
        assert!(text.contains(subcommand), "help is missing {subcommand}");
    }

    assert_eq!(code(&mofkit(&["bogus-subcommand"])), 1);
    let bad_tol = mofkit(&["evaluate", "--input", "x.jsonl", "--tolerances", "nope"]);
    assert_eq!(code(&bad_tol), 1);
    let bad_grid = mofkit(&["descriptors", "--input", "x.jsonl", "--grid", "4"]);
    assert_eq!(code(&bad_grid), 1);
    assert!(stderr_str(&bad_grid).contains("--grid"));
}

#[test]
fn unreadable_input_is_a_data_error() {
    let missing = mofkit(&["descriptors", "--input", "/nonexistent/data.jsonl"]);
    assert_eq!(code(&missing), 2);
    assert!(stderr_str(&missing).contains("failed to read"));
}

#[test]
fn encode_sft_then_evaluate_scores_the_corpus_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = temp_path(&dir, "data.jsonl");
    let corpus = temp_path(&dir, "sft.jsonl");
    let eval = temp_path(&dir, "eval.jsonl");
    let records = vec![zn_o_record("mof-1"), zn_o_record("mof-2")];
    write_dataset(&records, &dataset).unwrap();

    let encode = mofkit(&[
        "encode-sft",
        "--input",
        dataset.to_str().unwrap(),
        "--output",
        corpus.to_str().unwrap(),
    ]);
    assert_eq!(code(&encode), 0, "stderr: {}", stderr_str(&encode));
    let counts: serde_json::Value = serde_json::from_str(stdout_str(&encode).trim()).unwrap();
    assert_eq!(counts["emitted"], 2);

    // Feed each emitted response back as the candidate for its own record.
    let body = std::fs::read_to_string(&corpus).unwrap();
    let lines: Vec<String> = body
        .lines()
        .zip(&records)
        .map(|(line, record)| {
            let parsed: serde_json::Value = serde_json::from_str(line).unwrap();
            let case = EvalCase {
                blocks: record.blocks.clone(),
                candidates: vec![parsed["response"].as_str().unwrap().to_string()],
                gt: record.clone(),
            };
            serde_json::to_string(&case).unwrap()
        })
        .collect();
    std::fs::write(&eval, lines.join("\n")).unwrap();

    let evaluate = mofkit(&[
        "evaluate",
        "--input",
        eval.to_str().unwrap(),
        "--workers",
        "2",
        "--json",
        "-",
    ]);
    assert_eq!(code(&evaluate), 0, "stderr: {}", stderr_str(&evaluate));
    let out = stdout_str(&evaluate);
    assert!(out.contains("100.00"), "table should show full match rate:\n{out}");
    let json_line = out.lines().find(|l| l.starts_with('{')).expect("summary JSON line");
    let summary: serde_json::Value = serde_json::from_str(json_line).unwrap();
    assert_eq!(summary["cases"], 2);
    for per in summary["per_tolerance"].as_array().unwrap() {
        assert_eq!(per["match_rate_percent"], 100.0);
        assert!(per["mean_rmse"].as_f64().unwrap() < 5e-4);
    }
}

#[test]
fn template_dir_environment_variable_overrides_the_instruction() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = temp_path(&dir, "data.jsonl");
    let corpus = temp_path(&dir, "sft.jsonl");
    write_dataset(&[zn_o_record("mof-1")], &dataset).unwrap();

    let template_dir = dir.path().join("templates");
    std::fs::create_dir(&template_dir).unwrap();
    let defaults = TemplateSet::default();
    std::fs::write(template_dir.join("cpt.txt"), &defaults.cpt).unwrap();
    std::fs::write(template_dir.join("cpt_local_line.txt"), &defaults.cpt_local_line).unwrap();
    std::fs::write(template_dir.join("cpt_placement_line.txt"), &defaults.cpt_placement_line)
        .unwrap();
    std::fs::write(template_dir.join("sft_instruction.txt"), "CUSTOM PROMPT [SMILES List]\n")
        .unwrap();

    let encode = Command::new(env!("CARGO_BIN_EXE_mofkit"))
        .args([
            "encode-sft",
            "--input",
            dataset.to_str().unwrap(),
            "--output",
            corpus.to_str().unwrap(),
        ])
        .env("MOFKIT_TEMPLATE_DIR", &template_dir)
        .output()
        .unwrap();
    assert_eq!(code(&encode), 0, "stderr: {}", stderr_str(&encode));
    let body = std::fs::read_to_string(&corpus).unwrap();
    let line: serde_json::Value = serde_json::from_str(body.trim()).unwrap();
    let prompt = line["prompt"].as_str().unwrap();
    assert!(prompt.starts_with("CUSTOM PROMPT"), "prompt: {prompt}");
    assert!(prompt.contains("[Zn]"));
}

#[test]
fn parse_assemble_and_match_compose_into_a_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let record = zn_o_record("mof-1");
    let record_path = temp_path(&dir, "record.json");
    write_json(&record_path, &record);
    let response_path = temp_path(&dir, "response.txt");
    std::fs::write(
        &response_path,
        render_sft_response(&record.lattice, &record.poses).unwrap(),
    )
    .unwrap();

    let parse = mofkit(&["parse", "--input", response_path.to_str().unwrap(), "--blocks", "2"]);
    assert_eq!(code(&parse), 0, "stderr: {}", stderr_str(&parse));
    let prediction: serde_json::Value = serde_json::from_str(stdout_str(&parse).trim()).unwrap();
    assert_eq!(prediction["poses"].as_array().unwrap().len(), 2);
    assert!((prediction["lattice"]["a"].as_f64().unwrap() - 10.0).abs() < 1e-9);

    let garbled = temp_path(&dir, "garbled.txt");
    std::fs::write(&garbled, "no structure here").unwrap();
    let bad = mofkit(&["parse", "--input", garbled.to_str().unwrap(), "--blocks", "2"]);
    assert_eq!(code(&bad), 2);
    let diagnosis: serde_json::Value = serde_json::from_str(stdout_str(&bad).trim()).unwrap();
    assert!(diagnosis["kind"].is_string());

    let assemble = mofkit(&["assemble", "--input", record_path.to_str().unwrap()]);
    assert_eq!(code(&assemble), 0, "stderr: {}", stderr_str(&assemble));
    let structure: serde_json::Value =
        serde_json::from_str(stdout_str(&assemble).trim()).unwrap();
    assert_eq!(structure["species"].as_array().unwrap().len(), 2);

    let matched = mofkit(&[
        "match",
        "--pred",
        record_path.to_str().unwrap(),
        "--gt",
        record_path.to_str().unwrap(),
        "--tolerances",
        "0.5,0.3,1.0",
    ]);
    assert_eq!(code(&matched), 0, "stderr: {}", stderr_str(&matched));
    let report: serde_json::Value = serde_json::from_str(stdout_str(&matched).trim()).unwrap();
    assert_eq!(report["matched"], true);
    assert!(report["rmse"].as_f64().unwrap() < 1e-9);
}

#[test]
fn reward_scores_each_sample_line() {
    let dir = tempfile::tempdir().unwrap();
    let input = temp_path(&dir, "samples.jsonl");
    let record = zn_o_record("mof-1");
    let good = serde_json::json!({
        "response": render_sft_response(&record.lattice, &record.poses).unwrap(),
        "gt": record,
    });
    let garbage = serde_json::json!({ "response": "junk", "gt": record });
    std::fs::write(&input, format!("{good}\n{garbage}\n")).unwrap();

    let reward = mofkit(&["reward", "--input", input.to_str().unwrap()]);
    assert_eq!(code(&reward), 0, "stderr: {}", stderr_str(&reward));
    let out = stdout_str(&reward);
    let rewards: Vec<f64> = out
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["reward"].as_f64().unwrap())
        .collect();
    assert_eq!(rewards.len(), 2);
    assert!(rewards[0] > 1.49, "exact round trip should earn the top reward: {}", rewards[0]);
    assert_eq!(rewards[1], -1.0);
}

#[test]
fn train_sim_writes_metrics_and_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let metrics = temp_path(&dir, "metrics.jsonl");
    let run = mofkit(&[
        "train-sim",
        "--steps",
        "3",
        "--warmup",
        "50",
        "--seed",
        "1",
        "--metrics",
        metrics.to_str().unwrap(),
    ]);
    assert_eq!(code(&run), 0, "stderr: {}", stderr_str(&run));
    let summary: serde_json::Value = serde_json::from_str(stdout_str(&run).trim()).unwrap();
    assert_eq!(summary["steps"], 3);
    assert!(summary["final_warmup_nll"].as_f64().unwrap() >= 0.0);
    assert!(summary["trailing_mean_reward"].is_number());
    let body = std::fs::read_to_string(&metrics).unwrap();
    assert_eq!(body.lines().count(), 3);
    for line in body.lines() {
        let record: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(record["mean_reward"].is_number());
        assert!(record["tiers"].is_object());
    }

    // A group needs at least two rollouts; rejecting one is a flag mistake.
    assert_eq!(code(&mofkit(&["train-sim", "--steps", "1", "--group-size", "1"])), 1);
}

#[test]
fn descriptors_emit_one_labeled_line_per_record() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = temp_path(&dir, "data.jsonl");
    write_dataset(&[zn_o_record("mof-1")], &dataset).unwrap();
    let run = mofkit(&["descriptors", "--input", dataset.to_str().unwrap(), "--grid", "16"]);
    assert_eq!(code(&run), 0, "stderr: {}", stderr_str(&run));
    let out = stdout_str(&run);
    assert_eq!(out.lines().count(), 1);
    let line: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(line["id"], "mof-1");
    assert!((line["ucv"].as_f64().unwrap() - 1000.0).abs() < 1e-9);
    let vf = line["vf_grid"].as_f64().unwrap();
    assert!(vf > 0.5 && vf < 1.0, "two atoms in a 10 Å cube leave most of it void: {vf}");
    assert!(line["lcd_grid"].as_f64().unwrap() > 1.0);
}

#[test]
fn niggli_reduces_a_cell_with_a_unimodular_transform() {
    let run = mofkit(&["niggli", "--cell", "6,7,8,55,65,75"]);
    assert_eq!(code(&run), 0, "stderr: {}", stderr_str(&run));
    let out: serde_json::Value = serde_json::from_str(stdout_str(&run).trim()).unwrap();
    let t = &out["transform"];
    let m: Vec<Vec<i64>> = serde_json::from_value(t.clone()).unwrap();
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    assert_eq!(det, 1, "the change of basis must preserve volume and orientation");
    // The reduced lengths are sorted and the cell spans the same volume.
    let reduced = &out["reduced"];
    let (a, b, c) = (
        reduced["a"].as_f64().unwrap(),
        reduced["b"].as_f64().unwrap(),
        reduced["c"].as_f64().unwrap(),
    );
    assert!(a <= b + 1e-9 && b <= c + 1e-9, "reduced lengths out of order: {a} {b} {c}");

    assert_eq!(code(&mofkit(&["niggli", "--cell", "1,2,3"])), 1);
}
