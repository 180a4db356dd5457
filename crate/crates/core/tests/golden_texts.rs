//! Byte-stability tests for the corpus renderers.
//!
//! The fixture files under `tests/golden/` were generated once from a fixed
//! two-block record, reviewed by hand, and frozen; these tests fail on any
//! drift in rendered bytes. Set `MOFKIT_BLESS_GOLDEN=1` to regenerate after
//! an intentional format change.

use mofkit::assembly::Pose;
use mofkit::codec::{
    render_cpt, render_sft_instruction, render_sft_response, CptRecord, TemplateSet,
};
use mofkit::frames::BuildingBlock;
use mofkit::lattice::LatticeParams;
use mofkit::rotation::EulerAngles;
use std::path::Path;

fn check_golden(name: &str, actual: &str) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("MOFKIT_BLESS_GOLDEN").is_some() {
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| {
        panic!("missing golden fixture {name} ({e}); regenerate with MOFKIT_BLESS_GOLDEN=1")
    });
    assert_eq!(actual, expected, "rendered bytes drifted from golden fixture {name}");
}

fn fixture() -> (LatticeParams, Vec<BuildingBlock>, Vec<Pose>) {
    let lattice = LatticeParams::new(12.5, 13.75, 9.0, 90.0, 105.5, 90.0).unwrap();
    let blocks = vec![
        BuildingBlock::new(vec![30], vec![[0.0, 0.0, 0.0]], "[Zn]".into()).unwrap(),
        BuildingBlock::new(
            vec![6, 6],
            vec![[-0.71, 0.0, 0.0], [0.71, 0.0, 0.0]],
            "C#C".into(),
        )
        .unwrap(),
    ];
    let poses = vec![
        Pose {
            translation: [0.25, 0.5, 0.125],
            euler: EulerAngles::new(0.0, 0.0, 0.0).unwrap(),
        },
        Pose {
            translation: [0.75, 0.3, 0.6],
            euler: EulerAngles::new(0.4, -0.25, 1.2).unwrap(),
        },
    ];
    (lattice, blocks, poses)
}

#[test]
fn cpt_document_is_byte_stable() {
    let (lattice, blocks, poses) = fixture();
    let record = CptRecord::from_parts(
        "pcu",
        "a primitive cubic net connecting octahedral nodes",
        lattice,
        &blocks,
        &poses,
    )
    .unwrap();
    let text = render_cpt(&record, &TemplateSet::default()).unwrap();
    check_golden("cpt_two_block.txt", &text);
}

#[test]
fn sft_instruction_is_byte_stable() {
    let (_, blocks, _) = fixture();
    let smiles: Vec<String> = blocks.iter().map(|b| b.smiles.clone()).collect();
    let text = render_sft_instruction(&smiles, &TemplateSet::default()).unwrap();
    check_golden("sft_instruction_two_block.txt", &text);
}

#[test]
fn sft_response_is_byte_stable() {
    let (lattice, _, poses) = fixture();
    let text = render_sft_response(&lattice, &poses).unwrap();
    check_golden("sft_response_two_block.txt", &text);
}

#[test]
fn template_directory_override_changes_rendering() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cpt.txt"), "CELL: [Lattice Parameters]\n[Block Local Lines]\n[Block Placement Lines]\n").unwrap();
    std::fs::write(dir.path().join("cpt_local_line.txt"), "block [Index]: [SMILES]\n").unwrap();
    std::fs::write(dir.path().join("cpt_placement_line.txt"), "at [Translation]\n").unwrap();
    std::fs::write(dir.path().join("sft_instruction.txt"), "predict for [SMILES List]\n").unwrap();
    let templates = TemplateSet::from_dir(dir.path()).unwrap();

    let (lattice, blocks, poses) = fixture();
    let record = CptRecord::from_parts("pcu", "net", lattice, &blocks, &poses).unwrap();
    let text = render_cpt(&record, &templates).unwrap();
    assert!(text.starts_with("CELL: 12.50 13.75 9.00 90.00 105.50 90.00\n"));
    assert!(text.contains("block 0: [Zn]\nblock 1: C#C\n"));
    assert!(text.contains("at (0.250 0.500 0.125)\nat (0.750 0.300 0.600)\n"));

    let instruction = render_sft_instruction(&["CC".to_string()], &templates).unwrap();
    assert_eq!(instruction, "predict for CC\n");

    // A missing directory reports which file failed.
    let err = TemplateSet::from_dir(&dir.path().join("nope")).unwrap_err();
    assert!(err.to_string().contains("cpt.txt"));
}
