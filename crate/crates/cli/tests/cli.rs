use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_precursor"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

const SEVERITY_SPEC: &str = r#"{
  "n_cases": 120,
  "seed": 4,
  "schema": {"name": "severity", "categories": ["1st aid", "med./restr."]},
  "base_rates": [0.7, 0.3],
  "attribute_density": 4.0,
  "signal": [{"attributes": ["hazardous_substance"], "category": "med./restr.", "strength": 0.9}],
  "attribute_rates": {"hazardous_substance": 0.3}
}"#;

fn severity_splits(dir: &Path) {
    std::fs::write(dir.join("spec.json"), SEVERITY_SPEC).unwrap();
    assert_eq!(
        code(&run(dir, &["synth", "--spec", "spec.json", "--output", "all.jsonl"])),
        0
    );
    assert_eq!(
        code(&run(
            dir,
            &[
                "split",
                "--input",
                "all.jsonl",
                "--out-dir",
                ".",
                "--test-fraction",
                "0.2",
                "--val-fraction",
                "0.25"
            ]
        )),
        0
    );
}

#[test]
fn default_svm_grid_emits_800_rows() {
    let d = tempfile::tempdir().unwrap();
    severity_splits(d.path());
    let o = run(
        d.path(),
        &[
            "tune",
            "--family",
            "svm",
            "--outcome",
            "severity",
            "--train",
            "train.jsonl",
            "--val",
            "val.jsonl",
            "--grid",
            "default",
            "--out",
            "grid.csv",
            "--best-out",
            "best.json",
            "--no-class-weights",
        ],
    );
    assert!(code(&o) <= 1, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(d.path().join("grid.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "C,val_macro_f1,rank");
    assert_eq!(lines.len(), 801);
    assert!(lines[1].starts_with("1e-7,"));
    assert!(lines[800].starts_with("1e7,"));
    let best: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.path().join("best.json")).unwrap()).unwrap();
    assert!(best["c"].as_f64().unwrap() > 0.0);
}

#[test]
fn missing_input_is_a_configuration_failure() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["split", "--input", "nope.jsonl", "--out-dir", "."]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn extract_skips_bad_lines_but_fails_when_all_are_bad() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(
        d.path().join("mixed.jsonl"),
        "{\"id\": \"a\", \"narrative\": \"worker fell from scaffold\"}\nnot json\n",
    )
    .unwrap();
    let o = run(
        d.path(),
        &["extract", "--input", "mixed.jsonl", "--output", "out.jsonl"],
    );
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
    let out = std::fs::read_to_string(d.path().join("out.jsonl")).unwrap();
    assert_eq!(out.lines().count(), 1);
    assert!(out.contains("scaffold"));

    std::fs::write(d.path().join("bad.jsonl"), "nope\n{]\n").unwrap();
    assert_eq!(
        code(&run(
            d.path(),
            &["extract", "--input", "bad.jsonl", "--output", "o2.jsonl"]
        )),
        2
    );
}

#[test]
fn foreign_universe_model_is_rejected() {
    let d = tempfile::tempdir().unwrap();
    severity_splits(d.path());
    let o = run(
        d.path(),
        &[
            "train",
            "--family",
            "svm",
            "--outcome",
            "severity",
            "--train",
            "train.jsonl",
            "--model-out",
            "m.bin",
        ],
    );
    assert!(code(&o) <= 1);
    // Corrupt one character of the stored universe fingerprint.
    let mut bytes = std::fs::read(d.path().join("m.bin")).unwrap();
    let fp = precursor::dataset::AttributeUniverse::standard().fingerprint();
    let at = bytes
        .windows(fp.len())
        .position(|w| w == fp.as_bytes())
        .expect("fingerprint in file");
    bytes[at] = if bytes[at] == b'0' { b'1' } else { b'0' };
    std::fs::write(d.path().join("m.bin"), &bytes).unwrap();
    let o = run(
        d.path(),
        &[
            "evaluate",
            "--models",
            "m.bin",
            "--test",
            "test.jsonl",
            "--report-dir",
            "r",
        ],
    );
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("fingerprint"));
}

#[test]
fn evaluate_writes_tables_with_a_random_row() {
    let d = tempfile::tempdir().unwrap();
    severity_splits(d.path());
    for fam in ["forest", "svm"] {
        let o = run(
            d.path(),
            &[
                "train",
                "--family",
                fam,
                "--outcome",
                "severity",
                "--train",
                "train.jsonl",
                "--model-out",
                &format!("{fam}.bin"),
            ],
        );
        assert!(code(&o) <= 1, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let o = run(
        d.path(),
        &[
            "evaluate",
            "--models",
            "forest.bin,svm.bin",
            "--test",
            "test.jsonl",
            "--report-dir",
            "r",
            "--seed",
            "3",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(d.path().join("r/severity.csv")).unwrap();
    assert!(csv.starts_with("# outcome=severity seed=3\nmodel,metric,1st aid,med./restr.,mean\n"));
    for m in ["RF", "SVM", "Random"] {
        assert_eq!(
            csv.lines().filter(|l| l.starts_with(&format!("{m},"))).count(),
            3,
            "{m}"
        );
    }
    let inspect = run(d.path(), &["inspect", "--model", "forest.bin"]);
    assert_eq!(code(&inspect), 0);
}
