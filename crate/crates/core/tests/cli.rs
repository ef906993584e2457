use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stainfield"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn missing_data_flag_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(bin().args(["train", "--out"]).arg(dir.path()));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--data"), "{}", stderr(&out));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = run(bin().arg("restain"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn report_without_inputs_fails() {
    let out = run(bin().arg("report"));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("missing-argument"), "{}", stderr(&out));
}

#[test]
fn help_exits_cleanly() {
    let out = run(bin().arg("--help"));
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["generate-data", "train", "infer", "evaluate", "report"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
}

fn ok(cmd: &mut Command) {
    let out = run(cmd);
    assert!(out.status.success(), "{cmd:?}: {}", stderr(&out));
}

fn evaluate(d: &Path, pred: &str, model: &str) {
    ok(bin()
        .args(["evaluate", "--mode", "texture", "--model", model, "--pred"])
        .arg(d.join(pred))
        .arg("--ref")
        .arg(d.join("data"))
        .arg("--out")
        .arg(d.join(format!("{model}.json"))));
}

#[test]
fn report_merges_one_row_per_model() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(bin().args(["generate-data", "--n", "3", "--mapping", "pointwise", "--seed", "5", "--out"]).arg(d.join("data")));
    ok(bin().args(["generate-data", "--n", "3", "--mapping", "contextual", "--seed", "5", "--out"]).arg(d.join("other")));
    // Targets of the reference set against themselves and against a different mapping.
    let copy = |from: &str, to: &str, suffix: &str| {
        std::fs::create_dir_all(d.join(to)).unwrap();
        for e in std::fs::read_dir(d.join(from)).unwrap() {
            let p = e.unwrap().path();
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            if let Some(stem) = name.strip_suffix(&format!("_{suffix}.png")) {
                std::fs::copy(&p, d.join(to).join(format!("{stem}.png"))).unwrap();
            }
        }
    };
    copy("data", "perfect", "target");
    copy("other", "shifted", "target");
    evaluate(d, "perfect", "perfect");
    evaluate(d, "shifted", "shifted");
    let out = run(bin().arg("report").arg(d.join("perfect.json")).arg(d.join("shifted.json")).args(["--format", "markdown"]));
    assert!(out.status.success(), "{}", stderr(&out));
    let table = String::from_utf8_lossy(&out.stdout).into_owned();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 4, "{table}");
    assert!(lines[2].starts_with("| perfect |"));
    assert!(lines[3].starts_with("| shifted |"));
    let csv = run(bin().arg("report").arg(d.join("perfect.json")).arg(d.join("shifted.json")).args(["--format", "csv"]));
    assert_eq!(String::from_utf8_lossy(&csv.stdout).lines().count(), 3);
}
