use std::path::Path;
use std::process::{Command, Output};

const FUNC: &str = "\
func @pair(%arg0: tensor<8x32xf32>, %arg1: tensor<8x32xf32>) -> (tensor<8x32xf32>) {
  %0 = xpu.add %arg0, %arg1 : (tensor<8x32xf32>, tensor<8x32xf32>) -> tensor<8x32xf32>
  %1 = xpu.relu %0 : (tensor<8x32xf32>) -> tensor<8x32xf32>
  return %1
}
";

fn hwcost(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hwcost"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = hwcost(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    ok(&["gen-data", "--out", s(&p("all.csv")), "--n", "60", "--seed", "5", "--max-ops", "10"]);
    ok(&[
        "split",
        "--data",
        s(&p("all.csv")),
        "--train-out",
        s(&p("train.csv")),
        "--val-out",
        s(&p("val.csv")),
        "--test-out",
        s(&p("test.csv")),
    ]);
    ok(&["build-vocab", "--data", s(&p("train.csv")), "--mode", "ops-only", "--out", s(&p("vocab.txt"))]);
    ok(&[
        "train",
        "--data",
        s(&p("train.csv")),
        "--val",
        s(&p("val.csv")),
        "--vocab",
        s(&p("vocab.txt")),
        "--arch",
        "convstack",
        "--target",
        "register-pressure",
        "--epochs",
        "2",
        "--max-len",
        "40",
        "--out",
        s(&p("model.ckpt")),
        "--history",
        s(&p("history.txt")),
    ]);
    assert_eq!(std::fs::read_to_string(p("history.txt")).unwrap().lines().count(), 2);
    let eval = ok(&["eval", "--model", s(&p("model.ckpt")), "--data", s(&p("test.csv")), "--report", s(&p("report.txt"))]);
    let report = std::fs::read_to_string(p("report.txt")).unwrap();
    assert_eq!(stdout(&eval), report);
    let pct = report
        .lines()
        .find_map(|l| l.strip_prefix("rmse_pct_of_range = "))
        .expect("rmse_pct_of_range line");
    assert!(pct.parse::<f64>().unwrap().is_finite());
    assert!(report.contains("exact_match_pct = "));

    std::fs::write(p("one.mlir"), FUNC).unwrap();
    let pred = ok(&["predict", "--model", s(&p("model.ckpt")), "--ir", s(&p("one.mlir"))]);
    let lines: Vec<String> = stdout(&pred).lines().map(String::from).collect();
    assert_eq!(lines.len(), 1);
    lines[0].parse::<f64>().unwrap();
    let rounded = ok(&["predict", "--model", s(&p("model.ckpt")), "--ir", s(&p("one.mlir")), "--rounded"]);
    stdout(&rounded).trim().parse::<u64>().unwrap();

    std::fs::write(p("two.mlir"), format!("{FUNC}\n{FUNC}")).unwrap();
    std::fs::write(p("list.txt"), format!("{}\n{}\n", s(&p("one.mlir")), s(&p("two.mlir")))).unwrap();
    let batch = ok(&["predict", "--model", s(&p("model.ckpt")), "--ir-list", s(&p("list.txt"))]);
    let all: Vec<&str> = std::str::from_utf8(&batch.stdout).unwrap().lines().collect();
    assert_eq!(all.len(), 3);
    assert!(all.iter().all(|l| *l == lines[0]));
}

#[test]
fn predict_rejects_malformed_ir() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    ok(&["gen-data", "--out", s(&p("d.csv")), "--n", "10", "--max-ops", "5"]);
    ok(&["build-vocab", "--data", s(&p("d.csv")), "--out", s(&p("v.txt"))]);
    ok(&[
        "train",
        "--data",
        s(&p("d.csv")),
        "--vocab",
        s(&p("v.txt")),
        "--arch",
        "bagfc",
        "--epochs",
        "1",
        "--out",
        s(&p("m.ckpt")),
    ]);
    std::fs::write(p("bad.mlir"), "func @f(%arg0: tensor<4xf32>) -> (tensor<4xf32>) { %0 = xpu.nope %arg0 }").unwrap();
    let out = hwcost(&["predict", "--model", s(&p("m.ckpt")), "--ir", s(&p("bad.mlir"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));

    let out = hwcost(&["predict", "--model", s(&p("missing.ckpt")), "--ir", s(&p("bad.mlir"))]);
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(p("junk.ckpt"), b"not a checkpoint").unwrap();
    let out = hwcost(&["predict", "--model", s(&p("junk.ckpt")), "--ir", s(&p("bad.mlir"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn oracle_prints_numbers_only() {
    let dir = tempfile::tempdir().unwrap();
    let ir = dir.path().join("f.mlir");
    std::fs::write(&ir, FUNC).unwrap();
    let out = ok(&["oracle", "--ir", s(&ir)]);
    // two 1 KiB args live with the add result, 16 registers of 64 bytes each
    assert_eq!(stdout(&out), "48 1\n");
    let cfg = dir.path().join("m.cfg");
    std::fs::write(&cfg, "register_width_bytes = 32\nvector_alu_ops = add\n").unwrap();
    let out = ok(&["oracle", "--ir", s(&ir), "--machine-config", s(&cfg)]);
    assert_eq!(stdout(&out), "96 0.5\n");
    std::fs::write(&cfg, "register_width_bytes = banana\n").unwrap();
    assert_eq!(hwcost(&["oracle", "--ir", s(&ir), "--machine-config", s(&cfg)]).status.code(), Some(2));
}

#[test]
fn usage_errors_and_help() {
    assert_eq!(hwcost(&["train", "--nonsense"]).status.code(), Some(1));
    assert_eq!(hwcost(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(hwcost(&[]).status.code(), Some(1));
    for sub in ["gen-data", "augment", "split", "build-vocab", "tokenize", "train", "eval", "compare", "predict", "oracle"] {
        let out = ok(&[sub, "--help"]);
        assert!(stdout(&out).contains("Usage"), "{sub}");
    }
    let dir = tempfile::tempdir().unwrap();
    let out = hwcost(&["gen-data", "--out", s(&dir.path().join("x.csv")), "--min-ops", "9", "--max-ops", "2"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    std::fs::write(p("gen.cfg"), format!("out = {}\nn = 7\nseed = 3\n", s(&p("a.csv")))).unwrap();
    ok(&["gen-data", "--config", s(&p("gen.cfg"))]);
    ok(&["gen-data", "--config", s(&p("gen.cfg")), "--n", "4", "--out", s(&p("b.csv"))]);
    let rows = |f: &str| std::fs::read_to_string(p(f)).unwrap().matches("RegisterPressure").count();
    assert_eq!(rows("a.csv"), 7);
    assert_eq!(rows("b.csv"), 4);
    std::fs::write(p("bad.cfg"), "wings = 2\n").unwrap();
    assert_eq!(hwcost(&["gen-data", "--config", s(&p("bad.cfg")), "--out", s(&p("c.csv"))]).status.code(), Some(1));
}

#[test]
fn commands_are_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    for name in ["x.csv", "y.csv"] {
        ok(&["gen-data", "--out", s(&p(name)), "--n", "20", "--seed", "11"]);
    }
    assert_eq!(std::fs::read(p("x.csv")).unwrap(), std::fs::read(p("y.csv")).unwrap());
    for name in ["ax.csv", "ay.csv"] {
        ok(&["augment", "--data", s(&p("x.csv")), "--out", s(&p(name)), "--policy", "reorder", "--factor", "3"]);
    }
    assert_eq!(std::fs::read(p("ax.csv")).unwrap(), std::fs::read(p("ay.csv")).unwrap());
    ok(&["build-vocab", "--data", s(&p("x.csv")), "--mode", "ops-operands", "--out", s(&p("v.txt"))]);
    std::fs::write(p("f.mlir"), FUNC).unwrap();
    let a = ok(&["tokenize", "--ir", s(&p("f.mlir")), "--vocab", s(&p("v.txt")), "--mode", "ops-operands"]);
    let ids: Vec<u32> = stdout(&a).split_whitespace().map(|t| t.parse().unwrap()).collect();
    assert_eq!(ids.first(), Some(&2));
    assert_eq!(ids.last(), Some(&3));
    let padded = ok(&[
        "tokenize",
        "--ir",
        s(&p("f.mlir")),
        "--vocab",
        s(&p("v.txt")),
        "--mode",
        "ops-operands",
        "--max-len",
        "30",
    ]);
    assert_eq!(stdout(&padded).split_whitespace().count(), 30);
}
