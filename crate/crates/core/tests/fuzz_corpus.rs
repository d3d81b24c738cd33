//! Replays the checked-in fuzz seeds through the same checks as the fuzz
//! targets, so they run on a stable toolchain too.

use std::path::PathBuf;

use hwcost::dataset::{read_csv, write_csv_to};
use hwcost::ir::{emit_text, parse_function, parse_functions};
use hwcost::models::{Model, ModelConfig};
use hwcost::nn::Checkpoint;
use hwcost::oracle::MachineConfig;
use hwcost::tokenizer::Vocabulary;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (p.display().to_string(), std::fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn text(bytes: &[u8]) -> &str {
    std::str::from_utf8(bytes).unwrap()
}

#[test]
fn parse_ir_seeds() {
    for (name, bytes) in seeds("parse_ir") {
        let fs = parse_functions(text(&bytes)).unwrap_or_else(|e| panic!("{name}: {e}"));
        for f in fs {
            let canonical = emit_text(&f).unwrap();
            assert_eq!(emit_text(&parse_function(&canonical).unwrap()).unwrap(), canonical, "{name}");
        }
    }
}

#[test]
fn vocab_seeds() {
    for (name, bytes) in seeds("vocab_text") {
        let v = Vocabulary::from_text(text(&bytes)).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(Vocabulary::from_text(&v.to_text()).unwrap(), v);
    }
}

#[test]
fn machine_config_seeds() {
    for (name, bytes) in seeds("machine_config") {
        let m = MachineConfig::from_text(text(&bytes)).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(MachineConfig::from_text(&m.to_text()).unwrap(), m);
    }
}

#[test]
fn model_config_seeds() {
    for (name, bytes) in seeds("model_config") {
        let c = ModelConfig::from_text(text(&bytes)).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(ModelConfig::from_text(&c.to_text()).unwrap(), c);
    }
}

#[test]
fn csv_seeds() {
    for (name, bytes) in seeds("csv_rows") {
        let rows = read_csv(bytes.as_slice()).unwrap_or_else(|e| panic!("{name}: {e}"));
        let mut out = Vec::new();
        write_csv_to(&rows, &mut out).unwrap();
        assert_eq!(read_csv(out.as_slice()).unwrap(), rows);
    }
}

#[test]
fn checkpoint_seeds() {
    for (name, bytes) in seeds("checkpoint") {
        let ck = Checkpoint::decode(&bytes).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(ck.encode(), bytes);
        Model::from_checkpoint(&ck).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn damaged_inputs_are_errors() {
    for (_, bytes) in seeds("checkpoint") {
        for cut in (0..bytes.len()).step_by(97) {
            assert!(Checkpoint::decode(&bytes[..cut]).is_err());
        }
    }
    for (_, bytes) in seeds("parse_ir") {
        let t = text(&bytes);
        for cut in (0..t.len()).filter(|&i| t.is_char_boundary(i)).step_by(13) {
            let _ = parse_functions(&t[..cut]);
        }
    }
}
