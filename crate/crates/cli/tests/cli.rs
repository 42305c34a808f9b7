use std::path::Path;
use std::process::{Command, Output};

use gramdash::Vocabulary;
use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gramdash")).args(args).output().unwrap()
}

fn json(args: &[&str]) -> Value {
    let mut a = args.to_vec();
    a.push("--json");
    let out = run(&a);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn compile_aot_and_jit() {
    let aot = json(&["compile", "corpus:json_lite", "--aot"]);
    assert!(aot["scannable_keys"].as_u64().unwrap() > 0);
    assert_eq!(aot["precompiled_entries"], aot["scannable_keys"]);
    let jit = json(&["compile", "corpus:json_lite", "--jit", "0"]);
    assert_eq!(jit["precompiled_entries"], 0);
}

#[test]
fn compression_bounds_schema_states() {
    let dir = tempfile::tempdir().unwrap();
    let states = |max: u32, extra: &[&str]| {
        let f = dir.path().join(format!("tools{max}.json"));
        let spec = format!(r#"[{{"name":"note","params":{{"type":"object","properties":{{"text":{{"type":"string","maxLength":{max}}}}}}}}}]"#);
        std::fs::write(&f, spec).unwrap();
        let mut args = vec!["compile", path(&f), "--jit", "0"];
        args.extend_from_slice(extra);
        json(&args)["fsm_states"].as_u64().unwrap()
    };
    assert_eq!(states(200, &["--rep-threshold", "8"]), states(2000, &["--rep-threshold", "8"]));
    assert!(states(200, &["--no-compress"]) >= 200);
}

#[test]
fn bundle_is_versioned_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b.json");
    json(&["compile", "corpus:kv_list", "-o", path(&out), "--vocab-size", "200"]);
    let b: Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(b["format"], "gramdash-bundle");
    assert_eq!(b["version"], 1);
    assert!(!b["entries"].as_array().unwrap().is_empty());
    assert!(gramdash::parse_ebnf(b["grammar"].as_str().unwrap()).is_ok());
}

#[test]
fn mask_at_start() {
    let m = json(&["mask", "corpus:json_lite"]);
    assert!(m["allowed_count"].as_u64().unwrap() >= 1);
    let bad = run(&["mask", "corpus:json_lite", "--prefix", "}"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn replay_valid_and_invalid_traces() {
    let dir = tempfile::tempdir().unwrap();
    let vf = dir.path().join("v.jsonl");
    assert!(run(&["gen-vocab", "--size", "300", "--seed", "4", "-o", path(&vf)]).status.success());
    let v = Vocabulary::load(&vf, gramdash::VocabFormat::Jsonl).unwrap();
    let mut ids = v.tokenize_greedy(br#"{"a":[1,2.5,"x"]}"#).unwrap();
    ids.push(v.eos());
    let tf = dir.path().join("trace.json");
    std::fs::write(&tf, serde_json::to_string(&ids).unwrap()).unwrap();
    let ok = run(&["replay", "corpus:json_lite", "--vocab", path(&vf), "--trace", path(&tf)]);
    assert!(ok.status.success());
    let lines: Vec<Value> = String::from_utf8_lossy(&ok.stdout).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), ids.len());
    assert!(lines.iter().all(|l| l["accepted"] == true));

    // An extra closing brace after the complete object.
    let at = ids.len() - 1;
    ids.insert(at, v.find(b"}").unwrap());
    std::fs::write(&tf, serde_json::to_string(&ids).unwrap()).unwrap();
    let bad = run(&["replay", "corpus:json_lite", "--vocab", path(&vf), "--trace", path(&tf)]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains(&format!("step {at}")));
}

#[test]
fn oracle_diff_agrees() {
    let r = json(&["oracle-diff", "corpus:tools_5", "--steps", "30", "--seed", "1", "--vocab-size", "200"]);
    assert_eq!(r["agreed"], true);
    assert!(run(&["oracle-diff", "corpus:arith", "--steps", "10"]).status.success());
}

#[test]
fn ac_stats_single_tag_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("tags.txt");
    std::fs::write(&f, "ab\n").unwrap();
    let r = json(&["ac-stats", path(&f)]);
    assert_eq!(r["rows"][0]["ac_states"], 3);
    let s = json(&["ac-stats", "--generate", "50,200,500"]);
    let sizes: Vec<u64> = s["rows"].as_array().unwrap().iter().map(|r| r["ebnf_size"].as_u64().unwrap()).collect();
    assert!(sizes.windows(2).all(|w| w[1] > w[0]));
    assert_eq!(s["fit"]["monotone"], true);
}

#[test]
fn bench_rates_are_deterministic() {
    let args = ["bench", "--pool", "20", "--tools", "4", "--requests", "6", "--tokens", "2", "--vocab-size", "200"];
    let a = json(&args);
    let mut serial = args.to_vec();
    serial.push("--serial");
    let b = json(&serial);
    assert_eq!(a["structure_reuse_rate"], 0.0);
    assert_eq!(a["substructure_reuse_rate"], b["substructure_reuse_rate"]);
    let one = json(&["bench", "--pool", "20", "--tools", "4", "--requests", "1", "--mode", "static", "--tokens", "1", "--vocab-size", "200"]);
    assert_eq!(one["structure_reuse_rate"], 0.0);
    assert_eq!(one["substructure_reuse_rate"], 0.0);
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("bad.ebnf");
    std::fs::write(&f, "root ::= missing").unwrap();
    let out = run(&["compile", path(&f)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
    assert_eq!(run(&["compile", "corpus:nope"]).status.code(), Some(1));
    assert_eq!(run(&["bench", "--pool", "3", "--tools", "4"]).status.code(), Some(1));
}

#[test]
fn generated_tools_compile() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("tools.json");
    assert!(run(&["gen-tools", "--n", "3", "--seed", "2", "-o", path(&f)]).status.success());
    let r = json(&["compile", path(&f), "--format", "harmony_lite", "--jit", "0"]);
    assert!(r["rules"].as_u64().unwrap() > 3);
}
