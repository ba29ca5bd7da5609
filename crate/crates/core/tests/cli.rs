use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn tablestruct(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tablestruct"))
        .args(args)
        .output()
        .unwrap()
}

fn json_ok(args: &[&str]) -> Value {
    let out = tablestruct(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn convert_otsl_to_html() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "t.otsl", "C C NL C C NL");
    let out = tablestruct(&["convert", "--from", "otsl", "--to", "html", "--in", &input]);
    assert!(out.status.success());
    assert_eq!(
        String::from_utf8(out.stdout).unwrap(),
        "<table><tr><td/><td/></tr><tr><td/><td/></tr></table>\n"
    );
}

#[test]
fn convert_to_file() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(
        dir.path(),
        "t.html",
        "<table><tr><td colspan=\"2\">x</td></tr><tr><td>a</td><td/></tr></table>",
    );
    let target = dir.path().join("out.otsl");
    let out = tablestruct(&[
        "convert",
        "--from",
        "html",
        "--to",
        "otsl",
        "--in",
        &input,
        "--out",
        target.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    assert_eq!(fs::read_to_string(target).unwrap(), "C L NL C C NL\n");
}

#[test]
fn illegal_otsl_is_a_domain_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "bad.otsl", "C U NL");
    let out = tablestruct(&["convert", "--from", "otsl", "--to", "html", "--in", &input]);
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error: ") && err.contains("U"), "{err}");
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(tablestruct(&["convert", "--from", "otsl"]).status.code(), Some(2));
    assert_eq!(tablestruct(&["frobnicate"]).status.code(), Some(2));
    let missing = tablestruct(&[
        "convert",
        "--from",
        "otsl",
        "--to",
        "html",
        "--in",
        "/nonexistent/t.otsl",
    ]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(missing.stdout.is_empty());
    assert_eq!(
        tablestruct(&["eval-losses", "--components", "1,1,1"]).status.code(),
        Some(2)
    );
}

#[test]
fn score_identical_tables() {
    let dir = tempfile::tempdir().unwrap();
    let t = write(
        dir.path(),
        "t.html",
        "<table><tr><td rowspan=\"2\">a b</td><td>c</td></tr><tr><td/></tr></table>",
    );
    let v = json_ok(&["score", "--pred", &t, "--gt", &t]);
    assert_eq!(v["teds"], 1.0);
    assert_eq!(v["teds_struct"], 1.0);
    let s = json_ok(&["score", "--pred", &t, "--gt", &t, "--struct-only"]);
    assert!(s.get("teds").is_none());
    assert_eq!(s["teds_struct"], 1.0);
}

#[test]
fn score_batch_reports_every_line_and_the_mean() {
    let dir = tempfile::tempdir().unwrap();
    let batch = write(
        dir.path(),
        "b.jsonl",
        concat!(
            "{\"pred\":\"<table><tr><td>a</td></tr></table>\",\"gt\":\"<table><tr><td>a</td></tr></table>\"}\n",
            "\n",
            "{\"pred\":\"<table><tr><td>ab</td></tr></table>\",\"gt\":\"<table><tr><td>a</td></tr></table>\"}\n",
        ),
    );
    let v = json_ok(&["score", "--batch", &batch]);
    let samples = v["samples"].as_array().unwrap();
    assert_eq!(samples.len(), 2);
    // One substitution at half the text: 1 - 0.5 / 3.
    let second = samples[1]["teds"].as_f64().unwrap();
    assert!((second - (1.0 - 0.5 / 3.0)).abs() < 1e-12);
    assert!((v["mean"]["teds"].as_f64().unwrap() - (1.0 + second) / 2.0).abs() < 1e-12);
}

#[test]
fn gen_then_assemble_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.jsonl");
    let c = corpus.to_str().unwrap();
    let stats = json_ok(&["gen", "--seed", "3", "--n", "40", "--out", c]);
    assert_eq!(stats["samples"], 40);
    assert_eq!(stats["distractors"], 0);
    let summary = json_ok(&["assemble", "--corpus", c]);
    assert_eq!(summary["samples"], 40);
    assert_eq!(summary["perfect"], 40);
    assert_eq!(summary["mean_teds"], 1.0);

    let one = json_ok(&["assemble", "--corpus", c, "--index", "5"]);
    assert_eq!(one["teds"], 1.0);
    assert_eq!(one["teds_struct"], 1.0);
    assert!(one["html"].as_str().unwrap().starts_with("<table>"));
}

#[test]
fn assemble_with_explicit_features() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.jsonl");
    let c = corpus.to_str().unwrap();
    json_ok(&["gen", "--seed", "4", "--n", "3", "--out", c]);
    let samples = tablestruct::corpus::read_corpus(&corpus).unwrap();
    let features = tablestruct::corpus::oracle_features(&samples[1], 64, 10.0).unwrap();
    let fpath = dir.path().join("f.json");
    fs::write(&fpath, serde_json::to_string(&features).unwrap()).unwrap();
    let v = json_ok(&[
        "assemble",
        "--corpus",
        c,
        "--index",
        "1",
        "--features",
        fpath.to_str().unwrap(),
    ]);
    assert_eq!(v["teds"], 1.0);
    let out = tablestruct(&["assemble", "--corpus", c, "--index", "9"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_losses_all_ones() {
    let v = json_ok(&["eval-losses", "--components", "1,1,1,1,1", "--grad-seeds", "0"]);
    assert_eq!(v["combined"], 4.0);
    let w = json_ok(&[
        "eval-losses",
        "--components",
        "1,1,1,1,1",
        "--lambda",
        "1,1,1,1,1",
        "--grad-seeds",
        "0",
    ]);
    assert_eq!(w["combined"], 5.0);
}

#[test]
fn eval_losses_on_a_sample_with_gradient_check() {
    let v = json_ok(&["eval-losses", "--seed", "2", "--grad-seeds", "10"]);
    assert!(v["combined"].as_f64().unwrap().is_finite());
    assert_eq!(v["gradient_check"]["passed"], true);
    assert!(v["gradient_check"]["max_relative_error"].as_f64().unwrap() < 1e-4);
}

#[test]
fn filter_eval_orders_the_baselines() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("w.jsonl");
    let c = corpus.to_str().unwrap();
    let stats = json_ok(&[
        "gen",
        "--seed",
        "7",
        "--n",
        "300",
        "--watermark-prob",
        "0.2",
        "--out",
        c,
    ]);
    assert!(stats["distractors"].as_u64().unwrap() > 0);
    let v = json_ok(&["filter-eval", "--corpus", c]);
    let teds = |k: &str| v[k]["teds"].as_f64().unwrap();
    assert!(teds("greedy") < teds("selective"), "{v}");
    assert!(teds("selective") < teds("filtered"), "{v}");
    assert_eq!(teds("filtered"), 1.0);
}
