use std::io::Cursor;

use tablestruct::corpus::{
    generate_corpus, generate_sample, read_corpus, read_corpus_from, write_corpus, write_corpus_to, CorpusConfig,
    CorpusError, WatermarkConfig,
};

fn watermarked(seed: u64, n: usize, p: f64) -> CorpusConfig {
    CorpusConfig {
        seed,
        n_samples: n,
        watermark: WatermarkConfig {
            enabled: true,
            probability: p,
            min_iou: 0.8,
        },
        ..CorpusConfig::default()
    }
}

#[test]
fn distractor_count_is_binomial() {
    let p = 0.2;
    let corpus = generate_corpus(&watermarked(5, 10_000, p)).unwrap();
    let (mut hosts, mut distractors) = (0usize, 0usize);
    for s in &corpus {
        let d = s.annotations.distractor_count();
        distractors += d;
        hosts += s.annotations.len() - d;
    }
    let mean = hosts as f64 * p;
    let sigma = (hosts as f64 * p * (1.0 - p)).sqrt();
    assert!(
        (distractors as f64 - mean).abs() < 3.0 * sigma,
        "{distractors} distractors over {hosts} boxes, expected {mean} +- {}",
        3.0 * sigma
    );
}

#[test]
fn distractors_overlap_their_host() {
    let corpus = generate_corpus(&watermarked(6, 300, 0.5)).unwrap();
    for s in &corpus {
        let boxes = &s.annotations.boxes;
        for (j, b) in boxes.iter().enumerate().filter(|(_, b)| b.is_distractor()) {
            let host = &boxes[j - 1];
            assert!(!host.is_distractor());
            assert!(b.bbox.iou(&host.bbox) >= 0.8, "iou {}", b.bbox.iou(&host.bbox));
        }
    }
}

#[test]
fn jsonl_round_trip() {
    let corpus = generate_corpus(&watermarked(9, 1000, 0.2)).unwrap();
    let mut buf = Vec::new();
    write_corpus_to(&mut buf, &corpus).unwrap();
    let back = read_corpus_from(Cursor::new(&buf)).unwrap();
    assert_eq!(back, corpus);
    let mut again = Vec::new();
    write_corpus_to(&mut again, &back).unwrap();
    assert_eq!(again, buf);
}

#[test]
fn file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    let corpus = generate_corpus(&CorpusConfig {
        n_samples: 20,
        ..CorpusConfig::default()
    })
    .unwrap();
    write_corpus(&path, &corpus).unwrap();
    assert_eq!(read_corpus(&path).unwrap(), corpus);
}

#[test]
fn generation_is_deterministic_and_order_independent() {
    let cfg = watermarked(11, 200, 0.3);
    let a = generate_corpus(&cfg).unwrap();
    let b = generate_corpus(&cfg).unwrap();
    assert_eq!(a, b);
    for (i, s) in a.iter().enumerate().rev().step_by(17) {
        assert_eq!(&generate_sample(&cfg, i as u64).unwrap(), s);
    }
    let other = generate_corpus(&CorpusConfig { seed: 12, ..cfg }).unwrap();
    assert_ne!(other, a);
}

#[test]
fn tampered_lines_are_rejected_with_line_numbers() {
    let corpus = generate_corpus(&CorpusConfig {
        n_samples: 3,
        ..CorpusConfig::default()
    })
    .unwrap();
    let mut buf = Vec::new();
    write_corpus_to(&mut buf, &corpus).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    lines[1] = lines[1].replacen("\"format_version\":1", "\"format_version\":99", 1);
    match read_corpus_from(Cursor::new(lines.join("\n"))) {
        Err(CorpusError::SchemaViolation { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected a schema violation, got {other:?}"),
    }
    match read_corpus_from(Cursor::new("{not json}\n")) {
        Err(CorpusError::SchemaViolation { line, .. }) => assert_eq!(line, 1),
        other => panic!("expected a schema violation, got {other:?}"),
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        CorpusConfig {
            span_probability: 1.5,
            ..CorpusConfig::default()
        },
        CorpusConfig {
            max_rows: 0,
            ..CorpusConfig::default()
        },
        CorpusConfig {
            box_slots: 4,
            ..CorpusConfig::default()
        },
        CorpusConfig {
            feature_dim: 8,
            ..CorpusConfig::default()
        },
    ];
    for cfg in bad {
        assert!(generate_corpus(&cfg).is_err(), "{cfg:?}");
    }
}
