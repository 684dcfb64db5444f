use std::path::{Path, PathBuf};
use std::sync::Arc;

use kare_core::backend::ScriptedBackend;
use kare_core::corpus::load_corpus;
use kare_core::datagen::{
    read_pairs, write_pairs, Constructor, DatagenConfig, DatagenReport, ExampleStatus, ExportStyle,
};
use kare_core::{Backends, Pipelines, PromptSet};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures/scripted")
        .join(name)
}

struct Output {
    report: DatagenReport,
    statuses: Vec<(String, ExampleStatus)>,
    records: String,
    pairs: String,
    requests: u64,
}

fn run(workers: usize) -> Output {
    let corpus = load_corpus(&fixture("datagen_corpus.jsonl"), true).unwrap();
    let backend = Arc::new(ScriptedBackend::load(&fixture("datagen_rules.json")).unwrap());
    let backends = Backends::shared(backend);
    let prompts = PromptSet::default();
    let cfg = DatagenConfig {
        workers,
        ..DatagenConfig::default()
    };
    let c = Constructor::new(Pipelines::new(&backends, &prompts), cfg);
    let run = c.run_datagen(&corpus.examples);

    for s in run.samples() {
        assert!(
            c.verify_pair(s).unwrap(),
            "pair {} does not re-verify",
            s.id
        );
    }
    let mut pairs = Vec::new();
    write_pairs(&mut pairs, run.samples(), ExportStyle::Native, &prompts).unwrap();
    let records: Vec<String> = run
        .records
        .iter()
        .map(|r| serde_json::to_string(r).unwrap())
        .collect();
    Output {
        report: run.report,
        statuses: run
            .records
            .iter()
            .map(|r| (r.id.clone(), r.status))
            .collect(),
        records: records.join("\n"),
        pairs: String::from_utf8(pairs).unwrap(),
        requests: backends.telemetry().requests,
    }
}

#[test]
fn every_branch_once() {
    let out = run(4);
    assert_eq!(
        out.report,
        DatagenReport {
            skipped_correct: 1,
            accepted: 1,
            discarded_inadequate: 1,
            discarded_unfixable: 1,
            discarded_malformed: 1,
            backend_failures: 1,
        }
    );
    use ExampleStatus::*;
    let want = [
        ("ex1", SkippedCorrect),
        ("ex2", Accepted),
        ("ex3", DiscardedInadequate),
        ("ex4", DiscardedUnfixable),
        ("ex5", DiscardedMalformed),
        ("ex6", BackendFailure),
    ];
    let got: Vec<_> = out
        .statuses
        .iter()
        .map(|(id, s)| (id.as_str(), *s))
        .collect();
    assert_eq!(got, want);
    // 3 + 7 + 4 + (3 + 1 + 3·3) + 3 + 1 generation calls, plus 2 re-verification calls
    assert_eq!(out.requests, 3 + 7 + 4 + 13 + 3 + 1 + 2);
}

#[test]
fn unfixable_stops_at_max_iter() {
    let out = run(1);
    let line = out.records.lines().find(|l| l.contains("\"ex4\"")).unwrap();
    let rec: serde_json::Value = serde_json::from_str(line).unwrap();
    assert_eq!(rec["trace"]["iterations"].as_array().unwrap().len(), 3);
    assert_eq!(rec["trace"]["final_status"], "discarded_unfixable");
}

#[test]
fn output_is_byte_identical() {
    let a = run(4);
    let b = run(1);
    assert_eq!(a.records, b.records);
    assert_eq!(a.pairs, b.pairs);
    let pairs = read_pairs(a.pairs.as_bytes()).unwrap();
    assert_eq!(pairs.len(), 1);
    assert!(pairs[0].chosen.contains("completed in -> 1889"));
    assert!(pairs[0].rejected.contains("completed in -> 1887"));
}
