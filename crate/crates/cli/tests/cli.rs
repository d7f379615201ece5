use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hadith_corpus::synthetic::{generate, SyntheticConfig};

const BIN: &str = env!("CARGO_BIN_EXE_hadith-corpus");

fn sample_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus/sample")
}

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            if entry.file_name() != "store" {
                copy_dir(&entry.path(), &target);
            }
        } else {
            std::fs::copy(entry.path(), target).unwrap();
        }
    }
}

fn sample_copy() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    copy_dir(&sample_dir(), dir.path());
    dir
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env_remove("CORPUS_CONFIG")
        .env_remove("CORPUS_STORE_DIR")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// `stage -> (status, counters)` parsed from a run summary.
fn parse_summary(text: &str) -> BTreeMap<String, (String, BTreeMap<String, u64>)> {
    text.lines()
        .filter(|l| !l.starts_with("run:"))
        .map(|l| {
            let mut parts = l.split_whitespace();
            let stage = parts.next().unwrap().to_string();
            let status = parts.next().unwrap().to_string();
            let counts = parts
                .filter_map(|kv| kv.split_once('='))
                .filter_map(|(k, v)| v.parse().ok().map(|v| (k.to_string(), v)))
                .collect();
            (stage, (status, counts))
        })
        .collect()
}

struct Expected {
    books: u64,
    hadith_books: u64,
    reclassified: u64,
    narrations: u64,
    non_hadith: u64,
    groups: u64,
    grouped: u64,
}

/// Counts implied by the generator's ground truth for the sample corpus.
fn expected_counts() -> Expected {
    let corpus = generate(&SyntheticConfig::default());
    let gold = std::fs::read_to_string(sample_dir().join("gold.jsonl")).unwrap();
    let regenerated: usize = corpus.books.iter().map(|b| b.gold.len()).sum();
    assert_eq!(gold.lines().count(), regenerated, "sample corpus is stale; rerun the make_sample_corpus example");

    let mut matns: HashMap<String, u64> = HashMap::new();
    let (mut narrations, mut non_hadith) = (0, 0);
    for book in &corpus.books {
        let stream: Vec<char> = book.clean_stream().chars().collect();
        for span in &book.gold {
            if span.is_hadith {
                narrations += 1;
                *matns.entry(stream[span.text_start..span.char_end].iter().collect()).or_default() += 1;
            } else {
                non_hadith += 1;
            }
        }
    }
    let sources = std::fs::read_to_string(sample_dir().join("sources.csv")).unwrap();
    let reclass = std::fs::read_to_string(sample_dir().join("reclassify.csv")).unwrap();
    let reclassified: Vec<&str> = reclass.lines().skip(1).filter_map(|l| l.split(',').next()).collect();
    let rows: Vec<Vec<&str>> = sources.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let hadith_books = rows.iter().filter(|r| r[1] == "hadith" || reclassified.contains(&r[2])).count() as u64;
    Expected {
        books: rows.len() as u64,
        hadith_books,
        reclassified: reclassified.len() as u64,
        narrations,
        non_hadith,
        groups: matns.values().filter(|&&c| c > 1).count() as u64,
        grouped: matns.values().filter(|&&c| c > 1).sum(),
    }
}

#[test]
fn run_on_sample_corpus_matches_ground_truth_then_rerun_is_noop() {
    let dir = sample_copy();
    let first = run(dir.path(), &["run"]);
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    let text = stdout(&first);
    assert!(text.trim_end().ends_with("run: complete"), "{text}");
    let summary = parse_summary(&text);
    let want = expected_counts();

    for (stage, (status, counts)) in &summary {
        assert_eq!(status, "completed", "{stage}");
        assert!(counts["new_work"] > 0, "{stage} did no work");
    }
    let c = |stage: &str, key: &str| summary[stage].1[key];
    assert_eq!(c("ingest", "books"), want.books);
    assert_eq!(c("ingest", "hadith_books"), want.hadith_books);
    assert_eq!(c("ingest", "reclassified"), want.reclassified);
    assert_eq!(c("segment", "narrations"), want.narrations);
    assert_eq!(c("segment", "non_hadith_spans"), want.non_hadith);
    assert_eq!(c("segment", "unresolved_windows"), 0);
    assert_eq!(c("align", "narrations"), want.narrations + want.non_hadith);
    assert_eq!(c("align", "low_fidelity"), 0);
    assert_eq!(c("enrich", "bundles"), want.narrations);
    assert_eq!(c("enrich", "layers_failed"), 0);
    assert_eq!(c("group", "narrations"), want.narrations);
    assert_eq!(c("group", "groups"), want.groups);
    assert_eq!(c("group", "grouped_narrations"), want.grouped);
    assert!(dir.path().join("store/run_manifest.toml").exists());

    let second = run(dir.path(), &["run"]);
    assert_eq!(second.status.code(), Some(0));
    let again = parse_summary(&stdout(&second));
    for (stage, (_, counts)) in &again {
        assert_eq!(counts["new_work"], 0, "{stage} redid work");
    }
    assert_eq!(again["group"].1["groups"], want.groups);

    let sample = run(dir.path(), &["eval", "sample", "--n", "10", "--seed", "7"]);
    assert_eq!(sample.status.code(), Some(0));
    let ids: Vec<String> = stdout(&sample).lines().map(str::to_string).collect();
    assert_eq!(ids.len(), 10);
    assert_eq!(stdout(&run(dir.path(), &["eval", "sample", "--n", "10", "--seed", "7"])), stdout(&sample));

    let similar = run(dir.path(), &["similar", "--id", &ids[0], "--top", "3"]);
    assert_eq!(similar.status.code(), Some(0), "{}", stderr(&similar));
    let lines: Vec<String> = stdout(&similar).lines().map(str::to_string).collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].contains("lexical") && lines[0].contains("semantic") && lines[0].contains("thematic"));
    assert!(lines[1..].iter().all(|l| !l.contains(ids[0].as_str())));
}

#[test]
fn single_stage_commands_chain_through_explicit_stores() {
    let dir = sample_copy();
    let d = dir.path();
    let steps: [&[&str]; 5] = [
        &["ingest", "--manifest", "manifest.toml", "--out", "s/books.jsonl"],
        &[
            "segment",
            "--in",
            "s/books.jsonl",
            "--backend",
            "rule",
            "--window-units",
            "10",
            "--overlap-units",
            "2",
            "--out",
            "s/seg.jsonl",
        ],
        &[
            "align",
            "--narrations",
            "s/seg.jsonl",
            "--books",
            "s/books.jsonl",
            "--min-fidelity",
            "0.8",
            "--out",
            "s/aligned.jsonl",
        ],
        &[
            "enrich",
            "--in",
            "s/aligned.jsonl",
            "--layers",
            "translate,tags",
            "--languages",
            "en,fa",
            "--client",
            "mock",
            "--out",
            "s/bundles.jsonl",
        ],
        &["group", "--in", "s/aligned.jsonl", "--threshold", "0.9", "--out", "s/grouped.jsonl"],
    ];
    for args in steps {
        let o = run(d, args);
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", stderr(&o));
        let s = parse_summary(&stdout(&o));
        assert_eq!(s.len(), 1);
        assert_eq!(s[args[0]].0, "completed");
    }
    let want = expected_counts();
    let enrich = parse_summary(&stdout(&run(
        d,
        &[
            "enrich",
            "--in",
            "s/aligned.jsonl",
            "--layers",
            "translate,tags",
            "--languages",
            "en,fa",
            "--out",
            "s/bundles.jsonl",
        ],
    )));
    assert_eq!(enrich["enrich"].1["new_work"], 0);
    assert_eq!(enrich["enrich"].1["bundles"], want.narrations);
    assert!(!d.join("store").exists(), "explicit stores must be used instead of the configured ones");
}

#[test]
fn exit_codes_by_failure_class() {
    let dir = sample_copy();
    let d = dir.path();

    let usage = run(d, &["frobnicate"]);
    assert_eq!(usage.status.code(), Some(2));
    assert_eq!(run(d, &["value"]).status.code(), Some(2));

    let missing_config = run(d, &["--config", "absent.toml", "run"]);
    assert_eq!(missing_config.status.code(), Some(3));
    std::fs::write(d.join("bad.toml"), "seed = 1\nwindow = 3\n").unwrap();
    let unknown_key = run(d, &["--config", "bad.toml", "run"]);
    assert_eq!(unknown_key.status.code(), Some(3));
    assert!(stderr(&unknown_key).contains("window"), "{}", stderr(&unknown_key));
    let bad_value = run(d, &["segment", "--window-units", "4", "--overlap-units", "4"]);
    assert_eq!(bad_value.status.code(), Some(3));

    assert_eq!(run(d, &["value", "--tasks", "absent.csv"]).status.code(), Some(4));
    assert_eq!(run(d, &["eval", "report", "--in", "absent.jsonl"]).status.code(), Some(4));

    let stage = run(d, &["align"]);
    assert_eq!(stage.status.code(), Some(5));
    assert!(stderr(&stage).contains("align stage failed"), "{}", stderr(&stage));
    let partial = run(d, &["--config", "pipeline.toml", "run"]);
    assert_eq!(partial.status.code(), Some(0));
    std::fs::remove_file(d.join("books/b1.txt")).unwrap();
    std::fs::remove_dir_all(d.join("store")).unwrap();
    let halted = run(d, &["run"]);
    assert_eq!(halted.status.code(), Some(5));
    let summary = parse_summary(&stdout(&halted));
    assert_eq!(summary["ingest"].0, "failed");
    assert_eq!(summary["group"].0, "not_run");
    assert!(stdout(&halted).trim_end().ends_with("run: partial"));

    std::fs::write(d.join("tasks.csv"), "task,h_tot,accuracy\nA,100,40%\n").unwrap();
    assert_eq!(run(d, &["value", "--tasks", "tasks.csv", "--q0", "0.5"]).status.code(), Some(6));
    assert_eq!(run(d, &["value", "--tasks", "tasks.csv", "--epsilon", "2"]).status.code(), Some(6));
}

#[test]
fn sample_larger_than_corpus_is_validation_error() {
    let dir = sample_copy();
    assert_eq!(run(dir.path(), &["run"]).status.code(), Some(0));
    let o = run(dir.path(), &["eval", "sample", "--n", "100000"]);
    assert_eq!(o.status.code(), Some(6));
    assert_eq!(run(dir.path(), &["similar", "--id", "no-such-id"]).status.code(), Some(6));
}

#[test]
fn value_prints_rounded_ratio_valuations() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tasks.csv"), "task,h_tot,accuracy\nA,1000,90%\nB,2000,99%\nC,,MACHINE\n").unwrap();
    let o = run(dir.path(), &["value", "--tasks", "tasks.csv", "--epsilon", "1e-3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let oracle = |a: f64, h: f64| {
        let ratio = ((1.0 / (1.0 - a)).ln() / 1000f64.ln() * 1000.0).round() / 1000.0;
        (h * ratio).round() as u64
    };
    let (a, b) = (oracle(0.90, 1000.0), oracle(0.99, 2000.0));
    assert_eq!((a, b), (333, 1334));
    let line = |name: &str| text.lines().find(|l| l.starts_with(name)).unwrap().to_string();
    assert!(line("A ").trim_end().ends_with(&a.to_string()));
    assert!(line("B ").trim_end().ends_with("1,334"));
    assert!(line("C ").contains("machine"));
    assert!(line("Grand total").trim_end().ends_with("1,667"));
}

#[test]
fn eval_report_formats_and_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let body = |id: &str, score: f64| {
        format!(
            "{{\"narration_id\":\"{id}\",\"evaluator_id\":\"e1\",\"aspect_scores\":{{\"summarization\":{score}}},\"error_counts\":{{\"translation\":{{\"error_units\":1,\"total_units\":4}}}}}}"
        )
    };
    let write = |name: &str, recs: &[(&str, f64)]| {
        let store = hadith_corpus::store::RecordStore::open(d.join(name)).unwrap();
        for (id, s) in recs {
            let r: hadith_corpus::evaluate::EvaluationRecord = serde_json::from_str(&body(id, *s)).unwrap();
            store.put(&hadith_corpus::store::Record::Evaluation(r)).unwrap();
        }
    };
    write("a.jsonl", &[("n1", 8.0), ("n2", 9.0)]);
    write("b.jsonl", &[("n1", 6.0)]);

    let text = run(d, &["eval", "report", "--in", "a.jsonl"]);
    assert_eq!(text.status.code(), Some(0), "{}", stderr(&text));
    assert!(stdout(&text).contains("2 narrations"));
    assert!(stdout(&text).contains("8.50"));

    let csv = run(d, &["eval", "report", "--in", "a.jsonl", "--compare", "b.jsonl", "--format", "csv"]);
    assert_eq!(csv.status.code(), Some(0), "{}", stderr(&csv));
    let out = stdout(&csv);
    assert!(out.contains("8.50") && out.contains("6.00"), "{out}");
    assert_eq!(run(d, &["eval", "report", "--in", "a.jsonl", "--format", "xml"]).status.code(), Some(2));
}
