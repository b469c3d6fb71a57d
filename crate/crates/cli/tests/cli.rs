use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use nelaudit_core::{Batch, EstimateReport, Judgment, JudgmentsFile, Verdict};

fn nelaudit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nelaudit"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    /// Synthetic corpus, its scheme, and the ingested bundle.
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let f = Self { _dir: dir, root };
        ok(&nelaudit(&[
            "synth",
            "--stratum",
            "Alpha:120:50",
            "--stratum",
            "Beta:80:30",
            "--seed",
            "3",
            "--out",
            p(&f.path("corpus.jsonl")),
            "--scheme-out",
            p(&f.path("scheme.json")),
        ]));
        ok(&nelaudit(&[
            "ingest",
            "--corpus",
            p(&f.path("corpus.jsonl")),
            "--scheme",
            p(&f.path("scheme.json")),
            "--out",
            p(&f.path("bundle.json")),
        ]));
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn batch(&self, name: &str, extra: &[&str]) -> Batch {
        let out = self.path(name);
        let bundle = self.path("bundle.json");
        let mut args = vec!["batch", "--corpus", p(&bundle), "--out", p(&out)];
        args.extend_from_slice(extra);
        ok(&nelaudit(&args));
        Batch::read(&out).unwrap()
    }
}

fn judgments_for(batch: &Batch, upto: usize) -> JudgmentsFile {
    JudgmentsFile {
        session_id: "offline".into(),
        corpus_hash: batch.header.corpus_hash.clone(),
        judgments: batch.entries[..upto]
            .iter()
            .map(|e| Judgment {
                triple_id: e.record.triple_id.clone(),
                verdict: if e.seq % 4 == 3 {
                    Verdict::WrongConcept
                } else {
                    Verdict::Correct
                },
                elapsed_seconds: if e.seq > 0 && batch.entries[e.seq - 1].unit == e.unit {
                    10.0
                } else {
                    20.0
                },
                annotator_id: "a".into(),
                submitted_at: "2026-01-01T00:00:00Z".parse().unwrap(),
            })
            .collect(),
    }
}

#[test]
fn ingest_prints_stratum_table_and_json() {
    let f = Fixture::new();
    let out = ok(&nelaudit(&[
        "ingest",
        "--corpus",
        p(&f.path("corpus.jsonl")),
        "--scheme",
        p(&f.path("scheme.json")),
        "--out",
        p(&f.path("again.json")),
    ]));
    let header = out.lines().next().unwrap();
    for col in ["Stratum", "Triples", "Clusters", "Weight"] {
        assert!(header.contains(col), "{out}");
    }
    assert!(
        out.lines()
            .any(|l| l.starts_with("Alpha") && l.contains("120") && l.contains("0.6000")),
        "{out}"
    );
    assert!(
        out.lines()
            .any(|l| l.starts_with("Total") && l.contains("200") && l.contains("80")),
        "{out}"
    );

    let json: serde_json::Value = serde_json::from_str(&ok(&nelaudit(&[
        "--json",
        "ingest",
        "--corpus",
        p(&f.path("corpus.jsonl")),
        "--scheme",
        p(&f.path("scheme.json")),
        "--out",
        p(&f.path("again.json")),
    ])))
    .unwrap();
    assert_eq!(json["total_triples"], 200);
    assert_eq!(json["strata"][1]["clusters"], 30);
}

#[test]
fn ingest_errors() {
    let f = Fixture::new();
    fs::write(f.path("empty.jsonl"), "").unwrap();
    let out = nelaudit(&[
        "ingest",
        "--corpus",
        p(&f.path("empty.jsonl")),
        "--out",
        p(&f.path("x.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty corpus"));

    // The default scheme knows none of the synthetic labels.
    let out = nelaudit(&[
        "ingest",
        "--corpus",
        p(&f.path("corpus.jsonl")),
        "--out",
        p(&f.path("x.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 1") && err.contains("Alpha"), "{err}");

    let out = nelaudit(&[
        "ingest",
        "--corpus",
        p(&f.path("missing.jsonl")),
        "--out",
        p(&f.path("x.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(nelaudit(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn batch_is_deterministic_and_prints_seed() {
    let f = Fixture::new();
    let a = f.batch("a.jsonl", &["--epsilon", "0.1", "--seed", "7"]);
    let b = f.batch("b.jsonl", &["--epsilon", "0.1", "--seed", "7"]);
    assert_eq!(
        fs::read(f.path("a.jsonl")).unwrap(),
        fs::read(f.path("b.jsonl")).unwrap()
    );
    assert_eq!(a.header.seed, 7);
    assert_eq!(a, b);
    let out = ok(&nelaudit(&[
        "batch",
        "--corpus",
        p(&f.path("bundle.json")),
        "--design",
        "srs",
        "--epsilon",
        "0.2",
        "--out",
        p(&f.path("srs.jsonl")),
    ]));
    assert!(out.starts_with("seed 42 | design srs"), "{out}");
    let out = nelaudit(&[
        "batch",
        "--corpus",
        p(&f.path("bundle.json")),
        "--epsilon",
        "0.7",
        "--out",
        p(&f.path("x")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn estimate_reports_tables_and_errors() {
    let f = Fixture::new();
    let batch = f.batch("batch.jsonl", &["--epsilon", "0.1"]);
    let units = batch.units();
    // Stop one triple into the last multi-triple unit.
    let last_multi = units.iter().rev().find(|u| u.range.len() > 1).unwrap();
    let file = judgments_for(&batch, last_multi.range.start + 1);
    fs::write(f.path("j.json"), file.to_json_pretty()).unwrap();
    let (batch_path, judgments_path) = (f.path("batch.jsonl"), f.path("j.json"));
    let args = ["estimate", "--batch", p(&batch_path), "--judgments", p(&judgments_path)];
    let out = ok(&nelaudit(&[&args[..], &["--per-stratum"]].concat()));
    assert!(out.contains("Accuracy") && out.contains("95% CI"), "{out}");
    assert!(out.lines().any(|l| l.starts_with("Alpha")), "{out}");
    assert!(out.lines().any(|l| l.starts_with("Overall (STWCS)")), "{out}");
    assert!(out.contains("excluded incomplete clusters 1"), "{out}");

    let report: EstimateReport = serde_json::from_str(&ok(&nelaudit(&[&["--json"], &args[..]].concat()))).unwrap();
    assert_eq!(report.n_units_incomplete, 1);
    assert_eq!(
        report.n_clusters_judged,
        units.iter().filter(|u| u.range.end <= last_multi.range.start).count()
    );

    let mut bad = file.clone();
    bad.judgments[0].triple_id = "zz-ghost".into();
    bad.judgments[1].triple_id = "aa-ghost".into();
    fs::write(f.path("bad.json"), bad.to_json_pretty()).unwrap();
    let out = nelaudit(&[
        "estimate",
        "--batch",
        p(&f.path("batch.jsonl")),
        "--judgments",
        p(&f.path("bad.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("aa-ghost, zz-ghost"));
}

#[test]
fn simulate_srs_derives_or_takes_timings() {
    let f = Fixture::new();
    let batch = f.batch("batch.jsonl", &["--epsilon", "0.1"]);
    fs::write(f.path("j.json"), judgments_for(&batch, batch.len()).to_json_pretty()).unwrap();
    let (batch_path, judgments_path, csv_path) = (f.path("batch.jsonl"), f.path("j.json"), f.path("perms.csv"));
    let base = [
        "simulate-srs",
        "--batch",
        p(&batch_path),
        "--judgments",
        p(&judgments_path),
        "--perms",
        "200",
        "--boot",
        "500",
        "--seed",
        "5",
    ];
    let out = ok(&nelaudit(&[&base[..], &["--csv", p(&csv_path)]].concat()));
    assert!(out.starts_with("seed 5 | permutations 200 | bootstrap 500"), "{out}");
    assert!(out.contains("derived t_base 10.00 s, delta 10.00 s"), "{out}");
    let csv = fs::read_to_string(f.path("perms.csv")).unwrap();
    assert_eq!(csv.lines().count(), 201);

    let json: serde_json::Value = serde_json::from_str(&ok(&nelaudit(
        &[&["--json"], &base[..], &["--t-base", "12.97", "--delta", "11.59"]].concat(),
    )))
    .unwrap();
    assert_eq!(json["report"]["t_base_s"], 12.97);
    assert!(json["derived"].is_null());
    let again: serde_json::Value = serde_json::from_str(&ok(&nelaudit(
        &[&["--json"], &base[..], &["--t-base", "12.97", "--delta", "11.59"]].concat(),
    )))
    .unwrap();
    assert_eq!(json, again);
    let out = nelaudit(&[&base[..], &["--t-base", "3"]].concat());
    assert_eq!(out.status.code(), Some(1));
}

struct Serve(Child);

impl Drop for Serve {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn free_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port()
}

#[test]
fn serve_and_session_commands() {
    let f = Fixture::new();
    f.batch("batch.jsonl", &["--epsilon", "0.1"]);
    let port = free_port().to_string();
    let server = format!("http://127.0.0.1:{port}");
    let _serve = Serve(
        Command::new(env!("CARGO_BIN_EXE_nelaudit"))
            .args(["serve", "--corpus", p(&f.path("bundle.json")), "--port", &port])
            .env("NELAUDIT_DATA_DIR", f.path("data"))
            .stderr(Stdio::null())
            .spawn()
            .unwrap(),
    );
    let session = |args: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_nelaudit"))
            .arg("--json")
            .arg("session")
            .args(args)
            .env("NELAUDIT_SERVER", &server)
            .output()
            .unwrap()
    };
    let deadline = Instant::now() + Duration::from_secs(20);
    while !session(&["list"]).status.success() {
        assert!(Instant::now() < deadline, "service did not start");
        std::thread::sleep(Duration::from_millis(100));
    }
    let created: serde_json::Value =
        serde_json::from_str(&ok(&session(&["create", "--batch", p(&f.path("batch.jsonl"))]))).unwrap();
    let id = created["session_id"].as_str().unwrap().to_string();
    let status: serde_json::Value = serde_json::from_str(&ok(&session(&["status", &id]))).unwrap();
    assert_eq!(status["progress"]["judged"], 0);
    let report: EstimateReport = serde_json::from_str(&ok(&session(&["estimate", &id]))).unwrap();
    assert!(report.moe.is_none());
    ok(&session(&["export", &id, "--out", p(&f.path("export.json"))]));
    let export = JudgmentsFile::read(&f.path("export.json")).unwrap();
    assert_eq!(export.session_id, id);
    assert!(export.judgments.is_empty());

    let out = session(&["status", "missing"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("UnknownSession"));

    // A second server on the same port cannot bind.
    let out = Command::new(env!("CARGO_BIN_EXE_nelaudit"))
        .args(["serve", "--corpus", p(&f.path("bundle.json")), "--port", &port])
        .env("NELAUDIT_DATA_DIR", f.path("data2"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
