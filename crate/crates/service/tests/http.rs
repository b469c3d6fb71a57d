use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use futures::StreamExt;
use nelaudit_client::{Client, ClientError};
use nelaudit_core::api::SubmitJudgment;
use nelaudit_core::synthetic::{synthetic_corpus, StratumShape};
use nelaudit_core::{generate_static_batch, Batch, Corpus, Labeler, SamplingDesign, Verdict};
use nelaudit_service::AppState;
use tokio::net::TcpListener;
use tokio::sync::oneshot;

fn corpus() -> Corpus {
    synthetic_corpus(&[
        StratumShape::new("A", vec![3, 1, 2, 4, 1, 2]),
        StratumShape::new("B", vec![2, 2, 1, 5, 3]),
    ])
    .unwrap()
}

fn batch(corpus: &Corpus) -> Batch {
    // Epsilon is tiny, so the batch runs until the corpus is exhausted.
    generate_static_batch(
        corpus,
        &SamplingDesign::stwcs(5).unwrap(),
        0.001,
        0.05,
        42,
        Labeler::Alternating,
    )
    .unwrap()
}

struct Server {
    client: Client,
    stop: Option<oneshot::Sender<()>>,
    task: tokio::task::JoinHandle<()>,
}

impl Server {
    async fn start(dir: &Path, corpus_hash: &str) -> Self {
        let state = AppState::open(dir, corpus_hash).unwrap();
        let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = oneshot::channel::<()>();
        let task = tokio::spawn(async move {
            nelaudit_service::serve(listener, state, async {
                let _ = rx.await;
            })
            .await
            .unwrap();
        });
        Self {
            client: Client::new(format!("http://{addr}")),
            stop: Some(tx),
            task,
        }
    }

    async fn stop(mut self) {
        let _ = self.stop.take().unwrap().send(());
        self.task.await.unwrap();
    }
}

fn judge(triple_id: &str, verdict: Verdict) -> SubmitJudgment {
    SubmitJudgment {
        triple_id: triple_id.to_string(),
        verdict,
        elapsed_seconds: 12.5,
        annotator_id: "ann-1".into(),
    }
}

fn verdict_for(seq: usize) -> Verdict {
    if seq % 3 == 2 {
        Verdict::WrongConcept
    } else {
        Verdict::Correct
    }
}

fn code(err: ClientError) -> String {
    err.error_code().unwrap_or("none").to_string()
}

#[tokio::test]
async fn create_and_fetch() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus();
    let b = batch(&c);
    let srv = Server::start(dir.path(), c.hash()).await;
    let s = srv.client.create_session(b.to_jsonl()).await.unwrap();
    assert_eq!(s.progress.judged, 0);
    assert_eq!(s.progress.total, b.len());
    let t = srv.client.triple(&s.session_id, 0).await.unwrap();
    assert_eq!(t.entry, b.entries[0]);
    assert_eq!((t.progress.judged, t.progress.total), (0, b.len()));
    assert!(t.judgment.is_none());
    let err = srv.client.triple(&s.session_id, b.len()).await.unwrap_err();
    assert_eq!(code(err), "IndexOutOfRange");
    let again = srv.client.create_session(b.to_jsonl()).await.unwrap();
    assert_ne!(again.session_id, s.session_id);
    assert_eq!(srv.client.list_sessions().await.unwrap().len(), 2);
    assert_eq!(code(srv.client.estimate("nope").await.unwrap_err()), "UnknownSession");
    srv.stop().await;
}

#[tokio::test]
async fn rejects_foreign_or_malformed_batches() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus();
    let srv = Server::start(dir.path(), "not-this-corpus").await;
    let err = srv.client.create_session(batch(&c).to_jsonl()).await.unwrap_err();
    assert!(matches!(&err, ClientError::Api { status, .. } if status.as_u16() == 409));
    assert_eq!(code(err), "BatchMismatch");
    assert_eq!(
        code(srv.client.create_session("{oops".into()).await.unwrap_err()),
        "ParseError"
    );
    srv.stop().await;
}

#[tokio::test]
async fn submissions_progress_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus();
    let b = batch(&c);
    let srv = Server::start(dir.path(), c.hash()).await;
    let id = srv.client.create_session(b.to_jsonl()).await.unwrap().session_id;
    let first = &b.entries[0].record.triple_id;
    let r = srv.client.submit(&id, &judge(first, Verdict::Correct)).await.unwrap();
    assert_eq!(r.progress.judged, 1);
    assert_eq!(r.progress.cursor, 1);
    assert!(!r.converged);
    let r = srv
        .client
        .submit(&id, &judge(first, Verdict::OverlyGeneric))
        .await
        .unwrap();
    assert_eq!(r.progress.judged, 1);
    let t = srv.client.triple(&id, 0).await.unwrap();
    assert_eq!(t.judgment.unwrap().verdict, Verdict::OverlyGeneric);

    let err = srv
        .client
        .submit(&id, &judge("ghost", Verdict::Correct))
        .await
        .unwrap_err();
    assert_eq!(code(err), "UnknownTriple");
    for bad in [-1.0, 86_400.5] {
        let mut j = judge(first, Verdict::Correct);
        j.elapsed_seconds = bad;
        assert_eq!(code(srv.client.submit(&id, &j).await.unwrap_err()), "InvalidJudgment");
    }
    srv.stop().await;
}

#[tokio::test]
async fn estimate_moves_only_at_unit_completion_and_is_pure() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus();
    let b = batch(&c);
    let srv = Server::start(dir.path(), c.hash()).await;
    let id = srv.client.create_session(b.to_jsonl()).await.unwrap().session_id;
    let fresh = srv.client.estimate(&id).await.unwrap();
    assert_eq!(fresh.n_clusters_judged, 0);
    assert!(fresh.moe.is_none());
    assert!(!fresh.converged);

    let mut before = srv.client.estimate(&id).await.unwrap();
    let mut flips = 0;
    for unit in b.units() {
        for (k, pos) in unit.range.clone().enumerate() {
            let e = &b.entries[pos];
            let r = srv
                .client
                .submit(&id, &judge(&e.record.triple_id, verdict_for(e.seq)))
                .await
                .unwrap();
            let last = k + 1 == unit.range.len();
            assert_eq!(r.cluster_complete, last);
            let now = srv.client.estimate(&id).await.unwrap();
            assert_eq!(now, r.estimate);
            if last {
                assert_eq!(now.n_clusters_judged, before.n_clusters_judged + 1);
            } else {
                assert_eq!(now.mu_ss, before.mu_ss);
                assert_eq!(now.n_clusters_judged, before.n_clusters_judged);
                assert_eq!(now.n_units_incomplete, 1);
            }
            flips += r.converged_changed as usize;
            before = now;
        }
    }
    // Triples are judged correct 2 out of 3 times, so 0.001 is never reached.
    assert_eq!(flips, 0);
    let a = srv.client.estimate_raw(&id).await.unwrap();
    let b2 = srv.client.estimate_raw(&id).await.unwrap();
    assert_eq!(a, b2);
    srv.stop().await;
}

#[tokio::test]
async fn convergence_flips_once() {
    let dir = tempfile::tempdir().unwrap();
    let c = synthetic_corpus(&[StratumShape::new("A", vec![2; 40]), StratumShape::new("B", vec![1; 30])]).unwrap();
    let b = generate_static_batch(
        &c,
        &SamplingDesign::stwcs(5).unwrap(),
        0.2,
        0.05,
        9,
        Labeler::Alternating,
    )
    .unwrap();
    let srv = Server::start(dir.path(), c.hash()).await;
    let id = srv.client.create_session(b.to_jsonl()).await.unwrap().session_id;
    // Replaying the batch's own alternating labels converges on the last triple.
    let mut flips = Vec::new();
    for e in &b.entries {
        let verdict = if e.seq % 2 == 0 {
            Verdict::Correct
        } else {
            Verdict::WrongConcept
        };
        let r = srv
            .client
            .submit(&id, &judge(&e.record.triple_id, verdict))
            .await
            .unwrap();
        if r.converged_changed {
            flips.push((e.seq, r.converged));
        }
    }
    let report = srv.client.estimate(&id).await.unwrap();
    assert!(report.converged, "{report:?}");
    assert_eq!(flips, vec![(b.len() - 1, true)]);
    srv.stop().await;
}

#[tokio::test]
async fn export_import_round_trip_and_merge() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus();
    let b = batch(&c);
    let srv = Server::start(dir.path(), c.hash()).await;
    let id = srv.client.create_session(b.to_jsonl()).await.unwrap().session_id;
    for e in &b.entries[..6] {
        srv.client
            .submit(&id, &judge(&e.record.triple_id, verdict_for(e.seq)))
            .await
            .unwrap();
    }
    let export = srv.client.export(&id).await.unwrap();
    assert_eq!(export.judgments.len(), 6);

    // Resume in a fresh session.
    let other = srv.client.create_session(b.to_jsonl()).await.unwrap().session_id;
    let r = srv.client.import(&other, &export).await.unwrap();
    assert_eq!(r.added, 6);
    assert_eq!(r.progress.judged, 6);
    assert_eq!(srv.client.export(&other).await.unwrap().judgments, export.judgments);
    assert_eq!(
        srv.client.estimate(&other).await.unwrap(),
        srv.client.estimate(&id).await.unwrap()
    );
    let mid = srv.client.triple(&other, 3).await.unwrap();
    let orig = srv.client.triple(&id, 3).await.unwrap();
    assert_eq!((mid.entry, mid.judgment), (orig.entry, orig.judgment));
    // Re-importing the same file is a no-op.
    assert_eq!(srv.client.import(&other, &export).await.unwrap().added, 0);

    // A second annotator's work merges in with its annotator id.
    let third = srv.client.create_session(b.to_jsonl()).await.unwrap().session_id;
    for e in &b.entries[6..9] {
        let mut j = judge(&e.record.triple_id, Verdict::Correct);
        j.annotator_id = "ann-2".into();
        srv.client.submit(&third, &j).await.unwrap();
    }
    let theirs = srv.client.export(&third).await.unwrap();
    let r = srv.client.import(&other, &theirs).await.unwrap();
    assert_eq!((r.added, r.progress.judged), (3, 9));
    let merged = srv.client.export(&other).await.unwrap();
    let by_annotator = merged.judgments.iter().fold(HashMap::new(), |mut m, j| {
        *m.entry(j.annotator_id.clone()).or_insert(0) += 1;
        m
    });
    assert_eq!(by_annotator["ann-1"], 6);
    assert_eq!(by_annotator["ann-2"], 3);

    let mut wrong = export.clone();
    wrong.corpus_hash = "deadbeef".into();
    assert_eq!(
        code(srv.client.import(&other, &wrong).await.unwrap_err()),
        "HashMismatch"
    );

    // A session can also start from a batch plus an export.
    let seeded = srv
        .client
        .create_session_with(b.to_jsonl(), Some(export.to_json_pretty()))
        .await
        .unwrap();
    assert_eq!(seeded.progress.judged, 6);
    srv.stop().await;
}

#[tokio::test]
async fn judgments_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus();
    let b = batch(&c);
    let srv = Server::start(dir.path(), c.hash()).await;
    let id = srv.client.create_session(b.to_jsonl()).await.unwrap().session_id;
    for e in &b.entries[..4] {
        srv.client
            .submit(&id, &judge(&e.record.triple_id, verdict_for(e.seq)))
            .await
            .unwrap();
    }
    let before = srv.client.export(&id).await.unwrap();
    let estimate = srv.client.estimate_raw(&id).await.unwrap();
    srv.stop().await;

    // Simulate a crash during an unacknowledged append.
    let log = dir.path().join(&id).join("judgments.jsonl");
    let mut text = std::fs::read_to_string(&log).unwrap();
    text.push_str("{\"triple_id\":\"torn");
    std::fs::write(&log, text).unwrap();

    let srv = Server::start(dir.path(), c.hash()).await;
    assert_eq!(srv.client.export(&id).await.unwrap(), before);
    assert_eq!(srv.client.estimate_raw(&id).await.unwrap(), estimate);
    let s = srv.client.session(&id).await.unwrap();
    assert_eq!((s.progress.judged, s.progress.cursor), (4, 4));
    srv.stop().await;
}

#[tokio::test]
async fn event_stream_pushes_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus();
    let b = batch(&c);
    let srv = Server::start(dir.path(), c.hash()).await;
    let id = srv.client.create_session(b.to_jsonl()).await.unwrap().session_id;
    let resp = reqwest::get(format!("{}/sessions/{id}/events", srv.client.base_url()))
        .await
        .unwrap();
    assert!(resp.headers()["content-type"]
        .to_str()
        .unwrap()
        .starts_with("text/event-stream"));
    let mut body = resp.bytes_stream();
    let mut buf = String::new();
    let mut next_event = async || -> serde_json::Value {
        loop {
            if let Some(end) = buf.find("\n\n") {
                let frame: String = buf.drain(..end + 2).collect();
                if let Some(data) = frame.lines().find_map(|l| l.strip_prefix("data: ")) {
                    return serde_json::from_str(data).unwrap();
                }
                continue;
            }
            let chunk = tokio::time::timeout(Duration::from_secs(5), body.next())
                .await
                .unwrap()
                .unwrap()
                .unwrap();
            buf.push_str(std::str::from_utf8(&chunk).unwrap());
        }
    };
    let initial = next_event().await;
    assert_eq!(initial["type"], "estimate");
    assert_eq!(initial["report"]["n_clusters_judged"], 0);
    let unit = b.units()[0].range.clone();
    let mut last = None;
    for pos in unit {
        let e = &b.entries[pos];
        last = Some(
            srv.client
                .submit(&id, &judge(&e.record.triple_id, Verdict::Correct))
                .await
                .unwrap(),
        );
    }
    // Every change is pushed, so the unit's final judgment ends the run.
    let mut pushed = next_event().await;
    while pushed["report"]["n_clusters_judged"] == 0 {
        pushed = next_event().await;
    }
    assert_eq!(pushed["report"], serde_json::to_value(last.unwrap().estimate).unwrap());
    srv.stop().await;
}
