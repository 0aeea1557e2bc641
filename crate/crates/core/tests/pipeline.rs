mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::time::Duration;

use serde::Deserialize;

use common::{completion, error_body, fixture, serve, user_message, TOKEN};
use shg::corpus::load_corpus;
use shg::gateway::{Credentials, Gateway};
use shg::runner::{
    execute, execute_tasks, extract_score, latest_records, read_records, resume, score_table,
    Campaign, JsonlSink, RecordSink, RunRecord, RunStatus, RunnerError, ScoreSource,
};

fn gateway() -> Gateway {
    Gateway::new(Credentials::Static(TOKEN.into()))
}

#[tokio::test]
async fn campaign_resume_and_sink() {
    let mock = serve(Duration::ZERO, |_, _| (200, completion("Reasoning.\nFINAL SCORE: 1.0"))).await;
    let corpus = load_corpus(fixture("manifest.json")).unwrap();
    let campaign = Campaign::new(corpus, vec![mock.config("a"), mock.config("b")], 5, 11).unwrap();
    assert_eq!(campaign.tasks().len(), 120);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("runs.jsonl");
    let sink = JsonlSink::open(&path)
        .unwrap()
        .with_archive(dir.path().join("runs.raw.jsonl"))
        .unwrap();
    let gw = gateway();
    let records = execute(&campaign, &gw, &sink, 8).await.unwrap();
    assert_eq!(records.len(), 120);
    assert!(records.iter().all(|r| r.status == RunStatus::Ok && r.score == Some(1.0)));
    assert!(records.iter().all(|r| r.rationale == "Reasoning."));
    assert_eq!(mock.hits(), 120);

    let on_disk = read_records(&path).unwrap();
    assert_eq!(latest_records(on_disk.clone()).unwrap(), records);
    let archive = std::fs::read_to_string(dir.path().join("runs.raw.jsonl")).unwrap();
    assert_eq!(archive.lines().count(), 120);

    // resuming a complete campaign sends nothing
    let remaining = resume(&campaign, &on_disk).unwrap();
    assert!(remaining.is_empty());
    let again = execute_tasks(&campaign, remaining, &gw, &sink, 8).await.unwrap();
    assert!(again.is_empty());
    assert_eq!(mock.hits(), 120);
    assert_eq!(read_records(&path).unwrap().len(), 120);
}

#[tokio::test]
async fn one_failed_request_then_resume() {
    let corpus = load_corpus(fixture("manifest.json")).unwrap();
    let victim = corpus.target("uk-famous").unwrap().text.trim_end().to_string();
    let failed_once = AtomicBool::new(false);
    let mock = serve(Duration::ZERO, move |body, _| {
        let hit = body["model"] == "org/b" && user_message(body).ends_with(&victim);
        if hit && !failed_once.swap(true, Ordering::SeqCst) {
            (400, error_body("malformed request"))
        } else {
            (200, completion("FINAL SCORE: 0.4"))
        }
    })
    .await;
    let campaign = Campaign::new(corpus, vec![mock.config("a"), mock.config("b")], 5, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("runs.jsonl");
    let sink = JsonlSink::open(&path).unwrap();
    let gw = gateway();

    let first = execute(&campaign, &gw, &sink, 4).await.unwrap();
    let failed: Vec<&RunRecord> = first.iter().filter(|r| r.status == RunStatus::RequestFailed).collect();
    assert_eq!(failed.len(), 1);
    assert_eq!(first.len() - failed.len(), 119);
    assert_eq!(failed[0].speech_id, "uk-famous");
    assert!(failed[0].score.is_none());
    assert!(failed[0].rationale.starts_with("http_error"));

    let remaining = resume(&campaign, &read_records(&path).unwrap()).unwrap();
    assert_eq!(remaining, vec![failed[0].key()]);
    execute_tasks(&campaign, remaining, &gw, &sink, 4).await.unwrap();

    let log = read_records(&path).unwrap();
    assert_eq!(log.len(), 121);
    let latest = latest_records(log).unwrap();
    assert_eq!(latest.len(), 120);
    assert!(latest.iter().all(|r| r.status == RunStatus::Ok));
}

#[tokio::test]
async fn extraction_failure_keeps_raw_text() {
    let mock = serve(Duration::ZERO, |_, _| (200, completion("I cannot grade this."))).await;
    let corpus = load_corpus(fixture("manifest.json")).unwrap();
    let campaign = Campaign::new(corpus, vec![mock.config("a")], 1, 0).unwrap();
    let sink = shg::runner::MemorySink::default();
    let recs = execute(&campaign, &gateway(), &sink, 4).await.unwrap();
    assert_eq!(recs.len(), 12);
    for r in &recs {
        assert_eq!(r.status, RunStatus::ExtractionFailed);
        assert_eq!(r.raw_response, "I cannot grade this.");
        assert!(r.score.is_none());
    }
    assert_eq!(sink.records.lock().unwrap().len(), 12);
}

#[tokio::test]
async fn completion_order_does_not_change_content() {
    // score depends only on the speech, so any dispatch order yields the same table
    let corpus = load_corpus(fixture("manifest.json")).unwrap();
    let lookup: Vec<(String, String)> = corpus
        .targets
        .iter()
        .enumerate()
        .map(|(i, t)| (t.text.trim_end().to_string(), format!("FINAL SCORE: {:.1}", (i % 5) as f64 * 0.4)))
        .collect();
    let mock = serve(Duration::from_millis(2), move |body, _| {
        let user = user_message(body);
        let reply = lookup.iter().find(|(t, _)| user.ends_with(t.as_str())).map(|(_, s)| s.clone());
        (200, completion(&reply.unwrap_or_default()))
    })
    .await;
    let mut tables = Vec::new();
    for seed in [1, 2] {
        let campaign = Campaign::new(corpus.clone(), vec![mock.config("a"), mock.config("b")], 2, seed).unwrap();
        let recs = execute(&campaign, &gateway(), &shg::runner::MemorySink::default(), 6).await.unwrap();
        let scores: BTreeMap<_, _> = recs.iter().map(|r| (r.key(), r.score)).collect();
        tables.push(scores);
    }
    assert_eq!(tables[0], tables[1]);
    assert_eq!(tables[0].len(), 48);
}

struct BrokenSink {
    writes: AtomicUsize,
}

impl RecordSink for BrokenSink {
    fn append(&self, _: &RunRecord) -> Result<(), RunnerError> {
        if self.writes.fetch_add(1, Ordering::SeqCst) >= 3 {
            Err(std::io::Error::other("disk full").into())
        } else {
            Ok(())
        }
    }
}

#[tokio::test]
async fn sink_failure_aborts() {
    let mock = serve(Duration::ZERO, |_, _| (200, completion("FINAL SCORE: 1.0"))).await;
    let corpus = load_corpus(fixture("manifest.json")).unwrap();
    let campaign = Campaign::new(corpus, vec![mock.config("a")], 5, 0).unwrap();
    let sink = BrokenSink {
        writes: AtomicUsize::new(0),
    };
    let err = execute(&campaign, &gateway(), &sink, 2).await.unwrap_err();
    assert!(matches!(err, RunnerError::Io(_)));
    assert!(mock.hits() < 60);
}

#[test]
fn truncated_tail_is_skipped_but_corrupt_middle_is_not() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("runs.jsonl");
    let good = std::fs::read_to_string(fixture("runs.jsonl")).unwrap();
    let first_two: String = good.lines().take(2).map(|l| format!("{l}\n")).collect();

    let mut f = std::fs::File::create(&path).unwrap();
    write!(f, "{first_two}{{\"model_label\": \"gpt").unwrap();
    drop(f);
    assert_eq!(read_records(&path).unwrap().len(), 2);

    std::fs::write(&path, format!("{{oops}}\n{first_two}")).unwrap();
    assert!(matches!(read_records(&path), Err(RunnerError::Parse { line: 1, .. })));

    assert!(read_records(dir.path().join("absent.jsonl")).unwrap().is_empty());
}

#[test]
fn shipped_records_tables() {
    let records = read_records(fixture("runs.jsonl")).unwrap();
    assert_eq!(records.len(), 600);
    let tables = score_table(&records);
    assert_eq!(tables.len(), 10);

    let gpt5 = &tables["gpt5-reasoning-high"];
    let i = gpt5.matrix.items.iter().position(|s| s == "turkey-international").unwrap();
    assert_eq!(
        gpt5.matrix.cells[i],
        vec![Some(0.2), Some(0.2), Some(0.1), Some(0.2), Some(0.2)]
    );
    assert!((gpt5.means[i].unwrap() - 0.18).abs() < 1e-12);

    let qwen = &tables["qwen3-235b-reasoning"];
    let i = qwen.matrix.items.iter().position(|s| s == "turkey-ribbon").unwrap();
    assert_eq!(qwen.matrix.cells[i], vec![Some(1.6); 5]);
    assert!((qwen.means[i].unwrap() - 1.6).abs() < 1e-12);
    assert!(tables.values().all(|t| t.missing.is_empty() && t.matrix.n_items() == 12));
}

#[derive(Deserialize)]
struct Case {
    response: String,
    expected: f64,
    source: ScoreSource,
}

#[test]
fn extraction_corpus() {
    let raw = std::fs::read_to_string(fixture("extraction_corpus.json")).unwrap();
    let cases: Vec<Case> = serde_json::from_str(&raw).unwrap();
    assert_eq!(cases.len(), 20);
    for c in cases {
        let g = extract_score(&c.response).unwrap_or_else(|e| panic!("{:?}: {e}", c.response));
        assert_eq!(g.value, c.expected, "{:?}", c.response);
        assert_eq!(g.source, c.source, "{:?}", c.response);
    }
}
