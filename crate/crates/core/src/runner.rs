//! Test-retest campaigns: planning, score extraction, the JSONL run sink,
//! resume and execution.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use futures::StreamExt;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::agreement::ScoreMatrix;
use crate::corpus::{Corpus, SCORE_MAX, SCORE_MIN};
use crate::gateway::{ChatBackend, ModelConfig, Usage};
use crate::prompting::{assemble_prompt, render_messages, MessageSequence, PromptError, SCORE_MARKER};

pub const DEFAULT_RUNS: u32 = 5;
pub const DEFAULT_GLOBAL_CAP: usize = 16;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("invalid campaign: {0}")]
    Campaign(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("run sink I/O: {0}")]
    Io(#[from] io::Error),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate run record for {0}")]
    DuplicateKey(TaskKey),
    #[error("invalid run record {key}: {reason}")]
    InvalidRecord { key: TaskKey, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TaskKey {
    pub model_label: String,
    pub speech_id: String,
    pub run_index: u32,
}

impl fmt::Display for TaskKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, run {})", self.model_label, self.speech_id, self.run_index)
    }
}

#[derive(Debug, Clone)]
pub struct Campaign {
    pub corpus: Corpus,
    pub models: Vec<ModelConfig>,
    pub runs_per_cell: u32,
    pub seed: u64,
}

impl Campaign {
    pub fn new(
        corpus: Corpus,
        models: Vec<ModelConfig>,
        runs_per_cell: u32,
        seed: u64,
    ) -> Result<Self, RunnerError> {
        check_plan(&corpus, &models, runs_per_cell)?;
        Ok(Self {
            corpus,
            models,
            runs_per_cell,
            seed,
        })
    }

    /// Every task key, ordered by model, speech, run.
    pub fn tasks(&self) -> Vec<TaskKey> {
        keys(&self.corpus, &self.models, self.runs_per_cell)
    }

    pub fn model(&self, label: &str) -> Option<&ModelConfig> {
        self.models.iter().find(|m| m.label == label)
    }
}

fn check_plan(corpus: &Corpus, models: &[ModelConfig], runs: u32) -> Result<(), RunnerError> {
    if models.is_empty() {
        return Err(RunnerError::Campaign("no models".into()));
    }
    if corpus.targets.is_empty() {
        return Err(RunnerError::Campaign("corpus has no target speeches".into()));
    }
    if runs < 1 {
        return Err(RunnerError::Campaign("runs per cell must be >= 1".into()));
    }
    let mut seen = BTreeSet::new();
    for m in models {
        if !seen.insert(m.label.as_str()) {
            return Err(RunnerError::Campaign(format!("duplicate model label '{}'", m.label)));
        }
    }
    Ok(())
}

fn keys(corpus: &Corpus, models: &[ModelConfig], runs: u32) -> Vec<TaskKey> {
    let mut out = Vec::with_capacity(models.len() * corpus.targets.len() * runs as usize);
    for m in models {
        for s in &corpus.targets {
            for r in 1..=runs {
                out.push(TaskKey {
                    model_label: m.label.clone(),
                    speech_id: s.id.clone(),
                    run_index: r,
                });
            }
        }
    }
    out
}

/// `|targets| x |models| x runs` uniquely keyed tasks.
pub fn plan_campaign(
    corpus: &Corpus,
    models: &[ModelConfig],
    runs: u32,
) -> Result<Vec<TaskKey>, RunnerError> {
    check_plan(corpus, models, runs)?;
    Ok(keys(corpus, models, runs))
}

// ---------------------------------------------------------------------------
// score extraction

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSource {
    TerminalMarker,
    FallbackScan,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradedScore {
    pub value: f64,
    pub source: ScoreSource,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtractionError {
    #[error("no parsable score")]
    NoScore,
    #[error("score {0} is outside [0, 2]")]
    OutOfRange(String),
}

/// A decimal literal found in text, kept as tenths after rounding.
#[derive(Debug, Clone, Copy)]
struct Number {
    tenths: u64,
    start: usize,
    end: usize,
}

impl Number {
    fn value(self) -> f64 {
        self.tenths as f64 / 10.0
    }

    fn in_range(self) -> bool {
        let v = self.value();
        (SCORE_MIN..=SCORE_MAX).contains(&v)
    }
}

/// Parses `digits[.digits]` or `.digits` at byte `at`, rounding half away
/// from zero to one decimal on the literal's digits, not on a binary float.
fn number_at(s: &str, at: usize) -> Option<Number> {
    let b = s.as_bytes();
    let mut i = at;
    let mut int: u64 = 0;
    let mut int_digits = 0;
    while i < b.len() && b[i].is_ascii_digit() {
        int = int.saturating_mul(10).saturating_add(u64::from(b[i] - b'0'));
        int_digits += 1;
        i += 1;
    }
    let mut frac = Vec::new();
    if i + 1 < b.len() && b[i] == b'.' && b[i + 1].is_ascii_digit() {
        i += 1;
        while i < b.len() && b[i].is_ascii_digit() {
            frac.push(b[i] - b'0');
            i += 1;
        }
    }
    if int_digits == 0 && frac.is_empty() {
        return None;
    }
    let first = u64::from(frac.first().copied().unwrap_or(0));
    let up = u64::from(frac.get(1).is_some_and(|d| *d >= 5));
    Some(Number {
        tenths: int.saturating_mul(10).saturating_add(first + up),
        start: at,
        end: i,
    })
}

fn all_numbers(s: &str) -> Vec<Number> {
    let b = s.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        let starts = b[i].is_ascii_digit()
            || (b[i] == b'.' && i + 1 < b.len() && b[i + 1].is_ascii_digit());
        if starts {
            if let Some(n) = number_at(s, i) {
                i = n.end;
                out.push(n);
                continue;
            }
        }
        i += 1;
    }
    out
}

fn char_before(s: &str, at: usize) -> Option<char> {
    s[..at].chars().next_back()
}

fn char_after(s: &str, at: usize) -> Option<char> {
    s[at..].chars().next()
}

// Standalone: not glued to letters, not a denominator ("1.5/2", "out of 2"),
// not negated, not a percentage, not part of a version or date.
fn standalone(s: &str, n: &Number) -> bool {
    let before = char_before(s, n.start);
    let after = char_after(s, n.end);
    if before.is_some_and(|c| c.is_alphanumeric() || matches!(c, '/' | '-' | '.' | '_')) {
        return false;
    }
    if after.is_some_and(|c| c.is_alphanumeric() || matches!(c, '%' | '_')) {
        return false;
    }
    if after == Some('.') && s[n.end + 1..].starts_with(|c: char| c.is_ascii_digit()) {
        return false;
    }
    let head = s[..n.start].trim_end().to_ascii_lowercase();
    !head.ends_with("out of")
}

fn marker_score(text: &str) -> Option<(Result<Number, ExtractionError>, usize)> {
    let lower = text.to_ascii_lowercase();
    let marker = SCORE_MARKER.to_ascii_lowercase();
    let mut found = None;
    for (pos, _) in lower.match_indices(&marker) {
        let rest = &text[pos + marker.len()..];
        let skip = rest.len() - rest.trim_start_matches([' ', '\t', '*', '_', '`']).len();
        let at = pos + marker.len() + skip;
        if let Some(n) = number_at(text, at) {
            let line_start = text[..pos].rfind('\n').map_or(0, |i| i + 1);
            let verdict = if n.in_range() {
                Ok(n)
            } else {
                Err(ExtractionError::OutOfRange(text[n.start..n.end].to_string()))
            };
            found = Some((verdict, line_start));
        }
    }
    found
}

/// Reads the grade from a model response.
///
/// A `FINAL SCORE: <number>` marker wins (the last one if repeated);
/// otherwise the last standalone decimal in [0, 2] is taken. Values are
/// rounded half away from zero to one decimal.
pub fn extract_score(text: &str) -> Result<GradedScore, ExtractionError> {
    if let Some((verdict, _)) = marker_score(text) {
        return verdict.map(|n| GradedScore {
            value: n.value(),
            source: ScoreSource::TerminalMarker,
        });
    }
    all_numbers(text)
        .into_iter()
        .rev()
        .find(|n| standalone(text, n) && n.in_range())
        .map(|n| GradedScore {
            value: n.value(),
            source: ScoreSource::FallbackScan,
        })
        .ok_or(ExtractionError::NoScore)
}

/// Response text without the score-marker line.
pub fn rationale(text: &str) -> String {
    match marker_score(text) {
        Some((_, line_start)) => {
            let line_end = text[line_start..]
                .find('\n')
                .map_or(text.len(), |i| line_start + i);
            format!("{}{}", &text[..line_start], &text[line_end..])
                .trim()
                .to_string()
        }
        None => text.trim().to_string(),
    }
}

// ---------------------------------------------------------------------------
// records

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    ExtractionFailed,
    RequestFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub model_label: String,
    pub speech_id: String,
    pub run_index: u32,
    pub timestamp: DateTime<Utc>,
    pub raw_response: String,
    pub score: Option<f64>,
    pub rationale: String,
    pub usage: Usage,
    pub status: RunStatus,
}

impl RunRecord {
    pub fn key(&self) -> TaskKey {
        TaskKey {
            model_label: self.model_label.clone(),
            speech_id: self.speech_id.clone(),
            run_index: self.run_index,
        }
    }

    /// Record for a completed request; extraction failures keep the raw text.
    pub fn from_response(key: &TaskKey, text: String, usage: Usage, at: DateTime<Utc>) -> Self {
        let (score, status, rationale) = match extract_score(&text) {
            Ok(g) => (Some(g.value), RunStatus::Ok, rationale(&text)),
            Err(e) => (None, RunStatus::ExtractionFailed, e.to_string()),
        };
        Self {
            model_label: key.model_label.clone(),
            speech_id: key.speech_id.clone(),
            run_index: key.run_index,
            timestamp: at,
            raw_response: text,
            score,
            rationale,
            usage,
            status,
        }
    }

    pub fn request_failed(key: &TaskKey, reason: String, at: DateTime<Utc>) -> Self {
        Self {
            model_label: key.model_label.clone(),
            speech_id: key.speech_id.clone(),
            run_index: key.run_index,
            timestamp: at,
            raw_response: String::new(),
            score: None,
            rationale: reason,
            usage: Usage::default(),
            status: RunStatus::RequestFailed,
        }
    }

    pub fn validate(&self) -> Result<(), RunnerError> {
        let bad = |reason: String| {
            Err(RunnerError::InvalidRecord {
                key: self.key(),
                reason,
            })
        };
        if self.run_index < 1 {
            return bad("run_index must be >= 1".into());
        }
        match (self.status, self.score) {
            (RunStatus::Ok, None) => bad("status ok without a score".into()),
            (RunStatus::Ok, Some(s)) => {
                let tenths = s * 10.0;
                if !(SCORE_MIN..=SCORE_MAX).contains(&s) || (tenths - tenths.round()).abs() > 1e-9 {
                    bad(format!("score {s} is not a one-decimal value in [0, 2]"))
                } else {
                    Ok(())
                }
            }
            (_, Some(_)) => bad("score present on a failed record".into()),
            (_, None) => Ok(()),
        }
    }
}

/// Collapses a record log to one record per key. A request failure is
/// superseded by any later record for its key; two non-failed records for
/// one key are an error.
pub fn latest_records(records: Vec<RunRecord>) -> Result<Vec<RunRecord>, RunnerError> {
    let mut by_key: BTreeMap<TaskKey, RunRecord> = BTreeMap::new();
    for r in records {
        let key = r.key();
        match by_key.get(&key) {
            Some(prev) if prev.status != RunStatus::RequestFailed => {
                if r.status != RunStatus::RequestFailed {
                    return Err(RunnerError::DuplicateKey(key));
                }
            }
            _ => {
                by_key.insert(key, r);
            }
        }
    }
    Ok(by_key.into_values().collect())
}

/// Keys still to run: absent from `existing` or only present as request
/// failures.
pub fn resume(campaign: &Campaign, existing: &[RunRecord]) -> Result<Vec<TaskKey>, RunnerError> {
    let latest = latest_records(existing.to_vec())?;
    let done: BTreeSet<TaskKey> = latest
        .iter()
        .filter(|r| r.status != RunStatus::RequestFailed)
        .map(RunRecord::key)
        .collect();
    Ok(campaign
        .tasks()
        .into_iter()
        .filter(|k| !done.contains(k))
        .collect())
}

// ---------------------------------------------------------------------------
// sinks

pub trait RecordSink {
    fn append(&self, record: &RunRecord) -> Result<(), RunnerError>;

    /// Raw request/response JSON for one completed call.
    fn archive(&self, _key: &TaskKey, _request: &Value, _response: &Value) -> Result<(), RunnerError> {
        Ok(())
    }
}

/// Append-only JSON Lines file. Each record is written as one `write_all` of a
/// complete line under a lock.
pub struct JsonlSink {
    path: PathBuf,
    file: Mutex<File>,
    archive: Option<Mutex<File>>,
}

fn open_append(path: &Path) -> io::Result<File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    OpenOptions::new().create(true).append(true).open(path)
}

fn write_line(file: &Mutex<File>, value: &impl Serialize) -> Result<(), RunnerError> {
    let mut line = serde_json::to_string(value).map_err(io::Error::from)?;
    line.push('\n');
    let mut f = file.lock().expect("sink lock poisoned");
    f.write_all(line.as_bytes())?;
    f.flush()?;
    Ok(())
}

impl JsonlSink {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, RunnerError> {
        let path = path.as_ref().to_path_buf();
        Ok(Self {
            file: Mutex::new(open_append(&path)?),
            path,
            archive: None,
        })
    }

    /// Also archive raw request/response JSON to `archive_path`.
    pub fn with_archive(mut self, archive_path: impl AsRef<Path>) -> Result<Self, RunnerError> {
        self.archive = Some(Mutex::new(open_append(archive_path.as_ref())?));
        Ok(self)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl RecordSink for JsonlSink {
    fn append(&self, record: &RunRecord) -> Result<(), RunnerError> {
        write_line(&self.file, record)
    }

    fn archive(&self, key: &TaskKey, request: &Value, response: &Value) -> Result<(), RunnerError> {
        match &self.archive {
            Some(f) => write_line(f, &json!({ "key": key, "request": request, "response": response })),
            None => Ok(()),
        }
    }
}

/// In-memory sink, mostly for tests and dry runs.
#[derive(Default)]
pub struct MemorySink {
    pub records: Mutex<Vec<RunRecord>>,
}

impl RecordSink for MemorySink {
    fn append(&self, record: &RunRecord) -> Result<(), RunnerError> {
        self.records.lock().expect("sink lock poisoned").push(record.clone());
        Ok(())
    }
}

/// Reads every record in file order. A missing file is an empty log; a
/// truncated final line (no trailing newline) from an interrupted write is
/// skipped.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<RunRecord>, RunnerError> {
    let path = path.as_ref();
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut reader = BufReader::new(file);
    let mut out = Vec::new();
    let mut buf = String::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        if reader.read_line(&mut buf)? == 0 {
            break;
        }
        line_no += 1;
        let complete = buf.ends_with('\n');
        let line = buf.trim();
        if line.is_empty() {
            continue;
        }
        match serde_json::from_str::<RunRecord>(line) {
            Ok(r) => {
                r.validate()?;
                out.push(r);
            }
            Err(_) if !complete => {
                tracing::warn!(path = %path.display(), line = line_no, "skipping truncated final record");
            }
            Err(e) => {
                return Err(RunnerError::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// execution

fn prompts(campaign: &Campaign) -> Result<HashMap<String, MessageSequence>, RunnerError> {
    let c = &campaign.corpus;
    c.targets
        .iter()
        .map(|t| {
            let doc = assemble_prompt(&c.rubric, &c.anchors, t)?;
            Ok((t.id.clone(), render_messages(&doc)?))
        })
        .collect()
}

/// Runs every task of the campaign.
pub async fn execute<B: ChatBackend, S: RecordSink>(
    campaign: &Campaign,
    backend: &B,
    sink: &S,
    global_cap: usize,
) -> Result<Vec<RunRecord>, RunnerError> {
    execute_tasks(campaign, campaign.tasks(), backend, sink, global_cap).await
}

/// Runs `tasks` with at most `global_cap` requests outstanding (the backend
/// applies per-model limits). Dispatch order is a seeded shuffle; each record
/// is appended to `sink` as it completes. Request failures become
/// `request_failed` records; a sink failure aborts.
pub async fn execute_tasks<B: ChatBackend, S: RecordSink>(
    campaign: &Campaign,
    mut tasks: Vec<TaskKey>,
    backend: &B,
    sink: &S,
    global_cap: usize,
) -> Result<Vec<RunRecord>, RunnerError> {
    let planned: BTreeSet<TaskKey> = campaign.tasks().into_iter().collect();
    if let Some(k) = tasks.iter().find(|k| !planned.contains(k)) {
        return Err(RunnerError::Campaign(format!("task {k} is not part of the campaign")));
    }
    let prompts = prompts(campaign)?;
    tasks.shuffle(&mut ChaCha8Rng::seed_from_u64(campaign.seed));

    let prompts = &prompts;
    let mut stream = futures::stream::iter(tasks.into_iter().map(|key| async move {
        let config = campaign.model(&key.model_label).expect("planned model");
        let messages = &prompts[&key.speech_id];
        let result = backend.complete(config, messages).await;
        (key, result)
    }))
    .buffer_unordered(global_cap.max(1));

    let mut out = Vec::new();
    while let Some((key, result)) = stream.next().await {
        let record = match result {
            Ok(resp) => {
                sink.archive(&key, &resp.raw_request, &resp.raw_response)?;
                RunRecord::from_response(&key, resp.text, resp.usage, Utc::now())
            }
            Err(e) => {
                tracing::warn!(task = %key, error = %e, "request failed");
                RunRecord::request_failed(&key, format!("{}: {e}", e.kind()), Utc::now())
            }
        };
        sink.append(&record)?;
        out.push(record);
    }
    out.sort_by_key(RunRecord::key);
    Ok(out)
}

// ---------------------------------------------------------------------------
// score tables

/// One model's items x runs grid from `ok` records.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelScoreTable {
    pub label: String,
    pub matrix: ScoreMatrix,
    /// Per-item mean over the present runs.
    pub means: Vec<Option<f64>>,
    /// (speech id, run index) cells with no ok record.
    pub missing: Vec<(String, u32)>,
}

/// Score tables for every model in `records`. Items are the speech ids seen
/// in sorted order and runs are `1..=max run_index`.
pub fn score_table(records: &[RunRecord]) -> BTreeMap<String, ModelScoreTable> {
    let items: BTreeSet<&str> = records.iter().map(|r| r.speech_id.as_str()).collect();
    let items: Vec<String> = items.into_iter().map(String::from).collect();
    let runs = records.iter().map(|r| r.run_index).max().unwrap_or(0);
    score_table_for(records, &items, runs)
}

/// As [`score_table`] with a fixed item order and run count, so speeches or
/// runs absent from the records are flagged missing.
pub fn score_table_for(
    records: &[RunRecord],
    items: &[String],
    runs: u32,
) -> BTreeMap<String, ModelScoreTable> {
    let row_of: HashMap<&str, usize> = items.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let labels: BTreeSet<&str> = records.iter().map(|r| r.model_label.as_str()).collect();
    labels
        .into_iter()
        .map(|label| {
            let mut cells = vec![vec![None; runs as usize]; items.len()];
            for r in records.iter().filter(|r| r.model_label == label && r.status == RunStatus::Ok) {
                if let (Some(&i), Some(s)) = (row_of.get(r.speech_id.as_str()), r.score) {
                    if (1..=runs).contains(&r.run_index) {
                        cells[i][r.run_index as usize - 1] = Some(s);
                    }
                }
            }
            let means = cells
                .iter()
                .map(|row| {
                    let v: Vec<f64> = row.iter().flatten().copied().collect();
                    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
                })
                .collect();
            let missing = cells
                .iter()
                .enumerate()
                .flat_map(|(i, row)| {
                    row.iter()
                        .enumerate()
                        .filter(|(_, c)| c.is_none())
                        .map(move |(j, _)| (items[i].clone(), j as u32 + 1))
                })
                .collect();
            let matrix = ScoreMatrix::new(
                items.to_vec(),
                (1..=runs).map(|r| format!("run{r}")).collect(),
                cells,
            )
            .expect("scores are finite");
            (
                label.to_string(),
                ModelScoreTable {
                    label: label.to_string(),
                    matrix,
                    means,
                    missing,
                },
            )
        })
        .collect()
}
