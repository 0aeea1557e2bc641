//! Speeches, anchor sets, rubric and human benchmark scores.
//!
//! A corpus is described by a JSON manifest with three top-level keys
//! (`rubric`, `anchors`, `targets`). Speech texts and anchor reasoning live in
//! separate UTF-8 files referenced relative to the manifest's directory.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCORE_MIN: f64 = 0.0;
pub const SCORE_MAX: f64 = 2.0;
pub const CATEGORY_COUNT: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpeechType {
    Campaign,
    Famous,
    International,
    Ribbon,
}

impl SpeechType {
    pub fn as_str(self) -> &'static str {
        match self {
            SpeechType::Campaign => "campaign",
            SpeechType::Famous => "famous",
            SpeechType::International => "international",
            SpeechType::Ribbon => "ribbon",
        }
    }
}

impl fmt::Display for SpeechType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Speech {
    pub id: String,
    pub country: String,
    pub leader: String,
    pub speech_type: SpeechType,
    pub language: String,
    pub text: String,
    /// One score per human coder, not pre-averaged.
    pub human_scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSpeech {
    pub speech: Speech,
    pub anchor_score: f64,
    /// Expert chain-of-thought justification of `anchor_score`.
    pub reasoning_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rubric {
    pub definition: String,
    pub methodology_note: String,
    /// Keyed by scale level ("0", "1", "2").
    pub scale_anchors: BTreeMap<String, String>,
    pub populist_categories: Vec<Category>,
    pub pluralist_categories: Vec<Category>,
    pub implementation_instructions: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub anchors: Vec<AnchorSpeech>,
    pub targets: Vec<Speech>,
    pub rubric: Rubric,
}

impl Corpus {
    pub fn target(&self, id: &str) -> Option<&Speech> {
        self.targets.iter().find(|s| s.id == id)
    }

    pub fn target_ids(&self) -> Vec<String> {
        self.targets.iter().map(|s| s.id.clone()).collect()
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("speech '{id}', field '{field}': missing file {path}")]
    MissingFile {
        id: String,
        field: &'static str,
        path: PathBuf,
    },
    #[error("speech '{id}', field '{field}': {rule}: {detail}")]
    Invalid {
        id: String,
        field: &'static str,
        rule: Rule,
        detail: String,
    },
}

#[derive(Debug, Error, PartialEq)]
#[error("speech '{0}' has no human scores; benchmark unavailable")]
pub struct BenchmarkUnavailable(pub String);

/// Mean of the human coder scores, unrounded.
pub fn human_benchmark(speech: &Speech) -> Result<f64, BenchmarkUnavailable> {
    if speech.human_scores.is_empty() {
        return Err(BenchmarkUnavailable(speech.id.clone()));
    }
    Ok(speech.human_scores.iter().sum::<f64>() / speech.human_scores.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    DuplicateId,
    EmptyText,
    HumanScoreRange,
    AnchorScoreRange,
    EmptyReasoning,
    AnchorOrder,
    CategoryCount,
    ScaleAnchors,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Rule::DuplicateId => "duplicate id",
            Rule::EmptyText => "empty text",
            Rule::HumanScoreRange => "human score out of range",
            Rule::AnchorScoreRange => "anchor score out of range",
            Rule::EmptyReasoning => "empty reasoning",
            Rule::AnchorOrder => "anchors not in ascending score order",
            Rule::CategoryCount => "wrong category count",
            Rule::ScaleAnchors => "scale anchors incomplete",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub id: String,
    pub field: &'static str,
    pub rule: Rule,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [{}]: {} ({})", self.id, self.field, self.rule, self.detail)
    }
}

impl From<Violation> for CorpusError {
    fn from(v: Violation) -> Self {
        CorpusError::Invalid {
            id: v.id,
            field: v.field,
            rule: v.rule,
            detail: v.detail,
        }
    }
}

fn in_scale(x: f64) -> bool {
    x.is_finite() && (SCORE_MIN..=SCORE_MAX).contains(&x)
}

fn check_speech(s: &Speech, out: &mut Vec<Violation>) {
    if s.text.trim().is_empty() {
        out.push(Violation {
            id: s.id.clone(),
            field: "text",
            rule: Rule::EmptyText,
            detail: "speech text is empty".into(),
        });
    }
    for (i, &h) in s.human_scores.iter().enumerate() {
        if !in_scale(h) {
            out.push(Violation {
                id: s.id.clone(),
                field: "human_scores",
                rule: Rule::HumanScoreRange,
                detail: format!("coder {} scored {h}, outside [0, 2]", i + 1),
            });
        }
    }
}

/// Checks every corpus invariant. An empty list means the corpus is valid.
pub fn validate_corpus(corpus: &Corpus) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    let all = corpus
        .anchors
        .iter()
        .map(|a| &a.speech)
        .chain(corpus.targets.iter());
    for s in all {
        if !seen.insert(s.id.as_str()) {
            out.push(Violation {
                id: s.id.clone(),
                field: "id",
                rule: Rule::DuplicateId,
                detail: "id already used by another speech".into(),
            });
        }
        check_speech(s, &mut out);
    }

    for a in &corpus.anchors {
        if !in_scale(a.anchor_score) {
            out.push(Violation {
                id: a.speech.id.clone(),
                field: "anchor_score",
                rule: Rule::AnchorScoreRange,
                detail: format!("{} outside [0, 2]", a.anchor_score),
            });
        }
        if a.reasoning_text.trim().is_empty() {
            out.push(Violation {
                id: a.speech.id.clone(),
                field: "reasoning_text",
                rule: Rule::EmptyReasoning,
                detail: "anchor has no reasoning text".into(),
            });
        }
    }
    if let Some(w) = corpus
        .anchors
        .windows(2)
        .find(|w| w[1].anchor_score < w[0].anchor_score)
    {
        out.push(Violation {
            id: w[1].speech.id.clone(),
            field: "anchor_score",
            rule: Rule::AnchorOrder,
            detail: format!(
                "{} follows '{}' at {}",
                w[1].anchor_score, w[0].speech.id, w[0].anchor_score
            ),
        });
    }

    let r = &corpus.rubric;
    for (field, cats) in [
        ("populist_categories", &r.populist_categories),
        ("pluralist_categories", &r.pluralist_categories),
    ] {
        if cats.len() != CATEGORY_COUNT {
            out.push(Violation {
                id: "rubric".into(),
                field,
                rule: Rule::CategoryCount,
                detail: format!("expected {CATEGORY_COUNT}, found {}", cats.len()),
            });
        }
    }
    let missing: Vec<&str> = ["0", "1", "2"]
        .into_iter()
        .filter(|k| !r.scale_anchors.contains_key(*k))
        .collect();
    if !missing.is_empty() {
        out.push(Violation {
            id: "rubric".into(),
            field: "scale_anchors",
            rule: Rule::ScaleAnchors,
            detail: format!("missing levels {}", missing.join(", ")),
        });
    }
    out
}

// ---- manifest (de)serialization ----

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeechEntry {
    pub id: String,
    pub country: String,
    pub leader: String,
    pub speech_type: SpeechType,
    pub language: String,
    pub text_file: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub human_scores: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning_file: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RubricSource {
    File(String),
    Inline(Rubric),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub rubric: RubricSource,
    pub anchors: Vec<SpeechEntry>,
    #[serde(default)]
    pub targets: Vec<SpeechEntry>,
}

fn read_text(base: &Path, rel: &str, id: &str, field: &'static str) -> Result<String, CorpusError> {
    let path = base.join(rel);
    match fs::read_to_string(&path) {
        Ok(s) => Ok(s),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(CorpusError::MissingFile {
            id: id.to_string(),
            field,
            path,
        }),
        Err(source) => Err(CorpusError::Io { path, source }),
    }
}

fn speech_from_entry(base: &Path, e: &SpeechEntry) -> Result<Speech, CorpusError> {
    Ok(Speech {
        id: e.id.clone(),
        country: e.country.clone(),
        leader: e.leader.clone(),
        speech_type: e.speech_type,
        language: e.language.clone(),
        text: read_text(base, &e.text_file, &e.id, "text_file")?,
        human_scores: e.human_scores.clone(),
    })
}

/// Parses the manifest, reads every referenced file, sorts anchors by
/// ascending score (stable, so equal scores keep manifest order) and
/// validates the result.
pub fn load_corpus(manifest_path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let manifest_path = manifest_path.as_ref();
    let raw = fs::read_to_string(manifest_path).map_err(|source| CorpusError::Io {
        path: manifest_path.to_path_buf(),
        source,
    })?;
    let manifest: Manifest = serde_json::from_str(&raw).map_err(|e| CorpusError::Manifest {
        path: manifest_path.to_path_buf(),
        message: e.to_string(),
    })?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));

    let rubric = match &manifest.rubric {
        RubricSource::Inline(r) => r.clone(),
        RubricSource::File(rel) => {
            let text = read_text(base, rel, "rubric", "rubric")?;
            serde_json::from_str(&text).map_err(|e| CorpusError::Manifest {
                path: base.join(rel),
                message: e.to_string(),
            })?
        }
    };

    let mut anchors = Vec::with_capacity(manifest.anchors.len());
    for e in &manifest.anchors {
        let anchor_score = e.anchor_score.ok_or_else(|| CorpusError::Manifest {
            path: manifest_path.to_path_buf(),
            message: format!("anchor '{}' has no anchor_score", e.id),
        })?;
        let reasoning_file = e.reasoning_file.as_deref().ok_or_else(|| CorpusError::Manifest {
            path: manifest_path.to_path_buf(),
            message: format!("anchor '{}' has no reasoning_file", e.id),
        })?;
        anchors.push(AnchorSpeech {
            speech: speech_from_entry(base, e)?,
            anchor_score,
            reasoning_text: read_text(base, reasoning_file, &e.id, "reasoning_file")?,
        });
    }
    // NaN scores are caught by validation below; treat them as equal here.
    anchors.sort_by(|a, b| {
        a.anchor_score
            .partial_cmp(&b.anchor_score)
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let targets = manifest
        .targets
        .iter()
        .map(|e| speech_from_entry(base, e))
        .collect::<Result<Vec<_>, _>>()?;

    let corpus = Corpus {
        anchors,
        targets,
        rubric,
    };
    match validate_corpus(&corpus).into_iter().next() {
        Some(v) => Err(v.into()),
        None => Ok(corpus),
    }
}

/// Writes `corpus` as a manifest plus one text file per speech and anchor
/// reasoning under `dir`. Returns the manifest path.
pub fn save_corpus(corpus: &Corpus, dir: impl AsRef<Path>) -> Result<PathBuf, CorpusError> {
    let dir = dir.as_ref();
    let texts = dir.join("texts");
    fs::create_dir_all(&texts).map_err(|source| CorpusError::Io {
        path: texts.clone(),
        source,
    })?;
    let write = |rel: String, body: &str| -> Result<String, CorpusError> {
        let path = dir.join(&rel);
        fs::write(&path, body).map_err(|source| CorpusError::Io { path, source })?;
        Ok(rel)
    };
    let entry = |s: &Speech, prefix: &str| -> Result<SpeechEntry, CorpusError> {
        Ok(SpeechEntry {
            id: s.id.clone(),
            country: s.country.clone(),
            leader: s.leader.clone(),
            speech_type: s.speech_type,
            language: s.language.clone(),
            text_file: write(format!("texts/{prefix}{}.txt", s.id), &s.text)?,
            human_scores: s.human_scores.clone(),
            anchor_score: None,
            reasoning_file: None,
        })
    };

    let mut anchors = Vec::new();
    for a in &corpus.anchors {
        let mut e = entry(&a.speech, "anchor-")?;
        e.anchor_score = Some(a.anchor_score);
        e.reasoning_file = Some(write(
            format!("texts/anchor-{}.reasoning.txt", a.speech.id),
            &a.reasoning_text,
        )?);
        anchors.push(e);
    }
    let targets = corpus
        .targets
        .iter()
        .map(|s| entry(s, ""))
        .collect::<Result<Vec<_>, _>>()?;
    let manifest = Manifest {
        rubric: RubricSource::Inline(corpus.rubric.clone()),
        anchors,
        targets,
    };
    let path = dir.join("manifest.json");
    let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, body).map_err(|source| CorpusError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}
