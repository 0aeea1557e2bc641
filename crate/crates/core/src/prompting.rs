//! Five-phase chain-of-thought grading prompt.
//!
//! All prose comes from the [`Rubric`] and the anchor files; this module only
//! fixes the skeleton: phase order, anchor ordering, the position of the target
//! speech, and the `FINAL SCORE:` terminal line the model must emit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AnchorSpeech, Rubric, Speech};

/// Marker the grader must end its answer with.
pub const SCORE_MARKER: &str = "FINAL SCORE:";

/// Joins phases inside a message and separates phase 4 from the target.
pub const SEPARATOR: &str = "\n\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Theory,
    Methodology,
    Rubric,
    Anchors,
    Instructions,
}

impl Phase {
    pub const ORDER: [Phase; 5] = [
        Phase::Theory,
        Phase::Methodology,
        Phase::Rubric,
        Phase::Anchors,
        Phase::Instructions,
    ];

    fn heading(self) -> &'static str {
        match self {
            Phase::Theory => "PHASE 1: THEORETICAL FOUNDATION",
            Phase::Methodology => "PHASE 2: METHODOLOGICAL INSTRUCTION",
            Phase::Rubric => "PHASE 3: RUBRIC TRAINING",
            Phase::Anchors => "PHASE 4: ANCHOR SPEECH TRAINING",
            Phase::Instructions => "PHASE 5: IMPLEMENTATION INSTRUCTIONS",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptDocument {
    pub phases: Vec<(Phase, String)>,
    pub target_block: String,
    pub token_estimate: usize,
}

impl PromptDocument {
    pub fn body(&self, phase: Phase) -> &str {
        self.phases
            .iter()
            .find(|(p, _)| *p == phase)
            .map(|(_, b)| b.as_str())
            .unwrap_or("")
    }

    /// Total characters across phases and target block.
    pub fn char_len(&self) -> usize {
        self.phases.iter().map(|(_, b)| b.chars().count()).sum::<usize>()
            + self.target_block.chars().count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageSequence {
    pub messages: Vec<Message>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("empty anchor set")]
    EmptyAnchors,
    #[error("anchor '{0}' has no reasoning text")]
    MissingReasoning(String),
    #[error("target speech '{0}' has no text")]
    EmptyTarget(String),
    #[error("prompt document is malformed: {0}")]
    Malformed(&'static str),
}

/// ceil(chars / 4).
pub fn estimate_tokens(chars: usize) -> usize {
    chars.div_ceil(4)
}

fn theory(rubric: &Rubric) -> String {
    format!("{}\n\n{}", Phase::Theory.heading(), rubric.definition.trim_end())
}

fn methodology(rubric: &Rubric) -> String {
    format!(
        "{}\n\n{}",
        Phase::Methodology.heading(),
        rubric.methodology_note.trim_end()
    )
}

fn rubric_phase(rubric: &Rubric) -> String {
    let mut s = format!("{}\n\nScoring scale (0 to 2):\n", Phase::Rubric.heading());
    for (level, desc) in &rubric.scale_anchors {
        s.push_str(&format!("- {level}: {}\n", desc.trim()));
    }
    s.push_str("\nPopulist categories:\n");
    for (i, c) in rubric.populist_categories.iter().enumerate() {
        s.push_str(&format!("{}. {}: {}\n", i + 1, c.name, c.description.trim()));
    }
    s.push_str("\nPluralist categories:\n");
    for (i, c) in rubric.pluralist_categories.iter().enumerate() {
        s.push_str(&format!("{}. {}: {}\n", i + 1, c.name, c.description.trim()));
    }
    s.truncate(s.trim_end().len());
    s
}

fn anchors_phase(anchors: &[&AnchorSpeech]) -> String {
    let mut s = format!(
        "{}\n\nThe following {} speeches were graded by expert coders. Each shows the full reasoning and the final score.",
        Phase::Anchors.heading(),
        anchors.len()
    );
    for (i, a) in anchors.iter().enumerate() {
        let sp = &a.speech;
        s.push_str(&format!(
            "\n\n--- Training speech {} [{}] ---\nLeader: {} ({})\nType: {}\nLanguage: {}\n\nSpeech:\n{}\n\nExpert reasoning:\n{}\n\nExpert score: {:.1}",
            i + 1,
            sp.id,
            sp.leader,
            sp.country,
            sp.speech_type,
            sp.language,
            sp.text.trim_end(),
            a.reasoning_text.trim_end(),
            a.anchor_score
        ));
    }
    s
}

fn instructions(rubric: &Rubric) -> String {
    format!(
        "{}\n\n{}\n\nThink step by step through the categories above before deciding. \
         End your answer with a single line of the form `{SCORE_MARKER} <x.x>`, \
         where <x.x> is a number from 0.0 to 2.0 with one decimal place.",
        Phase::Instructions.heading(),
        rubric.implementation_instructions.trim_end()
    )
}

fn target_block(target: &Speech) -> String {
    format!(
        "SPEECH TO GRADE\nLeader: {} ({})\nType: {}\nLanguage: {}\n\n{}",
        target.leader,
        target.country,
        target.speech_type,
        target.language,
        target.text.trim_end()
    )
}

/// Builds the five-phase prompt. Anchors are emitted in ascending score order
/// (stable for ties) regardless of input order.
pub fn assemble_prompt(
    rubric: &Rubric,
    anchors: &[AnchorSpeech],
    target: &Speech,
) -> Result<PromptDocument, PromptError> {
    if anchors.is_empty() {
        return Err(PromptError::EmptyAnchors);
    }
    if let Some(a) = anchors.iter().find(|a| a.reasoning_text.trim().is_empty()) {
        return Err(PromptError::MissingReasoning(a.speech.id.clone()));
    }
    if target.text.trim().is_empty() {
        return Err(PromptError::EmptyTarget(target.id.clone()));
    }
    let mut ordered: Vec<&AnchorSpeech> = anchors.iter().collect();
    ordered.sort_by(|a, b| {
        a.anchor_score
            .partial_cmp(&b.anchor_score)
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let phases = vec![
        (Phase::Theory, theory(rubric)),
        (Phase::Methodology, methodology(rubric)),
        (Phase::Rubric, rubric_phase(rubric)),
        (Phase::Anchors, anchors_phase(&ordered)),
        (Phase::Instructions, instructions(rubric)),
    ];
    let mut doc = PromptDocument {
        phases,
        target_block: target_block(target),
        token_estimate: 0,
    };
    doc.token_estimate = estimate_tokens(doc.char_len());
    Ok(doc)
}

/// Phases 1-3 and 5 become the system message; phase 4 followed by the
/// target block becomes the user message.
pub fn render_messages(doc: &PromptDocument) -> Result<MessageSequence, PromptError> {
    if doc.phases.len() != Phase::ORDER.len()
        || doc.phases.iter().map(|(p, _)| *p).ne(Phase::ORDER)
    {
        return Err(PromptError::Malformed("phases must be the five fixed phases in order"));
    }
    if doc.target_block.trim().is_empty() {
        return Err(PromptError::Malformed("empty target block"));
    }
    let system = [
        Phase::Theory,
        Phase::Methodology,
        Phase::Rubric,
        Phase::Instructions,
    ]
    .iter()
    .map(|p| doc.body(*p))
    .collect::<Vec<_>>()
    .join(SEPARATOR);
    let user = format!("{}{SEPARATOR}{}", doc.body(Phase::Anchors), doc.target_block);
    Ok(MessageSequence {
        messages: vec![
            Message {
                role: Role::System,
                content: system,
            },
            Message {
                role: Role::User,
                content: user,
            },
        ],
    })
}

/// Separator characters `render_messages` adds on top of the document.
pub const RENDER_OVERHEAD: usize = 4 * SEPARATOR.len();
