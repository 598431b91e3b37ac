//! Prompt construction and completion parsing for the planner and auditor
//! roles, plus the completion-client abstraction.
//!
//! The preamble prose lives in `templates/*.txt` and can be replaced at run
//! time; the surrounding structure (example blocks, caption and topic lines,
//! the trailing cue) is fixed here.

use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::dsl::{self, header_of, ParseError, ParseOutput, ENTITIES_HEADER};
use crate::plan::DiagramPlan;

pub const DEFAULT_APPROVAL_MARKER: &str = "NO ISSUES";
/// Number of in-context examples shown to the planner by default.
pub const DEFAULT_EXAMPLE_COUNT: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InContextExample {
    pub caption: String,
    pub topic: String,
    pub plan: DiagramPlan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl Default for DecodingParams {
    fn default() -> Self {
        DecodingParams { temperature: 0.0, max_tokens: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClientError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("unexpected response: {0}")]
    Protocol(String),
    #[error("no completion available for this prompt")]
    NoCompletion,
}

/// Something that turns a prompt into completion text. Implementations must
/// tolerate concurrent calls.
pub trait CompletionClient: Send + Sync {
    fn complete(&self, prompt: &str, params: &DecodingParams) -> Result<String, ClientError>;
}

impl<C: CompletionClient + ?Sized> CompletionClient for &C {
    fn complete(&self, prompt: &str, params: &DecodingParams) -> Result<String, ClientError> {
        (**self).complete(prompt, params)
    }
}

impl<C: CompletionClient + ?Sized> CompletionClient for Box<C> {
    fn complete(&self, prompt: &str, params: &DecodingParams) -> Result<String, ClientError> {
        (**self).complete(prompt, params)
    }
}

impl<C: CompletionClient + ?Sized> CompletionClient for Arc<C> {
    fn complete(&self, prompt: &str, params: &DecodingParams) -> Result<String, ClientError> {
        (**self).complete(prompt, params)
    }
}

/// Replays a fixed list of completions in order, one per call. Safe to
/// share between threads; each call takes the next unused completion.
#[derive(Debug, Default)]
pub struct ScriptedClient {
    completions: Vec<String>,
    next: AtomicUsize,
    repeat_last: bool,
}

impl ScriptedClient {
    pub fn new<I, S>(completions: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ScriptedClient {
            completions: completions.into_iter().map(Into::into).collect(),
            next: AtomicUsize::new(0),
            repeat_last: false,
        }
    }

    /// Keep answering with the last completion once the script runs out.
    pub fn repeating_last(mut self) -> Self {
        self.repeat_last = true;
        self
    }

    pub fn calls(&self) -> usize {
        self.next.load(Ordering::SeqCst)
    }
}

impl CompletionClient for ScriptedClient {
    fn complete(&self, _prompt: &str, _params: &DecodingParams) -> Result<String, ClientError> {
        let i = self.next.fetch_add(1, Ordering::SeqCst);
        let i = if self.repeat_last && i >= self.completions.len() {
            self.completions.len().wrapping_sub(1)
        } else {
            i
        };
        self.completions.get(i).cloned().ok_or(ClientError::NoCompletion)
    }
}

/// Adapts a closure into a client.
pub struct FnClient<F>(pub F);

impl<F> CompletionClient for FnClient<F>
where
    F: Fn(&str) -> Result<String, ClientError> + Send + Sync,
{
    fn complete(&self, prompt: &str, _params: &DecodingParams) -> Result<String, ClientError> {
        (self.0)(prompt)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplates {
    pub planner: String,
    pub auditor: String,
    pub reviser: String,
    pub retry: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            planner: include_str!("../templates/planner.txt").into(),
            auditor: include_str!("../templates/auditor.txt").into(),
            reviser: include_str!("../templates/reviser.txt").into(),
            retry: include_str!("../templates/retry.txt").into(),
        }
    }
}

fn push_block(out: &mut String, text: &str) {
    out.push_str(text.trim_end());
    out.push_str("\n\n");
}

fn push_heading(out: &mut String, caption: &str, topic: &str) {
    out.push_str("Caption: ");
    out.push_str(caption);
    out.push_str("\nTopic: ");
    out.push_str(topic);
    out.push('\n');
}

fn push_examples(out: &mut String, examples: &[InContextExample]) {
    for ex in examples {
        push_heading(out, &ex.caption, &ex.topic);
        out.push_str(&dsl::write_plan(&ex.plan));
        out.push('\n');
    }
}

/// Preamble, one block per example (caption, topic, plan), then the query
/// caption and topic followed by an open `Required Entities:` cue.
pub fn build_planner_prompt(
    templates: &PromptTemplates,
    caption: &str,
    topic: &str,
    examples: &[InContextExample],
) -> String {
    let mut out = String::new();
    push_block(&mut out, &templates.planner);
    push_examples(&mut out, examples);
    push_heading(&mut out, caption, topic);
    out.push_str(ENTITIES_HEADER);
    out
}

pub fn build_auditor_prompt(
    templates: &PromptTemplates,
    plan: &DiagramPlan,
    caption: &str,
    topic: &str,
    examples: &[InContextExample],
) -> String {
    let mut out = String::new();
    push_block(&mut out, &templates.auditor);
    if !examples.is_empty() {
        out.push_str("Well-formed plans for reference:\n\n");
        push_examples(&mut out, examples);
    }
    out.push_str("Plan to review:\n");
    push_heading(&mut out, caption, topic);
    out.push_str(&dsl::write_plan(plan));
    out.push_str("\nAssessment:");
    out
}

/// Planner prompt asking for a full rewrite of `plan` that addresses the
/// auditor's feedback.
pub fn build_revision_prompt(
    templates: &PromptTemplates,
    plan: &DiagramPlan,
    caption: &str,
    topic: &str,
    feedback: &str,
    examples: &[InContextExample],
) -> String {
    let mut out = String::new();
    push_block(&mut out, &templates.planner);
    push_examples(&mut out, examples);
    push_heading(&mut out, caption, topic);
    out.push_str("Current plan:\n");
    out.push_str(&dsl::write_plan(plan));
    out.push('\n');
    push_block(&mut out, &templates.reviser);
    out.push_str("Auditor feedback:\n");
    push_block(&mut out, feedback);
    out.push_str("Revised plan:\n");
    out.push_str(ENTITIES_HEADER);
    out
}

pub fn build_retry_prompt(templates: &PromptTemplates, prompt: &str) -> String {
    let mut out = String::from(prompt);
    out.push_str("\n\n");
    out.push_str(templates.retry.trim_end());
    out.push('\n');
    out
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CompletionError {
    #[error("completion contains no \"Required Entities:\" header")]
    NoPlanFound,
    #[error(transparent)]
    Parse(#[from] ParseError),
}

/// Extracts a plan from completion text that may be wrapped in prose or a
/// markdown code fence. Line numbers in errors refer to the completion.
pub fn parse_plan_completion(text: &str, caption: &str) -> Result<ParseOutput, CompletionError> {
    let lines: Vec<&str> = text.lines().collect();
    let start = lines
        .iter()
        .position(|l| header_of(l) == Some(ENTITIES_HEADER))
        .ok_or(CompletionError::NoPlanFound)?;
    let end = lines[start..]
        .iter()
        .position(|l| l.trim_start().starts_with("```"))
        .map_or(lines.len(), |n| start + n);
    // blank out the surroundings so line numbers still line up
    let mut body = String::new();
    for (i, l) in lines.iter().enumerate() {
        if (start..end).contains(&i) {
            body.push_str(l);
        }
        body.push('\n');
    }
    Ok(dsl::parse_plan_with_warnings(&body, caption)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackVerdict {
    Approved,
    NeedsRevision,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditorFeedback {
    pub verdict: FeedbackVerdict,
    pub feedback_text: String,
}

impl AuditorFeedback {
    pub fn approved(&self) -> bool {
        self.verdict == FeedbackVerdict::Approved
    }
}

/// Approved when the first non-empty line is the approval marker (case and
/// trailing punctuation ignored); otherwise the whole text is feedback.
pub fn parse_auditor_completion(text: &str, marker: &str) -> AuditorFeedback {
    let first = text.lines().map(str::trim).find(|l| !l.is_empty());
    let is_marker = first.is_some_and(|l| {
        let l = l.trim_matches(|c: char| c == '*' || c == '`').trim_end_matches(['.', '!']);
        l.eq_ignore_ascii_case(marker.trim())
    });
    if is_marker {
        let rest = text.trim().split_once('\n').map_or("", |x| x.1).trim();
        AuditorFeedback { verdict: FeedbackVerdict::Approved, feedback_text: rest.to_string() }
    } else {
        AuditorFeedback { verdict: FeedbackVerdict::NeedsRevision, feedback_text: text.trim().to_string() }
    }
}
