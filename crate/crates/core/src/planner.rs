//! Initial plan generation and the planner/auditor refinement loop.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::audit::{audit_plan, rule_refine, AuditConfig, AuditError, AuditReport};
use crate::dsl::ParseOutput;
use crate::llm::{
    build_auditor_prompt, build_planner_prompt, build_retry_prompt, build_revision_prompt,
    parse_auditor_completion, parse_plan_completion, AuditorFeedback, ClientError,
    CompletionClient, CompletionError, DecodingParams, InContextExample, PromptTemplates,
    DEFAULT_APPROVAL_MARKER,
};
use crate::plan::{validate_structure, DiagramPlan};

/// Maximum number of revisions in one refinement run.
pub const DEFAULT_MAX_ITERATIONS: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditorMode {
    Llm,
    Rules,
    /// Language-model feedback plus rule issues; approval needs both.
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefinerMode {
    Llm,
    Rules,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub max_iterations: u32,
    pub auditor_mode: AuditorMode,
    pub refiner_mode: RefinerMode,
    #[serde(default)]
    pub audit: AuditConfig,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            max_iterations: DEFAULT_MAX_ITERATIONS,
            auditor_mode: AuditorMode::Llm,
            refiner_mode: RefinerMode::Llm,
            audit: AuditConfig::default(),
        }
    }
}

impl LoopConfig {
    /// Rule auditor and rule refiner; needs no completion client.
    pub fn offline() -> Self {
        LoopConfig { auditor_mode: AuditorMode::Rules, refiner_mode: RefinerMode::Rules, ..Default::default() }
    }

    pub fn needs_client(&self) -> bool {
        self.auditor_mode != AuditorMode::Rules || self.refiner_mode == RefinerMode::Llm
    }
}

/// Where a plan snapshot came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RevisionSource {
    Initial,
    Rules,
    Llm,
    User,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub plan: DiagramPlan,
    pub source: RevisionSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule_report: Option<AuditReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<AuditorFeedback>,
    pub approved: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Termination {
    Approved,
    MaxIterations,
    Error { message: String },
}

/// One entry per audited plan snapshot, in order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LoopTrace {
    pub entries: Vec<TraceEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub termination: Option<Termination>,
}

impl LoopTrace {
    /// Number of snapshots produced by a revision step.
    pub fn revisions(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| matches!(e.source, RevisionSource::Rules | RevisionSource::Llm))
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlannerError {
    #[error("plan generation failed after a retry: {0}")]
    GenerationFailed(CompletionError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    InvalidPlan(#[from] AuditError),
    #[error("this loop configuration needs a completion client")]
    NoClient,
}

/// Result of auditing one snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct Assessment {
    pub rule_report: AuditReport,
    pub feedback: Option<AuditorFeedback>,
    pub approved: bool,
}

impl Assessment {
    /// Feedback text for the planner: the auditor's words followed by any
    /// rule findings.
    pub fn feedback_text(&self, mode: AuditorMode) -> String {
        let mut out = String::new();
        if let Some(fb) = &self.feedback {
            out.push_str(&fb.feedback_text);
        }
        if mode != AuditorMode::Llm && !self.rule_report.issues.is_empty() {
            if !out.is_empty() {
                out.push('\n');
            }
            out.push_str(&self.rule_report.feedback());
        }
        out
    }
}

/// Planner and auditor sharing one completion client.
pub struct Planner<'a> {
    pub client: Option<&'a dyn CompletionClient>,
    pub templates: PromptTemplates,
    pub examples: &'a [InContextExample],
    pub params: DecodingParams,
    pub approval_marker: String,
}

impl<'a> Planner<'a> {
    pub fn new(client: &'a dyn CompletionClient, examples: &'a [InContextExample]) -> Self {
        Planner {
            client: Some(client),
            templates: PromptTemplates::default(),
            examples,
            params: DecodingParams::default(),
            approval_marker: DEFAULT_APPROVAL_MARKER.into(),
        }
    }

    /// A planner that can only run the rule-based loop.
    pub fn offline() -> Planner<'static> {
        Planner {
            client: None,
            templates: PromptTemplates::default(),
            examples: &[],
            params: DecodingParams::default(),
            approval_marker: DEFAULT_APPROVAL_MARKER.into(),
        }
    }

    fn client(&self) -> Result<&'a dyn CompletionClient, PlannerError> {
        self.client.ok_or(PlannerError::NoClient)
    }

    /// Sends a plan-producing prompt; on an unreadable answer, asks once
    /// more with an instruction to emit only the plan.
    fn request_plan(&self, prompt: &str, caption: &str) -> Result<ParseOutput, PlannerError> {
        let client = self.client()?;
        let first = client.complete(prompt, &self.params)?;
        match parse_plan_completion(&first, caption) {
            Ok(out) => Ok(out),
            Err(_) => {
                let retry = build_retry_prompt(&self.templates, prompt);
                let second = client.complete(&retry, &self.params)?;
                parse_plan_completion(&second, caption).map_err(PlannerError::GenerationFailed)
            }
        }
    }

    pub fn generate(&self, caption: &str, topic: &str) -> Result<DiagramPlan, PlannerError> {
        let prompt = build_planner_prompt(&self.templates, caption, topic, self.examples);
        Ok(self.request_plan(&prompt, caption)?.plan)
    }

    pub fn assess(
        &self,
        plan: &DiagramPlan,
        topic: &str,
        config: &LoopConfig,
    ) -> Result<Assessment, PlannerError> {
        let rule_report = audit_plan(plan, &config.audit)?;
        let feedback = match config.auditor_mode {
            AuditorMode::Rules => None,
            AuditorMode::Llm | AuditorMode::Both => {
                let prompt = build_auditor_prompt(&self.templates, plan, &plan.caption, topic, self.examples);
                let text = self.client()?.complete(&prompt, &self.params)?;
                Some(parse_auditor_completion(&text, &self.approval_marker))
            }
        };
        let llm_ok = feedback.as_ref().is_none_or(AuditorFeedback::approved);
        let approved = match config.auditor_mode {
            AuditorMode::Llm => llm_ok,
            AuditorMode::Rules => rule_report.approved(),
            AuditorMode::Both => llm_ok && rule_report.approved(),
        };
        Ok(Assessment { rule_report, feedback, approved })
    }

    pub fn revise(
        &self,
        plan: &DiagramPlan,
        topic: &str,
        assessment: &Assessment,
        config: &LoopConfig,
    ) -> Result<(DiagramPlan, RevisionSource), PlannerError> {
        match config.refiner_mode {
            RefinerMode::Rules => {
                Ok((rule_refine(plan, &assessment.rule_report, &config.audit), RevisionSource::Rules))
            }
            RefinerMode::Llm => {
                let feedback = assessment.feedback_text(config.auditor_mode);
                let prompt =
                    build_revision_prompt(&self.templates, plan, &plan.caption, topic, &feedback, self.examples);
                Ok((self.request_plan(&prompt, &plan.caption)?.plan, RevisionSource::Llm))
            }
        }
    }

    /// Audits and revises until the auditor approves or `max_iterations`
    /// revisions have been made. Revisions never add structural violations,
    /// so a valid input gives a valid result; on a mid-loop failure it is
    /// the last good one.
    pub fn refine_loop(
        &self,
        plan: DiagramPlan,
        topic: &str,
        config: &LoopConfig,
    ) -> (DiagramPlan, LoopTrace) {
        let mut trace = LoopTrace::default();
        let mut current = plan;
        let mut source = RevisionSource::Initial;
        let fail = |trace: &mut LoopTrace, e: PlannerError| {
            trace.termination = Some(Termination::Error { message: alloc::format!("{e}") });
        };
        if config.needs_client() && self.client.is_none() {
            fail(&mut trace, PlannerError::NoClient);
            return (current, trace);
        }
        let mut iteration = 0;
        loop {
            let assessment = match self.assess(&current, topic, config) {
                Ok(a) => a,
                Err(e) => {
                    fail(&mut trace, e);
                    break;
                }
            };
            trace.entries.push(TraceEntry {
                plan: current.clone(),
                source,
                rule_report: Some(assessment.rule_report.clone()),
                feedback: assessment.feedback.clone(),
                approved: assessment.approved,
            });
            if assessment.approved {
                trace.termination = Some(Termination::Approved);
                break;
            }
            if iteration >= config.max_iterations {
                trace.termination = Some(Termination::MaxIterations);
                break;
            }
            match self.revise(&current, topic, &assessment, config) {
                Ok((next, src)) => {
                    debug_assert!(validate_structure(&next).iter().all(|v| validate_structure(&current).contains(v)));
                    current = next;
                    source = src;
                }
                Err(e) => {
                    fail(&mut trace, e);
                    break;
                }
            }
            iteration += 1;
        }
        (current, trace)
    }
}

/// Initial plan from the planner prompt.
pub fn generate_initial_plan(
    caption: &str,
    topic: &str,
    client: &dyn CompletionClient,
    examples: &[InContextExample],
) -> Result<DiagramPlan, PlannerError> {
    Planner::new(client, examples).generate(caption, topic)
}

pub fn refine_loop(
    plan: DiagramPlan,
    topic: &str,
    config: &LoopConfig,
    client: &dyn CompletionClient,
    examples: &[InContextExample],
) -> (DiagramPlan, LoopTrace) {
    Planner::new(client, examples).refine_loop(plan, topic, config)
}
