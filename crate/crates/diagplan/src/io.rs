//! Reading and writing plans in the text DSL or canonical JSON.

use std::fs;
use std::path::Path;

use diagplan_core::dsl::{parse_plan_with_warnings, serialize_plan, InvalidPlan, ParseError, ParseWarning};
use diagplan_core::plan::{DiagramPlan, StructuralViolation};

#[derive(Debug, thiserror::Error)]
pub enum PlanIoError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: String, source: std::io::Error },
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("invalid plan JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("plan is structurally invalid")]
    Invalid(Vec<StructuralViolation>),
}

impl From<InvalidPlan> for PlanIoError {
    fn from(e: InvalidPlan) -> Self {
        PlanIoError::Invalid(e.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanFormat {
    Dsl,
    Json,
}

impl PlanFormat {
    /// JSON when the text opens with `{`, DSL otherwise.
    pub fn sniff(text: &str) -> Self {
        if text.trim_start().starts_with('{') {
            PlanFormat::Json
        } else {
            PlanFormat::Dsl
        }
    }
}

/// Parses either format. JSON plans keep their own caption unless it is
/// empty; DSL plans take `caption`.
pub fn plan_from_str(text: &str, caption: &str) -> Result<(DiagramPlan, Vec<ParseWarning>), PlanIoError> {
    match PlanFormat::sniff(text) {
        PlanFormat::Json => {
            let mut plan: DiagramPlan = serde_json::from_str(text)?;
            if plan.caption.is_empty() {
                plan.caption = caption.into();
            }
            let v = plan.validate();
            if !v.is_empty() {
                return Err(PlanIoError::Invalid(v));
            }
            Ok((plan, Vec::new()))
        }
        PlanFormat::Dsl => {
            let out = parse_plan_with_warnings(text, caption)?;
            Ok((out.plan, out.warnings))
        }
    }
}

pub fn read_text(path: &Path) -> Result<String, PlanIoError> {
    fs::read_to_string(path).map_err(|source| PlanIoError::Read { path: path.display().to_string(), source })
}

pub fn read_plan(path: &Path, caption: &str) -> Result<DiagramPlan, PlanIoError> {
    let (plan, warnings) = plan_from_str(&read_text(path)?, caption)?;
    for w in warnings {
        log::warn!("{}:{}: {}", path.display(), w.line, w.message);
    }
    Ok(plan)
}

pub fn plan_to_string(plan: &DiagramPlan, format: PlanFormat) -> Result<String, PlanIoError> {
    match format {
        PlanFormat::Dsl => Ok(serialize_plan(plan)?),
        PlanFormat::Json => {
            let v = plan.validate();
            if !v.is_empty() {
                return Err(PlanIoError::Invalid(v));
            }
            Ok(serde_json::to_string_pretty(plan)? + "\n")
        }
    }
}

/// Writes through a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), PlanIoError> {
    let err = |source| PlanIoError::Write { path: path.display().to_string(), source };
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(err)?;
    std::io::Write::write_all(&mut tmp, contents).map_err(err)?;
    tmp.persist(path).map_err(|e| err(e.error))?;
    Ok(())
}
