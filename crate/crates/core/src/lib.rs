//! Diagram plans: a text-and-grid description of a diagram's entities,
//! relationships and layout, with the tools to generate, audit, refine,
//! evaluate, render and export them.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod audit;
pub mod dsl;
pub mod eval;
pub mod export;
pub mod geometry;
pub mod icon;
pub mod llm;
pub mod plan;
pub mod planner;
pub mod render;

pub use audit::{audit_plan, rule_refine, AuditConfig, AuditIssue, AuditReport, IssueKind};
pub use dsl::{parse_plan, parse_plan_with_warnings, serialize_plan, ParseError};
pub use eval::{evaluate, questions_from_gt, EvalConfig, EvalQuestion, EvalReport, Skill};
pub use export::{export_inkscape_script, export_office_script, Dialect, ExportOptions, ExportScript};
pub use geometry::{anchor_pair, iou, is_between, spatial_relation, to_pixels, PixelRect};
pub use icon::{IconAsset, IconProvider, NoIcons};
pub use llm::{CompletionClient, InContextExample, PromptTemplates};
pub use plan::{
    validate_structure, DiagramPlan, Entity, EntityId, EntityKind, GridBox, RelationKind, Relationship,
    StructuralViolation,
};
pub use planner::{generate_initial_plan, refine_loop, LoopConfig, LoopTrace, Planner};
pub use render::{render_svg, RenderOptions, RenderStyle, SvgDocument};
