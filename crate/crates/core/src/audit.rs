//! Rule-based plan auditing and a deterministic refiner.
//!
//! Only geometrically decidable defects are checked here. Whether a plan
//! matches the prompt's meaning is left to a language-model auditor.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::eval::normalize;
use crate::geometry::iou;
use crate::plan::{
    validate_structure, DiagramPlan, EntityId, EntityKind, GridBox, RelationKind,
    StructuralViolation, GRID,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    /// Object pairs with IoU above this overlap materially.
    pub overlap_iou: f64,
    /// Largest allowed distance, in grid units, from a label's center to the
    /// box of the object it labels.
    pub label_distance: f64,
    /// Text label boxes shorter than this are flagged.
    pub min_text_height: u32,
    /// Terms that must each match some entity description.
    pub required_terms: Vec<String>,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            overlap_iou: 0.05,
            label_distance: 25.0,
            min_text_height: 3,
            required_terms: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueKind {
    OutOfBounds,
    Overlap,
    DanglingReference,
    UnreachableLabel,
    TinyText,
    CaptionEntityGap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Measure {
    /// Grid units past the right and bottom edges.
    Overflow { x: u32, y: u32 },
    Iou { value: f64 },
    Distance { value: f64 },
    Height { value: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditIssue {
    pub kind: IssueKind,
    pub subjects: Vec<EntityId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure: Option<Measure>,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Approved,
    NeedsRevision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub issues: Vec<AuditIssue>,
    pub verdict: Verdict,
}

impl AuditReport {
    pub fn from_issues(mut issues: Vec<AuditIssue>) -> Self {
        issues.sort_by(|a, b| (a.kind, &a.subjects).cmp(&(b.kind, &b.subjects)));
        let verdict = if issues.is_empty() { Verdict::Approved } else { Verdict::NeedsRevision };
        AuditReport { issues, verdict }
    }

    pub fn approved(&self) -> bool {
        self.verdict == Verdict::Approved
    }

    pub fn count(&self, kind: IssueKind) -> usize {
        self.issues.iter().filter(|i| i.kind == kind).count()
    }

    pub fn kinds(&self) -> BTreeSet<IssueKind> {
        self.issues.iter().map(|i| i.kind).collect()
    }

    /// One line per issue, suitable as planner feedback.
    pub fn feedback(&self) -> String {
        let mut out = String::new();
        for issue in &self.issues {
            out.push_str("- ");
            out.push_str(&issue.message);
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("plan is structurally invalid: {0:?}")]
pub struct AuditError(pub Vec<StructuralViolation>);

/// Audits a plan. Dangling references are reported as issues; any other
/// structural violation is an error.
pub fn audit_plan(plan: &DiagramPlan, config: &AuditConfig) -> Result<AuditReport, AuditError> {
    let mut issues = Vec::new();
    let mut fatal = Vec::new();
    for v in validate_structure(plan) {
        match v {
            StructuralViolation::DanglingReference { id } => issues.push(AuditIssue {
                kind: IssueKind::DanglingReference,
                subjects: alloc::vec![id],
                measure: None,
                message: alloc::format!("{id} is referenced but not declared"),
            }),
            other => fatal.push(other),
        }
    }
    if !fatal.is_empty() {
        return Err(AuditError(fatal));
    }

    for e in &plan.entities {
        let b = plan.layouts[&e.id];
        let (ox, oy) = overflow(b);
        if ox > 0 || oy > 0 {
            issues.push(AuditIssue {
                kind: IssueKind::OutOfBounds,
                subjects: alloc::vec![e.id],
                measure: Some(Measure::Overflow { x: ox, y: oy }),
                message: alloc::format!(
                    "{} ({}) at {b} extends past the canvas by {ox} right, {oy} down",
                    e.id, e.description
                ),
            });
        }
    }

    let objects: Vec<_> = plan.objects().collect();
    for (i, a) in objects.iter().enumerate() {
        for b in &objects[i + 1..] {
            let v = iou(plan.layouts[&a.id], plan.layouts[&b.id]);
            if v <= config.overlap_iou {
                continue;
            }
            let joined = plan.relationships.iter().any(|r| r.kind != RelationKind::Labels && r.joins(a.id, b.id));
            if joined {
                continue;
            }
            let (lo, hi) = if a.id < b.id { (a, b) } else { (b, a) };
            issues.push(AuditIssue {
                kind: IssueKind::Overlap,
                subjects: alloc::vec![lo.id, hi.id],
                measure: Some(Measure::Iou { value: v }),
                message: alloc::format!(
                    "{} ({}) and {} ({}) overlap (IoU {:.2})",
                    lo.id, lo.description, hi.id, hi.description, v
                ),
            });
        }
    }

    for label in plan.labels() {
        let lb = plan.layouts[&label.id];
        for obj in plan.labelled_objects(label.id) {
            let Some(ob) = plan.layout(obj) else { continue };
            let d = center_to_box(lb, ob);
            if d > config.label_distance {
                issues.push(AuditIssue {
                    kind: IssueKind::UnreachableLabel,
                    subjects: alloc::vec![label.id, obj],
                    measure: Some(Measure::Distance { value: d }),
                    message: alloc::format!(
                        "label {} \"{}\" is {:.1} units away from {}",
                        label.id, label.description, d, obj
                    ),
                });
            }
        }
        if lb.h < config.min_text_height {
            issues.push(AuditIssue {
                kind: IssueKind::TinyText,
                subjects: alloc::vec![label.id],
                measure: Some(Measure::Height { value: lb.h }),
                message: alloc::format!("label {} \"{}\" is only {} units tall", label.id, label.description, lb.h),
            });
        }
    }

    for term in &config.required_terms {
        let covered = plan.entities.iter().any(|e| crate::eval::match_description(term, &e.description, &[]));
        if !covered && !normalize(term).is_empty() {
            issues.push(AuditIssue {
                kind: IssueKind::CaptionEntityGap,
                subjects: Vec::new(),
                measure: None,
                message: alloc::format!("no entity depicts \"{term}\""),
            });
        }
    }

    Ok(AuditReport::from_issues(issues))
}

fn overflow(b: GridBox) -> (u32, u32) {
    (b.right().saturating_sub(GRID), b.bottom().saturating_sub(GRID))
}

/// Euclidean distance from the center of `a` to the nearest point of `b`.
fn center_to_box(a: GridBox, b: GridBox) -> f64 {
    let (cx, cy) = a.center();
    let dx = (f64::from(b.x) - cx).max(0.0).max(cx - f64::from(b.right()));
    let dy = (f64::from(b.y) - cy).max(0.0).max(cy - f64::from(b.bottom()));
    libm::sqrt(dx * dx + dy * dy)
}

fn issue_count(plan: &DiagramPlan, config: &AuditConfig) -> usize {
    audit_plan(plan, config).map_or(usize::MAX, |r| r.issues.len())
}

/// Repairs the issues in `report` that have a geometric fix.
///
/// Boxes past the canvas edge are shifted back inside, overlapping objects
/// are pushed apart, and far-away labels are moved next to their object.
/// Each fix is kept only if it lowers the audit's issue count, so the
/// result never has more issues than the input. Dangling references, tiny
/// text, and caption gaps are left as they are.
pub fn rule_refine(plan: &DiagramPlan, report: &AuditReport, config: &AuditConfig) -> DiagramPlan {
    let mut current = plan.clone();
    if report.approved() {
        return current;
    }
    let mut count = issue_count(&current, config);
    for issue in &report.issues {
        let candidates = match issue.kind {
            IssueKind::OutOfBounds => clamp_candidates(&current, issue.subjects[0]),
            IssueKind::Overlap => separation_candidates(&current, issue.subjects[0], issue.subjects[1], config),
            IssueKind::UnreachableLabel => label_candidates(&current, issue.subjects[0], issue.subjects[1]),
            IssueKind::DanglingReference | IssueKind::TinyText | IssueKind::CaptionEntityGap => Vec::new(),
        };
        for candidate in candidates {
            let c = issue_count(&candidate, config);
            if c < count {
                current = candidate;
                count = c;
                break;
            }
        }
    }
    current
}

fn with_box(plan: &DiagramPlan, id: EntityId, b: GridBox) -> Option<DiagramPlan> {
    b.check().ok()?;
    let mut p = plan.clone();
    p.layouts.insert(id, b);
    Some(p)
}

fn clamp_candidates(plan: &DiagramPlan, id: EntityId) -> Vec<DiagramPlan> {
    let Some(b) = plan.layout(id) else { return Vec::new() };
    let clamped = GridBox { x: b.x.min(GRID - b.w), y: b.y.min(GRID - b.h), ..b };
    // Labels travel with their object so they stay attached.
    let (dx, dy) = (i64::from(clamped.x) - i64::from(b.x), i64::from(clamped.y) - i64::from(b.y));
    let mut out = Vec::new();
    if let Some(p) = translate_with_labels(plan, id, dx, dy) {
        out.push(p);
    }
    out.extend(with_box(plan, id, clamped));
    out
}

fn shifted(b: GridBox, dx: i64, dy: i64) -> Option<GridBox> {
    let x = u32::try_from(i64::from(b.x) + dx).ok()?;
    let y = u32::try_from(i64::from(b.y) + dy).ok()?;
    let moved = GridBox { x, y, ..b };
    moved.check().ok()?;
    Some(moved)
}

/// Moves an object and every label attached to it by the same offset.
fn translate_with_labels(plan: &DiagramPlan, id: EntityId, dx: i64, dy: i64) -> Option<DiagramPlan> {
    let mut p = plan.clone();
    p.layouts.insert(id, shifted(plan.layout(id)?, dx, dy)?);
    if id.kind == EntityKind::Object {
        for r in &plan.relationships {
            if r.kind == RelationKind::Labels && r.target == id {
                if let Some(lb) = plan.layout(r.source).and_then(|b| shifted(b, dx, dy)) {
                    p.layouts.insert(r.source, lb);
                }
            }
        }
    }
    Some(p)
}

/// Smallest whole-unit shift of `mover` along one axis direction that
/// brings its IoU with `fixed` to the threshold or below.
fn separation_distance(fixed: GridBox, mover: GridBox, axis_x: bool, sign: i64, threshold: f64) -> Option<i64> {
    let limit = i64::from(GRID) * 2;
    (1..=limit).find(|&d| {
        let (dx, dy) = if axis_x { (sign * d, 0) } else { (0, sign * d) };
        match shifted(mover, dx, dy) {
            Some(m) => iou(fixed, m) <= threshold,
            None => false,
        }
    })
}

fn separation_candidates(plan: &DiagramPlan, a: EntityId, b: EntityId, config: &AuditConfig) -> Vec<DiagramPlan> {
    let (fixed_id, mover_id) = if a < b { (a, b) } else { (b, a) };
    let (Some(fixed), Some(mover)) = (plan.layout(fixed_id), plan.layout(mover_id)) else {
        return Vec::new();
    };
    let pen_x = fixed.right().min(mover.right()).saturating_sub(fixed.x.max(mover.x));
    let pen_y = fixed.bottom().min(mover.bottom()).saturating_sub(fixed.y.max(mover.y));
    let (fcx, fcy) = fixed.center();
    let (mcx, mcy) = mover.center();
    let away_x = if mcx >= fcx { 1 } else { -1 };
    let away_y = if mcy >= fcy { 1 } else { -1 };
    // least-penetration axis first, ties go vertical; then the reverse
    // direction; then the other axis
    let order = if pen_x < pen_y {
        [(true, away_x), (true, -away_x), (false, away_y), (false, -away_y)]
    } else {
        [(false, away_y), (false, -away_y), (true, away_x), (true, -away_x)]
    };
    order
        .into_iter()
        .filter_map(|(axis_x, sign)| {
            let d = separation_distance(fixed, mover, axis_x, sign, config.overlap_iou)?;
            let (dx, dy) = if axis_x { (sign * d, 0) } else { (0, sign * d) };
            translate_with_labels(plan, mover_id, dx, dy)
        })
        .collect()
}

/// Places the label 2 units above its object, centered; below if there is
/// no room above.
fn label_candidates(plan: &DiagramPlan, label: EntityId, object: EntityId) -> Vec<DiagramPlan> {
    let (Some(lb), Some(ob)) = (plan.layout(label), plan.layout(object)) else {
        return Vec::new();
    };
    let cx = i64::from(ob.x) * 2 + i64::from(ob.w);
    let x = ((cx - i64::from(lb.w)) / 2).clamp(0, i64::from(GRID - lb.w));
    let mut out = Vec::new();
    let above = i64::from(ob.y) - 2 - i64::from(lb.h);
    let below = i64::from(ob.bottom()) + 2;
    for y in [above, below] {
        if let (Ok(x), Ok(y)) = (u32::try_from(x), u32::try_from(y)) {
            out.extend(with_box(plan, label, GridBox { x, y, ..lb }));
        }
    }
    out
}
