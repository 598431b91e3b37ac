//! Text form of a diagram plan.
//!
//! ```text
//! Required Entities:
//! egg image (I0)
//! "egg" text label (T0)
//! Entity Relationships:
//! T0 labels I0
//! Entity Locations:
//! I0 is located at [24, 50, 14, 14]
//! T0 is located at [20, 44, 10, 4]
//! ```
//!
//! The caption is not part of the text and is passed alongside it.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use crate::plan::{
    validate_structure, DiagramPlan, Entity, EntityId, EntityKind, GridBox, RelationKind,
    Relationship, StructuralViolation,
};

pub const ENTITIES_HEADER: &str = "Required Entities:";
pub const RELATIONSHIPS_HEADER: &str = "Entity Relationships:";
pub const LOCATIONS_HEADER: &str = "Entity Locations:";

const OBJECT_MARK: &str = " image (";
const LABEL_MARK: &str = " text label (";
const ARROW_MARK: &str = " has an arrow to ";
const LINE_MARK: &str = " has a line to ";
const LABELS_MARK: &str = " labels ";
const LOCATED_MARK: &str = " is located at ";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("line {line}: expected {expected}, found {text:?}")]
    Syntax { line: usize, text: String, expected: &'static str },
    #[error("line {line}: {id} is not declared")]
    DanglingReference { line: usize, id: EntityId },
    #[error("line {line}: {id} is declared twice")]
    DuplicateEntity { line: usize, id: EntityId },
    #[error("line {line}: {violation}")]
    BadRelationship { line: usize, violation: StructuralViolation },
    #[error("entity {id} has no location line")]
    MissingLayout { id: EntityId },
}

impl ParseError {
    /// 1-based input line, where one applies.
    pub fn line(&self) -> Option<usize> {
        match self {
            ParseError::Syntax { line, .. }
            | ParseError::DanglingReference { line, .. }
            | ParseError::DuplicateEntity { line, .. }
            | ParseError::BadRelationship { line, .. } => Some(*line),
            ParseError::MissingLayout { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseWarning {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseOutput {
    pub plan: DiagramPlan,
    pub warnings: Vec<ParseWarning>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Preamble,
    Entities,
    Relationships,
    Locations,
}

/// Recognizes a section header, ignoring case and surrounding markdown
/// emphasis such as `**Required Entities:**`.
pub fn header_of(line: &str) -> Option<&'static str> {
    let t = line.trim().trim_matches(|c| c == '*' || c == '_' || c == '#').trim();
    [ENTITIES_HEADER, RELATIONSHIPS_HEADER, LOCATIONS_HEADER]
        .into_iter()
        .find(|h| t.eq_ignore_ascii_case(h))
}

fn section_of(header: &str) -> Section {
    match header {
        ENTITIES_HEADER => Section::Entities,
        RELATIONSHIPS_HEADER => Section::Relationships,
        _ => Section::Locations,
    }
}

/// Parses plan text. Unknown lines are skipped and reported as warnings.
pub fn parse_plan(text: &str, caption: &str) -> Result<DiagramPlan, ParseError> {
    parse_plan_with_warnings(text, caption).map(|o| o.plan)
}

pub fn parse_plan_with_warnings(text: &str, caption: &str) -> Result<ParseOutput, ParseError> {
    let mut section = Section::Preamble;
    let mut warnings = Vec::new();
    let mut entities: Vec<(usize, Entity)> = Vec::new();
    let mut relationships: Vec<(usize, Relationship)> = Vec::new();
    let mut locations: BTreeMap<EntityId, (usize, GridBox)> = BTreeMap::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(h) = header_of(line) {
            section = section_of(h);
            continue;
        }
        let mut skip = |what: &str| {
            warnings.push(ParseWarning {
                line: line_no,
                message: alloc::format!("skipped {what} line: {line:?}"),
            })
        };
        match section {
            Section::Preamble => skip("unrecognized"),
            Section::Entities => match parse_entity(line, line_no)? {
                Some(e) => entities.push((line_no, e)),
                None => skip("unrecognized"),
            },
            Section::Relationships => match parse_relationship(line, line_no)? {
                Some(r) => relationships.push((line_no, r)),
                None => skip("unrecognized"),
            },
            Section::Locations => match parse_location(line, line_no)? {
                Some((id, b)) => {
                    if let Some((prev, _)) = locations.insert(id, (line_no, b)) {
                        warnings.push(ParseWarning {
                            line: line_no,
                            message: alloc::format!(
                                "{id} located again (first on line {prev}); keeping this one"
                            ),
                        });
                    }
                }
                None => skip("unrecognized"),
            },
        }
    }

    let mut plan = DiagramPlan::new(caption);
    for (line, e) in entities {
        if plan.entity(e.id).is_some() {
            return Err(ParseError::DuplicateEntity { line, id: e.id });
        }
        plan.entities.push(e);
    }
    let declared = |id: EntityId| plan.entities.iter().any(|e| e.id == id);
    for (line, r) in &relationships {
        for id in [r.source, r.target] {
            if !declared(id) {
                return Err(ParseError::DanglingReference { line: *line, id });
            }
        }
    }
    for (id, (line, _)) in &locations {
        if !declared(*id) {
            return Err(ParseError::DanglingReference { line: *line, id: *id });
        }
    }
    plan.relationships = relationships.into_iter().map(|(_, r)| r).collect();
    plan.layouts = locations.into_iter().map(|(id, (_, b))| (id, b)).collect();
    if let Some(e) = plan.entities.iter().find(|e| !plan.layouts.contains_key(&e.id)) {
        return Err(ParseError::MissingLayout { id: e.id });
    }
    debug_assert_eq!(validate_structure(&plan), []);
    Ok(ParseOutput { plan, warnings })
}

fn syntax(line: usize, text: &str, expected: &'static str) -> ParseError {
    ParseError::Syntax { line, text: text.to_string(), expected }
}

/// Parses `(I<k>)` / `(T<k>)` at the end of an entity line.
fn trailing_id(rest: &str) -> Option<EntityId> {
    rest.strip_suffix(')')?.trim().parse().ok()
}

const ENTITY_EXPECTED: &str = "`<description> image (I<k>)` or `\"<label>\" text label (T<k>)`";

fn parse_entity(line: &str, line_no: usize) -> Result<Option<Entity>, ParseError> {
    let declared = |mark: &str, kind: EntityKind| {
        let pos = line.rfind(mark)?;
        let id = trailing_id(&line[pos + mark.len()..]).filter(|id| id.kind == kind)?;
        Some((id, line[..pos].trim()))
    };
    if let Some((id, quoted)) = declared(LABEL_MARK, EntityKind::TextLabel) {
        let text = unquote(quoted).ok_or_else(|| syntax(line_no, line, ENTITY_EXPECTED))?;
        if text.is_empty() || text.trim() != text {
            return Err(syntax(line_no, line, "non-empty label text"));
        }
        return Ok(Some(Entity::new(id, text)));
    }
    if let Some((id, desc)) = declared(OBJECT_MARK, EntityKind::Object) {
        if desc.is_empty() {
            return Err(syntax(line_no, line, "non-empty object description"));
        }
        return Ok(Some(Entity::new(id, desc)));
    }
    // A line ending in an id, or carrying either marker, is a malformed
    // declaration rather than stray prose.
    let ends_in_id =
        line.ends_with(')') && line.rfind('(').and_then(|p| trailing_id(&line[p + 1..])).is_some();
    if ends_in_id || line.contains(OBJECT_MARK) || line.contains(LABEL_MARK) {
        return Err(syntax(line_no, line, ENTITY_EXPECTED));
    }
    Ok(None)
}

fn unquote(s: &str) -> Option<String> {
    let inner = s
        .strip_prefix('"')
        .and_then(|s| s.strip_suffix('"'))
        .or_else(|| s.strip_prefix('\u{201c}').and_then(|s| s.strip_suffix('\u{201d}')))
        .or_else(|| s.strip_prefix("``").and_then(|s| s.strip_suffix("''")))?;
    let mut out = String::with_capacity(inner.len());
    let mut chars = inner.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some(n @ ('"' | '\\')) => out.push(n),
                Some(n) => {
                    out.push('\\');
                    out.push(n);
                }
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    Some(out)
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        if c == '"' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
    out
}

fn leading_id(line: &str) -> Option<(EntityId, &str)> {
    let end = line.find(char::is_whitespace).unwrap_or(line.len());
    let id = line[..end].parse().ok()?;
    Some((id, &line[end..]))
}

const RELATIONSHIP_EXPECTED: &str =
    "`<id> has an arrow to <id>`, `<id> has a line to <id>`, or `<id> labels <id>`";

fn parse_relationship(line: &str, line_no: usize) -> Result<Option<Relationship>, ParseError> {
    let Some((source, rest)) = leading_id(line) else {
        return Ok(None);
    };
    let rest = alloc::format!(" {}", rest.trim_start());
    let (kind, target) = [
        (ARROW_MARK, RelationKind::Arrow),
        (LINE_MARK, RelationKind::Line),
        (LABELS_MARK, RelationKind::Labels),
    ]
    .into_iter()
    .find_map(|(mark, kind)| rest.strip_prefix(mark).map(|t| (kind, t.trim())))
    .ok_or_else(|| syntax(line_no, line, RELATIONSHIP_EXPECTED))?;
    let target: EntityId = target
        .trim_end_matches('.')
        .parse()
        .map_err(|_| syntax(line_no, line, RELATIONSHIP_EXPECTED))?;
    let rel = Relationship { source, target, kind };
    let violation = if source == target {
        Some(StructuralViolation::SelfLoop { from: source, to: target })
    } else {
        match kind {
            RelationKind::Labels
                if source.kind != EntityKind::TextLabel || target.kind != EntityKind::Object =>
            {
                Some(StructuralViolation::BadLabelsLink { from: source, to: target })
            }
            RelationKind::Arrow | RelationKind::Line
                if source.kind != EntityKind::Object || target.kind != EntityKind::Object =>
            {
                Some(StructuralViolation::BadConnection { from: source, to: target })
            }
            _ => None,
        }
    };
    match violation {
        Some(violation) => Err(ParseError::BadRelationship { line: line_no, violation }),
        None => Ok(Some(rel)),
    }
}

const LOCATION_EXPECTED: &str = "`<id> is located at [x, y, w, h]` with 0<=x,y<=100 and 1<=w,h<=100";

fn parse_location(line: &str, line_no: usize) -> Result<Option<(EntityId, GridBox)>, ParseError> {
    let err = || syntax(line_no, line, LOCATION_EXPECTED);
    let Some((id, rest)) = leading_id(line) else {
        return if line.contains(LOCATED_MARK) { Err(err()) } else { Ok(None) };
    };
    let rest = alloc::format!(" {}", rest.trim_start());
    let body = rest
        .strip_prefix(LOCATED_MARK)
        .map(str::trim)
        .map(|s| s.trim_end_matches('.'))
        .and_then(|s| s.strip_prefix('['))
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(err)?;
    let mut nums = [0u32; 4];
    let mut parts = body.split(',');
    for n in &mut nums {
        *n = parts.next().and_then(|p| p.trim().parse().ok()).ok_or_else(err)?;
    }
    if parts.next().is_some() {
        return Err(err());
    }
    let b = GridBox::try_from(nums).map_err(|_| err())?;
    Ok(Some((id, b)))
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("plan is structurally invalid ({} violation(s))", .0.len())]
pub struct InvalidPlan(pub Vec<StructuralViolation>);

/// Writes the canonical text form: the three sections in declaration order,
/// one declaration per line, with a trailing newline.
pub fn serialize_plan(plan: &DiagramPlan) -> Result<String, InvalidPlan> {
    let violations = validate_structure(plan);
    if !violations.is_empty() {
        return Err(InvalidPlan(violations));
    }
    Ok(write_plan(plan))
}

/// Canonical text of a plan already known to be valid.
pub(crate) fn write_plan(plan: &DiagramPlan) -> String {
    let mut out = String::new();
    out.push_str(ENTITIES_HEADER);
    out.push('\n');
    for e in &plan.entities {
        let _ = match e.kind() {
            EntityKind::Object => writeln!(out, "{}{}{})", e.description, OBJECT_MARK, e.id),
            EntityKind::TextLabel => writeln!(out, "{}{}{})", quote(&e.description), LABEL_MARK, e.id),
        };
    }
    out.push_str(RELATIONSHIPS_HEADER);
    out.push('\n');
    for r in &plan.relationships {
        let mark = match r.kind {
            RelationKind::Arrow => ARROW_MARK,
            RelationKind::Line => LINE_MARK,
            RelationKind::Labels => LABELS_MARK,
        };
        let _ = writeln!(out, "{}{}{}", r.source, mark, r.target);
    }
    out.push_str(LOCATIONS_HEADER);
    out.push('\n');
    for e in &plan.entities {
        if let Some(b) = plan.layouts.get(&e.id) {
            let _ = writeln!(out, "{}{}{}", e.id, LOCATED_MARK, b);
        }
    }
    out
}

#[cfg(test)]
pub(crate) const BUTTERFLY_TEXT: &str = "\
Required Entities:
egg image (I0)
larva image (I1)
pupa image (I2)
adult butterfly image (I3)
\"egg\" text label (T0)
\"larva\" text label (T1)
\"pupa\" text label (T2)
\"adult butterfly\" text label (T3)
Entity Relationships:
I3 has an arrow to I0
T3 labels I3
I1 has an arrow to I2
T0 labels I0
I0 has an arrow to I1
T2 labels I2
I2 has an arrow to I3
T1 labels I1
Entity Locations:
I0 is located at [24, 50, 14, 14]
I1 is located at [50, 74, 14, 14]
I2 is located at [74, 50, 14, 14]
I3 is located at [50, 24, 14, 14]
T0 is located at [20, 44, 10, 4]
T1 is located at [44, 80, 10, 4]
T2 is located at [80, 44, 10, 4]
T3 is located at [44, 20, 10, 4]
";
