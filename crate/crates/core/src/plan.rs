//! Diagram plan data model: entities, relationships, and grid layouts.
//!
//! Boxes live on an integer 0..=100 grid with a top-left origin and `y`
//! growing downward. Boxes are stored as given, without clamping, so that an
//! auditor can see a box that runs past the canvas edge.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

/// Side length of the layout grid.
pub const GRID: u32 = 100;

/// Axis-aligned box on the 0..=100 layout grid, `[x, y, w, h]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "[u32; 4]", into = "[u32; 4]")]
pub struct GridBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum BoxError {
    #[error("origin ({x}, {y}) outside the 0..=100 grid")]
    Origin { x: u32, y: u32 },
    #[error("size {w}x{h} outside 1..=100")]
    Size { w: u32, h: u32 },
}

impl GridBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Result<Self, BoxError> {
        let b = GridBox { x, y, w, h };
        b.check()?;
        Ok(b)
    }

    /// Checks the field ranges. `x + w` past the grid edge is allowed.
    pub fn check(&self) -> Result<(), BoxError> {
        if self.x > GRID || self.y > GRID {
            return Err(BoxError::Origin { x: self.x, y: self.y });
        }
        if !(1..=GRID).contains(&self.w) || !(1..=GRID).contains(&self.h) {
            return Err(BoxError::Size { w: self.w, h: self.h });
        }
        Ok(())
    }

    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    pub fn area(&self) -> u64 {
        u64::from(self.w) * u64::from(self.h)
    }

    pub fn center(&self) -> (f64, f64) {
        (
            f64::from(self.x) + f64::from(self.w) / 2.0,
            f64::from(self.y) + f64::from(self.h) / 2.0,
        )
    }

    pub fn to_array(self) -> [u32; 4] {
        [self.x, self.y, self.w, self.h]
    }
}

impl TryFrom<[u32; 4]> for GridBox {
    type Error = BoxError;

    fn try_from([x, y, w, h]: [u32; 4]) -> Result<Self, Self::Error> {
        GridBox::new(x, y, w, h)
    }
}

impl From<GridBox> for [u32; 4] {
    fn from(b: GridBox) -> Self {
        b.to_array()
    }
}

impl fmt::Display for GridBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.x, self.y, self.w, self.h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Object,
    TextLabel,
}

impl EntityKind {
    fn prefix(self) -> char {
        match self {
            EntityKind::Object => 'I',
            EntityKind::TextLabel => 'T',
        }
    }
}

/// Entity identifier. The kind is part of the id: objects are `I<k>`, text
/// labels are `T<k>`. Ordering is kind first, then numeric index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityId {
    pub kind: EntityKind,
    pub index: u32,
}

impl EntityId {
    pub const fn object(index: u32) -> Self {
        EntityId { kind: EntityKind::Object, index }
    }

    pub const fn label(index: u32) -> Self {
        EntityId { kind: EntityKind::TextLabel, index }
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.kind.prefix(), self.index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid entity id {0:?}: expected I<k> or T<k>")]
pub struct BadEntityId(pub String);

impl FromStr for EntityId {
    type Err = BadEntityId;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || BadEntityId(String::from(s));
        let mut chars = s.chars();
        let kind = match chars.next() {
            Some('I') => EntityKind::Object,
            Some('T') => EntityKind::TextLabel,
            _ => return Err(bad()),
        };
        let digits = chars.as_str();
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let index = digits.parse().map_err(|_| bad())?;
        Ok(EntityId { kind, index })
    }
}

impl Serialize for EntityId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EntityId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct Visitor;
        impl serde::de::Visitor<'_> for Visitor {
            type Value = EntityId;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("an entity id such as I0 or T3")
            }
            fn visit_str<E: serde::de::Error>(self, v: &str) -> Result<EntityId, E> {
                v.parse().map_err(E::custom)
            }
        }
        d.deserialize_str(Visitor)
    }
}

/// An object (drawn as an icon or shape) or a text label (drawn as text).
/// For a text label, `description` is the literal string to render.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "EntityRepr", into = "EntityRepr")]
pub struct Entity {
    pub id: EntityId,
    pub description: String,
}

impl Entity {
    pub fn new(id: EntityId, description: impl Into<String>) -> Self {
        Entity { id, description: description.into() }
    }

    pub fn kind(&self) -> EntityKind {
        self.id.kind
    }

    pub fn is_object(&self) -> bool {
        self.id.kind == EntityKind::Object
    }
}

#[derive(Serialize, Deserialize)]
struct EntityRepr {
    id: EntityId,
    kind: EntityKind,
    description: String,
}

impl TryFrom<EntityRepr> for Entity {
    type Error = String;

    fn try_from(r: EntityRepr) -> Result<Self, Self::Error> {
        if r.id.kind != r.kind {
            return Err(alloc::format!("entity {} declared with kind {:?}", r.id, r.kind));
        }
        Ok(Entity { id: r.id, description: r.description })
    }
}

impl From<Entity> for EntityRepr {
    fn from(e: Entity) -> Self {
        EntityRepr { id: e.id, kind: e.id.kind, description: e.description }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationKind {
    Arrow,
    Line,
    Labels,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Relationship {
    pub source: EntityId,
    pub target: EntityId,
    pub kind: RelationKind,
}

impl Relationship {
    pub fn arrow(source: EntityId, target: EntityId) -> Self {
        Relationship { source, target, kind: RelationKind::Arrow }
    }

    pub fn line(source: EntityId, target: EntityId) -> Self {
        Relationship { source, target, kind: RelationKind::Line }
    }

    pub fn labels(label: EntityId, object: EntityId) -> Self {
        Relationship { source: label, target: object, kind: RelationKind::Labels }
    }

    /// Arrow or line between two objects.
    pub fn is_connection(&self) -> bool {
        matches!(self.kind, RelationKind::Arrow | RelationKind::Line)
    }

    pub fn joins(&self, a: EntityId, b: EntityId) -> bool {
        (self.source == a && self.target == b) || (self.source == b && self.target == a)
    }
}

/// Entities, relationships between them, and a layout box per entity.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DiagramPlan {
    #[serde(default)]
    pub caption: String,
    #[serde(default)]
    pub entities: Vec<Entity>,
    #[serde(default)]
    pub relationships: Vec<Relationship>,
    #[serde(default)]
    pub layouts: BTreeMap<EntityId, GridBox>,
}

impl DiagramPlan {
    pub fn new(caption: impl Into<String>) -> Self {
        DiagramPlan { caption: caption.into(), ..Default::default() }
    }

    pub fn entity(&self, id: EntityId) -> Option<&Entity> {
        self.entities.iter().find(|e| e.id == id)
    }

    pub fn layout(&self, id: EntityId) -> Option<GridBox> {
        self.layouts.get(&id).copied()
    }

    pub fn objects(&self) -> impl Iterator<Item = &Entity> {
        self.entities.iter().filter(|e| e.is_object())
    }

    pub fn labels(&self) -> impl Iterator<Item = &Entity> {
        self.entities.iter().filter(|e| !e.is_object())
    }

    pub fn count_relations(&self, kind: RelationKind) -> usize {
        self.relationships.iter().filter(|r| r.kind == kind).count()
    }

    /// Objects labelled by `label` through a Labels relationship.
    pub fn labelled_objects(&self, label: EntityId) -> impl Iterator<Item = EntityId> + '_ {
        self.relationships
            .iter()
            .filter(move |r| r.kind == RelationKind::Labels && r.source == label)
            .map(|r| r.target)
    }

    /// Adds an entity with its layout box.
    pub fn push(&mut self, entity: Entity, layout: GridBox) {
        self.layouts.insert(entity.id, layout);
        self.entities.push(entity);
    }

    /// Removes an entity, its layout, and every relationship touching it.
    pub fn remove(&mut self, id: EntityId) -> Option<Entity> {
        let pos = self.entities.iter().position(|e| e.id == id)?;
        self.layouts.remove(&id);
        self.relationships.retain(|r| r.source != id && r.target != id);
        Some(self.entities.remove(pos))
    }

    pub fn validate(&self) -> Vec<StructuralViolation> {
        validate_structure(self)
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StructuralViolation {
    #[error("entity {id} is declared more than once")]
    DuplicateId { id: EntityId },
    #[error("{id} is referenced but never declared")]
    DanglingReference { id: EntityId },
    #[error("entity {id} has no layout box")]
    MissingLayout { id: EntityId },
    #[error("layout box for {id} is invalid: {reason}")]
    InvalidBox { id: EntityId, reason: String },
    #[error("relationship {from} -> {to} connects an entity to itself")]
    SelfLoop { from: EntityId, to: EntityId },
    #[error("{from} labels {to}: labels must go from a text label to an object")]
    BadLabelsLink { from: EntityId, to: EntityId },
    #[error("{from} -> {to}: arrows and lines must connect two objects")]
    BadConnection { from: EntityId, to: EntityId },
    #[error("text label {id} has empty text")]
    EmptyLabel { id: EntityId },
    #[error("description of {id} must be trimmed single-line text")]
    BadDescription { id: EntityId },
}

impl StructuralViolation {
    pub fn subject(&self) -> EntityId {
        match self {
            StructuralViolation::DuplicateId { id }
            | StructuralViolation::DanglingReference { id }
            | StructuralViolation::MissingLayout { id }
            | StructuralViolation::InvalidBox { id, .. }
            | StructuralViolation::EmptyLabel { id }
            | StructuralViolation::BadDescription { id } => *id,
            StructuralViolation::SelfLoop { from, .. }
            | StructuralViolation::BadLabelsLink { from, .. }
            | StructuralViolation::BadConnection { from, .. } => *from,
        }
    }
}

fn description_ok(s: &str) -> bool {
    !s.is_empty() && s.trim() == s && !s.contains(['\n', '\r'])
}

/// Lists every violated plan invariant. An empty list means the plan is
/// structurally valid.
pub fn validate_structure(plan: &DiagramPlan) -> Vec<StructuralViolation> {
    use StructuralViolation as V;
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for e in &plan.entities {
        if !seen.insert(e.id) {
            out.push(V::DuplicateId { id: e.id });
        }
        if e.description.is_empty() && !e.is_object() {
            out.push(V::EmptyLabel { id: e.id });
        } else if !description_ok(&e.description) {
            out.push(V::BadDescription { id: e.id });
        }
        match plan.layouts.get(&e.id) {
            None => out.push(V::MissingLayout { id: e.id }),
            Some(b) => {
                if let Err(err) = b.check() {
                    out.push(V::InvalidBox { id: e.id, reason: alloc::format!("{err}") });
                }
            }
        }
    }

    let mut dangling = BTreeSet::new();
    for r in &plan.relationships {
        let (s, t) = (r.source, r.target);
        let s_known = seen.contains(&s);
        let t_known = seen.contains(&t);
        if !s_known && dangling.insert(s) {
            out.push(V::DanglingReference { id: s });
        }
        if !t_known && dangling.insert(t) {
            out.push(V::DanglingReference { id: t });
        }
        if s == t {
            out.push(V::SelfLoop { from: s, to: t });
            continue;
        }
        match r.kind {
            RelationKind::Labels => {
                if s.kind != EntityKind::TextLabel || t.kind != EntityKind::Object {
                    out.push(V::BadLabelsLink { from: s, to: t });
                }
            }
            RelationKind::Arrow | RelationKind::Line => {
                if s.kind != EntityKind::Object || t.kind != EntityKind::Object {
                    out.push(V::BadConnection { from: s, to: t });
                }
            }
        }
    }
    for id in plan.layouts.keys() {
        if !seen.contains(id) && dangling.insert(*id) {
            out.push(V::DanglingReference { id: *id });
        }
    }
    out
}
