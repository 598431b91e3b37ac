//! Layout-level evaluation of a candidate plan against a ground-truth plan.
//!
//! Four skills are scored: object presence, exact object count, text label
//! presence, and relationships (connections plus spatial arrangement).
//! Questions are derived from the ground truth and answered geometrically
//! on the candidate's boxes, so scores are exact and reproducible.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::geometry::{is_between, spatial_relation, DEFAULT_BETWEEN_TOLERANCE, DEFAULT_MARGIN};
use crate::plan::{DiagramPlan, Entity, GridBox, RelationKind};

/// Lowercase, drop punctuation, collapse whitespace.
pub fn normalize(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut pending_space = false;
    for c in s.chars() {
        if c.is_whitespace() {
            pending_space = !out.is_empty();
        } else if c.is_alphanumeric() {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.extend(c.to_lowercase());
        }
    }
    out
}

/// Whether every token of `small` appears in `big`, counting multiplicity.
fn contains_tokens(big: &[&str], small: &[&str]) -> bool {
    let mut pool: Vec<&str> = big.to_vec();
    small.iter().all(|t| match pool.iter().position(|p| p == t) {
        Some(i) => {
            pool.swap_remove(i);
            true
        }
        None => false,
    })
}

/// Groups of phrases treated as the same thing, e.g. `["larva",
/// "caterpillar"]`. Phrases are compared after [`normalize`].
pub type Synonyms = [Vec<String>];

pub fn match_description(a: &str, b: &str, synonyms: &Synonyms) -> bool {
    let (na, nb) = (normalize(a), normalize(b));
    if na.is_empty() || nb.is_empty() {
        return false;
    }
    if na == nb {
        return true;
    }
    let ta: Vec<&str> = na.split(' ').collect();
    let tb: Vec<&str> = nb.split(' ').collect();
    if contains_tokens(&ta, &tb) || contains_tokens(&tb, &ta) {
        return true;
    }
    synonyms.iter().any(|group| {
        let hit = |n: &str| group.iter().any(|g| normalize(g) == n);
        hit(&na) && hit(&nb)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Skill {
    Object,
    Count,
    Text,
    Relationship,
}

impl Skill {
    pub const ALL: [Skill; 4] = [Skill::Object, Skill::Count, Skill::Text, Skill::Relationship];

    pub fn column(self) -> &'static str {
        match self {
            Skill::Object => "Object",
            Skill::Count => "Count",
            Skill::Text => "Text",
            Skill::Relationship => "Relationships",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    ArrowTo,
    LineTo,
    LeftOf,
    Above,
    Between,
}

impl Relation {
    pub fn is_spatial(self) -> bool {
        matches!(self, Relation::LeftOf | Relation::Above | Relation::Between)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "skill", rename_all = "snake_case")]
pub enum EvalQuestion {
    Object { description: String },
    Count { description: String, expected: usize },
    Text { text: String },
    /// `subject relation object`; for `Between`, `subject` lies between
    /// `object` and `third`.
    Relationship {
        subject: String,
        relation: Relation,
        object: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        third: Option<String>,
    },
}

impl EvalQuestion {
    pub fn skill(&self) -> Skill {
        match self {
            EvalQuestion::Object { .. } => Skill::Object,
            EvalQuestion::Count { .. } => Skill::Count,
            EvalQuestion::Text { .. } => Skill::Text,
            EvalQuestion::Relationship { .. } => Skill::Relationship,
        }
    }
}

/// Knobs shared by question generation and answering.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalConfig {
    #[serde(default)]
    pub synonyms: Vec<Vec<String>>,
}

const MARGIN: f64 = DEFAULT_MARGIN;
const TOLERANCE: f64 = DEFAULT_BETWEEN_TOLERANCE;

/// First object, in declaration order, whose description matches.
fn first_match<'p>(plan: &'p DiagramPlan, description: &str, config: &EvalConfig) -> Option<&'p Entity> {
    plan.objects().find(|e| match_description(description, &e.description, &config.synonyms))
}

fn object_box(plan: &DiagramPlan, description: &str, config: &EvalConfig) -> Option<(crate::plan::EntityId, GridBox)> {
    let e = first_match(plan, description, config)?;
    Some((e.id, plan.layout(e.id)?))
}

fn multiplicity(plan: &DiagramPlan, description: &str, config: &EvalConfig) -> usize {
    plan.objects().filter(|e| match_description(description, &e.description, &config.synonyms)).count()
}

/// Derives evaluation questions from a ground-truth plan.
///
/// Descriptions are resolved the same way the evaluator resolves them, so
/// a plan evaluated against its own questions always scores 100%.
pub fn questions_from_gt(gt: &DiagramPlan, config: &EvalConfig) -> Vec<EvalQuestion> {
    let mut descriptions: Vec<&str> = Vec::new();
    // descriptions that normalize to nothing can never be matched
    let matchable = |s: &str| !normalize(s).is_empty();
    for e in gt.objects().filter(|e| matchable(&e.description)) {
        if !descriptions.iter().any(|d| normalize(d) == normalize(&e.description)) {
            descriptions.push(&e.description);
        }
    }
    let mut out = Vec::new();
    for d in &descriptions {
        out.push(EvalQuestion::Object { description: (*d).into() });
    }
    for d in &descriptions {
        let n = multiplicity(gt, d, config);
        if n >= 2 {
            out.push(EvalQuestion::Count { description: (*d).into(), expected: n });
        }
    }
    for label in gt.labels().filter(|l| matchable(&l.description)) {
        out.push(EvalQuestion::Text { text: label.description.clone() });
    }
    for r in &gt.relationships {
        let relation = match r.kind {
            RelationKind::Arrow => Relation::ArrowTo,
            RelationKind::Line => Relation::LineTo,
            RelationKind::Labels => continue,
        };
        let (Some(s), Some(t)) = (gt.entity(r.source), gt.entity(r.target)) else { continue };
        if !matchable(&s.description) || !matchable(&t.description) {
            continue;
        }
        out.push(EvalQuestion::Relationship {
            subject: s.description.clone(),
            relation,
            object: t.description.clone(),
            third: None,
        });
    }

    let reps: Vec<_> = descriptions
        .iter()
        .filter_map(|d| object_box(gt, d, config).map(|(id, b)| (*d, id, b)))
        .collect();
    for (da, ia, ba) in &reps {
        for (db, ib, bb) in &reps {
            if ia == ib {
                continue;
            }
            let rel = spatial_relation(*ba, *bb, MARGIN);
            for (holds, relation) in [(rel.left_of, Relation::LeftOf), (rel.above, Relation::Above)] {
                if holds {
                    out.push(EvalQuestion::Relationship {
                        subject: (*da).into(),
                        relation,
                        object: (*db).into(),
                        third: None,
                    });
                }
            }
        }
    }
    for (dm, im, bm) in &reps {
        for (i, (da, ia, ba)) in reps.iter().enumerate() {
            for (dc, ic, bc) in &reps[i + 1..] {
                if im == ia || im == ic || ia == ic {
                    continue;
                }
                if is_between(*bm, *ba, *bc, TOLERANCE) {
                    out.push(EvalQuestion::Relationship {
                        subject: (*dm).into(),
                        relation: Relation::Between,
                        object: (*da).into(),
                        third: Some((*dc).into()),
                    });
                }
            }
        }
    }
    out
}

/// Answers one question on the candidate plan.
pub fn answer(candidate: &DiagramPlan, question: &EvalQuestion, config: &EvalConfig) -> bool {
    match question {
        EvalQuestion::Object { description } => first_match(candidate, description, config).is_some(),
        EvalQuestion::Count { description, expected } => multiplicity(candidate, description, config) == *expected,
        EvalQuestion::Text { text } => candidate
            .labels()
            .any(|l| match_description(text, &l.description, &config.synonyms)),
        EvalQuestion::Relationship { subject, relation, object, third } => match relation {
            Relation::ArrowTo | Relation::LineTo => {
                let kind = if *relation == Relation::ArrowTo { RelationKind::Arrow } else { RelationKind::Line };
                let matches = |id, d: &str| {
                    candidate
                        .entity(id)
                        .is_some_and(|e| e.is_object() && match_description(d, &e.description, &config.synonyms))
                };
                candidate.relationships.iter().filter(|r| r.kind == kind).any(|r| {
                    let forward = matches(r.source, subject) && matches(r.target, object);
                    let backward = matches(r.source, object) && matches(r.target, subject);
                    forward || (kind == RelationKind::Line && backward)
                })
            }
            Relation::LeftOf | Relation::Above => {
                let (Some((ia, a)), Some((ib, b))) =
                    (object_box(candidate, subject, config), object_box(candidate, object, config))
                else {
                    return false;
                };
                if ia == ib {
                    return false;
                }
                let rel = spatial_relation(a, b, MARGIN);
                if *relation == Relation::LeftOf { rel.left_of } else { rel.above }
            }
            Relation::Between => {
                let Some(third) = third else { return false };
                let (Some((im, m)), Some((ia, a)), Some((ic, c))) = (
                    object_box(candidate, subject, config),
                    object_box(candidate, object, config),
                    object_box(candidate, third, config),
                ) else {
                    return false;
                };
                if im == ia || im == ic || ia == ic {
                    return false;
                }
                is_between(m, a, c, TOLERANCE)
            }
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionVerdict {
    pub question: EvalQuestion,
    pub correct: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkillScore {
    pub skill: Skill,
    pub correct: usize,
    pub total: usize,
    /// Percentage, absent when the skill has no questions.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub verdicts: Vec<QuestionVerdict>,
    pub skills: Vec<SkillScore>,
    /// Mean over all questions, not the mean of skill accuracies.
    pub overall: Option<f64>,
}

fn percent(correct: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| 100.0 * correct as f64 / total as f64)
}

impl EvalReport {
    pub fn from_verdicts(verdicts: Vec<QuestionVerdict>) -> Self {
        let skills = Skill::ALL
            .into_iter()
            .map(|skill| {
                let of_skill = verdicts.iter().filter(|v| v.question.skill() == skill);
                let total = of_skill.clone().count();
                let correct = of_skill.filter(|v| v.correct).count();
                SkillScore { skill, correct, total, accuracy: percent(correct, total) }
            })
            .collect();
        let correct = verdicts.iter().filter(|v| v.correct).count();
        let overall = percent(correct, verdicts.len());
        EvalReport { verdicts, skills, overall }
    }

    pub fn skill(&self, skill: Skill) -> Option<f64> {
        self.skills.iter().find(|s| s.skill == skill).and_then(|s| s.accuracy)
    }

    /// Fixed-width table with one row of scores.
    pub fn table(&self) -> String {
        let cell = |v: Option<f64>| match v {
            Some(v) => alloc::format!("{v:>13.1}"),
            None => alloc::format!("{:>13}", "-"),
        };
        let mut out = String::new();
        for s in Skill::ALL {
            out.push_str(&alloc::format!("{:>13}", s.column()));
        }
        out.push_str(&alloc::format!("{:>13}\n", "Overall"));
        for s in Skill::ALL {
            out.push_str(&cell(self.skill(s)));
        }
        out.push_str(&cell(self.overall));
        out.push('\n');
        out
    }
}

pub fn evaluate(candidate: &DiagramPlan, questions: &[EvalQuestion], config: &EvalConfig) -> EvalReport {
    let verdicts = questions
        .iter()
        .map(|q| QuestionVerdict { question: q.clone(), correct: answer(candidate, q, config) })
        .collect();
    EvalReport::from_verdicts(verdicts)
}
