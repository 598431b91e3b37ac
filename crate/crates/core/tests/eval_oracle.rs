//! Evaluation checked against a brute-force re-derivation in exact integer
//! arithmetic, on plans whose descriptions are single distinct words so
//! that matching reduces to equality.

use diagplan_core::eval::{evaluate, questions_from_gt, EvalConfig, EvalQuestion, Relation, Skill};
use diagplan_core::plan::{DiagramPlan, Entity, EntityId, GridBox, Relationship};
use proptest::prelude::*;

const VOCAB: &[&str] = &["alpha", "bravo", "charlie", "delta", "echo", "foxtrot"];

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct Spatial {
    subject: String,
    relation: u8,
    object: String,
    third: Option<String>,
}

/// Doubled center, so that it stays integral.
fn center2(b: GridBox) -> (i128, i128) {
    (2 * b.x as i128 + b.w as i128, 2 * b.y as i128 + b.h as i128)
}

// margin 2 on centers is 4 on doubled centers
fn left_of(a: GridBox, b: GridBox) -> bool {
    center2(a).0 + 4 <= center2(b).0
}

fn above(a: GridBox, b: GridBox) -> bool {
    center2(a).1 + 4 <= center2(b).1
}

// tolerance 10: cross^2 <= 100 * len2 in real units, 400 * len2 doubled
fn between(m: GridBox, a: GridBox, c: GridBox) -> bool {
    let (mx, my) = center2(m);
    let (ax, ay) = center2(a);
    let (cx, cy) = center2(c);
    let (dx, dy) = (cx - ax, cy - ay);
    let len2 = dx * dx + dy * dy;
    if len2 == 0 {
        return false;
    }
    let (px, py) = (mx - ax, my - ay);
    let dot = px * dx + py * dy;
    let cross = px * dy - py * dx;
    dot > 0 && dot < len2 && cross * cross <= 400 * len2
}

fn first_box(plan: &DiagramPlan, d: &str) -> Option<(EntityId, GridBox)> {
    for e in &plan.entities {
        if e.is_object() && e.description == d {
            return Some((e.id, plan.layouts[&e.id]));
        }
    }
    None
}

fn distinct_objects(plan: &DiagramPlan) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for e in &plan.entities {
        if e.is_object() && !out.contains(&e.description) {
            out.push(e.description.clone());
        }
    }
    out
}

fn oracle_questions(gt: &DiagramPlan) -> Vec<Spatial> {
    let ds = distinct_objects(gt);
    let mut out = Vec::new();
    for a in &ds {
        for b in &ds {
            if a == b {
                continue;
            }
            let (ba, bb) = (first_box(gt, a).unwrap().1, first_box(gt, b).unwrap().1);
            if left_of(ba, bb) {
                out.push(Spatial { subject: a.clone(), relation: 0, object: b.clone(), third: None });
            }
            if above(ba, bb) {
                out.push(Spatial { subject: a.clone(), relation: 1, object: b.clone(), third: None });
            }
        }
    }
    for m in &ds {
        for (i, a) in ds.iter().enumerate() {
            for c in &ds[i + 1..] {
                if m == a || m == c {
                    continue;
                }
                let boxes = (first_box(gt, m).unwrap().1, first_box(gt, a).unwrap().1, first_box(gt, c).unwrap().1);
                if between(boxes.0, boxes.1, boxes.2) {
                    out.push(Spatial { subject: m.clone(), relation: 2, object: a.clone(), third: Some(c.clone()) });
                }
            }
        }
    }
    out.sort();
    out
}

fn oracle_answer(candidate: &DiagramPlan, q: &Spatial) -> bool {
    let (Some((ia, a)), Some((ib, b))) = (first_box(candidate, &q.subject), first_box(candidate, &q.object)) else {
        return false;
    };
    if ia == ib {
        return false;
    }
    match q.relation {
        0 => left_of(a, b),
        1 => above(a, b),
        _ => {
            let Some((ic, c)) = first_box(candidate, q.third.as_deref().unwrap()) else { return false };
            ia != ic && ib != ic && between(a, b, c)
        }
    }
}

fn as_spatial(q: &EvalQuestion) -> Option<Spatial> {
    let EvalQuestion::Relationship { subject, relation, object, third } = q else { return None };
    let relation = match relation {
        Relation::LeftOf => 0,
        Relation::Above => 1,
        Relation::Between => 2,
        Relation::ArrowTo | Relation::LineTo => return None,
    };
    Some(Spatial { subject: subject.clone(), relation, object: object.clone(), third: third.clone() })
}

fn small_plan(unique: bool) -> impl Strategy<Value = DiagramPlan> {
    let boxes = prop::collection::vec(
        (0u32..=90, 0u32..=90, 1u32..=20, 1u32..=20).prop_map(|(x, y, w, h)| GridBox { x, y, w, h }),
        0..=8,
    );
    (boxes, prop::collection::vec(0usize..VOCAB.len(), 8), prop::collection::vec(any::<bool>(), 8), any::<u8>())
        .prop_map(move |(boxes, words, is_label, rel_seed)| {
            let mut plan = DiagramPlan::new("");
            let mut used = Vec::new();
            for (i, b) in boxes.into_iter().enumerate() {
                let mut w = words[i];
                if unique {
                    while used.contains(&w) && used.len() < VOCAB.len() {
                        w = (w + 1) % VOCAB.len();
                    }
                    if used.contains(&w) {
                        break;
                    }
                }
                used.push(w);
                let id = if is_label[i] { EntityId::label(i as u32) } else { EntityId::object(i as u32) };
                plan.push(Entity::new(id, VOCAB[w]), b);
            }
            let objs: Vec<_> = plan.objects().map(|e| e.id).collect();
            if objs.len() >= 2 {
                let a = objs[rel_seed as usize % objs.len()];
                let b = objs[(rel_seed as usize / 7 + 1) % objs.len()];
                if a != b {
                    plan.relationships.push(Relationship::arrow(a, b));
                }
            }
            plan
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn spatial_questions_match_oracle(gt in small_plan(false)) {
        let config = EvalConfig::default();
        let mut got: Vec<_> = questions_from_gt(&gt, &config).iter().filter_map(as_spatial).collect();
        got.sort();
        prop_assert_eq!(got, oracle_questions(&gt));
    }

    #[test]
    fn spatial_verdicts_match_oracle(gt in small_plan(false), candidate in small_plan(false)) {
        let config = EvalConfig::default();
        let questions = questions_from_gt(&gt, &config);
        let report = evaluate(&candidate, &questions, &config);
        for v in &report.verdicts {
            if let Some(q) = as_spatial(&v.question) {
                prop_assert_eq!(v.correct, oracle_answer(&candidate, &q), "{:?}", q);
            }
            if let EvalQuestion::Object { description } = &v.question {
                prop_assert_eq!(v.correct, first_box(&candidate, description).is_some());
            }
            if let EvalQuestion::Count { description, expected } = &v.question {
                let n = candidate.objects().filter(|e| &e.description == description).count();
                prop_assert_eq!(v.correct, n == *expected);
            }
        }
    }

    #[test]
    fn self_evaluation_is_perfect(gt in small_plan(false)) {
        let config = EvalConfig::default();
        let report = evaluate(&gt, &questions_from_gt(&gt, &config), &config);
        prop_assert!(report.verdicts.iter().all(|v| v.correct));
    }

    #[test]
    fn deleting_a_matched_entity_never_helps(gt in small_plan(false), candidate in small_plan(true), pick in any::<usize>()) {
        let config = EvalConfig::default();
        let questions = questions_from_gt(&gt, &config);
        let before = evaluate(&candidate, &questions, &config);
        let matched: Vec<_> = candidate
            .entities
            .iter()
            .filter(|e| gt.entities.iter().any(|g| g.kind() == e.kind() && g.description == e.description))
            .map(|e| e.id)
            .collect();
        prop_assume!(!matched.is_empty());
        let mut reduced = candidate.clone();
        reduced.remove(matched[pick % matched.len()]);
        let after = evaluate(&reduced, &questions, &config);
        for skill in Skill::ALL {
            prop_assert!(after.skill(skill).unwrap_or(0.0) <= before.skill(skill).unwrap_or(0.0));
        }
    }
}
