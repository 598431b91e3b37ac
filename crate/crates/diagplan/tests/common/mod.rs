#![allow(dead_code)]

use std::path::PathBuf;

use diagplan_core::dsl::parse_plan;
use diagplan_core::plan::DiagramPlan;

pub const BUTTERFLY_CAPTION: &str =
    "A diagram showing the life cycle of a butterfly, going from an egg to larva to pupa to an adult butterfly and repeating.";
pub const BUTTERFLY_TOPIC: &str = "biology";

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn core_fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

pub fn butterfly() -> DiagramPlan {
    parse_plan(&std::fs::read_to_string(core_fixture("butterfly.plan")).unwrap(), BUTTERFLY_CAPTION).unwrap()
}
