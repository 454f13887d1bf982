#![allow(dead_code)]

use std::path::PathBuf;

use contactplan::sim::{load_scenario_with, Scenario};
use serde_json::json;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

/// A fixture with its scripted contacts removed, for driving pushes by hand.
pub fn quiet(name: &str) -> Scenario {
    load_scenario_with(
        fixture_path(&format!("{name}.json")),
        &[("contacts".into(), json!([]))],
    )
    .unwrap()
}
