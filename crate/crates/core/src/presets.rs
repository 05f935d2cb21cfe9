//! Scenarios shipped with the simulator.

use crate::error::{Error, Result};
use crate::scenario::ScenarioDoc;

pub const PRESETS: &[(&str, &str)] = &[
    ("prop1_rental_doublespend", include_str!("../presets/prop1_rental_doublespend.toml")),
    ("prop2_bribery", include_str!("../presets/prop2_bribery.toml")),
    ("partition_na_sa", include_str!("../presets/partition_na_sa.toml")),
    ("thm1_stubborn_unbounded", include_str!("../presets/thm1_stubborn_unbounded.toml")),
    ("thm2_liveness", include_str!("../presets/thm2_liveness.toml")),
    ("thm3_recovery", include_str!("../presets/thm3_recovery.toml")),
    ("thm4_split_brain", include_str!("../presets/thm4_split_brain.toml")),
    ("history_rewrite", include_str!("../presets/history_rewrite.toml")),
    ("bounds_montecarlo", include_str!("../presets/bounds_montecarlo.toml")),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

pub fn source(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn load(name: &str) -> Result<ScenarioDoc> {
    let text = source(name).ok_or_else(|| Error::Scenario {
        path: name.into(),
        message: format!("unknown preset; known presets: {}", names().collect::<Vec<_>>().join(", ")),
    })?;
    ScenarioDoc::parse(&format!("preset:{name}"), text)
}
