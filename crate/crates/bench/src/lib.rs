//! Fixtures shared by the benchmarks.

use nakasim_core::engine::run_trial;
use nakasim_core::presets;
use nakasim_core::scenario::ResolvedVariant;
use nakasim_core::RunTrace;

/// The `index`-th resolved variant of a shipped preset.
pub fn preset_variant(preset: &str, index: usize) -> ResolvedVariant {
    presets::load(preset).expect("shipped preset").variants().expect("valid preset").swap_remove(index)
}

/// A finished trace of one trial of a shipped preset variant.
pub fn preset_trace(preset: &str, index: usize, trial: u64) -> RunTrace {
    let v = preset_variant(preset, index);
    run_trial(&v.scenario, &v.label, trial).expect("trial runs").trace
}
