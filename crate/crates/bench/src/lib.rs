//! Shared setups for the criterion benches.

use xva_core::exposure::TimeGrid;
use xva_core::fixtures;
use xva_core::xva::{PerspectiveConfig, RunSettings};
use xva_core::EngineInputs;

/// The stochastic three-netting-set fixture on a weekly grid.
pub fn stochastic_case(n_paths: usize) -> (EngineInputs, PerspectiveConfig, RunSettings) {
    (
        fixtures::invariance_stochastic(),
        PerspectiveConfig::accounting(),
        RunSettings::new(n_paths, 7, 1.0 / 52.0),
    )
}

pub fn weekly_grid(inputs: &EngineInputs) -> TimeGrid {
    TimeGrid::for_deals(1.0 / 52.0, &inputs.portfolio.deals).expect("fixture deals are valid")
}
