//! Valuation adjustments under a configurable perspective.

pub mod config;
pub mod engine;
pub mod report;
pub mod stats;
pub mod weights;

pub use config::{
    FundingAggregation, FundingRateSource, FundingSymmetry, MarginValuation, PerspectiveConfig, SurvivalMode,
};
pub use engine::{prepare, resolve_curves, run_engine, run_prepared, EngineInputs, EnginePlan, ResolvedCurves, RunSettings};
pub use report::{transition_report, LegalEntityReport, Metrics, NettingSetReport, RunMetadata, TransitionReport, XvaReport};
pub use stats::{Estimate, RunningStats};
pub use weights::{NettingSetWeights, WeightCurves};
