#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` deliberately rejects NaN

//! Valuation adjustments (ColVA, FVA, CVA, DVA) for derivatives portfolios,
//! with accounting and management perspectives selected by configuration.

pub mod collateral;
pub mod error;
pub mod exposure;
pub mod fixtures;
pub mod funding_ledger;
pub mod termstructures;
pub mod verification;
pub mod xva;

pub use collateral::{CsaMode, CsaTerms, FundingPositions, NettingHierarchy, NettingSet};
pub use error::{Result, XvaError};
pub use exposure::{Deal, DealKind, OptionType, Portfolio, RiskFactorModel, ScenarioCube, TimeGrid, Underlying};
pub use funding_ledger::{BondIssuance, FtpForm, IssuanceLedger};
pub use termstructures::{CurveKind, CurveSet, RecoverySchedule, TermCurve};
pub use verification::ResidualReport;
pub use xva::{
    run_engine, transition_report, EngineInputs, PerspectiveConfig, RunSettings, TransitionReport, XvaReport,
};
