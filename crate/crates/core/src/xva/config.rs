use serde::{Deserialize, Serialize};

use crate::error::{Result, XvaError};
use crate::funding_ledger::FtpForm;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FundingRateSource {
    /// Accounting FTP estimated from the issuance ledger.
    AccountingLiquidity,
    /// Average issued-bond yield from the issuance ledger.
    ManagementYield,
    /// A curve supplied with the market data.
    Explicit { curve_id: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurvivalMode {
    Unilateral,
    FirstToDefault,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FundingSymmetry {
    Symmetric,
    /// Borrow where the funding position is positive, lend where negative.
    /// The borrow curve defaults to the resolved funding curve.
    Asymmetric {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        borrow_curve_id: Option<String>,
        lend_curve_id: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FundingAggregation {
    PerNettingSetSum,
    LegalEntitySingleSet,
}

/// Curve used to value the deals behind each CSA's margin balance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginValuation {
    /// The CSA remuneration curve: the balance does not move with the
    /// system marking curve.
    CsaCurve,
    /// The system marking curve.
    SystemMarking,
}

/// The objects of selection that distinguish accounting from management
/// valuation. Exit price is always the system-marked value and discounting
/// always uses the resolved funding curve; neither is configurable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerspectiveConfig {
    pub name: String,
    pub funding_rate_source: FundingRateSource,
    pub ftp_form: FtpForm,
    pub survival_mode: SurvivalMode,
    pub include_dva: bool,
    /// Zero bank hazard everywhere (no DVA, no bank survival in weights).
    pub bank_default_free: bool,
    pub funding_symmetry: FundingSymmetry,
    pub funding_aggregation: FundingAggregation,
    pub margin_valuation: MarginValuation,
    /// System marking curve; when absent the single `discount` curve is used.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub marking_curve_id: Option<String>,
}

impl Default for PerspectiveConfig {
    fn default() -> Self {
        Self::accounting()
    }
}

impl PerspectiveConfig {
    pub fn accounting() -> Self {
        PerspectiveConfig {
            name: "accounting".into(),
            funding_rate_source: FundingRateSource::AccountingLiquidity,
            ftp_form: FtpForm::Approximate,
            survival_mode: SurvivalMode::Unilateral,
            include_dva: true,
            bank_default_free: false,
            funding_symmetry: FundingSymmetry::Symmetric,
            funding_aggregation: FundingAggregation::PerNettingSetSum,
            margin_valuation: MarginValuation::CsaCurve,
            marking_curve_id: None,
        }
    }

    /// Bank default free: first-to-default collapses to unilateral CVA and DVA vanishes.
    pub fn management() -> Self {
        PerspectiveConfig {
            name: "management".into(),
            funding_rate_source: FundingRateSource::ManagementYield,
            survival_mode: SurvivalMode::FirstToDefault,
            include_dva: false,
            bank_default_free: true,
            ..Self::accounting()
        }
    }

    /// Management preset with an explicit (e.g. collateral-optimised) funding curve.
    pub fn management_with_rate(curve_id: &str) -> Self {
        PerspectiveConfig {
            funding_rate_source: FundingRateSource::Explicit {
                curve_id: curve_id.into(),
            },
            ..Self::management()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if matches!(self.funding_symmetry, FundingSymmetry::Asymmetric { .. })
            && self.funding_aggregation != FundingAggregation::LegalEntitySingleSet
        {
            return Err(XvaError::Config(
                "asymmetric funding rates require legal_entity_single_set aggregation".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        let a = PerspectiveConfig::accounting();
        assert_eq!(a.survival_mode, SurvivalMode::Unilateral);
        assert!(a.include_dva && !a.bank_default_free);
        let m = PerspectiveConfig::management();
        assert_eq!(m.funding_rate_source, FundingRateSource::ManagementYield);
        assert!(!m.include_dva && m.bank_default_free);
        assert_eq!(m.funding_symmetry, FundingSymmetry::Symmetric);
        a.validate().unwrap();
        m.validate().unwrap();
    }

    #[test]
    fn asymmetric_needs_single_set() {
        let mut c = PerspectiveConfig::accounting();
        c.funding_symmetry = FundingSymmetry::Asymmetric {
            borrow_curve_id: None,
            lend_curve_id: "ois".into(),
        };
        assert!(matches!(c.validate(), Err(XvaError::Config(_))));
        c.funding_aggregation = FundingAggregation::LegalEntitySingleSet;
        c.validate().unwrap();
    }

    #[test]
    fn partial_file_overrides_accounting() {
        let c: PerspectiveConfig = serde_json::from_str(
            r#"{"name":"custom","survival_mode":"first_to_default",
                "funding_rate_source":{"kind":"explicit","curve_id":"opt"}}"#,
        )
        .unwrap();
        assert_eq!(c.survival_mode, SurvivalMode::FirstToDefault);
        assert!(c.include_dva);
        assert!(serde_json::from_str::<PerspectiveConfig>(r#"{"typo":1}"#).is_err());
    }
}
