//! Small desk-scale portfolios shared by tests, benches and `verify`.
//!
//! All fixtures mark on an OIS curve with id `"ois"` and fund through a
//! two-bond issuance ledger unless noted otherwise.

use crate::collateral::{CsaMode, CsaTerms, HierarchyFile, NettingHierarchy, NettingSet};
use crate::error::Result;
use crate::exposure::{Deal, OptionType, Portfolio, PortfolioFile, RiskFactorModel, Underlying};
use crate::funding_ledger::{BondIssuance, IssuanceLedger, LedgerFile};
use crate::termstructures::{
    curve_combine, CombineOp, CurveDocument, CurveKind, CurveSet, RecoverySchedule, TermCurve,
};
use crate::xva::{EngineInputs, FundingAggregation, FundingSymmetry, PerspectiveConfig};

pub const OIS_ID: &str = "ois";
pub const SHIFTED_OIS_ID: &str = "ois_plus_2pct";
pub const LEND_ID: &str = "ois_lend";

pub fn ois_curve() -> TermCurve {
    TermCurve::new(OIS_ID, &[(0.0, 0.015), (2.0, 0.02), (4.0, 0.022)]).expect("valid pillars")
}

/// OIS + 2%, the alternative marking curve of the invariance checks.
pub fn shifted_ois_curve() -> TermCurve {
    let shift = TermCurve::flat("shift", 0.02).expect("valid");
    curve_combine(&ois_curve(), &shift, CombineOp::Add).with_id(SHIFTED_OIS_ID)
}

fn bonds(cds: [f64; 2]) -> Vec<BondIssuance> {
    vec![
        BondIssuance {
            issue_time: -3.0,
            maturity: 5.0,
            notional: 400.0,
            ois: 0.015,
            cds: cds[0],
            liquidity: 0.004,
        },
        BondIssuance {
            issue_time: -1.0,
            maturity: 7.0,
            notional: 600.0,
            ois: 0.02,
            cds: cds[1],
            liquidity: 0.006,
        },
    ]
}

/// Ledger with positive historical and current CDS (defaultable bank).
pub fn standard_ledger() -> IssuanceLedger {
    IssuanceLedger::new(bonds([0.010, 0.012]), 0.011, 0.4).expect("valid ledger")
}

/// Ledger with zero CDS everywhere: the bank is default free and both FTP
/// estimators coincide.
pub fn zero_cds_ledger() -> IssuanceLedger {
    IssuanceLedger::new(bonds([0.0, 0.0]), 0.0, 0.4).expect("valid ledger")
}

fn base_curves() -> CurveSet {
    let mut set = CurveSet::default();
    set.insert_curve(&ois_curve(), CurveKind::Discount).expect("fresh set");
    set
}

fn threshold_curve() -> TermCurve {
    let spread = TermCurve::flat("s", 0.001).expect("valid");
    curve_combine(&ois_curve(), &spread, CombineOp::Add).with_id("ois_plus_10bp")
}

fn netting_set(id: &str, hazard: &[(f64, f64)], recovery: f64, csas: Vec<CsaTerms>, uncovered: &[&str]) -> NettingSet {
    NettingSet {
        id: id.to_string(),
        counterparty_hazard: TermCurve::hazard(format!("{id}_hazard"), hazard).expect("valid hazard"),
        counterparty_recovery: RecoverySchedule::constant(recovery).expect("valid recovery"),
        csas,
        uncovered_deal_ids: uncovered.iter().map(|s| s.to_string()).collect(),
    }
}

/// Three netting sets: fully collateralized, unsecured asset-heavy, threshold CSA.
fn three_set_hierarchy(
    portfolio: &Portfolio,
    collateralized: &[&str],
    unsecured: &[&str],
    threshold: &[&str],
) -> Result<NettingHierarchy> {
    let sets = vec![
        netting_set(
            "collateralized",
            &[(0.0, 0.01)],
            0.4,
            vec![CsaTerms::new("csa_full", CsaMode::BilateralFull, ois_curve(), collateralized)],
            &[],
        ),
        netting_set("unsecured", &[(0.0, 0.02), (2.0, 0.03)], 0.4, Vec::new(), unsecured),
        netting_set(
            "threshold",
            &[(0.0, 0.015)],
            0.35,
            vec![CsaTerms::new("csa_threshold", CsaMode::Threshold, threshold_curve(), threshold).with_thresholds(10.0, 5.0)],
            &[],
        ),
    ];
    NettingHierarchy::new(sets, portfolio)
}

fn inputs(portfolio: Portfolio, hierarchy: NettingHierarchy, ledger: IssuanceLedger) -> Result<EngineInputs> {
    let mut curves = base_curves();
    curves.insert_curve(&threshold_curve(), CurveKind::Collateral)?;
    Ok(EngineInputs {
        portfolio,
        hierarchy,
        curves,
        ledger: Some(ledger),
    })
}

/// Three-netting-set portfolio of fixed cash-flow strips (no risk factors).
pub fn invariance_deterministic() -> EngineInputs {
    let deals = vec![
        Deal::flow_strip("c_rec", 100.0, 0.03, 5.0, 4.0, true),
        Deal::flow_strip("c_pay", -60.0, 0.025, 3.0, 2.0, true),
        Deal::flow_strip("u_rec", 80.0, 0.04, 4.0, 1.0, true),
        Deal::flow_strip("t_rec", 50.0, 0.035, 5.0, 2.0, true),
        Deal::flow_strip("t_pay", -70.0, 0.02, 2.0, 4.0, true),
    ];
    let portfolio = Portfolio::new(RiskFactorModel::empty(), deals).expect("valid deals");
    let hierarchy =
        three_set_hierarchy(&portfolio, &["c_rec", "c_pay"], &["u_rec"], &["t_rec", "t_pay"]).expect("valid hierarchy");
    inputs(portfolio, hierarchy, standard_ledger()).expect("valid inputs")
}

fn market_model() -> RiskFactorModel {
    let und = |id: &str, spot: f64, vol: f64, drift: f64| Underlying {
        id: id.to_string(),
        spot,
        volatility: vol,
        drift: TermCurve::flat(format!("{id}_drift"), drift).expect("valid"),
    };
    RiskFactorModel::new(
        vec![und("eurusd", 1.1, 0.1, 0.005), und("spx", 100.0, 0.2, 0.02)],
        vec![vec![1.0, 0.3], vec![0.3, 1.0]],
    )
    .expect("valid correlation")
}

/// Same three-set layout with FX forwards and options on correlated GBM factors.
pub fn invariance_stochastic() -> EngineInputs {
    let deals = vec![
        Deal::fx_forward("c_fx", "eurusd", 100.0, 1.12, 3.0),
        Deal::option("c_call", "spx", OptionType::Call, 1.0, 100.0, 2.0),
        Deal::option("u_call", "spx", OptionType::Call, 2.0, 95.0, 4.0),
        Deal::flow_strip("u_rec", 40.0, 0.03, 3.0, 1.0, true),
        Deal::fx_forward("t_fx", "eurusd", -150.0, 1.08, 5.0),
        Deal::option("t_put", "spx", OptionType::Put, 1.0, 100.0, 3.0),
    ];
    let portfolio = Portfolio::new(market_model(), deals).expect("valid deals");
    let hierarchy = three_set_hierarchy(&portfolio, &["c_fx", "c_call"], &["u_call", "u_rec"], &["t_fx", "t_put"])
        .expect("valid hierarchy");
    inputs(portfolio, hierarchy, standard_ledger()).expect("valid inputs")
}

/// One unsecured netting set whose value is positive on every path.
pub fn asset_heavy() -> EngineInputs {
    let deals = vec![
        Deal::option("a_call", "spx", OptionType::Call, 2.0, 95.0, 4.0),
        Deal::flow_strip("a_rec", 80.0, 0.03, 5.0, 2.0, true),
    ];
    let portfolio = Portfolio::new(market_model(), deals).expect("valid deals");
    let sets = vec![netting_set("asset_heavy", &[(0.0, 0.02)], 0.4, Vec::new(), &["a_call", "a_rec"])];
    let hierarchy = NettingHierarchy::new(sets, &portfolio).expect("valid hierarchy");
    inputs(portfolio, hierarchy, standard_ledger()).expect("valid inputs")
}

/// Two unsecured netting sets of opposite sign: one funded, one providing funding.
pub fn mixed_sign() -> EngineInputs {
    let deals = vec![
        Deal::flow_strip("asset", 100.0, 0.03, 4.0, 2.0, true),
        Deal::flow_strip("liability", -60.0, 0.025, 3.0, 2.0, true),
    ];
    let portfolio = Portfolio::new(RiskFactorModel::empty(), deals).expect("valid deals");
    let sets = vec![
        netting_set("funded", &[(0.0, 0.02)], 0.4, Vec::new(), &["asset"]),
        netting_set("funding", &[(0.0, 0.01)], 0.4, Vec::new(), &["liability"]),
    ];
    let hierarchy = NettingHierarchy::new(sets, &portfolio).expect("valid hierarchy");
    let mut inputs = inputs(portfolio, hierarchy, standard_ledger()).expect("valid inputs");
    inputs
        .curves
        .insert_curve(&ois_curve().with_id(LEND_ID), CurveKind::Funding)
        .expect("fresh id");
    inputs
}

/// Accounting perspective borrowing at the FTP curve and lending at OIS,
/// aggregated at legal-entity level (for [`mixed_sign`]).
pub fn asymmetric_config() -> PerspectiveConfig {
    PerspectiveConfig {
        name: "accounting_asymmetric".into(),
        funding_symmetry: FundingSymmetry::Asymmetric {
            borrow_curve_id: None,
            lend_curve_id: LEND_ID.into(),
        },
        funding_aggregation: FundingAggregation::LegalEntitySingleSet,
        ..PerspectiveConfig::accounting()
    }
}

/// Sets every counterparty hazard to zero.
pub fn without_counterparty_default(inputs: &EngineInputs) -> EngineInputs {
    let zero = |ns: &NettingSet| NettingSet {
        counterparty_hazard: TermCurve::hazard(ns.counterparty_hazard.id(), &[(0.0, 0.0)]).expect("valid"),
        ..ns.clone()
    };
    EngineInputs {
        hierarchy: inputs.hierarchy.map_netting_sets(zero),
        ..inputs.clone()
    }
}

/// Sum of absolute deal notionals.
pub fn gross_notional(inputs: &EngineInputs) -> f64 {
    inputs.portfolio.deals.iter().map(|d| d.notional.abs()).sum()
}

/// Serializable documents of a fixture, in the on-disk input layouts.
pub struct InputDocuments {
    pub portfolio: PortfolioFile,
    pub curves: Vec<CurveDocument>,
    pub hierarchy: HierarchyFile,
    pub ledger: Option<LedgerFile>,
}

/// Splits engine inputs into the documents a user would supply. CSA
/// remuneration curves must be present in the curve set.
pub fn input_documents(inputs: &EngineInputs) -> InputDocuments {
    InputDocuments {
        portfolio: PortfolioFile::from(&inputs.portfolio),
        curves: inputs.curves.documents().cloned().collect(),
        hierarchy: HierarchyFile::from_hierarchy(&inputs.hierarchy),
        ledger: inputs.ledger.as_ref().map(|l| LedgerFile {
            current_cds: l.current_cds(),
            bank_recovery: l.bank_recovery().at(0.0),
            bonds: l.bonds().to_vec(),
        }),
    }
}
