//! Numerical checks of the valuation identities, independent of the engine's
//! integrators.
//!
//! The quadratures here are plain Riemann/trapezoid sums over exact curve
//! integrals; they deliberately share nothing with `xva::weights`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::collateral::{CsaMode, CsaTerms, NettingHierarchy, NettingSet};
use crate::error::{Result, XvaError};
use crate::exposure::{Deal, Portfolio, RiskFactorModel};
use crate::fixtures;
use crate::termstructures::{CurveKind, CurveSet, RecoverySchedule, TermCurve};
use crate::xva::{
    run_engine, EngineInputs, FundingRateSource, PerspectiveConfig, RunSettings, SurvivalMode, XvaReport,
};

/// Relative tolerance for deterministic residuals.
pub const DETERMINISTIC_TOL: f64 = 1e-6;
/// Number of pooled standard errors allowed for Monte Carlo residuals.
pub const STATISTICAL_SIGMAS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub id: String,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub diagnostics: BTreeMap<String, f64>,
}

impl ResidualReport {
    pub fn new(id: impl Into<String>, residual: f64, tolerance: f64) -> Self {
        ResidualReport {
            id: id.into(),
            residual,
            tolerance,
            pass: residual.abs() <= tolerance,
            diagnostics: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.diagnostics.insert(key.to_string(), value);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quadrature {
    LeftRiemann,
    Trapezoid,
}

/// Value at `s` of the flows after `s`, discounted at `curve + hazard`.
fn flows_value(flows: &[(f64, f64)], curve: &TermCurve, hazard: Option<&TermCurve>, s: f64) -> f64 {
    let level = |u: f64| curve.integral_to(u) + hazard.map_or(0.0, |h| h.integral_to(u));
    flows
        .iter()
        .filter(|f| f.0 > s)
        .map(|&(t, c)| c * (level(s) - level(t)).exp())
        .sum()
}

/// Checks the two-curve relation
/// `V^F_0 = V^sys_0 + ∫ p^F Q (r^sys − r^F) V^sys_s ds`
/// for a deterministic cash-flow stream. With a hazard both sides are priced
/// as defaultable claims (discounting at `r + λ`). The residual is relative to
/// the directly re-marked value.
pub fn check_discount_relation(
    id: &str,
    flows: &[(f64, f64)],
    sys: &TermCurve,
    funding: &TermCurve,
    hazard: Option<&TermCurve>,
    step: f64,
    quadrature: Quadrature,
) -> Result<ResidualReport> {
    if !(step > 0.0) {
        return Err(XvaError::Config(format!("step must be positive, got {step}")));
    }
    let horizon = flows.iter().map(|f| f.0).fold(0.0, f64::max);
    let direct = flows_value(flows, funding, hazard, 0.0);
    // nodes: uniform plus every flow date, so V^sys is smooth inside each panel
    let n = (horizon / step).ceil() as usize;
    let mut nodes: Vec<f64> = (0..=n).map(|k| (k as f64 * step).min(horizon)).collect();
    nodes.extend(flows.iter().map(|f| f.0));
    nodes.sort_by(f64::total_cmp);
    nodes.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

    let integrand = |s: f64, left_limit: bool| {
        // values just before a flow date still include that flow
        let v = flows_value(flows, sys, hazard, if left_limit { s - 1e-13 } else { s });
        let w = (-(funding.integral_to(s) + hazard.map_or(0.0, |h| h.integral_to(s)))).exp();
        w * (sys.rate(s) - funding.rate(s)) * v
    };
    let mut adjustment = 0.0;
    for seg in nodes.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let h = b - a;
        adjustment += match quadrature {
            Quadrature::LeftRiemann => h * integrand(a, false),
            Quadrature::Trapezoid => 0.5 * h * (integrand(a, false) + integrand(b, true)),
        };
    }
    let relation = flows_value(flows, sys, hazard, 0.0) + adjustment;
    let residual = (relation - direct) / direct.abs().max(f64::MIN_POSITIVE);
    Ok(ResidualReport::new(id, residual, DETERMINISTIC_TOL)
        .with("grid_step", step)
        .with("direct", direct)
        .with("relation", relation))
}

/// Runs the engine with two marking curves on identical paths and reports
/// `V̂_A − V̂_B` at legal-entity level. Deterministic portfolios get a relative
/// tolerance; stochastic ones three pooled standard errors.
pub fn check_invariance(
    id: &str,
    inputs: &EngineInputs,
    curve_a: &TermCurve,
    curve_b: &TermCurve,
    config: &PerspectiveConfig,
    settings: &RunSettings,
) -> Result<ResidualReport> {
    let run = |curve: &TermCurve| -> Result<XvaReport> {
        let mut inputs = inputs.clone();
        if !inputs.curves.contains(curve.id()) {
            inputs.curves.insert_curve(curve, CurveKind::Discount)?;
        }
        let config = PerspectiveConfig {
            marking_curve_id: Some(curve.id().to_string()),
            ..config.clone()
        };
        run_engine(&inputs, &config, settings)
    };
    let a = run(curve_a)?;
    let b = if curve_a == curve_b { a.clone() } else { run(curve_b)? };
    let (va, vb) = (&a.legal_entity.metrics, &b.legal_entity.metrics);
    let residual = va.v_hat - vb.v_hat;
    let pooled_se = va.se_v_hat.hypot(vb.se_v_hat);
    let tolerance = if inputs.portfolio.is_deterministic() {
        DETERMINISTIC_TOL * va.v_hat.abs().max(vb.v_hat.abs())
    } else {
        STATISTICAL_SIGMAS * pooled_se
    };
    Ok(ResidualReport::new(id, residual, tolerance)
        .with("grid_step", settings.grid_step)
        .with("n_paths", settings.n_paths as f64)
        .with("v_hat_a", va.v_hat)
        .with("v_hat_b", vb.v_hat)
        .with("pooled_se", pooled_se))
}

/// Closed-form adjustments of constant deterministic exposures over `[0, T]`
/// with flat curves: `X · c · (1 − e^{−kT}) / k`, `k` the total decay rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "case")]
pub enum AnalyticCase {
    ConstantExposureCva {
        exposure: f64,
        recovery: f64,
        cpty_hazard: f64,
        bank_hazard: f64,
        funding_rate: f64,
        maturity: f64,
        first_to_default: bool,
    },
    ConstantFundingFva {
        position: f64,
        spread: f64,
        funding_rate: f64,
        hazard: f64,
        maturity: f64,
    },
    ConstantMarginColva {
        margin: f64,
        spread: f64,
        funding_rate: f64,
        hazard: f64,
        maturity: f64,
    },
}

fn decaying_annuity(k: f64, t: f64) -> f64 {
    if k == 0.0 {
        t
    } else {
        (1.0 - (-k * t).exp()) / k
    }
}

impl AnalyticCase {
    pub fn value(&self) -> f64 {
        match *self {
            AnalyticCase::ConstantExposureCva {
                exposure,
                recovery,
                cpty_hazard,
                bank_hazard,
                funding_rate,
                maturity,
                first_to_default,
            } => {
                let lambda_tot = cpty_hazard + if first_to_default { bank_hazard } else { 0.0 };
                (1.0 - recovery) * exposure * cpty_hazard * decaying_annuity(funding_rate + lambda_tot, maturity)
            }
            AnalyticCase::ConstantFundingFva {
                position,
                spread,
                funding_rate,
                hazard,
                maturity,
            } => position * spread * decaying_annuity(funding_rate + hazard, maturity),
            AnalyticCase::ConstantMarginColva {
                margin,
                spread,
                funding_rate,
                hazard,
                maturity,
            } => margin * spread * decaying_annuity(funding_rate + hazard, maturity),
        }
    }
}

pub const ORACLE_CASES: [&str; 3] = ["constant_exposure_cva", "constant_funding_fva", "constant_margin_colva"];

/// Catalog case by id.
pub fn analytic_case(id: &str) -> Result<AnalyticCase> {
    match id {
        "constant_exposure_cva" => Ok(AnalyticCase::ConstantExposureCva {
            exposure: 100.0,
            recovery: 0.4,
            cpty_hazard: 0.02,
            bank_hazard: 0.0,
            funding_rate: 0.03,
            maturity: 5.0,
            first_to_default: false,
        }),
        "constant_funding_fva" => Ok(AnalyticCase::ConstantFundingFva {
            position: 100.0,
            spread: 0.015,
            funding_rate: 0.0,
            hazard: 0.0,
            maturity: 1.0,
        }),
        "constant_margin_colva" => Ok(AnalyticCase::ConstantMarginColva {
            margin: 100.0,
            spread: 0.01,
            funding_rate: 0.0,
            hazard: 0.0,
            maturity: 1.0,
        }),
        other => Err(XvaError::Config(format!("unknown oracle case '{other}'"))),
    }
}

/// Expected value of a catalog case.
pub fn analytic_oracles(id: &str) -> Result<f64> {
    analytic_case(id).map(|c| c.value())
}

/// Engine inputs and configuration reproducing a catalog case with a
/// constant exposure profile.
pub fn oracle_setup(case: &AnalyticCase) -> Result<(EngineInputs, PerspectiveConfig)> {
    let flat = |id: &str, r: f64| TermCurve::flat(id, r);
    // exposure, maturity, funding, marking, cpty hazard, recovery, csa rate, survival
    let (exposure, maturity, rf, sys, lc, rec, csa_rate, survival) = match *case {
        AnalyticCase::ConstantExposureCva {
            exposure,
            recovery,
            cpty_hazard,
            bank_hazard,
            funding_rate,
            maturity,
            first_to_default,
        } => {
            if bank_hazard != 0.0 {
                return Err(XvaError::Config("oracle setup supports a default-free bank only".into()));
            }
            let mode = if first_to_default { SurvivalMode::FirstToDefault } else { SurvivalMode::Unilateral };
            (exposure, maturity, funding_rate, funding_rate, cpty_hazard, recovery, None, mode)
        }
        AnalyticCase::ConstantFundingFva {
            position,
            spread,
            funding_rate,
            hazard,
            maturity,
        } => (position, maturity, funding_rate, funding_rate - spread, hazard, 1.0, None, SurvivalMode::Unilateral),
        AnalyticCase::ConstantMarginColva {
            margin,
            spread,
            funding_rate,
            hazard,
            maturity,
        } => (
            margin,
            maturity,
            funding_rate,
            funding_rate,
            hazard,
            1.0,
            Some(funding_rate + spread),
            SurvivalMode::Unilateral,
        ),
    };
    let deal = Deal::deterministic("exposure", exposure, maturity, &[(0.0, 1.0)]);
    let portfolio = Portfolio::new(RiskFactorModel::empty(), vec![deal])?;
    let (csas, uncovered) = match csa_rate {
        Some(r) => (
            vec![CsaTerms::new("csa", CsaMode::BilateralFull, flat("csa_curve", r)?, &["exposure"])],
            Vec::new(),
        ),
        None => (Vec::new(), vec!["exposure".to_string()]),
    };
    let ns = NettingSet {
        id: "oracle".into(),
        counterparty_hazard: TermCurve::hazard("cpty_hazard", &[(0.0, lc)])?,
        counterparty_recovery: RecoverySchedule::constant(rec)?,
        csas,
        uncovered_deal_ids: uncovered,
    };
    let hierarchy = NettingHierarchy::new(vec![ns], &portfolio)?;
    let mut curves = CurveSet::default();
    curves.insert_curve(&flat("marking", sys)?, CurveKind::Discount)?;
    curves.insert_curve(&flat("funding", rf)?, CurveKind::Funding)?;
    let config = PerspectiveConfig {
        name: "oracle".into(),
        funding_rate_source: FundingRateSource::Explicit {
            curve_id: "funding".into(),
        },
        survival_mode: survival,
        include_dva: false,
        bank_default_free: true,
        marking_curve_id: Some("marking".into()),
        ..PerspectiveConfig::accounting()
    };
    Ok((
        EngineInputs {
            portfolio,
            hierarchy,
            curves,
            ledger: None,
        },
        config,
    ))
}

/// Runs a catalog case through the engine and compares with its closed form.
pub fn check_oracle(id: &str, grid_step: f64) -> Result<ResidualReport> {
    let case = analytic_case(id)?;
    let (inputs, config) = oracle_setup(&case)?;
    let report = run_engine(&inputs, &config, &RunSettings::new(1, 0, grid_step))?;
    let m = &report.legal_entity.metrics;
    let engine = match case {
        AnalyticCase::ConstantExposureCva { .. } => m.cva,
        AnalyticCase::ConstantFundingFva { .. } => m.fva,
        AnalyticCase::ConstantMarginColva { .. } => m.colva,
    };
    let expected = case.value();
    Ok(ResidualReport::new(id, engine - expected, 1e-4)
        .with("grid_step", grid_step)
        .with("engine", engine)
        .with("expected", expected))
}

/// Settings of [`verification_suite`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteSettings {
    pub n_paths: usize,
    pub seed: u64,
    pub threads: Option<usize>,
}

impl Default for SuiteSettings {
    fn default() -> Self {
        SuiteSettings {
            n_paths: 20_000,
            seed: 2024,
            threads: None,
        }
    }
}

/// Zero-coupon 100 at one year, marked at 0% and funded at 2%.
pub fn discount_relation_fixture() -> (Vec<(f64, f64)>, TermCurve, TermCurve, TermCurve) {
    (
        vec![(1.0, 100.0)],
        TermCurve::flat("sys", 0.0).expect("valid"),
        TermCurve::flat("funding", 0.02).expect("valid"),
        TermCurve::hazard("hazard", &[(0.0, 0.05)]).expect("valid"),
    )
}

/// Built-in residual checks: the two-curve relation with and without default
/// (plus its first-order convergence), the closed-form oracles, and marking
/// curve invariance of default-free fixtures.
pub fn verification_suite(settings: &SuiteSettings) -> Result<Vec<ResidualReport>> {
    let mut out = Vec::new();
    let (flows, sys, funding, hazard) = discount_relation_fixture();
    for (label, h) in [("no_default", None), ("with_default", Some(&hazard))] {
        let coarse = check_discount_relation(
            &format!("discount_relation_{label}"),
            &flows,
            &sys,
            &funding,
            h,
            1.0 / 365.0,
            Quadrature::LeftRiemann,
        )?;
        let fine = check_discount_relation("fine", &flows, &sys, &funding, h, 1.0 / 730.0, Quadrature::LeftRiemann)?;
        let ratio = fine.residual / coarse.residual;
        out.push(coarse);
        out.push(
            ResidualReport::new(format!("discount_relation_{label}_halving"), ratio - 0.5, 0.1)
                .with("residual_coarse", out.last().map_or(0.0, |r| r.residual))
                .with("residual_fine", fine.residual),
        );
    }
    for id in ORACLE_CASES {
        out.push(check_oracle(id, 1.0 / 365.0)?);
    }

    let config = PerspectiveConfig {
        bank_default_free: true,
        ..PerspectiveConfig::accounting()
    };
    let (a, b) = (fixtures::ois_curve(), fixtures::shifted_ois_curve());
    let det = fixtures::without_counterparty_default(&fixtures::invariance_deterministic());
    let mut det_settings = RunSettings::new(1, settings.seed, 1.0 / 365.0);
    det_settings.threads = settings.threads;
    out.push(check_invariance("invariance_deterministic_default_free", &det, &a, &b, &config, &det_settings)?);
    let sto = fixtures::without_counterparty_default(&fixtures::invariance_stochastic());
    let mut sto_settings = RunSettings::new(settings.n_paths, settings.seed, 1.0 / 52.0);
    sto_settings.threads = settings.threads;
    out.push(check_invariance("invariance_stochastic_default_free", &sto, &a, &b, &config, &sto_settings)?);
    Ok(out)
}
