use std::ops::Range;

use rayon::prelude::*;

use crate::collateral::{funding_positions_with_margins, margin_paths, NettingHierarchy};
use crate::error::{Result, XvaError};
use crate::exposure::{simulate_range, MarkingPlan, Portfolio, ScenarioCube, TimeGrid};
use crate::funding_ledger::{ftp_accounting, ftp_management, IssuanceLedger};
use crate::termstructures::{CurveKind, CurveSet, RecoverySchedule, TermCurve};

use super::config::{FundingAggregation, FundingRateSource, FundingSymmetry, MarginValuation, PerspectiveConfig};
use super::report::{LegalEntityReport, Metrics, NettingSetReport, RunMetadata, XvaReport};
use super::stats::{pairwise_merge, RunningStats};
use super::weights::{NettingSetWeights, WeightCurves, BORROW, LEND};

/// Paths per work unit. Fixed so that results do not depend on the worker count.
pub const BLOCK_SIZE: usize = 256;

/// Market and trade data for one run.
#[derive(Debug, Clone)]
pub struct EngineInputs {
    pub portfolio: Portfolio,
    pub hierarchy: NettingHierarchy,
    pub curves: CurveSet,
    pub ledger: Option<IssuanceLedger>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSettings {
    pub n_paths: usize,
    pub seed: u64,
    pub grid_step: f64,
    /// Worker cap; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl RunSettings {
    pub fn new(n_paths: usize, seed: u64, grid_step: f64) -> Self {
        RunSettings {
            n_paths,
            seed,
            grid_step,
            threads: None,
        }
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = Some(threads);
        self
    }
}

/// Curves selected by a perspective.
#[derive(Debug, Clone)]
pub struct ResolvedCurves {
    pub marking: TermCurve,
    pub funding: TermCurve,
    pub borrow: TermCurve,
    pub lend: TermCurve,
    pub bank_hazard: TermCurve,
    pub bank_recovery: RecoverySchedule,
}

pub fn resolve_curves(inputs: &EngineInputs, config: &PerspectiveConfig) -> Result<ResolvedCurves> {
    let marking = match &config.marking_curve_id {
        Some(id) => inputs.curves.curve(id)?,
        None => inputs
            .curves
            .single_of_kind(CurveKind::Discount)
            .ok_or_else(|| {
                XvaError::Config("no marking_curve_id given and no unique discount curve to default to".into())
            })?
            .to_curve()?,
    };
    let need_ledger = || {
        inputs
            .ledger
            .as_ref()
            .ok_or_else(|| XvaError::Config("funding rate source needs an issuance ledger".into()))
    };
    let funding = match &config.funding_rate_source {
        FundingRateSource::AccountingLiquidity => ftp_accounting(need_ledger()?, 0.0, config.ftp_form)?,
        FundingRateSource::ManagementYield => ftp_management(need_ledger()?, 0.0)?,
        FundingRateSource::Explicit { curve_id } => inputs.curves.curve(curve_id)?,
    };
    let (borrow, lend) = match &config.funding_symmetry {
        FundingSymmetry::Symmetric => (funding.clone(), funding.clone()),
        FundingSymmetry::Asymmetric {
            borrow_curve_id,
            lend_curve_id,
        } => (
            match borrow_curve_id {
                Some(id) => inputs.curves.curve(id)?,
                None => funding.clone(),
            },
            inputs.curves.curve(lend_curve_id)?,
        ),
    };
    let zero_hazard = || TermCurve::hazard("bank_default_free", &[(0.0, 0.0)]);
    let (bank_hazard, bank_recovery) = match (&inputs.ledger, config.bank_default_free) {
        (Some(l), false) => (l.bank_hazard().clone(), l.bank_recovery().clone()),
        _ => (zero_hazard()?, RecoverySchedule::constant(0.0)?),
    };
    Ok(ResolvedCurves {
        marking,
        funding,
        borrow,
        lend,
        bank_hazard,
        bank_recovery,
    })
}

/// Everything deterministic about a run: grid, curves, weights and marking plans.
#[derive(Debug, Clone)]
pub struct EnginePlan {
    pub grid: TimeGrid,
    pub curves: ResolvedCurves,
    pub weights: Vec<NettingSetWeights>,
    sys_plan: MarkingPlan,
    /// Separate valuation per CSA when margins are not taken from the system cube.
    margin_plans: Vec<Vec<Option<MarkingPlan>>>,
}

pub fn prepare(inputs: &EngineInputs, config: &PerspectiveConfig, settings: &RunSettings) -> Result<EnginePlan> {
    config.validate()?;
    if settings.n_paths == 0 {
        return Err(XvaError::Config("n_paths must be at least 1".into()));
    }
    if !(settings.grid_step > 0.0) {
        return Err(XvaError::Config(format!("grid_step must be positive, got {}", settings.grid_step)));
    }
    let curves = resolve_curves(inputs, config)?;
    let grid = TimeGrid::for_deals(settings.grid_step, &inputs.portfolio.deals)?;
    let horizon = grid.horizon();
    for c in [&curves.funding, &curves.borrow, &curves.lend, &curves.bank_hazard] {
        c.require_horizon(horizon)?;
    }
    let sys_plan = MarkingPlan::new(&inputs.portfolio, &grid, &curves.marking)?;

    let mut weights = Vec::new();
    let mut margin_plans = Vec::new();
    for (n, ns) in inputs.hierarchy.netting_sets().iter().enumerate() {
        ns.counterparty_hazard.require_horizon(horizon)?;
        let csa_curves: Vec<&TermCurve> = ns.csas.iter().map(|c| &c.remuneration_curve).collect();
        for c in &csa_curves {
            c.require_horizon(horizon)?;
        }
        weights.push(NettingSetWeights::build(
            grid.times(),
            &WeightCurves {
                funding: &curves.funding,
                marking: &curves.marking,
                cpty_hazard: &ns.counterparty_hazard,
                cpty_recovery: &ns.counterparty_recovery,
                bank_hazard: &curves.bank_hazard,
                bank_recovery: &curves.bank_recovery,
                csa_curves: &csa_curves,
                borrow: &curves.borrow,
                lend: &curves.lend,
            },
            config.survival_mode,
            config.include_dva,
        ));
        let plans = ns
            .csas
            .iter()
            .enumerate()
            .map(|(c, csa)| {
                let own_curve = config.margin_valuation == MarginValuation::CsaCurve
                    && !csa.remuneration_curve.same_rates(&curves.marking);
                if own_curve {
                    MarkingPlan::for_deals(
                        &inputs.portfolio,
                        inputs.hierarchy.csa_deals(n, c),
                        &grid,
                        &csa.remuneration_curve,
                    )
                    .map(Some)
                } else {
                    Ok(None)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        margin_plans.push(plans);
    }
    Ok(EnginePlan {
        grid,
        curves,
        weights,
        sys_plan,
        margin_plans,
    })
}

// metric slots per netting set and for the legal entity
const NS_SLOTS: usize = 5;
const LE_SLOTS: usize = 7;
const COLVA: usize = 0;
const FVA: usize = 1;
const CVA: usize = 2;
const DVA: usize = 3;
const VHAT: usize = 4;
const FVA_SUM: usize = 5;
const FVA_SINGLE: usize = 6;

struct BlockResult {
    stats: Vec<RunningStats>,
    v0: Vec<f64>,
}

fn run_block(
    inputs: &EngineInputs,
    plan: &EnginePlan,
    config: &PerspectiveConfig,
    seed: u64,
    range: Range<usize>,
) -> Result<BlockResult> {
    let hierarchy = &inputs.hierarchy;
    let n_ns = hierarchy.netting_sets().len();
    let paths = simulate_range(&inputs.portfolio.model, &plan.grid, seed, range);
    let cube = plan.sys_plan.mark(&paths);

    let mut margins: Vec<Vec<Vec<f64>>> = Vec::with_capacity(n_ns);
    for (n, ns) in hierarchy.netting_sets().iter().enumerate() {
        let mut per_csa = Vec::with_capacity(ns.csas.len());
        for (c, csa) in ns.csas.iter().enumerate() {
            let own: Option<ScenarioCube> = plan.margin_plans[n][c].as_ref().map(|p| p.mark(&paths));
            per_csa.push(margin_paths(own.as_ref().unwrap_or(&cube), csa)?);
        }
        margins.push(per_csa);
    }
    let pos = funding_positions_with_margins(&cube, hierarchy, &margins)?;

    let nt = pos.n_times;
    let n_int = nt.saturating_sub(1);
    let mut stats = vec![RunningStats::default(); NS_SLOTS * n_ns + LE_SLOTS];
    let mut v0 = vec![0.0; n_ns];
    let mut fva_ns = vec![0.0; n_ns];
    for p in 0..pos.n_paths {
        let r = p * nt..(p + 1) * nt;
        let mut le = [0.0; LE_SLOTS];
        let mut le_v0 = 0.0;
        for n in 0..n_ns {
            let w = &plan.weights[n];
            let v = &pos.v_ns[n][r.clone()];
            let vm = &pos.v_marked_ns[n][r.clone()];
            let m = &pos.m_ns[n][r.clone()];
            let csa_rows: Vec<&[f64]> = margins[n].iter().map(|g| &g[r.clone()]).collect();
            let colva = w.colva_path(&csa_rows);
            let fva = w.fva_path(vm, v, m);
            let (cva, dva) = w.cva_dva_path(v, m);
            let v_hat = v[0] - colva - fva - cva + dva;
            v0[n] = v[0];
            fva_ns[n] = fva;
            let base = n * NS_SLOTS;
            stats[base + COLVA].push(colva);
            stats[base + FVA].push(fva);
            stats[base + CVA].push(cva);
            stats[base + DVA].push(dva);
            stats[base + VHAT].push(v_hat);
            le[COLVA] += colva;
            le[CVA] += cva;
            le[DVA] += dva;
            le[FVA_SUM] += fva;
            le_v0 += v[0];
        }
        // legal entity as one funding set: the side follows the
        // survival-weighted net funding position
        let mut single = 0.0;
        for j in 0..n_int {
            let net: f64 = (0..n_ns)
                .map(|n| (pos.v_ns[n][r.start + j] - pos.m_ns[n][r.start + j]) * plan.weights[n].cpty_survival[j])
                .sum();
            let side = if net > 0.0 { BORROW } else { LEND };
            for n in 0..n_ns {
                let k = r.start + j;
                let (v, vm, m) = (pos.v_ns[n][k], pos.v_marked_ns[n][k], pos.m_ns[n][k]);
                single += plan.weights[n].fva_step(j, side, vm, v - vm - m);
            }
        }
        le[FVA_SINGLE] = single;
        le[FVA] = match config.funding_aggregation {
            FundingAggregation::PerNettingSetSum => le[FVA_SUM],
            FundingAggregation::LegalEntitySingleSet => {
                if matches!(config.funding_symmetry, FundingSymmetry::Symmetric) {
                    // identical to the netting-set sum when rates are symmetric
                    fva_ns.iter().sum()
                } else {
                    single
                }
            }
        };
        le[VHAT] = le_v0 - le[COLVA] - le[FVA] - le[CVA] + le[DVA];
        let base = n_ns * NS_SLOTS;
        for (k, x) in le.iter().enumerate() {
            stats[base + k].push(*x);
        }
    }
    Ok(BlockResult { stats, v0 })
}

/// Runs the full Monte Carlo valuation.
pub fn run_engine(inputs: &EngineInputs, config: &PerspectiveConfig, settings: &RunSettings) -> Result<XvaReport> {
    let plan = prepare(inputs, config, settings)?;
    run_prepared(inputs, config, settings, &plan)
}

pub fn run_prepared(
    inputs: &EngineInputs,
    config: &PerspectiveConfig,
    settings: &RunSettings,
    plan: &EnginePlan,
) -> Result<XvaReport> {
    let n_blocks = settings.n_paths.div_ceil(BLOCK_SIZE);
    let block = |b: usize| {
        let start = b * BLOCK_SIZE;
        let end = (start + BLOCK_SIZE).min(settings.n_paths);
        run_block(inputs, plan, config, settings.seed, start..end)
    };
    let results: Vec<BlockResult> = match settings.threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build()
                .map_err(|e| XvaError::Config(format!("thread pool: {e}")))?;
            pool.install(|| (0..n_blocks).into_par_iter().map(block).collect::<Result<Vec<_>>>())?
        }
        None => (0..n_blocks).into_par_iter().map(block).collect::<Result<Vec<_>>>()?,
    };
    let v0 = results.first().map(|r| r.v0.clone()).unwrap_or_default();
    let stats = pairwise_merge(results.into_iter().map(|r| r.stats).collect());

    let metrics = |base: usize, v0: f64| {
        let e = |k: usize| stats[base + k].estimate();
        Metrics {
            v0,
            colva: e(COLVA).value,
            fva: e(FVA).value,
            cva: e(CVA).value,
            dva: e(DVA).value,
            v_hat: e(VHAT).value,
            se_colva: e(COLVA).se,
            se_fva: e(FVA).se,
            se_cva: e(CVA).se,
            se_dva: e(DVA).se,
            se_v_hat: e(VHAT).se,
        }
    };
    let n_ns = inputs.hierarchy.netting_sets().len();
    let netting_sets = inputs
        .hierarchy
        .netting_sets()
        .iter()
        .enumerate()
        .map(|(n, ns)| NettingSetReport {
            id: ns.id.clone(),
            metrics: metrics(n * NS_SLOTS, v0[n]),
        })
        .collect();
    let le_base = n_ns * NS_SLOTS;
    let legal_entity = LegalEntityReport {
        metrics: metrics(le_base, v0.iter().sum()),
        fva_sum_netting_sets: stats[le_base + FVA_SUM].mean(),
        fva_single_set: stats[le_base + FVA_SINGLE].mean(),
        se_fva_sum_netting_sets: stats[le_base + FVA_SUM].standard_error(),
        se_fva_single_set: stats[le_base + FVA_SINGLE].standard_error(),
    };
    Ok(XvaReport {
        metadata: RunMetadata {
            perspective: config.name.clone(),
            seed: settings.seed,
            n_paths: settings.n_paths,
            grid_step: settings.grid_step,
            n_time_nodes: plan.grid.len(),
            marking_curve_id: plan.curves.marking.id().to_string(),
            funding_curve_id: plan.curves.funding.id().to_string(),
            funding_curve: plan.curves.funding.pillars().into_iter().map(|(t, r)| [t, r]).collect(),
            portfolio_digest: None,
            config: config.clone(),
        },
        netting_sets,
        legal_entity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collateral::CsaTerms;
    use crate::exposure::RiskFactorModel;
    use crate::fixtures;
    use crate::xva::config::SurvivalMode;
    use proptest::prelude::*;

    fn det_settings() -> RunSettings {
        RunSettings::new(1, 1, 1.0 / 52.0)
    }

    #[test]
    fn empty_portfolio_is_zero() {
        let portfolio = Portfolio::new(RiskFactorModel::empty(), Vec::new()).unwrap();
        let hierarchy = NettingHierarchy::new(Vec::new(), &portfolio).unwrap();
        let base = fixtures::invariance_deterministic();
        let inputs = EngineInputs {
            portfolio,
            hierarchy,
            ..base
        };
        let r = run_engine(&inputs, &PerspectiveConfig::accounting(), &det_settings()).unwrap();
        assert!(r.netting_sets.is_empty());
        assert_eq!(r.legal_entity.metrics, Metrics::default());
    }

    #[test]
    fn management_has_no_dva() {
        let inputs = fixtures::mixed_sign();
        let acc = run_engine(&inputs, &PerspectiveConfig::accounting(), &det_settings()).unwrap();
        let mgmt = run_engine(&inputs, &PerspectiveConfig::management(), &det_settings()).unwrap();
        assert!(acc.legal_entity.metrics.dva > 0.0);
        assert_eq!(mgmt.legal_entity.metrics.dva, 0.0);
        assert!(mgmt.netting_sets.iter().all(|n| n.metrics.dva == 0.0));
    }

    #[test]
    fn legal_entity_credit_is_netting_set_sum() {
        let inputs = fixtures::invariance_stochastic();
        let r = run_engine(&inputs, &PerspectiveConfig::accounting(), &RunSettings::new(600, 3, 1.0 / 12.0)).unwrap();
        let sum = |f: fn(&Metrics) -> f64| r.netting_sets.iter().map(|n| f(&n.metrics)).sum::<f64>();
        let le = &r.legal_entity.metrics;
        assert!((sum(|m| m.cva) - le.cva).abs() < 1e-9);
        assert!((sum(|m| m.dva) - le.dva).abs() < 1e-9);
        assert!((sum(|m| m.colva) - le.colva).abs() < 1e-9);
        assert!((sum(|m| m.v_hat) - le.v_hat).abs() < 1e-9);
        assert_eq!(r.metadata.n_paths, 600);
    }

    #[test]
    fn zero_hazards_remove_credit() {
        let inputs = fixtures::without_counterparty_default(&fixtures::invariance_deterministic());
        let config = PerspectiveConfig {
            bank_default_free: true,
            ..PerspectiveConfig::accounting()
        };
        let r = run_engine(&inputs, &config, &det_settings()).unwrap();
        assert_eq!(r.legal_entity.metrics.cva, 0.0);
        assert_eq!(r.legal_entity.metrics.dva, 0.0);
        let plan = prepare(&inputs, &config, &det_settings()).unwrap();
        for w in &plan.weights {
            assert!(w.cpty_survival.iter().all(|&q| q == 1.0));
        }
    }

    #[test]
    fn configuration_errors_precede_simulation() {
        let inputs = fixtures::mixed_sign();
        let mut bad = fixtures::asymmetric_config();
        bad.funding_aggregation = FundingAggregation::PerNettingSetSum;
        assert!(matches!(run_engine(&inputs, &bad, &det_settings()), Err(XvaError::Config(_))));
        let zero = RunSettings::new(0, 1, 0.1);
        assert!(run_engine(&inputs, &PerspectiveConfig::accounting(), &zero).is_err());
        let no_ledger = EngineInputs {
            ledger: None,
            ..inputs.clone()
        };
        assert!(run_engine(&no_ledger, &PerspectiveConfig::accounting(), &det_settings()).is_err());
        let missing_curve = PerspectiveConfig::management_with_rate("nope");
        let err = run_engine(&inputs, &missing_curve, &det_settings()).unwrap_err();
        assert!(err.to_string().contains("nope"), "{err}");
    }

    #[test]
    fn perspectives_share_the_cube() {
        // only curves, weights and DVA differ between perspectives
        let inputs = fixtures::invariance_stochastic();
        let s = RunSettings::new(300, 9, 1.0 / 12.0);
        let acc = run_engine(&inputs, &PerspectiveConfig::accounting(), &s).unwrap();
        let mgmt = run_engine(&inputs, &PerspectiveConfig::management(), &s).unwrap();
        for (a, m) in acc.netting_sets.iter().zip(&mgmt.netting_sets) {
            assert_eq!(a.metrics.v0, m.metrics.v0);
        }
        assert_eq!(acc.metadata.marking_curve_id, mgmt.metadata.marking_curve_id);
        assert_ne!(acc.metadata.funding_curve_id, mgmt.metadata.funding_curve_id);
    }

    #[test]
    fn system_marking_margins_differ_from_csa_curve() {
        let inputs = fixtures::invariance_deterministic();
        let csa = run_engine(&inputs, &PerspectiveConfig::accounting(), &det_settings()).unwrap();
        let sys = PerspectiveConfig {
            margin_valuation: MarginValuation::SystemMarking,
            ..PerspectiveConfig::accounting()
        };
        let sys = run_engine(&inputs, &sys, &det_settings()).unwrap();
        // the threshold CSA is remunerated off the marking curve
        assert_ne!(csa.netting_sets[2].metrics.colva, sys.netting_sets[2].metrics.colva);
        assert_eq!(csa.netting_sets[1].metrics, sys.netting_sets[1].metrics);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn adjustments_scale_linearly(k in 0.1f64..10.0) {
            let base = fixtures::invariance_deterministic();
            let scaled = EngineInputs {
                portfolio: base.portfolio.scaled(k),
                hierarchy: base.hierarchy.map_csas(|c: &CsaTerms| c.clone().with_thresholds(c.threshold_bank * k, c.threshold_cpty * k)),
                ..base.clone()
            };
            let cfg = PerspectiveConfig::accounting();
            let a = run_engine(&base, &cfg, &det_settings()).unwrap().legal_entity.metrics;
            let b = run_engine(&scaled, &cfg, &det_settings()).unwrap().legal_entity.metrics;
            for (x, y) in [(a.colva, b.colva), (a.fva, b.fva), (a.cva, b.cva), (a.dva, b.dva), (a.v_hat, b.v_hat)] {
                prop_assert!((k * x - y).abs() <= 1e-10 * (1.0 + y.abs()), "{} vs {}", k * x, y);
            }
        }

        #[test]
        fn first_to_default_never_exceeds_unilateral(seed in 0u64..1000) {
            let inputs = fixtures::asset_heavy();
            let s = RunSettings::new(64, seed, 1.0 / 12.0);
            let run = |mode| {
                let cfg = PerspectiveConfig { survival_mode: mode, ..PerspectiveConfig::accounting() };
                run_engine(&inputs, &cfg, &s).unwrap().legal_entity.metrics.cva
            };
            prop_assert!(run(SurvivalMode::FirstToDefault) <= run(SurvivalMode::Unilateral));
        }

        #[test]
        fn asymmetric_sum_dominates_single_set(borrow_add in 0.0f64..0.02) {
            let mut inputs = fixtures::mixed_sign();
            let borrow = crate::termstructures::curve_combine(
                &fixtures::ois_curve(),
                &TermCurve::flat("x", borrow_add).unwrap(),
                crate::termstructures::CombineOp::Add,
            ).with_id("borrow");
            inputs.curves.insert_curve(&borrow, CurveKind::Funding).unwrap();
            let cfg = PerspectiveConfig {
                funding_symmetry: FundingSymmetry::Asymmetric {
                    borrow_curve_id: Some("borrow".into()),
                    lend_curve_id: fixtures::LEND_ID.into(),
                },
                ..fixtures::asymmetric_config()
            };
            let le = run_engine(&inputs, &cfg, &det_settings()).unwrap().legal_entity;
            prop_assert!(le.fva_sum_netting_sets >= le.fva_single_set - 1e-12);
            prop_assert_eq!(le.metrics.fva, le.fva_single_set);
        }
    }
}
