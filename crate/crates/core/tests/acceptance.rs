//! Acceptance run: one PASS/FAIL line per criterion (some criteria have
//! several sub-checks), nonzero exit if any line fails.

use std::time::Instant;

use xva_core::fixtures::{self, gross_notional};
use xva_core::funding_ledger::{financial_area_balance, ftp_accounting, ftp_management, FtpForm};
use xva_core::verification::{check_discount_relation, check_invariance, check_oracle, Quadrature, ORACLE_CASES};
use xva_core::xva::{run_engine, transition_report, EngineInputs, PerspectiveConfig, RunSettings, SurvivalMode};

struct Line {
    criterion: &'static str,
    pass: bool,
    detail: String,
}

fn line(criterion: &'static str, pass: bool, detail: String) -> Line {
    Line { criterion, pass, detail }
}

const SEED: u64 = 20240917;

fn invariance() -> Vec<Line> {
    let (a, b) = (fixtures::ois_curve(), fixtures::shifted_ois_curve());
    let config = PerspectiveConfig::accounting();
    let mut out = Vec::new();

    let det = fixtures::invariance_deterministic();
    let settings = RunSettings::new(1, SEED, 1.0 / 365.0);
    let r = check_invariance("det", &det, &a, &b, &config, &settings).unwrap();
    let rel = r.residual / r.diagnostics["v_hat_a"].abs();
    out.push(line(
        "1 invariance, deterministic 3-set fixture (1e-6 rel)",
        r.pass,
        format!("v_hat {:.6} vs {:.6}, rel residual {rel:.3e}", r.diagnostics["v_hat_a"], r.diagnostics["v_hat_b"]),
    ));

    let sto = fixtures::invariance_stochastic();
    let settings = RunSettings::new(100_000, SEED, 1.0 / 52.0);
    let start = Instant::now();
    let r = check_invariance("sto", &sto, &a, &b, &config, &settings).unwrap();
    let secs = start.elapsed().as_secs_f64();
    out.push(line(
        "1 invariance, stochastic 3-set fixture, 100k paths (3 pooled SE)",
        r.pass,
        format!(
            "residual {:.5} vs tolerance {:.5} (pooled se {:.5})",
            r.residual, r.tolerance, r.diagnostics["pooled_se"]
        ),
    ));
    out.push(line("1 invariance runtime <= 60 s", secs <= 60.0, format!("{secs:.1} s for both runs")));

    // diagnostics: the same fixtures without counterparty or bank default
    let free = PerspectiveConfig {
        bank_default_free: true,
        ..config
    };
    let det = fixtures::without_counterparty_default(&det);
    let r = check_invariance("det_free", &det, &a, &b, &free, &RunSettings::new(1, SEED, 1.0 / 365.0)).unwrap();
    out.push(line(
        "1 diagnostic: deterministic fixture, default free",
        r.pass,
        format!("rel residual {:.3e}", r.residual / r.diagnostics["v_hat_a"].abs()),
    ));
    let sto = fixtures::without_counterparty_default(&sto);
    let r = check_invariance("sto_free", &sto, &a, &b, &free, &RunSettings::new(20_000, SEED, 1.0 / 52.0)).unwrap();
    out.push(line(
        "1 diagnostic: stochastic fixture, default free, 20k paths",
        r.pass,
        format!("residual {:.3e}, tolerance {:.3e}", r.residual, r.tolerance),
    ));
    out
}

fn oracles() -> Vec<Line> {
    ORACLE_CASES
        .iter()
        .map(|id| {
            let r = check_oracle(id, 1.0 / 365.0).unwrap();
            line(
                "2 analytic oracle (1e-4)",
                r.pass,
                format!("{id}: engine {:.6} vs closed form {:.6}", r.diagnostics["engine"], r.diagnostics["expected"]),
            )
        })
        .collect()
}

fn zero_profit_center() -> Vec<Line> {
    let ledger = fixtures::standard_ledger();
    let ois = fixtures::ois_curve();
    let total: f64 = ledger.weights(0.0).unwrap().iter().map(|(b, _)| b.notional).sum();
    let acc = ftp_accounting(&ledger, 0.0, FtpForm::Exact).unwrap();
    let mgmt = ftp_management(&ledger, 0.0).unwrap();
    let fa_acc = financial_area_balance(&ledger, &acc, &ois, 0.0, true).unwrap() / total;
    let fa_mgmt = financial_area_balance(&ledger, &mgmt, &ois, 0.0, false).unwrap() / total;
    vec![
        line(
            "3 zero-profit centre, accounting FTP with defaultable bank",
            fa_acc.abs() < 1e-8,
            format!("|FA|/F = {:.3e}", fa_acc.abs()),
        ),
        line(
            "3 zero-profit centre, management FTP with default-free bank",
            fa_mgmt.abs() < 1e-8,
            format!("|FA|/F = {:.3e}", fa_mgmt.abs()),
        ),
    ]
}

fn aggregation() -> Vec<Line> {
    let mut out = Vec::new();
    for (name, inputs, n_paths) in [
        ("mixed-sign", fixtures::mixed_sign(), 1),
        ("3-set deterministic", fixtures::invariance_deterministic(), 1),
        ("3-set stochastic", fixtures::invariance_stochastic(), 2_000),
    ] {
        let report = run_engine(&inputs, &PerspectiveConfig::accounting(), &RunSettings::new(n_paths, SEED, 1.0 / 52.0))
            .unwrap();
        let le = &report.legal_entity;
        let gap = (le.fva_sum_netting_sets - le.fva_single_set).abs();
        let tol = 1e-12 * gross_notional(&inputs);
        out.push(line(
            "4 symmetric rates: sum over netting sets = legal-entity FVA",
            gap <= tol,
            format!("{name}: |gap| {gap:.2e} <= {tol:.2e}"),
        ));
    }
    let inputs = fixtures::mixed_sign();
    let report = run_engine(&inputs, &fixtures::asymmetric_config(), &RunSettings::new(1, SEED, 1.0 / 52.0)).unwrap();
    let le = &report.legal_entity;
    out.push(line(
        "4 asymmetric rates: sum over netting sets > legal-entity FVA",
        le.fva_sum_netting_sets > le.fva_single_set,
        format!("{:.6} > {:.6}", le.fva_sum_netting_sets, le.fva_single_set),
    ));
    out
}

fn survival_ordering() -> Vec<Line> {
    let fixtures_list: [(&str, EngineInputs, usize); 4] = [
        ("3-set deterministic", fixtures::invariance_deterministic(), 1),
        ("3-set stochastic", fixtures::invariance_stochastic(), 2_000),
        ("asset-heavy", fixtures::asset_heavy(), 2_000),
        ("mixed-sign", fixtures::mixed_sign(), 1),
    ];
    let mut out = Vec::new();
    for (name, inputs, n_paths) in fixtures_list {
        let settings = RunSettings::new(n_paths, SEED, 1.0 / 52.0);
        let cva = |mode: SurvivalMode, default_free: bool| {
            let config = PerspectiveConfig {
                survival_mode: mode,
                bank_default_free: default_free,
                ..PerspectiveConfig::accounting()
            };
            let r = run_engine(&inputs, &config, &settings).unwrap();
            let mut v: Vec<f64> = r.netting_sets.iter().map(|n| n.metrics.cva).collect();
            v.push(r.legal_entity.metrics.cva);
            v
        };
        let (ftd, uni) = (cva(SurvivalMode::FirstToDefault, false), cva(SurvivalMode::Unilateral, false));
        let ordered = ftd.iter().zip(&uni).all(|(f, u)| f <= u);
        out.push(line(
            "5 CVA first-to-default <= unilateral (bank hazard > 0)",
            ordered,
            format!("{name}: LE {:.6} <= {:.6}", ftd.last().unwrap(), uni.last().unwrap()),
        ));
        let (ftd, uni) = (cva(SurvivalMode::FirstToDefault, true), cva(SurvivalMode::Unilateral, true));
        out.push(line(
            "5 CVA first-to-default = unilateral (bank hazard = 0)",
            ftd == uni,
            format!("{name}: LE {:.6} = {:.6}", ftd.last().unwrap(), uni.last().unwrap()),
        ));
    }
    out
}

fn discount_relation() -> Vec<Line> {
    let (flows, sys, funding, hazard) = xva_core::verification::discount_relation_fixture();
    let mut out = Vec::new();
    for (name, h) in [("without default", None), ("with default", Some(&hazard))] {
        let run = |step: f64| {
            check_discount_relation(name, &flows, &sys, &funding, h, step, Quadrature::LeftRiemann).unwrap()
        };
        let (coarse, fine) = (run(1.0 / 365.0), run(1.0 / 730.0));
        out.push(line(
            "6 two-curve relation residual (1e-6 rel, grid 1/365)",
            coarse.pass,
            format!("{name}: {:.3e}", coarse.residual),
        ));
        let ratio = fine.residual / coarse.residual;
        out.push(line(
            "6 two-curve relation residual halves under grid halving (+-20%)",
            (ratio - 0.5).abs() <= 0.1,
            format!("{name}: ratio {ratio:.5}"),
        ));
    }
    out
}

fn transition() -> Vec<Line> {
    let settings = RunSettings::new(20_000, SEED, 1.0 / 52.0);
    let mut out = Vec::new();

    let inputs = fixtures::asset_heavy();
    let acc = run_engine(&inputs, &PerspectiveConfig::accounting(), &settings).unwrap();
    let mgmt = run_engine(&inputs, &PerspectiveConfig::management(), &settings).unwrap();
    let t = transition_report(&acc, &mgmt).unwrap();
    out.push(line(
        "7 asset-heavy, positive CDS: delta V_hat < 0, DVA removal <= 0, funding delta <= 0",
        t.delta_v_hat < 0.0 && t.dva_removal <= 0.0 && t.funding_delta <= 0.0,
        format!(
            "delta {:.5} = dva {:.5} + funding {:.5} + credit {:.5}",
            t.delta_v_hat, t.dva_removal, t.funding_delta, t.credit_delta
        ),
    ));

    let mut inputs = fixtures::invariance_stochastic();
    inputs.ledger = Some(fixtures::zero_cds_ledger());
    let acc = run_engine(&inputs, &PerspectiveConfig::accounting(), &settings).unwrap();
    let mgmt = run_engine(&inputs, &PerspectiveConfig::management(), &settings).unwrap();
    let t = transition_report(&acc, &mgmt).unwrap();
    let gap = (t.delta_v_hat - t.dva_removal).abs();
    let tol = 1e-12 * gross_notional(&inputs);
    out.push(line(
        "7 zero-CDS ledger: delta V_hat = -DVA",
        gap <= tol,
        format!("delta {:.3e}, dva removal {:.3e}, |gap| {gap:.2e}", t.delta_v_hat, t.dva_removal),
    ));
    out
}

fn determinism() -> Vec<Line> {
    let inputs = fixtures::invariance_stochastic();
    let base = RunSettings::new(3_000, SEED, 1.0 / 52.0);
    let json = |threads: usize| {
        run_engine(&inputs, &PerspectiveConfig::accounting(), &base.with_threads(threads))
            .unwrap()
            .to_json()
            .unwrap()
    };
    let reference = json(1);
    [2, 3, 8]
        .into_iter()
        .map(|t| {
            line(
                "8 byte-identical report regardless of worker count",
                json(t) == reference,
                format!("1 vs {t} threads"),
            )
        })
        .collect()
}

fn main() {
    let sections: [fn() -> Vec<Line>; 8] = [
        invariance,
        oracles,
        zero_profit_center,
        aggregation,
        survival_ordering,
        discount_relation,
        transition,
        determinism,
    ];
    let mut failed = 0;
    for section in sections {
        for l in section() {
            println!("{} criterion {} -- {}", if l.pass { "PASS" } else { "FAIL" }, l.criterion, l.detail);
            if !l.pass {
                failed += 1;
            }
        }
    }
    if failed > 0 {
        println!("acceptance: {failed} line(s) failed");
        std::process::exit(1);
    }
    println!("acceptance: all lines passed");
}
