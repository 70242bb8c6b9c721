use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;
use xva_core::fixtures::{self, input_documents};
use xva_core::EngineInputs;

fn xva() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_xva"));
    c.env_remove("XVA_THREADS");
    c
}

fn write_json(path: &Path, value: &impl serde::Serialize) {
    fs::write(path, serde_json::to_string_pretty(value).unwrap()).unwrap();
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new(inputs: &EngineInputs) -> Self {
        let dir = TempDir::new().unwrap();
        let docs = input_documents(inputs);
        write_json(&dir.path().join("portfolio.json"), &docs.portfolio);
        write_json(&dir.path().join("hierarchy.json"), &docs.hierarchy);
        write_json(&dir.path().join("ledger.json"), docs.ledger.as_ref().unwrap());
        fs::create_dir(dir.path().join("curves")).unwrap();
        for c in &docs.curves {
            write_json(&dir.path().join("curves").join(format!("{}.json", c.id)), c);
        }
        Workspace { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, extra: &[&str]) -> Output {
        let mut c = xva();
        c.arg("run");
        for (flag, file) in [
            ("--portfolio", "portfolio.json"),
            ("--curves", "curves"),
            ("--ledger", "ledger.json"),
            ("--hierarchy", "hierarchy.json"),
        ] {
            c.arg(flag).arg(self.path(file));
        }
        c.args(extra).output().unwrap()
    }
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn ftp_estimators() {
    let dir = TempDir::new().unwrap();
    let single = dir.path().join("single.json");
    fs::write(
        &single,
        r#"{"current_cds": 0.015, "bank_recovery": 0.4,
            "bonds": [{"issue_time": -1, "maturity": 5, "notional": 100, "ois": 0.01, "cds": 0.015, "liquidity": 0.005}]}"#,
    )
    .unwrap();
    let rate = |ledger: &Path, mode: &str| {
        let out = dir.path().join(format!("{mode}.json"));
        ok(&xva()
            .args(["ftp", "--mode", mode, "--ledger"])
            .arg(ledger)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap());
        let doc = read(&out);
        assert_eq!(doc["kind"], "funding");
        doc["pillars"][0][1].as_f64().unwrap()
    };
    assert!((rate(&single, "accounting") - 0.015).abs() < 1e-15);
    assert!((rate(&single, "management") - 0.03).abs() < 1e-15);

    let two = dir.path().join("two.json");
    fs::write(
        &two,
        r#"{"current_cds": 0.01, "bank_recovery": 0.4, "bonds": [
            {"issue_time": -2, "maturity": 5, "notional": 100, "ois": 0.01, "cds": 0.01, "liquidity": 0.004},
            {"issue_time": -1, "maturity": 6, "notional": 300, "ois": 0.01, "cds": 0.01, "liquidity": 0.008}]}"#,
    )
    .unwrap();
    let oracle = 0.01 + (100.0 * 0.004 + 300.0 * 0.008) / 400.0;
    assert!((rate(&two, "accounting") - oracle).abs() < 1e-15);
    assert!((rate(&two, "accounting-exact") - oracle).abs() < 1e-15);

    let empty = dir.path().join("empty.json");
    fs::write(&empty, r#"{"current_cds": 0.01, "bank_recovery": 0.4, "bonds": []}"#).unwrap();
    let out = xva().args(["ftp", "--ledger"]).arg(&empty).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn run_is_deterministic_across_worker_counts() {
    let ws = Workspace::new(&fixtures::invariance_stochastic());
    let mut reports = Vec::new();
    for threads in ["1", "1", "4"] {
        let out = ws.path(&format!("r{}.json", reports.len()));
        let mut cmd = xva();
        cmd.env("XVA_THREADS", threads).arg("run");
        for (flag, file) in [
            ("--portfolio", "portfolio.json"),
            ("--curves", "curves"),
            ("--ledger", "ledger.json"),
            ("--hierarchy", "hierarchy.json"),
        ] {
            cmd.arg(flag).arg(ws.path(file));
        }
        ok(&cmd.args(["--paths", "700", "--seed", "5"]).arg("--out").arg(&out).output().unwrap());
        reports.push(fs::read(&out).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(reports[0], reports[2]);
}

#[test]
fn management_report_has_no_dva_and_transition_adds_up() {
    let ws = Workspace::new(&fixtures::invariance_deterministic());
    for p in ["accounting", "management"] {
        let out = ws.run(&["--perspective", p, "--paths", "1", "--out", ws.path(&format!("{p}.json")).to_str().unwrap()]);
        ok(&out);
        assert!(String::from_utf8_lossy(&out.stdout).contains("legal_entity"));
    }
    let acc = read(&ws.path("accounting.json"));
    let mgmt = read(&ws.path("management.json"));
    assert!(acc["legal_entity"]["dva"].as_f64().unwrap() > 0.0);
    assert_eq!(mgmt["legal_entity"]["dva"].as_f64().unwrap(), 0.0);
    assert_eq!(acc["metadata"]["portfolio_digest"], mgmt["metadata"]["portfolio_digest"]);

    let t_path = ws.path("transition.json");
    ok(&xva()
        .arg("transition")
        .arg(ws.path("accounting.json"))
        .arg(ws.path("management.json"))
        .arg("--out")
        .arg(&t_path)
        .output()
        .unwrap());
    let t = read(&t_path);
    let f = |v: &Value, k: &str| v["legal_entity"][k].as_f64().unwrap();
    let expected = f(&mgmt, "v_hat") - f(&acc, "v_hat");
    assert!((t["delta_v_hat"].as_f64().unwrap() - expected).abs() < 1e-12);
    assert!((t["dva_removal"].as_f64().unwrap() + f(&acc, "dva")).abs() < 1e-12);

    // a report compared with itself has no deltas
    let same = xva()
        .arg("transition")
        .arg(ws.path("accounting.json"))
        .arg(ws.path("accounting.json"))
        .output()
        .unwrap();
    ok(&same);
    let t: Value = serde_json::from_slice(&same.stdout).unwrap();
    for k in ["delta_v_hat", "dva_removal", "funding_delta", "credit_delta"] {
        assert_eq!(t[k].as_f64().unwrap(), 0.0);
    }
}

#[test]
fn transition_rejects_mismatched_runs() {
    let ws = Workspace::new(&fixtures::invariance_deterministic());
    ok(&ws.run(&["--seed", "1", "--paths", "1", "--out", ws.path("a.json").to_str().unwrap()]));
    ok(&ws.run(&["--seed", "2", "--paths", "1", "--perspective", "management", "--out", ws.path("b.json").to_str().unwrap()]));
    let out = xva().arg("transition").arg(ws.path("a.json")).arg(ws.path("b.json")).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
}

#[test]
fn flags_override_config_file() {
    let ws = Workspace::new(&fixtures::invariance_deterministic());
    let cfg = ws.path("run.json");
    fs::write(
        &cfg,
        r#"{"portfolio": "portfolio.json", "curves": "curves", "ledger": "ledger.json",
            "hierarchy": "hierarchy.json", "paths": 3, "seed": 11, "format": "csv", "out": "from_config.csv"}"#,
    )
    .unwrap();
    ok(&xva().arg("run").arg("--config").arg(&cfg).output().unwrap());
    let csv = fs::read_to_string(ws.path("from_config.csv")).unwrap();
    assert!(csv.starts_with("level,id,v0,colva,fva,cva,dva,v_hat"));
    assert_eq!(csv.lines().count(), 5);

    let out = ws.path("flags.json");
    ok(&xva()
        .arg("run")
        .arg("--config")
        .arg(&cfg)
        .args(["--paths", "2", "--format", "json", "--out"])
        .arg(&out)
        .output()
        .unwrap());
    let r = read(&out);
    assert_eq!(r["metadata"]["n_paths"], 2);
    assert_eq!(r["metadata"]["seed"], 11);
}

#[test]
fn custom_perspective_from_config() {
    let ws = Workspace::new(&fixtures::invariance_deterministic());
    let cfg = ws.path("custom.json");
    fs::write(
        &cfg,
        r#"{"perspective": "custom", "custom": {"name": "desk", "survival_mode": "first_to_default", "include_dva": false}}"#,
    )
    .unwrap();
    let out = ws.path("custom_report.json");
    ok(&ws.run(&["--config", cfg.to_str().unwrap(), "--paths", "1", "--out", out.to_str().unwrap()]));
    let r = read(&out);
    assert_eq!(r["metadata"]["perspective"], "desk");
    assert_eq!(r["legal_entity"]["dva"].as_f64().unwrap(), 0.0);

    fs::write(&cfg, r#"{"perspective": "custom"}"#).unwrap();
    let bad = ws.run(&["--config", cfg.to_str().unwrap()]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("custom"));
}

#[test]
fn errors_name_the_offending_entity() {
    let ws = Workspace::new(&fixtures::invariance_deterministic());
    let mut h = read(&ws.path("hierarchy.json"));
    h["netting_sets"][1]["uncovered_deal_ids"] = serde_json::json!(["u_rec", "ghost_deal"]);
    write_json(&ws.path("hierarchy.json"), &h);
    let out = ws.run(&["--paths", "1"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("ghost_deal") && err.contains("unsecured"), "{err}");

    let out = ws.run(&["--paths", "0"]);
    assert!(!out.status.success());
}

#[test]
fn verify_emits_residual_reports() {
    let ws = Workspace::new(&fixtures::without_counterparty_default(&fixtures::invariance_deterministic()));
    let cfg = ws.path("free.json");
    fs::write(&cfg, r#"{"perspective": "custom", "custom": {"bank_default_free": true}}"#).unwrap();
    let out_path = ws.path("verify.json");
    let out = xva()
        .args(["verify", "--paths", "1000", "--grid-step", "0.01"])
        .arg("--portfolio")
        .arg(ws.path("portfolio.json"))
        .arg("--curves")
        .arg(ws.path("curves"))
        .arg("--ledger")
        .arg(ws.path("ledger.json"))
        .arg("--hierarchy")
        .arg(ws.path("hierarchy.json"))
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out_path)
        .output()
        .unwrap();
    ok(&out);
    let reports = read(&out_path);
    let reports = reports.as_array().unwrap();
    assert!(reports.iter().all(|r| r["pass"] == true));
    assert!(reports.iter().any(|r| r["id"] == "invariance_user_inputs"));
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS"));
}
