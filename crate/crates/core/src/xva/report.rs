use serde::{Deserialize, Serialize};

use crate::error::{Result, XvaError};

use super::config::PerspectiveConfig;

/// Adjustments for one aggregation level. `dva` is reported as a benefit
/// (nonnegative), so `v_hat = v0 − colva − fva − cva + dva`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    /// Value on the system marking curve today.
    pub v0: f64,
    pub colva: f64,
    pub fva: f64,
    pub cva: f64,
    pub dva: f64,
    pub v_hat: f64,
    pub se_colva: f64,
    pub se_fva: f64,
    pub se_cva: f64,
    pub se_dva: f64,
    pub se_v_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NettingSetReport {
    pub id: String,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegalEntityReport {
    #[serde(flatten)]
    pub metrics: Metrics,
    /// FVA summed over netting sets (each choosing its own funding side).
    pub fva_sum_netting_sets: f64,
    /// FVA of the legal entity taken as one funding set.
    pub fva_single_set: f64,
    pub se_fva_sum_netting_sets: f64,
    pub se_fva_single_set: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub perspective: String,
    pub seed: u64,
    pub n_paths: usize,
    pub grid_step: f64,
    pub n_time_nodes: usize,
    pub marking_curve_id: String,
    pub funding_curve_id: String,
    pub funding_curve: Vec<[f64; 2]>,
    /// Digest of the portfolio input, filled in by callers that have one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub portfolio_digest: Option<String>,
    pub config: PerspectiveConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XvaReport {
    pub metadata: RunMetadata,
    pub netting_sets: Vec<NettingSetReport>,
    pub legal_entity: LegalEntityReport,
}

const CSV_HEADER: &str = "level,id,v0,colva,fva,cva,dva,v_hat,se_colva,se_fva,se_cva,se_dva,se_v_hat";

fn csv_row(level: &str, id: &str, m: &Metrics) -> String {
    format!(
        "{level},{id},{},{},{},{},{},{},{},{},{},{},{}",
        m.v0, m.colva, m.fva, m.cva, m.dva, m.v_hat, m.se_colva, m.se_fva, m.se_cva, m.se_dva, m.se_v_hat
    )
}

impl XvaReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// One row per netting set plus a legal-entity row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for ns in &self.netting_sets {
            out.push_str(&csv_row("netting_set", &ns.id, &ns.metrics));
            out.push('\n');
        }
        out.push_str(&csv_row("legal_entity", "", &self.legal_entity.metrics));
        out.push('\n');
        out
    }
}

/// Value change from moving the accounting report to the management one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionReport {
    pub accounting_v_hat: f64,
    pub management_v_hat: f64,
    /// `management_v_hat − accounting_v_hat`.
    pub delta_v_hat: f64,
    /// DVA benefit dropped (`dva_mgmt − dva_acc`, ≤ 0 when management has no DVA).
    pub dva_removal: f64,
    /// `(colva + fva)_acc − (colva + fva)_mgmt`.
    pub funding_delta: f64,
    /// `cva_acc − cva_mgmt`: survival and discounting changes in CVA.
    pub credit_delta: f64,
    pub netting_sets: Vec<TransitionLine>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionLine {
    pub id: String,
    pub delta_v_hat: f64,
    pub dva_removal: f64,
    pub funding_delta: f64,
    pub credit_delta: f64,
}

fn deltas(a: &Metrics, m: &Metrics) -> (f64, f64, f64, f64) {
    (
        m.v_hat - a.v_hat,
        m.dva - a.dva,
        (a.colva + a.fva) - (m.colva + m.fva),
        a.cva - m.cva,
    )
}

pub fn transition_report(accounting: &XvaReport, management: &XvaReport) -> Result<TransitionReport> {
    let (a, m) = (&accounting.metadata, &management.metadata);
    let mut mismatches = Vec::new();
    if a.seed != m.seed {
        mismatches.push(format!("seed {} vs {}", a.seed, m.seed));
    }
    if a.n_paths != m.n_paths {
        mismatches.push(format!("n_paths {} vs {}", a.n_paths, m.n_paths));
    }
    if a.grid_step != m.grid_step || a.n_time_nodes != m.n_time_nodes {
        mismatches.push(format!("grid {} vs {}", a.grid_step, m.grid_step));
    }
    if a.marking_curve_id != m.marking_curve_id {
        mismatches.push(format!("marking curve '{}' vs '{}'", a.marking_curve_id, m.marking_curve_id));
    }
    if a.portfolio_digest != m.portfolio_digest {
        mismatches.push("portfolio digest differs".into());
    }
    let ids_a: Vec<&str> = accounting.netting_sets.iter().map(|n| n.id.as_str()).collect();
    let ids_m: Vec<&str> = management.netting_sets.iter().map(|n| n.id.as_str()).collect();
    if ids_a != ids_m {
        mismatches.push("netting sets differ".into());
    }
    if !mismatches.is_empty() {
        return Err(XvaError::MetadataMismatch(mismatches.join("; ")));
    }

    let (delta_v_hat, dva_removal, funding_delta, credit_delta) =
        deltas(&accounting.legal_entity.metrics, &management.legal_entity.metrics);
    let netting_sets = accounting
        .netting_sets
        .iter()
        .zip(&management.netting_sets)
        .map(|(x, y)| {
            let (dv, dd, df, dc) = deltas(&x.metrics, &y.metrics);
            TransitionLine {
                id: x.id.clone(),
                delta_v_hat: dv,
                dva_removal: dd,
                funding_delta: df,
                credit_delta: dc,
            }
        })
        .collect();
    Ok(TransitionReport {
        accounting_v_hat: accounting.legal_entity.metrics.v_hat,
        management_v_hat: management.legal_entity.metrics.v_hat,
        delta_v_hat,
        dva_removal,
        funding_delta,
        credit_delta,
        netting_sets,
    })
}
