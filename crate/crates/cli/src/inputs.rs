//! Loading of market and trade data from disk.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde_json::Value;
use sha2::{Digest, Sha256};
use xva_core::collateral::HierarchyFile;
use xva_core::exposure::PortfolioFile;
use xva_core::funding_ledger::LedgerFile;
use xva_core::termstructures::CurveDocument;
use xva_core::{CurveSet, EngineInputs, IssuanceLedger};

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Curves from a file (one document or an array of them) or from every
/// `.json` file of a directory, in name order.
pub fn load_curves(path: &Path) -> Result<CurveSet> {
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut v: Vec<PathBuf> = fs::read_dir(path)
            .with_context(|| format!("listing {}", path.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        v.sort();
        v
    } else {
        vec![path.to_path_buf()]
    };
    let mut set = CurveSet::default();
    for file in files {
        let docs: Vec<CurveDocument> = match read_json::<Value>(&file)? {
            Value::Array(items) => items
                .into_iter()
                .map(serde_json::from_value)
                .collect::<std::result::Result<_, _>>()
                .with_context(|| format!("parsing curves in {}", file.display()))?,
            single => vec![serde_json::from_value(single).with_context(|| format!("parsing curve {}", file.display()))?],
        };
        for doc in docs {
            set.insert(doc).with_context(|| format!("loading curves from {}", file.display()))?;
        }
    }
    Ok(set)
}

pub fn load_ledger(path: &Path) -> Result<IssuanceLedger> {
    let file: LedgerFile = read_json(path)?;
    file.into_ledger().with_context(|| format!("validating ledger {}", path.display()))
}

/// Paths of the four input files.
#[derive(Debug, Clone)]
pub struct InputPaths {
    pub portfolio: PathBuf,
    pub curves: PathBuf,
    pub ledger: Option<PathBuf>,
    pub hierarchy: PathBuf,
}

/// Loaded inputs plus a SHA-256 over the portfolio and hierarchy bytes.
pub fn load_inputs(paths: &InputPaths) -> Result<(EngineInputs, String)> {
    let portfolio_bytes = fs::read(&paths.portfolio).with_context(|| format!("reading {}", paths.portfolio.display()))?;
    let hierarchy_bytes = fs::read(&paths.hierarchy).with_context(|| format!("reading {}", paths.hierarchy.display()))?;
    let mut hasher = Sha256::new();
    hasher.update(&portfolio_bytes);
    hasher.update([0u8]);
    hasher.update(&hierarchy_bytes);
    let digest = hex::encode(hasher.finalize());

    let portfolio: PortfolioFile = serde_json::from_slice(&portfolio_bytes)
        .with_context(|| format!("parsing {}", paths.portfolio.display()))?;
    let portfolio = portfolio
        .into_portfolio()
        .with_context(|| format!("validating portfolio {}", paths.portfolio.display()))?;
    let curves = load_curves(&paths.curves)?;
    let hierarchy: HierarchyFile = serde_json::from_slice(&hierarchy_bytes)
        .with_context(|| format!("parsing {}", paths.hierarchy.display()))?;
    let hierarchy = hierarchy
        .into_hierarchy(&curves, &portfolio)
        .with_context(|| format!("validating hierarchy {}", paths.hierarchy.display()))?;
    let ledger = paths.ledger.as_deref().map(load_ledger).transpose()?;
    Ok((
        EngineInputs {
            portfolio,
            hierarchy,
            curves,
            ledger,
        },
        digest,
    ))
}

pub fn require<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a PathBuf> {
    match value {
        Some(p) => Ok(p),
        None => bail!("missing {flag} (give the flag or set it in --config)"),
    }
}
