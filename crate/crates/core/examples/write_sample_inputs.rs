//! Writes the three-netting-set stochastic fixture as CLI input files.
//!
//! Usage: `cargo run -p xva-core --example write_sample_inputs -- <dir>`

use std::fs;
use std::path::PathBuf;

use xva_core::fixtures::{input_documents, invariance_stochastic};

fn write(path: PathBuf, value: &impl serde::Serialize) {
    fs::write(&path, serde_json::to_string_pretty(value).unwrap() + "\n").unwrap();
    println!("wrote {}", path.display());
}

fn main() {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "sample".into()));
    fs::create_dir_all(dir.join("curves")).unwrap();
    let docs = input_documents(&invariance_stochastic());
    write(dir.join("portfolio.json"), &docs.portfolio);
    write(dir.join("hierarchy.json"), &docs.hierarchy);
    if let Some(ledger) = &docs.ledger {
        write(dir.join("ledger.json"), ledger);
    }
    for c in &docs.curves {
        write(dir.join("curves").join(format!("{}.json", c.id)), c);
    }
}
