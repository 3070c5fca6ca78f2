//! On-disk formats owned by the CLI: reconstructed marginals as JSON.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use rem_core::workload::{Clique, Domain, MarginalTable};
use serde::{Deserialize, Serialize};

/// One workload marginal, keyed by attribute names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalRecord {
    pub clique: Vec<String>,
    pub values: Vec<f64>,
}

pub fn marginal_records(
    domain: &Domain,
    marginals: &BTreeMap<Clique, MarginalTable<f64>>,
) -> Vec<MarginalRecord> {
    marginals
        .iter()
        .map(|(g, t)| MarginalRecord {
            clique: domain.clique_names(g),
            values: t.values.clone(),
        })
        .collect()
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn print_json<T: Serialize + ?Sized>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}
