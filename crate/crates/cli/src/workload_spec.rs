//! Workload grammar: `all-K-way`, or an explicit JSON list of cliques given
//! inline or as a path to a `.json` file. Clique members are attribute
//! names or zero-based indices.

use std::path::Path;

use anyhow::{bail, Context, Result};
use rem_core::workload::{all_k_way, Clique, Domain};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq)]
pub enum WorkloadSpec {
    AllKWay(usize),
    Explicit(Vec<Vec<Value>>),
}

impl WorkloadSpec {
    /// Syntax check only; names are resolved against a domain later.
    pub fn parse(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        if let Some(k) = spec
            .strip_prefix("all-")
            .and_then(|s| s.strip_suffix("-way"))
        {
            let k: usize = k
                .parse()
                .with_context(|| format!("bad clique size in workload `{spec}`"))?;
            return Ok(Self::AllKWay(k));
        }
        let text = if spec.starts_with('[') {
            spec.to_string()
        } else if Path::new(spec).extension().is_some_and(|e| e == "json") {
            std::fs::read_to_string(spec)
                .with_context(|| format!("reading workload file `{spec}`"))?
        } else {
            bail!("workload must be `all-K-way`, a JSON list of cliques, or a .json file, got `{spec}`");
        };
        let cliques: Vec<Vec<Value>> =
            serde_json::from_str(&text).context("workload JSON must be a list of lists")?;
        if cliques.is_empty() {
            bail!("workload lists no cliques");
        }
        for member in cliques.iter().flatten() {
            if !(member.is_string() || member.is_u64()) {
                bail!("clique members must be attribute names or indices, got {member}");
            }
        }
        Ok(Self::Explicit(cliques))
    }

    pub fn resolve(&self, domain: &Domain) -> Result<Vec<Clique>> {
        match self {
            Self::AllKWay(k) => {
                if *k > domain.len() {
                    bail!(
                        "all-{k}-way needs at least {k} attributes, domain has {}",
                        domain.len()
                    );
                }
                Ok(all_k_way(domain.len(), *k))
            }
            Self::Explicit(cliques) => cliques
                .iter()
                .map(|members| {
                    let attrs = members
                        .iter()
                        .map(|m| match m {
                            Value::String(name) => Ok(domain.index_of(name)?),
                            Value::Number(n) => {
                                let i = n.as_u64().unwrap_or(u64::MAX) as usize;
                                if i >= domain.len() {
                                    bail!("attribute index {i} out of range");
                                }
                                Ok(i)
                            }
                            other => bail!("bad clique member {other}"),
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Ok(Clique::new(attrs)?)
                })
                .collect(),
        }
    }
}
