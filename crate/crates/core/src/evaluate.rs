//! Workload error metrics, truncation baselines and report emission.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::workload::{Clique, MarginalTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    L1,
    L2,
}

/// Mean over the workload of `||estimate_gamma - truth_gamma||`.
pub fn workload_error<T: Scalar>(
    truth: &BTreeMap<Clique, MarginalTable<T>>,
    estimate: &BTreeMap<Clique, MarginalTable<T>>,
    norm: Norm,
) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::Empty("workload for error computation".into()));
    }
    if truth.len() != estimate.len() || truth.keys().any(|k| !estimate.contains_key(k)) {
        return Err(Error::Config(
            "truth and estimate cover different workload cliques".into(),
        ));
    }
    let mut sum = 0.0;
    for (gamma, t) in truth {
        let e = &estimate[gamma];
        if e.values.len() != t.values.len() {
            return Err(Error::Shape {
                expected: t.values.len(),
                got: e.values.len(),
            });
        }
        let diffs = t
            .values
            .iter()
            .zip(&e.values)
            .map(|(&a, &b)| (a - b).as_f64());
        sum += match norm {
            Norm::L1 => diffs.map(f64::abs).sum::<f64>(),
            Norm::L2 => diffs.map(|x| x * x).sum::<f64>().sqrt(),
        };
    }
    Ok(sum / truth.len() as f64)
}

/// Negative cells set to zero.
pub fn trunc<T: Scalar>(table: &MarginalTable<T>) -> MarginalTable<T> {
    MarginalTable {
        clique: table.clique.clone(),
        values: table.values.iter().map(|&v| v.max(T::zero())).collect(),
    }
}

/// Truncation followed by rescaling to `max(0, sum of the input)`.
pub fn trunc_rescale<T: Scalar>(table: &MarginalTable<T>) -> MarginalTable<T> {
    let target = table.total().max(T::zero());
    let mut out = trunc(table);
    let kept = out.total();
    if kept > T::zero() {
        let f = target / kept;
        out.values.iter_mut().for_each(|v| *v = *v * f);
    } else {
        out.values.iter_mut().for_each(|v| *v = T::zero());
    }
    out
}

/// One trial of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub mechanism: String,
    pub postprocessor: String,
    pub dataset: String,
    pub epsilon: f64,
    pub seed: u64,
    pub l1_error: f64,
    pub l2_error: f64,
    pub seconds: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl Spread {
    fn of(values: &[f64]) -> Self {
        Self {
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            mean: values.iter().sum::<f64>() / values.len() as f64,
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Aggregate over the trials of one `(mechanism, postprocessor, dataset,
/// epsilon)` group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub mechanism: String,
    pub postprocessor: String,
    pub dataset: String,
    pub epsilon: f64,
    pub trials: usize,
    pub converged: usize,
    pub l1_error: Spread,
    pub l2_error: Spread,
    pub seconds: Spread,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub rows: Vec<ErrorRow>,
}

impl ErrorReport {
    pub fn push(&mut self, row: ErrorRow) -> Result<()> {
        if !(row.l1_error >= 0.0 && row.l2_error >= 0.0) {
            return Err(Error::Numeric(format!(
                "errors must be non-negative, got l1 {} and l2 {}",
                row.l1_error, row.l2_error
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        if self.rows.is_empty() {
            w.write_record([
                "mechanism",
                "postprocessor",
                "dataset",
                "epsilon",
                "seed",
                "l1_error",
                "l2_error",
                "seconds",
                "converged",
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(BufWriter::new(File::create(path)?))
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let rows = r
            .deserialize()
            .collect::<std::result::Result<Vec<ErrorRow>, _>>()?;
        Ok(Self { rows })
    }

    /// Groups in first-appearance order.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut order: Vec<(String, String, String, u64)> = Vec::new();
        let mut groups: BTreeMap<(String, String, String, u64), Vec<&ErrorRow>> = BTreeMap::new();
        for r in &self.rows {
            let key = (
                r.mechanism.clone(),
                r.postprocessor.clone(),
                r.dataset.clone(),
                r.epsilon.to_bits(),
            );
            if !groups.contains_key(&key) {
                order.push(key.clone());
            }
            groups.entry(key).or_default().push(r);
        }
        order
            .into_iter()
            .map(|key| {
                let rows = &groups[&key];
                let pick = |f: fn(&ErrorRow) -> f64| rows.iter().map(|r| f(r)).collect::<Vec<_>>();
                SummaryRow {
                    mechanism: key.0.clone(),
                    postprocessor: key.1.clone(),
                    dataset: key.2.clone(),
                    epsilon: f64::from_bits(key.3),
                    trials: rows.len(),
                    converged: rows.iter().filter(|r| r.converged).count(),
                    l1_error: Spread::of(&pick(|r| r.l1_error)),
                    l2_error: Spread::of(&pick(|r| r.l2_error)),
                    seconds: Spread::of(&pick(|r| r.seconds)),
                }
            })
            .collect()
    }

    pub fn save_summary_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, &self.summary())?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }
}
