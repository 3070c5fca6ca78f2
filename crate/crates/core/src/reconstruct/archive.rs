use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MarginalMeasurement, Measurement, ResidualMeasurement};
use crate::error::{Error, Result};
use crate::workload::Domain;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Marginal,
    Residual,
}

/// One archived measurement; cliques are stored by attribute name so an
/// archive stays readable without the index mapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveRecord {
    pub kind: RecordKind,
    pub clique: Vec<String>,
    pub sigma2: f64,
    pub values: Vec<f64>,
    pub seq: u64,
}

/// Append-only log of the measurements taken during a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MeasurementArchive {
    records: Vec<ArchiveRecord>,
}

impl MeasurementArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[ArchiveRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn next_seq(&self) -> u64 {
        self.records.len() as u64
    }

    pub fn push_marginal(&mut self, domain: &Domain, m: &MarginalMeasurement<f64>) {
        let seq = self.next_seq();
        self.records.push(ArchiveRecord {
            kind: RecordKind::Marginal,
            clique: domain.clique_names(&m.clique),
            sigma2: m.sigma2,
            values: m.values.clone(),
            seq,
        });
    }

    pub fn push_residual(&mut self, domain: &Domain, z: &ResidualMeasurement<f64>) {
        let seq = self.next_seq();
        self.records.push(ArchiveRecord {
            kind: RecordKind::Residual,
            clique: domain.clique_names(&z.clique),
            sigma2: z.sigma2,
            values: z.values.clone(),
            seq,
        });
    }

    /// Validates every record against `domain`; output is in `seq` order.
    pub fn measurements(&self, domain: &Domain) -> Result<Vec<Measurement<f64>>> {
        let mut sorted: Vec<&ArchiveRecord> = self.records.iter().collect();
        sorted.sort_by_key(|r| r.seq);
        if sorted.windows(2).any(|w| w[0].seq == w[1].seq) {
            return Err(Error::Config("archive has duplicate seq numbers".into()));
        }
        sorted
            .into_iter()
            .map(|r| {
                let clique = domain.clique_from_names(&r.clique)?;
                Ok(match r.kind {
                    RecordKind::Marginal => Measurement::Marginal(MarginalMeasurement::new(
                        domain,
                        clique,
                        r.values.clone(),
                        r.sigma2,
                    )?),
                    RecordKind::Residual => Measurement::Residual(ResidualMeasurement::new(
                        domain,
                        clique,
                        r.values.clone(),
                        r.sigma2,
                    )?),
                })
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::Clique;

    #[test]
    fn json_round_trip_is_exact() {
        let d = Domain::from_sizes(&[2, 3]).unwrap();
        let mut a = MeasurementArchive::new();
        let vals = vec![
            0.1 + 0.2,
            -1.0 / 3.0,
            1e-300,
            7.0,
            f64::MIN_POSITIVE,
            2.5e17,
        ];
        a.push_marginal(
            &d,
            &MarginalMeasurement::new(&d, Clique::new(vec![0, 1]).unwrap(), vals.clone(), 0.7)
                .unwrap(),
        );
        a.push_residual(
            &d,
            &ResidualMeasurement::new(&d, Clique::new(vec![1]).unwrap(), vec![1.0 / 7.0, 3.0], 2.0)
                .unwrap(),
        );
        let text = a.to_json().unwrap();
        assert!(text.contains("\"kind\": \"marginal\""));
        let b = MeasurementArchive::from_json(&text).unwrap();
        assert_eq!(a, b);
        let m = b.measurements(&d).unwrap();
        match (&m[0], &m[1]) {
            (Measurement::Marginal(y), Measurement::Residual(z)) => {
                assert_eq!(y.values, vals);
                assert_eq!(z.values, vec![1.0 / 7.0, 3.0]);
            }
            other => panic!("unexpected order {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_records() {
        let d = Domain::from_sizes(&[2, 3]).unwrap();
        let bad = r#"[{"kind":"residual","clique":["a1"],"sigma2":1.0,"values":[1.0],"seq":0}]"#;
        let a = MeasurementArchive::from_json(bad).unwrap();
        assert!(a.measurements(&d).is_err());
        let unknown =
            r#"[{"kind":"residual","clique":["zz"],"sigma2":1.0,"values":[1.0],"seq":0}]"#;
        assert!(MeasurementArchive::from_json(unknown)
            .unwrap()
            .measurements(&d)
            .is_err());
    }
}
