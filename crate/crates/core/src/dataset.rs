//! Categorical record sets: CSV ingestion, domain inference and exact
//! marginals computed straight from the records.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::workload::{Attribute, Clique, Domain, MarginalTable};

/// Records encoded as one category code per attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordSet {
    domain: Domain,
    codes: Vec<u32>,
}

impl RecordSet {
    pub fn new(domain: Domain, rows: &[Vec<u32>]) -> Result<Self> {
        let d = domain.len();
        let mut codes = Vec::with_capacity(rows.len() * d);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::Shape {
                    expected: d,
                    got: row.len(),
                });
            }
            for (k, &c) in row.iter().enumerate() {
                if c as usize >= domain.size(k) {
                    return Err(Error::Ingestion {
                        row: r + 1,
                        column: domain.name(k).to_string(),
                        reason: format!("code {c} outside [0, {})", domain.size(k)),
                    });
                }
            }
            codes.extend_from_slice(row);
        }
        Ok(Self { domain, codes })
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn len(&self) -> usize {
        if self.domain.is_empty() {
            0
        } else {
            self.codes.len() / self.domain.len()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[u32] {
        let d = self.domain.len();
        &self.codes[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u32]> {
        self.codes.chunks_exact(self.domain.len().max(1))
    }

    /// Reads a CSV file with a header row. Without a domain, categories are
    /// inferred in order of first appearance. With a domain, values are
    /// looked up in the attribute's labels, or parsed as integer codes when
    /// the attribute carries none.
    pub fn load_csv(path: impl AsRef<Path>, domain: Option<&Domain>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path.as_ref())?;
        let headers: Vec<String> = rdr
            .headers()?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        if headers.is_empty() || headers.iter().all(String::is_empty) {
            return Err(Error::Empty("CSV file has no header".into()));
        }
        match domain {
            Some(domain) => Self::load_with_domain(&mut rdr, &headers, domain),
            None => Self::load_inferred(&mut rdr, headers),
        }
    }

    fn load_inferred(rdr: &mut csv::Reader<std::fs::File>, headers: Vec<String>) -> Result<Self> {
        let d = headers.len();
        let mut lookup: Vec<HashMap<String, u32>> = vec![HashMap::new(); d];
        let mut labels: Vec<Vec<String>> = vec![Vec::new(); d];
        let mut codes = Vec::new();
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != d {
                return Err(Error::Ingestion {
                    row: r + 1,
                    column: headers
                        .get(rec.len().min(d - 1))
                        .cloned()
                        .unwrap_or_default(),
                    reason: format!("expected {d} fields, found {}", rec.len()),
                });
            }
            for (k, v) in rec.iter().enumerate() {
                let next = labels[k].len() as u32;
                let code = *lookup[k].entry(v.to_string()).or_insert_with(|| {
                    labels[k].push(v.to_string());
                    next
                });
                codes.push(code);
            }
        }
        if codes.is_empty() {
            return Err(Error::Empty("CSV file has no records".into()));
        }
        let domain = Domain::new(
            headers
                .into_iter()
                .zip(labels)
                .map(|(name, values)| Attribute {
                    name,
                    size: values.len(),
                    values: Some(values),
                })
                .collect(),
        )?;
        Ok(Self { domain, codes })
    }

    fn load_with_domain(
        rdr: &mut csv::Reader<std::fs::File>,
        headers: &[String],
        domain: &Domain,
    ) -> Result<Self> {
        // column position of each domain attribute
        let columns = domain
            .attributes()
            .iter()
            .map(|a| {
                headers
                    .iter()
                    .position(|h| *h == a.name)
                    .ok_or_else(|| Error::Ingestion {
                        row: 0,
                        column: a.name.clone(),
                        reason: "attribute missing from CSV header".into(),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        let lookups: Vec<Option<HashMap<&str, u32>>> = domain
            .attributes()
            .iter()
            .map(|a| {
                a.values.as_ref().map(|vals| {
                    vals.iter()
                        .enumerate()
                        .map(|(i, v)| (v.as_str(), i as u32))
                        .collect()
                })
            })
            .collect();
        let mut codes = Vec::new();
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec?;
            for (k, &col) in columns.iter().enumerate() {
                let attr = &domain.attributes()[k];
                let raw = rec.get(col).ok_or_else(|| Error::Ingestion {
                    row: r + 1,
                    column: attr.name.clone(),
                    reason: "missing field".into(),
                })?;
                let code = match &lookups[k] {
                    Some(map) => map.get(raw).copied(),
                    None => raw
                        .trim()
                        .parse::<u32>()
                        .ok()
                        .filter(|&c| (c as usize) < attr.size),
                };
                let code = code.ok_or_else(|| Error::Ingestion {
                    row: r + 1,
                    column: attr.name.clone(),
                    reason: format!("unknown value `{raw}`"),
                })?;
                codes.push(code);
            }
        }
        Ok(Self {
            domain: domain.clone(),
            codes,
        })
    }

    /// Writes the records with their category labels (or codes).
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.domain.attributes().iter().map(|a| a.name.as_str()))?;
        for row in self.rows() {
            let fields: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(k, &c)| match &self.domain.attributes()[k].values {
                    Some(v) => v[c as usize].clone(),
                    None => c.to_string(),
                })
                .collect();
            w.write_record(&fields)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Histogram of the records projected onto `gamma`, in row-major cell
    /// order. One pass, O(N |gamma|).
    pub fn exact_marginal<T: Scalar>(&self, gamma: &Clique) -> Result<MarginalTable<T>> {
        self.domain.check_clique(gamma)?;
        let sizes: Vec<usize> = gamma.iter().map(|k| self.domain.size(k)).collect();
        let mut counts = vec![0u64; sizes.iter().product()];
        for row in self.rows() {
            let mut cell = 0usize;
            for (k, &n) in gamma.iter().zip(&sizes) {
                cell = cell * n + row[k] as usize;
            }
            counts[cell] += 1;
        }
        MarginalTable::new(
            &self.domain,
            gamma.clone(),
            counts.into_iter().map(|c| T::of_f64(c as f64)).collect(),
        )
    }
}

/// Sizes of the bundled Titanic-shaped domain (9 attributes, about 8.9e7
/// cells in the full data vector).
pub const TITANIC_SHAPE: [(&str, usize); 9] = [
    ("pclass", 3),
    ("survived", 2),
    ("sex", 2),
    ("age", 50),
    ("sibsp", 7),
    ("parch", 8),
    ("fare", 60),
    ("embarked", 4),
    ("deck", 11),
];

/// Record count of the bundled Titanic-shaped dataset.
pub const TITANIC_ROWS: usize = 1304;

/// Labelled domain with attributes `name` of `size`, categories `name_i`.
pub fn labelled_domain(shape: &[(&str, usize)]) -> Result<Domain> {
    Domain::new(
        shape
            .iter()
            .map(|&(name, size)| Attribute {
                name: name.to_string(),
                size,
                values: Some((0..size).map(|i| format!("{name}_{i}")).collect()),
            })
            .collect(),
    )
}

/// Seeded latent-class sampler: each record picks one of `classes` hidden
/// groups, then draws every attribute from a group-specific categorical
/// distribution with Dirichlet(0.5) weights. Produces correlated, skewed
/// marginals.
pub fn latent_class_sample(
    domain: &Domain,
    rows: usize,
    classes: usize,
    seed: u64,
) -> Result<RecordSet> {
    if classes == 0 {
        return Err(Error::Config("at least one latent class required".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let gamma = Gamma::new(0.5, 1.0).map_err(|e| Error::Numeric(e.to_string()))?;
    let draw_probs = |n: usize, rng: &mut ChaCha20Rng| -> Vec<f64> {
        let w: Vec<f64> = (0..n).map(|_| gamma.sample(rng) + 1e-12).collect();
        let s: f64 = w.iter().sum();
        let mut acc = 0.0;
        w.iter()
            .map(|x| {
                acc += x / s;
                acc
            })
            .collect()
    };
    let class_cdf = draw_probs(classes, &mut rng);
    let attr_cdfs: Vec<Vec<Vec<f64>>> = (0..classes)
        .map(|_| {
            (0..domain.len())
                .map(|k| draw_probs(domain.size(k), &mut rng))
                .collect()
        })
        .collect();
    let pick =
        |cdf: &[f64], u: f64| cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1) as u32;
    let data: Vec<Vec<u32>> = (0..rows)
        .map(|_| {
            let cls = pick(&class_cdf, rng.random::<f64>()) as usize;
            (0..domain.len())
                .map(|k| pick(&attr_cdfs[cls][k], rng.random::<f64>()))
                .collect()
        })
        .collect();
    RecordSet::new(domain.clone(), &data)
}

/// The bundled Titanic-shaped synthetic dataset.
pub fn titanic_synthetic(seed: u64) -> Result<RecordSet> {
    latent_class_sample(&labelled_domain(&TITANIC_SHAPE)?, TITANIC_ROWS, 4, seed)
}
