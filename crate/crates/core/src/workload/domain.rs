use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Clique;
use crate::error::{Error, Result};

/// One categorical attribute. `values`, when present, lists the category
/// labels in code order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<String>>,
}

/// Ordered attribute list; the order defines attribute indices and the
/// row-major cell layout of every table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Domain {
    attributes: Vec<Attribute>,
}

impl Domain {
    pub fn new(attributes: Vec<Attribute>) -> Result<Self> {
        let mut seen = HashSet::new();
        for a in &attributes {
            if a.size == 0 {
                return Err(Error::InvalidDomain(format!(
                    "attribute `{}` has size 0",
                    a.name
                )));
            }
            if !seen.insert(a.name.as_str()) {
                return Err(Error::InvalidDomain(format!(
                    "duplicate attribute `{}`",
                    a.name
                )));
            }
            if let Some(v) = &a.values {
                if v.len() != a.size {
                    return Err(Error::InvalidDomain(format!(
                        "attribute `{}` lists {} values but has size {}",
                        a.name,
                        v.len(),
                        a.size
                    )));
                }
            }
        }
        Ok(Self { attributes })
    }

    /// Domain with attributes named `a0, a1, ...`.
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        Self::new(
            sizes
                .iter()
                .enumerate()
                .map(|(i, &size)| Attribute {
                    name: format!("a{i}"),
                    size,
                    values: None,
                })
                .collect(),
        )
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn size(&self, attr: usize) -> usize {
        self.attributes[attr].size
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.attributes.iter().map(|a| a.size).collect()
    }

    pub fn name(&self, attr: usize) -> &str {
        &self.attributes[attr].name
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.attributes
            .iter()
            .position(|a| a.name == name)
            .ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    }

    pub fn clique_from_names<S: AsRef<str>>(&self, names: &[S]) -> Result<Clique> {
        let idx = names
            .iter()
            .map(|n| self.index_of(n.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        Clique::new(idx)
    }

    pub fn clique_names(&self, clique: &Clique) -> Vec<String> {
        clique.iter().map(|k| self.name(k).to_string()).collect()
    }

    /// Number of cells `n_gamma` of the marginal on `clique`.
    pub fn marginal_len(&self, clique: &Clique) -> usize {
        clique.iter().map(|k| self.size(k)).product()
    }

    /// Number of entries `m_tau` of the residual on `clique`.
    pub fn residual_len(&self, clique: &Clique) -> usize {
        clique.iter().map(|k| self.size(k) - 1).product()
    }

    /// Size of the full data vector, as a float since it overflows quickly.
    pub fn data_vector_size(&self) -> f64 {
        self.attributes.iter().map(|a| a.size as f64).product()
    }

    pub fn check_clique(&self, clique: &Clique) -> Result<()> {
        match clique.iter().find(|&k| k >= self.len()) {
            Some(k) => Err(Error::InvalidClique {
                attrs: clique.to_vec(),
                reason: format!(
                    "attribute index {k} out of range for {} attributes",
                    self.len()
                ),
            }),
            None => Ok(()),
        }
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let raw: Domain =
            serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
        Self::new(raw.attributes)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(f, self)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_schema_round_trip() {
        let d: Domain =
            serde_json::from_str(r#"{"attributes":[{"name":"x","size":2},{"name":"y","size":3}]}"#)
                .unwrap();
        assert_eq!(d.sizes(), vec![2, 3]);
        assert_eq!(d.index_of("y").unwrap(), 1);
        let c = d.clique_from_names(&["y", "x"]).unwrap();
        assert_eq!(c.to_vec(), vec![0, 1]);
        assert_eq!(d.marginal_len(&c), 6);
        assert_eq!(d.residual_len(&c), 2);
    }

    #[test]
    fn rejects_duplicates_and_unknown_names() {
        let dup = Domain::new(vec![
            Attribute {
                name: "a".into(),
                size: 2,
                values: None,
            },
            Attribute {
                name: "a".into(),
                size: 3,
                values: None,
            },
        ]);
        assert!(dup.is_err());
        let d = Domain::from_sizes(&[2, 2]).unwrap();
        assert!(matches!(d.index_of("zz"), Err(Error::UnknownAttribute(_))));
    }
}
