use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strictly ascending set of attribute indices. The empty clique is the
/// total query.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Clique(Vec<usize>);

impl Clique {
    /// Sorts the indices; rejects repeated attributes.
    pub fn new(mut attrs: Vec<usize>) -> Result<Self> {
        attrs.sort_unstable();
        if attrs.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidClique {
                attrs,
                reason: "repeated attribute".into(),
            });
        }
        Ok(Self(attrs))
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn attrs(&self) -> &[usize] {
        &self.0
    }

    pub fn to_vec(&self) -> Vec<usize> {
        self.0.clone()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn contains(&self, attr: usize) -> bool {
        self.0.binary_search(&attr).is_ok()
    }

    pub fn is_subset(&self, other: &Clique) -> bool {
        self.0.iter().all(|&a| other.contains(a))
    }

    /// All `2^|self|` subsets, including the empty clique and `self`.
    pub fn subsets(&self) -> Vec<Clique> {
        let k = self.0.len();
        (0u64..1 << k)
            .map(|mask| {
                Clique(
                    (0..k)
                        .filter(|&i| mask & (1 << i) != 0)
                        .map(|i| self.0[i])
                        .collect(),
                )
            })
            .collect()
    }
}

impl TryFrom<Vec<usize>> for Clique {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Clique::new(v)
    }
}

impl From<Clique> for Vec<usize> {
    fn from(c: Clique) -> Self {
        c.0
    }
}

impl fmt::Display for Clique {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, "}}")
    }
}

/// Every subset of every input clique, deduplicated.
pub fn downward_closure<'a>(cliques: impl IntoIterator<Item = &'a Clique>) -> BTreeSet<Clique> {
    cliques.into_iter().flat_map(Clique::subsets).collect()
}

/// All cliques of exactly `k` attributes out of `d`, in lexicographic order.
pub fn all_k_way(d: usize, k: usize) -> Vec<Clique> {
    fn rec(start: usize, d: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Clique>) {
        if cur.len() == k {
            out.push(Clique(cur.clone()));
            return;
        }
        for a in start..d {
            if d - a < k - cur.len() {
                break;
            }
            cur.push(a);
            rec(a + 1, d, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if k <= d {
        rec(0, d, k, &mut Vec::new(), &mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(v: &[usize]) -> Clique {
        Clique::new(v.to_vec()).unwrap()
    }

    #[test]
    fn closure_examples() {
        let got = downward_closure(&[c(&[1, 2])]);
        let want: BTreeSet<_> = [c(&[]), c(&[1]), c(&[2]), c(&[1, 2])].into_iter().collect();
        assert_eq!(got, want);

        assert!(downward_closure(&[]).is_empty());

        let got = downward_closure(&[c(&[1]), c(&[2, 3])]);
        let want: BTreeSet<_> = [c(&[]), c(&[1]), c(&[2]), c(&[3]), c(&[2, 3])]
            .into_iter()
            .collect();
        assert_eq!(got, want);
    }

    #[test]
    fn new_sorts_and_rejects_repeats() {
        assert_eq!(c(&[3, 1]).attrs(), &[1, 3]);
        assert!(Clique::new(vec![1, 1]).is_err());
        assert!(serde_json::from_str::<Clique>("[2,2]").is_err());
    }

    #[test]
    fn k_way_counts() {
        assert_eq!(all_k_way(9, 3).len(), 84);
        assert_eq!(all_k_way(3, 0), vec![Clique::empty()]);
        assert!(all_k_way(2, 3).is_empty());
    }
}
