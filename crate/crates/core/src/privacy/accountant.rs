use serde::{Deserialize, Serialize};

use super::conversion::solve_rho;
use crate::error::{Error, Result};

/// Slack allowed when comparing spends against the budget.
pub const BUDGET_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spend {
    pub label: String,
    pub rho: f64,
}

/// zCDP ledger. Every spend is checked against the budget before it is
/// recorded, so callers draw noise only after a successful [`spend`].
///
/// [`spend`]: PrivacyAccountant::spend
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyAccountant {
    rho_total: f64,
    rho_spent: f64,
    target: Option<(f64, f64)>,
    ledger: Vec<Spend>,
}

impl PrivacyAccountant {
    pub fn new(rho_total: f64) -> Result<Self> {
        if !(rho_total > 0.0) || !rho_total.is_finite() {
            return Err(Error::Config(format!(
                "zCDP budget must be positive, got {rho_total}"
            )));
        }
        Ok(Self {
            rho_total,
            rho_spent: 0.0,
            target: None,
            ledger: Vec::new(),
        })
    }

    /// Budget equal to the zCDP level that implies `(eps, delta)`-DP.
    pub fn from_eps_delta(eps: f64, delta: f64) -> Result<Self> {
        let mut acc = Self::new(solve_rho(eps, delta)?)?;
        acc.target = Some((eps, delta));
        Ok(acc)
    }

    /// Records `rho` under `label`, or refuses if it would overdraw.
    pub fn spend(&mut self, label: impl Into<String>, rho: f64) -> Result<()> {
        let label = label.into();
        if !(rho >= 0.0) || !rho.is_finite() {
            return Err(Error::Numeric(format!(
                "invalid privacy cost {rho} for `{label}`"
            )));
        }
        if self.rho_spent + rho > self.rho_total + BUDGET_SLACK {
            return Err(Error::BudgetExceeded {
                label,
                cost: rho,
                remaining: self.remaining(),
            });
        }
        self.rho_spent += rho;
        self.ledger.push(Spend { label, rho });
        Ok(())
    }

    pub fn rho_total(&self) -> f64 {
        self.rho_total
    }

    pub fn rho_spent(&self) -> f64 {
        self.rho_spent
    }

    pub fn remaining(&self) -> f64 {
        (self.rho_total - self.rho_spent).max(0.0)
    }

    pub fn target(&self) -> Option<(f64, f64)> {
        self.target
    }

    pub fn ledger(&self) -> &[Spend] {
        &self.ledger
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn refuses_overdraw_and_keeps_running_sum() {
        let mut acc = PrivacyAccountant::new(1.0).unwrap();
        acc.spend("a", 0.25).unwrap();
        acc.spend("b", 0.5).unwrap();
        let err = acc.spend("c", 0.5).unwrap_err();
        assert!(matches!(err, Error::BudgetExceeded { .. }));
        assert_eq!(acc.ledger().len(), 2);
        let sum: f64 = acc.ledger().iter().map(|s| s.rho).sum();
        assert_eq!(sum, acc.rho_spent());
        acc.spend("d", 0.25).unwrap();
        assert!(acc.rho_spent() <= acc.rho_total() + BUDGET_SLACK);
    }

    #[test]
    fn rejects_bad_budget() {
        assert!(PrivacyAccountant::new(0.0).is_err());
        assert!(PrivacyAccountant::new(f64::NAN).is_err());
    }
}
