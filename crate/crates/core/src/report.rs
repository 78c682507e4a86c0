//! Machine-readable check reports shared by the verification modules.

use serde::{Deserialize, Serialize};

use crate::jetring::{DiffExpr, RatExpr};

/// One verified claim: what was checked, the measured value and the bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckEntry {
    pub name: String,
    /// Short topic key grouping related checks.
    pub anchor: String,
    pub pass: bool,
    /// Measured magnitude. For exact checks this is the number of surviving
    /// terms in the residual numerator.
    pub residual: f64,
    pub tolerance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl CheckEntry {
    pub fn exact(name: impl Into<String>, anchor: impl Into<String>, residual: &DiffExpr) -> Self {
        let pass = residual.is_zero();
        CheckEntry {
            name: name.into(),
            anchor: anchor.into(),
            pass,
            residual: residual.len() as f64,
            tolerance: 0.0,
            detail: (!pass).then(|| residual.to_string()),
        }
    }

    pub fn exact_rational(name: impl Into<String>, anchor: impl Into<String>, residual: &RatExpr) -> Self {
        let mut e = Self::exact(name, anchor, residual.numerator());
        if !e.pass {
            e.detail = Some(residual.to_string());
        }
        e
    }

    pub fn numeric(
        name: impl Into<String>,
        anchor: impl Into<String>,
        residual: f64,
        tolerance: f64,
    ) -> Self {
        CheckEntry {
            name: name.into(),
            anchor: anchor.into(),
            pass: residual.is_finite() && residual <= tolerance,
            residual,
            tolerance,
            detail: None,
        }
    }

    /// A boolean property with no natural magnitude.
    pub fn flag(name: impl Into<String>, anchor: impl Into<String>, pass: bool, detail: Option<String>) -> Self {
        CheckEntry {
            name: name.into(),
            anchor: anchor.into(),
            pass,
            residual: if pass { 0.0 } else { 1.0 },
            tolerance: 0.0,
            detail,
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = Some(detail.into());
        self
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub entries: Vec<CheckEntry>,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, e: CheckEntry) {
        self.entries.push(e);
    }

    pub fn extend(&mut self, other: Report) {
        self.entries.extend(other.entries);
    }

    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckEntry> {
        self.entries.iter().filter(|e| !e.pass)
    }

    pub fn get(&self, name: &str) -> Option<&CheckEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}
