//! Result container shared by every sampled check.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    /// No violation found over the sampled points (not a proof).
    Pass,
    Fail,
    Inconclusive,
}

/// A sampled point at which an inequality was evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub description: String,
    /// Value of the inequality margin at this sample (negative means violated).
    pub margin: f64,
    /// Named scalar data needed to re-evaluate the sample.
    pub data: BTreeMap<String, f64>,
    /// Particle clouds involved, as rows of coordinates, keyed by role.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub clouds: BTreeMap<String, Vec<Vec<f64>>>,
}

impl Witness {
    pub fn new(description: impl Into<String>, margin: f64) -> Self {
        Self {
            description: description.into(),
            margin,
            data: BTreeMap::new(),
            clouds: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.data.insert(key.to_string(), value);
        self
    }

    pub fn with_cloud(mut self, key: &str, rows: Vec<Vec<f64>>) -> Self {
        self.clouds.insert(key.to_string(), rows);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub condition_name: String,
    pub samples_used: usize,
    pub estimated_margins: BTreeMap<String, f64>,
    pub verdict: Verdict,
    pub witnesses: Vec<Witness>,
}

impl CheckReport {
    pub fn new(condition_name: impl Into<String>, samples_used: usize) -> Self {
        Self {
            condition_name: condition_name.into(),
            samples_used,
            estimated_margins: BTreeMap::new(),
            verdict: Verdict::Inconclusive,
            witnesses: Vec::new(),
        }
    }

    pub fn margin(&self, name: &str) -> Option<f64> {
        self.estimated_margins.get(name).copied()
    }

    pub fn set_margin(&mut self, name: &str, value: f64) {
        self.estimated_margins.insert(name.to_string(), value);
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    /// Pass or fail depending on `ok`; a failing report must carry a witness.
    pub fn conclude(mut self, ok: bool, witness: Option<Witness>) -> Self {
        self.verdict = if ok { Verdict::Pass } else { Verdict::Fail };
        if let Some(w) = witness {
            self.witnesses.push(w);
        }
        debug_assert!(
            ok || !self.witnesses.is_empty(),
            "fail verdict without witness"
        );
        self
    }
}
