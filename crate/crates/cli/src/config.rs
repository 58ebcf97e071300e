use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use meanfield_core::fbsde::{PicardParams, TimeGrid};
use meanfield_core::meanfield::{MftcDriver, SolverMethod, SolverParams};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default)]
    pub t0: f64,
    #[serde(rename = "T", default = "one")]
    pub t_end: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            t0: 0.0,
            t_end: 1.0,
            steps: default_steps(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Picard,
    Continuation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "picard")]
    pub method: Method,
    #[serde(default = "default_damping")]
    pub damping: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_sweeps")]
    pub max_sweeps: usize,
    #[serde(default = "default_degree")]
    pub basis_degree: usize,
    #[serde(default = "default_schedule")]
    pub gamma_schedule: Vec<f64>,
    /// Only read by `solve-mftc`.
    #[serde(default)]
    pub mftc_driver: MftcDriver,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: Method::Picard,
            damping: default_damping(),
            tol: default_tol(),
            max_sweeps: default_max_sweeps(),
            basis_degree: default_degree(),
            gamma_schedule: default_schedule(),
            mftc_driver: MftcDriver::default(),
        }
    }
}

/// Inputs of the `thresholds` subcommand not found in the constants ledger.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdConfig {
    /// Lipschitz constant of beta; the ledger's `L` when absent.
    #[serde(rename = "K_beta")]
    pub k_beta: Option<f64>,
    #[serde(rename = "Gamma_beta", default)]
    pub gamma_beta: f64,
    /// Replaces the ledger's `L` in `c_LT` and the budget.
    #[serde(rename = "L")]
    pub l: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(alias = "model")]
    pub model_name: String,
    #[serde(default)]
    pub overrides: BTreeMap<String, f64>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default = "default_particles")]
    pub particles: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub checks: Vec<String>,
    #[serde(default = "default_check_samples")]
    pub check_samples: usize,
    /// Declared displacement constant used by `displacement_quasi`; the
    /// ledger's `lambda_m` (or zero) when absent.
    #[serde(default)]
    pub lambda_m: Option<f64>,
    #[serde(default)]
    pub thresholds: ThresholdConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn one() -> f64 {
    1.0
}
fn picard() -> Method {
    Method::Picard
}
fn default_steps() -> usize {
    50
}
fn default_damping() -> f64 {
    0.5
}
fn default_tol() -> f64 {
    1e-8
}
fn default_max_sweeps() -> usize {
    200
}
fn default_degree() -> usize {
    2
}
fn default_schedule() -> Vec<f64> {
    vec![0.2, 0.4, 0.6, 0.8, 1.0]
}
fn default_particles() -> usize {
    1000
}
fn default_check_samples() -> usize {
    500
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

const TOP_LEVEL: [&str; 12] = [
    "model_name",
    "model",
    "overrides",
    "grid",
    "particles",
    "seed",
    "solver",
    "checks",
    "check_samples",
    "lambda_m",
    "thresholds",
    "output_dir",
];

/// Apply `key=value` to a JSON document. Dotted keys address nested tables;
/// a key that is not a config field is taken as a model parameter override.
/// Values are parsed as JSON and fall back to plain strings.
pub fn apply_set(doc: &mut Map<String, Value>, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got `{assignment}`")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(CliError::Config(format!(
            "--set has an empty key in `{assignment}`"
        )));
    }
    let value =
        serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    if !TOP_LEVEL.contains(&parts[0]) {
        parts.insert(0, "overrides");
    }
    let (last, path) = parts.split_last().expect("nonempty key");
    let mut table = doc;
    for part in path {
        let slot = table
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
        table = slot
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("`{part}` in `{key}` is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    /// Read the config file (if any), apply the `--set` assignments in order
    /// and validate.
    pub fn load(path: Option<&Path>, sets: &[String]) -> Result<Self, CliError> {
        let mut doc = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                match serde_json::from_str(&text) {
                    Ok(Value::Object(map)) => map,
                    Ok(_) => {
                        return Err(CliError::Config(format!(
                            "{} is not a JSON object",
                            p.display()
                        )))
                    }
                    Err(e) => return Err(CliError::Config(format!("{}: {e}", p.display()))),
                }
            }
            None => Map::new(),
        };
        for s in sets {
            apply_set(&mut doc, s)?;
        }
        let config: Self = serde_json::from_value(Value::Object(doc))
            .map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.particles < 16 {
            return Err(CliError::Config(format!(
                "particles must be at least 16, got {}",
                self.particles
            )));
        }
        if self.grid.steps < 2 {
            return Err(CliError::Config(format!(
                "grid.steps must be at least 2, got {}",
                self.grid.steps
            )));
        }
        if self.check_samples == 0 {
            return Err(CliError::Config("check_samples must be positive".into()));
        }
        self.time_grid()?;
        self.solver_params().picard.validate()?;
        Ok(())
    }

    pub fn time_grid(&self) -> Result<TimeGrid, CliError> {
        Ok(TimeGrid::new(
            self.grid.t0,
            self.grid.t_end,
            self.grid.steps,
        )?)
    }

    pub fn solver_params(&self) -> SolverParams {
        let s = &self.solver;
        SolverParams {
            method: match s.method {
                Method::Picard => SolverMethod::Picard,
                Method::Continuation => SolverMethod::Continuation {
                    gamma_schedule: s.gamma_schedule.clone(),
                },
            },
            picard: PicardParams {
                damping: s.damping,
                max_sweeps: s.max_sweeps,
                tol: s.tol,
                basis_degree: s.basis_degree,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(sets: &[&str]) -> Map<String, Value> {
        let mut d = Map::new();
        for s in sets {
            apply_set(&mut d, s).unwrap();
        }
        d
    }

    #[test]
    fn set_routes_keys() {
        let d = doc(&[
            "model=lq_basic",
            "solver.damping=0.7",
            "kappa=0.25",
            "checks=[\"split\"]",
        ]);
        assert_eq!(d["model"], Value::String("lq_basic".into()));
        assert_eq!(d["solver"]["damping"], serde_json::json!(0.7));
        assert_eq!(d["overrides"]["kappa"], serde_json::json!(0.25));
        assert_eq!(d["checks"][0], Value::String("split".into()));
    }

    #[test]
    fn set_rejects_malformed_assignments() {
        let mut d = Map::new();
        assert!(apply_set(&mut d, "particles").is_err());
        assert!(apply_set(&mut d, "=3").is_err());
        apply_set(&mut d, "seed=3").unwrap();
        assert!(apply_set(&mut d, "seed.inner=1").is_err());
    }

    #[test]
    fn defaults_fill_a_minimal_config() {
        let c = ExperimentConfig::load(None, &["model=lq_basic".into()]).unwrap();
        assert_eq!(c.particles, 1000);
        assert_eq!(c.grid.steps, 50);
        assert_eq!(c.solver_params(), SolverParams::default());
    }

    #[test]
    fn invariants_are_enforced() {
        for bad in [
            "particles=8",
            "grid.steps=1",
            "solver.damping=0",
            "solver.method=\"newton\"",
        ] {
            let sets = vec!["model=lq_basic".to_string(), bad.to_string()];
            assert!(ExperimentConfig::load(None, &sets).is_err(), "{bad}");
        }
        assert!(ExperimentConfig::load(None, &[]).is_err());
    }
}
