//! Homotopy in the coupling strength: the drift, driver and terminal map
//! are scaled by gamma, the diffusion is kept, and the family is solved from
//! the decoupled gamma = 0 system up to gamma = 1 with warm starts.

use serde::{Deserialize, Serialize};

use super::picard::{picard_iterate, PicardParams, WarmStart};
use super::{ForwardValues, LiftedCoefficients, PathBundle, SolutionPaths, TimeGrid};
use crate::error::{Error, Result};
use crate::model::{Matrix, Vector};

/// The coefficients of the gamma-member of the homotopy family.
pub struct Scaled<C> {
    pub inner: C,
    pub gamma: f64,
}

impl<C: LiftedCoefficients> LiftedCoefficients for Scaled<C> {
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }

    fn control_dim(&self) -> usize {
        self.inner.control_dim()
    }

    fn forward(&self, t: f64, x: &[Vector], p: &[Vector], q: &[Matrix]) -> Result<ForwardValues> {
        let mut fv = self.inner.forward(t, x, p, q)?;
        fv.b.iter_mut().for_each(|b| *b *= self.gamma);
        Ok(fv)
    }

    fn driver(&self, t: f64, x: &[Vector], p: &[Vector], q: &[Matrix]) -> Result<Vec<Vector>> {
        let mut f = self.inner.driver(t, x, p, q)?;
        f.iter_mut().for_each(|v| *v *= self.gamma);
        Ok(f)
    }

    fn terminal(&self, x: &[Vector]) -> Result<Vec<Vector>> {
        let mut g = self.inner.terminal(x)?;
        g.iter_mut().for_each(|v| *v *= self.gamma);
        Ok(g)
    }

    fn beta(&self, t: f64, x: &[Vector], p: &[Vector], q: &[Matrix]) -> Result<Vec<Vector>> {
        self.inner.beta(t, x, p, q)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub gamma: f64,
    pub sweeps: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuationOutcome {
    pub solution: SolutionPaths,
    pub stages: Vec<StageRecord>,
}

fn validate_schedule(schedule: &[f64]) -> Result<()> {
    if schedule == [1.0] {
        return Ok(());
    }
    let increasing = schedule.windows(2).all(|w| w[0] < w[1]);
    let ok = !schedule.is_empty()
        && schedule[0] >= 0.0
        && schedule[0] <= 0.2
        && increasing
        && *schedule.last().expect("nonempty") == 1.0;
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "gamma schedule {schedule:?} must increase strictly from at most 0.2 to 1"
        )))
    }
}

/// Solve the gamma-family stage by stage. A stage that does not converge
/// (or breaks down numerically) ends the run with `StageFailure`.
pub fn solve_fbsde_continuation<C: LiftedCoefficients>(
    coeffs: &C,
    grid: &TimeGrid,
    paths: &PathBundle,
    gamma_schedule: &[f64],
    params: &PicardParams,
) -> Result<ContinuationOutcome> {
    validate_schedule(gamma_schedule)?;
    params.validate()?;
    let mut stages = Vec::new();
    let mut warm: Option<WarmStart> = None;
    let mut reached = f64::NAN;
    let mut last: Option<SolutionPaths> = None;
    for &gamma in gamma_schedule {
        let scaled = Scaled {
            inner: coeffs,
            gamma,
        };
        let attempt = picard_iterate(&scaled, grid, paths, params, warm.as_ref());
        let sol = match attempt {
            Ok(sol) if sol.residuals.converged => sol,
            Ok(sol) => {
                return Err(Error::StageFailure {
                    gamma_reached: reached,
                    gamma_failed: gamma,
                    residuals: sol.residuals.history,
                })
            }
            Err(Error::NonFiniteValue { .. }) | Err(Error::NoConvergence { .. }) => {
                return Err(Error::StageFailure {
                    gamma_reached: reached,
                    gamma_failed: gamma,
                    residuals: Vec::new(),
                })
            }
            Err(e) => return Err(e),
        };
        stages.push(StageRecord {
            gamma,
            sweeps: sol.residuals.sweeps,
            residual: sol.residuals.last(),
        });
        reached = gamma;
        warm = Some(WarmStart::from(&sol));
        last = Some(sol);
    }
    Ok(ContinuationOutcome {
        solution: last.expect("schedule is nonempty"),
        stages,
    })
}
