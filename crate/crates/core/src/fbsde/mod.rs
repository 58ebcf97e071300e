//! Forward-backward SDE systems on particle clouds.
//!
//! The lifted system reads
//!
//! ```text
//! X_s = xi + int_t^s B(r, X, P, Q) dr + int_t^s A(r, X, P, Q) dW
//! P_s = G(X_T) - int_s^T F(r, X, P, Q) dr - int_s^T Q dW
//! ```
//!
//! where every coefficient acts on the whole particle population at once, so
//! the empirical law of the current iterate enters each evaluation.

mod continuation;
mod picard;
mod regression;

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::ParticleCloud;
use crate::model::{Matrix, Vector};
use crate::rng::particle_stream;

pub use continuation::{solve_fbsde_continuation, ContinuationOutcome, Scaled, StageRecord};
pub use picard::{picard_iterate, solve_fbsde_picard, PicardParams, WarmStart};
pub use regression::{regress_conditional, RegressionFit, Regressor};

/// Uniform time grid on `[t0, t_end]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t_end: f64, steps: usize) -> Result<Self> {
        if !(t0.is_finite() && t_end.is_finite() && t0 >= 0.0 && t0 < t_end) {
            return Err(Error::InvalidInput(format!(
                "need 0 <= t0 < T, got t0 = {t0}, T = {t_end}"
            )));
        }
        if steps == 0 {
            return Err(Error::InvalidInput("steps must be positive".into()));
        }
        Ok(Self { t0, t_end, steps })
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t0) / self.steps as f64
    }

    pub fn time(&self, node: usize) -> f64 {
        if node == self.steps {
            self.t_end
        } else {
            self.t0 + node as f64 * self.dt()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|i| self.time(i)).collect()
    }

    pub fn horizon(&self) -> f64 {
        self.t_end - self.t0
    }
}

/// Initial particles and their Brownian increments.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    initial: ParticleCloud,
    /// `noise[particle][step]`, each entry ~ N(0, dt I_n)
    noise: Vec<Vec<Vector>>,
    seed: u64,
}

impl PathBundle {
    /// Draw increments for every particle of `initial` from its own stream.
    pub fn generate(initial: ParticleCloud, grid: &TimeGrid, seed: u64) -> Result<Self> {
        if !initial.is_uniform() {
            return Err(Error::UnsupportedWeighting(
                "particle solvers need an equally weighted initial cloud".into(),
            ));
        }
        let n = initial.dim();
        let sd = grid.dt().sqrt();
        let noise = (0..initial.len())
            .into_par_iter()
            .map(|i| {
                let mut rng = particle_stream(seed, "brownian", i);
                (0..grid.steps)
                    .map(|_| Vector::from_fn(n, |_, _| sd * rng.sample::<f64, _>(StandardNormal)))
                    .collect()
            })
            .collect();
        Ok(Self {
            initial,
            noise,
            seed,
        })
    }

    pub fn from_parts(initial: ParticleCloud, noise: Vec<Vec<Vector>>, seed: u64) -> Result<Self> {
        if noise.len() != initial.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} noise paths for {} particles",
                noise.len(),
                initial.len()
            )));
        }
        let steps = noise.first().map_or(0, Vec::len);
        if noise
            .iter()
            .any(|p| p.len() != steps || p.iter().any(|dw| dw.len() != initial.dim()))
        {
            return Err(Error::DimensionMismatch("ragged noise array".into()));
        }
        Ok(Self {
            initial,
            noise,
            seed,
        })
    }

    pub fn initial(&self) -> &ParticleCloud {
        &self.initial
    }

    pub fn noise(&self) -> &[Vec<Vector>] {
        &self.noise
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn particles(&self) -> usize {
        self.initial.len()
    }

    pub fn steps(&self) -> usize {
        self.noise.first().map_or(0, Vec::len)
    }

    /// Relabel particles: new particle `k` is old particle `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        Ok(Self {
            initial: self.initial.permuted(perm)?,
            noise: perm.iter().map(|&i| self.noise[i].clone()).collect(),
            seed: self.seed,
        })
    }

    pub fn check_grid(&self, grid: &TimeGrid) -> Result<()> {
        if self.steps() != grid.steps {
            return Err(Error::DimensionMismatch(format!(
                "path bundle has {} steps, grid has {}",
                self.steps(),
                grid.steps
            )));
        }
        Ok(())
    }
}

/// `count` equally weighted points drawn from N(mean, std^2 I), one stream per point.
pub fn gaussian_cloud(count: usize, mean: &[f64], std: f64, seed: u64) -> Result<ParticleCloud> {
    if count == 0 || mean.is_empty() || !(std >= 0.0) {
        return Err(Error::InvalidInput(
            "need count >= 1, nonempty mean, std >= 0".into(),
        ));
    }
    let points = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = particle_stream(seed, "initial", i);
            Vector::from_fn(mean.len(), |k, _| {
                mean[k] + std * rng.sample::<f64, _>(StandardNormal)
            })
        })
        .collect();
    ParticleCloud::uniform(points)
}

/// Values of the forward coefficients at one node.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardValues {
    pub b: Vec<Vector>,
    pub a: Vec<Matrix>,
}

/// The maps B, A, F, G and beta acting on whole particle populations.
///
/// Implementations must be permutation-equivariant: relabelling the input
/// particles relabels the outputs and changes nothing else.
pub trait LiftedCoefficients: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn forward(&self, t: f64, x: &[Vector], p: &[Vector], q: &[Matrix]) -> Result<ForwardValues>;
    fn driver(&self, t: f64, x: &[Vector], p: &[Vector], q: &[Matrix]) -> Result<Vec<Vector>>;
    fn terminal(&self, x: &[Vector]) -> Result<Vec<Vector>>;
    fn beta(&self, t: f64, x: &[Vector], p: &[Vector], q: &[Matrix]) -> Result<Vec<Vector>>;
}

impl<T: LiftedCoefficients + ?Sized> LiftedCoefficients for &T {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn control_dim(&self) -> usize {
        (**self).control_dim()
    }
    fn forward(&self, t: f64, x: &[Vector], p: &[Vector], q: &[Matrix]) -> Result<ForwardValues> {
        (**self).forward(t, x, p, q)
    }
    fn driver(&self, t: f64, x: &[Vector], p: &[Vector], q: &[Matrix]) -> Result<Vec<Vector>> {
        (**self).driver(t, x, p, q)
    }
    fn terminal(&self, x: &[Vector]) -> Result<Vec<Vector>> {
        (**self).terminal(x)
    }
    fn beta(&self, t: f64, x: &[Vector], p: &[Vector], q: &[Matrix]) -> Result<Vec<Vector>> {
        (**self).beta(t, x, p, q)
    }
}

/// Convergence history of an iterative solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// sup-norm change in (X, P) per sweep
    pub history: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
    pub tolerance: f64,
    /// number of node regressions that needed the ridge fallback in the last sweep
    pub rank_deficient_nodes: usize,
}

impl Residuals {
    pub fn last(&self) -> f64 {
        self.history.last().copied().unwrap_or(f64::NAN)
    }
}

/// Discrete solution, indexed `[node][particle]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionPaths {
    pub times: Vec<f64>,
    pub x: Vec<Vec<Vector>>,
    pub p: Vec<Vec<Vector>>,
    pub q: Vec<Vec<Matrix>>,
    pub v: Vec<Vec<Vector>>,
    pub residuals: Residuals,
}

impl SolutionPaths {
    pub fn particles(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    pub fn nodes(&self) -> usize {
        self.x.len()
    }

    pub fn state_dim(&self) -> usize {
        self.x[0][0].len()
    }

    /// Empirical law of X at `node`.
    pub fn cloud(&self, node: usize) -> Result<ParticleCloud> {
        ParticleCloud::uniform(self.x[node].clone())
    }

    /// Relabel particles: new particle `k` is old particle `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        fn apply<T: Clone>(rows: &[Vec<T>], perm: &[usize]) -> Vec<Vec<T>> {
            rows.iter()
                .map(|row| perm.iter().map(|&i| row[i].clone()).collect())
                .collect()
        }
        Self {
            times: self.times.clone(),
            x: apply(&self.x, perm),
            p: apply(&self.p, perm),
            q: apply(&self.q, perm),
            v: apply(&self.v, perm),
            residuals: self.residuals.clone(),
        }
    }

    /// Largest absolute entry difference in (X, P, Q, v).
    pub fn max_abs_difference(&self, other: &Self) -> f64 {
        fn diff<T>(a: &[Vec<T>], b: &[Vec<T>], f: impl Fn(&T, &T) -> f64) -> f64 {
            a.iter()
                .zip(b)
                .flat_map(|(ra, rb)| ra.iter().zip(rb).map(|(u, w)| f(u, w)))
                .fold(0.0, f64::max)
        }
        if self.x.len() != other.x.len() || self.particles() != other.particles() {
            return f64::INFINITY;
        }
        let vec = |u: &Vector, w: &Vector| (u - w).amax();
        let mat = |u: &Matrix, w: &Matrix| (u - w).amax();
        diff(&self.x, &other.x, vec)
            .max(diff(&self.p, &other.p, vec))
            .max(diff(&self.q, &other.q, mat))
            .max(diff(&self.v, &other.v, vec))
    }

    /// Long-format CSV: particle, node, time, x1.., p1.., v1..
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let n = self.state_dim();
        let d = self.v[0][0].len();
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![
            "particle".to_string(),
            "node".to_string(),
            "time".to_string(),
        ];
        header.extend((1..=n).map(|k| format!("x{k}")));
        header.extend((1..=n).map(|k| format!("p{k}")));
        header.extend((1..=d).map(|k| format!("v{k}")));
        w.write_record(&header)?;
        for particle in 0..self.particles() {
            for (node, t) in self.times.iter().enumerate() {
                let mut row = vec![particle.to_string(), node.to_string(), format!("{t}")];
                row.extend(self.x[node][particle].iter().map(|c| format!("{c}")));
                row.extend(self.p[node][particle].iter().map(|c| format!("{c}")));
                row.extend(self.v[node][particle].iter().map(|c| format!("{c}")));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn residual_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.residuals)?)
    }
}

/// Rows of a slice of vectors as an N x n matrix.
pub(crate) fn stack(rows: &[Vector]) -> Matrix {
    let n = rows.first().map_or(0, Vector::len);
    Matrix::from_fn(rows.len(), n, |r, c| rows[r][c])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_nodes() {
        let g = TimeGrid::new(0.0, 1.0, 4).unwrap();
        assert_eq!(g.nodes(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!(TimeGrid::new(1.0, 1.0, 4).is_err());
        assert!(TimeGrid::new(0.0, 1.0, 0).is_err());
    }

    #[test]
    fn bundle_is_reproducible_and_permutable() {
        let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let cloud = gaussian_cloud(20, &[0.0, 1.0], 0.5, 3).unwrap();
        let a = PathBundle::generate(cloud.clone(), &grid, 9).unwrap();
        let b = PathBundle::generate(cloud, &grid, 9).unwrap();
        assert_eq!(a, b);
        let perm: Vec<usize> = (0..20).rev().collect();
        let p = a.permuted(&perm).unwrap();
        assert_eq!(p.noise()[0], a.noise()[19]);
        assert_eq!(p.initial().point(0), a.initial().point(19));
    }

    #[test]
    fn increments_have_the_right_scale() {
        let grid = TimeGrid::new(0.0, 2.0, 4).unwrap();
        let cloud = ParticleCloud::uniform(vec![Vector::zeros(1); 4000]).unwrap();
        let bundle = PathBundle::generate(cloud, &grid, 1).unwrap();
        let draws: Vec<f64> = bundle
            .noise()
            .iter()
            .flat_map(|p| p.iter().map(|v| v[0]))
            .collect();
        let var = draws.iter().map(|v| v * v).sum::<f64>() / draws.len() as f64;
        // dt = 0.5; 16000 draws give a standard error of about 0.0056
        assert!((var - 0.5).abs() < 0.02, "{var}");
    }
}
