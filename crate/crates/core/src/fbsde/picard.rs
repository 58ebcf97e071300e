//! Damped Picard sweeps: an explicit Euler-Maruyama forward pass with the
//! previous adjoint frozen, then a regression-based backward pass.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::regression::Regressor;
use super::{stack, LiftedCoefficients, PathBundle, Residuals, SolutionPaths, TimeGrid};
use crate::error::{Error, Result};
use crate::model::{Matrix, Vector};

/// Iterations whose residual exceeds this are treated as diverged.
const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PicardParams {
    /// Weight of the new backward iterate, in (0, 1]; 1 means undamped.
    pub damping: f64,
    pub max_sweeps: usize,
    pub tol: f64,
    pub basis_degree: usize,
}

impl Default for PicardParams {
    fn default() -> Self {
        Self {
            damping: 0.5,
            max_sweeps: 200,
            tol: 1e-8,
            basis_degree: 2,
        }
    }
}

impl PicardParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "damping {} not in (0, 1]",
                self.damping
            )));
        }
        if self.max_sweeps == 0 || !(self.tol > 0.0) {
            return Err(Error::InvalidInput(
                "need max_sweeps >= 1 and tol > 0".into(),
            ));
        }
        if !(1..=3).contains(&self.basis_degree) {
            return Err(Error::InvalidInput(format!(
                "basis degree {} not in 1..=3",
                self.basis_degree
            )));
        }
        Ok(())
    }
}

/// Initial adjoint guess, indexed `[node][particle]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub p: Vec<Vec<Vector>>,
    pub q: Vec<Vec<Matrix>>,
}

impl From<&SolutionPaths> for WarmStart {
    fn from(s: &SolutionPaths) -> Self {
        Self {
            p: s.p.clone(),
            q: s.q.clone(),
        }
    }
}

fn sup_diff(a: &[Vec<Vector>], b: &[Vec<Vector>]) -> f64 {
    a.par_iter()
        .zip(b)
        .map(|(ra, rb)| {
            ra.iter()
                .zip(rb)
                .map(|(u, w)| (u - w).amax())
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max)
}

fn all_finite(rows: &[Vector]) -> bool {
    rows.iter().all(|v| v.iter().all(|c| c.is_finite()))
}

struct Sweep {
    x: Vec<Vec<Vector>>,
    p: Vec<Vec<Vector>>,
    q: Vec<Vec<Matrix>>,
    rank_deficient_nodes: usize,
}

fn forward_pass<C: LiftedCoefficients + ?Sized>(
    coeffs: &C,
    grid: &TimeGrid,
    paths: &PathBundle,
    p: &[Vec<Vector>],
    q: &[Vec<Matrix>],
) -> Result<Vec<Vec<Vector>>> {
    let dt = grid.dt();
    let mut x = Vec::with_capacity(grid.steps + 1);
    x.push(paths.initial().points().to_vec());
    for i in 0..grid.steps {
        let fv = coeffs.forward(grid.time(i), &x[i], &p[i], &q[i])?;
        let next: Vec<Vector> = x[i]
            .par_iter()
            .enumerate()
            .map(|(k, xk)| xk + &fv.b[k] * dt + &fv.a[k] * &paths.noise()[k][i])
            .collect();
        if !all_finite(&next) {
            return Err(Error::non_finite(format!(
                "forward step into node {}",
                i + 1
            )));
        }
        x.push(next);
    }
    Ok(x)
}

fn backward_pass<C: LiftedCoefficients + ?Sized>(
    coeffs: &C,
    grid: &TimeGrid,
    paths: &PathBundle,
    x: Vec<Vec<Vector>>,
    degree: usize,
) -> Result<Sweep> {
    let n = coeffs.state_dim();
    let steps = grid.steps;
    let dt = grid.dt();
    let count = paths.particles();
    let mut p: Vec<Vec<Vector>> = vec![Vec::new(); steps + 1];
    let mut q: Vec<Vec<Matrix>> = vec![Vec::new(); steps + 1];
    p[steps] = coeffs.terminal(&x[steps])?;
    if !all_finite(&p[steps]) {
        return Err(Error::non_finite(format!(
            "terminal condition at node {steps}"
        )));
    }
    let mut rank_deficient_nodes = 0;
    for i in (0..steps).rev() {
        let reg = Regressor::new(&stack(&x[i]), degree)?;
        if reg.rank_deficient() {
            rank_deficient_nodes += 1;
        }
        let next = &p[i + 1];
        let fitted = reg.predict(&stack(next))?;
        let p_tilde: Vec<Vector> = (0..count).map(|k| fitted.row(k).transpose()).collect();
        // martingale increment times dW, with the conditional mean removed
        let z = Matrix::from_fn(count, n * n, |k, idx| {
            let (row, col) = (idx % n, idx / n);
            (next[k][row] - p_tilde[k][row]) * paths.noise()[k][i][col] / dt
        });
        let z_fit = reg.predict(&z)?;
        let q_i: Vec<Matrix> = (0..count)
            .map(|k| Matrix::from_iterator(n, n, z_fit.row(k).iter().copied()))
            .collect();
        let f = coeffs.driver(grid.time(i), &x[i], &p_tilde, &q_i)?;
        let p_i: Vec<Vector> = p_tilde
            .iter()
            .zip(&f)
            .map(|(pt, fk)| pt - fk * dt)
            .collect();
        if !all_finite(&p_i) {
            return Err(Error::non_finite(format!("backward step at node {i}")));
        }
        p[i] = p_i;
        q[i] = q_i;
    }
    q[steps] = q[steps - 1].clone();
    Ok(Sweep {
        x,
        p,
        q,
        rank_deficient_nodes,
    })
}

fn check_warm_start(warm: &WarmStart, nodes: usize, count: usize, n: usize) -> Result<()> {
    let ok = warm.p.len() == nodes
        && warm.q.len() == nodes
        && warm
            .p
            .iter()
            .all(|r| r.len() == count && r.iter().all(|v| v.len() == n))
        && warm
            .q
            .iter()
            .all(|r| r.len() == count && r.iter().all(|m| m.shape() == (n, n)));
    if ok {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(
            "warm start does not match the grid and particles".into(),
        ))
    }
}

/// Run Picard sweeps and return the best iterate found, with
/// `residuals.converged` telling whether `tol` was reached.
pub fn picard_iterate<C: LiftedCoefficients + ?Sized>(
    coeffs: &C,
    grid: &TimeGrid,
    paths: &PathBundle,
    params: &PicardParams,
    warm: Option<&WarmStart>,
) -> Result<SolutionPaths> {
    params.validate()?;
    paths.check_grid(grid)?;
    let n = coeffs.state_dim();
    if paths.initial().dim() != n {
        return Err(Error::DimensionMismatch(format!(
            "initial cloud in R^{}, coefficients in R^{n}",
            paths.initial().dim()
        )));
    }
    let count = paths.particles();
    let nodes = grid.steps + 1;
    let (mut p_old, mut q_old) = match warm {
        Some(w) => {
            check_warm_start(w, nodes, count, n)?;
            (w.p.clone(), w.q.clone())
        }
        None => (
            vec![vec![Vector::zeros(n); count]; nodes],
            vec![vec![Matrix::zeros(n, n); count]; nodes],
        ),
    };
    let mut x_old: Option<Vec<Vec<Vector>>> = None;
    let mut history = Vec::new();
    let mut best: Option<(f64, Sweep)> = None;
    let theta = params.damping;

    for _ in 0..params.max_sweeps {
        let x = forward_pass(coeffs, grid, paths, &p_old, &q_old)?;
        let sweep = backward_pass(coeffs, grid, paths, x, params.basis_degree)?;
        let dx = x_old
            .as_ref()
            .map_or(f64::INFINITY, |xo| sup_diff(xo, &sweep.x));
        let dp = sup_diff(&p_old, &sweep.p);
        let residual = dx.max(dp);
        history.push(if residual.is_finite() { residual } else { dp });

        // damped update of the frozen adjoint
        p_old = p_old
            .par_iter()
            .zip(&sweep.p)
            .map(|(ro, rn)| {
                ro.iter()
                    .zip(rn)
                    .map(|(o, nw)| o + (nw - o) * theta)
                    .collect()
            })
            .collect();
        q_old = q_old
            .par_iter()
            .zip(&sweep.q)
            .map(|(ro, rn)| {
                ro.iter()
                    .zip(rn)
                    .map(|(o, nw)| o + (nw - o) * theta)
                    .collect()
            })
            .collect();
        x_old = Some(sweep.x.clone());

        let improved = best.as_ref().is_none_or(|(r, _)| residual < *r);
        let done = residual <= params.tol;
        if improved {
            best = Some((residual, sweep));
        }
        if done || !(dp < DIVERGENCE_LIMIT) {
            break;
        }
    }

    let (best_residual, sweep) = best.expect("at least one sweep");
    let times = grid.nodes();
    let v = (0..nodes)
        .map(|i| coeffs.beta(times[i], &sweep.x[i], &sweep.p[i], &sweep.q[i]))
        .collect::<Result<Vec<_>>>()?;
    Ok(SolutionPaths {
        times,
        x: sweep.x,
        p: sweep.p,
        q: sweep.q,
        v,
        residuals: Residuals {
            sweeps: history.len(),
            converged: best_residual <= params.tol,
            history,
            tolerance: params.tol,
            rank_deficient_nodes: sweep.rank_deficient_nodes,
        },
    })
}

/// Picard iteration that fails with `SolverNoConvergence` when `tol` is not met.
pub fn solve_fbsde_picard<C: LiftedCoefficients + ?Sized>(
    coeffs: &C,
    grid: &TimeGrid,
    paths: &PathBundle,
    params: &PicardParams,
) -> Result<SolutionPaths> {
    let sol = picard_iterate(coeffs, grid, paths, params, None)?;
    if !sol.residuals.converged {
        return Err(Error::SolverNoConvergence {
            sweeps: sol.residuals.sweeps,
            residual: sol.residuals.last(),
        });
    }
    Ok(sol)
}
