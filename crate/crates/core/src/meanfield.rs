//! Lifted coefficients of the MFG and MFTC adjoint systems, end-to-end
//! solvers and Monte Carlo cost evaluation.

use std::sync::Arc;

use nalgebra::SymmetricEigen;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbsde::{
    picard_iterate, solve_fbsde_continuation, ForwardValues, LiftedCoefficients, PathBundle,
    PicardParams, SolutionPaths, StageRecord, TimeGrid,
};
use crate::hamiltonian::{dv_lagrangian, dx_hamiltonian_at, minimize_hamiltonian, NEWTON_TOL};
use crate::measure::{MeasureFlow, ParticleCloud};
use crate::model::{Matrix, ModelSpec, Vector};

/// Which part of the measure derivative of H enters the MFTC driver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MftcDriver {
    /// b-, sigma- and f-terms, as in the generic-drift system.
    #[default]
    Full,
    /// Only the running-cost term `D_y (df/dnu)`.
    EnvelopeCostOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Problem {
    Mfg,
    Mftc,
    MfgGenericDrift,
    MftcGenericDrift,
}

impl Problem {
    fn is_mftc(self) -> bool {
        matches!(self, Problem::Mftc | Problem::MftcGenericDrift)
    }

    fn is_generic(self) -> bool {
        matches!(self, Problem::MfgGenericDrift | Problem::MftcGenericDrift)
    }
}

/// A model turned into lifted coefficients for one of the four systems.
#[derive(Clone)]
pub struct Assembled {
    spec: Arc<ModelSpec>,
    problem: Problem,
    driver: MftcDriver,
    newton_tol: f64,
}

impl std::fmt::Debug for Assembled {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Assembled")
            .field("model", &self.spec.name)
            .field("problem", &self.problem)
            .field("driver", &self.driver)
            .finish()
    }
}

fn require_convexity(spec: &ModelSpec) -> Result<()> {
    spec.constants.validate()?;
    spec.constants.require_convexity().map(|_| ())
}

fn require_mftc(spec: &ModelSpec) -> Result<()> {
    if spec.dy_dfdnu.is_none() {
        return Err(Error::MissingDerivative("Dy_dfdnu"));
    }
    if spec.dy_dgdnu.is_none() {
        return Err(Error::MissingDerivative("Dy_dgdnu"));
    }
    Ok(())
}

fn require_generic(spec: &ModelSpec) -> Result<()> {
    if spec.dx_b.is_none() {
        return Err(Error::MissingDerivative("Dx_b"));
    }
    if spec.dv_b.is_none() {
        return Err(Error::MissingDerivative("Dv_b"));
    }
    if spec.mode_flags.sigma_control_dependent {
        return Err(Error::InvalidInput(
            "generic drift needs sigma independent of the control".into(),
        ));
    }
    let lb = spec.constants.value("lambda_b")?;
    if lb <= 0.0 {
        return Err(Error::InvalidInput("lambda_b must be positive".into()));
    }
    Ok(())
}

/// B = D_p H, A = D_q H, F = -D_x H, G = D_x g, beta = v-hat.
pub fn assemble_mfg(spec: &ModelSpec) -> Result<Assembled> {
    require_convexity(spec)?;
    Ok(Assembled::new(spec, Problem::Mfg, MftcDriver::Full))
}

/// The MFG coefficients plus particle averages of the measure derivatives
/// of H (in F) and g (in G).
pub fn assemble_mftc(spec: &ModelSpec) -> Result<Assembled> {
    assemble_mftc_with(spec, MftcDriver::Full)
}

pub fn assemble_mftc_with(spec: &ModelSpec, driver: MftcDriver) -> Result<Assembled> {
    require_convexity(spec)?;
    require_mftc(spec)?;
    Ok(Assembled::new(spec, Problem::Mftc, driver))
}

/// MFG system with a drift nonlinear in the control; the control solves
/// `(D_v b)^T P + D_v f = 0`.
pub fn assemble_mfg_generic(spec: &ModelSpec) -> Result<Assembled> {
    require_convexity(spec)?;
    require_generic(spec)?;
    Ok(Assembled::new(
        spec,
        Problem::MfgGenericDrift,
        MftcDriver::Full,
    ))
}

pub fn assemble_mftc_generic(spec: &ModelSpec) -> Result<Assembled> {
    require_convexity(spec)?;
    require_generic(spec)?;
    require_mftc(spec)?;
    if spec.dy_dbdnu.is_none() {
        return Err(Error::MissingDerivative("Dy_dbdnu"));
    }
    Ok(Assembled::new(
        spec,
        Problem::MftcGenericDrift,
        MftcDriver::Full,
    ))
}

impl Assembled {
    fn new(spec: &ModelSpec, problem: Problem, driver: MftcDriver) -> Self {
        Self {
            spec: Arc::new(spec.clone()),
            problem,
            driver,
            newton_tol: NEWTON_TOL,
        }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn problem(&self) -> Problem {
        self.problem
    }

    fn controls(
        &self,
        t: f64,
        x: &[Vector],
        m: &ParticleCloud,
        p: &[Vector],
        q: &[Matrix],
    ) -> Result<Vec<Vector>> {
        x.par_iter()
            .zip(p.par_iter().zip(q.par_iter()))
            .map(|(xi, (pi, qi))| {
                minimize_hamiltonian(&self.spec, t, xi, m, pi, qi, None, self.newton_tol)
            })
            .collect()
    }

    /// `avg_j D_y (dH/dnu)(t, X_j, m, P_j, Q_j)(y)` at frozen controls.
    #[allow(clippy::too_many_arguments)]
    fn hamiltonian_measure_term(
        &self,
        t: f64,
        x: &[Vector],
        m: &ParticleCloud,
        p: &[Vector],
        q: &[Matrix],
        v: &[Vector],
        y: &Vector,
    ) -> Vector {
        let spec = &*self.spec;
        let mut acc = Vector::zeros(spec.n);
        for j in 0..x.len() {
            acc += measure_term_single(spec, self.driver, t, &x[j], m, &p[j], &q[j], &v[j], y);
        }
        acc / x.len() as f64
    }

    fn with_y_terms(
        &self,
        x: &[Vector],
        per_y: impl Fn(&Vector) -> Vector + Sync + Send,
    ) -> Vec<Vector> {
        if self.spec.mode_flags.measure_derivatives_y_independent {
            let shared = per_y(&x[0]);
            vec![shared; x.len()]
        } else {
            x.par_iter().map(per_y).collect()
        }
    }
}

/// `D_y (dH/dnu)(t, x, m, p, q)(y)` through the envelope identity at control `v`.
#[allow(clippy::too_many_arguments)]
pub fn measure_term_single(
    spec: &ModelSpec,
    driver: MftcDriver,
    t: f64,
    x: &Vector,
    m: &ParticleCloud,
    p: &Vector,
    q: &Matrix,
    v: &Vector,
    y: &Vector,
) -> Vector {
    let mut term = match &spec.dy_dfdnu {
        Some(dfdnu) => dfdnu(t, x, m, v, y),
        None => Vector::zeros(spec.n),
    };
    if driver == MftcDriver::Full {
        if let Some(dbdnu) = &spec.dy_dbdnu {
            term += dbdnu(t, x, m, v, y).tr_mul(p);
        }
        if let Some(dsdnu) = &spec.dy_dsigmadnu {
            for (k, jac) in dsdnu(t, x, m, v, y).iter().enumerate() {
                term += jac.tr_mul(&q.column(k));
            }
        }
    }
    term
}

fn cloud_of(x: &[Vector]) -> Result<ParticleCloud> {
    ParticleCloud::uniform(x.to_vec())
}

impl LiftedCoefficients for Assembled {
    fn state_dim(&self) -> usize {
        self.spec.n
    }

    fn control_dim(&self) -> usize {
        self.spec.d
    }

    fn forward(&self, t: f64, x: &[Vector], p: &[Vector], q: &[Matrix]) -> Result<ForwardValues> {
        let m = cloud_of(x)?;
        let v = self.controls(t, x, &m, p, q)?;
        let spec = &*self.spec;
        let (b, a) = x
            .par_iter()
            .zip(v.par_iter())
            .map(|(xi, vi)| ((spec.b)(t, xi, &m, vi), (spec.sigma)(t, xi, &m, vi)))
            .unzip();
        Ok(ForwardValues { b, a })
    }

    fn driver(&self, t: f64, x: &[Vector], p: &[Vector], q: &[Matrix]) -> Result<Vec<Vector>> {
        let m = cloud_of(x)?;
        let v = self.controls(t, x, &m, p, q)?;
        let spec = &*self.spec;
        let mut f: Vec<Vector> = (0..x.len())
            .into_par_iter()
            .map(|i| -dx_hamiltonian_at(spec, t, &x[i], &m, &v[i], &p[i], &q[i]))
            .collect();
        if self.problem.is_mftc() {
            let extra =
                self.with_y_terms(x, |y| self.hamiltonian_measure_term(t, x, &m, p, q, &v, y));
            for (fi, ei) in f.iter_mut().zip(extra) {
                *fi -= ei;
            }
        }
        Ok(f)
    }

    fn terminal(&self, x: &[Vector]) -> Result<Vec<Vector>> {
        let m = cloud_of(x)?;
        let spec = &*self.spec;
        let mut g: Vec<Vector> = x.par_iter().map(|xi| (spec.dx_g)(xi, &m)).collect();
        if self.problem.is_mftc() {
            let dgdnu = spec
                .dy_dgdnu
                .as_ref()
                .ok_or(Error::MissingDerivative("Dy_dgdnu"))?;
            let extra = self.with_y_terms(x, |y| {
                x.iter()
                    .fold(Vector::zeros(spec.n), |acc, xj| acc + dgdnu(xj, &m, y))
                    / x.len() as f64
            });
            for (gi, ei) in g.iter_mut().zip(extra) {
                *gi += ei;
            }
        }
        Ok(g)
    }

    fn beta(&self, t: f64, x: &[Vector], p: &[Vector], q: &[Matrix]) -> Result<Vec<Vector>> {
        let m = cloud_of(x)?;
        self.controls(t, x, &m, p, q)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum SolverMethod {
    Picard,
    Continuation { gamma_schedule: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    pub method: SolverMethod,
    pub picard: PicardParams,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            method: SolverMethod::Picard,
            picard: PicardParams::default(),
        }
    }
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub value: f64,
    pub stderr: f64,
}

impl CostEstimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = if samples.len() > 1 {
            samples.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            value: mean,
            stderr: (var / n).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub problem: Problem,
    pub sweeps: usize,
    pub residuals: Vec<f64>,
    pub converged: bool,
    /// largest stationarity residual of the control over all nodes and particles
    pub stationarity_max: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stages: Vec<StageRecord>,
}

#[derive(Debug, Clone)]
pub struct EquilibriumSolution {
    pub paths: SolutionPaths,
    pub measure_flow: MeasureFlow,
    pub cost: CostEstimate,
    pub diagnostics: Diagnostics,
}

/// The summary written next to exported paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub cost: f64,
    pub stderr: f64,
    pub sweeps: usize,
    pub residuals: Vec<f64>,
    pub stationarity_max: f64,
    pub converged: bool,
    pub problem: Problem,
}

impl EquilibriumSolution {
    /// Controls indexed `[node][particle]`.
    pub fn control_flow(&self) -> &[Vec<Vector>] {
        &self.paths.v
    }

    pub fn summary(&self) -> Summary {
        Summary {
            cost: self.cost.value,
            stderr: self.cost.stderr,
            sweeps: self.diagnostics.sweeps,
            residuals: self.diagnostics.residuals.clone(),
            stationarity_max: self.diagnostics.stationarity_max,
            converged: self.diagnostics.converged,
            problem: self.diagnostics.problem,
        }
    }
}

fn run_solver(
    coeffs: &Assembled,
    grid: &TimeGrid,
    paths: &PathBundle,
    params: &SolverParams,
) -> Result<(SolutionPaths, Vec<StageRecord>)> {
    match &params.method {
        SolverMethod::Picard => {
            let sol = picard_iterate(coeffs, grid, paths, &params.picard, None)?;
            if !sol.residuals.converged {
                return Err(Error::SolverNoConvergence {
                    sweeps: sol.residuals.sweeps,
                    residual: sol.residuals.last(),
                });
            }
            Ok((sol, Vec::new()))
        }
        SolverMethod::Continuation { gamma_schedule } => {
            let out =
                solve_fbsde_continuation(coeffs, grid, paths, gamma_schedule, &params.picard)?;
            Ok((out.solution, out.stages))
        }
    }
}

/// Largest stationarity residual over the solution. For generic drift the
/// Gram matrix of `D_v b` is also checked against `lambda_b / 2`.
fn stationarity_max(coeffs: &Assembled, sol: &SolutionPaths) -> Result<f64> {
    let spec = coeffs.spec();
    let generic = coeffs.problem.is_generic();
    let lambda_b = if generic {
        spec.constants.value("lambda_b")?
    } else {
        0.0
    };
    let mut worst = 0.0f64;
    for node in 0..sol.nodes() {
        let t = sol.times[node];
        let m = sol.cloud(node)?;
        let node_worst = (0..sol.particles())
            .into_par_iter()
            .map(|k| {
                let (x, v) = (&sol.x[node][k], &sol.v[node][k]);
                if generic {
                    let dvb = spec.jac_v_b(t, x, &m, v);
                    let gram = &dvb * dvb.transpose();
                    let min_eig = SymmetricEigen::new(gram).eigenvalues.min();
                    if min_eig < lambda_b / 2.0 {
                        return Err(Error::SingularDvb {
                            min_eigenvalue: min_eig,
                            bound: lambda_b / 2.0,
                            t,
                            x: x.iter().copied().collect(),
                            v: v.iter().copied().collect(),
                        });
                    }
                }
                Ok(dv_lagrangian(spec, t, x, &m, v, &sol.p[node][k], &sol.q[node][k]).norm())
            })
            .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))?;
        worst = worst.max(node_worst);
    }
    Ok(worst)
}

fn solve(
    coeffs: Assembled,
    grid: &TimeGrid,
    paths: &PathBundle,
    params: &SolverParams,
) -> Result<EquilibriumSolution> {
    let (sol, stages) = run_solver(&coeffs, grid, paths, params)?;
    let flow = MeasureFlow::new(
        sol.times.clone(),
        (0..sol.nodes())
            .map(|i| sol.cloud(i))
            .collect::<Result<_>>()?,
    )?;
    let mode = if coeffs.problem.is_mftc() {
        CostMode::Mftc
    } else {
        CostMode::MfgFrozenFlow(flow.clone())
    };
    let cost = evaluate_cost(coeffs.spec(), &sol.v, grid, paths, &mode)?;
    let stationarity = stationarity_max(&coeffs, &sol)?;
    let diagnostics = Diagnostics {
        problem: coeffs.problem,
        sweeps: sol.residuals.sweeps,
        residuals: sol.residuals.history.clone(),
        converged: sol.residuals.converged,
        stationarity_max: stationarity,
        stages,
    };
    Ok(EquilibriumSolution {
        paths: sol,
        measure_flow: flow,
        cost,
        diagnostics,
    })
}

pub fn solve_mfg(
    spec: &ModelSpec,
    grid: &TimeGrid,
    paths: &PathBundle,
    params: &SolverParams,
) -> Result<EquilibriumSolution> {
    solve(assemble_mfg(spec)?, grid, paths, params)
}

pub fn solve_mftc(
    spec: &ModelSpec,
    grid: &TimeGrid,
    paths: &PathBundle,
    params: &SolverParams,
) -> Result<EquilibriumSolution> {
    solve(assemble_mftc(spec)?, grid, paths, params)
}

pub fn solve_mftc_with(
    spec: &ModelSpec,
    driver: MftcDriver,
    grid: &TimeGrid,
    paths: &PathBundle,
    params: &SolverParams,
) -> Result<EquilibriumSolution> {
    solve(assemble_mftc_with(spec, driver)?, grid, paths, params)
}

pub fn solve_mfg_generic_drift(
    spec: &ModelSpec,
    grid: &TimeGrid,
    paths: &PathBundle,
    params: &SolverParams,
) -> Result<EquilibriumSolution> {
    solve(assemble_mfg_generic(spec)?, grid, paths, params)
}

pub fn solve_mftc_generic_drift(
    spec: &ModelSpec,
    grid: &TimeGrid,
    paths: &PathBundle,
    params: &SolverParams,
) -> Result<EquilibriumSolution> {
    solve(assemble_mftc_generic(spec)?, grid, paths, params)
}

/// How the measure argument is formed when a control is evaluated.
#[derive(Debug, Clone)]
pub enum CostMode {
    /// Coefficients see a fixed external flow (one cloud per node).
    MfgFrozenFlow(MeasureFlow),
    /// Coefficients see the law of the simulated state itself.
    Mftc,
}

/// Per-particle cost of an open-loop control array `[node][particle]`,
/// simulated on the bundle's noise with a left-point rule.
pub fn per_particle_costs(
    spec: &ModelSpec,
    control: &[Vec<Vector>],
    grid: &TimeGrid,
    paths: &PathBundle,
    mode: &CostMode,
) -> Result<Vec<f64>> {
    paths.check_grid(grid)?;
    let count = paths.particles();
    if control.len() < grid.steps || control.iter().take(grid.steps).any(|c| c.len() != count) {
        return Err(Error::DimensionMismatch(
            "control array does not match grid and particles".into(),
        ));
    }
    if let CostMode::MfgFrozenFlow(flow) = mode {
        if flow.len() != grid.steps + 1 {
            return Err(Error::DimensionMismatch(format!(
                "flow has {} clouds, grid has {} nodes",
                flow.len(),
                grid.steps + 1
            )));
        }
    }
    let dt = grid.dt();
    let mut x: Vec<Vector> = paths.initial().points().to_vec();
    let mut costs = vec![0.0; count];
    for (i, controls) in control.iter().take(grid.steps).enumerate() {
        let t = grid.time(i);
        let own;
        let m = match mode {
            CostMode::MfgFrozenFlow(flow) => flow.cloud(i),
            CostMode::Mftc => {
                own = cloud_of(&x)?;
                &own
            }
        };
        let step: Vec<(f64, Vector)> = (0..count)
            .into_par_iter()
            .map(|k| {
                let (xk, vk) = (&x[k], &controls[k]);
                let running = (spec.f)(t, xk, m, vk) * dt;
                let next = xk
                    + (spec.b)(t, xk, m, vk) * dt
                    + (spec.sigma)(t, xk, m, vk) * &paths.noise()[k][i];
                (running, next)
            })
            .collect();
        for (k, (running, next)) in step.into_iter().enumerate() {
            costs[k] += running;
            x[k] = next;
        }
    }
    let own;
    let m = match mode {
        CostMode::MfgFrozenFlow(flow) => flow.cloud(grid.steps),
        CostMode::Mftc => {
            own = cloud_of(&x)?;
            &own
        }
    };
    for (c, xk) in costs.iter_mut().zip(&x) {
        *c += (spec.g)(xk, m);
    }
    if costs.iter().any(|c| !c.is_finite()) {
        return Err(Error::non_finite("cost evaluation"));
    }
    Ok(costs)
}

/// Monte Carlo cost of a control array with its standard error.
pub fn evaluate_cost(
    spec: &ModelSpec,
    control: &[Vec<Vector>],
    grid: &TimeGrid,
    paths: &PathBundle,
    mode: &CostMode,
) -> Result<CostEstimate> {
    Ok(CostEstimate::from_samples(&per_particle_costs(
        spec, control, grid, paths, mode,
    )?))
}
