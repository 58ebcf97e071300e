//! Closed-form linear-quadratic references, coordinate by coordinate.
//!
//! Model (diagonal, every coefficient a per-coordinate vector):
//!
//! ```text
//! dX = (A X + B v) dt + sigma0 dW
//! f  = 1/2 Q (x - kappa mean)^2 + 1/2 R v^2
//! g  = 1/2 Q_T (x - kappa_T mean)^2 + 1/2 Q_Tm mean^2
//! ```
//!
//! The value-function slope solves `pi' = -2 A pi + (B^2/R) pi^2 - Q`,
//! `pi(T) = Q_T`. The mean-field offset `eta` and the mean solve a linear
//! two-point boundary problem (MFG) or a second Riccati equation (MFTC).

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BLOWUP: f64 = 1e12;
pub const DEFAULT_ODE_STEPS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LqModel {
    pub a_drift: Vec<f64>,
    pub b_drift: Vec<f64>,
    pub sigma0: Vec<f64>,
    pub q_run: Vec<f64>,
    pub r_run: Vec<f64>,
    pub kappa: Vec<f64>,
    pub q_term: Vec<f64>,
    pub kappa_term: Vec<f64>,
    /// weight of the pure terminal mean penalty; invisible to MFG best responses
    #[serde(default)]
    pub q_term_mean: Vec<f64>,
    pub t0: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub initial_mean: Vec<f64>,
    pub initial_std: Vec<f64>,
}

impl LqModel {
    /// One-dimensional model with zero initial spread parameters left to the caller.
    #[allow(clippy::too_many_arguments)]
    pub fn scalar(
        a: f64,
        b: f64,
        sigma0: f64,
        q: f64,
        r: f64,
        kappa: f64,
        q_term: f64,
        kappa_term: f64,
        t_end: f64,
    ) -> Self {
        Self {
            a_drift: vec![a],
            b_drift: vec![b],
            sigma0: vec![sigma0],
            q_run: vec![q],
            r_run: vec![r],
            kappa: vec![kappa],
            q_term: vec![q_term],
            kappa_term: vec![kappa_term],
            q_term_mean: vec![0.0],
            t0: 0.0,
            t_end,
            initial_mean: vec![0.0],
            initial_std: vec![0.0],
        }
    }

    pub fn with_initial(mut self, mean: Vec<f64>, std: Vec<f64>) -> Self {
        self.initial_mean = mean;
        self.initial_std = std;
        self
    }

    pub fn with_terminal_mean_penalty(mut self, q_term_mean: Vec<f64>) -> Self {
        self.q_term_mean = q_term_mean;
        self
    }

    pub fn dim(&self) -> usize {
        self.a_drift.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        let fields = [
            &self.b_drift,
            &self.sigma0,
            &self.q_run,
            &self.r_run,
            &self.kappa,
            &self.q_term,
            &self.kappa_term,
            &self.q_term_mean,
            &self.initial_mean,
            &self.initial_std,
        ];
        if n == 0 || fields.iter().any(|f| f.len() != n) {
            return Err(Error::DimensionMismatch(
                "all LQ coefficient vectors need the same length".into(),
            ));
        }
        if fields
            .iter()
            .chain([&self.a_drift].iter())
            .any(|f| f.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::non_finite("LQ coefficients"));
        }
        if self.r_run.iter().any(|&r| r <= 0.0) {
            return Err(Error::InvalidInput("R must be positive".into()));
        }
        if self
            .q_run
            .iter()
            .chain(&self.q_term)
            .chain(&self.q_term_mean)
            .any(|&q| q < 0.0)
        {
            return Err(Error::InvalidInput("Q and Q_T must be nonnegative".into()));
        }
        if self.initial_std.iter().any(|&s| s < 0.0) {
            return Err(Error::InvalidInput(
                "initial std must be nonnegative".into(),
            ));
        }
        if !(self.t0 >= 0.0 && self.t0 < self.t_end) {
            return Err(Error::InvalidInput("need 0 <= t0 < T".into()));
        }
        Ok(())
    }
}

/// Trajectories on the oracle grid, `[node][coordinate]`. The optimal
/// feedback is `v(t, x) = gain(t) x + offset(t)` coordinate-wise, with
/// `gain = -B pi / R` and `offset = -B eta / R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LqSolution {
    pub times: Vec<f64>,
    pub riccati: Vec<Vec<f64>>,
    pub eta: Vec<Vec<f64>>,
    pub mean: Vec<Vec<f64>>,
    pub gain: Vec<Vec<f64>>,
    pub offset: Vec<Vec<f64>>,
    /// slope of the mean Riccati equation (MFTC only)
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_riccati: Option<Vec<Vec<f64>>>,
}

fn interp(times: &[f64], values: &[Vec<f64>], t: f64, k: usize) -> f64 {
    let h = times[1] - times[0];
    let pos = ((t - times[0]) / h).clamp(0.0, (times.len() - 1) as f64);
    let i = (pos.floor() as usize).min(times.len() - 2);
    let w = pos - i as f64;
    values[i][k] * (1.0 - w) + values[i + 1][k] * w
}

impl LqSolution {
    pub fn riccati_at(&self, t: f64, k: usize) -> f64 {
        interp(&self.times, &self.riccati, t, k)
    }

    pub fn mean_at(&self, t: f64, k: usize) -> f64 {
        interp(&self.times, &self.mean, t, k)
    }

    pub fn control(&self, t: f64, x: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|k| {
                interp(&self.times, &self.gain, t, k) * x[k]
                    + interp(&self.times, &self.offset, t, k)
            })
            .collect()
    }

    /// CSV with columns time, pi_k, eta_k, mean_k.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let n = self.riccati[0].len();
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["time".to_string()];
        for prefix in ["pi", "eta", "mean"] {
            header.extend((1..=n).map(|k| format!("{prefix}{k}")));
        }
        w.write_record(&header)?;
        for (i, t) in self.times.iter().enumerate() {
            let mut row = vec![format!("{t}")];
            for series in [&self.riccati, &self.eta, &self.mean] {
                row.extend(series[i].iter().map(|v| format!("{v}")));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Backward RK4 for `pi' = -2 A pi + c pi^2 - q` on `2 * steps` half-steps,
/// so that midpoint values are available to forward integrations.
fn riccati_half_grid(
    a: f64,
    c: f64,
    q: f64,
    terminal: f64,
    t0: f64,
    t_end: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    let fine = 2 * steps;
    let h = (t_end - t0) / fine as f64;
    let rhs = |pi: f64| -2.0 * a * pi + c * pi * pi - q;
    let mut out = vec![0.0; fine + 1];
    out[fine] = terminal;
    for i in (0..fine).rev() {
        let y = out[i + 1];
        // integrate backward: dy/ds with s = -t
        let k1 = -rhs(y);
        let k2 = -rhs(y + 0.5 * h * k1);
        let k3 = -rhs(y + 0.5 * h * k2);
        let k4 = -rhs(y + h * k3);
        let next = y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if !next.is_finite() || next.abs() > BLOWUP {
            return Err(Error::RiccatiBlowup(next));
        }
        out[i] = next;
    }
    Ok(out)
}

/// Forward RK4 of the linear system `z' = M(t) z` with `M` known on the
/// half grid; returns `z` on the full grid.
fn linear_forward(
    m_at: impl Fn(usize) -> [[f64; 2]; 2],
    z0: [f64; 2],
    steps: usize,
    h: f64,
) -> Vec<[f64; 2]> {
    let apply = |m: [[f64; 2]; 2], z: [f64; 2]| {
        [
            m[0][0] * z[0] + m[0][1] * z[1],
            m[1][0] * z[0] + m[1][1] * z[1],
        ]
    };
    let axpy = |z: [f64; 2], s: f64, k: [f64; 2]| [z[0] + s * k[0], z[1] + s * k[1]];
    let mut out = Vec::with_capacity(steps + 1);
    out.push(z0);
    let mut z = z0;
    for i in 0..steps {
        let (m0, mh, m1) = (m_at(2 * i), m_at(2 * i + 1), m_at(2 * i + 2));
        let k1 = apply(m0, z);
        let k2 = apply(mh, axpy(z, 0.5 * h, k1));
        let k3 = apply(mh, axpy(z, 0.5 * h, k2));
        let k4 = apply(m1, axpy(z, h, k3));
        z = [
            z[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            z[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        ];
        out.push(z);
    }
    out
}

fn check_steps(steps: usize) -> Result<()> {
    if steps < 100 {
        return Err(Error::InvalidInput(format!("ode_steps = {steps} < 100")));
    }
    Ok(())
}

struct Coordinate {
    pi: Vec<f64>,
    eta: Vec<f64>,
    mean: Vec<f64>,
    mean_pi: Option<Vec<f64>>,
}

fn assemble(model: &LqModel, steps: usize, coords: Vec<Coordinate>) -> LqSolution {
    let h = (model.t_end - model.t0) / steps as f64;
    let times: Vec<f64> = (0..=steps)
        .map(|i| {
            if i == steps {
                model.t_end
            } else {
                model.t0 + i as f64 * h
            }
        })
        .collect();
    let col = |f: &dyn Fn(&Coordinate, usize) -> f64| -> Vec<Vec<f64>> {
        (0..=steps)
            .map(|i| coords.iter().map(|c| f(c, i)).collect())
            .collect()
    };
    let gain = (0..=steps)
        .map(|i| {
            (0..coords.len())
                .map(|k| -model.b_drift[k] * coords[k].pi[2 * i] / model.r_run[k])
                .collect()
        })
        .collect();
    let offset = (0..=steps)
        .map(|i| {
            (0..coords.len())
                .map(|k| -model.b_drift[k] * coords[k].eta[i] / model.r_run[k])
                .collect()
        })
        .collect();
    let mean_riccati = coords[0]
        .mean_pi
        .as_ref()
        .map(|_| col(&|c, i| c.mean_pi.as_ref().expect("all coordinates")[2 * i]));
    LqSolution {
        riccati: col(&|c, i| c.pi[2 * i]),
        eta: col(&|c, i| c.eta[i]),
        mean: col(&|c, i| c.mean[i]),
        times,
        gain,
        offset,
        mean_riccati,
    }
}

/// Mean-field game: the population mean is a fixed point of the
/// best-response dynamics, found from the linear boundary problem for
/// `(mean, eta)` via its fundamental matrix.
pub fn solve_lq_mfg(model: &LqModel, ode_steps: usize) -> Result<LqSolution> {
    model.validate()?;
    check_steps(ode_steps)?;
    let h = (model.t_end - model.t0) / ode_steps as f64;
    let mut coords = Vec::with_capacity(model.dim());
    for k in 0..model.dim() {
        let (a, b, r, q) = (
            model.a_drift[k],
            model.b_drift[k],
            model.r_run[k],
            model.q_run[k],
        );
        let c = b * b / r;
        let pi = riccati_half_grid(a, c, q, model.q_term[k], model.t0, model.t_end, ode_steps)?;
        let kappa = model.kappa[k];
        let m_at = |j: usize| {
            let closed = a - c * pi[j];
            [[closed, -c], [q * kappa, -closed]]
        };
        // columns of the fundamental matrix
        let e1 = linear_forward(m_at, [1.0, 0.0], ode_steps, h);
        let e2 = linear_forward(m_at, [0.0, 1.0], ode_steps, h);
        let (f1, f2) = (e1[ode_steps], e2[ode_steps]);
        let ct = model.q_term[k] * model.kappa_term[k];
        let m0 = model.initial_mean[k];
        // eta(T) + ct * mean(T) = 0
        let denom = f2[1] + ct * f2[0];
        if denom.abs() < 1e-14 {
            return Err(Error::InvalidInput(
                "mean-field boundary problem is singular".into(),
            ));
        }
        let eta0 = -(f1[1] + ct * f1[0]) * m0 / denom;
        let z = linear_forward(m_at, [m0, eta0], ode_steps, h);
        coords.push(Coordinate {
            pi,
            eta: z.iter().map(|s| s[1]).collect(),
            mean: z.iter().map(|s| s[0]).collect(),
            mean_pi: None,
        });
    }
    Ok(assemble(model, ode_steps, coords))
}

/// Mean-field type control: split into the deviation problem (slope `pi`)
/// and the deterministic mean problem with cost weights `Q (1 - kappa)^2`,
/// `Q_T (1 - kappa_T)^2 + Q_Tm` (slope `pi_bar`). The feedback is
/// `-B/R (pi x + (pi_bar - pi) mean)`.
pub fn solve_lq_mftc(model: &LqModel, ode_steps: usize) -> Result<LqSolution> {
    model.validate()?;
    check_steps(ode_steps)?;
    let h = (model.t_end - model.t0) / ode_steps as f64;
    let mut coords = Vec::with_capacity(model.dim());
    for k in 0..model.dim() {
        let (a, b, r, q) = (
            model.a_drift[k],
            model.b_drift[k],
            model.r_run[k],
            model.q_run[k],
        );
        let c = b * b / r;
        let pi = riccati_half_grid(a, c, q, model.q_term[k], model.t0, model.t_end, ode_steps)?;
        let w = (1.0 - model.kappa[k]).powi(2);
        let wt = (1.0 - model.kappa_term[k]).powi(2);
        let terminal = model.q_term[k] * wt + model.q_term_mean[k];
        let pi_bar = riccati_half_grid(a, c, q * w, terminal, model.t0, model.t_end, ode_steps)?;
        let m_at = |j: usize| [[a - c * pi_bar[j], 0.0], [0.0, 0.0]];
        let z = linear_forward(m_at, [model.initial_mean[k], 0.0], ode_steps, h);
        let mean: Vec<f64> = z.iter().map(|s| s[0]).collect();
        let eta = (0..=ode_steps)
            .map(|i| (pi_bar[2 * i] - pi[2 * i]) * mean[i])
            .collect();
        coords.push(Coordinate {
            pi,
            eta,
            mean,
            mean_pi: Some(pi_bar),
        });
    }
    Ok(assemble(model, ode_steps, coords))
}
