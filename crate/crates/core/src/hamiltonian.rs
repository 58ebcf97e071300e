//! Lagrangian, Hamiltonian, optimal control map and pointwise diagnostics.
//!
//! `q` is an n x n matrix whose j-th column pairs with the j-th column of
//! sigma, so `L = p.b + sum_j q^j.sigma^j + f`.

use nalgebra::SymmetricEigen;

use crate::error::{Error, Result};
use crate::measure::ParticleCloud;
use crate::model::{fd_step, Matrix, ModelSpec, PointSample, Vector};
use crate::report::{CheckReport, Witness};

pub const NEWTON_TOL: f64 = 1e-9;
pub const NEWTON_MAX_ITER: usize = 100;
const HESSIAN_FLOOR: f64 = 1e-12;
const ARMIJO_C: f64 = 1e-4;

fn check_dims(spec: &ModelSpec, x: &Vector, p: &Vector, q: &Matrix) -> Result<()> {
    if x.len() != spec.n || p.len() != spec.n || q.nrows() != spec.n || q.ncols() != spec.n {
        return Err(Error::DimensionMismatch(format!(
            "expected x, p in R^{n} and q in R^({n}x{n}); got {}, {}, {}x{}",
            x.len(),
            p.len(),
            q.nrows(),
            q.ncols(),
            n = spec.n
        )));
    }
    Ok(())
}

/// `p.b + sum_j q^j.sigma^j + f` at `(t, x, m, v)`.
pub fn lagrangian(
    spec: &ModelSpec,
    t: f64,
    x: &Vector,
    m: &ParticleCloud,
    v: &Vector,
    p: &Vector,
    q: &Matrix,
) -> Result<f64> {
    check_dims(spec, x, p, q)?;
    let b = (spec.b)(t, x, m, v);
    let sigma = (spec.sigma)(t, x, m, v);
    let value = p.dot(&b) + q.component_mul(&sigma).sum() + (spec.f)(t, x, m, v);
    if !value.is_finite() {
        return Err(Error::non_finite("lagrangian"));
    }
    Ok(value)
}

/// `D_v L = (D_v b)^T p + sum_j (D_v sigma^j)^T q^j + D_v f`.
pub fn dv_lagrangian(
    spec: &ModelSpec,
    t: f64,
    x: &Vector,
    m: &ParticleCloud,
    v: &Vector,
    p: &Vector,
    q: &Matrix,
) -> Vector {
    let mut grad = (spec.dv_f)(t, x, m, v) + spec.jac_v_b(t, x, m, v).tr_mul(p);
    if spec.mode_flags.sigma_control_dependent {
        for (j, jac) in spec.jac_v_sigma(t, x, m, v).iter().enumerate() {
            grad += jac.tr_mul(&q.column(j));
        }
    }
    grad
}

#[allow(clippy::too_many_arguments)]
fn v_hessian(
    spec: &ModelSpec,
    t: f64,
    x: &Vector,
    m: &ParticleCloud,
    v: &Vector,
    p: &Vector,
    q: &Matrix,
) -> Matrix {
    if let (Some(dvv), true) = (&spec.dvv_f, spec.mode_flags.drift_linear) {
        return dvv(t, x, m, v);
    }
    let d = v.len();
    let mut hess = Matrix::zeros(d, d);
    let mut probe = v.clone();
    for k in 0..d {
        let h = fd_step(v[k]);
        probe[k] = v[k] + h;
        let plus = dv_lagrangian(spec, t, x, m, &probe, p, q);
        probe[k] = v[k] - h;
        let minus = dv_lagrangian(spec, t, x, m, &probe, p, q);
        probe[k] = v[k];
        hess.column_mut(k).copy_from(&((plus - minus) / (2.0 * h)));
    }
    hess
}

/// Damped Newton on the stationarity equation `D_v L = 0`, globalized by
/// Armijo backtracking on `|D_v L|^2`.
#[allow(clippy::too_many_arguments)]
pub fn minimize_hamiltonian(
    spec: &ModelSpec,
    t: f64,
    x: &Vector,
    m: &ParticleCloud,
    p: &Vector,
    q: &Matrix,
    v_init: Option<&Vector>,
    newton_tol: f64,
) -> Result<Vector> {
    check_dims(spec, x, p, q)?;
    let mut v = v_init.cloned().unwrap_or_else(|| Vector::zeros(spec.d));
    if v.len() != spec.d || v.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidInput(
            "v_init must be a finite vector in R^d".into(),
        ));
    }
    let mut r = dv_lagrangian(spec, t, x, m, &v, p, q);
    let mut res = r.norm();
    for _ in 0..NEWTON_MAX_ITER {
        if !res.is_finite() {
            return Err(Error::non_finite("stationarity residual"));
        }
        if res <= newton_tol {
            return Ok(v);
        }
        let hess = v_hessian(spec, t, x, m, &v, p, q);
        let sym = (&hess + hess.transpose()) * 0.5;
        let min_eig = if spec.d == 1 {
            sym[(0, 0)]
        } else {
            SymmetricEigen::new(sym).eigenvalues.min()
        };
        if !(min_eig >= HESSIAN_FLOOR) {
            return Err(Error::SingularHessian {
                min_eigenvalue: min_eig,
            });
        }
        let step = hess.lu().solve(&(-&r)).ok_or(Error::SingularHessian {
            min_eigenvalue: min_eig,
        })?;
        let mut alpha = 1.0;
        loop {
            let trial = &v + &step * alpha;
            let r_trial = dv_lagrangian(spec, t, x, m, &trial, p, q);
            let res_trial = r_trial.norm();
            if res_trial * res_trial <= (1.0 - ARMIJO_C * alpha) * res * res || alpha < 1e-10 {
                v = trial;
                r = r_trial;
                res = res_trial;
                break;
            }
            alpha *= 0.5;
        }
    }
    if res <= newton_tol {
        return Ok(v);
    }
    Err(Error::NoConvergence {
        iterations: NEWTON_MAX_ITER,
        residual: res,
    })
}

#[derive(Debug, Clone)]
pub struct HamiltonianPoint {
    pub t: f64,
    pub x: Vector,
    pub m: ParticleCloud,
    pub p: Vector,
    pub q: Matrix,
    pub v_hat: Vector,
    pub h_value: f64,
}

/// `H(t, x, m, p, q)` together with its minimizer.
pub fn hamiltonian(
    spec: &ModelSpec,
    t: f64,
    x: &Vector,
    m: &ParticleCloud,
    p: &Vector,
    q: &Matrix,
) -> Result<HamiltonianPoint> {
    let v_hat = minimize_hamiltonian(spec, t, x, m, p, q, None, NEWTON_TOL)?;
    let h_value = lagrangian(spec, t, x, m, &v_hat, p, q)?;
    Ok(HamiltonianPoint {
        t,
        x: x.clone(),
        m: m.clone(),
        p: p.clone(),
        q: q.clone(),
        v_hat,
        h_value,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianGradients {
    pub dp_h: Vector,
    pub dq_h: Matrix,
    pub dx_h: Vector,
    pub h: f64,
}

/// `D_x H = (D_x b)^T p + sum_j (D_x sigma^j)^T q^j + D_x f` at a given control.
pub fn dx_hamiltonian_at(
    spec: &ModelSpec,
    t: f64,
    x: &Vector,
    m: &ParticleCloud,
    v: &Vector,
    p: &Vector,
    q: &Matrix,
) -> Vector {
    let mut grad = (spec.dx_f)(t, x, m, v) + spec.jac_x_b(t, x, m, v).tr_mul(p);
    for (j, jac) in spec.jac_x_sigma(t, x, m, v).iter().enumerate() {
        grad += jac.tr_mul(&q.column(j));
    }
    grad
}

/// Envelope gradients of H at a minimizer.
#[allow(clippy::too_many_arguments)]
pub fn hamiltonian_gradients(
    spec: &ModelSpec,
    t: f64,
    x: &Vector,
    m: &ParticleCloud,
    p: &Vector,
    q: &Matrix,
    v_hat: &Vector,
    newton_tol: f64,
) -> Result<HamiltonianGradients> {
    check_dims(spec, x, p, q)?;
    let residual = dv_lagrangian(spec, t, x, m, v_hat, p, q).norm();
    let limit = 10.0 * newton_tol;
    if !(residual <= limit) {
        return Err(Error::StaleMinimizer { residual, limit });
    }
    let grads = HamiltonianGradients {
        dp_h: (spec.b)(t, x, m, v_hat),
        dq_h: (spec.sigma)(t, x, m, v_hat),
        dx_h: dx_hamiltonian_at(spec, t, x, m, v_hat, p, q),
        h: lagrangian(spec, t, x, m, v_hat, p, q)?,
    };
    if grads
        .dp_h
        .iter()
        .chain(grads.dx_h.iter())
        .chain(grads.dq_h.iter())
        .any(|c| !c.is_finite())
    {
        return Err(Error::non_finite("hamiltonian gradients"));
    }
    Ok(grads)
}

/// Cone property: the adjoint solving `(D_v b)^T p + D_v f = 0` is bounded by
/// `(L^2/lambda_b)(1 + |x| + W2(m, delta_0) + |v|)`.
pub fn cone_bound_check(spec: &ModelSpec, samples: &[PointSample]) -> Result<CheckReport> {
    let l = spec.constants.value("L")?;
    let lambda_b = spec.constants.value("lambda_b")?;
    if lambda_b <= 0.0 {
        return Err(Error::InvalidInput("lambda_b must be positive".into()));
    }
    let mut report = CheckReport::new("cone_bound", samples.len());
    let mut worst: Option<(f64, Witness)> = None;
    for s in samples {
        let dvb = spec.jac_v_b(s.t, &s.x, &s.m, &s.v);
        let gram = &dvb * dvb.transpose();
        let min_eig = SymmetricEigen::new(gram.clone()).eigenvalues.min();
        if min_eig < lambda_b / 2.0 {
            return Err(Error::SingularDvb {
                min_eigenvalue: min_eig,
                bound: lambda_b / 2.0,
                t: s.t,
                x: s.x.iter().copied().collect(),
                v: s.v.iter().copied().collect(),
            });
        }
        let rhs = &dvb * (spec.dv_f)(s.t, &s.x, &s.m, &s.v);
        let p = -gram
            .cholesky()
            .ok_or(Error::SingularDvb {
                min_eigenvalue: min_eig,
                bound: lambda_b / 2.0,
                t: s.t,
                x: s.x.iter().copied().collect(),
                v: s.v.iter().copied().collect(),
            })?
            .solve(&rhs);
        let bound = l * l / lambda_b * (1.0 + s.x.norm() + s.m.w2_to_origin() + s.v.norm());
        let ratio = p.norm() / bound;
        if !ratio.is_finite() {
            return Err(Error::non_finite("cone bound ratio"));
        }
        if worst.as_ref().is_none_or(|(r, _)| ratio > *r) {
            let w = Witness::new("largest |p| / cone bound", 1.0 - ratio)
                .with("t", s.t)
                .with("ratio", ratio)
                .with("p_norm", p.norm())
                .with("bound", bound)
                .with("x_norm", s.x.norm())
                .with("v_norm", s.v.norm())
                .with("w2_to_origin", s.m.w2_to_origin());
            worst = Some((ratio, w));
        }
    }
    let (ratio, witness) = worst.ok_or_else(|| Error::InvalidInput("no samples".into()))?;
    report.set_margin("max_ratio", ratio);
    let ok = ratio <= 1.0;
    Ok(report.conclude(ok, (!ok).then_some(witness)))
}

/// Sign of `D_p^2 H` in one dimension, from
/// `|D_v b|^2 / ((D_v b)(D_v^2 b)(D_v f)/|D_v b|^2 - D_v^2 f)`.
pub fn p_concavity_check_1d(spec: &ModelSpec, samples: &[PointSample]) -> Result<CheckReport> {
    if spec.n != 1 || spec.d != 1 {
        return Err(Error::DimensionUnsupported(format!(
            "concavity formula needs n = d = 1, got n = {}, d = {}",
            spec.n, spec.d
        )));
    }
    let mut report = CheckReport::new("p_concavity_1d", samples.len());
    let mut worst: Option<(f64, Witness)> = None;
    for s in samples {
        let (t, x, m) = (s.t, &s.x, &s.m);
        let v = s.v[0];
        let at = |vv: f64| Vector::from_element(1, vv);
        let dvb = spec.jac_v_b(t, x, m, &at(v))[(0, 0)];
        let h = fd_step(v);
        let dvvb = (spec.jac_v_b(t, x, m, &at(v + h))[(0, 0)]
            - spec.jac_v_b(t, x, m, &at(v - h))[(0, 0)])
            / (2.0 * h);
        let dvf = (spec.dv_f)(t, x, m, &at(v))[0];
        let dvvf = match &spec.dvv_f {
            Some(dvv) => dvv(t, x, m, &at(v))[(0, 0)],
            None => {
                ((spec.dv_f)(t, x, m, &at(v + h))[0] - (spec.dv_f)(t, x, m, &at(v - h))[0])
                    / (2.0 * h)
            }
        };
        let b2 = dvb * dvb;
        let denom = dvb * dvvb * dvf / b2 - dvvf;
        let value = b2 / denom;
        if !value.is_finite() {
            return Err(Error::non_finite("second p-derivative of H"));
        }
        if worst.as_ref().is_none_or(|(w, _)| value > *w) {
            let wit = Witness::new("largest D_p^2 H", -value)
                .with("t", t)
                .with("x", x[0])
                .with("v", v)
                .with("Dpp_H", value);
            worst = Some((value, wit));
        }
    }
    let (value, witness) = worst.ok_or_else(|| Error::InvalidInput("no samples".into()))?;
    report.set_margin("max_Dpp_H", value);
    let ok = value < 0.0;
    Ok(report.conclude(ok, (!ok).then_some(witness)))
}
