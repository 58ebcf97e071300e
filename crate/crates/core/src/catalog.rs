//! Named models with numeric parameter overrides. Every entry carries
//! analytic derivatives, a constants ledger and a Gaussian initial law.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::fbsde::{gaussian_cloud, PathBundle, TimeGrid};
use crate::lq_oracle::LqModel;
use crate::measure::ParticleCloud;
use crate::model::{ConstantsLedger, FSplit, Matrix, ModeFlags, ModelSpec, Vector};

pub const MODEL_NAMES: [&str; 8] = [
    "lq_basic",
    "lq_mean_coupled",
    "lq_mftc",
    "split_mean_coupled",
    "small_mean_field",
    "anti_g",
    "generic_tanh",
    "generic_mean_drift",
];

#[derive(Debug, Clone)]
pub struct CatalogEntry {
    pub spec: ModelSpec,
    pub initial_mean: Vec<f64>,
    pub initial_std: f64,
    /// Closed-form counterpart, for the linear-quadratic entries.
    pub lq: Option<LqModel>,
}

impl CatalogEntry {
    pub fn initial_cloud(&self, particles: usize, seed: u64) -> Result<ParticleCloud> {
        gaussian_cloud(particles, &self.initial_mean, self.initial_std, seed)
    }

    /// Initial cloud and Brownian increments, both drawn from `seed`.
    pub fn path_bundle(&self, grid: &TimeGrid, particles: usize, seed: u64) -> Result<PathBundle> {
        PathBundle::generate(self.initial_cloud(particles, seed)?, grid, seed)
    }
}

struct Params<'a> {
    given: &'a BTreeMap<String, f64>,
    used: BTreeSet<&'static str>,
}

impl<'a> Params<'a> {
    fn new(given: &'a BTreeMap<String, f64>) -> Self {
        Self {
            given,
            used: BTreeSet::new(),
        }
    }

    fn get(&mut self, key: &'static str, default: f64) -> Result<f64> {
        self.used.insert(key);
        let value = self.given.get(key).copied().unwrap_or(default);
        if !value.is_finite() {
            return Err(Error::InvalidInput(format!(
                "parameter {key} must be finite"
            )));
        }
        Ok(value)
    }

    fn finish(self, model: &str) -> Result<()> {
        match self.given.keys().find(|k| !self.used.contains(k.as_str())) {
            Some(k) => Err(Error::InvalidInput(format!(
                "model {model} has no parameter {k}"
            ))),
            None => Ok(()),
        }
    }
}

/// Build a catalog model. Unknown names and unknown override keys are errors.
pub fn model(name: &str, overrides: &BTreeMap<String, f64>) -> Result<CatalogEntry> {
    let mut p = Params::new(overrides);
    let entry = match name {
        "lq_basic" => lq_entry(name, &mut p, [0.0, 0.0, 0.0, 0.0])?,
        "lq_mean_coupled" => lq_entry(name, &mut p, [0.5, 1.0, 0.5, 0.0])?,
        "lq_mftc" => lq_entry(name, &mut p, [0.0, 0.0, 0.0, 1.0])?,
        "split_mean_coupled" => split_mean_coupled(&mut p)?,
        "small_mean_field" => small_mean_field(&mut p)?,
        "anti_g" => anti_g(&mut p)?,
        "generic_tanh" => generic(name, &mut p, 0.0)?,
        "generic_mean_drift" => generic(name, &mut p, 0.2)?,
        _ => {
            return Err(Error::InvalidInput(format!(
                "unknown model {name}; available: {}",
                MODEL_NAMES.join(", ")
            )))
        }
    };
    p.finish(name)?;
    entry.spec.constants.validate()?;
    Ok(entry)
}

fn mean_of(m: &ParticleCloud) -> Vector {
    m.mean().clone()
}

fn initial(p: &mut Params, mean: f64, std: f64) -> Result<(Vec<f64>, f64)> {
    let mean = p.get("x0_mean", mean)?;
    let std = p.get("x0_std", std)?;
    if std < 0.0 {
        return Err(Error::InvalidInput("x0_std must be nonnegative".into()));
    }
    Ok((vec![mean], std))
}

const LINEAR_FLAGS: ModeFlags = ModeFlags {
    drift_linear: true,
    sigma_control_dependent: false,
    measure_derivatives_y_independent: true,
};

/// Defaults for (kappa, q_term, kappa_term, q_term_mean).
fn lq_entry(name: &str, p: &mut Params, defaults: [f64; 4]) -> Result<CatalogEntry> {
    let [kappa, q_term, kappa_term, q_term_mean] = defaults;
    let model = LqModel::scalar(
        p.get("a", 0.0)?,
        p.get("b", 1.0)?,
        p.get("sigma", 0.3)?,
        p.get("q", 1.0)?,
        p.get("r", 1.0)?,
        p.get("kappa", kappa)?,
        p.get("q_term", q_term)?,
        p.get("kappa_term", kappa_term)?,
        1.0,
    )
    .with_terminal_mean_penalty(vec![p.get("q_term_mean", q_term_mean)?]);
    let (mean, std) = initial(p, 1.0, 0.5)?;
    let model = model.with_initial(mean.clone(), vec![std]);
    let spec = lq_model_spec(name, &model)?;
    Ok(CatalogEntry {
        spec,
        initial_mean: mean,
        initial_std: std,
        lq: Some(model),
    })
}

/// The [`ModelSpec`] of a diagonal LQ model: `b = A x + B v`, constant
/// sigma, and the quadratic costs of [`LqModel`].
pub fn lq_model_spec(name: &str, model: &LqModel) -> Result<ModelSpec> {
    model.validate()?;
    let n = model.dim();
    let diag = |v: &[f64]| Vector::from_column_slice(v);
    let (a, b, s) = (
        diag(&model.a_drift),
        diag(&model.b_drift),
        diag(&model.sigma0),
    );
    let (q, r, k) = (diag(&model.q_run), diag(&model.r_run), diag(&model.kappa));
    let (qt, kt, qm) = (
        diag(&model.q_term),
        diag(&model.kappa_term),
        diag(&model.q_term_mean),
    );

    let gap = |x: &Vector, m: &ParticleCloud, kap: &Vector| x - kap.component_mul(m.mean());
    let spec = ModelSpec::new(
        name,
        n,
        n,
        {
            let (a, b) = (a.clone(), b.clone());
            move |_, x, _, v| a.component_mul(x) + b.component_mul(v)
        },
        {
            let s = s.clone();
            move |_, _, _, _| Matrix::from_diagonal(&s)
        },
        {
            let (q, r, k) = (q.clone(), r.clone(), k.clone());
            move |_, x, m, v| {
                let e = gap(x, m, &k);
                0.5 * (q.dot(&e.component_mul(&e)) + r.dot(&v.component_mul(v)))
            }
        },
        {
            let (qt, kt, qm) = (qt.clone(), kt.clone(), qm.clone());
            move |x, m| {
                let e = gap(x, m, &kt);
                let mb = m.mean();
                0.5 * (qt.dot(&e.component_mul(&e)) + qm.dot(&mb.component_mul(mb)))
            }
        },
        {
            let (q, k) = (q.clone(), k.clone());
            move |_, x, m, _| q.component_mul(&gap(x, m, &k))
        },
        {
            let r = r.clone();
            move |_, _, _, v| r.component_mul(v)
        },
        {
            let (qt, kt) = (qt.clone(), kt.clone());
            move |x, m| qt.component_mul(&gap(x, m, &kt))
        },
    )
    .with_dx_b({
        let a = a.clone();
        move |_, _, _, _| Matrix::from_diagonal(&a)
    })
    .with_dv_b({
        let b = b.clone();
        move |_, _, _, _| Matrix::from_diagonal(&b)
    })
    .with_dx_sigma(move |_, _, _, _| vec![Matrix::zeros(n, n); n])
    .with_dvv_f({
        let r = r.clone();
        move |_, _, _, _| Matrix::from_diagonal(&r)
    })
    .with_dy_dfdnu({
        let (q, k) = (q.clone(), k.clone());
        move |_, x, m, _, _| -q.component_mul(&k).component_mul(&gap(x, m, &k))
    })
    .with_dy_dgdnu({
        let (qt, kt, qm) = (qt.clone(), kt.clone(), qm.clone());
        move |x, m, _| {
            -qt.component_mul(&kt).component_mul(&gap(x, m, &kt)) + qm.component_mul(m.mean())
        }
    })
    .with_dy_dbdnu(move |_, _, _, _, _| Matrix::zeros(n, n))
    .with_flags(LINEAR_FLAGS);

    let max_abs = |v: &Vector| v.amax();
    let min_of = |v: &Vector| v.min();
    let coupling = q.component_mul(&k).amax();
    let constants = ConstantsLedger {
        l: Some(
            [
                max_abs(&a),
                max_abs(&b),
                max_abs(&q),
                max_abs(&r),
                max_abs(&qt),
                1.0,
            ]
            .into_iter()
            .fold(0.0, f64::max),
        ),
        lambda: Some(min_of(&r) / 2.0),
        lambda_v: Some(min_of(&r) / 2.0),
        lambda_x: Some(min_of(&q) / 2.0),
        lambda_m: Some(0.0),
        l_x_cap: Some(coupling),
        l_v_cap: Some(0.0),
        l_x: Some(0.0),
        l_m: Some(0.0),
        l_g: Some(0.0),
        l_b_x: Some(0.0),
        l_b_v: Some(0.0),
        l_b_m: Some(0.0),
        lambda_b: Some(min_of(&b.component_mul(&b))),
    };
    Ok(spec.with_constants(constants))
}

#[cfg(test)]
fn scalar(v: f64) -> Vector {
    Vector::from_element(1, v)
}

/// `f = f0 + f1`, `f0 = -c x mean(m)`, `f1 = |x|^2 + 1/2 |v|^2`, `b = v`, `g = 1/2 |x|^2`.
fn split_mean_coupled(p: &mut Params) -> Result<CatalogEntry> {
    let c = p.get("coupling", 0.2)?;
    let sigma = p.get("sigma", 0.3)?;
    let (mean, std) = initial(p, 1.0, 0.5)?;
    let split = FSplit {
        f0: std::sync::Arc::new(move |_: f64, x: &Vector, m: &ParticleCloud, _: &Vector| {
            -c * x.dot(m.mean())
        }),
        f1: std::sync::Arc::new(|_: f64, x: &Vector, _: &ParticleCloud, v: &Vector| {
            x.norm_squared() + 0.5 * v.norm_squared()
        }),
        dx_f0: std::sync::Arc::new(move |_: f64, _: &Vector, m: &ParticleCloud, _: &Vector| {
            -c * mean_of(m)
        }),
        dv_f0: std::sync::Arc::new(|_: f64, _: &Vector, _: &ParticleCloud, v: &Vector| {
            Vector::zeros(v.len())
        }),
        dx_f1: std::sync::Arc::new(|_: f64, x: &Vector, _: &ParticleCloud, _: &Vector| 2.0 * x),
        dv_f1: std::sync::Arc::new(|_: f64, _: &Vector, _: &ParticleCloud, v: &Vector| v.clone()),
    };
    let spec = ModelSpec::new(
        "split_mean_coupled",
        1,
        1,
        |_, _, _, v| v.clone(),
        move |_, _, _, _| Matrix::from_element(1, 1, sigma),
        move |_, x, m, v| -c * x.dot(m.mean()) + x.norm_squared() + 0.5 * v.norm_squared(),
        |x, _| 0.5 * x.norm_squared(),
        move |_, x, m, _| 2.0 * x - c * mean_of(m),
        |_, _, _, v| v.clone(),
        |x, _| x.clone(),
    )
    .with_dx_b(|_, _, _, _| Matrix::zeros(1, 1))
    .with_dv_b(|_, _, _, _| Matrix::identity(1, 1))
    .with_dx_sigma(|_, _, _, _| vec![Matrix::zeros(1, 1)])
    .with_dvv_f(|_, _, _, _| Matrix::identity(1, 1))
    .with_dy_dfdnu(move |_, x, _, _, _| -c * x)
    .with_dy_dgdnu(|x, _, _| Vector::zeros(x.len()))
    .with_dy_dbdnu(|_, _, _, _, _| Matrix::zeros(1, 1))
    .with_f_split(split)
    .with_flags(LINEAR_FLAGS)
    .with_constants(ConstantsLedger {
        l: Some(2.0f64.max(c)),
        lambda: Some(0.5),
        lambda_v: Some(0.5),
        lambda_x: Some(1.0),
        lambda_m: Some(c.abs()),
        l_x_cap: Some(0.0),
        l_v_cap: Some(0.0),
        l_x: Some(0.0),
        l_m: Some(0.0),
        l_g: Some(0.0),
        ..Default::default()
    });
    Ok(CatalogEntry {
        spec,
        initial_mean: mean,
        initial_std: std,
        lq: None,
    })
}

/// `f = |x|^2 + |v|^2 + c v mean(m)`, `b = v`, `g = 1/2 |x|^2`.
fn small_mean_field(p: &mut Params) -> Result<CatalogEntry> {
    let c = p.get("coupling", 1.0)?;
    let sigma = p.get("sigma", 0.3)?;
    let (mean, std) = initial(p, 1.0, 0.5)?;
    let spec = ModelSpec::new(
        "small_mean_field",
        1,
        1,
        |_, _, _, v| v.clone(),
        move |_, _, _, _| Matrix::from_element(1, 1, sigma),
        move |_, x, m, v| x.norm_squared() + v.norm_squared() + c * v.dot(m.mean()),
        |x, _| 0.5 * x.norm_squared(),
        |_, x, _, _| 2.0 * x,
        move |_, _, m, v| 2.0 * v + c * mean_of(m),
        |x, _| x.clone(),
    )
    .with_dx_b(|_, _, _, _| Matrix::zeros(1, 1))
    .with_dv_b(|_, _, _, _| Matrix::identity(1, 1))
    .with_dx_sigma(|_, _, _, _| vec![Matrix::zeros(1, 1)])
    .with_dvv_f(|_, _, _, _| Matrix::identity(1, 1) * 2.0)
    .with_dy_dfdnu(move |_, _, _, v, _| c * v)
    .with_dy_dgdnu(|x, _, _| Vector::zeros(x.len()))
    .with_dy_dbdnu(|_, _, _, _, _| Matrix::zeros(1, 1))
    .with_flags(LINEAR_FLAGS)
    .with_constants(ConstantsLedger {
        l: Some(2.0f64.max(c.abs())),
        lambda: Some(1.0),
        lambda_v: Some(1.0),
        lambda_x: Some(1.0),
        lambda_m: Some(0.0),
        l_x_cap: Some(0.0),
        l_v_cap: Some(c.abs()),
        l_x: Some(0.0),
        l_m: Some(0.0),
        l_g: Some(0.0),
        ..Default::default()
    });
    Ok(CatalogEntry {
        spec,
        initial_mean: mean,
        initial_std: std,
        lq: None,
    })
}

/// `f = 1/2 |x|^2 + 1/2 |v|^2`, `b = v`, `g = -c |x|^2`.
fn anti_g(p: &mut Params) -> Result<CatalogEntry> {
    let c = p.get("c", 5.0)?;
    let sigma = p.get("sigma", 0.3)?;
    let (mean, std) = initial(p, 1.0, 0.5)?;
    let spec = ModelSpec::new(
        "anti_g",
        1,
        1,
        |_, _, _, v| v.clone(),
        move |_, _, _, _| Matrix::from_element(1, 1, sigma),
        |_, x, _, v| 0.5 * (x.norm_squared() + v.norm_squared()),
        move |x, _| -c * x.norm_squared(),
        |_, x, _, _| x.clone(),
        |_, _, _, v| v.clone(),
        move |x, _| -2.0 * c * x,
    )
    .with_dx_b(|_, _, _, _| Matrix::zeros(1, 1))
    .with_dv_b(|_, _, _, _| Matrix::identity(1, 1))
    .with_dx_sigma(|_, _, _, _| vec![Matrix::zeros(1, 1)])
    .with_dvv_f(|_, _, _, _| Matrix::identity(1, 1))
    .with_dy_dfdnu(|_, x, _, _, _| Vector::zeros(x.len()))
    .with_dy_dgdnu(|x, _, _| Vector::zeros(x.len()))
    .with_dy_dbdnu(|_, _, _, _, _| Matrix::zeros(1, 1))
    .with_flags(LINEAR_FLAGS)
    .with_constants(ConstantsLedger {
        l: Some(1.0f64.max(2.0 * c.abs())),
        lambda: Some(0.5),
        lambda_v: Some(0.5),
        lambda_x: Some(0.5),
        lambda_m: Some(0.0),
        l_x_cap: Some(0.0),
        l_v_cap: Some(0.0),
        l_x: Some(0.0),
        l_m: Some(0.0),
        l_g: Some(2.0 * c.max(0.0)),
        ..Default::default()
    });
    Ok(CatalogEntry {
        spec,
        initial_mean: mean,
        initial_std: std,
        lq: None,
    })
}

fn sech2(v: f64) -> f64 {
    1.0 / v.cosh().powi(2)
}

/// `b = v + a tanh(v) + e mean(m)`, `f = 1/2 |x|^2 + 1/2 |v|^2`, `g = 1/2 |x|^2`.
fn generic(name: &str, p: &mut Params, drift_mean: f64) -> Result<CatalogEntry> {
    let a = p.get("tanh_weight", 0.1)?;
    let e = p.get("drift_mean", drift_mean)?;
    let sigma = p.get("sigma", 0.3)?;
    let (mean, std) = initial(p, 1.0, 0.5)?;
    if a.abs() >= 1.0 {
        return Err(Error::InvalidInput(
            "tanh_weight must lie in (-1, 1)".into(),
        ));
    }
    let spec = ModelSpec::new(
        name,
        1,
        1,
        move |_, _, m, v| v.map(|u| u + a * u.tanh()) + e * mean_of(m),
        move |_, _, _, _| Matrix::from_element(1, 1, sigma),
        |_, x, _, v| 0.5 * (x.norm_squared() + v.norm_squared()),
        |x, _| 0.5 * x.norm_squared(),
        |_, x, _, _| x.clone(),
        |_, _, _, v| v.clone(),
        |x, _| x.clone(),
    )
    .with_dx_b(|_, _, _, _| Matrix::zeros(1, 1))
    .with_dv_b(move |_, _, _, v| Matrix::from_element(1, 1, 1.0 + a * sech2(v[0])))
    .with_dx_sigma(|_, _, _, _| vec![Matrix::zeros(1, 1)])
    .with_dvv_f(|_, _, _, _| Matrix::identity(1, 1))
    .with_dy_dfdnu(|_, x, _, _, _| Vector::zeros(x.len()))
    .with_dy_dgdnu(|x, _, _| Vector::zeros(x.len()))
    .with_dy_dbdnu(move |_, _, _, _, _| Matrix::from_element(1, 1, e))
    .with_flags(ModeFlags {
        drift_linear: false,
        sigma_control_dependent: false,
        measure_derivatives_y_independent: true,
    })
    .with_constants(ConstantsLedger {
        l: Some(1.0 + a.abs() + e.abs()),
        lambda: Some(0.5),
        lambda_v: Some(0.5),
        lambda_x: Some(0.5),
        lambda_m: Some(0.0),
        l_x_cap: Some(0.0),
        l_v_cap: Some(0.0),
        l_x: Some(0.0),
        l_m: Some(0.0),
        l_g: Some(0.0),
        l_b_x: Some(0.0),
        l_b_v: Some(2.0 * a.abs()),
        l_b_m: Some(0.0),
        lambda_b: Some((1.0 - a.abs()).powi(2)),
    });
    Ok(CatalogEntry {
        spec,
        initial_mean: mean,
        initial_std: std,
        lq: None,
    })
}
