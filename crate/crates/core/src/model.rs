//! Coefficient functions (b, sigma, f, g), their derivatives, and the
//! declared regularity constants of a mean field model.
//!
//! Measure arguments are always [`ParticleCloud`] values. Linear functional
//! derivatives are supplied in their y-gradient form `D_y (dk/dnu)(..)(y)`,
//! which is what the lifted systems consume.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::ParticleCloud;

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// `(t, x, m, v) -> T`
pub type CoefFn<T> = Arc<dyn Fn(f64, &Vector, &ParticleCloud, &Vector) -> T + Send + Sync>;
/// `(x, m) -> T`
pub type TerminalFn<T> = Arc<dyn Fn(&Vector, &ParticleCloud) -> T + Send + Sync>;
/// `(t, x, m, v, y) -> T`, the y-gradient of a linear functional derivative.
pub type MeasureDerivFn<T> =
    Arc<dyn Fn(f64, &Vector, &ParticleCloud, &Vector, &Vector) -> T + Send + Sync>;
/// `(x, m, y) -> R^n`
pub type TerminalMeasureDerivFn =
    Arc<dyn Fn(&Vector, &ParticleCloud, &Vector) -> Vector + Send + Sync>;

/// User-declared regularity and convexity constants. Nothing here is
/// estimated; see [`crate::monotonicity`] for sampled estimates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConstantsLedger {
    #[serde(rename = "L")]
    pub l: Option<f64>,
    pub lambda: Option<f64>,
    pub lambda_x: Option<f64>,
    pub lambda_v: Option<f64>,
    pub lambda_m: Option<f64>,
    #[serde(rename = "L_x")]
    pub l_x_cap: Option<f64>,
    #[serde(rename = "L_v")]
    pub l_v_cap: Option<f64>,
    pub l_x: Option<f64>,
    pub l_m: Option<f64>,
    pub l_g: Option<f64>,
    #[serde(rename = "L_b_x")]
    pub l_b_x: Option<f64>,
    #[serde(rename = "L_b_v")]
    pub l_b_v: Option<f64>,
    #[serde(rename = "L_b_m")]
    pub l_b_m: Option<f64>,
    pub lambda_b: Option<f64>,
}

impl ConstantsLedger {
    pub const NAMES: [&'static str; 14] = [
        "L", "lambda", "lambda_x", "lambda_v", "lambda_m", "L_x", "L_v", "l_x", "l_m", "l_g",
        "L_b_x", "L_b_v", "L_b_m", "lambda_b",
    ];

    fn slot(&mut self, name: &str) -> Option<&mut Option<f64>> {
        Some(match name {
            "L" => &mut self.l,
            "lambda" => &mut self.lambda,
            "lambda_x" => &mut self.lambda_x,
            "lambda_v" => &mut self.lambda_v,
            "lambda_m" => &mut self.lambda_m,
            "L_x" => &mut self.l_x_cap,
            "L_v" => &mut self.l_v_cap,
            "l_x" => &mut self.l_x,
            "l_m" => &mut self.l_m,
            "l_g" => &mut self.l_g,
            "L_b_x" => &mut self.l_b_x,
            "L_b_v" => &mut self.l_b_v,
            "L_b_m" => &mut self.l_b_m,
            "lambda_b" => &mut self.lambda_b,
            _ => return None,
        })
    }

    /// Look a constant up by its ledger name.
    pub fn value(&self, name: &'static str) -> Result<f64> {
        let mut copy = self.clone();
        copy.slot(name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown constant `{name}`")))?
            .ok_or(Error::MissingConstant(name))
    }

    /// Value or zero when undeclared.
    pub fn value_or_zero(&self, name: &'static str) -> f64 {
        self.value(name).unwrap_or(0.0)
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let slot = self
            .slot(name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown constant `{name}`")))?;
        *slot = Some(value);
        Ok(())
    }

    /// All values finite; everything except `lambda_m` nonnegative.
    pub fn validate(&self) -> Result<()> {
        let mut copy = self.clone();
        for name in Self::NAMES {
            if let Some(v) = *copy.slot(name).expect("known name") {
                if !v.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "constant {name} = {v} is not finite"
                    )));
                }
                if name != "lambda_m" && v < 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "constant {name} = {v} is negative"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Extra requirement for solvers that rely on strict convexity in v.
    pub fn require_convexity(&self) -> Result<f64> {
        let lv = self.value("lambda_v")?;
        if lv <= 0.0 {
            return Err(Error::InvalidInput("lambda_v must be positive".into()));
        }
        Ok(lv)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeFlags {
    /// b and sigma are linear in (x, v); the v-Hessian of L is then the v-Hessian of f.
    pub drift_linear: bool,
    pub sigma_control_dependent: bool,
    /// Every supplied `D_y (dk/dnu)(..)(y)` is independent of y, so particle
    /// averages over the tilde copy can be computed once per node.
    pub measure_derivatives_y_independent: bool,
}

/// Split `f = f0 + f1` with the gradients of both parts.
#[derive(Clone)]
pub struct FSplit {
    pub f0: CoefFn<f64>,
    pub f1: CoefFn<f64>,
    pub dx_f0: CoefFn<Vector>,
    pub dv_f0: CoefFn<Vector>,
    pub dx_f1: CoefFn<Vector>,
    pub dv_f1: CoefFn<Vector>,
}

/// The model tuple (b, sigma, f, g) with derivative bundle and constants.
#[derive(Clone)]
pub struct ModelSpec {
    pub name: String,
    pub n: usize,
    pub d: usize,
    pub b: CoefFn<Vector>,
    pub sigma: CoefFn<Matrix>,
    pub f: CoefFn<f64>,
    pub g: TerminalFn<f64>,
    pub dx_f: CoefFn<Vector>,
    pub dv_f: CoefFn<Vector>,
    pub dx_g: TerminalFn<Vector>,
    /// n x n
    pub dx_b: Option<CoefFn<Matrix>>,
    /// n x d
    pub dv_b: Option<CoefFn<Matrix>>,
    /// Per column j of sigma: the n x n Jacobian of sigma^j in x.
    pub dx_sigma: Option<CoefFn<Vec<Matrix>>>,
    /// Per column j of sigma: the n x d Jacobian of sigma^j in v.
    pub dv_sigma: Option<CoefFn<Vec<Matrix>>>,
    /// d x d Hessian of f in v.
    pub dvv_f: Option<CoefFn<Matrix>>,
    pub dy_dfdnu: Option<MeasureDerivFn<Vector>>,
    pub dy_dgdnu: Option<TerminalMeasureDerivFn>,
    /// n x n Jacobian in y of db/dnu.
    pub dy_dbdnu: Option<MeasureDerivFn<Matrix>>,
    /// Per column j: the n x n Jacobian in y of d(sigma^j)/dnu.
    pub dy_dsigmadnu: Option<MeasureDerivFn<Vec<Matrix>>>,
    pub f_split: Option<FSplit>,
    pub constants: ConstantsLedger,
    pub mode_flags: ModeFlags,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("d", &self.d)
            .field("constants", &self.constants)
            .field("mode_flags", &self.mode_flags)
            .finish_non_exhaustive()
    }
}

macro_rules! setter {
    ($name:ident, $field:ident, $ty:ty, ($($arg:ty),*)) => {
        pub fn $name(mut self, func: impl Fn($($arg),*) -> $ty + Send + Sync + 'static) -> Self {
            self.$field = Some(Arc::new(func));
            self
        }
    };
}

impl ModelSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        n: usize,
        d: usize,
        b: impl Fn(f64, &Vector, &ParticleCloud, &Vector) -> Vector + Send + Sync + 'static,
        sigma: impl Fn(f64, &Vector, &ParticleCloud, &Vector) -> Matrix + Send + Sync + 'static,
        f: impl Fn(f64, &Vector, &ParticleCloud, &Vector) -> f64 + Send + Sync + 'static,
        g: impl Fn(&Vector, &ParticleCloud) -> f64 + Send + Sync + 'static,
        dx_f: impl Fn(f64, &Vector, &ParticleCloud, &Vector) -> Vector + Send + Sync + 'static,
        dv_f: impl Fn(f64, &Vector, &ParticleCloud, &Vector) -> Vector + Send + Sync + 'static,
        dx_g: impl Fn(&Vector, &ParticleCloud) -> Vector + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            n,
            d,
            b: Arc::new(b),
            sigma: Arc::new(sigma),
            f: Arc::new(f),
            g: Arc::new(g),
            dx_f: Arc::new(dx_f),
            dv_f: Arc::new(dv_f),
            dx_g: Arc::new(dx_g),
            dx_b: None,
            dv_b: None,
            dx_sigma: None,
            dv_sigma: None,
            dvv_f: None,
            dy_dfdnu: None,
            dy_dgdnu: None,
            dy_dbdnu: None,
            dy_dsigmadnu: None,
            f_split: None,
            constants: ConstantsLedger::default(),
            mode_flags: ModeFlags::default(),
        }
    }

    setter!(
        with_dx_b,
        dx_b,
        Matrix,
        (f64, &Vector, &ParticleCloud, &Vector)
    );
    setter!(
        with_dv_b,
        dv_b,
        Matrix,
        (f64, &Vector, &ParticleCloud, &Vector)
    );
    setter!(
        with_dx_sigma,
        dx_sigma,
        Vec<Matrix>,
        (f64, &Vector, &ParticleCloud, &Vector)
    );
    setter!(
        with_dv_sigma,
        dv_sigma,
        Vec<Matrix>,
        (f64, &Vector, &ParticleCloud, &Vector)
    );
    setter!(
        with_dvv_f,
        dvv_f,
        Matrix,
        (f64, &Vector, &ParticleCloud, &Vector)
    );
    setter!(
        with_dy_dfdnu,
        dy_dfdnu,
        Vector,
        (f64, &Vector, &ParticleCloud, &Vector, &Vector)
    );
    setter!(
        with_dy_dgdnu,
        dy_dgdnu,
        Vector,
        (&Vector, &ParticleCloud, &Vector)
    );
    setter!(
        with_dy_dbdnu,
        dy_dbdnu,
        Matrix,
        (f64, &Vector, &ParticleCloud, &Vector, &Vector)
    );
    setter!(
        with_dy_dsigmadnu,
        dy_dsigmadnu,
        Vec<Matrix>,
        (f64, &Vector, &ParticleCloud, &Vector, &Vector)
    );

    pub fn with_f_split(mut self, split: FSplit) -> Self {
        self.f_split = Some(split);
        self
    }

    pub fn with_constants(mut self, constants: ConstantsLedger) -> Self {
        self.constants = constants;
        self
    }

    pub fn with_flags(mut self, flags: ModeFlags) -> Self {
        self.mode_flags = flags;
        self
    }

    /// D_x b, analytic when supplied, central differences otherwise.
    pub fn jac_x_b(&self, t: f64, x: &Vector, m: &ParticleCloud, v: &Vector) -> Matrix {
        match &self.dx_b {
            Some(j) => j(t, x, m, v),
            None => fd_jacobian(x, self.n, |xx| (self.b)(t, xx, m, v)),
        }
    }

    /// D_v b (n x d).
    pub fn jac_v_b(&self, t: f64, x: &Vector, m: &ParticleCloud, v: &Vector) -> Matrix {
        match &self.dv_b {
            Some(j) => j(t, x, m, v),
            None => fd_jacobian(v, self.n, |vv| (self.b)(t, x, m, vv)),
        }
    }

    /// Per-column Jacobians of sigma in x.
    pub fn jac_x_sigma(&self, t: f64, x: &Vector, m: &ParticleCloud, v: &Vector) -> Vec<Matrix> {
        match &self.dx_sigma {
            Some(j) => j(t, x, m, v),
            None => (0..self.n)
                .map(|col| {
                    fd_jacobian(x, self.n, |xx| {
                        (self.sigma)(t, xx, m, v).column(col).into_owned()
                    })
                })
                .collect(),
        }
    }

    /// Per-column Jacobians of sigma in v. Zero when sigma is declared control independent.
    pub fn jac_v_sigma(&self, t: f64, x: &Vector, m: &ParticleCloud, v: &Vector) -> Vec<Matrix> {
        if !self.mode_flags.sigma_control_dependent {
            return vec![Matrix::zeros(self.n, self.d); self.n];
        }
        match &self.dv_sigma {
            Some(j) => j(t, x, m, v),
            None => (0..self.n)
                .map(|col| {
                    fd_jacobian(v, self.n, |vv| {
                        (self.sigma)(t, x, m, vv).column(col).into_owned()
                    })
                })
                .collect(),
        }
    }
}

pub(crate) fn fd_step(value: f64) -> f64 {
    1e-5 * (1.0 + value.abs())
}

/// Central-difference Jacobian of `func` (R^k -> R^rows) at `at`.
pub(crate) fn fd_jacobian(
    at: &Vector,
    rows: usize,
    mut func: impl FnMut(&Vector) -> Vector,
) -> Matrix {
    let mut jac = Matrix::zeros(rows, at.len());
    let mut probe = at.clone();
    for k in 0..at.len() {
        let h = fd_step(at[k]);
        probe[k] = at[k] + h;
        let plus = func(&probe);
        probe[k] = at[k] - h;
        let minus = func(&probe);
        probe[k] = at[k];
        jac.column_mut(k).copy_from(&((plus - minus) / (2.0 * h)));
    }
    jac
}

/// Central-difference gradient of a scalar function.
pub(crate) fn fd_gradient(at: &Vector, mut func: impl FnMut(&Vector) -> f64) -> Vector {
    let mut grad = Vector::zeros(at.len());
    let mut probe = at.clone();
    for k in 0..at.len() {
        let h = fd_step(at[k]);
        probe[k] = at[k] + h;
        let plus = func(&probe);
        probe[k] = at[k] - h;
        let minus = func(&probe);
        probe[k] = at[k];
        grad[k] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Relative error with a floor on the reference magnitude, so that
/// derivatives vanishing at a sample are compared absolutely.
pub fn relative_error(analytic: &[f64], reference: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(reference)
        .map(|(a, r)| (a - r).abs())
        .fold(0.0, f64::max);
    let scale = reference.iter().map(|r| r.abs()).fold(0.0, f64::max);
    diff / scale.max(AUDIT_REFERENCE_FLOOR)
}

pub const AUDIT_TOLERANCE: f64 = 1e-5;
pub const AUDIT_REFERENCE_FLOOR: f64 = 1e-3;
const AUDIT_CLOUD_SIZE: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub derivative: String,
    pub max_relative_error: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub model: String,
    pub samples: usize,
    pub tolerance: f64,
    pub entries: Vec<AuditEntry>,
    /// max |f0 + f1 - f| when a split is present
    pub split_max_abs_error: Option<f64>,
    /// max change of sigma under a change of v, when sigma is declared control independent
    pub sigma_control_sensitivity: Option<f64>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| !e.flagged)
            && self.split_max_abs_error.is_none_or(|e| e <= 1e-12)
            && self.sigma_control_sensitivity.is_none_or(|e| e <= 1e-12)
    }

    pub fn entry(&self, name: &str) -> Option<&AuditEntry> {
        self.entries.iter().find(|e| e.derivative == name)
    }
}

/// A random evaluation point `(t, x, m, v, y)` with `t` in [0, 1), standard
/// normal `x`, `v`, `y` and a small shifted normal cloud `m`.
#[derive(Debug, Clone)]
pub struct PointSample {
    pub t: f64,
    pub x: Vector,
    pub v: Vector,
    pub y: Vector,
    pub m: ParticleCloud,
}

fn draw_vector(rng: &mut ChaCha8Rng, len: usize) -> Vector {
    Vector::from_fn(len, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn draw_sample(rng: &mut ChaCha8Rng, n: usize, d: usize) -> PointSample {
    let shift = draw_vector(rng, n);
    let points = (0..AUDIT_CLOUD_SIZE)
        .map(|_| draw_vector(rng, n) + &shift)
        .collect();
    PointSample {
        t: rng.random::<f64>(),
        x: draw_vector(rng, n),
        v: draw_vector(rng, d),
        y: draw_vector(rng, n),
        m: ParticleCloud::uniform(points).expect("finite samples"),
    }
}

/// `count` seeded evaluation points in dimensions (n, d).
pub fn draw_point_samples(n: usize, d: usize, count: usize, seed: u64) -> Vec<PointSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| draw_sample(&mut rng, n, d)).collect()
}

#[derive(Default)]
struct Tracker {
    entries: Vec<AuditEntry>,
}

impl Tracker {
    fn record(&mut self, name: &str, analytic: &[f64], reference: &[f64]) -> Result<()> {
        if analytic.iter().chain(reference).any(|v| !v.is_finite()) {
            return Err(Error::non_finite(format!("audit of {name}")));
        }
        if analytic.len() != reference.len() {
            return Err(Error::DimensionMismatch(format!(
                "{name}: analytic derivative has {} entries, expected {}",
                analytic.len(),
                reference.len()
            )));
        }
        let err = relative_error(analytic, reference);
        match self.entries.iter_mut().find(|e| e.derivative == name) {
            Some(e) => e.max_relative_error = e.max_relative_error.max(err),
            None => self.entries.push(AuditEntry {
                derivative: name.to_string(),
                max_relative_error: err,
                flagged: false,
            }),
        }
        Ok(())
    }
}

/// Derivative of `k(cloud)` in the position of particle `i`, divided by the
/// particle's weight: by the lifting identity this equals
/// `D_y (dk/dnu)(m)(x_i)`.
fn lifted_fd_gradient(
    m: &ParticleCloud,
    i: usize,
    mut k: impl FnMut(&ParticleCloud) -> Vector,
) -> Result<Matrix> {
    let base = m.point(i).clone();
    let rows = k(m).len();
    let w = m.weights()[i];
    let mut jac = Matrix::zeros(rows, base.len());
    for c in 0..base.len() {
        let h = fd_step(base[c]);
        let mut shifted = |delta: f64| -> Result<Vector> {
            let mut pts = m.points().to_vec();
            pts[i][c] += delta;
            Ok(k(&ParticleCloud::weighted(pts, m.weights().to_vec())?))
        };
        let col = (shifted(h)? - shifted(-h)?) / (2.0 * h * w);
        jac.column_mut(c).copy_from(&col);
    }
    Ok(jac)
}

fn flatten(m: &Matrix) -> Vec<f64> {
    m.iter().copied().collect()
}

fn flatten_all(ms: &[Matrix]) -> Vec<f64> {
    ms.iter().flat_map(|m| m.iter().copied()).collect()
}

/// Compare every supplied analytic derivative with central differences of
/// its parent on `sample_count` seeded random points.
pub fn finite_difference_audit(
    spec: &ModelSpec,
    sample_count: usize,
    seed: u64,
) -> Result<AuditReport> {
    if sample_count == 0 {
        return Err(Error::InvalidInput(
            "sample_count must be at least 1".into(),
        ));
    }
    if !spec.mode_flags.drift_linear {
        if spec.dx_b.is_none() {
            return Err(Error::MissingDerivative("Dx_b"));
        }
        if spec.dv_b.is_none() {
            return Err(Error::MissingDerivative("Dv_b"));
        }
    }
    let (n, d) = (spec.n, spec.d);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tr = Tracker::default();
    let mut split_err: Option<f64> = None;
    let mut sigma_sens: Option<f64> = None;

    for _ in 0..sample_count {
        let s = draw_sample(&mut rng, n, d);
        let (t, x, v, y, m) = (s.t, &s.x, &s.v, &s.y, &s.m);

        let fx = fd_gradient(x, |xx| (spec.f)(t, xx, m, v));
        tr.record("Dx_f", (spec.dx_f)(t, x, m, v).as_slice(), fx.as_slice())?;
        let fv = fd_gradient(v, |vv| (spec.f)(t, x, m, vv));
        tr.record("Dv_f", (spec.dv_f)(t, x, m, v).as_slice(), fv.as_slice())?;
        let gx = fd_gradient(x, |xx| (spec.g)(xx, m));
        tr.record("Dx_g", (spec.dx_g)(x, m).as_slice(), gx.as_slice())?;

        if let Some(dx_b) = &spec.dx_b {
            let fd = fd_jacobian(x, n, |xx| (spec.b)(t, xx, m, v));
            tr.record("Dx_b", &flatten(&dx_b(t, x, m, v)), &flatten(&fd))?;
        }
        if let Some(dv_b) = &spec.dv_b {
            let fd = fd_jacobian(v, n, |vv| (spec.b)(t, x, m, vv));
            tr.record("Dv_b", &flatten(&dv_b(t, x, m, v)), &flatten(&fd))?;
        }
        if let Some(dx_s) = &spec.dx_sigma {
            let fd: Vec<Matrix> = (0..n)
                .map(|c| fd_jacobian(x, n, |xx| (spec.sigma)(t, xx, m, v).column(c).into_owned()))
                .collect();
            tr.record(
                "Dx_sigma",
                &flatten_all(&dx_s(t, x, m, v)),
                &flatten_all(&fd),
            )?;
        }
        if let Some(dv_s) = &spec.dv_sigma {
            let fd: Vec<Matrix> = (0..n)
                .map(|c| fd_jacobian(v, n, |vv| (spec.sigma)(t, x, m, vv).column(c).into_owned()))
                .collect();
            tr.record(
                "Dv_sigma",
                &flatten_all(&dv_s(t, x, m, v)),
                &flatten_all(&fd),
            )?;
        }
        if let Some(dvv) = &spec.dvv_f {
            let fd = fd_jacobian(v, d, |vv| (spec.dv_f)(t, x, m, vv));
            tr.record("Dvv_f", &flatten(&dvv(t, x, m, v)), &flatten(&fd))?;
        }

        // measure derivatives through the lifting identity, at a cloud particle
        let i = rng.random_range(0..m.len());
        let yi = m.point(i).clone();
        if let Some(dnu) = &spec.dy_dfdnu {
            let fd = lifted_fd_gradient(m, i, |mm| Vector::from_element(1, (spec.f)(t, x, mm, v)))?;
            tr.record(
                "Dy_dfdnu",
                dnu(t, x, m, v, &yi).as_slice(),
                fd.row(0).transpose().as_slice(),
            )?;
        }
        if let Some(dnu) = &spec.dy_dgdnu {
            let fd = lifted_fd_gradient(m, i, |mm| Vector::from_element(1, (spec.g)(x, mm)))?;
            tr.record(
                "Dy_dgdnu",
                dnu(x, m, &yi).as_slice(),
                fd.row(0).transpose().as_slice(),
            )?;
        }
        if let Some(dnu) = &spec.dy_dbdnu {
            let fd = lifted_fd_gradient(m, i, |mm| (spec.b)(t, x, mm, v))?;
            tr.record("Dy_dbdnu", &flatten(&dnu(t, x, m, v, &yi)), &flatten(&fd))?;
        }
        if let Some(dnu) = &spec.dy_dsigmadnu {
            let fd: Vec<Matrix> = (0..n)
                .map(|c| {
                    lifted_fd_gradient(m, i, |mm| (spec.sigma)(t, x, mm, v).column(c).into_owned())
                })
                .collect::<Result<_>>()?;
            tr.record(
                "Dy_dsigmadnu",
                &flatten_all(&dnu(t, x, m, v, &yi)),
                &flatten_all(&fd),
            )?;
        }
        if spec.mode_flags.measure_derivatives_y_independent {
            // the declared y-independence is itself part of the contract
            if let Some(dnu) = &spec.dy_dfdnu {
                tr.record(
                    "Dy_dfdnu(y-independence)",
                    dnu(t, x, m, v, y).as_slice(),
                    dnu(t, x, m, v, &yi).as_slice(),
                )?;
            }
            if let Some(dnu) = &spec.dy_dgdnu {
                tr.record(
                    "Dy_dgdnu(y-independence)",
                    dnu(x, m, y).as_slice(),
                    dnu(x, m, &yi).as_slice(),
                )?;
            }
            if let Some(dnu) = &spec.dy_dbdnu {
                tr.record(
                    "Dy_dbdnu(y-independence)",
                    &flatten(&dnu(t, x, m, v, y)),
                    &flatten(&dnu(t, x, m, v, &yi)),
                )?;
            }
        }

        if let Some(split) = &spec.f_split {
            let tag = |part: &str, which: &str| format!("{which}_{part}");
            for (part, func, dx, dv) in [
                ("f0", &split.f0, &split.dx_f0, &split.dv_f0),
                ("f1", &split.f1, &split.dx_f1, &split.dv_f1),
            ] {
                let fx = fd_gradient(x, |xx| func(t, xx, m, v));
                tr.record(&tag(part, "Dx"), dx(t, x, m, v).as_slice(), fx.as_slice())?;
                let fv = fd_gradient(v, |vv| func(t, x, m, vv));
                tr.record(&tag(part, "Dv"), dv(t, x, m, v).as_slice(), fv.as_slice())?;
            }
            let total = (split.f0)(t, x, m, v) + (split.f1)(t, x, m, v);
            let full = (spec.f)(t, x, m, v);
            let err = (total - full).abs() / (1.0 + full.abs());
            split_err = Some(split_err.map_or(err, |e: f64| e.max(err)));
        }

        if !spec.mode_flags.sigma_control_dependent {
            let other = draw_vector(&mut rng, d);
            let a = (spec.sigma)(t, x, m, v);
            let b = (spec.sigma)(t, x, m, &other);
            let sens = (a - b).amax();
            sigma_sens = Some(sigma_sens.map_or(sens, |e: f64| e.max(sens)));
        }
    }

    let mut entries = tr.entries;
    for e in &mut entries {
        e.flagged = e.max_relative_error > AUDIT_TOLERANCE;
    }
    Ok(AuditReport {
        model: spec.name.clone(),
        samples: sample_count,
        tolerance: AUDIT_TOLERANCE,
        entries,
        split_max_abs_error: split_err,
        sigma_control_sensitivity: sigma_sens,
    })
}
