//! Sampled fit of the monotonicity constants of the lifted coefficients.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::checks::{par_eval, pick, TOLERANCE};
use super::sampler::{rows, CouplingSampler};
use crate::error::{Error, Result};
use crate::fbsde::LiftedCoefficients;
use crate::model::{Matrix, Vector};
use crate::report::{CheckReport, Witness};

const DEGENERATE: f64 = 1e-12;

/// One sampled tuple `(t, X, P, Q)` and its perturbation.
#[derive(Debug, Clone)]
pub struct BetaTuple {
    pub t: f64,
    pub x: Vec<Vector>,
    pub p: Vec<Vector>,
    pub q: Vec<Matrix>,
    pub x2: Vec<Vector>,
    pub p2: Vec<Vector>,
    pub q2: Vec<Matrix>,
}

/// Per-tuple sums entering the fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaTerms {
    /// `E[dF.dX + dB.dP + sum_j dA^j.dQ^j]`
    pub lhs: f64,
    /// `E|d beta|^2`
    pub beta: f64,
    /// `E|dX|^2 + E|dP|^2 + E|dQ|^2`
    pub state: f64,
}

fn mean_sq<T>(a: &[T], b: &[T], f: impl Fn(&T, &T) -> f64) -> f64 {
    a.iter().zip(b).map(|(u, v)| f(u, v)).sum::<f64>() / a.len() as f64
}

impl BetaTuple {
    pub fn terms<C: LiftedCoefficients + ?Sized>(&self, coeffs: &C) -> Result<BetaTerms> {
        let (t, n) = (self.t, self.x.len() as f64);
        let fw = coeffs.forward(t, &self.x, &self.p, &self.q)?;
        let fw2 = coeffs.forward(t, &self.x2, &self.p2, &self.q2)?;
        let dr = coeffs.driver(t, &self.x, &self.p, &self.q)?;
        let dr2 = coeffs.driver(t, &self.x2, &self.p2, &self.q2)?;
        let be = coeffs.beta(t, &self.x, &self.p, &self.q)?;
        let be2 = coeffs.beta(t, &self.x2, &self.p2, &self.q2)?;
        let mut lhs = 0.0;
        for i in 0..self.x.len() {
            lhs += (&dr2[i] - &dr[i]).dot(&(&self.x2[i] - &self.x[i]));
            lhs += (&fw2.b[i] - &fw.b[i]).dot(&(&self.p2[i] - &self.p[i]));
            lhs += (&fw2.a[i] - &fw.a[i]).dot(&(&self.q2[i] - &self.q[i]));
        }
        let terms = BetaTerms {
            lhs: lhs / n,
            beta: mean_sq(&be, &be2, |a, b| (b - a).norm_squared()),
            state: mean_sq(&self.x, &self.x2, |a, b| (b - a).norm_squared())
                + mean_sq(&self.p, &self.p2, |a, b| (b - a).norm_squared())
                + mean_sq(&self.q, &self.q2, |a, b| (b - a).norm_squared()),
        };
        if [terms.lhs, terms.beta, terms.state]
            .iter()
            .all(|v| v.is_finite())
        {
            Ok(terms)
        } else {
            Err(Error::non_finite("beta monotonicity terms"))
        }
    }

    /// `E[(G(X') - G(X)) . (X' - X)]`
    pub fn terminal_pairing<C: LiftedCoefficients + ?Sized>(&self, coeffs: &C) -> Result<f64> {
        let g = coeffs.terminal(&self.x)?;
        let g2 = coeffs.terminal(&self.x2)?;
        let s = (0..self.x.len())
            .map(|i| (&g2[i] - &g[i]).dot(&(&self.x2[i] - &self.x[i])))
            .sum::<f64>()
            / self.x.len() as f64;
        if s.is_finite() {
            Ok(s)
        } else {
            Err(Error::non_finite("terminal pairing"))
        }
    }

    fn witness(&self, description: &str, margin: f64) -> Witness {
        let flat = |q: &[Matrix]| q.iter().map(|m| m.iter().copied().collect()).collect();
        Witness::new(description, margin)
            .with("t", self.t)
            .with_cloud("x", rows(&self.x))
            .with_cloud("x_prime", rows(&self.x2))
            .with_cloud("p", rows(&self.p))
            .with_cloud("p_prime", rows(&self.p2))
            .with_cloud("q", flat(&self.q))
            .with_cloud("q_prime", flat(&self.q2))
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Tuple `index`: the state pair comes from the coupling sampler; the
/// adjoint pair is either a perturbation or an independent redraw.
pub fn sample_tuple(sampler: &CouplingSampler, noise_dim: usize, index: usize) -> BetaTuple {
    let pair = sampler.pair(index);
    let mut rng = sampler.rng(index, "adjoint");
    let n = sampler.dim;
    let t = rng.random::<f64>();
    let scale = [0.05, 0.5, 2.0][rng.random_range(0..3)];
    let independent = rng.random_bool(0.25);
    let len = pair.xi.len();
    let p: Vec<Vector> = (0..len)
        .map(|_| Vector::from_fn(n, |_, _| normal(&mut rng)))
        .collect();
    let q: Vec<Matrix> = (0..len)
        .map(|_| Matrix::from_fn(n, noise_dim, |_, _| normal(&mut rng)))
        .collect();
    let (p2, q2) = if independent {
        (
            (0..len)
                .map(|_| Vector::from_fn(n, |_, _| normal(&mut rng)))
                .collect(),
            (0..len)
                .map(|_| Matrix::from_fn(n, noise_dim, |_, _| normal(&mut rng)))
                .collect(),
        )
    } else {
        (
            p.iter()
                .map(|v| v + Vector::from_fn(n, |_, _| scale * normal(&mut rng)))
                .collect(),
            q.iter()
                .map(|m| m + Matrix::from_fn(n, noise_dim, |_, _| scale * normal(&mut rng)))
                .collect(),
        )
    };
    BetaTuple {
        t,
        x: pair.xi,
        p,
        q,
        x2: pair.xi_prime,
        p2,
        q2,
    }
}

/// Pareto-extreme constants: the smallest `Gamma >= 0` for which some
/// `Lambda` works, then the largest such `Lambda`. Returns
/// `(Lambda, Gamma, index attaining Lambda)`.
pub fn fit_lambda_gamma(terms: &[Option<BetaTerms>]) -> (f64, f64, Option<usize>) {
    let gamma = terms
        .iter()
        .flatten()
        .filter(|s| s.state > DEGENERATE)
        .map(|s| s.lhs / s.state)
        .fold(0.0, f64::max);
    let ratios: Vec<Option<(f64, ())>> = terms
        .iter()
        .map(|s| {
            s.and_then(|s| (s.beta > DEGENERATE).then(|| ((gamma * s.state - s.lhs) / s.beta, ())))
        })
        .collect();
    match pick(&ratios, false) {
        Some((k, lambda, _)) => (lambda, gamma, Some(k)),
        None => (f64::INFINITY, gamma, None),
    }
}

/// Fits `(Lambda_beta, Gamma_beta)` with
/// `LHS <= -Lambda E|d beta|^2 + Gamma (E|dX|^2 + E|dP|^2 + E|dQ|^2)` on every
/// sampled tuple, and checks `E[(G(X') - G(X)) . (X' - X)] >= 0`.
/// `noise_dim` is the number of columns of each `Q^i`.
pub fn check_beta_monotonicity<C: LiftedCoefficients + ?Sized>(
    coeffs: &C,
    noise_dim: usize,
    sampler: &CouplingSampler,
    samples: usize,
) -> Result<CheckReport> {
    super::checks::require_samples(sampler, samples, coeffs.state_dim())?;
    if noise_dim == 0 {
        return Err(Error::InvalidInput("noise_dim must be positive".into()));
    }
    let vals = par_eval(samples, |k| {
        let tuple = sample_tuple(sampler, noise_dim, k);
        let terms = tuple.terms(coeffs)?;
        let dx = mean_sq(&tuple.x, &tuple.x2, |a, b| (b - a).norm_squared());
        let g = tuple.terminal_pairing(coeffs)?;
        let g_ratio = (dx > DEGENERATE).then_some(g / dx);
        Ok(Some((terms, g_ratio)))
    })?;
    let terms: Vec<Option<BetaTerms>> = vals.iter().map(|v| v.map(|(t, _)| t)).collect();
    let (lambda, gamma, k_lambda) = fit_lambda_gamma(&terms);
    let g_vals: Vec<Option<(f64, ())>> = vals
        .iter()
        .map(|v| v.and_then(|(_, g)| g.map(|g| (g, ()))))
        .collect();
    let g_min = pick(&g_vals, false);

    let mut report = CheckReport::new("beta_monotonicity", samples);
    report.set_margin("Lambda_beta_hat", lambda);
    report.set_margin("Gamma_beta_hat", gamma);
    report.set_margin("G_min_ratio", g_min.map_or(0.0, |g| g.1));

    let g_ok = g_min.is_none_or(|g| g.1 >= -TOLERANCE);
    let lambda_ok = lambda > 0.0;
    let witness = if !g_ok {
        let (k, r, _) = g_min.expect("checked");
        Some(
            sample_tuple(sampler, noise_dim, k)
                .witness("terminal map G is not monotone", r)
                .with("sample_index", k as f64),
        )
    } else if !lambda_ok {
        let k = k_lambda.expect("finite lambda has an index");
        let s = terms[k].expect("index has terms");
        Some(
            sample_tuple(sampler, noise_dim, k)
                .witness("no positive Lambda_beta at the minimal Gamma_beta", lambda)
                .with("sample_index", k as f64)
                .with("lhs", s.lhs)
                .with("beta_distance_squared", s.beta)
                .with("state_distance_squared", s.state)
                .with("Gamma_beta_hat", gamma),
        )
    } else {
        None
    };
    Ok(report.conclude(g_ok && lambda_ok, witness))
}
