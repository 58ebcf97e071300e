//! Sampled falsifiers for the convexity and monotonicity conditions on the
//! cost functions. A pass only says that no violation was found.

use nalgebra::SymmetricEigen;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::sampler::{rows, CoupledPair, CouplingSampler};
use crate::error::{Error, Result};
use crate::measure::{wasserstein2, ParticleCloud};
use crate::model::{FSplit, Matrix, ModelSpec, Vector};
use crate::report::{CheckReport, Witness};

/// Inequality margins above `-TOLERANCE` count as satisfied.
pub const TOLERANCE: f64 = 1e-8;
const DEGENERATE: f64 = 1e-12;

/// `(x, m) -> R^n`, e.g. the x-gradient of a terminal cost.
pub type GradientFn<'a> = dyn Fn(&Vector, &ParticleCloud) -> Vector + Sync + 'a;

fn normal(rng: &mut ChaCha8Rng, len: usize) -> Vector {
    Vector::from_fn(len, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub(crate) fn with_vector(w: Witness, key: &str, v: &Vector) -> Witness {
    v.iter()
        .enumerate()
        .fold(w, |w, (i, c)| w.with(&format!("{key}[{i}]"), *c))
}

pub(crate) fn pair_witness(description: &str, margin: f64, pair: &CoupledPair) -> Witness {
    let (a, b) = pair.rows();
    Witness::new(description, margin)
        .with("pair_index", pair.index as f64)
        .with("scheme", pair.scheme.code())
        .with("distance_squared", pair.distance_squared())
        .with_cloud("xi", a)
        .with_cloud("xi_prime", b)
}

/// Evaluate sample indices in parallel; `None` marks a degenerate sample.
pub(crate) fn par_eval<T: Send>(
    samples: usize,
    f: impl Fn(usize) -> Result<Option<T>> + Sync + Send,
) -> Result<Vec<Option<T>>> {
    (0..samples).into_par_iter().map(f).collect()
}

/// First index attaining the smallest (or largest) value.
pub(crate) fn pick<T: Copy>(vals: &[Option<(f64, T)>], largest: bool) -> Option<(usize, f64, T)> {
    let mut best: Option<(usize, f64, T)> = None;
    for (k, v) in vals.iter().enumerate() {
        if let Some((val, extra)) = *v {
            let better = best.is_none_or(|(_, b, _)| if largest { val > b } else { val < b });
            if better {
                best = Some((k, val, extra));
            }
        }
    }
    best
}

fn finite(value: f64, context: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::non_finite(context.to_string()))
    }
}

pub(crate) fn require_samples(sampler: &CouplingSampler, samples: usize, n: usize) -> Result<()> {
    sampler.validate()?;
    if samples < 4 {
        return Err(Error::InvalidInput("need at least 4 samples".into()));
    }
    if sampler.dim != n {
        return Err(Error::DimensionMismatch(format!(
            "sampler draws in R^{}, model state in R^{n}",
            sampler.dim
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Move {
    X,
    V,
    Both,
}

/// Two evaluation points `(t, x, v)` and `(t, x2, v2)`.
#[derive(Debug, Clone)]
struct PointPair {
    t: f64,
    x: Vector,
    v: Vector,
    x2: Vector,
    v2: Vector,
}

impl PointPair {
    fn dx(&self) -> Vector {
        &self.x2 - &self.x
    }

    fn dv(&self) -> Vector {
        &self.v2 - &self.v
    }

    fn witness(&self, description: &str, margin: f64) -> Witness {
        let w = Witness::new(description, margin).with("t", self.t);
        let w = with_vector(w, "x", &self.x);
        let w = with_vector(w, "v", &self.v);
        let w = with_vector(w, "x_prime", &self.x2);
        with_vector(w, "v_prime", &self.v2)
    }
}

fn point_pair(sampler: &CouplingSampler, index: usize, d: usize, mv: Move) -> PointPair {
    let mut rng = sampler.rng(index, "points");
    let n = sampler.dim;
    let t = rng.random::<f64>();
    let x = normal(&mut rng, n);
    let v = normal(&mut rng, d);
    let scale = [0.05, 0.5, 2.0][rng.random_range(0..3)];
    let dx = normal(&mut rng, n) * scale;
    let dv = normal(&mut rng, d) * scale;
    let (x2, v2) = match mv {
        Move::X => (&x + dx, v.clone()),
        Move::V => (x.clone(), &v + dv),
        Move::Both => (&x + dx, &v + dv),
    };
    PointPair { t, x, v, x2, v2 }
}

fn first_cloud(sampler: &CouplingSampler, index: usize) -> Result<ParticleCloud> {
    ParticleCloud::uniform(sampler.pair(index).xi)
}

/// Largest `(lambda_x, lambda_v)` such that
/// `gap >= lambda_x |x' - x|^2 + lambda_v |v' - v|^2` on every sample:
/// each constant is fitted on moves of its own variable, then both are
/// scaled down until the joint moves are also satisfied.
struct ConvexFit {
    lambda_x: f64,
    lambda_v: f64,
    worst_x: Option<usize>,
    worst_v: Option<usize>,
}

fn fit_convexity(
    sampler: &CouplingSampler,
    samples: usize,
    d: usize,
    gap: impl Fn(usize, &PointPair) -> Result<f64> + Sync + Send,
) -> Result<ConvexFit> {
    let moves = [Move::X, Move::V, Move::Both];
    let vals = par_eval(samples, |k| {
        let mv = moves[k % 3];
        let pp = point_pair(sampler, k, d, mv);
        let g = finite(gap(k, &pp)?, "convexity gap")?;
        Ok(Some((
            mv,
            g,
            pp.dx().norm_squared(),
            pp.dv().norm_squared(),
        )))
    })?;
    let ratio = |mv: Move| -> Vec<Option<(f64, ())>> {
        vals.iter()
            .map(|e| match e {
                Some((m, g, dx, dv)) if *m == mv => {
                    let den = if mv == Move::X { *dx } else { *dv };
                    (den > DEGENERATE).then(|| (g / den, ()))
                }
                _ => None,
            })
            .collect()
    };
    let bx = pick(&ratio(Move::X), false);
    let bv = pick(&ratio(Move::V), false);
    let (lx, lv) = match (bx, bv) {
        (Some((_, a, _)), Some((_, b, _))) => (a, b),
        _ => {
            return Err(Error::InvalidInput(
                "too few nondegenerate convexity samples".into(),
            ))
        }
    };
    let joint: Vec<Option<(f64, ())>> = vals
        .iter()
        .map(|e| match e {
            Some((Move::Both, g, dx, dv)) => {
                let den = lx.max(0.0) * dx + lv.max(0.0) * dv;
                (den > DEGENERATE).then(|| (g / den, ()))
            }
            _ => None,
        })
        .collect();
    let worst_joint = pick(&joint, false).map(|(k, r, _)| (k, r));
    let rho = worst_joint.map_or(1.0, |(_, r)| r.min(1.0));
    let shrink = |l: f64| if l < 0.0 { l } else { l * rho };
    // a joint move that breaks plain convexity is the better witness
    let blame = |l: f64, axis: usize| match worst_joint {
        Some((k, r)) if r < 0.0 && l >= 0.0 => Some(k),
        _ => Some(axis),
    };
    Ok(ConvexFit {
        lambda_x: shrink(lx),
        lambda_v: shrink(lv),
        worst_x: blame(lx, bx.map_or(0, |b| b.0)),
        worst_v: blame(lv, bv.map_or(0, |b| b.0)),
    })
}

/// `(index, ratio, (lhs, distance^2))` of the smallest ratio.
type ScanMin = (usize, f64, (f64, f64));

/// `E[(grad'(xi'_i) - grad(xi_i)) . (xi'_i - xi_i)]` reduced to the smallest
/// ratio over `E|xi' - xi|^2`: `(index, ratio, lhs, distance^2)`.
fn quasi_scan(
    sampler: &CouplingSampler,
    samples: usize,
    lhs: impl Fn(&CoupledPair, &ParticleCloud, &ParticleCloud) -> Result<f64> + Sync + Send,
) -> Result<Option<ScanMin>> {
    let vals = par_eval(samples, |k| {
        let pair = sampler.pair(k);
        let d2 = pair.distance_squared();
        if d2 <= DEGENERATE {
            return Ok(None);
        }
        let (m, m2) = pair.clouds()?;
        let l = finite(lhs(&pair, &m, &m2)?, "monotonicity pairing")?;
        Ok(Some((l / d2, (l, d2))))
    })?;
    Ok(pick(&vals, false))
}

fn pairing(pair: &CoupledPair, mut grad: impl FnMut(usize, bool) -> Vector) -> f64 {
    let n = pair.xi.len();
    (0..n)
        .map(|i| (grad(i, true) - grad(i, false)).dot(&(&pair.xi_prime[i] - &pair.xi[i])))
        .sum::<f64>()
        / n as f64
}

/// Displacement quasi-monotonicity of a gradient field:
/// `E[(G(xi', L(xi')) - G(xi, L(xi))) . (xi' - xi)] >= -lambda_m E|xi' - xi|^2`.
pub fn check_displacement_quasi(
    grad: &GradientFn,
    lambda_m: f64,
    sampler: &CouplingSampler,
    samples: usize,
) -> Result<CheckReport> {
    sampler.validate()?;
    if samples == 0 || !lambda_m.is_finite() {
        return Err(Error::InvalidInput(
            "need samples >= 1 and finite lambda_m".into(),
        ));
    }
    let scan = quasi_scan(sampler, samples, |pair, m, m2| {
        Ok(pairing(pair, |i, moved| {
            if moved {
                grad(&pair.xi_prime[i], m2)
            } else {
                grad(&pair.xi[i], m)
            }
        }))
    })?;
    let mut report = CheckReport::new("displacement_quasi", samples);
    let Some((k, ratio, (lhs, d2))) = scan else {
        return Ok(report);
    };
    let margin = ratio + lambda_m;
    report.set_margin("min_normalized_margin", margin);
    report.set_margin("lambda_m_hat", -ratio);
    let ok = margin >= -TOLERANCE;
    let witness = (!ok).then(|| {
        pair_witness(
            "coupling violating displacement quasi-monotonicity",
            margin,
            &sampler.pair(k),
        )
        .with("lhs", lhs)
        .with("lambda_m", lambda_m)
        .with("violation", lhs + lambda_m * d2)
    });
    Ok(report.conclude(ok, witness))
}

/// Re-evaluate a displacement witness: returns `lhs + lambda_m E|xi' - xi|^2`.
pub fn replay_displacement_witness(
    grad: &GradientFn,
    lambda_m: f64,
    witness: &Witness,
) -> Result<f64> {
    let to_points = |key: &str| -> Result<Vec<Vector>> {
        let rows = witness
            .clouds
            .get(key)
            .ok_or_else(|| Error::InvalidInput(format!("witness has no cloud {key}")))?;
        Ok(rows.iter().map(|r| Vector::from_row_slice(r)).collect())
    };
    let pair = CoupledPair {
        index: 0,
        scheme: super::sampler::PairScheme::Independent,
        xi: to_points("xi")?,
        xi_prime: to_points("xi_prime")?,
    };
    let (m, m2) = pair.clouds()?;
    let lhs = pairing(&pair, |i, moved| {
        if moved {
            grad(&pair.xi_prime[i], &m2)
        } else {
            grad(&pair.xi[i], &m)
        }
    });
    Ok(lhs + lambda_m * pair.distance_squared())
}

fn split_of(spec: &ModelSpec) -> Result<&FSplit> {
    spec.f_split
        .as_ref()
        .ok_or(Error::MissingDerivative("f_split"))
}

/// Largest ratio `|grad(t, x, m', v) - grad(t, x, m, v)| / W2(m, m')`.
fn measure_lipschitz(
    sampler: &CouplingSampler,
    samples: usize,
    d: usize,
    grad: impl Fn(f64, &Vector, &ParticleCloud, &Vector) -> Vector + Sync + Send,
) -> Result<(f64, Option<usize>)> {
    let vals = par_eval(samples, |k| {
        let pair = sampler.pair(k);
        let (m, m2) = pair.clouds()?;
        let w = wasserstein2(&m, &m2)?;
        if w <= DEGENERATE {
            return Ok(None);
        }
        let pp = point_pair(sampler, k, d, Move::X);
        let r = (grad(pp.t, &pp.x, &m2, &pp.v) - grad(pp.t, &pp.x, &m, &pp.v)).norm() / w;
        Ok(Some((finite(r, "measure Lipschitz ratio")?, ())))
    })?;
    Ok(pick(&vals, true).map_or((0.0, None), |(k, r, _)| (r, Some(k))))
}

fn measure_witness(
    sampler: &CouplingSampler,
    d: usize,
    k: usize,
    description: &str,
    margin: f64,
) -> Witness {
    moved_witness(sampler, d, k, Move::X, description, margin)
}

fn moved_witness(
    sampler: &CouplingSampler,
    d: usize,
    k: usize,
    mv: Move,
    description: &str,
    margin: f64,
) -> Witness {
    let pp = point_pair(sampler, k, d, mv);
    let pair = sampler.pair(k);
    let (a, b) = pair.rows();
    pp.witness(description, margin)
        .with("pair_index", k as f64)
        .with_cloud("m", a)
        .with_cloud("m_prime", b)
}

fn point_sample_witness(
    sampler: &CouplingSampler,
    d: usize,
    k: usize,
    description: &str,
    margin: f64,
) -> Witness {
    let moves = [Move::X, Move::V, Move::Both];
    let pp = point_pair(sampler, k, d, moves[k % 3]);
    pp.witness(description, margin)
        .with("sample_index", k as f64)
        .with_cloud("m", rows(&sampler.pair(k).xi))
}

fn first_failure(
    candidates: Vec<(bool, Box<dyn FnOnce() -> Witness + '_>)>,
) -> (bool, Option<Witness>) {
    for (ok, make) in candidates {
        if !ok {
            return (false, Some(make()));
        }
    }
    (true, None)
}

type WitnessThunk<'a> = Box<dyn FnOnce() -> Witness + 'a>;

/// Separable running cost `f = f0(t, x, m) + f1(t, x, v)`: strong convexity
/// of `f1` and displacement quasi-monotonicity of `f0` with `lambda_m <= 2 lambda_x`.
pub fn check_condition_separable(
    spec: &ModelSpec,
    sampler: &CouplingSampler,
    samples: usize,
) -> Result<CheckReport> {
    let split = split_of(spec)?;
    require_samples(sampler, samples, spec.n)?;
    let d = spec.d;

    // structural assumptions: f0 free of v, f1 free of m
    let dev = par_eval(samples, |k| {
        let pp = point_pair(sampler, k, d, Move::V);
        let (m, m2) = sampler.pair(k).clouds()?;
        let a = (split.f0)(pp.t, &pp.x, &m, &pp.v);
        let b = (split.f0)(pp.t, &pp.x, &m, &pp.v2);
        let c = (split.f1)(pp.t, &pp.x, &m, &pp.v);
        let e = (split.f1)(pp.t, &pp.x, &m2, &pp.v);
        let d0 = finite((a - b).abs() / (1.0 + a.abs()), "f0")?;
        let d1 = finite((c - e).abs() / (1.0 + c.abs()), "f1")?;
        Ok(Some((d0.max(d1), (d0, d1))))
    })?;
    let (dev_k, _, (dev0, dev1)) = pick(&dev, true).expect("samples >= 4");

    let fit = fit_convexity(sampler, samples, d, |k, pp| {
        let m = first_cloud(sampler, k)?;
        let base = (split.f1)(pp.t, &pp.x, &m, &pp.v);
        let lin = (split.dx_f1)(pp.t, &pp.x, &m, &pp.v).dot(&pp.dx())
            + (split.dv_f1)(pp.t, &pp.x, &m, &pp.v).dot(&pp.dv());
        Ok((split.f1)(pp.t, &pp.x2, &m, &pp.v2) - base - lin)
    })?;

    let frozen = |k: usize| {
        let mut rng = sampler.rng(k, "frozen_control");
        (rng.random::<f64>(), normal(&mut rng, d))
    };
    let scan = quasi_scan(sampler, samples, |pair, m, m2| {
        let (t, v) = frozen(pair.index);
        Ok(pairing(pair, |i, moved| {
            if moved {
                (split.dx_f0)(t, &pair.xi_prime[i], m2, &v)
            } else {
                (split.dx_f0)(t, &pair.xi[i], m, &v)
            }
        }))
    })?;
    let lambda_m = scan.map_or(0.0, |(_, r, _)| -r);
    let margin = 2.0 * fit.lambda_x - lambda_m;

    let mut report = CheckReport::new("separable", samples);
    report.set_margin("lambda_x_hat", fit.lambda_x);
    report.set_margin("lambda_v_hat", fit.lambda_v);
    report.set_margin("lambda_m_hat", lambda_m);
    report.set_margin("f0_v_dependence", dev0);
    report.set_margin("f1_m_dependence", dev1);
    report.set_margin("margin", margin);

    let candidates: Vec<(bool, WitnessThunk)> = vec![
        (
            dev0.max(dev1) <= 1e-10,
            Box::new(|| {
                let desc = if dev0 >= dev1 {
                    "f0 depends on v"
                } else {
                    "f1 depends on m"
                };
                point_sample_witness(sampler, d, dev_k, desc, -dev0.max(dev1))
                    .with_cloud("m_prime", rows(&sampler.pair(dev_k).xi_prime))
            }),
        ),
        (
            fit.lambda_v > 0.0,
            Box::new(|| {
                let k = fit.worst_v.expect("fitted");
                point_sample_witness(sampler, d, k, "f1 not strongly convex in v", fit.lambda_v)
            }),
        ),
        (
            margin >= -TOLERANCE,
            Box::new(|| {
                let (k, _, (lhs, _)) = scan.expect("negative margin needs a pair");
                let (t, v) = frozen(k);
                with_vector(
                    pair_witness(
                        "f0 displacement quasi-monotonicity exceeds 2 lambda_x",
                        margin,
                        &sampler.pair(k),
                    ),
                    "v",
                    &v,
                )
                .with("t", t)
                .with("lhs", lhs)
                .with("lambda_x_hat", fit.lambda_x)
            }),
        ),
    ];
    let (ok, witness) = first_failure(candidates);
    Ok(report.conclude(ok, witness))
}

fn cost_convexity(
    sampler: &CouplingSampler,
    samples: usize,
    d: usize,
    f: &(dyn Fn(f64, &Vector, &ParticleCloud, &Vector) -> f64 + Sync),
    dx_f: &(dyn Fn(f64, &Vector, &ParticleCloud, &Vector) -> Vector + Sync),
    dv_f: &(dyn Fn(f64, &Vector, &ParticleCloud, &Vector) -> Vector + Sync),
) -> Result<ConvexFit> {
    fit_convexity(sampler, samples, d, |k, pp| {
        let m = first_cloud(sampler, k)?;
        let lin =
            dx_f(pp.t, &pp.x, &m, &pp.v).dot(&pp.dx()) + dv_f(pp.t, &pp.x, &m, &pp.v).dot(&pp.dv());
        Ok(f(pp.t, &pp.x2, &m, &pp.v2) - f(pp.t, &pp.x, &m, &pp.v) - lin)
    })
}

/// Strong convexity with a small mean field effect:
/// `lambda_x >= L_v^2 / (8 lambda_v) + L_x / 2`, all four constants estimated.
pub fn check_small_mean_field_effect(
    spec: &ModelSpec,
    sampler: &CouplingSampler,
    samples: usize,
) -> Result<CheckReport> {
    require_samples(sampler, samples, spec.n)?;
    let d = spec.d;
    let (lx_cap, kx) =
        measure_lipschitz(sampler, samples, d, |t, x, m, v| (spec.dx_f)(t, x, m, v))?;
    let (lv_cap, kv) =
        measure_lipschitz(sampler, samples, d, |t, x, m, v| (spec.dv_f)(t, x, m, v))?;
    let fit = cost_convexity(sampler, samples, d, &*spec.f, &*spec.dx_f, &*spec.dv_f)?;
    let required = lv_cap * lv_cap / (8.0 * fit.lambda_v) + lx_cap / 2.0;
    let margin = fit.lambda_x - required;

    let mut report = CheckReport::new("small_mean_field", samples);
    report.set_margin("L_x_hat", lx_cap);
    report.set_margin("L_v_hat", lv_cap);
    report.set_margin("lambda_x_hat", fit.lambda_x);
    report.set_margin("lambda_v_hat", fit.lambda_v);
    report.set_margin("margin", margin);
    let candidates: Vec<(bool, WitnessThunk)> = vec![
        (
            fit.lambda_v > 0.0,
            Box::new(|| {
                point_sample_witness(
                    sampler,
                    d,
                    fit.worst_v.expect("fitted"),
                    "f not strongly convex in v",
                    fit.lambda_v,
                )
            }),
        ),
        (
            margin >= -TOLERANCE,
            Box::new(|| {
                // the measure pair driving the larger share of the requirement
                let k = if lv_cap * lv_cap / (8.0 * fit.lambda_v) >= lx_cap / 2.0 {
                    kv
                } else {
                    kx
                };
                let w = match k {
                    Some(k) => measure_witness(
                        sampler,
                        d,
                        k,
                        "mean field dependence exceeds convexity in x",
                        margin,
                    ),
                    None => point_sample_witness(
                        sampler,
                        d,
                        fit.worst_x.expect("fitted"),
                        "convexity in x too weak",
                        margin,
                    ),
                };
                w.with("L_x_hat", lx_cap)
                    .with("L_v_hat", lv_cap)
                    .with("lambda_x_hat", fit.lambda_x)
                    .with("lambda_v_hat", fit.lambda_v)
            }),
        ),
    ];
    let (ok, witness) = first_failure(candidates);
    Ok(report.conclude(ok, witness))
}

/// `f = f0 + f1` with `f1` strongly convex with small mean field effect and
/// `f0` convex in v, displacement quasi-monotone at every frozen random
/// control `V`, and `l_x`-Lipschitz in the cross arguments; then
/// `2 lambda_x - lambda_m >= L_x + (L_v + 3 l_x)^2 / (4 lambda_v)`.
pub fn check_condition_split(
    spec: &ModelSpec,
    sampler: &CouplingSampler,
    samples: usize,
) -> Result<CheckReport> {
    let split = split_of(spec)?;
    require_samples(sampler, samples, spec.n)?;
    let (n, d) = (spec.n, spec.d);

    let (lx_cap, _) =
        measure_lipschitz(sampler, samples, d, |t, x, m, v| (split.dx_f1)(t, x, m, v))?;
    let (lv_cap, kv) =
        measure_lipschitz(sampler, samples, d, |t, x, m, v| (split.dv_f1)(t, x, m, v))?;
    let fit = cost_convexity(
        sampler,
        samples,
        d,
        &*split.f1,
        &*split.dx_f1,
        &*split.dv_f1,
    )?;

    // V independent of xi on even samples, a function of xi on odd ones
    let frozen = |pair: &CoupledPair| -> (f64, Vec<Vector>) {
        let mut rng = sampler.rng(pair.index, "frozen_control");
        let t = rng.random::<f64>();
        let v = if pair.index.is_multiple_of(2) {
            pair.xi.iter().map(|_| normal(&mut rng, d)).collect()
        } else {
            pair.xi
                .iter()
                .map(|x| Vector::from_fn(d, |j, _| x[j % n].sin() + x[j % n]))
                .collect()
        };
        (t, v)
    };
    let scan = quasi_scan(sampler, samples, |pair, m, m2| {
        let (t, v) = frozen(pair);
        Ok(pairing(pair, |i, moved| {
            if moved {
                (split.dx_f0)(t, &pair.xi_prime[i], m2, &v[i])
            } else {
                (split.dx_f0)(t, &pair.xi[i], m, &v[i])
            }
        }))
    })?;
    let lambda_m = scan.map_or(0.0, |(_, r, _)| -r);

    // cross Lipschitz constant and convexity of f0 in v
    let cross = par_eval(samples, |k| {
        let pair = sampler.pair(k);
        let (m, m2) = pair.clouds()?;
        let pp = point_pair(sampler, k, d, Move::Both);
        let dv = pp.dv();
        let dvn = dv.norm();
        let r1 = if dvn > DEGENERATE {
            ((split.dx_f0)(pp.t, &pp.x, &m, &pp.v2) - (split.dx_f0)(pp.t, &pp.x, &m, &pp.v)).norm()
                / dvn
        } else {
            0.0
        };
        let den = pp.dx().norm() + wasserstein2(&m, &m2)?;
        let r2 = if den > DEGENERATE {
            ((split.dv_f0)(pp.t, &pp.x2, &m2, &pp.v) - (split.dv_f0)(pp.t, &pp.x, &m, &pp.v)).norm()
                / den
        } else {
            0.0
        };
        let conv = if dvn > DEGENERATE {
            ((split.f0)(pp.t, &pp.x, &m, &pp.v2)
                - (split.f0)(pp.t, &pp.x, &m, &pp.v)
                - (split.dv_f0)(pp.t, &pp.x, &m, &pp.v).dot(&dv))
                / (dvn * dvn)
        } else {
            0.0
        };
        Ok(Some((
            finite(r1.max(r2), "cross Lipschitz ratio")?,
            finite(conv, "f0 convexity gap")?,
        )))
    })?;
    let (k_lx, l_x, _) = pick(&cross, true).expect("samples >= 4");
    let conv_vals: Vec<Option<(f64, ())>> = cross.iter().map(|c| c.map(|(_, g)| (g, ()))).collect();
    let (k_conv, f0_conv, _) = pick(&conv_vals, false).expect("samples >= 4");

    let rhs = lx_cap + (lv_cap + 3.0 * l_x).powi(2) / (4.0 * fit.lambda_v);
    let margin = 2.0 * fit.lambda_x - lambda_m - rhs;

    let mut report = CheckReport::new("split", samples);
    report.set_margin("L_x_hat", lx_cap);
    report.set_margin("L_v_hat", lv_cap);
    report.set_margin("lambda_x_hat", fit.lambda_x);
    report.set_margin("lambda_v_hat", fit.lambda_v);
    report.set_margin("lambda_m_hat", lambda_m);
    report.set_margin("l_x_hat", l_x);
    report.set_margin("f0_v_convexity_min", f0_conv);
    report.set_margin("margin", margin);
    let candidates: Vec<(bool, WitnessThunk)> = vec![
        (
            fit.lambda_v > 0.0,
            Box::new(|| {
                point_sample_witness(
                    sampler,
                    d,
                    fit.worst_v.expect("fitted"),
                    "f1 not strongly convex in v",
                    fit.lambda_v,
                )
            }),
        ),
        (
            f0_conv >= -TOLERANCE,
            Box::new(|| {
                let pp = point_pair(sampler, k_conv, d, Move::Both);
                pp.witness("f0 not convex in v", f0_conv)
                    .with("sample_index", k_conv as f64)
                    .with_cloud("m", rows(&sampler.pair(k_conv).xi))
            }),
        ),
        (
            margin >= -TOLERANCE,
            Box::new(|| {
                let w = match scan {
                    Some((k, _, (lhs, _))) if lambda_m > 0.0 => pair_witness(
                        "parameter inequality violated; worst f0 coupling",
                        margin,
                        &sampler.pair(k),
                    )
                    .with("lhs", lhs),
                    _ => {
                        let k = kv.unwrap_or(k_lx);
                        let pp = point_pair(sampler, k_lx, d, Move::Both);
                        measure_witness(sampler, d, k, "parameter inequality violated", margin)
                            .with("lx_sample_index", k_lx as f64)
                            .with("lx_dv_norm", pp.dv().norm())
                    }
                };
                w.with("L_x_hat", lx_cap)
                    .with("L_v_hat", lv_cap)
                    .with("lambda_x_hat", fit.lambda_x)
                    .with("lambda_v_hat", fit.lambda_v)
                    .with("lambda_m_hat", lambda_m)
                    .with("l_x_hat", l_x)
            }),
        ),
    ];
    let (ok, witness) = first_failure(candidates);
    Ok(report.conclude(ok, witness))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum LiftMove {
    X,
    V,
    Law,
    All,
}

/// Lifted convexity of the costs used by the control problem:
/// `g(x', L(xi')) - g(x, L(xi)) >= D_x g . (x' - x) + E[D_y dg/dnu(xi) . (xi' - xi)]`
/// and the analogous inequality for `f` with
/// `+ lambda_v |v' - v|^2 + lambda_x |x' - x|^2 + lambda_m E|xi' - xi|^2`.
pub fn check_mftc_convexity(
    spec: &ModelSpec,
    sampler: &CouplingSampler,
    samples: usize,
) -> Result<CheckReport> {
    require_samples(sampler, samples, spec.n)?;
    let dfdnu = spec
        .dy_dfdnu
        .as_ref()
        .ok_or(Error::MissingDerivative("Dy_dfdnu"))?;
    let dgdnu = spec
        .dy_dgdnu
        .as_ref()
        .ok_or(Error::MissingDerivative("Dy_dgdnu"))?;
    let d = spec.d;
    let moves = [LiftMove::X, LiftMove::V, LiftMove::Law, LiftMove::All];

    let setup = |k: usize| -> Result<(PointPair, CoupledPair, ParticleCloud, ParticleCloud)> {
        let mv = moves[k % 4];
        let mut pp = point_pair(sampler, k, d, Move::Both);
        if matches!(mv, LiftMove::V | LiftMove::Law) {
            pp.x2 = pp.x.clone();
        }
        if matches!(mv, LiftMove::X | LiftMove::Law) {
            pp.v2 = pp.v.clone();
        }
        let mut pair = sampler.pair(k);
        if matches!(mv, LiftMove::X | LiftMove::V) {
            pair.xi_prime = pair.xi.clone();
        }
        let (m, m2) = pair.clouds()?;
        Ok((pp, pair, m, m2))
    };

    let vals = par_eval(samples, |k| {
        let (pp, pair, m, m2) = setup(k)?;
        let (t, x, v) = (pp.t, &pp.x, &pp.v);
        let n_p = pair.xi.len() as f64;
        let lifted_f = pair
            .xi
            .iter()
            .zip(&pair.xi_prime)
            .map(|(a, b)| dfdnu(t, x, &m, v, a).dot(&(b - a)))
            .sum::<f64>()
            / n_p;
        let gap_f = (spec.f)(t, &pp.x2, &m2, &pp.v2)
            - (spec.f)(t, x, &m, v)
            - (spec.dx_f)(t, x, &m, v).dot(&pp.dx())
            - (spec.dv_f)(t, x, &m, v).dot(&pp.dv())
            - lifted_f;
        let lifted_g = pair
            .xi
            .iter()
            .zip(&pair.xi_prime)
            .map(|(a, b)| dgdnu(x, &m, a).dot(&(b - a)))
            .sum::<f64>()
            / n_p;
        let gap_g =
            (spec.g)(&pp.x2, &m2) - (spec.g)(x, &m) - (spec.dx_g)(x, &m).dot(&pp.dx()) - lifted_g;
        let sizes = [
            pp.dx().norm_squared(),
            pp.dv().norm_squared(),
            pair.distance_squared(),
        ];
        Ok(Some((
            finite(gap_f, "f convexity gap")?,
            finite(gap_g, "g convexity gap")?,
            sizes,
        )))
    })?;

    let axis = |mv: LiftMove, slot: usize| -> Option<(usize, f64, ())> {
        let r: Vec<Option<(f64, ())>> = vals
            .iter()
            .enumerate()
            .map(|(k, e)| match e {
                Some((gf, _, s)) if moves[k % 4] == mv && s[slot] > DEGENERATE => {
                    Some((gf / s[slot], ()))
                }
                _ => None,
            })
            .collect();
        pick(&r, false)
    };
    let (bx, bv, bm) = (
        axis(LiftMove::X, 0),
        axis(LiftMove::V, 1),
        axis(LiftMove::Law, 2),
    );
    let (Some(bx), Some(bv), Some(bm)) = (bx, bv, bm) else {
        return Err(Error::InvalidInput(
            "too few nondegenerate convexity samples".into(),
        ));
    };
    let lam = [bx.1, bv.1, bm.1];
    let joint: Vec<Option<(f64, ())>> = vals
        .iter()
        .enumerate()
        .map(|(k, e)| match e {
            Some((gf, _, s)) if moves[k % 4] == LiftMove::All => {
                let den: f64 = (0..3).map(|i| lam[i].max(0.0) * s[i]).sum();
                (den > DEGENERATE).then(|| (gf / den, ()))
            }
            _ => None,
        })
        .collect();
    let worst_joint = pick(&joint, false);
    let rho = worst_joint.map_or(1.0, |(_, r, _)| r.min(1.0));
    let fitted: Vec<f64> = lam
        .iter()
        .map(|&l| if l < 0.0 { l } else { l * rho })
        .collect();
    let g_ratio: Vec<Option<(f64, ())>> = vals
        .iter()
        .map(|e| {
            e.and_then(|(_, gg, s)| {
                let den = s[0] + s[2];
                (den > DEGENERATE).then(|| (gg / den, ()))
            })
        })
        .collect();
    let g_min = pick(&g_ratio, false);

    let mut report = CheckReport::new("mftc_convexity", samples);
    report.set_margin("lambda_x_hat", fitted[0]);
    report.set_margin("lambda_v_hat", fitted[1]);
    report.set_margin("lambda_m_hat", fitted[2]);
    report.set_margin("g_gap_min", g_min.map_or(0.0, |g| g.1));

    let sample_witness = |k: usize, desc: &str, margin: f64| -> Witness {
        let (pp, pair, _, _) = setup(k).expect("replayed sample");
        let (a, b) = pair.rows();
        pp.witness(desc, margin)
            .with("sample_index", k as f64)
            .with_cloud("xi", a)
            .with_cloud("xi_prime", b)
    };
    let g_ok = g_min.is_none_or(|g| g.1 >= -TOLERANCE);
    let candidates: Vec<(bool, WitnessThunk)> = vec![
        (
            fitted[1] > 0.0,
            Box::new(|| sample_witness(bv.0, "f not strongly convex in v", fitted[1])),
        ),
        (
            fitted[0] >= -TOLERANCE,
            Box::new(|| sample_witness(bx.0, "f not convex in x", fitted[0])),
        ),
        (
            fitted[2] >= -TOLERANCE,
            Box::new(|| sample_witness(bm.0, "f not convex along the law", fitted[2])),
        ),
        (
            g_ok,
            Box::new(|| {
                let g = g_min.expect("checked");
                sample_witness(g.0, "lifted convexity of g violated", g.1)
            }),
        ),
    ];
    let (ok, witness) = first_failure(candidates);
    Ok(report.conclude(ok, witness))
}

/// Generic drift requirements: nondegeneracy `(D_v b)(D_v b)^T >= lambda_b I`,
/// the weighted bound on the variation of `(D_x b, D_v b)` against the declared
/// `L_b` constants, and the closed-form parameter inequalities evaluated on the
/// declared ledger.
pub fn check_generic_drift(
    spec: &ModelSpec,
    sampler: &CouplingSampler,
    samples: usize,
) -> Result<CheckReport> {
    require_samples(sampler, samples, spec.n)?;
    let c = &spec.constants;
    let l = c.value("L")?;
    let lambda_b = c.value("lambda_b")?;
    let declared = [c.value("L_b_x")?, c.value("L_b_v")?, c.value("L_b_m")?];
    let (lambda_x, lambda_m, lambda_v) = (
        c.value("lambda_x")?,
        c.value("lambda_m")?,
        c.value("lambda_v")?,
    );
    let (lx_cap, lv_cap, l_x, l_m) = (
        c.value("L_x")?,
        c.value("L_v")?,
        c.value("l_x")?,
        c.value("l_m")?,
    );
    if !(lambda_b > 0.0 && lambda_v > 0.0) {
        return Err(Error::InvalidInput(
            "lambda_b and lambda_v must be positive".into(),
        ));
    }
    let d = spec.d;
    let jac = |t: f64, x: &Vector, m: &ParticleCloud, v: &Vector| -> Matrix {
        let jx = spec.jac_x_b(t, x, m, v);
        let jv = spec.jac_v_b(t, x, m, v);
        let mut out = Matrix::zeros(spec.n, spec.n + d);
        out.columns_mut(0, spec.n).copy_from(&jx);
        out.columns_mut(spec.n, d).copy_from(&jv);
        out
    };

    let eig = par_eval(samples, |k| {
        let pp = point_pair(sampler, k, d, Move::X);
        let m = first_cloud(sampler, k)?;
        let dvb = spec.jac_v_b(pp.t, &pp.x, &m, &pp.v);
        let e = SymmetricEigen::new(&dvb * dvb.transpose())
            .eigenvalues
            .min();
        Ok(Some((finite(e, "D_v b Gram eigenvalue")?, ())))
    })?;
    let (k_eig, min_eig, _) = pick(&eig, false).expect("samples >= 4");

    // which argument moves: 0 = x, 1 = v, 2 = m
    let quotients = par_eval(samples, |k| {
        let slot = k % 3;
        let pp = point_pair(sampler, k, d, if slot == 1 { Move::V } else { Move::X });
        let pair = sampler.pair(k);
        let (m, m2) = pair.clouds()?;
        let (x2, m2) = match slot {
            0 => (pp.x2.clone(), m.clone()),
            1 => (pp.x.clone(), m.clone()),
            _ => (pp.x.clone(), m2),
        };
        let step = match slot {
            0 => pp.dx().norm(),
            1 => pp.dv().norm(),
            _ => wasserstein2(&m, &m2)?,
        };
        if step <= DEGENERATE {
            return Ok(None);
        }
        let diff = (jac(pp.t, &x2, &m2, &pp.v2) - jac(pp.t, &pp.x, &m, &pp.v)).norm();
        let weight = 1.0
            + pp.x.norm().max(x2.norm())
            + pp.v.norm().max(pp.v2.norm())
            + m.w2_to_origin().max(m2.w2_to_origin());
        Ok(Some((
            finite(diff * weight / step, "drift derivative quotient")?,
            slot,
        )))
    })?;
    let mut estimates = [0.0f64; 3];
    let mut worst_k = [None; 3];
    for slot in 0..3 {
        let r: Vec<Option<(f64, ())>> = quotients
            .iter()
            .map(|q| q.and_then(|(v, s)| (s == slot).then_some((v, ()))))
            .collect();
        if let Some((k, v, _)) = pick(&r, true) {
            estimates[slot] = v;
            worst_k[slot] = Some(k);
        }
    }

    let [lbx, lbv, lbm] = declared;
    let l2 = l * l;
    let lambda_v_margin = lambda_v - 2.0 * l2 * lbv / lambda_b;
    let inner = lv_cap
        + 3.0 * l_x
        + (l2 * (l_m + lbm) * lambda_b + 3.0 * l.powi(3) * lbv * l_m) / (lambda_b * lambda_b);
    let rhs = lx_cap
        + (l2 * (2.0 * l_m + 2.0 * lbx + lbm) * lambda_b + 3.0 * l.powi(3) * (lbx + lbm) * l_m)
            / (lambda_b * lambda_b)
        + inner * inner / (4.0 * lambda_v);
    let mfg_margin = 2.0 * lambda_x - lambda_m - rhs;
    let control_margin = lambda_x + lambda_m - l2 * (lbx + lbm) / lambda_b;

    let mut report = CheckReport::new("generic_drift", samples);
    report.set_margin("min_eig_DvbDvbT", min_eig);
    report.set_margin("L_b_x_hat", estimates[0]);
    report.set_margin("L_b_v_hat", estimates[1]);
    report.set_margin("L_b_m_hat", estimates[2]);
    report.set_margin("lambda_v_margin", lambda_v_margin);
    report.set_margin("mfg_margin", mfg_margin);
    report.set_margin("mftc_margin", control_margin);

    let names = ["L_b_x", "L_b_v", "L_b_m"];
    let mut candidates: Vec<(bool, WitnessThunk)> = vec![(
        min_eig >= lambda_b - TOLERANCE,
        Box::new(|| {
            point_sample_witness(
                sampler,
                d,
                k_eig,
                "(D_v b)(D_v b)^T below lambda_b",
                min_eig - lambda_b,
            )
            .with("lambda_b", lambda_b)
        }),
    )];
    for slot in 0..3 {
        let (est, dec, k) = (estimates[slot], declared[slot], worst_k[slot]);
        candidates.push((
            est <= dec + TOLERANCE,
            Box::new(move || {
                let k = k.expect("estimate came from a sample");
                let mv = if slot == 1 { Move::V } else { Move::X };
                moved_witness(
                    sampler,
                    d,
                    k,
                    mv,
                    &format!("sampled quotient exceeds declared {}", names[slot]),
                    dec - est,
                )
                .with("moved_argument", slot as f64)
                .with("estimate", est)
                .with("declared", dec)
            }),
        ));
    }
    let ledger = |desc: &'static str, margin: f64| -> WitnessThunk {
        Box::new(move || {
            Witness::new(desc, margin)
                .with("L", l)
                .with("lambda_b", lambda_b)
                .with("lambda_v", lambda_v)
                .with("lambda_x", lambda_x)
                .with("lambda_m", lambda_m)
                .with("L_b_x", lbx)
                .with("L_b_v", lbv)
                .with("L_b_m", lbm)
        })
    };
    candidates.push((
        lambda_v_margin > 0.0,
        ledger("lambda_v <= 2 L^2 L_b_v / lambda_b", lambda_v_margin),
    ));
    candidates.push((
        mfg_margin >= -TOLERANCE,
        ledger("generic drift parameter inequality fails", mfg_margin),
    ));
    candidates.push((
        control_margin >= -TOLERANCE,
        ledger(
            "lambda_x + lambda_m < L^2 (L_b_x + L_b_m) / lambda_b",
            control_margin,
        ),
    ));
    let (ok, witness) = first_failure(candidates);
    Ok(report.conclude(ok, witness))
}
