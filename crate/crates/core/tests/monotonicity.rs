use std::sync::Arc;

use meanfield_core::meanfield::assemble_mfg;
use meanfield_core::model::{FSplit, Matrix, Vector};
use meanfield_core::monotonicity::*;
use meanfield_core::{ConstantsLedger, ModelSpec, ParticleCloud, Verdict};

fn mean_of(m: &ParticleCloud) -> Vector {
    m.mean().clone()
}

/// Scalar model with `b = v`, constant volatility and the given costs.
fn scalar_model(
    f: impl Fn(&Vector, &ParticleCloud, &Vector) -> f64 + Send + Sync + 'static,
    dx_f: impl Fn(&Vector, &ParticleCloud, &Vector) -> Vector + Send + Sync + 'static,
    dv_f: impl Fn(&Vector, &ParticleCloud, &Vector) -> Vector + Send + Sync + 'static,
) -> ModelSpec {
    ModelSpec::new(
        "test",
        1,
        1,
        |_, _, _, v| v.clone(),
        |_, _, _, _| Matrix::from_element(1, 1, 0.3),
        move |_, x, m, v| f(x, m, v),
        |x, _| 0.5 * x.norm_squared(),
        move |_, x, m, v| dx_f(x, m, v),
        move |_, x, m, v| dv_f(x, m, v),
        |x, _| x.clone(),
    )
    .with_dx_b(|_, _, _, _| Matrix::zeros(1, 1))
    .with_dv_b(|_, _, _, _| Matrix::identity(1, 1))
}

type Cost = Arc<dyn Fn(f64, &Vector, &ParticleCloud, &Vector) -> f64 + Send + Sync>;
type Grad = Arc<dyn Fn(f64, &Vector, &ParticleCloud, &Vector) -> Vector + Send + Sync>;

fn zero_grad() -> Grad {
    Arc::new(|_, _, _, v: &Vector| Vector::zeros(v.len()))
}

/// f1 = a |x|^2 + b |v|^2
fn quadratic_f1(a: f64, b: f64) -> (Cost, Grad, Grad) {
    (
        Arc::new(move |_, x: &Vector, _: &ParticleCloud, v: &Vector| {
            a * x.norm_squared() + b * v.norm_squared()
        }),
        Arc::new(move |_, x: &Vector, _: &ParticleCloud, _: &Vector| 2.0 * a * x),
        Arc::new(move |_, _: &Vector, _: &ParticleCloud, v: &Vector| 2.0 * b * v),
    )
}

/// f0 = c x . mean(m)
fn mean_f0(c: f64) -> (Cost, Grad, Grad) {
    (
        Arc::new(move |_, x: &Vector, m: &ParticleCloud, _: &Vector| c * x.dot(m.mean())),
        Arc::new(move |_, _: &Vector, m: &ParticleCloud, _: &Vector| c * mean_of(m)),
        zero_grad(),
    )
}

fn split_model(f0: (Cost, Grad, Grad), f1: (Cost, Grad, Grad)) -> ModelSpec {
    let (a0, a1, a2) = (f0.0.clone(), f0.1.clone(), f0.2.clone());
    let (b0, b1, b2) = (f1.0.clone(), f1.1.clone(), f1.2.clone());
    scalar_model(
        move |x, m, v| a0(0.0, x, m, v) + b0(0.0, x, m, v),
        move |x, m, v| a1(0.0, x, m, v) + b1(0.0, x, m, v),
        move |x, m, v| a2(0.0, x, m, v) + b2(0.0, x, m, v),
    )
    .with_f_split(FSplit {
        f0: f0.0,
        f1: f1.0,
        dx_f0: f0.1,
        dv_f0: f0.2,
        dx_f1: f1.1,
        dv_f1: f1.2,
    })
}

fn sampler(seed: u64) -> CouplingSampler {
    CouplingSampler::new(1, seed)
}

fn failed_with_witness(r: &meanfield_core::CheckReport) -> &meanfield_core::Witness {
    assert_eq!(r.verdict, Verdict::Fail, "{r:?}");
    let w = r.witnesses.first().expect("fail carries a witness");
    assert!(w.margin < -1e-8, "witness margin {}", w.margin);
    w
}

#[test]
fn displacement_quadratic_terminal_has_margin_two() {
    let g = |x: &Vector, _: &ParticleCloud| 2.0 * x;
    let s = CouplingSampler::new(2, 3);
    let r = check_displacement_quasi(&g, 0.0, &s, 200).unwrap();
    assert_eq!(r.verdict, Verdict::Pass);
    assert!((r.margin("min_normalized_margin").unwrap() - 2.0).abs() < 1e-12);
}

#[test]
fn displacement_mean_coupling_matches_hand_expansion() {
    let g = |_: &Vector, m: &ParticleCloud| m.mean().clone();
    let s = CouplingSampler::new(2, 4);
    let r = check_displacement_quasi(&g, 0.0, &s, 200).unwrap();
    assert_eq!(r.verdict, Verdict::Pass);
    // margin of pair k is |E[xi' - xi]|^2 / E|xi' - xi|^2
    let oracle = (0..200)
        .map(|k| {
            let p = s.pair(k);
            let n = p.xi.len() as f64;
            let shift: Vector =
                p.xi.iter()
                    .zip(&p.xi_prime)
                    .map(|(a, b)| b - a)
                    .sum::<Vector>()
                    / n;
            shift.norm_squared() / p.distance_squared()
        })
        .fold(f64::INFINITY, f64::min);
    assert!((r.margin("min_normalized_margin").unwrap() - oracle).abs() < 1e-10);
    assert!(oracle >= 0.0);
}

#[test]
fn displacement_negative_mean_coupling_fails_on_shift_and_replays() {
    let g = |_: &Vector, m: &ParticleCloud| -m.mean().clone();
    let s = CouplingSampler::new(1, 5);
    let r = check_displacement_quasi(&g, 0.0, &s, 40).unwrap();
    let w = failed_with_witness(&r);
    // a deterministic shift realizes the extreme ratio -1
    assert_eq!(w.data["scheme"], PairScheme::Shift.code());
    assert!((r.margin("min_normalized_margin").unwrap() + 1.0).abs() < 1e-10);
    let replay = replay_displacement_witness(&g, 0.0, w).unwrap();
    assert!(replay < -1e-8);
    assert!((replay - w.data["violation"]).abs() < 1e-10);

    let r1 = check_displacement_quasi(&g, 1.0, &s, 40).unwrap();
    assert_eq!(r1.verdict, Verdict::Pass);
    assert!((r1.margin("lambda_m_hat").unwrap() - 1.0).abs() < 1e-10);
}

#[test]
fn displacement_margin_only_shrinks_with_more_samples() {
    let g = |x: &Vector, m: &ParticleCloud| 0.5 * x - m.mean();
    let s = CouplingSampler::new(1, 9);
    let mut last = f64::INFINITY;
    for n in [8, 16, 32, 64] {
        let m = check_displacement_quasi(&g, 0.0, &s, n)
            .unwrap()
            .margin("min_normalized_margin")
            .unwrap();
        assert!(m <= last);
        last = m;
    }
}

#[test]
fn separable_pure_quadratic_passes_with_half_constants() {
    let spec = split_model(
        (
            Arc::new(|_, _: &Vector, _: &ParticleCloud, _: &Vector| 0.0),
            zero_grad(),
            zero_grad(),
        ),
        quadratic_f1(0.5, 0.5),
    );
    let r = check_condition_separable(&spec, &sampler(1), 300).unwrap();
    assert_eq!(r.verdict, Verdict::Pass);
    assert!((r.margin("lambda_x_hat").unwrap() - 0.5).abs() < 1e-9);
    assert!((r.margin("lambda_v_hat").unwrap() - 0.5).abs() < 1e-9);
    assert!(r.margin("lambda_m_hat").unwrap().abs() < 1e-12);
}

#[test]
fn separable_weak_mean_coupling_passes() {
    let spec = split_model(mean_f0(-0.3), quadratic_f1(0.5, 0.5));
    let r = check_condition_separable(&spec, &sampler(2), 300).unwrap();
    assert_eq!(r.verdict, Verdict::Pass);
    let lm = r.margin("lambda_m_hat").unwrap();
    assert!(lm <= 0.3 + 1e-10 && lm > 0.29, "{lm}");
}

#[test]
fn separable_strong_mean_coupling_fails() {
    let spec = split_model(mean_f0(-2.0), quadratic_f1(0.5, 0.5));
    let r = check_condition_separable(&spec, &sampler(3), 300).unwrap();
    let w = failed_with_witness(&r);
    assert!((r.margin("lambda_m_hat").unwrap() - 2.0).abs() < 1e-9);
    assert!(w.clouds.contains_key("xi_prime"));
}

#[test]
fn separable_reports_structural_violation() {
    // f0 depending on v breaks the separable form
    let f0: (Cost, Grad, Grad) = (
        Arc::new(|_, _: &Vector, _: &ParticleCloud, v: &Vector| v.norm_squared()),
        zero_grad(),
        Arc::new(|_, _: &Vector, _: &ParticleCloud, v: &Vector| 2.0 * v),
    );
    let spec = split_model(f0, quadratic_f1(0.5, 0.5));
    let r = check_condition_separable(&spec, &sampler(4), 50).unwrap();
    let w = failed_with_witness(&r);
    assert_eq!(w.description, "f0 depends on v");
}

#[test]
fn separable_requires_split() {
    let spec = scalar_model(
        |x, _, _| x[0],
        |_, _, _| Vector::zeros(1),
        |_, _, _| Vector::zeros(1),
    );
    assert!(check_condition_separable(&spec, &sampler(0), 10).is_err());
}

#[test]
fn small_mean_field_example_from_the_literature_passes() {
    let spec = scalar_model(
        |x, m, v| x.norm_squared() + v.norm_squared() + v.dot(m.mean()),
        |x, _, _| 2.0 * x,
        |_, m, v| 2.0 * v + m.mean(),
    );
    let r = check_small_mean_field_effect(&spec, &sampler(6), 400).unwrap();
    assert_eq!(r.verdict, Verdict::Pass);
    assert!(r.margin("L_x_hat").unwrap().abs() < 1e-12);
    let lv = r.margin("L_v_hat").unwrap();
    // |d mean| <= W2, with equality on shift couplings
    assert!(lv <= 1.0 + 1e-9 && lv > 0.99, "{lv}");
    assert!((r.margin("lambda_x_hat").unwrap() - 1.0).abs() < 1e-9);
    assert!((r.margin("lambda_v_hat").unwrap() - 1.0).abs() < 1e-9);
    assert!((r.margin("margin").unwrap() - (1.0 - lv * lv / 8.0)).abs() < 1e-9);
}

#[test]
fn small_mean_field_measure_free_cost_passes() {
    let spec = scalar_model(
        |x, _, v| 0.5 * (x.norm_squared() + v.norm_squared()),
        |x, _, _| x.clone(),
        |_, _, v| v.clone(),
    );
    let r = check_small_mean_field_effect(&spec, &sampler(7), 100).unwrap();
    assert_eq!(r.verdict, Verdict::Pass);
    assert_eq!(r.margin("L_x_hat").unwrap(), 0.0);
    assert_eq!(r.margin("L_v_hat").unwrap(), 0.0);
}

#[test]
fn small_mean_field_strong_coupling_fails() {
    let spec = scalar_model(
        |x, m, v| 0.1 * x.norm_squared() + 0.5 * v.norm_squared() + 3.0 * v.dot(m.mean()),
        |x, _, _| 0.2 * x,
        |_, m, v| v + 3.0 * m.mean(),
    );
    let r = check_small_mean_field_effect(&spec, &sampler(8), 200).unwrap();
    let w = failed_with_witness(&r);
    let lv = r.margin("L_v_hat").unwrap();
    assert!(lv > 2.9 && lv <= 3.0 + 1e-9);
    // recompute the requirement from the witness data
    let req = w.data["L_v_hat"].powi(2) / (8.0 * w.data["lambda_v_hat"]) + w.data["L_x_hat"] / 2.0;
    assert!((w.data["lambda_x_hat"] - req - w.margin).abs() < 1e-9);
    assert!((w.data["lambda_x_hat"] - 0.1).abs() < 1e-9);
}

#[test]
fn split_without_f0_reduces_to_the_small_mean_field_check() {
    let spec = split_model(
        (
            Arc::new(|_, _: &Vector, _: &ParticleCloud, _: &Vector| 0.0),
            zero_grad(),
            zero_grad(),
        ),
        quadratic_f1(1.0, 0.5),
    );
    let a = check_condition_split(&spec, &sampler(10), 120).unwrap();
    let b = check_small_mean_field_effect(&spec, &sampler(10), 120).unwrap();
    assert_eq!(a.verdict, Verdict::Pass);
    assert_eq!(a.margin("lambda_x_hat"), b.margin("lambda_x_hat"));
    assert_eq!(a.margin("l_x_hat").unwrap(), 0.0);
    assert_eq!(a.margin("lambda_m_hat").unwrap(), 0.0);
}

#[test]
fn split_mean_coupled_margin_is_at_least_one_point_eight() {
    let spec = split_model(mean_f0(-0.2), quadratic_f1(1.0, 0.5));
    let r = check_condition_split(&spec, &sampler(11), 300).unwrap();
    assert_eq!(r.verdict, Verdict::Pass);
    let margin = r.margin("margin").unwrap();
    assert!((1.8 - 1e-9..1.82).contains(&margin), "{margin}");
}

#[test]
fn split_clamped_cross_term_fails() {
    let clamp = |v: &Vector| v.map(|c| c.clamp(-1.0, 1.0));
    let f0: (Cost, Grad, Grad) = (
        Arc::new(move |_, x: &Vector, _: &ParticleCloud, v: &Vector| x.dot(&clamp(v))),
        Arc::new(move |_, _: &Vector, _: &ParticleCloud, v: &Vector| clamp(v)),
        Arc::new(|_, x: &Vector, _: &ParticleCloud, v: &Vector| {
            x.zip_map(v, |a, b| if b.abs() < 1.0 { a } else { 0.0 })
        }),
    );
    let spec = split_model(f0, quadratic_f1(0.1, 0.5));
    let r = check_condition_split(&spec, &sampler(12), 300).unwrap();
    failed_with_witness(&r);
    let lx = r.margin("l_x_hat").unwrap();
    assert!(lx <= 1.0 + 1e-9 && lx > 0.5, "{lx}");
}

fn quadratic_control_model(lambda: f64, terminal_sign: f64) -> ModelSpec {
    ModelSpec::new(
        "quadratic_control",
        1,
        1,
        |_, _, _, v| v.clone(),
        |_, _, _, _| Matrix::from_element(1, 1, 0.3),
        move |_, _, _, v| lambda * v.norm_squared(),
        move |x, _| terminal_sign * 0.5 * x.norm_squared(),
        |_, x, _, _| Vector::zeros(x.len()),
        move |_, _, _, v| 2.0 * lambda * v,
        move |x, _| terminal_sign * x,
    )
    .with_dx_b(|_, _, _, _| Matrix::zeros(1, 1))
    .with_dv_b(|_, _, _, _| Matrix::identity(1, 1))
    .with_dx_sigma(|_, _, _, _| vec![Matrix::zeros(1, 1)])
    .with_dvv_f(move |_, _, _, _| Matrix::identity(1, 1) * (2.0 * lambda))
    .with_constants(ConstantsLedger {
        l: Some(2.0 * lambda),
        lambda: Some(lambda),
        lambda_v: Some(lambda),
        ..Default::default()
    })
}

#[test]
fn beta_fit_recovers_twice_the_control_convexity() {
    for lambda in [0.5, 1.0] {
        let asm = assemble_mfg(&quadratic_control_model(lambda, 1.0)).unwrap();
        let r = check_beta_monotonicity(&asm, 1, &sampler(13).with_cloud_size(16), 400).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        let l = r.margin("Lambda_beta_hat").unwrap();
        assert!((l - 2.0 * lambda).abs() < 1e-6 * lambda, "{l}");
        assert!(r.margin("Gamma_beta_hat").unwrap() <= 1e-6);
    }
}

#[test]
fn beta_terms_vanish_on_identical_tuples() {
    let asm = assemble_mfg(&quadratic_control_model(1.0, 1.0)).unwrap();
    let mut t = sample_tuple(&sampler(14), 1, 0);
    t.x2 = t.x.clone();
    t.p2 = t.p.clone();
    t.q2 = t.q.clone();
    let terms = t.terms(&asm).unwrap();
    assert_eq!((terms.lhs, terms.beta, terms.state), (0.0, 0.0, 0.0));
    assert_eq!(t.terminal_pairing(&asm).unwrap(), 0.0);
}

#[test]
fn beta_check_flags_concave_terminal_cost() {
    let asm = assemble_mfg(&quadratic_control_model(1.0, -1.0)).unwrap();
    let s = sampler(15).with_cloud_size(16);
    let r = check_beta_monotonicity(&asm, 1, &s, 40).unwrap();
    let w = failed_with_witness(&r);
    // E[(G(X') - G(X)) . (X' - X)] = -E|X' - X|^2
    let rows = |k: &str| -> Vec<f64> { w.clouds[k].iter().map(|r| r[0]).collect() };
    let (x, x2) = (rows("x"), rows("x_prime"));
    let d2 = x.iter().zip(&x2).map(|(a, b)| (b - a).powi(2)).sum::<f64>() / x.len() as f64;
    let pairing = x
        .iter()
        .zip(&x2)
        .map(|(a, b)| (-b + a) * (b - a))
        .sum::<f64>()
        / x.len() as f64;
    assert!((pairing / d2 - w.margin).abs() < 1e-12);
    assert!((w.margin + 1.0).abs() < 1e-12);
}

#[test]
fn beta_fit_is_pareto_extreme_on_hand_terms() {
    let t = |lhs, beta, state| Some(BetaTerms { lhs, beta, state });
    // Gamma must cover 1/2; then Lambda = min((0.5 * 2 - 0) / 1, (0.5 * 4 - 1) / 0.5)
    let (l, g, k) = fit_lambda_gamma(&[t(0.0, 1.0, 2.0), t(1.0, 0.5, 4.0), t(1.0, 0.0, 2.0)]);
    assert_eq!(g, 0.5);
    assert_eq!(l, 1.0);
    assert_eq!(k, Some(0));
}

fn mftc_model(g_mean: bool, v_sign: f64) -> ModelSpec {
    let spec = ModelSpec::new(
        "mftc",
        1,
        1,
        |_, _, _, v| v.clone(),
        |_, _, _, _| Matrix::from_element(1, 1, 0.3),
        move |_, x, _, v| 0.5 * x.norm_squared() + v_sign * 0.5 * v.norm_squared(),
        move |x, m| {
            if g_mean {
                0.5 * m.mean().norm_squared()
            } else {
                0.5 * x.norm_squared()
            }
        },
        |_, x, _, _| x.clone(),
        move |_, _, _, v| v_sign * v,
        move |x, _| {
            if g_mean {
                Vector::zeros(x.len())
            } else {
                x.clone()
            }
        },
    )
    .with_dy_dfdnu(|_, x, _, _, _| Vector::zeros(x.len()));
    if g_mean {
        spec.with_dy_dgdnu(|_, m, _| m.mean().clone())
    } else {
        spec.with_dy_dgdnu(|x, _, _| Vector::zeros(x.len()))
    }
}

#[test]
fn mftc_quadratic_terminal_passes() {
    let r = check_mftc_convexity(&mftc_model(false, 1.0), &sampler(16), 200).unwrap();
    assert_eq!(r.verdict, Verdict::Pass);
    assert!((r.margin("lambda_v_hat").unwrap() - 0.5).abs() < 1e-9);
}

#[test]
fn mftc_mean_square_terminal_gap_matches_hand_expansion() {
    let s = sampler(17);
    let r = check_mftc_convexity(&mftc_model(true, 1.0), &s, 200).unwrap();
    assert_eq!(r.verdict, Verdict::Pass);
    assert!(r.margin("g_gap_min").unwrap() >= 0.0);
    // on pure law moves the gap is 1/2 |E[xi' - xi]|^2 and x is fixed
    let oracle = (0..200)
        .filter(|k| k % 4 == 2)
        .map(|k| {
            let p = s.pair(k);
            let n = p.xi.len() as f64;
            let shift: Vector =
                p.xi.iter()
                    .zip(&p.xi_prime)
                    .map(|(a, b)| b - a)
                    .sum::<Vector>()
                    / n;
            0.5 * shift.norm_squared() / p.distance_squared()
        })
        .fold(f64::INFINITY, f64::min);
    assert!(r.margin("g_gap_min").unwrap() <= oracle + 1e-12);
}

#[test]
fn mftc_concave_control_cost_fails() {
    let r = check_mftc_convexity(&mftc_model(false, -1.0), &sampler(18), 200).unwrap();
    let w = failed_with_witness(&r);
    assert!(r.margin("lambda_v_hat").unwrap() < 0.0);
    assert_eq!(w.description, "f not strongly convex in v");
    assert!(check_mftc_convexity(
        &scalar_model(|_, _, _| 0.0, |x, _, _| x * 0.0, |_, _, v| v * 0.0),
        &sampler(0),
        10
    )
    .is_err());
}

fn drift_model(
    b: impl Fn(&Vector) -> Vector + Send + Sync + 'static,
    dv_b: impl Fn(&Vector) -> Matrix + Send + Sync + 'static,
    lambda_b: f64,
    l_b_v: f64,
) -> ModelSpec {
    ModelSpec::new(
        "drift",
        1,
        1,
        move |_, _, _, v| b(v),
        |_, _, _, _| Matrix::from_element(1, 1, 0.3),
        |_, x, _, v| 0.5 * (x.norm_squared() + v.norm_squared()),
        |x, _| 0.5 * x.norm_squared(),
        |_, x, _, _| x.clone(),
        |_, _, _, v| v.clone(),
        |x, _| x.clone(),
    )
    .with_dx_b(|_, _, _, _| Matrix::zeros(1, 1))
    .with_dv_b(move |_, _, _, v| dv_b(v))
    .with_constants(ConstantsLedger {
        l: Some(1.0),
        lambda: Some(0.5),
        lambda_x: Some(0.5),
        lambda_v: Some(0.5),
        lambda_m: Some(0.0),
        l_x_cap: Some(0.0),
        l_v_cap: Some(0.0),
        l_x: Some(0.0),
        l_m: Some(0.0),
        l_g: Some(0.0),
        l_b_x: Some(0.0),
        l_b_v: Some(l_b_v),
        l_b_m: Some(0.0),
        lambda_b: Some(lambda_b),
    })
}

#[test]
fn linear_drift_reduces_to_the_split_form() {
    let r = check_generic_drift(
        &drift_model(|v| v.clone(), |_| Matrix::identity(1, 1), 1.0, 0.0),
        &sampler(19),
        90,
    )
    .unwrap();
    assert_eq!(r.verdict, Verdict::Pass);
    assert!((r.margin("min_eig_DvbDvbT").unwrap() - 1.0).abs() < 1e-12);
    for k in ["L_b_x_hat", "L_b_v_hat", "L_b_m_hat"] {
        assert_eq!(r.margin(k).unwrap(), 0.0);
    }
    // with vanishing L_b the inequality is 2 lambda_x - lambda_m >= L_x + (L_v + 3 l_x)^2 / (4 lambda_v)
    assert!((r.margin("mfg_margin").unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn doubled_drift_has_eigenvalue_four() {
    let r = check_generic_drift(
        &drift_model(|v| 2.0 * v, |_| Matrix::identity(1, 1) * 2.0, 4.0, 0.0),
        &sampler(20),
        60,
    )
    .unwrap();
    assert_eq!(r.verdict, Verdict::Pass);
    assert!((r.margin("min_eig_DvbDvbT").unwrap() - 4.0).abs() < 1e-12);
}

#[test]
fn tanh_drift_quotient_witness_replays() {
    let sech2 = |v: f64| 1.0 / v.cosh().powi(2);
    let spec = drift_model(
        |v| v.map(|c| c + 0.1 * c.tanh()),
        move |v| Matrix::from_element(1, 1, 1.0 + 0.1 * sech2(v[0])),
        1.0,
        0.2,
    );
    let r = check_generic_drift(&spec, &sampler(21), 300).unwrap();
    assert!(r.margin("min_eig_DvbDvbT").unwrap() >= 1.0);
    let est = r.margin("L_b_v_hat").unwrap();
    assert!(est > 0.0);
    if r.verdict == Verdict::Fail {
        let w = &r.witnesses[0];
        assert_eq!(w.data["moved_argument"], 1.0);
        // weighted quotient recomputed from the analytic derivative
        let (x, v, v2) = (w.data["x[0]"], w.data["v[0]"], w.data["v_prime[0]"]);
        let m: Vec<f64> = w.clouds["m"].iter().map(|r| r[0]).collect();
        let w2 = (m.iter().map(|c| c * c).sum::<f64>() / m.len() as f64).sqrt();
        let weight = 1.0 + x.abs() + v.abs().max(v2.abs()) + w2;
        let q = 0.1 * (sech2(v2) - sech2(v)).abs() * weight / (v2 - v).abs();
        assert!((q - est).abs() < 1e-9 * est.max(1.0), "{q} vs {est}");
    }
}
