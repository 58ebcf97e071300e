use meanfield_core::fbsde::regress_conditional;
use meanfield_core::lq_oracle::{solve_lq_mfg, LqModel};
use meanfield_core::measure::wasserstein2;
use meanfield_core::model::{Matrix, Vector};
use meanfield_core::monotonicity::*;
use meanfield_core::ParticleCloud;
use proptest::prelude::*;

fn cloud(points: &[Vec<f64>]) -> ParticleCloud {
    ParticleCloud::uniform(points.iter().map(|p| Vector::from_row_slice(p)).collect()).unwrap()
}

/// Brute force over all matchings of equal-size uniform clouds.
fn brute_w2(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    fn perms(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in perms(n - 1) {
            for i in 0..=p.len() {
                let mut q = p.clone();
                q.insert(i, n - 1);
                out.push(q);
            }
        }
        out
    }
    perms(a.len())
        .iter()
        .map(|perm| {
            perm.iter()
                .enumerate()
                .map(|(i, &j)| {
                    a[i].iter()
                        .zip(&b[j])
                        .map(|(x, y)| (x - y).powi(2))
                        .sum::<f64>()
                })
                .sum::<f64>()
                / a.len() as f64
        })
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

fn points(n: usize, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-5.0f64..5.0, dim), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn w2_matches_brute_force_in_two_dimensions(
        (a, b) in (1usize..6).prop_flat_map(|n| (points(n, 2), points(n, 2)))
    ) {
        let d = wasserstein2(&cloud(&a), &cloud(&b)).unwrap();
        prop_assert!((d - brute_w2(&a, &b)).abs() < 1e-9);
    }

    #[test]
    fn w2_is_symmetric_and_vanishes_on_the_diagonal(
        (a, b) in (1usize..8).prop_flat_map(|n| (points(n, 1), points(n, 1)))
    ) {
        let (ca, cb) = (cloud(&a), cloud(&b));
        let ab = wasserstein2(&ca, &cb).unwrap();
        prop_assert!((ab - wasserstein2(&cb, &ca).unwrap()).abs() < 1e-12);
        prop_assert!(wasserstein2(&ca, &ca).unwrap() < 1e-12);
        prop_assert!((ab - brute_w2(&a, &b)).abs() < 1e-9);
    }

    #[test]
    fn w2_ignores_particle_order(a in points(6, 2), b in points(6, 2), rot in 0usize..6) {
        let perm: Vec<usize> = (0..6).map(|i| (i + rot) % 6).collect();
        let (ca, cb) = (cloud(&a), cloud(&b));
        let d1 = wasserstein2(&ca, &cb).unwrap();
        let d2 = wasserstein2(&ca.permuted(&perm).unwrap(), &cb).unwrap();
        prop_assert!((d1 - d2).abs() < 1e-10);
    }

    #[test]
    fn regression_reproduces_polynomials_in_the_basis(
        coef in prop::collection::vec(-2.0f64..2.0, 4),
        xs in prop::collection::vec(-3.0f64..3.0, 40),
    ) {
        prop_assume!(xs.iter().any(|x| (x - xs[0]).abs() > 0.5));
        let features = Matrix::from_column_slice(xs.len(), 1, &xs);
        let targets = Matrix::from_iterator(
            xs.len(),
            1,
            xs.iter().map(|x| coef[0] + coef[1] * x + coef[2] * x * x + coef[3] * x.powi(3)),
        );
        let distinct = {
            let mut s: Vec<i64> = xs.iter().map(|x| (x * 1e6) as i64).collect();
            s.sort();
            s.dedup();
            s.len()
        };
        prop_assume!(distinct >= 6);
        let fit = regress_conditional(&targets, &features, 3).unwrap();
        let scale = 1.0 + targets.amax();
        prop_assert!((fit.predictions - &targets).amax() < 1e-6 * scale);
    }

    #[test]
    fn big_lambda_threshold_is_linear_in_gamma(t in 0.1f64..2.0, k in 0.01f64..0.5, g in 0.0f64..3.0) {
        let one = threshold_big_lambda(t, k, 1.0).unwrap();
        let val = threshold_big_lambda(t, k, g).unwrap();
        prop_assert!((val - g * one).abs() <= 1e-12 * one.max(1.0) * (1.0 + g));
        // the reduced bound never exceeds the full one
        prop_assert!(threshold_big_lambda_reduced(t, k, g).unwrap() <= val + 1e-12);
    }

    #[test]
    fn c_lt_grows_with_lipschitz_constant(l in 0.05f64..1.0, dl in 0.0f64..0.5, t in 0.0f64..1.0) {
        for variant in [CltVariant::MpFull, CltVariant::MpReduced, CltVariant::FbsdeLocal, CltVariant::FbsdeLocalReduced] {
            let a = threshold_c_lt(l, t, variant).unwrap();
            let b = threshold_c_lt(l + dl, t, variant).unwrap();
            prop_assert!(a >= 0.0 && b >= a);
        }
    }

    #[test]
    fn budget_flag_agrees_with_its_constant(
        lv in 0.1f64..3.0, lx in 0.5f64..3.0, l in 0.1f64..3.0, lg in 0.0f64..2.0
    ) {
        let b = anti_monotonicity_budget(lv, lx, 0.0, 0.0, 0.0, 0.0, l, lg).unwrap();
        prop_assert_eq!(b.budget_ok, b.a * lg < 1.0);
        // independent evaluation with D = 2 lambda_x
        let d = 2.0 * lx;
        let a = (l * lv + l * (lv * lv + lv * d).sqrt()) / (lv * d);
        prop_assert!((a - b.a).abs() < 1e-12 * a);
    }

    #[test]
    fn linear_gradient_margin_is_its_slope(a in 0.1f64..5.0, seed in 0u64..1000) {
        let g = move |x: &Vector, _: &ParticleCloud| x * a;
        let r = check_displacement_quasi(&g, 0.0, &CouplingSampler::new(2, seed), 16).unwrap();
        prop_assert!((r.margin("min_normalized_margin").unwrap() - a).abs() < 1e-10);
    }

    #[test]
    fn scalar_riccati_matches_the_tanh_closed_form(q in 0.1f64..3.0, r in 0.2f64..3.0, b in 0.3f64..2.0) {
        // pi' = B^2 pi^2 / R - Q with pi(T) = 0
        let model = LqModel::scalar(0.0, b, 0.3, q, r, 0.0, 0.0, 0.0, 1.0);
        let sol = solve_lq_mfg(&model, 400).unwrap();
        let rate = b * (q / r).sqrt();
        for t in [0.0, 0.3, 0.7, 1.0] {
            let exact = (q * r).sqrt() / b * (rate * (1.0 - t)).tanh();
            prop_assert!((sol.riccati_at(t, 0) - exact).abs() < 1e-6 * (1.0 + exact));
        }
    }
}
