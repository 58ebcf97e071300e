use std::collections::BTreeMap;

use meanfield_core::catalog;
use meanfield_core::fbsde::{LiftedCoefficients, PathBundle, TimeGrid};
use meanfield_core::lq_oracle::{solve_lq_mfg, solve_lq_mftc};
use meanfield_core::meanfield::*;
use meanfield_core::model::{Matrix, Vector};
use meanfield_core::{ModelSpec, ParticleCloud};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn scalars(values: &[f64]) -> Vec<Vector> {
    values.iter().map(|&v| Vector::from_element(1, v)).collect()
}

fn q_zero(n: usize) -> Vec<Matrix> {
    vec![Matrix::zeros(1, 1); n]
}

/// `b = v`, constant sigma, `f = 1/2 v^2 + 1/2 (x - kappa mean)^2`, `g = 0`.
fn tracking(kappa: f64, sigma: f64) -> ModelSpec {
    ModelSpec::new(
        "tracking",
        1,
        1,
        |_, _, _, v| v.clone(),
        move |_, _, _, _| Matrix::from_element(1, 1, sigma),
        move |_, x, m, v| 0.5 * v.norm_squared() + 0.5 * (x - kappa * m.mean()).norm_squared(),
        |_, _| 0.0,
        move |_, x, m, _| x - kappa * m.mean(),
        |_, _, _, v| v.clone(),
        |x, _| x * 0.0,
    )
    .with_dx_b(|_, _, _, _| Matrix::zeros(1, 1))
    .with_dv_b(|_, _, _, _| Matrix::identity(1, 1))
    .with_dx_sigma(|_, _, _, _| vec![Matrix::zeros(1, 1)])
    .with_dvv_f(|_, _, _, _| Matrix::identity(1, 1))
    .with_dy_dfdnu(move |_, x, m, _, _| -kappa * (x - kappa * m.mean()))
    .with_dy_dgdnu(|x, _, _| x * 0.0)
    .with_dy_dbdnu(|_, _, _, _, _| Matrix::zeros(1, 1))
    .with_constants(meanfield_core::ConstantsLedger {
        lambda: Some(0.5),
        lambda_v: Some(0.5),
        ..Default::default()
    })
}

#[test]
fn quadratic_control_cost_gives_minus_p_drift() {
    let asm = assemble_mfg(&tracking(0.0, 0.3)).unwrap();
    let (x, p) = (scalars(&[0.0, 1.0, -2.0]), scalars(&[0.5, -1.5, 2.0]));
    let fw = asm.forward(0.3, &x, &p, &q_zero(3)).unwrap();
    for (b, p) in fw.b.iter().zip(&p) {
        assert!((b + p).amax() < 1e-9);
    }
    let beta = asm.beta(0.3, &x, &p, &q_zero(3)).unwrap();
    assert!((&beta[1] - Vector::from_element(1, 1.5)).amax() < 1e-9);
}

#[test]
fn mean_tracking_driver_by_hand() {
    let kappa = 0.5;
    let asm = assemble_mfg(&tracking(kappa, 0.3)).unwrap();
    let x = scalars(&[1.0, 2.0, 6.0]);
    let p = scalars(&[0.1, 0.2, 0.3]);
    let f = asm.driver(0.0, &x, &p, &q_zero(3)).unwrap();
    let mean = 3.0;
    for (fi, xi) in f.iter().zip(&x) {
        assert!((fi[0] + (xi[0] - kappa * mean)).abs() < 1e-12);
    }
}

#[test]
fn measure_free_outputs_ignore_the_other_particles() {
    let asm = assemble_mfg(&tracking(0.0, 0.3)).unwrap();
    let p = scalars(&[0.4, -0.1, 0.7]);
    let a = asm
        .driver(0.2, &scalars(&[1.0, 2.0, 3.0]), &p, &q_zero(3))
        .unwrap();
    let b = asm
        .driver(0.2, &scalars(&[1.0, -9.0, 30.0]), &p, &q_zero(3))
        .unwrap();
    assert_eq!(a[0], b[0]);
    let fa = asm
        .forward(0.2, &scalars(&[1.0, 2.0, 3.0]), &p, &q_zero(3))
        .unwrap();
    let fb = asm
        .forward(0.2, &scalars(&[1.0, -9.0, 30.0]), &p, &q_zero(3))
        .unwrap();
    assert_eq!(fa.b[0], fb.b[0]);
}

#[test]
fn mftc_assembly_equals_mfg_without_measure_dependence() {
    let spec = tracking(0.0, 0.3);
    let (mfg, mftc) = (assemble_mfg(&spec).unwrap(), assemble_mftc(&spec).unwrap());
    let (x, p) = (
        scalars(&[0.3, -1.0, 2.5, 0.0]),
        scalars(&[1.0, 0.0, -0.5, 2.0]),
    );
    let q = q_zero(4);
    assert_eq!(
        mfg.driver(0.5, &x, &p, &q).unwrap(),
        mftc.driver(0.5, &x, &p, &q).unwrap()
    );
    assert_eq!(mfg.terminal(&x).unwrap(), mftc.terminal(&x).unwrap());
    assert_eq!(
        mfg.forward(0.5, &x, &p, &q).unwrap().b,
        mftc.forward(0.5, &x, &p, &q).unwrap().b
    );
}

fn mean_terminal() -> ModelSpec {
    // g(x, m) = x mean(m), so D_x g = mean and D_y dg/dnu(x, m)(y) = x
    tracking(0.0, 0.3)
        .with_dy_dgdnu(|x, _, _| x.clone())
        .with_dy_dfdnu(|_, x, _, _, _| x * 0.0)
}

#[test]
fn mftc_terminal_adds_the_lifted_mean_term() {
    let mut spec = mean_terminal();
    spec.g = std::sync::Arc::new(|x: &Vector, m: &ParticleCloud| x.dot(m.mean()));
    spec.dx_g = std::sync::Arc::new(|_: &Vector, m: &ParticleCloud| m.mean().clone());
    let asm = assemble_mftc(&spec).unwrap();
    let x = scalars(&[1.0, 2.0, 6.0]);
    for gi in asm.terminal(&x).unwrap() {
        assert!((gi[0] - 6.0).abs() < 1e-12);
    }
    // one particle: only its own term
    let single = asm.terminal(&scalars(&[1.5])).unwrap();
    assert!((single[0][0] - 3.0).abs() < 1e-12);
}

#[test]
fn driftless_cost_free_game_has_zero_control() {
    let mut spec = tracking(0.0, 1.0);
    spec.f =
        std::sync::Arc::new(|_, _: &Vector, _: &ParticleCloud, v: &Vector| 0.5 * v.norm_squared());
    spec.dx_f = std::sync::Arc::new(|_, x: &Vector, _: &ParticleCloud, _: &Vector| x * 0.0);
    let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
    let init = meanfield_core::fbsde::gaussian_cloud(100, &[0.0], 1.0, 1).unwrap();
    let paths = PathBundle::generate(init, &grid, 2).unwrap();
    let sol = solve_mfg(&spec, &grid, &paths, &SolverParams::default()).unwrap();
    assert!(sol.paths.v.iter().flatten().all(|v| v[0].abs() < 1e-12));
    for k in 0..100 {
        let w: f64 = paths.noise()[k].iter().map(|dw| dw[0]).sum();
        assert!((sol.paths.x[10][k][0] - paths.initial().point(k)[0] - w).abs() < 1e-12);
    }
    assert!(sol.cost.value.abs() < 1e-12);
}

fn relative_control_error(sol: &EquilibriumSolution, oracle: impl Fn(f64, f64) -> f64) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, t) in sol.paths.times.iter().enumerate() {
        for (x, v) in sol.paths.x[i].iter().zip(&sol.paths.v[i]) {
            let exact = oracle(*t, x[0]);
            num += (v[0] - exact).powi(2);
            den += exact * exact;
        }
    }
    (num / den).sqrt()
}

#[test]
fn mean_coupled_game_matches_the_fixed_point_oracle() {
    let entry = catalog::model("lq_mean_coupled", &BTreeMap::new()).unwrap();
    let grid = TimeGrid::new(0.0, 1.0, 50).unwrap();
    let paths = entry.path_bundle(&grid, 2000, 8).unwrap();
    let sol = solve_mfg(&entry.spec, &grid, &paths, &SolverParams::default()).unwrap();
    let oracle = solve_lq_mfg(entry.lq.as_ref().unwrap(), 2000).unwrap();
    let err = relative_control_error(&sol, |t, x| oracle.control(t, &[x])[0]);
    assert!(err < 0.02, "{err}");
}

#[test]
fn control_problem_matches_the_mean_field_riccati_oracle() {
    let entry = catalog::model("lq_mftc", &BTreeMap::new()).unwrap();
    let grid = TimeGrid::new(0.0, 1.0, 50).unwrap();
    let paths = entry.path_bundle(&grid, 2000, 9).unwrap();
    let sol = solve_mftc(&entry.spec, &grid, &paths, &SolverParams::default()).unwrap();
    let oracle = solve_lq_mftc(entry.lq.as_ref().unwrap(), 2000).unwrap();
    let err = relative_control_error(&sol, |t, x| oracle.control(t, &[x])[0]);
    assert!(err < 0.02, "{err}");
}

#[test]
fn control_optimum_beats_the_equilibrium_on_its_own_objective() {
    let entry = catalog::model("lq_mean_coupled", &BTreeMap::new()).unwrap();
    let grid = TimeGrid::new(0.0, 1.0, 25).unwrap();
    let paths = entry.path_bundle(&grid, 2000, 10).unwrap();
    let mfg = solve_mfg(&entry.spec, &grid, &paths, &SolverParams::default()).unwrap();
    let mftc = solve_mftc(&entry.spec, &grid, &paths, &SolverParams::default()).unwrap();
    let a = per_particle_costs(&entry.spec, &mftc.paths.v, &grid, &paths, &CostMode::Mftc).unwrap();
    let b = per_particle_costs(&entry.spec, &mfg.paths.v, &grid, &paths, &CostMode::Mftc).unwrap();
    let diff: Vec<f64> = a.iter().zip(&b).map(|(a, b)| a - b).collect();
    let est = CostEstimate::from_samples(&diff);
    assert!(est.value <= 2.0 * est.stderr, "{est:?}");
}

#[test]
fn linear_generic_drift_reduces_to_the_plain_game() {
    let entry = catalog::model("generic_tanh", &[("tanh_weight".to_string(), 0.0)].into()).unwrap();
    let grid = TimeGrid::new(0.0, 1.0, 20).unwrap();
    let paths = entry.path_bundle(&grid, 300, 11).unwrap();
    let a = solve_mfg(&entry.spec, &grid, &paths, &SolverParams::default()).unwrap();
    let b = solve_mfg_generic_drift(&entry.spec, &grid, &paths, &SolverParams::default()).unwrap();
    assert!(a.paths.max_abs_difference(&b.paths) < 1e-10);
    let c = solve_mftc_generic_drift(&entry.spec, &grid, &paths, &SolverParams::default()).unwrap();
    assert!(b.paths.max_abs_difference(&c.paths) < 1e-10);
}

#[test]
fn tanh_drift_equilibrium_is_stationary_and_locally_optimal() {
    let entry = catalog::model("generic_tanh", &BTreeMap::new()).unwrap();
    let grid = TimeGrid::new(0.0, 1.0, 25).unwrap();
    let n = 1000;
    let paths = entry.path_bundle(&grid, n, 12).unwrap();
    let sol =
        solve_mfg_generic_drift(&entry.spec, &grid, &paths, &SolverParams::default()).unwrap();
    assert!(sol.diagnostics.stationarity_max <= 1e-8);
    let mode = CostMode::MfgFrozenFlow(sol.measure_flow.clone());
    let base = per_particle_costs(&entry.spec, &sol.paths.v, &grid, &paths, &mode).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let mut v = sol.paths.v.clone();
        let mut h: Vec<f64> = (0..grid.steps * n)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let norm = (h.iter().map(|c| c * c).sum::<f64>() * grid.dt() / n as f64).sqrt();
        h.iter_mut().for_each(|c| *c *= 0.1 / norm);
        for i in 0..grid.steps {
            for k in 0..n {
                v[i][k][0] += h[i * n + k];
            }
        }
        let pert = per_particle_costs(&entry.spec, &v, &grid, &paths, &mode).unwrap();
        let diff: Vec<f64> = pert.iter().zip(&base).map(|(a, b)| a - b).collect();
        let est = CostEstimate::from_samples(&diff);
        assert!(est.value >= -2.0 * est.stderr, "{est:?}");
    }
}

#[test]
fn mean_drift_measure_term_is_the_drift_weight_times_p() {
    let entry = catalog::model("generic_mean_drift", &BTreeMap::new()).unwrap();
    let spec = &entry.spec;
    let m = ParticleCloud::from_scalars(&[0.0, 1.0]).unwrap();
    let (x, v, y, p) = (
        Vector::from_element(1, 0.4),
        Vector::from_element(1, -0.3),
        Vector::from_element(1, 2.0),
        Vector::from_element(1, 1.7),
    );
    let term = measure_term_single(
        spec,
        MftcDriver::Full,
        0.1,
        &x,
        &m,
        &p,
        &Matrix::zeros(1, 1),
        &v,
        &y,
    );
    assert!((term[0] - 0.2 * 1.7).abs() < 1e-12);
    let env = measure_term_single(
        spec,
        MftcDriver::EnvelopeCostOnly,
        0.1,
        &x,
        &m,
        &p,
        &Matrix::zeros(1, 1),
        &v,
        &y,
    );
    assert_eq!(env[0], 0.0);
}

#[test]
fn cost_of_fixed_controls() {
    let mut spec = tracking(0.0, 0.3);
    spec.f =
        std::sync::Arc::new(|_, _: &Vector, _: &ParticleCloud, v: &Vector| 0.5 * v.norm_squared());
    let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
    let init = meanfield_core::fbsde::gaussian_cloud(20, &[0.0], 1.0, 1).unwrap();
    let paths = PathBundle::generate(init, &grid, 2).unwrap();
    let zero = vec![vec![Vector::zeros(1); 20]; 10];
    let one = vec![vec![Vector::from_element(1, 1.0); 20]; 10];
    let a = evaluate_cost(&spec, &zero, &grid, &paths, &CostMode::Mftc).unwrap();
    let b = evaluate_cost(&spec, &one, &grid, &paths, &CostMode::Mftc).unwrap();
    assert_eq!((a.value, a.stderr), (0.0, 0.0));
    assert!((b.value - 0.5).abs() < 1e-12 && b.stderr < 1e-12);
}

#[test]
fn equilibrium_beats_random_perturbations() {
    let entry = catalog::model("lq_basic", &BTreeMap::new()).unwrap();
    let grid = TimeGrid::new(0.0, 1.0, 25).unwrap();
    let n = 1000;
    let paths = entry.path_bundle(&grid, n, 13).unwrap();
    let sol = solve_mfg(&entry.spec, &grid, &paths, &SolverParams::default()).unwrap();
    let mode = CostMode::MfgFrozenFlow(sol.measure_flow.clone());
    let base = per_particle_costs(&entry.spec, &sol.paths.v, &grid, &paths, &mode).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        // a smooth feedback-shaped perturbation
        let (a, c): (f64, f64) = (
            StandardNormal.sample(&mut rng),
            StandardNormal.sample(&mut rng),
        );
        let mut v = sol.paths.v.clone();
        for (i, row) in v.iter_mut().enumerate().take(grid.steps) {
            for (k, vk) in row.iter_mut().enumerate() {
                vk[0] += 0.1 * (a * sol.paths.x[i][k][0] + c);
            }
        }
        let pert = per_particle_costs(&entry.spec, &v, &grid, &paths, &mode).unwrap();
        let diff: Vec<f64> = pert.iter().zip(&base).map(|(a, b)| a - b).collect();
        let est = CostEstimate::from_samples(&diff);
        assert!(est.value >= -2.0 * est.stderr, "{est:?}");
    }
}

#[test]
fn mftc_requires_measure_derivatives() {
    let spec = ModelSpec::new(
        "bare",
        1,
        1,
        |_, _, _, v| v.clone(),
        |_, _, _, _| Matrix::from_element(1, 1, 0.3),
        |_, _, _, v| 0.5 * v.norm_squared(),
        |_, _| 0.0,
        |_, x, _, _| x * 0.0,
        |_, _, _, v| v.clone(),
        |x, _| x * 0.0,
    )
    .with_constants(meanfield_core::ConstantsLedger {
        lambda: Some(0.5),
        lambda_v: Some(0.5),
        ..Default::default()
    });
    assert!(assemble_mfg(&spec).is_ok());
    assert!(matches!(
        assemble_mftc(&spec),
        Err(meanfield_core::Error::MissingDerivative(_))
    ));
}
