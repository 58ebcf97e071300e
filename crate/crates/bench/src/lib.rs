//! Shared inputs for the benchmarks.

use std::collections::BTreeMap;

use meanfield_core::catalog::{self, CatalogEntry};
use meanfield_core::fbsde::{gaussian_cloud, PathBundle, TimeGrid};
use meanfield_core::model::Matrix;
use meanfield_core::ParticleCloud;

pub fn cloud(particles: usize, dim: usize, shift: f64, seed: u64) -> ParticleCloud {
    gaussian_cloud(particles, &vec![shift; dim], 1.0, seed).expect("valid cloud")
}

/// Features and noisy cubic targets for the regression benchmark.
pub fn regression_problem(rows: usize, seed: u64) -> (Matrix, Matrix) {
    let c = cloud(rows, 2, 0.0, seed);
    let features = c.to_matrix();
    let targets = Matrix::from_fn(rows, 1, |r, _| {
        let (a, b) = (features[(r, 0)], features[(r, 1)]);
        a * a * b - 0.5 * b + a.sin()
    });
    (features, targets)
}

pub fn solver_setup(
    model: &str,
    particles: usize,
    steps: usize,
) -> (CatalogEntry, TimeGrid, PathBundle) {
    let entry = catalog::model(model, &BTreeMap::new()).expect("catalog model");
    let grid = TimeGrid::new(0.0, 1.0, steps).expect("grid");
    let paths = entry.path_bundle(&grid, particles, 1).expect("paths");
    (entry, grid, paths)
}
