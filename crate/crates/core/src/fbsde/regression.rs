//! Least-squares projection on polynomials of the state, used for the
//! conditional expectations of the backward equation.

use nalgebra::SymmetricEigen;

use crate::error::{Error, Result};
use crate::model::{Matrix, Vector};

const RIDGE: f64 = 1e-8;
const CONDITION_FLOOR: f64 = 1e-13;

/// All exponent vectors of total degree at most `degree` in `vars` variables,
/// in graded order starting with the constant.
fn exponents(vars: usize, degree: usize) -> Vec<Vec<u32>> {
    let mut out = vec![vec![0u32; vars]];
    if vars == 0 {
        return out;
    }
    for total in 1..=degree {
        let mut current = vec![0u32; vars];
        fill(&mut current, 0, total as u32, &mut out);
    }
    out
}

fn fill(current: &mut Vec<u32>, pos: usize, left: u32, out: &mut Vec<Vec<u32>>) {
    if pos + 1 == current.len() {
        current[pos] = left;
        out.push(current.clone());
        current[pos] = 0;
        return;
    }
    for k in (0..=left).rev() {
        current[pos] = k;
        fill(current, pos + 1, left - k, out);
    }
    current[pos] = 0;
}

/// A fitted projection operator for one set of features. Build once per
/// node and apply to several targets.
#[derive(Debug, Clone)]
pub struct Regressor {
    design: Matrix,
    /// (Phi^T Phi / N + ridge)^-1 Phi^T / N, K x N
    projector: Matrix,
    rank_deficient: bool,
}

impl Regressor {
    /// `features` has one row per sample.
    pub fn new(features: &Matrix, degree: usize) -> Result<Self> {
        if !(1..=3).contains(&degree) {
            return Err(Error::InvalidInput(format!(
                "basis degree {degree} not in 1..=3"
            )));
        }
        let (rows, cols) = features.shape();
        if rows == 0 {
            return Err(Error::InvalidInput(
                "regression needs at least one sample".into(),
            ));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite("regression features"));
        }
        // standardize, dropping coordinates without spread
        let mut standardized: Vec<Vector> = Vec::new();
        for c in 0..cols {
            let col = features.column(c);
            let mean = col.mean();
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / rows as f64;
            let sd = var.sqrt();
            if sd > 1e-12 * (1.0 + mean.abs()) {
                standardized.push(col.map(|v| (v - mean) / sd));
            }
        }
        let exps = exponents(standardized.len(), degree);
        let k = exps.len();
        if rows < k {
            return Err(Error::InvalidInput(format!(
                "{rows} samples cannot determine {k} basis functions"
            )));
        }
        let design = Matrix::from_fn(rows, k, |r, j| {
            exps[j]
                .iter()
                .zip(&standardized)
                .map(|(&e, z)| z[r].powi(e as i32))
                .product()
        });
        let mut gram = design.tr_mul(&design) / rows as f64;
        let eig = SymmetricEigen::new(gram.clone()).eigenvalues;
        let (lo, hi) = (eig.min(), eig.max());
        let rank_deficient = !(lo > CONDITION_FLOOR * hi.max(1.0));
        if rank_deficient {
            for d in 0..k {
                gram[(d, d)] += RIDGE * hi.max(1.0);
            }
        }
        let chol = gram.cholesky().ok_or(Error::RankDeficient)?;
        let projector = chol.solve(&design.transpose()) / rows as f64;
        Ok(Self {
            design,
            projector,
            rank_deficient,
        })
    }

    pub fn basis_size(&self) -> usize {
        self.design.ncols()
    }

    /// Whether the ridge fallback had to be applied.
    pub fn rank_deficient(&self) -> bool {
        self.rank_deficient
    }

    /// Fitted values for `targets` (one row per sample).
    pub fn predict(&self, targets: &Matrix) -> Result<Matrix> {
        if targets.nrows() != self.design.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{} targets for {} samples",
                targets.nrows(),
                self.design.nrows()
            )));
        }
        let coef = &self.projector * targets;
        let fitted = &self.design * coef;
        if fitted.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite("regression prediction"));
        }
        Ok(fitted)
    }
}

#[derive(Debug, Clone)]
pub struct RegressionFit {
    pub predictions: Matrix,
    pub rank_deficient: bool,
}

/// Project each column of `targets` on polynomials of `features` of total
/// degree at most `basis_degree`.
pub fn regress_conditional(
    targets: &Matrix,
    features: &Matrix,
    basis_degree: usize,
) -> Result<RegressionFit> {
    let reg = Regressor::new(features, basis_degree)?;
    Ok(RegressionFit {
        predictions: reg.predict(targets)?,
        rank_deficient: reg.rank_deficient(),
    })
}
