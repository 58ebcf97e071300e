//! Empirical probability measures on R^n and the 2-Wasserstein distance.
//!
//! A [`ParticleCloud`] is a weighted point set standing in for a law with
//! finite second moment. Its mean and second moment are computed once at
//! construction, since coefficient callables read them for every particle.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Largest cloud size handled by the exact assignment solver in n >= 2.
pub const MAX_EXACT_ASSIGNMENT: usize = 2048;

/// Weighted empirical measure.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleCloud {
    points: Vec<DVector<f64>>,
    weights: Vec<f64>,
    uniform: bool,
    mean: DVector<f64>,
    second_moment: f64,
}

impl ParticleCloud {
    /// Uniformly weighted cloud.
    pub fn uniform(points: Vec<DVector<f64>>) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::InvalidInput(
                "a cloud needs at least one point".into(),
            ));
        }
        let w = 1.0 / n as f64;
        Self::build(points, vec![w; n], true)
    }

    /// Cloud with explicit weights; they must be nonnegative and sum to one.
    pub fn weighted(points: Vec<DVector<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput(
                "a cloud needs at least one point".into(),
            ));
        }
        if points.len() != weights.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidInput(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidInput(format!(
                "weights sum to {total}, not 1"
            )));
        }
        let first = weights[0];
        let uniform = weights.iter().all(|w| *w == first);
        Self::build(points, weights, uniform)
    }

    /// Point mass at `point`.
    pub fn dirac(point: DVector<f64>) -> Self {
        Self::uniform(vec![point]).expect("single finite point")
    }

    /// One-dimensional uniform cloud from scalars.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::uniform(
            values
                .iter()
                .map(|v| DVector::from_element(1, *v))
                .collect(),
        )
    }

    fn build(points: Vec<DVector<f64>>, weights: Vec<f64>, uniform: bool) -> Result<Self> {
        let dim = points[0].len();
        if dim == 0 {
            return Err(Error::InvalidInput(
                "points must have positive dimension".into(),
            ));
        }
        let mut mean = DVector::zeros(dim);
        let mut second_moment = 0.0;
        for (p, w) in points.iter().zip(&weights) {
            if p.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "point of dimension {} in a cloud of dimension {dim}",
                    p.len()
                )));
            }
            if p.iter().any(|c| !c.is_finite()) {
                return Err(Error::non_finite("cloud point"));
            }
            mean.axpy(*w, p, 1.0);
            second_moment += w * p.norm_squared();
        }
        Ok(Self {
            points,
            weights,
            uniform,
            mean,
            second_moment,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &DVector<f64> {
        &self.points[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    /// Weighted mean, the integral of y against the measure.
    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// Sum of w_i |x_i|^2.
    pub fn second_moment(&self) -> f64 {
        self.second_moment
    }

    /// W2 distance to the point mass at the origin.
    pub fn w2_to_origin(&self) -> f64 {
        self.second_moment.sqrt()
    }

    /// Weighted average of a per-particle vector quantity.
    pub fn average<F>(&self, mut f: F) -> DVector<f64>
    where
        F: FnMut(usize, &DVector<f64>) -> DVector<f64>,
    {
        let mut acc: Option<DVector<f64>> = None;
        for (i, (p, w)) in self.points.iter().zip(&self.weights).enumerate() {
            let value = f(i, p);
            match acc.as_mut() {
                Some(a) => a.axpy(*w, &value, 1.0),
                None => acc = Some(value * *w),
            }
        }
        acc.expect("non-empty cloud")
    }

    /// Points as an N x n matrix (one particle per row).
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), self.dim(), |i, j| self.points[i][j])
    }

    /// Relabel particles: `perm[k]` is the old index placed at position k.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let points = perm.iter().map(|&i| self.points[i].clone()).collect();
        let weights = perm.iter().map(|&i| self.weights[i]).collect();
        Self::build(points, weights, self.uniform)
    }
}

/// Mean, second moment and distance to the origin of a cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudStats {
    pub mean: Vec<f64>,
    pub second_moment: f64,
    pub w2_to_origin: f64,
}

pub fn cloud_stats(cloud: &ParticleCloud) -> CloudStats {
    CloudStats {
        mean: cloud.mean().iter().copied().collect(),
        second_moment: cloud.second_moment(),
        w2_to_origin: cloud.w2_to_origin(),
    }
}

/// Time-indexed sequence of clouds with a constant particle count.
#[derive(Debug, Clone)]
pub struct MeasureFlow {
    times: Vec<f64>,
    clouds: Vec<ParticleCloud>,
}

impl MeasureFlow {
    pub fn new(times: Vec<f64>, clouds: Vec<ParticleCloud>) -> Result<Self> {
        if times.len() != clouds.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} grid nodes but {} clouds",
                times.len(),
                clouds.len()
            )));
        }
        if let Some(first) = clouds.first() {
            if clouds.iter().any(|c| c.len() != first.len()) {
                return Err(Error::InvalidInput(
                    "particle count must be constant across the flow".into(),
                ));
            }
        }
        Ok(Self { times, clouds })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn clouds(&self) -> &[ParticleCloud] {
        &self.clouds
    }

    pub fn cloud(&self, node: usize) -> &ParticleCloud {
        &self.clouds[node]
    }

    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clouds.is_empty()
    }
}

/// How to evaluate W2 when the clouds live in R^n with n >= 2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TransportMethod {
    /// Quantile coupling in 1-d, optimal assignment otherwise; falls back to
    /// Sinkhorn above [`MAX_EXACT_ASSIGNMENT`] particles.
    Auto,
    /// Exact only; errors when the assignment preconditions fail.
    Exact,
    /// Entropic approximation. `epsilon = None` uses 0.01 times the mean cost.
    Sinkhorn { epsilon: Option<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransportEstimate {
    pub distance: f64,
    /// Regularization used, `None` for exact evaluations.
    pub epsilon: Option<f64>,
}

/// Exact 2-Wasserstein distance (see [`TransportMethod::Auto`]).
pub fn wasserstein2(a: &ParticleCloud, b: &ParticleCloud) -> Result<f64> {
    wasserstein2_with(a, b, TransportMethod::Auto).map(|e| e.distance)
}

pub fn wasserstein2_with(
    a: &ParticleCloud,
    b: &ParticleCloud,
    method: TransportMethod,
) -> Result<TransportEstimate> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!(
            "clouds of dimension {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    let exact = |d: f64| TransportEstimate {
        distance: d,
        epsilon: None,
    };
    match method {
        TransportMethod::Sinkhorn { epsilon } => sinkhorn(a, b, epsilon),
        _ if a.dim() == 1 => Ok(exact(quantile_w2(a, b))),
        TransportMethod::Exact | TransportMethod::Auto => {
            if !(a.is_uniform() && b.is_uniform() && a.len() == b.len()) {
                return Err(Error::UnsupportedWeighting(
                    "exact assignment needs uniform clouds of equal size".into(),
                ));
            }
            if a.len() > MAX_EXACT_ASSIGNMENT {
                if method == TransportMethod::Exact {
                    return Err(Error::UnsupportedWeighting(format!(
                        "{} particles exceed the exact assignment limit {MAX_EXACT_ASSIGNMENT}",
                        a.len()
                    )));
                }
                return sinkhorn(a, b, None);
            }
            Ok(exact(assignment_w2(a, b)))
        }
    }
}

fn sorted_by_value(c: &ParticleCloud) -> Vec<(f64, f64)> {
    let mut v: Vec<(usize, f64, f64)> = c
        .points()
        .iter()
        .zip(c.weights())
        .enumerate()
        .map(|(i, (p, w))| (i, p[0], *w))
        .collect();
    // stable sort keeps index order for ties
    v.sort_by(|x, y| x.1.total_cmp(&y.1));
    v.into_iter().map(|(_, x, w)| (x, w)).collect()
}

/// Quantile coupling on the real line; exact for arbitrary weights.
fn quantile_w2(a: &ParticleCloud, b: &ParticleCloud) -> f64 {
    let sa = sorted_by_value(a);
    let sb = sorted_by_value(b);
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (sa[0].1, sb[0].1);
    let mut total = 0.0;
    while i < sa.len() && j < sb.len() {
        let mass = ra.min(rb);
        let d = sa[i].0 - sb[j].0;
        total += mass * d * d;
        ra -= mass;
        rb -= mass;
        if ra <= 1e-15 {
            i += 1;
            if i < sa.len() {
                ra = sa[i].1;
            }
        }
        if rb <= 1e-15 {
            j += 1;
            if j < sb.len() {
                rb = sb[j].1;
            }
        }
    }
    total.max(0.0).sqrt()
}

fn squared_costs(a: &ParticleCloud, b: &ParticleCloud) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| {
        (a.point(i) - b.point(j)).norm_squared()
    })
}

fn assignment_w2(a: &ParticleCloud, b: &ParticleCloud) -> f64 {
    let cost = squared_costs(a, b);
    let assignment = hungarian(&cost);
    let total: f64 = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[(i, j)])
        .sum();
    (total / a.len() as f64).max(0.0).sqrt()
}

/// Minimum-cost perfect matching on a square cost matrix, O(n^3).
/// Returns `assignment[row] = column`.
pub fn hungarian(cost: &DMatrix<f64>) -> Vec<usize> {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "assignment needs a square matrix");
    // 1-based potentials; column 0 is a sentinel.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        matched_row[0] = row;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if matched_row[j] > 0 {
            assignment[matched_row[j] - 1] = j - 1;
        }
    }
    assignment
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Log-domain Sinkhorn; returns the transport cost of the entropic plan,
/// which bounds W2 from above.
fn sinkhorn(
    a: &ParticleCloud,
    b: &ParticleCloud,
    epsilon: Option<f64>,
) -> Result<TransportEstimate> {
    let cost = squared_costs(a, b);
    let (na, nb) = (a.len(), b.len());
    let scale = cost.mean().max(f64::MIN_POSITIVE);
    let eps = epsilon.unwrap_or(0.01 * scale);
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "Sinkhorn epsilon {eps} must be positive"
        )));
    }
    let log_a: Vec<f64> = a.weights().iter().map(|w| w.ln()).collect();
    let log_b: Vec<f64> = b.weights().iter().map(|w| w.ln()).collect();
    let mut f = vec![0.0; na];
    let mut g = vec![0.0; nb];
    for _ in 0..5000 {
        for i in 0..na {
            f[i] = -eps * log_sum_exp((0..nb).map(|j| log_b[j] + (g[j] - cost[(i, j)]) / eps));
        }
        for j in 0..nb {
            g[j] = -eps * log_sum_exp((0..na).map(|i| log_a[i] + (f[i] - cost[(i, j)]) / eps));
        }
        // after the g-update the column marginals are exact; check rows
        let row_err: f64 = (0..na)
            .map(|i| {
                let row: f64 = (0..nb)
                    .map(|j| (log_a[i] + log_b[j] + (f[i] + g[j] - cost[(i, j)]) / eps).exp())
                    .sum();
                (row - a.weights()[i]).abs()
            })
            .sum();
        if row_err < 1e-9 {
            break;
        }
    }
    let mut total = 0.0;
    for i in 0..na {
        for j in 0..nb {
            let plan = (log_a[i] + log_b[j] + (f[i] + g[j] - cost[(i, j)]) / eps).exp();
            total += plan * cost[(i, j)];
        }
    }
    Ok(TransportEstimate {
        distance: total.max(0.0).sqrt(),
        epsilon: Some(eps),
    })
}

/// Write a cloud as CSV: header `x1,..,xn,weight`, one particle per row.
pub fn write_cloud_csv<W: Write>(cloud: &ParticleCloud, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (1..=cloud.dim()).map(|k| format!("x{k}")).collect();
    header.push("weight".into());
    w.write_record(&header)?;
    for (p, wt) in cloud.points().iter().zip(cloud.weights()) {
        let mut row: Vec<String> = p.iter().map(|c| format!("{c:e}")).collect();
        row.push(format!("{wt:e}"));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_cloud_csv<R: Read>(reader: R) -> Result<ParticleCloud> {
    let mut r = csv::Reader::from_reader(reader);
    let dim = r.headers()?.len().saturating_sub(1);
    if dim == 0 {
        return Err(Error::InvalidInput(
            "cloud CSV needs x columns and a weight".into(),
        ));
    }
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for record in r.records() {
        let record = record?;
        let values: Vec<f64> = record
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidInput(format!("bad number in cloud CSV: {e}")))?;
        if values.len() != dim + 1 {
            return Err(Error::DimensionMismatch("ragged cloud CSV".into()));
        }
        points.push(DVector::from_column_slice(&values[..dim]));
        weights.push(values[dim]);
    }
    ParticleCloud::weighted(points, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cloud2(points: &[[f64; 2]]) -> ParticleCloud {
        ParticleCloud::uniform(points.iter().map(|p| DVector::from_row_slice(p)).collect()).unwrap()
    }

    #[test]
    fn identical_clouds_have_zero_distance() {
        let a = ParticleCloud::from_scalars(&[0.3, -1.0, 2.0]).unwrap();
        assert_eq!(wasserstein2(&a, &a).unwrap(), 0.0);
        let b = cloud2(&[[0.0, 1.0], [2.0, -1.0], [0.5, 0.5]]);
        assert_abs_diff_eq!(wasserstein2(&b, &b).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn single_transport_between_diracs() {
        let a = ParticleCloud::from_scalars(&[0.0]).unwrap();
        let b = ParticleCloud::from_scalars(&[1.0]).unwrap();
        assert_abs_diff_eq!(wasserstein2(&a, &b).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn two_point_clouds_match_brute_force() {
        let a = ParticleCloud::from_scalars(&[0.0, 2.0]).unwrap();
        let b = ParticleCloud::from_scalars(&[1.0, 3.0]).unwrap();
        // couplings: identity sqrt((1+1)/2) = 1, swap sqrt((9+1)/2)
        assert_abs_diff_eq!(wasserstein2(&a, &b).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn weighted_quantile_coupling() {
        // mass 1/2 at 0 and 1/2 at 1 vs point at 0.5: every unit travels 0.5
        let a = ParticleCloud::weighted(
            vec![DVector::from_element(1, 0.0), DVector::from_element(1, 1.0)],
            vec![0.5, 0.5],
        )
        .unwrap();
        let b = ParticleCloud::from_scalars(&[0.5]).unwrap();
        assert_abs_diff_eq!(wasserstein2(&a, &b).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn assignment_finds_optimal_permutation() {
        let a = cloud2(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let b = cloud2(&[[0.0, 1.1], [0.1, 0.0], [1.0, 0.1]]);
        let expected = ((0.01 + 0.01 + 0.01) / 3.0f64).sqrt();
        assert_abs_diff_eq!(wasserstein2(&a, &b).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn hungarian_agrees_with_enumeration() {
        let cost = DMatrix::from_row_slice(
            4,
            4,
            &[
                4.0, 1.0, 3.0, 2.5, 2.0, 0.0, 5.0, 1.0, 3.0, 2.0, 2.0, 0.5, 1.0, 7.0, 0.2, 4.0,
            ],
        );
        let best = permutations(4)
            .into_iter()
            .map(|p| {
                p.iter()
                    .enumerate()
                    .map(|(i, &j)| cost[(i, j)])
                    .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min);
        let got: f64 = hungarian(&cost)
            .iter()
            .enumerate()
            .map(|(i, &j)| cost[(i, j)])
            .sum();
        assert_abs_diff_eq!(got, best, epsilon = 1e-12);
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 1 {
            return vec![vec![0]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for k in 0..n {
                let mut q = p.clone();
                q.insert(k, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn sinkhorn_is_close_and_biased_upward() {
        let a = cloud2(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [2.0, 2.0]]);
        let b = cloud2(&[[0.1, 0.2], [1.2, -0.1], [0.3, 1.0], [1.5, 2.5]]);
        let exact = wasserstein2(&a, &b).unwrap();
        let approx =
            wasserstein2_with(&a, &b, TransportMethod::Sinkhorn { epsilon: None }).unwrap();
        assert!(approx.epsilon.is_some());
        assert!(approx.distance >= exact - 1e-9);
        assert!(
            approx.distance - exact < 0.05,
            "{} vs {exact}",
            approx.distance
        );
    }

    #[test]
    fn exact_mode_rejects_unequal_clouds() {
        let a = cloud2(&[[0.0, 0.0], [1.0, 0.0]]);
        let b = cloud2(&[[0.0, 0.0]]);
        assert!(matches!(
            wasserstein2(&a, &b),
            Err(Error::UnsupportedWeighting(_))
        ));
        let c = ParticleCloud::from_scalars(&[0.0]).unwrap();
        assert!(matches!(
            wasserstein2(&a, &c),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn stats_of_small_clouds() {
        let s = cloud_stats(&ParticleCloud::from_scalars(&[0.0]).unwrap());
        assert_eq!(
            (s.mean[0], s.second_moment, s.w2_to_origin),
            (0.0, 0.0, 0.0)
        );
        let s = cloud_stats(&ParticleCloud::from_scalars(&[-1.0, 1.0]).unwrap());
        assert_eq!(
            (s.mean[0], s.second_moment, s.w2_to_origin),
            (0.0, 1.0, 1.0)
        );
        let s = cloud_stats(&ParticleCloud::from_scalars(&[1.0, 3.0]).unwrap());
        assert_eq!(s.mean[0], 2.0);
        assert_eq!(s.second_moment, 5.0);
        assert_abs_diff_eq!(s.w2_to_origin, 5f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn w2_to_origin_matches_distance_to_dirac() {
        let c = cloud2(&[[1.0, 2.0], [-0.5, 0.0], [3.0, 1.0]]);
        let origin = ParticleCloud::dirac(DVector::zeros(2));
        let d = wasserstein2_with(
            &c,
            &origin,
            TransportMethod::Sinkhorn { epsilon: Some(0.1) },
        )
        .unwrap()
        .distance;
        assert_abs_diff_eq!(d, c.w2_to_origin(), epsilon = 1e-9);
    }

    #[test]
    fn invalid_clouds_are_rejected() {
        assert!(ParticleCloud::uniform(vec![]).is_err());
        assert!(ParticleCloud::from_scalars(&[f64::NAN]).is_err());
        let pts = vec![DVector::from_element(1, 0.0), DVector::from_element(1, 1.0)];
        assert!(ParticleCloud::weighted(pts, vec![0.5, 0.6]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let c = ParticleCloud::weighted(
            vec![
                DVector::from_row_slice(&[1.5, -2.0]),
                DVector::from_row_slice(&[0.25, 3.0]),
            ],
            vec![0.25, 0.75],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_cloud_csv(&c, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x1,x2,weight"));
        let back = read_cloud_csv(buf.as_slice()).unwrap();
        assert_eq!(back, c);
    }
}
