//! Couplings `(xi, xi')` of two random variables on a common index set,
//! represented as equal-size particle clouds where particle `i` of one
//! cloud is paired with particle `i` of the other.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::ParticleCloud;
use crate::model::Vector;
use crate::rng::particle_stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairScheme {
    /// `xi'` drawn independently of `xi`.
    Independent,
    /// `xi' = xi + c` for a deterministic vector `c`.
    Shift,
    /// `xi' = a xi` for a scalar `a`.
    Rescale,
    /// `xi'` the reflection of `xi` through the mean of its law.
    Antithetic,
    /// Cycle through the four schemes above by sample index.
    Mixed,
}

impl PairScheme {
    const CONCRETE: [PairScheme; 4] = [
        Self::Shift,
        Self::Independent,
        Self::Rescale,
        Self::Antithetic,
    ];

    /// Numeric tag used in witness data.
    pub fn code(self) -> f64 {
        match self {
            Self::Independent => 0.0,
            Self::Shift => 1.0,
            Self::Rescale => 2.0,
            Self::Antithetic => 3.0,
            Self::Mixed => 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingSampler {
    pub seed: u64,
    pub scheme: PairScheme,
    pub dim: usize,
    pub cloud_size: usize,
    /// Standard deviation of the mean of the base law.
    pub location_scale: f64,
    /// Standard deviation of the shift vector `c`.
    pub shift_scale: f64,
}

#[derive(Debug, Clone)]
pub struct CoupledPair {
    pub index: usize,
    pub scheme: PairScheme,
    pub xi: Vec<Vector>,
    pub xi_prime: Vec<Vector>,
}

fn normal_vector(rng: &mut ChaCha8Rng, len: usize) -> Vector {
    Vector::from_fn(len, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub(crate) fn rows(points: &[Vector]) -> Vec<Vec<f64>> {
    points.iter().map(|p| p.iter().copied().collect()).collect()
}

impl CoupledPair {
    pub fn clouds(&self) -> Result<(ParticleCloud, ParticleCloud)> {
        Ok((
            ParticleCloud::uniform(self.xi.clone())?,
            ParticleCloud::uniform(self.xi_prime.clone())?,
        ))
    }

    /// `E|xi' - xi|^2` under the coupling.
    pub fn distance_squared(&self) -> f64 {
        self.xi
            .iter()
            .zip(&self.xi_prime)
            .map(|(a, b)| (b - a).norm_squared())
            .sum::<f64>()
            / self.xi.len() as f64
    }

    pub fn rows(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        (rows(&self.xi), rows(&self.xi_prime))
    }
}

impl CouplingSampler {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self {
            seed,
            scheme: PairScheme::Mixed,
            dim,
            cloud_size: 64,
            location_scale: 1.0,
            shift_scale: 1.0,
        }
    }

    pub fn with_scheme(mut self, scheme: PairScheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_cloud_size(mut self, size: usize) -> Self {
        self.cloud_size = size;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.cloud_size < 2 {
            return Err(Error::InvalidInput(
                "sampler needs dim >= 1 and cloud_size >= 2".into(),
            ));
        }
        if !(self.location_scale >= 0.0 && self.shift_scale > 0.0) {
            return Err(Error::InvalidInput(
                "sampler scales must be nonnegative, shift positive".into(),
            ));
        }
        Ok(())
    }

    /// Independent generator for auxiliary draws of sample `index`.
    pub fn rng(&self, index: usize, role: &str) -> ChaCha8Rng {
        particle_stream(self.seed, role, index)
    }

    /// The coupling for sample `index`; the same index always yields the
    /// same pair, whatever the total sample count.
    pub fn pair(&self, index: usize) -> CoupledPair {
        let mut rng = self.rng(index, "coupling");
        let scheme = match self.scheme {
            PairScheme::Mixed => PairScheme::CONCRETE[index % 4],
            s => s,
        };
        let n = self.dim;
        let mu = normal_vector(&mut rng, n) * self.location_scale;
        let spread = rng.random_range(0.5..1.5);
        let base: Vec<Vector> = (0..self.cloud_size)
            .map(|_| normal_vector(&mut rng, n))
            .collect();
        let xi: Vec<Vector> = base.iter().map(|z| &mu + z * spread).collect();
        let xi_prime = match scheme {
            PairScheme::Shift => {
                let c = normal_vector(&mut rng, n) * self.shift_scale;
                xi.iter().map(|x| x + &c).collect()
            }
            PairScheme::Rescale => {
                let a = rng.random_range(-1.5..2.5);
                xi.iter().map(|x| x * a).collect()
            }
            PairScheme::Antithetic => base.iter().map(|z| &mu - z * spread).collect(),
            _ => {
                let mu2 = normal_vector(&mut rng, n) * self.location_scale;
                let spread2 = rng.random_range(0.5..1.5);
                (0..self.cloud_size)
                    .map(|_| &mu2 + normal_vector(&mut rng, n) * spread2)
                    .collect()
            }
        };
        CoupledPair {
            index,
            scheme,
            xi,
            xi_prime,
        }
    }
}
