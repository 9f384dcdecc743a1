use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const NORM_TOL: f64 = 1e-6;

/// Unit-norm semantic feature vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Normalizes `v`; fails on empty, zero or non-finite input.
    pub fn normalized(v: Vec<f64>) -> Result<Self> {
        let n = norm(&v);
        if v.is_empty() || !n.is_finite() || n == 0.0 {
            return Err(Error::InvalidArgument(
                "embedding must be a non-zero finite vector".into(),
            ));
        }
        Ok(Self(v.into_iter().map(|x| x / n).collect()))
    }

    /// Wraps a vector that must already be unit norm.
    pub fn from_unit(v: Vec<f64>) -> Result<Self> {
        let n = norm(&v);
        if (n - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidArgument(format!(
                "embedding norm {n} is not 1"
            )));
        }
        Ok(Self(v))
    }

    pub fn basis(dim: usize, axis: usize) -> Self {
        let mut v = vec![0.0; dim];
        v[axis] = 1.0;
        Self(v)
    }

    pub fn random<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            if let Ok(e) = Self::normalized(v) {
                return e;
            }
        }
    }

    /// Adds isotropic Gaussian noise and renormalizes.
    pub fn jittered<R: Rng + ?Sized>(&self, sigma: f64, rng: &mut R) -> Self {
        if sigma == 0.0 {
            return self.clone();
        }
        loop {
            let v: Vec<f64> = self
                .0
                .iter()
                .map(|&x| x + sigma * rng.sample::<f64, _>(StandardNormal))
                .collect();
            if let Ok(e) = Self::normalized(v) {
                return e;
            }
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    /// Cosine similarity of two unit vectors.
    pub fn dot(&self, other: &Embedding) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Deterministic orthonormal set (Gram-Schmidt over seeded Gaussian draws).
pub fn orthonormal_set<R: Rng + ?Sized>(count: usize, dim: usize, rng: &mut R) -> Result<Vec<Embedding>> {
    if count > dim {
        return Err(Error::InvalidArgument(format!(
            "cannot build {count} orthonormal vectors in dimension {dim}"
        )));
    }
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    while out.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for b in &out {
            let d: f64 = v.iter().zip(b).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(b).for_each(|(a, b)| *a -= d * b);
        }
        let n = norm(&v);
        if n > 1e-6 {
            out.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    Ok(out.into_iter().map(Embedding).collect())
}
