use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng;

const MAX_ATTEMPTS: usize = 10_000;

/// Global concept ids (their index) with latent prototypes.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptRegistry {
    dim: usize,
    prototypes: Vec<Vec<f64>>,
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

impl ConceptRegistry {
    /// Draws `n` prototypes from `scale · N(0, I)`, rejecting any closer than
    /// `margin` to one already accepted.
    pub fn generate(n: usize, dim: usize, scale: f64, margin: f64, seed: u64) -> Result<Self> {
        if dim == 0 || n == 0 {
            return Err(Error::InvalidConfig("registry needs n >= 1 and dim >= 1".into()));
        }
        let mut g = rng::stream(seed, &[0x5EED]);
        let mut prototypes: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut attempts = 0;
        while prototypes.len() < n {
            attempts += 1;
            if attempts > MAX_ATTEMPTS {
                return Err(Error::InvalidConfig(format!(
                    "cannot place {n} prototypes in {dim} dims with margin {margin}"
                )));
            }
            let p: Vec<f64> = (0..dim)
                .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut g))
                .collect();
            if prototypes.iter().all(|q| distance(q, &p) >= margin) {
                prototypes.push(p);
            }
        }
        Ok(Self { dim, prototypes })
    }

    pub fn from_prototypes(prototypes: Vec<Vec<f64>>) -> Result<Self> {
        let dim = prototypes.first().map_or(0, Vec::len);
        if dim == 0 || prototypes.iter().any(|p| p.len() != dim) {
            return Err(Error::InvalidConfig("prototypes must share a nonzero dim".into()));
        }
        Ok(Self { dim, prototypes })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    pub fn prototype(&self, concept: usize) -> Result<&[f64]> {
        self.prototypes
            .get(concept)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownConcept(concept))
    }

    pub fn min_pairwise_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                best = best.min(distance(&self.prototypes[i], &self.prototypes[j]));
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn respects_margin_and_is_seeded() {
        let a = ConceptRegistry::generate(12, 16, 1.0, 3.0, 9).unwrap();
        let b = ConceptRegistry::generate(12, 16, 1.0, 3.0, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.min_pairwise_distance() >= 3.0);
        assert!(matches!(a.prototype(12), Err(Error::UnknownConcept(12))));
    }

    #[test]
    fn impossible_margin_errors() {
        assert!(ConceptRegistry::generate(50, 2, 1.0, 100.0, 1).is_err());
    }
}
