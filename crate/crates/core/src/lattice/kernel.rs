use crate::divergence::DivergenceSpec;
use crate::error::{Error, Result};

use super::{Lattice, PROBABILITY_TOLERANCE};

/// Randomized stopping time given by a stopping mass per node. Masses along
/// every root-to-leaf path sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomizedKernel {
    mass: Vec<f64>,
}

impl RandomizedKernel {
    pub fn new(lattice: &Lattice, mass: Vec<f64>) -> Result<Self> {
        if mass.len() != lattice.len() {
            return Err(Error::InvalidInput(format!(
                "kernel has {} masses but the lattice has {} nodes",
                mass.len(),
                lattice.len()
            )));
        }
        if let Some(id) = mass.iter().position(|&w| !(-1e-12..=1.0 + 1e-12).contains(&w)) {
            return Err(Error::MalformedLattice {
                node: id,
                reason: format!("stopping mass {} outside [0, 1]", mass[id]),
            });
        }
        let k = RandomizedKernel { mass };
        for (path, s) in lattice.paths().iter().zip(k.path_sums(lattice)) {
            if (s - 1.0).abs() > PROBABILITY_TOLERANCE {
                return Err(Error::MalformedLattice {
                    node: *path.last().expect("non-empty path"),
                    reason: format!("stopping masses along the path to this leaf sum to {s}"),
                });
            }
        }
        Ok(k)
    }

    pub(crate) fn new_unchecked(mass: Vec<f64>) -> Self {
        RandomizedKernel { mass }
    }

    pub fn masses(&self) -> &[f64] {
        &self.mass
    }

    /// Sum of masses along each root-to-leaf path, in [`Lattice::paths`] order.
    pub fn path_sums(&self, lattice: &Lattice) -> Vec<f64> {
        lattice
            .paths()
            .iter()
            .map(|p| p.iter().map(|&id| self.mass[id]).sum())
            .collect()
    }

    /// `lambda * self + (1 - lambda) * other`.
    pub fn mixture(&self, other: &RandomizedKernel, lambda: f64) -> Result<RandomizedKernel> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidInput(format!("mixture weight {lambda} outside [0, 1]")));
        }
        if self.mass.len() != other.mass.len() {
            return Err(Error::InvalidInput("kernels belong to different lattices".into()));
        }
        Ok(RandomizedKernel {
            mass: self
                .mass
                .iter()
                .zip(&other.mass)
                .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
                .collect(),
        })
    }
}

/// Discrete distribution with sorted, distinct support points.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution {
    support: Vec<f64>,
    probs: Vec<f64>,
}

impl EmpiricalDistribution {
    pub fn new(support: &[f64], probs: &[f64]) -> Result<Self> {
        if support.len() != probs.len() {
            return Err(Error::InvalidInput("support and probabilities differ in length".into()));
        }
        if support.iter().chain(probs).any(|v| !v.is_finite()) || probs.iter().any(|&p| p < 0.0) {
            return Err(Error::InvalidInput("distribution has invalid entries".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROBABILITY_TOLERANCE {
            return Err(Error::InvalidInput(format!("probabilities sum to {total}, not 1")));
        }
        let mut pairs: Vec<(f64, f64)> = support
            .iter()
            .copied()
            .zip(probs.iter().copied())
            .filter(|&(_, p)| p > 0.0)
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut s: Vec<f64> = Vec::with_capacity(pairs.len());
        let mut p: Vec<f64> = Vec::with_capacity(pairs.len());
        for (v, w) in pairs {
            if s.last() == Some(&v) {
                *p.last_mut().expect("paired") += w;
            } else {
                s.push(v);
                p.push(w);
            }
        }
        Ok(EmpiricalDistribution { support: s, probs: p })
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn expectation<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.support.iter().zip(&self.probs).map(|(&y, &p)| p * f(y)).sum()
    }

    /// `P(Y > t)`.
    pub fn survival(&self, t: f64) -> f64 {
        self.support
            .iter()
            .zip(&self.probs)
            .filter(|(&y, _)| y > t)
            .map(|(_, &p)| p)
            .sum()
    }

    /// Mixture law `lambda * self + (1 - lambda) * other`.
    pub fn mix(&self, other: &EmpiricalDistribution, lambda: f64) -> Result<Self> {
        let support: Vec<f64> = self.support.iter().chain(&other.support).copied().collect();
        let probs: Vec<f64> = self
            .probs
            .iter()
            .map(|p| lambda * p)
            .chain(other.probs.iter().map(|p| (1.0 - lambda) * p))
            .collect();
        EmpiricalDistribution::new(&support, &probs)
    }
}

/// Law of the stopped payoff `y_tau` under a randomized stopping time.
pub fn kernel_distribution(lattice: &Lattice, y: &[f64], kernel: &RandomizedKernel) -> Result<EmpiricalDistribution> {
    if y.len() != lattice.len() || kernel.mass.len() != lattice.len() {
        return Err(Error::InvalidInput("payoffs and kernel must match the lattice".into()));
    }
    let probs: Vec<f64> = lattice
        .reach()
        .iter()
        .zip(&kernel.mass)
        .map(|(r, w)| r * w.max(0.0))
        .collect();
    EmpiricalDistribution::new(y, &probs)
}

/// `E[phi*(x + y_tau)] - x` for a randomized stopping time.
pub fn kernel_objective(
    lattice: &Lattice,
    y: &[f64],
    kernel: &RandomizedKernel,
    spec: DivergenceSpec,
    x: f64,
) -> f64 {
    lattice
        .reach()
        .iter()
        .zip(&kernel.mass)
        .zip(y)
        .map(|((r, w), &v)| r * w * spec.phi_star(x + v))
        .sum::<f64>()
        - x
}

/// `phi*(x) - x + int_0^inf phi*'(x + t) P(Y > t) dt` for a non-negative
/// discrete `Y`, integrating the piecewise constant survival function
/// exactly. Equals `E[phi*(x + Y)] - x`.
pub fn tail_integral_objective(dist: &EmpiricalDistribution, spec: DivergenceSpec, x: f64) -> Result<f64> {
    if let Some(&y) = dist.support.first() {
        if y < 0.0 {
            return Err(Error::InvalidInput(format!(
                "tail integral form needs non-negative payoffs, found {y}"
            )));
        }
    }
    let mut total = spec.phi_star(x) - x;
    let mut survival: f64 = dist.probs.iter().sum();
    let mut left = 0.0;
    for (&y, &p) in dist.support.iter().zip(&dist.probs) {
        if y > left {
            total += survival * spec.derivative_integral(x + left, x + y);
            left = y;
        }
        survival -= p;
    }
    Ok(total)
}
