//! Model parameters and latent labels.
//!
//! Groups are 0-based throughout the Rust API. Everything written to disk or
//! printed for people (label files, CSV headers, violation messages) uses
//! 1-based groups and nodes.

use serde::{Deserialize, Serialize};

use crate::covariates::dot;
use crate::error::{Error, Result};

/// The triple `(theta, beta, pi)`.
///
/// `theta` is the symmetric `K x K` matrix of block log-odds, `beta` the
/// covariate coefficients and `pi` the class probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params {
    k: usize,
    theta: Vec<f64>,
    beta: Vec<f64>,
    pi: Vec<f64>,
}

impl Params {
    /// `theta` is row-major `k * k`.
    pub fn new(k: usize, theta: Vec<f64>, beta: Vec<f64>, pi: Vec<f64>) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("K must be at least 1".into()));
        }
        if theta.len() != k * k {
            return Err(Error::DimensionMismatch {
                what: "theta",
                expected: k * k,
                found: theta.len(),
            });
        }
        if pi.len() != k {
            return Err(Error::DimensionMismatch {
                what: "pi",
                expected: k,
                found: pi.len(),
            });
        }
        Ok(Self { k, theta, beta, pi })
    }

    pub fn from_rows(theta: &[Vec<f64>], beta: Vec<f64>, pi: Vec<f64>) -> Result<Self> {
        let k = theta.len();
        let mut flat = Vec::with_capacity(k * k);
        for row in theta {
            if row.len() != k {
                return Err(Error::DimensionMismatch {
                    what: "theta row",
                    expected: k,
                    found: row.len(),
                });
            }
            flat.extend_from_slice(row);
        }
        Self::new(k, flat, beta, pi)
    }

    /// Uniform `pi`, zero `theta` and `beta`.
    pub fn zeros(k: usize, p: usize) -> Self {
        Self {
            k,
            theta: vec![0.0; k * k],
            beta: vec![0.0; p],
            pi: vec![1.0 / k as f64; k],
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn p(&self) -> usize {
        self.beta.len()
    }

    #[inline]
    pub fn theta(&self, a: usize, b: usize) -> f64 {
        self.theta[a * self.k + b]
    }

    /// Row-major `theta`.
    pub fn theta_flat(&self) -> &[f64] {
        &self.theta
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    /// Sets `theta[a][b]` and `theta[b][a]`.
    pub fn set_theta(&mut self, a: usize, b: usize, value: f64) {
        self.theta[a * self.k + b] = value;
        self.theta[b * self.k + a] = value;
    }

    pub fn set_beta(&mut self, beta: Vec<f64>) -> Result<()> {
        if beta.len() != self.beta.len() {
            return Err(Error::DimensionMismatch {
                what: "beta",
                expected: self.beta.len(),
                found: beta.len(),
            });
        }
        self.beta = beta;
        Ok(())
    }

    pub fn set_pi(&mut self, pi: Vec<f64>) -> Result<()> {
        if pi.len() != self.k {
            return Err(Error::DimensionMismatch {
                what: "pi",
                expected: self.k,
                found: pi.len(),
            });
        }
        self.pi = pi;
        Ok(())
    }

    /// `theta[a][b] + beta . x`, the log-odds of an edge between a node of
    /// group `a` and a node of group `b` with covariates `x`.
    pub fn edge_logit(&self, a: usize, b: usize, x: &[f64]) -> Result<f64> {
        if x.len() != self.beta.len() {
            return Err(Error::DimensionMismatch {
                what: "covariate vector",
                expected: self.beta.len(),
                found: x.len(),
            });
        }
        if a >= self.k || b >= self.k {
            return Err(Error::InvalidArgument(format!(
                "group pair ({a}, {b}) out of range for K = {}",
                self.k
            )));
        }
        Ok(self.theta(a, b) + dot(&self.beta, x))
    }

    /// Relabels groups: group `a` of the result is group `perm[a]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let k = self.k;
        let mut theta = vec![0.0; k * k];
        for a in 0..k {
            for b in 0..k {
                theta[a * k + b] = self.theta(perm[a], perm[b]);
            }
        }
        Self {
            k,
            theta,
            beta: self.beta.clone(),
            pi: perm.iter().map(|&a| self.pi[a]).collect(),
        }
    }

    /// Largest absolute coordinate difference over all three blocks.
    pub fn max_abs_diff(&self, other: &Params) -> f64 {
        let d = |a: &[f64], b: &[f64]| {
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max)
        };
        d(&self.theta, &other.theta)
            .max(d(&self.beta, &other.beta))
            .max(d(&self.pi, &other.pi))
    }
}

/// Latent group memberships, one 0-based group per node.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Labels {
    k: usize,
    z: Vec<u32>,
}

impl Labels {
    pub fn new(k: usize, z: Vec<usize>) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("K must be at least 1".into()));
        }
        if let Some((node, &g)) = z.iter().enumerate().find(|(_, &g)| g >= k) {
            return Err(Error::InvalidArgument(format!(
                "node {} has group {} outside 1..={k}",
                node + 1,
                g + 1
            )));
        }
        Ok(Self {
            k,
            z: z.into_iter().map(|g| g as u32).collect(),
        })
    }

    /// Labels given with groups numbered from 1.
    pub fn from_one_based(k: usize, z: &[usize]) -> Result<Self> {
        if let Some(node) = z.iter().position(|&g| g == 0) {
            return Err(Error::InvalidArgument(format!(
                "node {} has group 0; groups are numbered from 1",
                node + 1
            )));
        }
        Self::new(k, z.iter().map(|&g| g - 1).collect())
    }

    /// All nodes in group 0.
    pub fn constant(k: usize, n: usize) -> Self {
        Self { k, z: vec![0; n] }
    }

    pub fn to_one_based(&self) -> Vec<usize> {
        self.z.iter().map(|&g| g as usize + 1).collect()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> usize {
        self.z[i] as usize
    }

    #[inline]
    pub fn set(&mut self, i: usize, g: usize) {
        debug_assert!(g < self.k);
        self.z[i] = g as u32;
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.z
    }

    /// Number of nodes in each group.
    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.k];
        for &g in &self.z {
            counts[g as usize] += 1;
        }
        counts
    }

    /// Labels of `nodes`, in order.
    pub fn restrict(&self, nodes: &[usize]) -> Labels {
        Labels {
            k: self.k,
            z: nodes.iter().map(|&i| self.z[i]).collect(),
        }
    }

    /// Applies `g -> map[g]` to every label.
    pub fn relabeled(&self, map: &[usize]) -> Labels {
        Labels {
            k: self.k,
            z: self.z.iter().map(|&g| map[g as usize] as u32).collect(),
        }
    }
}
