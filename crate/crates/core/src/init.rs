//! Starting labels and parameters.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;

use crate::covariates::DyadCovariates;
use crate::error::{Error, Result};
use crate::likelihood::logit;
use crate::mstep::{update_theta_beta, QFunction};
use crate::network::Network;
use crate::params::{Labels, Params};
use crate::rng::{RngSpec, StreamRng};

/// Default regularization strength.
pub const DEFAULT_TAU: f64 = 0.25;
/// k-means restarts.
pub const KMEANS_RESTARTS: usize = 20;
/// Networks up to this size are decomposed densely.
const DENSE_LIMIT: usize = 400;
/// Pairs used by the initial logistic regression before subsampling.
const REGRESSION_PAIR_CAP: usize = 2_000_000;

/// Symmetrically normalized `A + tau * (lambda / n) * (J - I)` applied to a
/// block of vectors.
struct Operator<'a> {
    network: &'a Network,
    c: f64,
    inv_sqrt_deg: Vec<f64>,
}

impl<'a> Operator<'a> {
    fn new(network: &'a Network, tau: f64) -> Self {
        let n = network.n();
        let c = tau * network.average_degree() / n as f64;
        let inv_sqrt_deg = (0..n)
            .map(|i| {
                let d = network.degree(i) as f64 + c * (n - 1) as f64;
                if d > 0.0 {
                    1.0 / d.sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        Self {
            network,
            c,
            inv_sqrt_deg,
        }
    }

    /// `(L x + x) / 2`, which has the spectrum of `L` mapped into `[0, 1]`.
    fn apply_shifted(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let n = x.nrows();
        let mut out = DMatrix::zeros(n, x.ncols());
        for col in 0..x.ncols() {
            let y: Vec<f64> = (0..n).map(|i| x[(i, col)] * self.inv_sqrt_deg[i]).collect();
            let total: f64 = y.iter().sum();
            for i in 0..n {
                let mut s = self.c * (total - y[i]);
                for &j in self.network.neighbors(i) {
                    s += y[j as usize];
                }
                out[(i, col)] = 0.5 * (s * self.inv_sqrt_deg[i] + x[(i, col)]);
            }
        }
        out
    }

    fn dense(&self) -> DMatrix<f64> {
        let n = self.network.n();
        let mut m = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                0.0
            } else {
                self.c * self.inv_sqrt_deg[i] * self.inv_sqrt_deg[j]
            }
        });
        for i in 0..n {
            for &j in self.network.neighbors(i) {
                m[(i, j as usize)] += self.inv_sqrt_deg[i] * self.inv_sqrt_deg[j as usize];
            }
        }
        m
    }
}

/// Top-`k` eigenvectors (by algebraic eigenvalue) as the columns of an
/// `n x k` matrix.
fn leading_eigenvectors(op: &Operator<'_>, k: usize, rng: &mut StreamRng) -> DMatrix<f64> {
    let n = op.network.n();
    if n <= DENSE_LIMIT {
        let eig = SymmetricEigen::new(op.dense());
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        return DMatrix::from_fn(n, k, |i, c| eig.eigenvectors[(i, order[c])]);
    }
    let block = (k + 5).min(n);
    let mut x = DMatrix::from_fn(n, block, |_, _| rng.random::<f64>() - 0.5);
    x = x.qr().q();
    let mut prev = vec![f64::INFINITY; block];
    for _ in 0..1000 {
        let y = op.apply_shifted(&x);
        let ritz = (x.transpose() * &y).symmetric_eigenvalues();
        x = y.qr().q();
        let mut sorted: Vec<f64> = ritz.iter().copied().collect();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let moved = sorted
            .iter()
            .zip(&prev)
            .take(k)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        prev = sorted;
        if moved < 1e-10 {
            break;
        }
    }
    let y = op.apply_shifted(&x);
    let eig = SymmetricEigen::new(x.transpose() * y);
    let mut order: Vec<usize> = (0..block).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = DMatrix::from_fn(block, k, |r, c| eig.eigenvectors[(r, order[c])]);
    x * top
}

/// Regularized spectral clustering: leading `k` eigenvectors of the
/// normalized perturbed adjacency, rows scaled to unit length, then k-means
/// with k-means++ seeding and [`KMEANS_RESTARTS`] restarts.
pub fn spectral_init(network: &Network, k: usize, tau: f64, seed: u64) -> Result<Labels> {
    let n = network.n();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "cannot split {n} nodes into {k} groups"
        )));
    }
    if !(tau >= 0.0) {
        return Err(Error::InvalidArgument("tau must be non-negative".into()));
    }
    if k == 1 {
        return Ok(Labels::constant(1, n));
    }
    let spec = RngSpec::new(seed);
    let op = Operator::new(network, tau);
    let vectors = leading_eigenvectors(&op, k, &mut spec.stream("spectral", 0, 0, 0));
    let mut rows = vec![0.0; n * k];
    for i in 0..n {
        let norm = (0..k).map(|c| vectors[(i, c)].powi(2)).sum::<f64>().sqrt();
        for c in 0..k {
            rows[i * k + c] = if norm > 0.0 { vectors[(i, c)] / norm } else { 0.0 };
        }
    }
    let z = kmeans(&rows, k, k, KMEANS_RESTARTS, &spec);
    Labels::new(k, canonical(&z))
}

/// Renumbers clusters in order of first appearance.
fn canonical(z: &[usize]) -> Vec<usize> {
    let mut map = vec![usize::MAX; z.iter().max().map_or(0, |m| m + 1)];
    let mut next = 0;
    z.iter()
        .map(|&g| {
            if map[g] == usize::MAX {
                map[g] = next;
                next += 1;
            }
            map[g]
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Best-of-`restarts` Lloyd's algorithm on `points` (row-major, `dim`
/// columns).
pub(crate) fn kmeans(points: &[f64], dim: usize, k: usize, restarts: usize, spec: &RngSpec) -> Vec<usize> {
    let runs: Vec<(f64, Vec<usize>)> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = spec.stream("kmeans", 0, 0, r as u64);
            lloyd(points, dim, k, &mut rng)
        })
        .collect();
    let mut best = 0;
    for (r, run) in runs.iter().enumerate() {
        if run.0 < runs[best].0 {
            best = r;
        }
    }
    runs.into_iter().nth(best).map(|r| r.1).unwrap_or_default()
}

fn lloyd(points: &[f64], dim: usize, k: usize, rng: &mut StreamRng) -> (f64, Vec<usize>) {
    let n = points.len() / dim;
    let point = |i: usize| &points[i * dim..(i + 1) * dim];
    // k-means++ seeding.
    let mut centers = Vec::with_capacity(k * dim);
    centers.extend_from_slice(point(rng.random_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(point(i), &centers[0..dim])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            d2.iter()
                .position(|&d| {
                    acc += d;
                    u < acc
                })
                .unwrap_or(n - 1)
        } else {
            rng.random_range(0..n)
        };
        let start = centers.len();
        centers.extend_from_slice(point(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(point(i), &centers[start..start + dim]));
        }
    }

    let mut assign = vec![usize::MAX; n];
    for _ in 0..300 {
        let mut changed = false;
        for (i, a) in assign.iter_mut().enumerate() {
            let best = (0..k)
                .map(|c| (sq_dist(point(i), &centers[c * dim..(c + 1) * dim]), c))
                .fold((f64::INFINITY, 0), |b, x| if x.0 < b.0 { x } else { b })
                .1;
            if *a != best {
                *a = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &a) in assign.iter().enumerate() {
            counts[a] += 1;
            for (s, x) in sums[a * dim..(a + 1) * dim].iter_mut().zip(point(i)) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Reseed an empty cluster at the point farthest from its center.
                let far = (0..n)
                    .map(|i| (sq_dist(point(i), &centers[assign[i] * dim..(assign[i] + 1) * dim]), i))
                    .fold((f64::NEG_INFINITY, 0), |b, x| if x.0 > b.0 { x } else { b })
                    .1;
                centers[c * dim..(c + 1) * dim].copy_from_slice(point(far));
            } else {
                for t in 0..dim {
                    centers[c * dim + t] = sums[c * dim + t] / counts[c] as f64;
                }
            }
        }
    }
    let inertia = assign
        .iter()
        .enumerate()
        .map(|(i, &a)| sq_dist(point(i), &centers[a * dim..(a + 1) * dim]))
        .sum();
    (inertia, assign)
}

/// Starting parameters from starting labels: class proportions, logit block
/// densities and a pooled logistic regression of edges on covariates.
pub fn init_params(network: &Network, covariates: &DyadCovariates, labels: &Labels) -> Result<Params> {
    let n = network.n();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            what: "label vector length",
            expected: n,
            found: labels.len(),
        });
    }
    if covariates.n() != n {
        return Err(Error::DimensionMismatch {
            what: "covariate provider node count",
            expected: n,
            found: covariates.n(),
        });
    }
    let k = labels.k();
    let sizes: Vec<f64> = labels.counts().into_iter().map(|c| c as f64).collect();

    let floor = 0.5 / n as f64;
    let raw: Vec<f64> = sizes.iter().map(|&c| (c / n as f64).max(floor)).collect();
    let total: f64 = raw.iter().sum();
    let pi: Vec<f64> = raw.iter().map(|p| p / total).collect();

    let mut edges = vec![0.0; k * k];
    for (i, j) in network.edges() {
        let (a, b) = (labels.get(i), labels.get(j));
        edges[a * k + b] += 1.0;
        edges[b * k + a] += 1.0;
    }
    let all_pairs = (n * n.saturating_sub(1)) as f64;
    let global = if all_pairs > 0.0 {
        2.0 * network.edge_count() as f64 / all_pairs
    } else {
        0.5
    };
    let clamp = |d: f64, pairs: f64| {
        let eps = 0.5 / pairs.max(1.0);
        d.clamp(eps, 1.0 - eps)
    };
    let mut theta = vec![0.0; k * k];
    for a in 0..k {
        for b in 0..k {
            let pairs = if a == b {
                sizes[a] * (sizes[a] - 1.0)
            } else {
                sizes[a] * sizes[b]
            };
            theta[a * k + b] = if pairs > 0.0 {
                logit(clamp(edges[a * k + b] / pairs, pairs))
            } else {
                logit(clamp(global, all_pairs))
            };
        }
    }

    let beta = if covariates.p() == 0 {
        Vec::new()
    } else {
        pooled_regression(network, covariates)?
    };
    Params::new(k, theta, beta, pi)
}

/// Intercept-plus-covariates logistic regression of `a_ij` on `X(i, j)`,
/// returning the covariate coefficients.
fn pooled_regression(network: &Network, covariates: &DyadCovariates) -> Result<Vec<f64>> {
    let n = network.n();
    let codes = covariates.alphabet_size();
    let mut edges = vec![0.0; codes];
    let mut weights = vec![0.0; codes];
    let pairs = n * n.saturating_sub(1) / 2;
    if pairs <= REGRESSION_PAIR_CAP {
        for i in 0..n {
            for j in (i + 1)..n {
                weights[covariates.code(i, j) as usize] += 1.0;
            }
        }
        for (i, j) in network.edges() {
            edges[covariates.code(i, j) as usize] += 1.0;
        }
    } else {
        // Edges exactly; non-edges from a uniform pair sample, scaled up.
        let mut rng = RngSpec::new(n as u64).stream("regression", 0, 0, 0);
        let mut non_edges = vec![0.0; codes];
        let mut drawn = 0usize;
        while drawn < REGRESSION_PAIR_CAP {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if i == j {
                continue;
            }
            drawn += 1;
            if !network.has_edge(i, j) {
                non_edges[covariates.code(i, j) as usize] += 1.0;
            }
        }
        let scale = (pairs - network.edge_count()) as f64 / non_edges.iter().sum::<f64>().max(1.0);
        for (i, j) in network.edges() {
            let c = covariates.code(i, j) as usize;
            edges[c] += 1.0;
            weights[c] += 1.0;
        }
        for (w, ne) in weights.iter_mut().zip(&non_edges) {
            *w += ne * scale;
        }
    }
    let q = QFunction::from_code_tallies(covariates, edges, weights);
    let fit = update_theta_beta(&q, &Params::zeros(1, covariates.p()))?;
    Ok(fit.params.beta().to_vec())
}
