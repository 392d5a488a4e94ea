//! Reference computations shared by the integration suites. They are
//! written directly from the model definition and share no code with the
//! library's likelihood routines.
#![allow(dead_code)]

use rand::Rng;
use sbm_mcem::{DyadCovariates, Labels, Network, Params};

/// `log(1 + e^x)` written out with a plain branch.
pub fn log1pexp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Complete-data log-likelihood by a double loop over pairs.
pub fn naive_complete(params: &Params, net: &Network, cov: &DyadCovariates, z: &Labels) -> f64 {
    naive_edge_part(params, net, cov, z)
        + (0..z.len()).map(|i| params.pi()[z.get(i)].ln()).sum::<f64>()
}

pub fn naive_edge_part(params: &Params, net: &Network, cov: &DyadCovariates, z: &Labels) -> f64 {
    let n = net.n();
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let x = cov.covariate(i, j);
            let eta = params.theta(z.get(i), z.get(j))
                + params.beta().iter().zip(x).map(|(b, v)| b * v).sum::<f64>();
            let a = if net.has_edge(i, j) { 1.0 } else { 0.0 };
            total += a * eta - log1pexp(eta);
        }
    }
    total
}

/// Every labeling of `n` nodes into `k` groups, in base-`k` counting order.
pub fn all_labelings(n: usize, k: usize) -> Vec<Labels> {
    (0..k.pow(n as u32))
        .map(|mut code| {
            let z = (0..n)
                .map(|_| {
                    let g = code % k;
                    code /= k;
                    g
                })
                .collect();
            Labels::new(k, z).unwrap()
        })
        .collect()
}

/// Index of `z` in [`all_labelings`] order.
pub fn labeling_index(z: &Labels) -> usize {
    let k = z.k();
    z.as_slice().iter().rev().fold(0, |acc, &g| acc * k + g as usize)
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn random_network<R: Rng>(n: usize, density: f64, rng: &mut R) -> Network {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < density {
                edges.push((i, j));
            }
        }
    }
    Network::from_edges(n, edges).unwrap()
}

pub fn random_params<R: Rng>(k: usize, p: usize, rng: &mut R) -> Params {
    let mut theta = vec![0.0; k * k];
    for a in 0..k {
        for b in a..k {
            let v = rng.random_range(-3.0..1.0);
            theta[a * k + b] = v;
            theta[b * k + a] = v;
        }
    }
    let beta = (0..p).map(|_| rng.random_range(-1.5..1.5)).collect();
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
    let s: f64 = raw.iter().sum();
    Params::new(k, theta, beta, raw.iter().map(|r| r / s).collect()).unwrap()
}

pub fn random_labels<R: Rng>(k: usize, n: usize, rng: &mut R) -> Labels {
    Labels::new(k, (0..n).map(|_| rng.random_range(0..k)).collect()).unwrap()
}
