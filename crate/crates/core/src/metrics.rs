//! Partition agreement and parameter error metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Labels, Params};

/// Largest `K` for which label alignment enumerates every permutation.
pub const EXHAUSTIVE_ALIGNMENT_K: usize = 8;

/// How mutual information is normalized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum NmiNormalization {
    /// `2 I / (H + H')`: 1 for identical partitions.
    #[default]
    Symmetric,
    /// `I / (H + H')`: at most 1/2.
    Halved,
}

fn contingency(c1: &[u32], c2: &[u32]) -> (Vec<f64>, usize, usize) {
    let k1 = c1.iter().map(|&g| g as usize + 1).max().unwrap_or(0);
    let k2 = c2.iter().map(|&g| g as usize + 1).max().unwrap_or(0);
    let mut table = vec![0.0; k1 * k2];
    for (&a, &b) in c1.iter().zip(c2) {
        table[a as usize * k2 + b as usize] += 1.0;
    }
    (table, k1, k2)
}

fn entropy(counts: impl Iterator<Item = f64>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0.0)
        .map(|c| {
            let p = c / n;
            -p * p.ln()
        })
        .sum()
}

fn check_lengths(c1: &Labels, c2: &Labels) -> Result<()> {
    if c1.len() != c2.len() {
        return Err(Error::DimensionMismatch {
            what: "partition length",
            expected: c1.len(),
            found: c2.len(),
        });
    }
    Ok(())
}

/// Normalized mutual information, `2 I(C, C') / (H(C) + H(C'))`. Two
/// single-block partitions score 1.
pub fn nmi(c1: &Labels, c2: &Labels) -> Result<f64> {
    nmi_with(c1, c2, NmiNormalization::Symmetric)
}

pub fn nmi_with(c1: &Labels, c2: &Labels, norm: NmiNormalization) -> Result<f64> {
    check_lengths(c1, c2)?;
    let n = c1.len() as f64;
    if c1.is_empty() {
        return Ok(1.0);
    }
    let (table, k1, k2) = contingency(c1.as_slice(), c2.as_slice());
    let rows: Vec<f64> = (0..k1).map(|a| table[a * k2..(a + 1) * k2].iter().sum()).collect();
    let cols: Vec<f64> = (0..k2).map(|b| (0..k1).map(|a| table[a * k2 + b]).sum()).collect();
    let h1 = entropy(rows.iter().copied(), n);
    let h2 = entropy(cols.iter().copied(), n);
    let scale = match norm {
        NmiNormalization::Symmetric => 2.0,
        NmiNormalization::Halved => 1.0,
    };
    if h1 + h2 == 0.0 {
        return Ok(scale / 2.0);
    }
    let mut mi = 0.0;
    for a in 0..k1 {
        for b in 0..k2 {
            let c = table[a * k2 + b];
            if c > 0.0 {
                mi += c / n * (c * n / (rows[a] * cols[b])).ln();
            }
        }
    }
    Ok((scale * mi / (h1 + h2)).clamp(0.0, scale / 2.0))
}

/// Minimal matching distance: the smallest fraction of nodes whose labels
/// disagree over all one-to-one relabelings of `c2`.
pub fn mmd(c1: &Labels, c2: &Labels) -> Result<f64> {
    check_lengths(c1, c2)?;
    if c1.is_empty() {
        return Ok(0.0);
    }
    let (table, k1, k2) = contingency(c1.as_slice(), c2.as_slice());
    let k = k1.max(k2);
    let mut cost = vec![0.0; k * k];
    for a in 0..k1 {
        for b in 0..k2 {
            cost[a * k + b] = -table[a * k2 + b];
        }
    }
    let assignment = hungarian(&cost, k);
    let agree: f64 = assignment
        .iter()
        .enumerate()
        .map(|(a, &b)| -cost[a * k + b])
        .sum();
    Ok(1.0 - agree / c1.len() as f64)
}

/// Minimum-cost perfect assignment on a square `k x k` cost matrix
/// (row-major). Returns the column assigned to each row.
pub fn hungarian(cost: &[f64], k: usize) -> Vec<usize> {
    // Potentials method on 1-based arrays with a dummy column 0.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; k + 1];
    let mut v = vec![0.0; k + 1];
    let mut p = vec![0usize; k + 1];
    let mut way = vec![0usize; k + 1];
    for i in 1..=k {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; k + 1];
        let mut used = vec![false; k + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=k {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * k + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=k {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; k];
    for j in 1..=k {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Calls `f` on every permutation of `0..k` (Heap's algorithm).
pub(crate) fn for_each_permutation(k: usize, mut f: impl FnMut(&[usize])) {
    let mut perm: Vec<usize> = (0..k).collect();
    let mut c = vec![0; k];
    f(&perm);
    let mut i = 0;
    while i < k {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            f(&perm);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

/// The relabeling `perm` minimizing the summed squared distance between
/// `estimate.permuted(perm)` and `reference` over theta and pi. Pi matters
/// when the reference repeats blocks, as in designs with a constant
/// diagonal. Exhaustive up to [`EXHAUSTIVE_ALIGNMENT_K`] groups, greedy on
/// the diagonal beyond.
pub fn align_to(estimate: &Params, reference: &Params) -> Vec<usize> {
    let k = estimate.k();
    if k <= EXHAUSTIVE_ALIGNMENT_K {
        let mut best = (f64::INFINITY, (0..k).collect::<Vec<_>>());
        for_each_permutation(k, |perm| {
            let mut d = 0.0;
            for a in 0..k {
                for b in 0..k {
                    let diff = estimate.theta(perm[a], perm[b]) - reference.theta(a, b);
                    d += diff * diff;
                }
                d += (estimate.pi()[perm[a]] - reference.pi()[a]).powi(2);
            }
            if d < best.0 {
                best = (d, perm.to_vec());
            }
        });
        best.1
    } else {
        let mut perm = vec![usize::MAX; k];
        let mut taken = vec![false; k];
        for _ in 0..k {
            let mut best = (f64::INFINITY, 0, 0);
            for a in (0..k).filter(|&a| perm[a] == usize::MAX) {
                for b in (0..k).filter(|&b| !taken[b]) {
                    let d = (estimate.theta(b, b) - reference.theta(a, a)).abs();
                    if d < best.0 {
                        best = (d, a, b);
                    }
                }
            }
            perm[best.1] = best.2;
            taken[best.2] = true;
        }
        perm
    }
}

/// Root-mean-square error and signed mean bias of each parameter block.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamError {
    pub err_theta: f64,
    pub err_pi: f64,
    pub err_beta: f64,
    pub bias_theta: f64,
    pub bias_pi: f64,
    pub bias_beta: f64,
}

fn rmse_bias(est: &[f64], truth: &[f64]) -> (f64, f64) {
    if est.is_empty() {
        return (0.0, 0.0);
    }
    let n = est.len() as f64;
    let (sq, sum) = est
        .iter()
        .zip(truth)
        .fold((0.0, 0.0), |(sq, sum), (e, t)| (sq + (e - t) * (e - t), sum + (e - t)));
    ((sq / n).sqrt(), sum / n)
}

/// Errors of `estimate` against `truth`, optionally after relabeling the
/// estimate to best match the truth's theta.
pub fn param_error(estimate: &Params, truth: &Params, align: bool) -> Result<ParamError> {
    if estimate.k() != truth.k() || estimate.p() != truth.p() {
        return Err(Error::DimensionMismatch {
            what: "parameter dimensions",
            expected: truth.k(),
            found: estimate.k(),
        });
    }
    let est = if align {
        estimate.permuted(&align_to(estimate, truth))
    } else {
        estimate.clone()
    };
    let (err_theta, bias_theta) = rmse_bias(est.theta_flat(), truth.theta_flat());
    let (err_pi, bias_pi) = rmse_bias(est.pi(), truth.pi());
    let (err_beta, bias_beta) = rmse_bias(est.beta(), truth.beta());
    Ok(ParamError {
        err_theta,
        err_pi,
        err_beta,
        bias_theta,
        bias_pi,
        bias_beta,
    })
}
