//! Dyadic covariates `X(i, j)`.
//!
//! Storing `n * n * p` reals is out of the question for networks with a few
//! thousand nodes, so covariates are served on demand. Every backend maps a
//! pair to a *code* in a finite alphabet of covariate vectors; the fitting
//! code works with codes and precomputed per-code logits.
//!
//! Backends:
//! * dense: an explicit (possibly asymmetric) table, interned on construction;
//! * attribute matcher: `X(i, j)_l = 1` when nodes `i` and `j` share the value
//!   of node attribute `l`;
//! * seeded Bernoulli: `X(i, j)_l ~ Bernoulli(q)` regenerated from a counter
//!   hash keyed on `(min(i, j), max(i, j), seed)`.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::rng::{splitmix64, unit_f64};

/// Largest dimension supported by the binary backends (alphabet of `2^p`).
pub const MAX_BINARY_DIM: usize = 16;

#[derive(Debug)]
enum Kind {
    Dense { n: usize, codes: Vec<u32> },
    Matcher { attrs: Vec<u32> },
    Seeded { q: f64, seed: u64 },
}

#[derive(Debug)]
struct Backend {
    n: usize,
    p: usize,
    /// Flat `alphabet_size * p` table of covariate vectors.
    alphabet: Vec<f64>,
    kind: Kind,
}

/// Symmetric dyadic covariate source shared by all fitting code.
///
/// Cloning is cheap. [`DyadCovariates::restrict`] produces a view on a node
/// subset that still queries the parent backend.
#[derive(Clone, Debug)]
pub struct DyadCovariates {
    backend: Arc<Backend>,
    view: Option<Arc<[u32]>>,
}

/// Which backend serves a provider.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackendKind {
    Dense,
    AttributeMatcher,
    SeededBernoulli,
}

impl DyadCovariates {
    /// No covariates (`p = 0`).
    pub fn none(n: usize) -> Self {
        Self::seeded_bernoulli(n, 0, 0.5, 0).expect("p = 0 is always valid")
    }

    /// Dense table built from a pair function. The function is called for
    /// every ordered pair `i != j`; the diagonal is never queried.
    pub fn dense_from_fn<F>(n: usize, p: usize, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, usize) -> Vec<f64>,
    {
        let mut intern: HashMap<Vec<u64>, u32> = HashMap::new();
        let mut alphabet: Vec<f64> = Vec::new();
        let mut codes = vec![0u32; n * n];
        let mut lookup = |x: &[f64], alphabet: &mut Vec<f64>| -> u32 {
            let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
            *intern.entry(key).or_insert_with(|| {
                let code = alphabet.len() / p;
                alphabet.extend_from_slice(x);
                code as u32
            })
        };
        // Code 0 is the zero vector so that diagonal entries are harmless.
        if p > 0 {
            lookup(&vec![0.0; p], &mut alphabet);
        }
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let x = f(i, j);
                if x.len() != p {
                    return Err(Error::DimensionMismatch {
                        what: "covariate vector",
                        expected: p,
                        found: x.len(),
                    });
                }
                if p > 0 {
                    codes[i * n + j] = lookup(&x, &mut alphabet);
                }
            }
        }
        Ok(Self::from_backend(Backend {
            n,
            p,
            alphabet,
            kind: Kind::Dense { n, codes },
        }))
    }

    /// Dense table from a flat row-major `n * n * p` array.
    pub fn dense(n: usize, p: usize, values: &[f64]) -> Result<Self> {
        if values.len() != n * n * p {
            return Err(Error::DimensionMismatch {
                what: "dense covariate array",
                expected: n * n * p,
                found: values.len(),
            });
        }
        Self::dense_from_fn(n, p, |i, j| values[(i * n + j) * p..(i * n + j + 1) * p].to_vec())
    }

    /// Shared-attribute indicators. `attributes[i]` holds the `p` category
    /// ids of node `i`.
    pub fn attribute_matcher(attributes: &[Vec<u32>]) -> Result<Self> {
        let n = attributes.len();
        let p = attributes.first().map_or(0, Vec::len);
        check_binary_dim(p)?;
        let mut attrs = Vec::with_capacity(n * p);
        for (i, row) in attributes.iter().enumerate() {
            if row.len() != p {
                return Err(Error::InvalidArgument(format!(
                    "node {i} has {} attributes, expected {p}",
                    row.len()
                )));
            }
            attrs.extend_from_slice(row);
        }
        Ok(Self::from_backend(Backend {
            n,
            p,
            alphabet: binary_alphabet(p),
            kind: Kind::Matcher { attrs },
        }))
    }

    /// Independent `Bernoulli(q)` components, regenerated from `seed`.
    pub fn seeded_bernoulli(n: usize, p: usize, q: f64, seed: u64) -> Result<Self> {
        check_binary_dim(p)?;
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::InvalidArgument(format!(
                "Bernoulli parameter {q} outside [0, 1]"
            )));
        }
        Ok(Self::from_backend(Backend {
            n,
            p,
            alphabet: binary_alphabet(p),
            kind: Kind::Seeded { q, seed },
        }))
    }

    fn from_backend(backend: Backend) -> Self {
        Self {
            backend: Arc::new(backend),
            view: None,
        }
    }

    /// Number of nodes this provider answers for.
    pub fn n(&self) -> usize {
        self.view.as_ref().map_or(self.backend.n, |v| v.len())
    }

    /// Covariate dimension `p`.
    pub fn p(&self) -> usize {
        self.backend.p
    }

    pub fn kind(&self) -> BackendKind {
        match self.backend.kind {
            Kind::Dense { .. } => BackendKind::Dense,
            Kind::Matcher { .. } => BackendKind::AttributeMatcher,
            Kind::Seeded { .. } => BackendKind::SeededBernoulli,
        }
    }

    /// Number of distinct covariate vectors a code can take.
    pub fn alphabet_size(&self) -> usize {
        self.backend
            .alphabet
            .len()
            .checked_div(self.backend.p)
            .unwrap_or(1)
    }

    /// Covariate vector for a code.
    pub fn pattern(&self, code: u32) -> &[f64] {
        let p = self.backend.p;
        let c = code as usize;
        &self.backend.alphabet[c * p..(c + 1) * p]
    }

    /// Code of the pair `(i, j)`. The diagonal maps to the zero vector.
    #[inline]
    pub fn code(&self, i: usize, j: usize) -> u32 {
        let (i, j) = match &self.view {
            Some(v) => (v[i] as usize, v[j] as usize),
            None => (i, j),
        };
        self.backend.code(i, j)
    }

    /// `X(i, j)`.
    pub fn covariate(&self, i: usize, j: usize) -> &[f64] {
        self.pattern(self.code(i, j))
    }

    /// `beta . x` for every code in the alphabet.
    pub fn offsets(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.alphabet_size() as u32)
            .map(|c| dot(self.pattern(c), beta))
            .collect()
    }

    /// View on `nodes`: node `u` of the view is node `nodes[u]` of `self`.
    pub fn restrict(&self, nodes: &[usize]) -> Self {
        let mapped: Vec<u32> = match &self.view {
            Some(v) => nodes.iter().map(|&u| v[u]).collect(),
            None => nodes.iter().map(|&u| u as u32).collect(),
        };
        Self {
            backend: Arc::clone(&self.backend),
            view: Some(mapped.into()),
        }
    }
}

impl Backend {
    #[inline]
    fn code(&self, i: usize, j: usize) -> u32 {
        if i == j {
            return 0;
        }
        match &self.kind {
            Kind::Dense { n, codes } => codes[i * n + j],
            Kind::Matcher { attrs } => {
                let p = self.p;
                let (a, b) = (&attrs[i * p..(i + 1) * p], &attrs[j * p..(j + 1) * p]);
                a.iter()
                    .zip(b)
                    .enumerate()
                    .fold(0u32, |code, (l, (x, y))| code | (u32::from(x == y) << l))
            }
            Kind::Seeded { q, seed } => {
                let (lo, hi) = if i < j { (i, j) } else { (j, i) };
                let mut h = splitmix64(seed ^ splitmix64(lo as u64) ^ (hi as u64).rotate_left(32));
                let mut code = 0u32;
                for l in 0..self.p {
                    h = splitmix64(h);
                    if unit_f64(h) < *q {
                        code |= 1 << l;
                    }
                }
                code
            }
        }
    }
}

fn check_binary_dim(p: usize) -> Result<()> {
    if p > MAX_BINARY_DIM {
        return Err(Error::InvalidArgument(format!(
            "binary covariate dimension {p} exceeds {MAX_BINARY_DIM}"
        )));
    }
    Ok(())
}

fn binary_alphabet(p: usize) -> Vec<f64> {
    let size = 1usize << p;
    let mut out = Vec::with_capacity(size * p);
    for code in 0..size {
        for l in 0..p {
            out.push(((code >> l) & 1) as f64);
        }
    }
    out
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matcher_indicators() {
        let cov = DyadCovariates::attribute_matcher(&[vec![202, 1], vec![202, 0], vec![203, 1]])
            .unwrap();
        assert_eq!(cov.covariate(0, 1), &[1.0, 0.0]);
        assert_eq!(cov.covariate(0, 2), &[0.0, 1.0]);
        assert_eq!(cov.covariate(1, 2), &[0.0, 0.0]);
    }

    #[test]
    fn seeded_is_symmetric_and_deterministic() {
        let cov = DyadCovariates::seeded_bernoulli(50, 3, 0.5, 7).unwrap();
        for i in 0..50 {
            for j in 0..50 {
                assert_eq!(cov.code(i, j), cov.code(j, i));
            }
        }
        let again = DyadCovariates::seeded_bernoulli(50, 3, 0.5, 7).unwrap();
        assert!((0..50).all(|j| cov.code(3, j) == again.code(3, j)));
    }

    #[test]
    fn seeded_frequency() {
        let n = 400;
        let cov = DyadCovariates::seeded_bernoulli(n, 3, 0.3, 11).unwrap();
        let mut ones = [0usize; 3];
        let mut pairs = 0usize;
        for i in 0..n {
            for j in (i + 1)..n {
                pairs += 1;
                for (l, &x) in cov.covariate(i, j).iter().enumerate() {
                    ones[l] += x as usize;
                }
            }
        }
        for count in ones {
            let freq = count as f64 / pairs as f64;
            assert!((freq - 0.3).abs() < 0.01, "frequency {freq}");
        }
    }

    #[test]
    fn dense_interning() {
        let cov = DyadCovariates::dense_from_fn(3, 1, |i, j| vec![(i + j) as f64]).unwrap();
        assert_eq!(cov.covariate(0, 2), &[2.0]);
        assert_eq!(cov.covariate(2, 0), &[2.0]);
        assert_eq!(cov.covariate(1, 1), &[0.0]);
        assert_eq!(cov.alphabet_size(), 4);
    }

    #[test]
    fn views_compose() {
        let cov = DyadCovariates::seeded_bernoulli(10, 2, 0.5, 3).unwrap();
        let view = cov.restrict(&[9, 4, 2]);
        let nested = view.restrict(&[2, 0]);
        assert_eq!(view.n(), 3);
        assert_eq!(view.code(0, 1), cov.code(9, 4));
        assert_eq!(nested.code(0, 1), cov.code(2, 9));
    }

    #[test]
    fn no_covariates() {
        let cov = DyadCovariates::none(4);
        assert_eq!(cov.p(), 0);
        assert_eq!(cov.alphabet_size(), 1);
        assert!(cov.covariate(0, 1).is_empty());
        assert_eq!(cov.offsets(&[]), vec![0.0]);
    }
}
