//! Invariant checks over a full problem instance.

use std::fmt;

use crate::covariates::DyadCovariates;
use crate::network::Network;
use crate::params::{Labels, Params};

/// Largest network for which covariate symmetry is checked on every pair;
/// bigger networks are checked on a deterministic stride of rows.
const EXHAUSTIVE_PAIR_LIMIT: usize = 2_000;

/// A broken invariant. Nodes and groups are reported 1-based.
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    SelfLoop { node: usize },
    AsymmetricEdge { from: usize, to: usize },
    NeighborOutOfRange { node: usize, neighbor: usize },
    AsymmetricCovariate { i: usize, j: usize },
    NondeterministicCovariate { i: usize, j: usize },
    Dimension { what: &'static str, expected: usize, found: usize },
    AsymmetricTheta { a: usize, b: usize },
    NonFinite { what: &'static str, index: usize },
    PiNotPositive { class: usize, value: f64 },
    PiNotNormalized { sum: f64 },
    LabelOutOfRange { node: usize, label: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::SelfLoop { node } => write!(f, "self-loop at node {node}"),
            Violation::AsymmetricEdge { from, to } => {
                write!(f, "edge {from}-{to} present but {to}-{from} missing")
            }
            Violation::NeighborOutOfRange { node, neighbor } => {
                write!(f, "node {node} lists neighbor {neighbor} outside the network")
            }
            Violation::AsymmetricCovariate { i, j } => {
                write!(f, "X({i},{j}) differs from X({j},{i})")
            }
            Violation::NondeterministicCovariate { i, j } => {
                write!(f, "repeated queries of X({i},{j}) disagree")
            }
            Violation::Dimension {
                what,
                expected,
                found,
            } => write!(f, "{what}: expected {expected}, found {found}"),
            Violation::AsymmetricTheta { a, b } => {
                write!(f, "theta[{a}][{b}] differs from theta[{b}][{a}]")
            }
            Violation::NonFinite { what, index } => {
                write!(f, "{what} entry {index} is not finite")
            }
            Violation::PiNotPositive { class, value } => {
                write!(f, "pi[{class}] = {value} is not positive")
            }
            Violation::PiNotNormalized { sum } => write!(f, "pi sums to {sum}, not 1"),
            Violation::LabelOutOfRange { node, label } => {
                write!(f, "node {node} has label {label} outside 1..=K")
            }
        }
    }
}

/// Checks every invariant of the four core types and their mutual
/// dimensions. An empty result means the instance is valid; otherwise the
/// first entry is the first violation found.
pub fn validate(
    network: &Network,
    covariates: &DyadCovariates,
    params: &Params,
    labels: &Labels,
) -> Vec<Violation> {
    let mut out = Vec::new();
    check_network(network, &mut out);
    check_covariates(network.n(), covariates, &mut out);
    check_params(params, &mut out);

    if covariates.p() != params.p() {
        out.push(Violation::Dimension {
            what: "beta length vs covariate dimension",
            expected: covariates.p(),
            found: params.p(),
        });
    }
    if labels.len() != network.n() {
        out.push(Violation::Dimension {
            what: "label vector length",
            expected: network.n(),
            found: labels.len(),
        });
    }
    if labels.k() != params.k() {
        out.push(Violation::Dimension {
            what: "label K vs parameter K",
            expected: params.k(),
            found: labels.k(),
        });
    }
    for (i, &g) in labels.as_slice().iter().enumerate() {
        if g as usize >= params.k() {
            out.push(Violation::LabelOutOfRange {
                node: i + 1,
                label: g as usize + 1,
            });
        }
    }
    out
}

pub(crate) fn check_network(network: &Network, out: &mut Vec<Violation>) {
    let n = network.n();
    for i in 0..n {
        for &j in network.neighbors(i) {
            let j = j as usize;
            if j >= n {
                out.push(Violation::NeighborOutOfRange {
                    node: i + 1,
                    neighbor: j + 1,
                });
            } else if j == i {
                out.push(Violation::SelfLoop { node: i + 1 });
            } else if !network.has_edge(j, i) {
                out.push(Violation::AsymmetricEdge {
                    from: i + 1,
                    to: j + 1,
                });
            }
        }
    }
}

pub(crate) fn check_covariates(n: usize, covariates: &DyadCovariates, out: &mut Vec<Violation>) {
    if covariates.n() != n {
        out.push(Violation::Dimension {
            what: "covariate provider node count",
            expected: n,
            found: covariates.n(),
        });
        return;
    }
    let stride = if n <= EXHAUSTIVE_PAIR_LIMIT {
        1
    } else {
        n / EXHAUSTIVE_PAIR_LIMIT + 1
    };
    for i in (0..n).step_by(stride) {
        for j in (i + 1)..n {
            let c = covariates.code(i, j);
            if covariates.pattern(c) != covariates.covariate(j, i) {
                out.push(Violation::AsymmetricCovariate { i: i + 1, j: j + 1 });
            }
            if covariates.code(i, j) != c {
                out.push(Violation::NondeterministicCovariate { i: i + 1, j: j + 1 });
            }
        }
    }
}

pub(crate) fn check_params(params: &Params, out: &mut Vec<Violation>) {
    let k = params.k();
    for (idx, v) in params.theta_flat().iter().enumerate() {
        if !v.is_finite() {
            out.push(Violation::NonFinite {
                what: "theta",
                index: idx + 1,
            });
        }
    }
    for a in 0..k {
        for b in (a + 1)..k {
            if params.theta(a, b) != params.theta(b, a) {
                out.push(Violation::AsymmetricTheta { a: a + 1, b: b + 1 });
            }
        }
    }
    for (idx, v) in params.beta().iter().enumerate() {
        if !v.is_finite() {
            out.push(Violation::NonFinite {
                what: "beta",
                index: idx + 1,
            });
        }
    }
    for (class, &value) in params.pi().iter().enumerate() {
        if !(value > 0.0) {
            out.push(Violation::PiNotPositive {
                class: class + 1,
                value,
            });
        }
    }
    let sum: f64 = params.pi().iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        out.push(Violation::PiNotNormalized { sum });
    }
}
