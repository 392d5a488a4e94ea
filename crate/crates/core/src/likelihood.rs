//! Complete-data log-likelihood, its case-control approximation and the
//! case-control sampling plan.
//!
//! For labels `z`, the complete-data log-likelihood is
//!
//! ```text
//! l(xi | A, z) = sum_{i<j} [ a_ij * eta_ij - log(1 + exp(eta_ij)) ] + sum_i log pi_{z_i},
//! eta_ij       = theta[z_i][z_j] + beta . X(i, j).
//! ```
//!
//! Splitting by node, `l_i = l_{i,1} + l_{i,0}` separates the edge terms from
//! the non-edge terms. The case-control estimate keeps `l_{i,1}` exactly and
//! replaces the non-edge sum over `N_{i,g,0}` non-neighbors in group `g` by a
//! scaled sum over a small random control set `S_{i,g}`.

use std::sync::OnceLock;

use rand::Rng;

use crate::covariates::DyadCovariates;
use crate::error::{Error, Result};
use crate::network::Network;
use crate::params::{Labels, Params};
use crate::rng::{seeded_stream, StreamRng};

/// `log(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `1 / (1 + e^{-x})`.
#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(p / (1 - p))`.
#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// How a case-control plan relates to the labels it is evaluated against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum PlanMode {
    /// One plan per E-step. Controls keep the group they were drawn from
    /// even after labels move.
    #[default]
    Stale,
    /// Plans always match the current labels: evaluation rejects a stale
    /// plan, the Gibbs sampler redraws a node's rows before updating it and
    /// the M-step draws a fresh plan per retained sample.
    Strict,
}

/// A network and its covariates with per-pair covariate codes cached.
///
/// Neighbor codes are computed eagerly. The dense `n x n` code matrix needed
/// by full-data sweeps is materialized on first use.
pub struct Problem<'a> {
    network: &'a Network,
    covariates: &'a DyadCovariates,
    neighbor_codes: Vec<u32>,
    pair_codes: OnceLock<Vec<u32>>,
}

impl<'a> Problem<'a> {
    pub fn new(network: &'a Network, covariates: &'a DyadCovariates) -> Result<Self> {
        if covariates.n() != network.n() {
            return Err(Error::DimensionMismatch {
                what: "covariate provider node count",
                expected: network.n(),
                found: covariates.n(),
            });
        }
        let mut neighbor_codes = Vec::with_capacity(network.targets().len());
        for i in 0..network.n() {
            neighbor_codes.extend(
                network
                    .neighbors(i)
                    .iter()
                    .map(|&j| covariates.code(i, j as usize)),
            );
        }
        Ok(Self {
            network,
            covariates,
            neighbor_codes,
            pair_codes: OnceLock::new(),
        })
    }

    pub fn network(&self) -> &'a Network {
        self.network
    }

    pub fn covariates(&self) -> &'a DyadCovariates {
        self.covariates
    }

    pub fn n(&self) -> usize {
        self.network.n()
    }

    /// Codes of `(i, j)` for each neighbor `j` of `i`, aligned with
    /// [`Network::neighbors`].
    #[inline]
    pub(crate) fn neighbor_codes(&self, i: usize) -> &[u32] {
        &self.neighbor_codes[self.network.neighbor_range(i)]
    }

    /// Codes of `(i, j)` for all `j`.
    #[inline]
    pub(crate) fn pair_code_row(&self, i: usize) -> &[u32] {
        let n = self.n();
        let all = self.pair_codes.get_or_init(|| {
            let mut codes = vec![0u32; n * n];
            for a in 0..n {
                for b in (a + 1)..n {
                    let c = self.covariates.code(a, b);
                    codes[a * n + b] = c;
                    codes[b * n + a] = c;
                }
            }
            codes
        });
        &all[i * n..(i + 1) * n]
    }
}

/// Edge logits and their softplus for every `(a, b, code)` under fixed
/// parameters, plus `log pi`.
pub(crate) struct LogitTable {
    k: usize,
    codes: usize,
    eta: Vec<f64>,
    softplus: Vec<f64>,
    log_pi: Vec<f64>,
}

impl LogitTable {
    pub(crate) fn new(params: &Params, covariates: &DyadCovariates) -> Result<Self> {
        if params.p() != covariates.p() {
            return Err(Error::DimensionMismatch {
                what: "beta length vs covariate dimension",
                expected: covariates.p(),
                found: params.p(),
            });
        }
        let k = params.k();
        let offsets = covariates.offsets(params.beta());
        let codes = offsets.len();
        let mut eta = Vec::with_capacity(k * k * codes);
        for a in 0..k {
            for b in 0..k {
                let t = params.theta(a, b);
                eta.extend(offsets.iter().map(|o| t + o));
            }
        }
        let softplus = eta.iter().map(|&x| softplus(x)).collect();
        Ok(Self {
            k,
            codes,
            eta,
            softplus,
            log_pi: params.pi().iter().map(|p| p.ln()).collect(),
        })
    }

    #[inline]
    pub(crate) fn index(&self, a: usize, b: usize, code: u32) -> usize {
        (a * self.k + b) * self.codes + code as usize
    }

    #[inline]
    pub(crate) fn eta(&self, a: usize, b: usize, code: u32) -> f64 {
        self.eta[self.index(a, b, code)]
    }

    #[inline]
    pub(crate) fn softplus(&self, a: usize, b: usize, code: u32) -> f64 {
        self.softplus[self.index(a, b, code)]
    }

    pub(crate) fn log_pi(&self) -> &[f64] {
        &self.log_pi
    }

    pub(crate) fn k(&self) -> usize {
        self.k
    }

    pub(crate) fn codes(&self) -> usize {
        self.codes
    }
}

/// Node lists per group with O(1) moves.
#[derive(Clone, Debug)]
pub(crate) struct GroupMembers {
    members: Vec<Vec<u32>>,
    position: Vec<u32>,
}

impl GroupMembers {
    pub(crate) fn new(labels: &Labels) -> Self {
        let mut members = vec![Vec::new(); labels.k()];
        let mut position = vec![0u32; labels.len()];
        for (i, &g) in labels.as_slice().iter().enumerate() {
            position[i] = members[g as usize].len() as u32;
            members[g as usize].push(i as u32);
        }
        Self { members, position }
    }

    pub(crate) fn group(&self, g: usize) -> &[u32] {
        &self.members[g]
    }

    pub(crate) fn move_node(&mut self, i: usize, from: usize, to: usize) {
        if from == to {
            return;
        }
        let pos = self.position[i] as usize;
        let list = &mut self.members[from];
        list.swap_remove(pos);
        if let Some(&moved) = list.get(pos) {
            self.position[moved as usize] = pos as u32;
        }
        self.position[i] = self.members[to].len() as u32;
        self.members[to].push(i as u32);
    }
}

/// Control sets `S_{i,g}` and non-neighbor counts `N_{i,g,0}` for every node
/// and group, drawn against a label snapshot.
///
/// Controls are drawn uniformly with replacement when `N_{i,g,0} > m0`;
/// otherwise every non-neighbor in the group is taken once.
#[derive(Clone, Debug)]
pub struct CaseControlPlan {
    k: usize,
    m0: usize,
    non_neighbors: Vec<u32>,
    lens: Vec<u32>,
    controls: Vec<u32>,
    /// Covariate codes aligned with `controls`; empty until encoded.
    codes: Vec<u32>,
    snapshot: Labels,
    seed: u64,
}

impl CaseControlPlan {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m0(&self) -> usize {
        self.m0
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Labels the plan was drawn against.
    pub fn snapshot(&self) -> &Labels {
        &self.snapshot
    }

    /// `S_{i,g}`.
    pub fn controls(&self, i: usize, g: usize) -> &[u32] {
        let row = i * self.k + g;
        let start = row * self.m0;
        &self.controls[start..start + self.lens[row] as usize]
    }

    /// `N_{i,g,0}`.
    pub fn non_neighbor_count(&self, i: usize, g: usize) -> usize {
        self.non_neighbors[i * self.k + g] as usize
    }

    /// Scale applied to each sampled control: `N_{i,g,0} / |S_{i,g}|`, which
    /// is `N_{i,g,0} / m0` when sampling and 1 when exhaustive.
    pub fn weight(&self, i: usize, g: usize) -> f64 {
        let row = i * self.k + g;
        match self.lens[row] {
            0 => 0.0,
            len => f64::from(self.non_neighbors[row]) / f64::from(len),
        }
    }

    /// True when every row was sampled exhaustively.
    pub fn is_exhaustive(&self) -> bool {
        self.non_neighbors
            .iter()
            .zip(&self.lens)
            .all(|(&n, &l)| n == l)
    }

    pub(crate) fn control_codes(&self, i: usize, g: usize) -> &[u32] {
        let row = i * self.k + g;
        let start = row * self.m0;
        &self.codes[start..start + self.lens[row] as usize]
    }

    pub(crate) fn encode(&mut self, covariates: &DyadCovariates) {
        let n = self.snapshot.len();
        self.codes = vec![0; self.controls.len()];
        for i in 0..n {
            self.encode_node(i, covariates);
        }
    }

    fn encode_node(&mut self, i: usize, covariates: &DyadCovariates) {
        for g in 0..self.k {
            let row = i * self.k + g;
            let start = row * self.m0;
            for t in start..start + self.lens[row] as usize {
                self.codes[t] = covariates.code(i, self.controls[t] as usize);
            }
        }
    }

    /// Redraws all rows of node `i` against `labels` (strict mode).
    pub(crate) fn redraw_node<R: Rng + ?Sized>(
        &mut self,
        i: usize,
        network: &Network,
        labels: &Labels,
        members: &GroupMembers,
        covariates: Option<&DyadCovariates>,
        rng: &mut R,
    ) {
        let mut in_group = vec![0u32; self.k];
        for &j in network.neighbors(i) {
            in_group[labels.get(j as usize)] += 1;
        }
        for (g, &adjacent) in in_group.iter().enumerate() {
            let row = i * self.k + g;
            let start = row * self.m0;
            let (count, len) = draw_row(
                network,
                members.group(g),
                i,
                labels.get(i) == g,
                adjacent,
                self.m0,
                rng,
                &mut self.controls[start..start + self.m0],
            );
            self.non_neighbors[row] = count;
            self.lens[row] = len;
        }
        self.snapshot.set(i, labels.get(i));
        if let Some(cov) = covariates {
            if !self.codes.is_empty() {
                self.encode_node(i, cov);
            }
        }
    }

    fn first_mismatch(&self, labels: &Labels) -> Option<usize> {
        if labels.len() != self.snapshot.len() {
            return Some(labels.len().min(self.snapshot.len()));
        }
        labels
            .as_slice()
            .iter()
            .zip(self.snapshot.as_slice())
            .position(|(a, b)| a != b)
    }
}

/// Draws one row `S_{i,g}` into `out`; returns `(N_{i,g,0}, |S_{i,g}|)`.
#[allow(clippy::too_many_arguments)]
fn draw_row<R: Rng + ?Sized>(
    network: &Network,
    group: &[u32],
    i: usize,
    self_in_group: bool,
    neighbors_in_group: u32,
    m0: usize,
    rng: &mut R,
    out: &mut [u32],
) -> (u32, u32) {
    let count = group.len() as u32 - u32::from(self_in_group) - neighbors_in_group;
    let admissible = |j: u32| j as usize != i && !network.has_edge(i, j as usize);
    if count == 0 {
        return (0, 0);
    }
    if count as usize <= m0 {
        let mut len = 0;
        for &j in group {
            if admissible(j) {
                out[len] = j;
                len += 1;
            }
        }
        debug_assert_eq!(len, count as usize);
        return (count, len as u32);
    }
    if 4 * count as usize >= group.len() {
        let mut filled = 0;
        while filled < m0 {
            let j = group[rng.random_range(0..group.len())];
            if admissible(j) {
                out[filled] = j;
                filled += 1;
            }
        }
    } else {
        let candidates: Vec<u32> = group.iter().copied().filter(|&j| admissible(j)).collect();
        for slot in out.iter_mut().take(m0) {
            *slot = candidates[rng.random_range(0..candidates.len())];
        }
    }
    (count, m0 as u32)
}

/// Draws a case-control plan with `m0` controls per node and group against
/// `labels`. Deterministic in `seed`.
pub fn draw_plan(network: &Network, labels: &Labels, m0: usize, seed: u64) -> Result<CaseControlPlan> {
    let mut rng = seeded_stream(seed);
    draw_plan_with(network, labels, m0, seed, &mut rng)
}

pub(crate) fn draw_plan_with(
    network: &Network,
    labels: &Labels,
    m0: usize,
    seed: u64,
    rng: &mut StreamRng,
) -> Result<CaseControlPlan> {
    if m0 == 0 {
        return Err(Error::InvalidArgument("m0 must be at least 1".into()));
    }
    if labels.len() != network.n() {
        return Err(Error::DimensionMismatch {
            what: "label vector length",
            expected: network.n(),
            found: labels.len(),
        });
    }
    let n = network.n();
    let k = labels.k();
    let members = GroupMembers::new(labels);
    let mut plan = CaseControlPlan {
        k,
        m0,
        non_neighbors: vec![0; n * k],
        lens: vec![0; n * k],
        controls: vec![0; n * k * m0],
        codes: Vec::new(),
        snapshot: labels.clone(),
        seed,
    };
    for i in 0..n {
        plan.redraw_node(i, network, labels, &members, None, rng);
    }
    Ok(plan)
}

fn check_inputs(params: &Params, problem: &Problem<'_>, labels: &Labels) -> Result<()> {
    if labels.len() != problem.n() {
        return Err(Error::DimensionMismatch {
            what: "label vector length",
            expected: problem.n(),
            found: labels.len(),
        });
    }
    if labels.k() != params.k() {
        return Err(Error::DimensionMismatch {
            what: "label K vs parameter K",
            expected: params.k(),
            found: labels.k(),
        });
    }
    Ok(())
}

fn check_occupied(params: &Params, labels: &Labels) -> Result<()> {
    for (node, &g) in labels.as_slice().iter().enumerate() {
        if params.pi()[g as usize] <= 0.0 {
            return Err(Error::ZeroProbabilityClass {
                class: g as usize,
                node,
            });
        }
    }
    Ok(())
}

/// `sum_{i<j} [a_ij eta_ij - log(1 + e^{eta_ij})]`, the edge part of the
/// complete-data log-likelihood.
pub(crate) fn edge_log_lik(problem: &Problem<'_>, table: &LogitTable, labels: &Labels) -> f64 {
    let z = labels.as_slice();
    let n = problem.n();
    let mut total = 0.0;
    for i in 0..n {
        let zi = z[i] as usize;
        let row = problem.pair_code_row(i);
        let mut acc = 0.0;
        for j in (i + 1)..n {
            acc -= table.softplus(zi, z[j] as usize, row[j]);
        }
        for (&j, &c) in problem.network().neighbors(i).iter().zip(problem.neighbor_codes(i)) {
            if j as usize > i {
                acc += table.eta(zi, z[j as usize] as usize, c);
            }
        }
        total += acc;
    }
    total
}

fn log_prior(table: &LogitTable, labels: &Labels) -> f64 {
    labels
        .as_slice()
        .iter()
        .map(|&g| table.log_pi()[g as usize])
        .sum()
}

/// Complete-data log-likelihood `log L(xi | A, z)`.
///
/// Fails with [`Error::ZeroProbabilityClass`] when an occupied class has
/// `pi_k = 0` (the value would be `-inf`).
pub fn complete_log_lik(
    params: &Params,
    network: &Network,
    covariates: &DyadCovariates,
    labels: &Labels,
) -> Result<f64> {
    let problem = Problem::new(network, covariates)?;
    complete_log_lik_with(&problem, params, labels)
}

pub fn complete_log_lik_with(problem: &Problem<'_>, params: &Params, labels: &Labels) -> Result<f64> {
    check_inputs(params, problem, labels)?;
    check_occupied(params, labels)?;
    let table = LogitTable::new(params, problem.covariates())?;
    Ok(edge_log_lik(problem, &table, labels) + log_prior(&table, labels))
}

/// Case-control estimate of the complete-data log-likelihood:
/// `1/2 sum_i l~_i + sum_i log pi_{z_i}`.
///
/// In [`PlanMode::Strict`] the plan must have been drawn against `labels`.
/// In [`PlanMode::Stale`] each control keeps the group it was drawn from.
pub fn cc_log_lik(
    params: &Params,
    network: &Network,
    covariates: &DyadCovariates,
    labels: &Labels,
    plan: &CaseControlPlan,
    mode: PlanMode,
) -> Result<f64> {
    let problem = Problem::new(network, covariates)?;
    check_inputs(params, &problem, labels)?;
    check_occupied(params, labels)?;
    if mode == PlanMode::Strict {
        if let Some(node) = plan.first_mismatch(labels) {
            return Err(Error::PlanMismatch { node });
        }
    }
    if plan.snapshot().len() != labels.len() || plan.k() != params.k() {
        return Err(Error::InvalidArgument(
            "plan dimensions do not match the labels".into(),
        ));
    }
    let table = LogitTable::new(params, covariates)?;
    let z = labels.as_slice();
    let mut half = 0.0;
    for i in 0..problem.n() {
        let zi = z[i] as usize;
        half += edge_terms(&problem, &table, z, i, zi);
        half -= control_terms(&table, covariates, plan, i, zi);
    }
    Ok(0.5 * half + log_prior(&table, labels))
}

/// `l_{i,1}` for node `i` placed in group `k`.
#[inline]
fn edge_terms(problem: &Problem<'_>, table: &LogitTable, z: &[u32], i: usize, k: usize) -> f64 {
    problem
        .network()
        .neighbors(i)
        .iter()
        .zip(problem.neighbor_codes(i))
        .map(|(&j, &c)| {
            let idx = table.index(k, z[j as usize] as usize, c);
            table.eta[idx] - table.softplus[idx]
        })
        .sum()
}

/// `-l~_{i,0}` for node `i` placed in group `k`, computing codes on the fly.
fn control_terms(
    table: &LogitTable,
    covariates: &DyadCovariates,
    plan: &CaseControlPlan,
    i: usize,
    k: usize,
) -> f64 {
    (0..plan.k())
        .map(|g| {
            let s: f64 = plan
                .controls(i, g)
                .iter()
                .map(|&j| table.softplus(k, g, covariates.code(i, j as usize)))
                .sum();
            plan.weight(i, g) * s
        })
        .sum()
}

/// Log of the unnormalized full conditional of `z_i = k` given the other
/// labels: `log pi_k + l_i(k)`. With a plan, the non-edge part of `l_i` is
/// replaced by its case-control estimate.
pub fn node_cond_log_lik(
    params: &Params,
    network: &Network,
    covariates: &DyadCovariates,
    labels: &Labels,
    i: usize,
    k: usize,
    plan: Option<&CaseControlPlan>,
) -> Result<f64> {
    let problem = Problem::new(network, covariates)?;
    check_inputs(params, &problem, labels)?;
    if i >= problem.n() {
        return Err(Error::NodeOutOfRange {
            index: i,
            n: problem.n(),
        });
    }
    if k >= params.k() {
        return Err(Error::InvalidArgument(format!(
            "group {k} out of range for K = {}",
            params.k()
        )));
    }
    let table = LogitTable::new(params, covariates)?;
    let mut scores = vec![0.0; params.k()];
    match plan {
        None => {
            let mut scratch = Vec::new();
            full_scores(&problem, &table, labels.as_slice(), i, &mut scratch, &mut scores);
        }
        Some(plan) => {
            let z = labels.as_slice();
            for (kk, s) in scores.iter_mut().enumerate() {
                *s = edge_terms(&problem, &table, z, i, kk)
                    - control_terms(&table, covariates, plan, i, kk);
            }
        }
    }
    Ok(table.log_pi()[k] + scores[k])
}

/// `l_i(k)` for every `k`, summing over all `j != i`.
///
/// `scratch` holds per-(group, code) counts of the other nodes; it is used
/// when that table is small relative to `n`.
pub(crate) fn full_scores(
    problem: &Problem<'_>,
    table: &LogitTable,
    z: &[u32],
    i: usize,
    scratch: &mut Vec<u32>,
    out: &mut [f64],
) {
    let k = table.k();
    let codes = table.codes();
    let row = problem.pair_code_row(i);
    let n = z.len();
    out.iter_mut().for_each(|s| *s = 0.0);

    if k * codes <= n {
        scratch.clear();
        scratch.resize(k * codes, 0);
        for (&g, &c) in z.iter().zip(row) {
            scratch[g as usize * codes + c as usize] += 1;
        }
        scratch[z[i] as usize * codes + row[i] as usize] -= 1;
        for (kk, s) in out.iter_mut().enumerate() {
            let base = kk * k * codes;
            *s -= scratch
                .iter()
                .zip(&table.softplus[base..base + k * codes])
                .filter(|(&cnt, _)| cnt > 0)
                .map(|(&cnt, &sp)| f64::from(cnt) * sp)
                .sum::<f64>();
        }
    } else {
        for j in (0..n).filter(|&j| j != i) {
            let (g, c) = (z[j] as usize, row[j]);
            for (kk, s) in out.iter_mut().enumerate() {
                *s -= table.softplus(kk, g, c);
            }
        }
    }

    for (&j, &c) in problem.network().neighbors(i).iter().zip(problem.neighbor_codes(i)) {
        let g = z[j as usize] as usize;
        for (kk, s) in out.iter_mut().enumerate() {
            *s += table.eta(kk, g, c);
        }
    }
}

/// Edge part of `l~_i(k)` for every `k`.
pub(crate) fn cc_edge_scores(
    problem: &Problem<'_>,
    table: &LogitTable,
    z: &[u32],
    i: usize,
    out: &mut [f64],
) {
    out.iter_mut().for_each(|s| *s = 0.0);
    for (&j, &c) in problem.network().neighbors(i).iter().zip(problem.neighbor_codes(i)) {
        let g = z[j as usize] as usize;
        for (kk, s) in out.iter_mut().enumerate() {
            let idx = table.index(kk, g, c);
            *s += table.eta[idx] - table.softplus[idx];
        }
    }
}

/// `l~_{i,0}(k)` for every `k` using the plan's encoded control codes.
pub(crate) fn cc_control_scores(
    table: &LogitTable,
    plan: &CaseControlPlan,
    i: usize,
    out: &mut [f64],
) {
    out.iter_mut().for_each(|s| *s = 0.0);
    for g in 0..plan.k() {
        let w = plan.weight(i, g);
        if w == 0.0 {
            continue;
        }
        for &c in plan.control_codes(i, g) {
            for (kk, s) in out.iter_mut().enumerate() {
                *s -= w * table.softplus(kk, g, c);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngSpec;

    fn random_instance(n: usize, k: usize, p: usize, seed: u64) -> (Network, DyadCovariates, Params, Labels) {
        let mut rng = RngSpec::new(seed).stream("test", 0, 0, 0);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random::<f64>() < 0.2 {
                    edges.push((i, j));
                }
            }
        }
        let net = Network::from_edges(n, edges).unwrap();
        let cov = DyadCovariates::seeded_bernoulli(n, p, 0.5, seed).unwrap();
        let mut params = Params::zeros(k, p);
        for a in 0..k {
            for b in a..k {
                params.set_theta(a, b, rng.random_range(-2.0..1.0));
            }
        }
        params
            .set_beta((0..p).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap();
        let z = (0..n).map(|_| rng.random_range(0..k)).collect();
        (net, cov, params, Labels::new(k, z).unwrap())
    }

    /// Literal pair loop over `i < j`.
    fn brute_force(net: &Network, cov: &DyadCovariates, params: &Params, labels: &Labels) -> f64 {
        let n = net.n();
        let mut total = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let eta = params
                    .edge_logit(labels.get(i), labels.get(j), cov.covariate(i, j))
                    .unwrap();
                let a = if net.has_edge(i, j) { 1.0 } else { 0.0 };
                total += a * eta - (1.0 + eta.exp()).ln();
            }
        }
        total + (0..n).map(|i| params.pi()[labels.get(i)].ln()).sum::<f64>()
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0);
        assert!((logistic(logit(0.3)) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn single_pair_closed_form() {
        let net = Network::empty(2);
        let cov = DyadCovariates::none(2);
        let params = Params::zeros(1, 0);
        let labels = Labels::constant(1, 2);
        let value = complete_log_lik(&params, &net, &cov, &labels).unwrap();
        assert!((value + 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn matches_brute_force() {
        for seed in 0..5 {
            let (net, cov, params, labels) = random_instance(5, 2, 3, seed);
            let value = complete_log_lik(&params, &net, &cov, &labels).unwrap();
            let oracle = brute_force(&net, &cov, &params, &labels);
            assert!((value - oracle).abs() < 1e-12, "{value} vs {oracle}");
        }
    }

    #[test]
    fn isolated_node_is_negligible() {
        let net = Network::from_edges(3, [(0, 1)]).unwrap();
        let bigger = Network::from_edges(4, [(0, 1)]).unwrap();
        let mut params = Params::zeros(1, 0);
        params.set_theta(0, 0, -30.0);
        let small = complete_log_lik(&params, &net, &DyadCovariates::none(3), &Labels::constant(1, 3)).unwrap();
        let large = complete_log_lik(&params, &bigger, &DyadCovariates::none(4), &Labels::constant(1, 4)).unwrap();
        let drop = small - large;
        assert!(drop > 0.0);
        assert!((drop - 3.0 * (-30f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn zero_probability_class_is_flagged() {
        let net = Network::empty(2);
        let cov = DyadCovariates::none(2);
        let params = Params::new(2, vec![0.0; 4], vec![], vec![1.0, 0.0]).unwrap();
        let labels = Labels::new(2, vec![0, 1]).unwrap();
        assert!(matches!(
            complete_log_lik(&params, &net, &cov, &labels),
            Err(Error::ZeroProbabilityClass { class: 1, node: 1 })
        ));
    }

    #[test]
    fn exhaustive_plan() {
        let (net, _, _, labels) = random_instance(30, 3, 0, 9);
        let plan = draw_plan(&net, &labels, 1000, 1).unwrap();
        assert!(plan.is_exhaustive());
        for i in 0..30 {
            for g in 0..3 {
                let expected: Vec<u32> = (0..30)
                    .filter(|&j| j != i && labels.get(j) == g && !net.has_edge(i, j))
                    .map(|j| j as u32)
                    .collect();
                let mut got = plan.controls(i, g).to_vec();
                got.sort_unstable();
                assert_eq!(got, expected);
                assert_eq!(plan.non_neighbor_count(i, g), expected.len());
            }
        }
    }

    #[test]
    fn complete_graph_has_no_controls() {
        let n = 6;
        let edges = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j)));
        let net = Network::from_edges(n, edges).unwrap();
        let labels = Labels::new(2, vec![0, 1, 0, 1, 0, 1]).unwrap();
        let plan = draw_plan(&net, &labels, 3, 5).unwrap();
        for i in 0..n {
            for g in 0..2 {
                assert!(plan.controls(i, g).is_empty());
                assert_eq!(plan.non_neighbor_count(i, g), 0);
            }
        }
    }

    #[test]
    fn sampled_controls_are_admissible() {
        let (net, _, _, labels) = random_instance(50, 3, 0, 4);
        let plan = draw_plan(&net, &labels, 4, 77).unwrap();
        for i in 0..50 {
            for g in 0..3 {
                let n_ig = plan.non_neighbor_count(i, g);
                assert_eq!(plan.controls(i, g).len(), n_ig.min(4));
                for &j in plan.controls(i, g) {
                    let j = j as usize;
                    assert_ne!(j, i);
                    assert_eq!(labels.get(j), g);
                    assert!(!net.has_edge(i, j));
                }
            }
        }
        let again = draw_plan(&net, &labels, 4, 77).unwrap();
        assert_eq!(plan.controls, again.controls);
    }

    #[test]
    fn sparse_acceptance_falls_back_to_candidate_list() {
        // Node 0 is adjacent to all but two members of group 1.
        let n = 40;
        let edges: Vec<(usize, usize)> = (3..n).map(|j| (0, j)).collect();
        let net = Network::from_edges(n, edges).unwrap();
        let labels = Labels::new(2, (0..n).map(|i| usize::from(i > 0)).collect()).unwrap();
        let plan = draw_plan(&net, &labels, 1, 3).unwrap();
        assert_eq!(plan.non_neighbor_count(0, 1), 2);
        assert!(plan.controls(0, 1)[0] == 1 || plan.controls(0, 1)[0] == 2);
    }

    #[test]
    fn exhaustive_cc_equals_complete() {
        for seed in 0..5 {
            let (net, cov, params, labels) = random_instance(25, 3, 2, seed);
            let plan = draw_plan(&net, &labels, 100, seed).unwrap();
            let exact = complete_log_lik(&params, &net, &cov, &labels).unwrap();
            let cc = cc_log_lik(&params, &net, &cov, &labels, &plan, PlanMode::Strict).unwrap();
            assert!((exact - cc).abs() < 1e-10, "{exact} vs {cc}");
        }
    }

    #[test]
    fn strict_mode_rejects_stale_plan() {
        let (net, cov, params, labels) = random_instance(10, 2, 0, 1);
        let plan = draw_plan(&net, &labels, 3, 1).unwrap();
        let mut moved = labels.clone();
        moved.set(4, 1 - labels.get(4));
        assert!(matches!(
            cc_log_lik(&params, &net, &cov, &moved, &plan, PlanMode::Strict),
            Err(Error::PlanMismatch { node: 4 })
        ));
        assert!(cc_log_lik(&params, &net, &cov, &moved, &plan, PlanMode::Stale).is_ok());
    }

    #[test]
    fn two_node_conditional() {
        let net = Network::from_edges(2, [(0, 1)]).unwrap();
        let cov = DyadCovariates::none(2);
        let params = Params::from_rows(&[vec![1.0, -1.0], vec![-1.0, 0.5]], vec![], vec![0.3, 0.7]).unwrap();
        let labels = Labels::new(2, vec![0, 1]).unwrap();
        for k in 0..2 {
            let eta = params.theta(k, 1);
            let expected = params.pi()[k].ln() + eta - (1.0 + eta.exp()).ln();
            let got = node_cond_log_lik(&params, &net, &cov, &labels, 0, k, None).unwrap();
            assert!((got - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn group_members_move() {
        let labels = Labels::new(2, vec![0, 0, 1, 0]).unwrap();
        let mut members = GroupMembers::new(&labels);
        members.move_node(0, 0, 1);
        let mut g0 = members.group(0).to_vec();
        g0.sort_unstable();
        assert_eq!(g0, vec![1, 3]);
        members.move_node(3, 0, 1);
        assert_eq!(members.group(0), &[1]);
        let mut g1 = members.group(1).to_vec();
        g1.sort_unstable();
        assert_eq!(g1, vec![0, 2, 3]);
    }
}
