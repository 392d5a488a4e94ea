//! Single-site Gibbs sampling of the labels given the parameters.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::covariates::DyadCovariates;
use crate::error::{Error, Result};
use crate::likelihood::{
    cc_control_scores, cc_edge_scores, draw_plan_with, full_scores, CaseControlPlan, GroupMembers,
    LogitTable, PlanMode, Problem,
};
use crate::network::Network;
use crate::params::{Labels, Params};
use crate::rng::StreamRng;

/// Which likelihood the sampler targets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum EStepMode {
    /// Every pair contributes.
    #[default]
    Full,
    /// Non-edges are replaced by a case-control estimate.
    CaseControl,
}

/// Sweep counts and the case-control settings for one E-step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EStepConfig {
    /// Retained samples.
    pub m: usize,
    pub burnin: usize,
    /// Sweeps between retained samples.
    pub thin: usize,
    pub mode: EStepMode,
    pub plan_mode: PlanMode,
    /// Controls per node and group.
    pub m0: usize,
}

impl Default for EStepConfig {
    fn default() -> Self {
        Self {
            m: 50,
            burnin: 20,
            thin: 1,
            mode: EStepMode::Full,
            plan_mode: PlanMode::Stale,
            m0: 56,
        }
    }
}

/// The retained label vectors of one E-step.
#[derive(Clone, Debug)]
pub struct EStepSample {
    pub samples: Vec<Labels>,
    /// Sweeps performed, burn-in included.
    pub sweeps: usize,
    /// Label changes per node over all sweeps.
    pub flips: Vec<u32>,
    /// The plan drawn at entry (case-control mode). In strict mode it has
    /// been redrawn row by row and matches the last sample.
    pub plan: Option<CaseControlPlan>,
}

impl EStepSample {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn last(&self) -> &Labels {
        self.samples.last().expect("E-step sample is never empty")
    }

    /// Per-node most frequent label; ties go to the smaller group.
    pub fn majority(&self) -> Labels {
        let first = &self.samples[0];
        let k = first.k();
        let mut votes = vec![0u32; first.len() * k];
        for s in &self.samples {
            for (i, &g) in s.as_slice().iter().enumerate() {
                votes[i * k + g as usize] += 1;
            }
        }
        let z = votes
            .chunks(k)
            .map(|v| {
                let mut best = 0;
                for (g, &c) in v.iter().enumerate() {
                    if c > v[best] {
                        best = g;
                    }
                }
                best
            })
            .collect();
        Labels::new(k, z).expect("votes index valid groups")
    }
}

enum Target {
    Full,
    /// Control terms are fixed for the whole E-step.
    Stale { controls: Vec<f64> },
    Strict { plan: Box<CaseControlPlan> },
}

/// A Gibbs sampler for fixed parameters.
///
/// The conditional of `z_i = k` is proportional to
/// `pi_k * exp(t * l_i(k))`, with `t = 1` unless a temperature is set.
pub struct GibbsSampler<'p, 'a> {
    problem: &'p Problem<'a>,
    table: LogitTable,
    target: Target,
    temperature: f64,
    scratch: Vec<u32>,
    scores: Vec<f64>,
    raw: Vec<f64>,
    controls: Vec<f64>,
}

impl<'p, 'a> GibbsSampler<'p, 'a> {
    /// Targets the exact label posterior.
    pub fn full(problem: &'p Problem<'a>, params: &Params) -> Result<Self> {
        Self::build(problem, params, Target::Full)
    }

    /// Targets the case-control surrogate built from `plan`.
    pub fn case_control(
        problem: &'p Problem<'a>,
        params: &Params,
        mut plan: CaseControlPlan,
        mode: PlanMode,
    ) -> Result<Self> {
        if plan.k() != params.k() || plan.snapshot().len() != problem.n() {
            return Err(Error::InvalidArgument(
                "plan dimensions do not match the problem".into(),
            ));
        }
        plan.encode(problem.covariates());
        let table = LogitTable::new(params, problem.covariates())?;
        let target = match mode {
            PlanMode::Stale => {
                let k = params.k();
                let mut controls = vec![0.0; problem.n() * k];
                for (i, row) in controls.chunks_mut(k).enumerate() {
                    cc_control_scores(&table, &plan, i, row);
                }
                Target::Stale { controls }
            }
            PlanMode::Strict => Target::Strict {
                plan: Box::new(plan),
            },
        };
        Ok(Self::with_table(problem, table, target))
    }

    fn build(problem: &'p Problem<'a>, params: &Params, target: Target) -> Result<Self> {
        let table = LogitTable::new(params, problem.covariates())?;
        Ok(Self::with_table(problem, table, target))
    }

    fn with_table(problem: &'p Problem<'a>, table: LogitTable, target: Target) -> Self {
        let k = table.k();
        Self {
            problem,
            table,
            target,
            temperature: 1.0,
            scratch: Vec::new(),
            scores: vec![0.0; k],
            raw: vec![0.0; k],
            controls: vec![0.0; k],
        }
    }

    /// Scales the likelihood part of every conditional by `t`.
    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    /// The plan, if the sampler owns one (strict mode).
    pub fn into_plan(self) -> Option<CaseControlPlan> {
        match self.target {
            Target::Strict { plan } => Some(*plan),
            _ => None,
        }
    }

    /// Unnormalized log conditional of each group for node `i`.
    fn log_conditional(&mut self, z: &[u32], i: usize) {
        let t = self.temperature;
        match &self.target {
            Target::Full => {
                full_scores(self.problem, &self.table, z, i, &mut self.scratch, &mut self.scores);
            }
            Target::Stale { controls } => {
                cc_edge_scores(self.problem, &self.table, z, i, &mut self.scores);
                let k = self.table.k();
                for (s, c) in self.scores.iter_mut().zip(&controls[i * k..(i + 1) * k]) {
                    *s += c;
                }
            }
            Target::Strict { plan } => {
                cc_edge_scores(self.problem, &self.table, z, i, &mut self.scores);
                cc_control_scores(&self.table, plan, i, &mut self.controls);
                for (s, c) in self.scores.iter_mut().zip(&self.controls) {
                    *s += c;
                }
            }
        }
        self.raw.copy_from_slice(&self.scores);
        for (s, lp) in self.scores.iter_mut().zip(self.table.log_pi()) {
            *s = lp + t * *s;
        }
    }

    /// Normalized conditional distribution of `z_i` given the other labels.
    pub fn conditional(&mut self, labels: &Labels, i: usize) -> Vec<f64> {
        self.log_conditional(labels.as_slice(), i);
        normalize(&mut self.scores);
        self.scores.clone()
    }

    /// Updates every node once in ascending order. Returns the number of
    /// labels that changed.
    pub fn sweep<R: Rng + ?Sized>(&mut self, labels: &mut Labels, rng: &mut R) -> usize {
        self.sweep_counting(labels, rng, None).0
    }

    /// Like [`sweep`](Self::sweep), but returns the change in the
    /// untempered likelihood part of the target. Exact for the full target.
    pub fn sweep_delta<R: Rng + ?Sized>(&mut self, labels: &mut Labels, rng: &mut R) -> f64 {
        self.sweep_counting(labels, rng, None).1
    }

    fn sweep_counting<R: Rng + ?Sized>(
        &mut self,
        labels: &mut Labels,
        rng: &mut R,
        mut flips: Option<&mut [u32]>,
    ) -> (usize, f64) {
        let k = self.table.k();
        if k == 1 {
            return (0, 0.0);
        }
        let mut members = match self.target {
            Target::Strict { .. } => Some(GroupMembers::new(labels)),
            _ => None,
        };
        let mut changed = 0;
        let mut delta = 0.0;
        for i in 0..labels.len() {
            if let (Target::Strict { plan }, Some(members)) = (&mut self.target, members.as_ref()) {
                plan.redraw_node(
                    i,
                    self.problem.network(),
                    labels,
                    members,
                    Some(self.problem.covariates()),
                    rng,
                );
            }
            self.log_conditional(labels.as_slice(), i);
            let new = draw(&mut self.scores, rng);
            let old = labels.get(i);
            if new != old {
                delta += self.raw[new] - self.raw[old];
                labels.set(i, new);
                if let Some(m) = members.as_mut() {
                    m.move_node(i, old, new);
                }
                if let Some(f) = flips.as_deref_mut() {
                    f[i] += 1;
                }
                changed += 1;
            }
        }
        (changed, delta)
    }
}

/// Turns log weights into probabilities in place.
fn normalize(scores: &mut [f64]) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        total += *s;
    }
    for s in scores.iter_mut() {
        *s /= total;
    }
}

/// Samples an index from log weights; overwrites them.
fn draw<R: Rng + ?Sized>(scores: &mut [f64], rng: &mut R) -> usize {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for s in scores.iter_mut() {
        total += (*s - max).exp();
        *s = total;
    }
    let u = rng.random::<f64>() * total;
    scores.iter().position(|&c| u < c).unwrap_or(scores.len() - 1)
}

/// One ascending-order sweep. A plan selects the case-control target; in
/// strict mode the plan's rows for each node are redrawn before the node
/// is updated.
#[allow(clippy::too_many_arguments)]
pub fn gibbs_sweep(
    labels: &mut Labels,
    params: &Params,
    network: &Network,
    covariates: &DyadCovariates,
    plan: Option<&mut CaseControlPlan>,
    plan_mode: PlanMode,
    rng: &mut StreamRng,
) -> Result<usize> {
    let problem = Problem::new(network, covariates)?;
    check_labels(&problem, params, labels)?;
    match plan {
        None => Ok(GibbsSampler::full(&problem, params)?.sweep(labels, rng)),
        Some(plan) => {
            let mut sampler =
                GibbsSampler::case_control(&problem, params, plan.clone(), plan_mode)?;
            let changed = sampler.sweep(labels, rng);
            if let Some(updated) = sampler.into_plan() {
                *plan = updated;
            }
            Ok(changed)
        }
    }
}

fn check_labels(problem: &Problem<'_>, params: &Params, labels: &Labels) -> Result<()> {
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

/// Runs `burnin + m * thin` sweeps from `init` and keeps every `thin`-th
/// state after burn-in. In case-control mode one plan is drawn at entry
/// against `init`.
pub fn run_estep(
    params: &Params,
    network: &Network,
    covariates: &DyadCovariates,
    config: &EStepConfig,
    init: &Labels,
    rng: &mut StreamRng,
) -> Result<EStepSample> {
    let problem = Problem::new(network, covariates)?;
    run_estep_with(&problem, params, config, init, rng)
}

pub(crate) fn run_estep_with(
    problem: &Problem<'_>,
    params: &Params,
    config: &EStepConfig,
    init: &Labels,
    rng: &mut StreamRng,
) -> Result<EStepSample> {
    if config.m == 0 {
        return Err(Error::InvalidArgument("M must be at least 1".into()));
    }
    let thin = config.thin.max(1);
    check_labels(problem, params, init)?;
    let (mut sampler, plan) = match config.mode {
        EStepMode::Full => (GibbsSampler::full(problem, params)?, None),
        EStepMode::CaseControl => {
            let seed = rng.random::<u64>();
            let plan = draw_plan_with(problem.network(), init, config.m0, seed, rng)?;
            let keep = (config.plan_mode == PlanMode::Stale).then(|| plan.clone());
            (
                GibbsSampler::case_control(problem, params, plan, config.plan_mode)?,
                keep,
            )
        }
    };
    let mut labels = init.clone();
    let mut flips = vec![0u32; init.len()];
    let mut samples = Vec::with_capacity(config.m);
    let total = config.burnin + config.m * thin;
    for s in 1..=total {
        sampler.sweep_counting(&mut labels, rng, Some(&mut flips));
        if s > config.burnin && (s - config.burnin).is_multiple_of(thin) {
            samples.push(labels.clone());
        }
    }
    let plan = plan.or_else(|| sampler.into_plan());
    Ok(EStepSample {
        samples,
        sweeps: total,
        flips,
        plan,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::draw_plan;
    use crate::rng::seeded_stream;

    fn small() -> (Network, DyadCovariates, Params) {
        let net = Network::from_edges(6, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (2, 3)]).unwrap();
        let cov = DyadCovariates::seeded_bernoulli(6, 1, 0.5, 4).unwrap();
        let params = Params::from_rows(&[vec![1.0, -1.5], vec![-1.5, 0.5]], vec![0.7], vec![0.4, 0.6]).unwrap();
        (net, cov, params)
    }

    #[test]
    fn one_group_is_identity() {
        let net = Network::from_edges(4, [(0, 1)]).unwrap();
        let cov = DyadCovariates::none(4);
        let mut labels = Labels::constant(1, 4);
        let mut rng = seeded_stream(1);
        let changed = gibbs_sweep(&mut labels, &Params::zeros(1, 0), &net, &cov, None, PlanMode::Stale, &mut rng).unwrap();
        assert_eq!(changed, 0);
        assert_eq!(labels, Labels::constant(1, 4));
    }

    #[test]
    fn single_sweep_estep() {
        let (net, cov, params) = small();
        let config = EStepConfig { m: 1, burnin: 0, ..Default::default() };
        let init = Labels::new(2, vec![0, 0, 0, 1, 1, 1]).unwrap();
        let sample = run_estep(&params, &net, &cov, &config, &init, &mut seeded_stream(3)).unwrap();
        assert_eq!(sample.sweeps, 1);
        let mut labels = init.clone();
        gibbs_sweep(&mut labels, &params, &net, &cov, None, PlanMode::Stale, &mut seeded_stream(3)).unwrap();
        assert_eq!(sample.samples, vec![labels]);
    }

    #[test]
    fn exhaustive_plan_matches_full_conditionals() {
        let (net, cov, params) = small();
        let labels = Labels::new(2, vec![0, 1, 0, 1, 1, 0]).unwrap();
        let problem = Problem::new(&net, &cov).unwrap();
        let plan = draw_plan(&net, &labels, 100, 1).unwrap();
        let mut full = GibbsSampler::full(&problem, &params).unwrap();
        let mut stale = GibbsSampler::case_control(&problem, &params, plan.clone(), PlanMode::Stale).unwrap();
        for i in 0..6 {
            let a = full.conditional(&labels, i);
            let b = stale.conditional(&labels, i);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn strict_exhaustive_sweep_tracks_full_sweep() {
        // Identical random streams give identical paths when every
        // conditional agrees, except that strict mode consumes no extra
        // randomness for exhaustive rows.
        let (net, cov, params) = small();
        let init = Labels::new(2, vec![0, 1, 0, 1, 1, 0]).unwrap();
        let mut plan = draw_plan(&net, &init, 100, 1).unwrap();
        let mut a = init.clone();
        let mut b = init.clone();
        let mut ra = seeded_stream(8);
        let mut rb = seeded_stream(8);
        for _ in 0..50 {
            gibbs_sweep(&mut a, &params, &net, &cov, None, PlanMode::Strict, &mut ra).unwrap();
            gibbs_sweep(&mut b, &params, &net, &cov, Some(&mut plan), PlanMode::Strict, &mut rb).unwrap();
            assert_eq!(a, b);
        }
        assert_eq!(plan.snapshot(), &b);
    }

    #[test]
    fn majority_vote() {
        let s = EStepSample {
            samples: vec![
                Labels::new(2, vec![0, 1]).unwrap(),
                Labels::new(2, vec![1, 1]).unwrap(),
                Labels::new(2, vec![0, 0]).unwrap(),
            ],
            sweeps: 3,
            flips: vec![0, 0],
            plan: None,
        };
        assert_eq!(s.majority().as_slice(), &[0, 1]);
    }
}
