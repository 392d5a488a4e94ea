//! Divide-and-conquer fitting on stratified subsamples, with or without a
//! ring exchange of running estimates between rounds.

use std::sync::mpsc;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::covariates::DyadCovariates;
use crate::error::{Error, Result};
use crate::fit::{Controls, FitConfig, McemState};
use crate::gibbs::{run_estep_with, EStepConfig, EStepMode};
use crate::likelihood::{PlanMode, Problem};
use crate::metrics::align_to;
use crate::network::Network;
use crate::params::{Labels, Params};
use crate::rng::RngSpec;

/// One worker's share of the data.
#[derive(Clone, Debug)]
pub struct Subsample {
    /// Parent indices of the sub's nodes, ascending and distinct.
    pub nodes: Vec<usize>,
    /// Nodes drawn before duplicates were removed.
    pub drawn: usize,
    pub network: Network,
    pub covariates: DyadCovariates,
    /// The initial clustering restricted to `nodes`.
    pub labels: Labels,
}

impl Subsample {
    /// Distinct nodes kept.
    pub fn effective_size(&self) -> usize {
        self.nodes.len()
    }
}

#[derive(Clone, Debug)]
pub struct SubsampleSet {
    pub subs: Vec<Subsample>,
    pub clusters: Labels,
    pub n0: usize,
    pub seed: u64,
}

impl SubsampleSet {
    pub fn len(&self) -> usize {
        self.subs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subs.is_empty()
    }
}

/// Draws `t` subsamples, each taking `floor(n0 / K)` nodes with replacement
/// from every initial cluster. Repeated nodes are kept once.
pub fn draw_subsamples(
    network: &Network,
    covariates: &DyadCovariates,
    clusters: &Labels,
    t: usize,
    n0: usize,
    seed: u64,
) -> Result<SubsampleSet> {
    let n = network.n();
    if clusters.len() != n {
        return Err(Error::DimensionMismatch {
            what: "initial clustering length",
            expected: n,
            found: clusters.len(),
        });
    }
    if t == 0 {
        return Err(Error::InvalidArgument("need at least one worker".into()));
    }
    if n0 > n {
        return Err(Error::InvalidArgument(format!(
            "subsample size {n0} exceeds network size {n}"
        )));
    }
    let k = clusters.k();
    let per = n0 / k;
    if per == 0 {
        return Err(Error::InvalidArgument(format!(
            "subsample size {n0} leaves no nodes per group for K = {k}"
        )));
    }
    let mut groups = vec![Vec::new(); k];
    for i in 0..n {
        groups[clusters.get(i)].push(i);
    }
    if let Some(g) = groups.iter().position(|m| m.is_empty()) {
        return Err(Error::InvalidArgument(format!(
            "initial cluster {} is empty",
            g + 1
        )));
    }
    let spec = RngSpec::new(seed);
    let subs = (0..t)
        .map(|u| {
            let mut rng = spec.stream("subsample", 0, u as u64, 0);
            let mut nodes = Vec::with_capacity(per * k);
            for members in &groups {
                for _ in 0..per {
                    nodes.push(members[rng.random_range(0..members.len())]);
                }
            }
            let drawn = nodes.len();
            nodes.sort_unstable();
            nodes.dedup();
            Subsample {
                network: network.induced(&nodes),
                covariates: covariates.restrict(&nodes),
                labels: clusters.restrict(&nodes),
                drawn,
                nodes,
            }
        })
        .collect();
    Ok(SubsampleSet {
        subs,
        clusters: clusters.clone(),
        n0,
        seed,
    })
}

/// Whether worker estimates are relabeled before averaging.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Alignment {
    None,
    /// Each estimate is permuted to best match the first one's theta.
    #[default]
    MatchToFirst,
}

/// Componentwise mean of `estimates`, after optional alignment.
pub fn average_estimates(estimates: &[Params], alignment: Alignment) -> Result<Params> {
    let first = estimates
        .first()
        .ok_or_else(|| Error::InvalidArgument("nothing to average".into()))?;
    let (k, p) = (first.k(), first.p());
    let mut theta = vec![0.0; k * k];
    let mut beta = vec![0.0; p];
    let mut pi = vec![0.0; k];
    for est in estimates {
        if est.k() != k || est.p() != p {
            return Err(Error::DimensionMismatch {
                what: "estimate K",
                expected: k,
                found: est.k(),
            });
        }
        let aligned = match alignment {
            Alignment::None => est.clone(),
            Alignment::MatchToFirst => est.permuted(&align_to(est, first)),
        };
        for (s, v) in theta.iter_mut().zip(aligned.theta_flat()) {
            *s += v;
        }
        for (s, v) in beta.iter_mut().zip(aligned.beta()) {
            *s += v;
        }
        for (s, v) in pi.iter_mut().zip(aligned.pi()) {
            *s += v;
        }
    }
    let t = estimates.len() as f64;
    let scale = |v: &mut Vec<f64>| v.iter_mut().for_each(|x| *x /= t);
    scale(&mut theta);
    scale(&mut beta);
    scale(&mut pi);
    Params::new(k, theta, beta, pi)
}

/// What one worker did in one round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    /// 1-based round.
    pub round: usize,
    pub worker: usize,
    /// Lineage of the estimate the worker advanced: the worker that held
    /// it before round 1.
    pub lineage: usize,
    /// Worker that holds this lineage in the next round.
    pub sent_to: usize,
    /// Seconds since the fit started.
    pub started: f64,
    pub finished: f64,
}

/// Per-round record kept by the coordinator.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundLedger {
    pub entries: Vec<LedgerEntry>,
    pub workers: usize,
    pub rounds: usize,
    pub communicate: bool,
}

impl RoundLedger {
    /// Workers visited by each lineage, in round order.
    pub fn visits(&self, lineage: usize) -> Vec<usize> {
        let mut v: Vec<&LedgerEntry> = self.entries.iter().filter(|e| e.lineage == lineage).collect();
        v.sort_by_key(|e| e.round);
        v.into_iter().map(|e| e.worker).collect()
    }

    /// True when every round started after the previous round finished on
    /// every worker.
    pub fn rounds_are_separated(&self) -> bool {
        (1..self.rounds).all(|r| {
            let end = self
                .entries
                .iter()
                .filter(|e| e.round == r)
                .map(|e| e.finished)
                .fold(f64::NEG_INFINITY, f64::max);
            self.entries
                .iter()
                .filter(|e| e.round == r + 1)
                .all(|e| e.started >= end)
        })
    }
}

#[derive(Clone, Debug)]
pub struct ParallelFit {
    /// Average of the final worker estimates.
    pub params: Params,
    /// Final estimate held by each worker.
    pub workers: Vec<Params>,
    pub ledger: RoundLedger,
}

struct Report {
    worker: usize,
    outcome: Result<Params>,
    started: f64,
    finished: f64,
}

/// Runs `config.max_iter` rounds of case-control MCEM on every sub, all
/// workers starting from `shared_init`. With `communicate`, after each round
/// worker `u` continues from the estimate worker `u - 1` produced (worker 0
/// from worker `T - 1`).
fn run_rounds(
    subs: &SubsampleSet,
    config: &FitConfig,
    shared_init: &Params,
    communicate: bool,
    alignment: Alignment,
) -> Result<ParallelFit> {
    config.check()?;
    let t = subs.len();
    if t == 0 {
        return Err(Error::InvalidArgument("no subsamples".into()));
    }
    let rounds = config.max_iter;
    let clock = Instant::now();
    let mut ledger = RoundLedger {
        entries: Vec::with_capacity(t * rounds),
        workers: t,
        rounds,
        communicate,
    };
    // lineage[u]: lineage held by worker u in the current round.
    let mut lineage: Vec<usize> = (0..t).collect();
    let mut held: Vec<Params> = vec![shared_init.clone(); t];

    std::thread::scope(|scope| -> Result<()> {
        let (report_tx, report_rx) = mpsc::channel::<Report>();
        let mut inboxes = Vec::with_capacity(t);
        for (u, sub) in subs.subs.iter().enumerate() {
            let (tx, rx) = mpsc::channel::<Params>();
            inboxes.push(tx);
            let report_tx = report_tx.clone();
            let clock = &clock;
            scope.spawn(move || {
                let mut state = match McemState::new(
                    &sub.network,
                    &sub.covariates,
                    config,
                    shared_init,
                    &sub.labels,
                    u as u64,
                ) {
                    Ok(s) => Some(s),
                    Err(e) => {
                        let _ = report_tx.send(Report {
                            worker: u,
                            outcome: Err(e),
                            started: 0.0,
                            finished: 0.0,
                        });
                        None
                    }
                };
                while let Ok(params) = rx.recv() {
                    let Some(state) = state.as_mut() else { break };
                    let started = clock.elapsed().as_secs_f64();
                    state.set_params(params);
                    let outcome = state.step().map(|r| r.params);
                    let finished = clock.elapsed().as_secs_f64();
                    if report_tx
                        .send(Report {
                            worker: u,
                            outcome,
                            started,
                            finished,
                        })
                        .is_err()
                    {
                        break;
                    }
                }
            });
        }
        drop(report_tx);

        for round in 1..=rounds {
            for (u, inbox) in inboxes.iter().enumerate() {
                inbox
                    .send(held[u].clone())
                    .map_err(|_| Error::InvalidArgument("worker exited early".into()).in_worker(u))?;
            }
            // Barrier: the round ends when every worker has reported.
            let mut results: Vec<Option<Report>> = (0..t).map(|_| None).collect();
            for _ in 0..t {
                let report = report_rx
                    .recv()
                    .map_err(|_| Error::InvalidArgument("worker channel closed".into()))?;
                let u = report.worker;
                results[u] = Some(report);
            }
            let mut produced = Vec::with_capacity(t);
            for (u, report) in results.into_iter().enumerate() {
                let report = report.expect("every worker reported");
                let params = report.outcome.map_err(|e| e.in_worker(u))?;
                ledger.entries.push(LedgerEntry {
                    round,
                    worker: u,
                    lineage: lineage[u],
                    sent_to: if communicate { (u + 1) % t } else { u },
                    started: report.started,
                    finished: report.finished,
                });
                produced.push(params);
            }
            if communicate {
                produced.rotate_right(1);
                lineage.rotate_right(1);
            }
            held = produced;
        }
        drop(inboxes);
        Ok(())
    })?;

    // Report final estimates in lineage order so that averaging does not
    // depend on where the ring stopped.
    let mut workers = vec![None; t];
    for (u, params) in held.into_iter().enumerate() {
        workers[lineage[u]] = Some(params);
    }
    let workers: Vec<Params> = workers.into_iter().map(|p| p.expect("each lineage held once")).collect();
    let params = average_estimates(&workers, alignment)?;
    Ok(ParallelFit {
        params,
        workers,
        ledger,
    })
}

/// Independent fits on every sub, averaged.
pub fn fit_nocomm(
    subs: &SubsampleSet,
    config: &FitConfig,
    shared_init: &Params,
    alignment: Alignment,
) -> Result<ParallelFit> {
    run_rounds(subs, config, shared_init, false, alignment)
}

/// Fits with a ring exchange of running estimates after every round,
/// averaged at the end.
pub fn fit_comm(
    subs: &SubsampleSet,
    config: &FitConfig,
    shared_init: &Params,
    alignment: Alignment,
) -> Result<ParallelFit> {
    run_rounds(subs, config, shared_init, true, alignment)
}

/// Labels for the whole network under fixed parameters: a short
/// case-control Gibbs run from `init`, summarized by per-node majority.
pub fn label_readout(
    network: &Network,
    covariates: &DyadCovariates,
    params: &Params,
    init: &Labels,
    config: &FitConfig,
) -> Result<Labels> {
    let problem = Problem::new(network, covariates)?;
    let estep = EStepConfig {
        m: config.schedule.at(0),
        burnin: config.burnin,
        thin: config.thin,
        mode: EStepMode::CaseControl,
        plan_mode: PlanMode::Stale,
        m0: Controls::resolve(&config.controls, network),
    };
    let mut rng = RngSpec::new(config.seed).stream("readout", 0, 0, 0);
    Ok(run_estep_with(&problem, params, &estep, init, &mut rng)?.majority())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::mcem_fit;

    fn instance() -> (Network, DyadCovariates, Labels) {
        let n = 60;
        let mut rng = RngSpec::new(5).stream("t", 0, 0, 0);
        let z: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let p = if z[i] == z[j] { 0.25 } else { 0.04 };
                if rng.random::<f64>() < p {
                    edges.push((i, j));
                }
            }
        }
        let net = Network::from_edges(n, edges).unwrap();
        let cov = DyadCovariates::seeded_bernoulli(n, 1, 0.5, 2).unwrap();
        (net, cov, Labels::new(2, z).unwrap())
    }

    fn init(p: usize) -> Params {
        Params::from_rows(&[vec![-1.0, -3.0], vec![-3.0, -1.0]], vec![0.0; p], vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn subsamples_are_stratified_restrictions() {
        let (net, cov, z) = instance();
        let set = draw_subsamples(&net, &cov, &z, 3, 20, 9).unwrap();
        for sub in &set.subs {
            assert_eq!(sub.drawn, 20);
            assert!(sub.nodes.windows(2).all(|w| w[0] < w[1]));
            let counts = sub.labels.counts();
            assert!(counts.iter().all(|&c| c > 0));
            for (u, v) in sub.network.edges() {
                assert!(net.has_edge(sub.nodes[u], sub.nodes[v]));
            }
            for (a, &u) in sub.nodes.iter().enumerate() {
                for (b, &v) in sub.nodes.iter().enumerate() {
                    assert_eq!(sub.network.has_edge(a, b), net.has_edge(u, v));
                }
                assert!(sub.network.degree(a) <= net.degree(u));
            }
        }
    }

    #[test]
    fn single_worker_matches_serial_fit() {
        let (net, cov, z) = instance();
        let set = draw_subsamples(&net, &cov, &z, 1, 40, 1).unwrap();
        let config = FitConfig {
            max_iter: 4,
            tol: 1e-300,
            ..FitConfig::case_control(7)
        };
        let comm = fit_comm(&set, &config, &init(1), Alignment::None).unwrap();
        let nocomm = fit_nocomm(&set, &config, &init(1), Alignment::None).unwrap();
        let sub = &set.subs[0];
        let serial = mcem_fit(&sub.network, &sub.covariates, &config, &init(1), &sub.labels).unwrap();
        assert_eq!(comm.params, serial.params);
        assert_eq!(nocomm.params, serial.params);
    }

    #[test]
    fn ring_visits_every_worker() {
        let (net, cov, z) = instance();
        let set = draw_subsamples(&net, &cov, &z, 3, 20, 2).unwrap();
        let config = FitConfig {
            max_iter: 3,
            schedule: crate::fit::MSchedule::Constant(3),
            burnin: 1,
            ..FitConfig::case_control(1)
        };
        let fit = fit_comm(&set, &config, &init(1), Alignment::MatchToFirst).unwrap();
        for l in 0..3 {
            let mut v = fit.ledger.visits(l);
            v.sort_unstable();
            assert_eq!(v, vec![0, 1, 2]);
        }
        assert!(fit.ledger.rounds_are_separated());
        let again = fit_comm(&set, &config, &init(1), Alignment::MatchToFirst).unwrap();
        assert_eq!(fit.params, again.params);
    }

    #[test]
    fn averaging_fixed_points() {
        let a = init(1);
        assert_eq!(average_estimates(&[a.clone(), a.clone()], Alignment::None).unwrap(), a);
        let mut b = a.clone();
        b.set_theta(0, 0, 0.5);
        let swapped = b.permuted(&[1, 0]);
        let avg = average_estimates(&[b.clone(), swapped], Alignment::MatchToFirst).unwrap();
        assert!(avg.max_abs_diff(&b) < 1e-15);
    }
}
