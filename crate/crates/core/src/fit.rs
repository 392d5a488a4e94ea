//! Serial Monte Carlo EM.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::covariates::DyadCovariates;
use crate::error::{Error, Result};
use crate::gibbs::{run_estep_with, EStepConfig, EStepMode, EStepSample};
use crate::likelihood::{PlanMode, Problem};
use crate::mstep::{update_pi, update_theta_beta, QFunction};
use crate::network::Network;
use crate::params::{Labels, Params};
use crate::rng::RngSpec;

/// Retained samples per EM iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum MSchedule {
    Constant(usize),
    /// `start + step * r` at iteration `r` (0-based).
    Linear { start: usize, step: usize },
}

impl MSchedule {
    pub fn at(&self, iteration: usize) -> usize {
        match *self {
            MSchedule::Constant(m) => m,
            MSchedule::Linear { start, step } => start + step * iteration,
        }
    }
}

/// How many controls each node draws per group.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Controls {
    /// `m0 = round(rate * average degree)` of the network being fitted.
    Rate(f64),
    Fixed(usize),
}

impl Controls {
    pub fn resolve(&self, network: &Network) -> usize {
        match *self {
            Controls::Rate(r) => ((r * network.average_degree()).round() as usize).max(1),
            Controls::Fixed(m0) => m0.max(1),
        }
    }
}

/// Settings for one MCEM run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub mode: EStepMode,
    pub plan_mode: PlanMode,
    /// Iteration cap `R`.
    pub max_iter: usize,
    pub schedule: MSchedule,
    pub burnin: usize,
    pub thin: usize,
    pub controls: Controls,
    /// Stop once the sup-norm parameter change falls below this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            mode: EStepMode::Full,
            plan_mode: PlanMode::Stale,
            max_iter: 100,
            schedule: MSchedule::Constant(50),
            burnin: 20,
            thin: 1,
            controls: Controls::Rate(7.0),
            tol: 1e-4,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn case_control(seed: u64) -> Self {
        Self {
            mode: EStepMode::CaseControl,
            seed,
            ..Self::default()
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("R must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument("tolerance must be positive".into()));
        }
        if self.schedule.at(0) == 0 {
            return Err(Error::InvalidArgument("M must be at least 1".into()));
        }
        Ok(())
    }
}

/// One EM iteration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub params: Params,
    /// Q at the parameters the iteration started from.
    pub q_start: f64,
    /// Q at the updated parameters, over the same sample.
    pub q_value: f64,
    /// Sup-norm change of the parameters.
    pub change: f64,
    pub newton_iterations: usize,
    pub newton_converged: bool,
    pub seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    Converged,
    IterationCap,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub params: Params,
    pub trajectory: Vec<IterationRecord>,
    pub sample: EStepSample,
    /// Per-node majority over the final sample.
    pub labels: Labels,
    pub stop: StopReason,
    /// Controls per node and group (case-control mode).
    pub m0: Option<usize>,
}

impl FitResult {
    pub fn converged(&self) -> bool {
        self.stop == StopReason::Converged
    }
}

/// The state carried between EM iterations: current estimate, warm-start
/// labels and the stream key of the worker running it.
pub struct McemState<'a> {
    problem: Problem<'a>,
    config: FitConfig,
    params: Params,
    labels: Labels,
    m0: usize,
    worker: u64,
    iteration: usize,
    last_sample: Option<EStepSample>,
}

impl<'a> McemState<'a> {
    pub fn new(
        network: &'a Network,
        covariates: &'a DyadCovariates,
        config: &FitConfig,
        init: &Params,
        init_labels: &Labels,
        worker: u64,
    ) -> Result<Self> {
        config.check()?;
        let problem = Problem::new(network, covariates)?;
        if init_labels.len() != network.n() || init_labels.k() != init.k() {
            return Err(Error::DimensionMismatch {
                what: "initial labels",
                expected: network.n(),
                found: init_labels.len(),
            });
        }
        if init.p() != covariates.p() {
            return Err(Error::DimensionMismatch {
                what: "beta length vs covariate dimension",
                expected: covariates.p(),
                found: init.p(),
            });
        }
        Ok(Self {
            m0: config.controls.resolve(network),
            problem,
            config: config.clone(),
            params: init.clone(),
            labels: init_labels.clone(),
            worker,
            iteration: 0,
            last_sample: None,
        })
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    /// Replaces the running estimate; labels stay as they are.
    pub fn set_params(&mut self, params: Params) {
        self.params = params;
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn m0(&self) -> usize {
        self.m0
    }

    pub fn take_sample(&mut self) -> Option<EStepSample> {
        self.last_sample.take()
    }

    pub fn last_sample(&self) -> Option<&EStepSample> {
        self.last_sample.as_ref()
    }

    /// One E-step followed by the M-step updates.
    pub fn step(&mut self) -> Result<IterationRecord> {
        let r = self.iteration;
        self.step_inner().map_err(|e| e.at_iteration(r + 1))
    }

    fn step_inner(&mut self) -> Result<IterationRecord> {
        let started = Instant::now();
        let r = self.iteration;
        let spec = RngSpec::new(self.config.seed);
        let mut rng = spec.stream("mcem", 0, self.worker, r as u64);
        let estep = EStepConfig {
            m: self.config.schedule.at(r),
            burnin: self.config.burnin,
            thin: self.config.thin,
            mode: self.config.mode,
            plan_mode: self.config.plan_mode,
            m0: self.m0,
        };
        let sample = run_estep_with(&self.problem, &self.params, &estep, &self.labels, &mut rng)?;
        let q = QFunction::from_sample(
            &self.problem,
            &sample,
            self.config.mode,
            self.config.plan_mode,
            &mut rng,
        )?;
        let q_start = q.total(&self.params);
        let newton = update_theta_beta(&q, &self.params)?;
        let mut next = newton.params;
        let pi = update_pi(&sample.samples)?;
        if let Some(k) = pi.iter().position(|&p| p == 0.0) {
            log::warn!("class {} received no mass at iteration {}", k + 1, r + 1);
        }
        next.set_pi(pi)?;
        let q_value = q.total(&next);
        let change = next.max_abs_diff(&self.params);
        self.params = next;
        self.labels = sample.last().clone();
        self.last_sample = Some(sample);
        self.iteration += 1;
        Ok(IterationRecord {
            iteration: self.iteration,
            params: self.params.clone(),
            q_start,
            q_value,
            change,
            newton_iterations: newton.iterations,
            newton_converged: newton.converged,
            seconds: started.elapsed().as_secs_f64(),
        })
    }
}

/// Alternates E- and M-steps from `init` until the parameter change drops
/// below `config.tol` or `config.max_iter` iterations have run.
pub fn mcem_fit(
    network: &Network,
    covariates: &DyadCovariates,
    config: &FitConfig,
    init: &Params,
    init_labels: &Labels,
) -> Result<FitResult> {
    let mut state = McemState::new(network, covariates, config, init, init_labels, 0)?;
    let mut trajectory = Vec::new();
    let mut stop = StopReason::IterationCap;
    while state.iteration() < config.max_iter {
        let record = state.step()?;
        let change = record.change;
        trajectory.push(record);
        if change < config.tol {
            stop = StopReason::Converged;
            break;
        }
    }
    let sample = state.take_sample().expect("at least one iteration ran");
    Ok(FitResult {
        params: state.params().clone(),
        labels: sample.majority(),
        trajectory,
        sample,
        stop,
        m0: (config.mode == EStepMode::CaseControl).then_some(state.m0()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_iteration_decomposes() {
        let net = Network::from_edges(8, [(0, 1), (1, 2), (0, 2), (4, 5), (5, 6), (6, 7), (4, 7), (3, 4)]).unwrap();
        let cov = DyadCovariates::none(8);
        let init = Params::from_rows(&[vec![0.5, -1.0], vec![-1.0, 0.5]], vec![], vec![0.5, 0.5]).unwrap();
        let labels = Labels::new(2, vec![0, 0, 0, 0, 1, 1, 1, 1]).unwrap();
        let config = FitConfig { max_iter: 1, seed: 4, ..Default::default() };
        let fit = mcem_fit(&net, &cov, &config, &init, &labels).unwrap();
        assert_eq!(fit.trajectory.len(), 1);

        let problem = Problem::new(&net, &cov).unwrap();
        let mut rng = RngSpec::new(4).stream("mcem", 0, 0, 0);
        let estep = EStepConfig { m: 50, burnin: 20, ..Default::default() };
        let sample = run_estep_with(&problem, &init, &estep, &labels, &mut rng).unwrap();
        let q = QFunction::full(&problem, &sample.samples).unwrap();
        let mut expected = update_theta_beta(&q, &init).unwrap().params;
        expected.set_pi(update_pi(&sample.samples).unwrap()).unwrap();
        assert_eq!(fit.params, expected);
        assert!(fit.trajectory[0].q_value >= fit.trajectory[0].q_start - 1e-9);
    }

    #[test]
    fn linear_schedule() {
        let s = MSchedule::Linear { start: 10, step: 5 };
        assert_eq!(s.at(0), 10);
        assert_eq!(s.at(3), 25);
    }

    #[test]
    fn rate_controls_round() {
        let net = Network::from_edges(4, [(0, 1), (2, 3), (1, 2)]).unwrap();
        assert_eq!(Controls::Rate(7.0).resolve(&net), 11);
        assert_eq!(Controls::Fixed(0).resolve(&net), 1);
    }
}
