//! Choosing K: observed-data log-likelihood by path sampling, and a BIC
//! scan over candidate K.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariates::DyadCovariates;
use crate::error::{Error, Result};
use crate::fit::FitConfig;
use crate::gibbs::GibbsSampler;
use crate::init::{init_params, spectral_init, DEFAULT_TAU};
use crate::likelihood::{edge_log_lik, LogitTable, Problem};
use crate::network::Network;
use crate::parallel::{draw_subsamples, fit_comm, label_readout, Alignment};
use crate::params::{Labels, Params};
use crate::rng::RngSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathSamplingConfig {
    /// Temperatures, evenly spaced on [0, 1] including both ends.
    pub grid: usize,
    pub burnin: usize,
    /// Sweeps averaged at each temperature.
    pub sweeps: usize,
    /// Independent repetitions used for the standard error.
    pub runs: usize,
    pub seed: u64,
}

impl Default for PathSamplingConfig {
    fn default() -> Self {
        Self {
            grid: 21,
            burnin: 50,
            sweeps: 200,
            runs: 5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathEstimate {
    /// Mean over runs.
    pub log_lik: f64,
    /// Between-run standard error of the mean.
    pub std_error: f64,
    pub runs: Vec<f64>,
}

/// Estimates `log sum_z prod_i pi_{z_i} L(A | z, theta, beta)`.
///
/// At temperature `t` a Gibbs chain targets `prod pi_{z_i} * L^t`; the mean
/// edge log-likelihood along the chain is the derivative of the log
/// normalizer in `t`, which is integrated over the grid by the trapezoid
/// rule. Chains start from `init` (a prior draw when `None`).
pub fn path_sampling_loglik(
    network: &Network,
    covariates: &DyadCovariates,
    params: &Params,
    init: Option<&Labels>,
    config: &PathSamplingConfig,
) -> Result<PathEstimate> {
    if config.grid < 2 {
        return Err(Error::InvalidArgument("need at least two temperatures".into()));
    }
    if config.runs == 0 || config.sweeps == 0 {
        return Err(Error::InvalidArgument("need at least one run and one sweep".into()));
    }
    let problem = Problem::new(network, covariates)?;
    if let Some(z) = init {
        if z.len() != network.n() || z.k() != params.k() {
            return Err(Error::DimensionMismatch {
                what: "initial labels",
                expected: network.n(),
                found: z.len(),
            });
        }
    }
    let table = LogitTable::new(params, covariates)?;
    let spec = RngSpec::new(config.seed);
    let h = 1.0 / (config.grid - 1) as f64;

    let cells: Vec<(usize, usize)> = (0..config.runs)
        .flat_map(|r| (0..config.grid).map(move |g| (r, g)))
        .collect();
    let means = cells
        .par_iter()
        .map(|&(run, g)| {
            let t = g as f64 * h;
            let mut rng = spec.stream("path", run as u64, 0, g as u64);
            let mut labels = match init {
                Some(z) => z.clone(),
                None => prior_draw(params, network.n(), &mut rng),
            };
            let mut sampler = GibbsSampler::full(&problem, params)?.with_temperature(t);
            let mut ell = edge_log_lik(&problem, &table, &labels);
            for _ in 0..config.burnin {
                ell += sampler.sweep_delta(&mut labels, &mut rng);
            }
            let mut sum = 0.0;
            for _ in 0..config.sweeps {
                ell += sampler.sweep_delta(&mut labels, &mut rng);
                sum += ell;
            }
            let mean = sum / config.sweeps as f64;
            if !mean.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "non-finite edge log-likelihood at temperature {t}"
                )));
            }
            Ok(mean)
        })
        .collect::<Result<Vec<f64>>>()?;

    let runs: Vec<f64> = means
        .chunks(config.grid)
        .map(|m| trapezoid(m, h))
        .collect();
    let r = runs.len() as f64;
    let log_lik = runs.iter().sum::<f64>() / r;
    let std_error = if runs.len() > 1 {
        let var = runs.iter().map(|v| (v - log_lik).powi(2)).sum::<f64>() / (r - 1.0);
        (var / r).sqrt()
    } else {
        0.0
    };
    Ok(PathEstimate {
        log_lik,
        std_error,
        runs,
    })
}

fn trapezoid(values: &[f64], h: f64) -> f64 {
    let inner: f64 = values[1..values.len() - 1].iter().sum();
    h * (inner + 0.5 * (values[0] + values[values.len() - 1]))
}

fn prior_draw<R: rand::Rng + ?Sized>(params: &Params, n: usize, rng: &mut R) -> Labels {
    let pi = params.pi();
    let z = (0..n)
        .map(|_| {
            let u = rng.random::<f64>();
            let mut acc = 0.0;
            pi.iter()
                .position(|&p| {
                    acc += p;
                    u < acc
                })
                .unwrap_or(pi.len() - 1)
        })
        .collect();
    Labels::new(params.k(), z).expect("labels drawn below K")
}

/// Free parameters counted by the BIC penalty.
pub fn parameter_count(k: usize, p: usize) -> usize {
    k * (k + 1) / 2 + p + k - 1
}

/// `q * log(n (n - 1) / 2)`.
pub fn bic_penalty(n: usize, k: usize, p: usize) -> f64 {
    let dyads = n as f64 * (n as f64 - 1.0) / 2.0;
    parameter_count(k, p) as f64 * dyads.ln()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BicConfig {
    pub fit: FitConfig,
    pub workers: usize,
    /// Nodes drawn per initial cluster for each sub.
    pub per_group: usize,
    pub tau: f64,
    pub path: PathSamplingConfig,
}

impl Default for BicConfig {
    fn default() -> Self {
        Self {
            fit: FitConfig::case_control(0),
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            per_group: 50,
            tau: DEFAULT_TAU,
            path: PathSamplingConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BicRow {
    pub k: usize,
    pub log_lik: f64,
    pub std_error: f64,
    pub penalty: f64,
    /// `-2 log_lik + penalty`.
    pub bic: f64,
    /// Set when this K could not be fitted; the numeric fields are NaN.
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BicScan {
    pub rows: Vec<BicRow>,
    /// K with the smallest BIC among the rows that succeeded.
    pub best: Option<usize>,
}

/// Fits every K in `ks` with the communicating parallel driver and scores
/// it by BIC. A failure at one K is recorded in its row and the scan moves
/// on.
pub fn bic_scan(
    network: &Network,
    covariates: &DyadCovariates,
    ks: &[usize],
    config: &BicConfig,
) -> Result<BicScan> {
    if ks.is_empty() {
        return Err(Error::InvalidArgument("empty K range".into()));
    }
    let n = network.n();
    let rows: Vec<BicRow> = ks
        .iter()
        .map(|&k| {
            let penalty = bic_penalty(n, k, covariates.p());
            match score_k(network, covariates, k, config) {
                Ok(est) => BicRow {
                    k,
                    log_lik: est.log_lik,
                    std_error: est.std_error,
                    penalty,
                    bic: -2.0 * est.log_lik + penalty,
                    error: None,
                },
                Err(e) => {
                    log::warn!("BIC scan: K = {k} failed: {e}");
                    BicRow {
                        k,
                        log_lik: f64::NAN,
                        std_error: f64::NAN,
                        penalty,
                        bic: f64::NAN,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();
    let best = rows
        .iter()
        .filter(|r| r.error.is_none())
        .min_by(|a, b| a.bic.total_cmp(&b.bic))
        .map(|r| r.k);
    Ok(BicScan { rows, best })
}

fn score_k(
    network: &Network,
    covariates: &DyadCovariates,
    k: usize,
    config: &BicConfig,
) -> Result<PathEstimate> {
    let spec = RngSpec::new(config.fit.seed);
    let clusters = spectral_init(network, k, config.tau, spec.child_seed("init", k as u64, 0, 0))?;
    let init = init_params(network, covariates, &clusters)?;
    let n0 = (config.per_group * k).min(network.n());
    let subs = draw_subsamples(
        network,
        covariates,
        &clusters,
        config.workers,
        n0,
        spec.child_seed("subsamples", k as u64, 0, 0),
    )?;
    let fit = fit_comm(&subs, &config.fit, &init, Alignment::MatchToFirst)?;
    let labels = label_readout(network, covariates, &fit.params, &clusters, &config.fit)?;
    let path = PathSamplingConfig {
        seed: spec.child_seed("path", k as u64, 0, 0),
        ..config.path.clone()
    };
    path_sampling_loglik(network, covariates, &fit.params, Some(&labels), &path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::complete_log_lik;

    fn exact_marginal(net: &Network, cov: &DyadCovariates, params: &Params) -> f64 {
        let n = net.n();
        let k = params.k();
        let mut terms = Vec::new();
        for code in 0..k.pow(n as u32) {
            let mut c = code;
            let z = (0..n)
                .map(|_| {
                    let g = c % k;
                    c /= k;
                    g
                })
                .collect();
            let labels = Labels::new(k, z).unwrap();
            terms.push(complete_log_lik(params, net, cov, &labels).unwrap());
        }
        let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
    }

    #[test]
    fn matches_enumeration_on_six_nodes() {
        let net = Network::from_edges(6, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (2, 3)]).unwrap();
        let cov = DyadCovariates::seeded_bernoulli(6, 1, 0.5, 3).unwrap();
        let params =
            Params::from_rows(&[vec![1.0, -2.0], vec![-2.0, 0.5]], vec![0.4], vec![0.45, 0.55]).unwrap();
        let exact = exact_marginal(&net, &cov, &params);
        let est = path_sampling_loglik(&net, &cov, &params, None, &PathSamplingConfig::default()).unwrap();
        assert!(
            (est.log_lik - exact).abs() <= 3.0 * est.std_error,
            "{} vs {exact} (se {})",
            est.log_lik,
            est.std_error
        );
    }

    #[test]
    fn single_group_is_exact() {
        let net = Network::from_edges(5, [(0, 1), (1, 2), (3, 4)]).unwrap();
        let cov = DyadCovariates::none(5);
        let params = Params::from_rows(&[vec![-0.7]], vec![], vec![1.0]).unwrap();
        let est = path_sampling_loglik(&net, &cov, &params, None, &PathSamplingConfig::default()).unwrap();
        let exact = complete_log_lik(&params, &net, &cov, &Labels::constant(1, 5)).unwrap();
        assert!((est.log_lik - exact).abs() < 1e-9);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn penalty_formula() {
        assert_eq!(parameter_count(1, 0), 1);
        assert_eq!(parameter_count(3, 3), 11);
        assert!((bic_penalty(10, 1, 0) - 45f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn trapezoid_is_exact_for_lines() {
        let h = 0.25;
        let v: Vec<f64> = (0..5).map(|g| 2.0 + 3.0 * g as f64 * h).collect();
        assert!((trapezoid(&v, h) - 3.5).abs() < 1e-12);
    }
}
