//! Replicated simulation experiments and their output tables.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::covariates::DyadCovariates;
use crate::datagen::{simulate, SimDesign};
use crate::error::{Error, Result};
use crate::fit::{mcem_fit, Controls, FitConfig, MSchedule};
use crate::gibbs::EStepMode;
use crate::init::{init_params, spectral_init, DEFAULT_TAU};
use crate::io::{load_dataset, param_columns, param_values, Cleaning};
use crate::metrics::{nmi, param_error};
use crate::network::Network;
use crate::parallel::{draw_subsamples, fit_comm, fit_nocomm, label_readout, Alignment};
use crate::params::{Labels, Params};
use crate::rng::RngSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Full,
    CaseControl,
    ParallelComm,
    ParallelNocomm,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Full,
        Method::CaseControl,
        Method::ParallelNocomm,
        Method::ParallelComm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Full => "full",
            Method::CaseControl => "case-control",
            Method::ParallelComm => "parallel-comm",
            Method::ParallelNocomm => "parallel-nocomm",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    /// A fresh network per replicate; the design seed is replaced by the
    /// replicate's seed.
    Synthetic(SimDesign),
    Dataset {
        edges: PathBuf,
        attributes: Option<PathBuf>,
        #[serde(default)]
        cleaning: Cleaning,
        k: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub source: Source,
    pub methods: Vec<Method>,
    /// Workers for the parallel methods.
    pub workers: usize,
    /// Nodes drawn per initial cluster for each sub.
    pub per_group: usize,
    /// Case-to-control rate.
    pub rate: f64,
    pub max_iter: usize,
    pub m: usize,
    pub burnin: usize,
    pub tol: f64,
    pub tau: f64,
    pub alignment: Alignment,
    pub replicates: usize,
    pub seed: u64,
    /// Replicates run at once.
    pub concurrency: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let fit = FitConfig::default();
        Self {
            source: Source::Synthetic(SimDesign::standard(1000, vec![1.0 / 3.0; 3], 0.04, 8.0, 0)),
            methods: Method::ALL.to_vec(),
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            per_group: 50,
            rate: 7.0,
            max_iter: fit.max_iter,
            m: 50,
            burnin: fit.burnin,
            tol: fit.tol,
            tau: DEFAULT_TAU,
            alignment: Alignment::MatchToFirst,
            replicates: 1,
            seed: 0,
            concurrency: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn check(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::InvalidArgument("no methods selected".into()));
        }
        if self.replicates == 0 || self.workers == 0 || self.concurrency == 0 {
            return Err(Error::InvalidArgument(
                "replicates, workers and concurrency must be positive".into(),
            ));
        }
        if let Source::Synthetic(d) = &self.source {
            d.check()?;
        }
        self.fit_config(EStepMode::Full, 0).check()
    }

    pub fn fit_config(&self, mode: EStepMode, seed: u64) -> FitConfig {
        FitConfig {
            mode,
            max_iter: self.max_iter,
            schedule: MSchedule::Constant(self.m),
            burnin: self.burnin,
            controls: Controls::Rate(self.rate),
            tol: self.tol,
            seed,
            ..FitConfig::default()
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Metrics for one method on one replicate. Error fields are NaN when
/// there is no ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub replicate: usize,
    pub method: Method,
    pub err_pi: f64,
    pub err_theta: f64,
    pub err_beta: f64,
    pub bias_pi: f64,
    pub bias_theta: f64,
    pub bias_beta: f64,
    pub nmi: f64,
    pub iterations: usize,
    pub params: Option<Params>,
    pub seconds: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub outcomes: Vec<MethodOutcome>,
    pub dir: PathBuf,
}

struct Replicate {
    network: Network,
    covariates: DyadCovariates,
    truth: Option<(Params, Labels)>,
    k: usize,
}

fn build_replicate(config: &ExperimentConfig, r: usize) -> Result<Replicate> {
    let spec = RngSpec::new(config.seed);
    match &config.source {
        Source::Synthetic(design) => {
            let design = SimDesign {
                seed: spec.child_seed("replicate", r as u64, 0, 0),
                ..design.clone()
            };
            let inst = simulate(&design)?;
            Ok(Replicate {
                k: design.k(),
                network: inst.network,
                covariates: inst.covariates,
                truth: Some((inst.truth, inst.labels)),
            })
        }
        Source::Dataset {
            edges,
            attributes,
            cleaning,
            k,
        } => {
            let d = load_dataset(edges, attributes.as_deref(), cleaning)?;
            Ok(Replicate {
                network: d.network,
                covariates: d.covariates,
                truth: None,
                k: *k,
            })
        }
    }
}

fn run_method(
    config: &ExperimentConfig,
    rep: &Replicate,
    clusters: &Labels,
    init: &Params,
    method: Method,
    seed: u64,
) -> Result<(Params, Labels, usize)> {
    let (net, cov) = (&rep.network, &rep.covariates);
    match method {
        Method::Full | Method::CaseControl => {
            let mode = if method == Method::Full {
                EStepMode::Full
            } else {
                EStepMode::CaseControl
            };
            let fit = mcem_fit(net, cov, &config.fit_config(mode, seed), init, clusters)?;
            Ok((fit.params, fit.labels, fit.trajectory.len()))
        }
        Method::ParallelComm | Method::ParallelNocomm => {
            let n0 = (config.per_group * rep.k).min(net.n());
            let subs = draw_subsamples(net, cov, clusters, config.workers, n0, seed)?;
            let fc = config.fit_config(EStepMode::CaseControl, seed);
            let fit = if method == Method::ParallelComm {
                fit_comm(&subs, &fc, init, config.alignment)?
            } else {
                fit_nocomm(&subs, &fc, init, config.alignment)?
            };
            let labels = label_readout(net, cov, &fit.params, clusters, &fc)?;
            Ok((fit.params, labels, fit.ledger.rounds))
        }
    }
}

fn run_replicate(config: &ExperimentConfig, r: usize) -> Vec<MethodOutcome> {
    let failed = |method: Method, e: &Error| MethodOutcome {
        replicate: r,
        method,
        err_pi: f64::NAN,
        err_theta: f64::NAN,
        err_beta: f64::NAN,
        bias_pi: f64::NAN,
        bias_theta: f64::NAN,
        bias_beta: f64::NAN,
        nmi: f64::NAN,
        iterations: 0,
        params: None,
        seconds: 0.0,
        error: Some(e.to_string()),
    };
    let spec = RngSpec::new(config.seed);
    let setup = build_replicate(config, r).and_then(|rep| {
        let started = Instant::now();
        let clusters = spectral_init(&rep.network, rep.k, config.tau, spec.child_seed("init", r as u64, 0, 0))?;
        let init = init_params(&rep.network, &rep.covariates, &clusters)?;
        Ok((rep, clusters, init, started.elapsed().as_secs_f64()))
    });
    let (rep, clusters, init, init_seconds) = match setup {
        Ok(s) => s,
        Err(e) => return config.methods.iter().map(|&m| failed(m, &e)).collect(),
    };
    config
        .methods
        .iter()
        .enumerate()
        .map(|(mi, &method)| {
            let seed = spec.child_seed(method.name(), r as u64, mi as u64, 0);
            let started = Instant::now();
            match run_method(config, &rep, &clusters, &init, method, seed) {
                Ok((params, labels, iterations)) => {
                    let seconds = init_seconds + started.elapsed().as_secs_f64();
                    let (err, score) = match &rep.truth {
                        Some((truth, z)) => (param_error(&params, truth, true).ok(), nmi(&labels, z).ok()),
                        None => (None, None),
                    };
                    let nan = f64::NAN;
                    MethodOutcome {
                        replicate: r,
                        method,
                        err_pi: err.map_or(nan, |e| e.err_pi),
                        err_theta: err.map_or(nan, |e| e.err_theta),
                        err_beta: err.map_or(nan, |e| e.err_beta),
                        bias_pi: err.map_or(nan, |e| e.bias_pi),
                        bias_theta: err.map_or(nan, |e| e.bias_theta),
                        bias_beta: err.map_or(nan, |e| e.bias_beta),
                        nmi: score.unwrap_or(nan),
                        iterations,
                        params: Some(params),
                        seconds,
                        error: None,
                    }
                }
                Err(e) => {
                    log::warn!("replicate {r}, {}: {e}", method.name());
                    failed(method, &e)
                }
            }
        })
        .collect()
}

/// Output file names.
pub const REPLICATES_CSV: &str = "replicates.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const PLOT_CSV: &str = "plot_long.csv";
pub const TIMINGS_CSV: &str = "timings.csv";
pub const MANIFEST_JSON: &str = "manifest.json";

const METRICS: [&str; 7] = ["err_pi", "err_theta", "err_beta", "bias_pi", "bias_theta", "bias_beta", "nmi"];

fn metric_values(o: &MethodOutcome) -> [f64; 7] {
    [o.err_pi, o.err_theta, o.err_beta, o.bias_pi, o.bias_theta, o.bias_beta, o.nmi]
}

/// Runs every replicate and writes the result tables into `dir`.
///
/// Everything except `timings.csv` and the timing fields of the manifest
/// is a function of the config alone.
pub fn run_experiment(config: &ExperimentConfig, dir: &Path) -> Result<ExperimentReport> {
    config.check()?;
    fs::create_dir_all(dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.concurrency)
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let started = Instant::now();
    let outcomes: Vec<MethodOutcome> = pool.install(|| {
        (0..config.replicates)
            .into_par_iter()
            .flat_map_iter(|r| run_replicate(config, r))
            .collect()
    });
    write_replicates(&outcomes, &dir.join(REPLICATES_CSV))?;
    write_summary(config, &outcomes, &dir.join(SUMMARY_CSV))?;
    write_plot_long(&outcomes, &dir.join(PLOT_CSV))?;
    write_timings(&outcomes, &dir.join(TIMINGS_CSV))?;
    let spec = RngSpec::new(config.seed);
    let manifest = serde_json::json!({
        "config": config,
        "config_sha256": config.hash(),
        "master_seed": config.seed,
        "replicate_seeds": (0..config.replicates)
            .map(|r| spec.child_seed("replicate", r as u64, 0, 0))
            .collect::<Vec<_>>(),
        "version": env!("CARGO_PKG_VERSION"),
        "failures": outcomes.iter().filter(|o| o.error.is_some()).count(),
        "wall_seconds": started.elapsed().as_secs_f64(),
        "files": [REPLICATES_CSV, SUMMARY_CSV, PLOT_CSV, TIMINGS_CSV],
    });
    fs::write(dir.join(MANIFEST_JSON), serde_json::to_string_pretty(&manifest)?)?;
    Ok(ExperimentReport {
        outcomes,
        dir: dir.to_path_buf(),
    })
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:.6}")
    }
}

fn write_replicates(outcomes: &[MethodOutcome], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let params_header = outcomes
        .iter()
        .find_map(|o| o.params.as_ref())
        .map(param_columns)
        .unwrap_or_default();
    let mut header = vec!["replicate".to_string(), "method".to_string()];
    header.extend(METRICS.map(String::from));
    header.push("iterations".into());
    header.extend(params_header.iter().cloned());
    header.push("error".into());
    w.write_record(&header)?;
    for o in outcomes {
        let mut row = vec![o.replicate.to_string(), o.method.name().to_string()];
        row.extend(metric_values(o).map(fmt));
        row.push(o.iterations.to_string());
        match &o.params {
            Some(p) => row.extend(param_values(p).iter().map(|v| fmt(v.parse().unwrap_or(f64::NAN)))),
            None => row.extend(params_header.iter().map(|_| String::new())),
        }
        row.push(o.error.clone().unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

/// One row per method: mean estimation error of each block with the mean
/// bias beside it, then NMI.
fn write_summary(config: &ExperimentConfig, outcomes: &[MethodOutcome], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "method",
        "replicates",
        "failures",
        "err_pi",
        "bias_pi",
        "err_theta",
        "bias_theta",
        "err_beta",
        "bias_beta",
        "nmi",
        "nmi_sd",
    ])?;
    for &method in &config.methods {
        let rows: Vec<&MethodOutcome> = outcomes.iter().filter(|o| o.method == method).collect();
        let col = |f: fn(&MethodOutcome) -> f64| mean_sd(&rows.iter().map(|o| f(o)).collect::<Vec<_>>());
        let (nmi_mean, nmi_sd) = col(|o| o.nmi);
        w.write_record([
            method.name().to_string(),
            rows.len().to_string(),
            rows.iter().filter(|o| o.error.is_some()).count().to_string(),
            fmt(col(|o| o.err_pi).0),
            fmt(col(|o| o.bias_pi).0),
            fmt(col(|o| o.err_theta).0),
            fmt(col(|o| o.bias_theta).0),
            fmt(col(|o| o.err_beta).0),
            fmt(col(|o| o.bias_beta).0),
            fmt(nmi_mean),
            fmt(nmi_sd),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_plot_long(outcomes: &[MethodOutcome], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["replicate", "method", "metric", "value"])?;
    for o in outcomes {
        for (name, v) in METRICS.iter().zip(metric_values(o)) {
            if !v.is_nan() {
                w.write_record([o.replicate.to_string(), o.method.name().into(), name.to_string(), fmt(v)])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn write_timings(outcomes: &[MethodOutcome], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["replicate", "method", "iterations", "seconds"])?;
    for o in outcomes {
        w.write_record([
            o.replicate.to_string(),
            o.method.name().into(),
            o.iterations.to_string(),
            o.seconds.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            source: Source::Synthetic(SimDesign::standard(100, vec![1.0 / 3.0; 3], 0.1, 10.0, 0)),
            workers: 2,
            per_group: 20,
            max_iter: 3,
            m: 5,
            burnin: 2,
            replicates: 2,
            seed: 11,
            concurrency: 2,
            ..Default::default()
        }
    }

    #[test]
    fn smoke_run_writes_every_file() {
        let dir = tempfile::tempdir().unwrap();
        let report = run_experiment(&tiny(), dir.path()).unwrap();
        assert_eq!(report.outcomes.len(), 8);
        assert!(report.outcomes.iter().all(|o| o.error.is_none()), "{:?}", report.outcomes);
        for f in [REPLICATES_CSV, SUMMARY_CSV, PLOT_CSV, TIMINGS_CSV, MANIFEST_JSON] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let summary = fs::read_to_string(dir.path().join(SUMMARY_CSV)).unwrap();
        assert_eq!(summary.lines().count(), 5);
    }

    #[test]
    fn reruns_are_byte_identical() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let config = ExperimentConfig { replicates: 1, ..tiny() };
        run_experiment(&config, a.path()).unwrap();
        run_experiment(&config, b.path()).unwrap();
        for f in [REPLICATES_CSV, SUMMARY_CSV, PLOT_CSV] {
            assert_eq!(
                fs::read(a.path().join(f)).unwrap(),
                fs::read(b.path().join(f)).unwrap(),
                "{f}"
            );
        }
    }

    #[test]
    fn config_round_trips_through_json() {
        let c = tiny();
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_eq!("parallel-comm".parse::<Method>().unwrap(), Method::ParallelComm);
    }
}
