//! `sbm-mcem`: generate networks, fit them, run experiments.
//!
//! Exit status: 0 on success, 1 for bad arguments or configuration, 2 when
//! a run fails.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sbm_mcem::datagen::{simulate, Orientation, SimDesign, ThetaScale};
use sbm_mcem::experiment::{run_experiment, ExperimentConfig, Method};
use sbm_mcem::fit::{mcem_fit, FitConfig};
use sbm_mcem::gibbs::EStepMode;
use sbm_mcem::init::{init_params, spectral_init, DEFAULT_TAU};
use sbm_mcem::io::{self, Cleaning, RangeFilter};
use sbm_mcem::metrics::{mmd, nmi_with, NmiNormalization};
use sbm_mcem::modelselect::{bic_scan, BicConfig};
use sbm_mcem::parallel::{draw_subsamples, fit_comm, fit_nocomm, label_readout, Alignment};
use sbm_mcem::{DyadCovariates, Labels, Network};

#[derive(Parser)]
#[command(name = "sbm-mcem", version, about = "Stochastic blockmodels with dyadic covariates, fitted by Monte Carlo EM")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a network and write edges.txt, labels.txt and instance.json
    Generate(GenerateArgs),
    /// Fit one network
    Fit(FitArgs),
    /// Run replicated experiments from a JSON config
    Experiment(ExperimentArgs),
    /// Choose K by BIC
    Bic(BicArgs),
    /// Compare two label files
    Metrics(MetricsArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Class probabilities, comma separated
    #[arg(long, value_delimiter = ',', default_values_t = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0])]
    pi: Vec<f64>,
    /// Out-in-ratio
    #[arg(long, default_value_t = 0.04)]
    oir: f64,
    /// Target average degree
    #[arg(long, default_value_t = 8.0)]
    degree: f64,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = [1.0, -2.0, 1.0])]
    beta: Vec<f64>,
    /// Bernoulli parameter of each covariate
    #[arg(long, default_value_t = 0.5)]
    q: f64,
    /// Put the out-in-ratio on the diagonal of the base matrix
    #[arg(long)]
    mu_on_diagonal: bool,
    /// Use the scaled matrix as logits instead of probabilities
    #[arg(long)]
    literal_theta: bool,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InputArgs {
    /// Directory written by `generate`
    #[arg(long, conflicts_with_all = ["edges", "attributes"])]
    instance: Option<PathBuf>,
    /// Edge list (1-based ids)
    #[arg(long)]
    edges: Option<PathBuf>,
    /// Node attribute table
    #[arg(long)]
    attributes: Option<PathBuf>,
    /// Keep only nodes whose ATTR lies in [MIN, MAX], given as ATTR:MIN:MAX
    #[arg(long)]
    range_filter: Option<String>,
    /// Minimum degree kept by the cleaning filter
    #[arg(long, default_value_t = 2)]
    min_degree: usize,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Number of groups (defaults to the instance's K)
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value = "full")]
    method: String,
    #[command(flatten)]
    tuning: Tuning,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Tuning {
    /// Workers for the parallel methods (default: available cores)
    #[arg(long)]
    workers: Option<usize>,
    /// Nodes drawn per initial cluster for each sub
    #[arg(long, default_value_t = 50)]
    per_group: usize,
    /// Case-to-control rate
    #[arg(long, default_value_t = 7.0)]
    rate: f64,
    /// EM iterations (rounds for the parallel methods)
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    /// Retained Gibbs samples per iteration
    #[arg(long, default_value_t = 50)]
    m: usize,
    #[arg(long, default_value_t = 20)]
    burnin: usize,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Average worker estimates without relabeling them first
    #[arg(long)]
    no_align: bool,
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON experiment config
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BicArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value_t = 1)]
    k_min: usize,
    #[arg(long, default_value_t = 6)]
    k_max: usize,
    #[command(flatten)]
    tuning: Tuning,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV output
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MetricsArgs {
    a: PathBuf,
    b: PathBuf,
    /// Report I / (H + H') instead of 2 I / (H + H')
    #[arg(long)]
    halved: bool,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<sbm_mcem::Error> for Failure {
    fn from(e: sbm_mcem::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn config_err<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Config(e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Fit(a) => fit(a),
        Command::Experiment(a) => experiment(a),
        Command::Bic(a) => bic(a),
        Command::Metrics(a) => metrics(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn generate(a: GenerateArgs) -> Outcome {
    let design = SimDesign {
        n: a.n,
        pi: a.pi,
        oir: a.oir,
        avg_degree: a.degree,
        beta: a.beta,
        covariate_q: a.q,
        seed: a.seed,
        orientation: if a.mu_on_diagonal {
            Orientation::MuOnDiagonal
        } else {
            Orientation::Assortative
        },
        scale: if a.literal_theta {
            ThetaScale::Logit
        } else {
            ThetaScale::Probability
        },
    };
    design.check().map_err(config_err)?;
    let inst = simulate(&design)?;
    io::save_instance(&inst, &a.out)?;
    println!(
        "wrote {} nodes, {} edges (average degree {:.3}) to {}",
        inst.network.n(),
        inst.network.edge_count(),
        inst.realized_degree(),
        a.out.display()
    );
    Ok(())
}

struct Input {
    network: Network,
    covariates: DyadCovariates,
    k: Option<usize>,
    truth: Option<Labels>,
}

fn load_input(a: &InputArgs) -> Outcome<Input> {
    for path in [&a.instance, &a.edges, &a.attributes].into_iter().flatten() {
        if !path.exists() {
            return Err(config_err(format!("{} does not exist", path.display())));
        }
    }
    if let Some(dir) = &a.instance {
        let inst = io::load_instance(dir)?;
        return Ok(Input {
            k: Some(inst.design.k()),
            truth: Some(inst.labels),
            network: inst.network,
            covariates: inst.covariates,
        });
    }
    let edges = a
        .edges
        .as_ref()
        .ok_or_else(|| config_err("give either --instance or --edges"))?;
    let range_filter = a.range_filter.as_deref().map(parse_range).transpose()?;
    let cleaning = Cleaning {
        range_filter,
        min_degree: a.min_degree,
        ..Cleaning::default()
    };
    let d = io::load_dataset(edges, a.attributes.as_deref(), &cleaning)?;
    if d.network.n() == 0 {
        return Err(Failure::Runtime("no nodes left after cleaning".into()));
    }
    Ok(Input {
        network: d.network,
        covariates: d.covariates,
        k: None,
        truth: None,
    })
}

fn parse_range(s: &str) -> Outcome<RangeFilter> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || config_err(format!("range filter {s:?} is not ATTR:MIN:MAX"));
    if parts.len() != 3 {
        return Err(bad());
    }
    Ok(RangeFilter {
        attribute: parts[0].to_string(),
        min: parts[1].parse().map_err(|_| bad())?,
        max: parts[2].parse().map_err(|_| bad())?,
    })
}

fn fit_config(t: &Tuning, mode: EStepMode, seed: u64) -> FitConfig {
    ExperimentConfig {
        rate: t.rate,
        max_iter: t.max_iter,
        m: t.m,
        burnin: t.burnin,
        tol: t.tol,
        ..ExperimentConfig::default()
    }
    .fit_config(mode, seed)
}

fn workers(t: &Tuning) -> usize {
    t.workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn fit(a: FitArgs) -> Outcome {
    let method: Method = a.method.parse().map_err(config_err)?;
    let input = load_input(&a.input)?;
    let k = a
        .k
        .or(input.k)
        .ok_or_else(|| config_err("--k is required for edge-list input"))?;
    let mode = if method == Method::Full {
        EStepMode::Full
    } else {
        EStepMode::CaseControl
    };
    let config = fit_config(&a.tuning, mode, a.seed);
    config.check().map_err(config_err)?;
    let (net, cov) = (&input.network, &input.covariates);
    let clusters = spectral_init(net, k, DEFAULT_TAU, a.seed)?;
    let init = init_params(net, cov, &clusters)?;
    fs::create_dir_all(&a.out)?;
    let (params, labels) = match method {
        Method::Full | Method::CaseControl => {
            let fit = mcem_fit(net, cov, &config, &init, &clusters)?;
            io::write_trajectory_csv(&fit.trajectory, &a.out.join("trajectory.csv"))?;
            (fit.params, fit.labels)
        }
        Method::ParallelComm | Method::ParallelNocomm => {
            let n0 = (a.tuning.per_group * k).min(net.n());
            let subs = draw_subsamples(net, cov, &clusters, workers(&a.tuning), n0, a.seed)?;
            let align = if a.tuning.no_align {
                Alignment::None
            } else {
                Alignment::MatchToFirst
            };
            let fit = if method == Method::ParallelComm {
                fit_comm(&subs, &config, &init, align)?
            } else {
                fit_nocomm(&subs, &config, &init, align)?
            };
            io::write_ledger_csv(&fit.ledger, &a.out.join("ledger.csv"))?;
            let labels = label_readout(net, cov, &fit.params, &clusters, &config)?;
            (fit.params, labels)
        }
    };
    fs::write(
        a.out.join("params.json"),
        serde_json::to_string_pretty(&params).map_err(|e| Failure::Runtime(e.to_string()))?,
    )?;
    io::write_labels(&labels, &a.out.join("labels.txt"))?;
    if let Some(truth) = &input.truth {
        println!("nmi {:.6}", sbm_mcem::metrics::nmi(&labels, truth)?);
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn experiment(a: ExperimentArgs) -> Outcome {
    let text = fs::read_to_string(&a.config).map_err(|e| config_err(format!("{}: {e}", a.config.display())))?;
    let mut config: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", a.config.display())))?;
    config.seed = a.seed;
    if let Some(r) = a.replicates {
        config.replicates = r;
    }
    config.check().map_err(config_err)?;
    let report = run_experiment(&config, &a.out)?;
    let failures = report.outcomes.iter().filter(|o| o.error.is_some()).count();
    println!(
        "{} method runs, {failures} failed; results in {}",
        report.outcomes.len(),
        a.out.display()
    );
    print!("{}", fs::read_to_string(a.out.join(sbm_mcem::experiment::SUMMARY_CSV))?);
    Ok(())
}

fn bic(a: BicArgs) -> Outcome {
    if a.k_min == 0 || a.k_min > a.k_max {
        return Err(config_err("need 1 <= k-min <= k-max"));
    }
    let input = load_input(&a.input)?;
    let config = BicConfig {
        fit: fit_config(&a.tuning, EStepMode::CaseControl, a.seed),
        workers: workers(&a.tuning),
        per_group: a.tuning.per_group,
        ..BicConfig::default()
    };
    config.fit.check().map_err(config_err)?;
    let ks: Vec<usize> = (a.k_min..=a.k_max).collect();
    let scan = bic_scan(&input.network, &input.covariates, &ks, &config)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    io::write_bic_csv(&scan, &a.out)?;
    for r in &scan.rows {
        println!("K={} bic={:.3}", r.k, r.bic);
    }
    match scan.best {
        Some(k) => {
            println!("best K = {k}");
            Ok(())
        }
        None => Err(Failure::Runtime("every K failed".into())),
    }
}

fn metrics(a: MetricsArgs) -> Outcome {
    let x = io::read_labels(&a.a, None)?;
    let y = io::read_labels(&a.b, None)?;
    let norm = if a.halved {
        NmiNormalization::Halved
    } else {
        NmiNormalization::Symmetric
    };
    println!("nmi {:.6}", nmi_with(&x, &y, norm)?);
    println!("mmd {:.6}", mmd(&x, &y)?);
    Ok(())
}
