//! Synthetic blockmodel networks parameterized by out-in-ratio and average
//! degree.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::covariates::DyadCovariates;
use crate::error::{Error, Result};
use crate::likelihood::{logistic, logit};
use crate::network::Network;
use crate::params::{Labels, Params};
use crate::rng::RngSpec;

/// Where the out-in-ratio sits in the base matrix `theta0`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Orientation {
    /// 1 on the diagonal, `mu` off it: between-group links are `mu` times
    /// as likely as within-group links.
    #[default]
    Assortative,
    /// `mu` on the diagonal, 1 off it.
    MuOnDiagonal,
}

/// How the scaled matrix enters the edge logit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThetaScale {
    /// The scaled matrix holds edge probabilities; the model's `theta` is
    /// their logit.
    #[default]
    Probability,
    /// The scaled matrix is used as `theta` unchanged.
    Logit,
}

/// A synthetic design.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimDesign {
    pub n: usize,
    pub pi: Vec<f64>,
    /// Out-in-ratio `mu`.
    pub oir: f64,
    /// Target average degree `lambda`.
    pub avg_degree: f64,
    pub beta: Vec<f64>,
    /// Success probability of each Bernoulli covariate component.
    pub covariate_q: f64,
    pub seed: u64,
    #[serde(default)]
    pub orientation: Orientation,
    #[serde(default)]
    pub scale: ThetaScale,
}

impl SimDesign {
    /// `K = 3`, `beta = (1, -2, 1)`, `q = 0.5`.
    pub fn standard(n: usize, pi: Vec<f64>, oir: f64, avg_degree: f64, seed: u64) -> Self {
        Self {
            n,
            pi,
            oir,
            avg_degree,
            beta: vec![1.0, -2.0, 1.0],
            covariate_q: 0.5,
            seed,
            orientation: Orientation::default(),
            scale: ThetaScale::default(),
        }
    }

    pub fn k(&self) -> usize {
        self.pi.len()
    }

    pub fn p(&self) -> usize {
        self.beta.len()
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.n < 2 {
            return bad("design needs at least 2 nodes");
        }
        if self.pi.is_empty() {
            return bad("design needs at least one group");
        }
        if !(self.oir > 0.0) || !self.oir.is_finite() {
            return bad("out-in-ratio must be positive");
        }
        if !(self.avg_degree > 0.0) || !self.avg_degree.is_finite() {
            return bad("average degree must be positive");
        }
        if self.pi.iter().any(|&p| !(p >= 0.0)) || (self.pi.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("class probabilities must lie on the simplex");
        }
        if !(0.0..=1.0).contains(&self.covariate_q) {
            return bad("covariate probability must lie in [0, 1]");
        }
        Ok(())
    }

    /// The covariate provider for this design.
    pub fn covariates(&self) -> Result<DyadCovariates> {
        let seed = RngSpec::new(self.seed).child_seed("covariates", 0, 0, 0);
        DyadCovariates::seeded_bernoulli(self.n, self.p(), self.covariate_q, seed)
    }
}

/// `lambda / ((n - 1) pi' theta0 pi) * theta0`, row-major `K x K`.
pub fn build_theta(design: &SimDesign) -> Result<Vec<f64>> {
    design.check()?;
    let k = design.k();
    let (diag, off) = match design.orientation {
        Orientation::Assortative => (1.0, design.oir),
        Orientation::MuOnDiagonal => (design.oir, 1.0),
    };
    let base = |a: usize, b: usize| if a == b { diag } else { off };
    let mut quad = 0.0;
    for a in 0..k {
        for b in 0..k {
            quad += design.pi[a] * base(a, b) * design.pi[b];
        }
    }
    if !(quad > 0.0) {
        return Err(Error::InvalidArgument("degenerate class probabilities".into()));
    }
    let scale = design.avg_degree / ((design.n - 1) as f64 * quad);
    Ok((0..k * k).map(|t| scale * base(t / k, t % k)).collect())
}

/// The generating parameters: `theta` per the design's scale, its `beta`
/// and `pi`.
pub fn true_params(design: &SimDesign) -> Result<Params> {
    let scaled = build_theta(design)?;
    let theta = match design.scale {
        ThetaScale::Logit => scaled,
        ThetaScale::Probability => {
            if let Some(&bad) = scaled.iter().find(|&&v| v >= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "scaled block probability {bad} is not below 1"
                )));
            }
            scaled.into_iter().map(logit).collect()
        }
    };
    Params::new(design.k(), theta, design.beta.clone(), design.pi.clone())
}

/// Independent multinomial labels.
pub fn sample_labels(design: &SimDesign) -> Result<Labels> {
    design.check()?;
    let mut rng = RngSpec::new(design.seed).stream("labels", 0, 0, 0);
    let cumulative: Vec<f64> = design
        .pi
        .iter()
        .scan(0.0, |acc, &p| {
            *acc += p;
            Some(*acc)
        })
        .collect();
    let total = *cumulative.last().unwrap();
    let last_positive = design.pi.iter().rposition(|&p| p > 0.0).unwrap_or(0);
    let z = (0..design.n)
        .map(|_| {
            let u = rng.random::<f64>() * total;
            cumulative
                .iter()
                .position(|&c| u < c)
                .unwrap_or(last_positive)
        })
        .collect();
    Labels::new(design.k(), z)
}

/// Draws `a_ij ~ Bernoulli(logistic(theta[z_i][z_j] + beta . X(i, j)))`
/// independently for `i < j`.
pub fn generate_network(
    labels: &Labels,
    params: &Params,
    covariates: &DyadCovariates,
    seed: u64,
) -> Result<Network> {
    let n = labels.len();
    if covariates.n() != n {
        return Err(Error::DimensionMismatch {
            what: "covariate provider node count",
            expected: n,
            found: covariates.n(),
        });
    }
    if covariates.p() != params.p() || labels.k() != params.k() {
        return Err(Error::DimensionMismatch {
            what: "design dimensions",
            expected: params.p(),
            found: covariates.p(),
        });
    }
    let k = params.k();
    let offsets = covariates.offsets(params.beta());
    let prob: Vec<f64> = (0..k * k)
        .flat_map(|t| {
            let th = params.theta(t / k, t % k);
            offsets.iter().map(move |o| logistic(th + o))
        })
        .collect();
    let codes = offsets.len();
    let mut rng = RngSpec::new(seed).stream("network", 0, 0, 0);
    let mut edges = Vec::new();
    for i in 0..n {
        let zi = labels.get(i);
        for j in (i + 1)..n {
            let p = prob[(zi * k + labels.get(j)) * codes + covariates.code(i, j) as usize];
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    Network::from_edges(n, edges)
}

/// A generated instance with its ground truth.
#[derive(Clone, Debug)]
pub struct SimInstance {
    pub design: SimDesign,
    pub truth: Params,
    pub labels: Labels,
    pub network: Network,
    pub covariates: DyadCovariates,
}

impl SimInstance {
    /// Realized average degree.
    pub fn realized_degree(&self) -> f64 {
        self.network.average_degree()
    }
}

/// Samples labels, covariates and a network for `design`.
pub fn simulate(design: &SimDesign) -> Result<SimInstance> {
    let truth = true_params(design)?;
    let labels = sample_labels(design)?;
    let covariates = design.covariates()?;
    let seed = RngSpec::new(design.seed).child_seed("edges", 0, 0, 0);
    let network = generate_network(&labels, &truth, &covariates, seed)?;
    Ok(SimInstance {
        design: design.clone(),
        truth,
        labels,
        network,
        covariates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_group() {
        let d = SimDesign {
            beta: vec![],
            ..SimDesign::standard(11, vec![1.0], 0.5, 4.0, 1)
        };
        assert_eq!(build_theta(&d).unwrap(), vec![0.4]);
    }

    #[test]
    fn unit_oir_is_flat() {
        let d = SimDesign::standard(101, vec![0.5, 0.3, 0.2], 1.0, 8.0, 1);
        let theta = build_theta(&d).unwrap();
        assert!(theta.iter().all(|&t| (t - 0.08).abs() < 1e-15));
    }

    #[test]
    fn three_group_closed_form() {
        let (mu, lambda, n) = (0.04, 8.0, 1000usize);
        let d = SimDesign::standard(n, vec![1.0 / 3.0; 3], mu, lambda, 1);
        let theta = build_theta(&d).unwrap();
        let diag = lambda * 3.0 / ((n - 1) as f64 * (1.0 + 2.0 * mu));
        assert!((theta[0] - diag).abs() < 1e-15);
        assert!((theta[1] - mu * diag).abs() < 1e-15);
        assert!((theta[4] - theta[8]).abs() < 1e-18);
    }

    #[test]
    fn rejects_bad_design() {
        let mut d = SimDesign::standard(10, vec![0.5, 0.5], 0.0, 8.0, 1);
        assert!(build_theta(&d).is_err());
        d.oir = 0.1;
        d.pi = vec![0.5, 0.6];
        assert!(build_theta(&d).is_err());
    }

    #[test]
    fn degenerate_pi_gives_one_label() {
        let d = SimDesign::standard(200, vec![1.0, 0.0, 0.0], 0.1, 4.0, 9);
        assert!(sample_labels(&d).unwrap().as_slice().iter().all(|&g| g == 0));
    }

    #[test]
    fn labels_are_deterministic() {
        let d = SimDesign::standard(500, vec![0.5, 0.3, 0.2], 0.1, 4.0, 3);
        assert_eq!(sample_labels(&d).unwrap(), sample_labels(&d).unwrap());
    }

    #[test]
    fn hopeless_logits_give_empty_network() {
        let labels = Labels::constant(2, 50);
        let params = Params::new(2, vec![-40.0; 4], vec![], vec![0.5, 0.5]).unwrap();
        let net = generate_network(&labels, &params, &DyadCovariates::none(50), 1).unwrap();
        assert_eq!(net.edge_count(), 0);
    }
}
