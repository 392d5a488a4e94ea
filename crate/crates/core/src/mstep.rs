//! Maximization of the Monte Carlo Q-function.
//!
//! Given retained samples `z^(1..M)`, the `(theta, beta)` part of the
//! Q-function is
//!
//! ```text
//! f(theta, beta) = (1/M) sum_c [ e_c * eta_c - w_c * log(1 + exp(eta_c)) ]
//! ```
//!
//! where a cell `c` is a block pair `(a, b)` with `a <= b` together with a
//! covariate code, `eta_c = theta[a][b] + beta . x_c`, `e_c` counts edges
//! falling in the cell over all samples and `w_c` counts (or, with
//! case-control weights, estimates) the pairs. `f` is concave.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gibbs::{EStepMode, EStepSample};
use crate::likelihood::{draw_plan_with, logistic, softplus, CaseControlPlan, PlanMode, Problem};
use crate::params::{Labels, Params};
use crate::rng::StreamRng;

/// Gradient tolerance (sup norm) for the inner maximization.
pub const GRAD_TOL: f64 = 1e-6;
/// Newton iteration cap.
pub const MAX_NEWTON: usize = 50;
/// Step halvings before a line search gives up.
pub const MAX_HALVINGS: usize = 30;

/// Pair and edge tallies over all retained samples.
#[derive(Clone, Debug, PartialEq)]
pub struct QFunction {
    k: usize,
    codes: usize,
    /// Covariate pattern per code, flattened.
    patterns: Vec<f64>,
    p: usize,
    edges: Vec<f64>,
    weights: Vec<f64>,
    class_counts: Vec<f64>,
    samples: usize,
    n: usize,
}

impl QFunction {
    /// Tallies every pair of every sample.
    pub fn full(problem: &Problem<'_>, samples: &[Labels]) -> Result<Self> {
        let mut q = Self::empty(problem, samples)?;
        let k = q.k;
        let codes = q.codes;
        let parts: Vec<(Vec<f64>, Vec<f64>)> = samples
            .par_iter()
            .map(|z| {
                let z = z.as_slice();
                let mut edges = vec![0.0; k * k * codes];
                let mut weights = vec![0.0; k * k * codes];
                let mut counts = vec![0u32; k * k * codes];
                for i in 0..z.len() {
                    let row = problem.pair_code_row(i);
                    let base = z[i] as usize * k;
                    for j in (i + 1)..z.len() {
                        counts[(base + z[j] as usize) * codes + row[j] as usize] += 1;
                    }
                    for (&j, &c) in problem
                        .network()
                        .neighbors(i)
                        .iter()
                        .zip(problem.neighbor_codes(i))
                    {
                        if j as usize > i {
                            edges[(base + z[j as usize] as usize) * codes + c as usize] += 1.0;
                        }
                    }
                }
                for (w, c) in weights.iter_mut().zip(&counts) {
                    *w = f64::from(*c);
                }
                (edges, weights)
            })
            .collect();
        for (e, w) in parts {
            q.add_folded(&e, &w);
        }
        Ok(q)
    }

    /// Tallies edges exactly and non-edges through case-control plans. With
    /// [`PlanMode::Stale`] every sample uses `plan`, each control counted in
    /// the group it was drawn from; with [`PlanMode::Strict`] a fresh plan is
    /// drawn against each sample.
    pub fn case_control(
        problem: &Problem<'_>,
        samples: &[Labels],
        plan: &CaseControlPlan,
        mode: PlanMode,
        rng: &mut StreamRng,
    ) -> Result<Self> {
        let mut q = Self::empty(problem, samples)?;
        let cov = problem.covariates();
        let plans: Vec<CaseControlPlan> = match mode {
            PlanMode::Stale => {
                let mut p = plan.clone();
                p.encode(cov);
                vec![p]
            }
            PlanMode::Strict => samples
                .iter()
                .map(|z| {
                    let seed = rng.random::<u64>();
                    let mut p = draw_plan_with(problem.network(), z, plan.m0(), seed, rng)?;
                    p.encode(cov);
                    Ok(p)
                })
                .collect::<Result<_>>()?,
        };
        if plans[0].k() != q.k || plans[0].snapshot().len() != problem.n() {
            return Err(Error::InvalidArgument(
                "plan dimensions do not match the problem".into(),
            ));
        }
        let k = q.k;
        let codes = q.codes;
        let parts: Vec<(Vec<f64>, Vec<f64>)> = samples
            .par_iter()
            .enumerate()
            .map(|(m, z)| {
                let plan = &plans[if plans.len() == 1 { 0 } else { m }];
                let z = z.as_slice();
                let mut edges = vec![0.0; k * k * codes];
                let mut weights = vec![0.0; k * k * codes];
                for i in 0..z.len() {
                    let base = z[i] as usize * k;
                    for (&j, &c) in problem
                        .network()
                        .neighbors(i)
                        .iter()
                        .zip(problem.neighbor_codes(i))
                    {
                        if j as usize > i {
                            let cell = (base + z[j as usize] as usize) * codes + c as usize;
                            edges[cell] += 1.0;
                            weights[cell] += 1.0;
                        }
                    }
                    for g in 0..k {
                        let w = 0.5 * plan.weight(i, g);
                        if w == 0.0 {
                            continue;
                        }
                        for &c in plan.control_codes(i, g) {
                            weights[(base + g) * codes + c as usize] += w;
                        }
                    }
                }
                (edges, weights)
            })
            .collect();
        for (e, w) in parts {
            q.add_folded(&e, &w);
        }
        Ok(q)
    }

    /// Tallies an E-step sample with the likelihood it was drawn under.
    pub fn from_sample(
        problem: &Problem<'_>,
        sample: &EStepSample,
        mode: EStepMode,
        plan_mode: PlanMode,
        rng: &mut StreamRng,
    ) -> Result<Self> {
        match (mode, &sample.plan) {
            (EStepMode::Full, _) => Self::full(problem, &sample.samples),
            (EStepMode::CaseControl, Some(plan)) => {
                Self::case_control(problem, &sample.samples, plan, plan_mode, rng)
            }
            (EStepMode::CaseControl, None) => Err(Error::InvalidArgument(
                "case-control tallies need the E-step plan".into(),
            )),
        }
    }

    /// Single-block objective from per-code edge and pair tallies.
    pub(crate) fn from_code_tallies(
        covariates: &crate::covariates::DyadCovariates,
        edges: Vec<f64>,
        weights: Vec<f64>,
    ) -> Self {
        let codes = covariates.alphabet_size();
        Self {
            k: 1,
            codes,
            patterns: (0..codes as u32).flat_map(|c| covariates.pattern(c).to_vec()).collect(),
            p: covariates.p(),
            edges,
            weights,
            class_counts: vec![1.0],
            samples: 1,
            n: covariates.n(),
        }
    }

    fn empty(problem: &Problem<'_>, samples: &[Labels]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::InvalidArgument("no samples to tally".into()))?;
        let k = first.k();
        let cov = problem.covariates();
        let codes = cov.alphabet_size();
        let p = cov.p();
        let patterns = (0..codes as u32).flat_map(|c| cov.pattern(c).to_vec()).collect();
        let mut class_counts = vec![0.0; k];
        for z in samples {
            if z.len() != problem.n() || z.k() != k {
                return Err(Error::DimensionMismatch {
                    what: "sample label vector",
                    expected: problem.n(),
                    found: z.len(),
                });
            }
            for (g, c) in z.counts().into_iter().enumerate() {
                class_counts[g] += c as f64;
            }
        }
        Ok(Self {
            k,
            codes,
            patterns,
            p,
            edges: vec![0.0; k * k * codes],
            weights: vec![0.0; k * k * codes],
            class_counts,
            samples: samples.len(),
            n: problem.n(),
        })
    }

    /// Adds full `K x K` tallies folded onto `a <= b`.
    fn add_folded(&mut self, edges: &[f64], weights: &[f64]) {
        let (k, codes) = (self.k, self.codes);
        for a in 0..k {
            for b in 0..k {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                for c in 0..codes {
                    let from = (a * k + b) * codes + c;
                    let to = (lo * k + hi) * codes + c;
                    self.edges[to] += edges[from];
                    self.weights[to] += weights[from];
                }
            }
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    /// Label counts summed over samples.
    pub fn class_counts(&self) -> &[f64] {
        &self.class_counts
    }

    /// Number of free coordinates: `K(K+1)/2 + p`.
    pub fn dim(&self) -> usize {
        self.k * (self.k + 1) / 2 + self.p
    }

    /// `(theta upper triangle row by row, beta)`.
    pub fn coords(&self, params: &Params) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.dim());
        for a in 0..self.k {
            for b in a..self.k {
                x.push(params.theta(a, b));
            }
        }
        x.extend_from_slice(params.beta());
        x
    }

    /// Writes coordinates back into `params`.
    pub fn set_coords(&self, params: &mut Params, x: &[f64]) {
        let mut t = 0;
        for a in 0..self.k {
            for b in a..self.k {
                params.set_theta(a, b, x[t]);
                t += 1;
            }
        }
        params
            .set_beta(x[t..].to_vec())
            .expect("coordinate vector matches beta length");
    }

    fn pair_slot(&self, a: usize, b: usize) -> usize {
        // Position of (a, b), a <= b, in the upper-triangle ordering.
        a * self.k + b - a - a * a.saturating_sub(1) / 2
    }

    /// Visits each nonempty cell as `(slot, pattern, edges, weight)`.
    fn cells(&self) -> impl Iterator<Item = (usize, &[f64], f64, f64)> + '_ {
        (0..self.k).flat_map(move |a| {
            (a..self.k).flat_map(move |b| {
                let slot = self.pair_slot(a, b);
                (0..self.codes).filter_map(move |c| {
                    let idx = (a * self.k + b) * self.codes + c;
                    let w = self.weights[idx];
                    (w > 0.0).then(|| {
                        (
                            slot,
                            &self.patterns[c * self.p..(c + 1) * self.p],
                            self.edges[idx],
                            w,
                        )
                    })
                })
            })
        })
    }

    fn eta(&self, x: &[f64], slot: usize, pattern: &[f64]) -> f64 {
        let off = self.k * (self.k + 1) / 2;
        x[slot] + pattern.iter().zip(&x[off..]).map(|(a, b)| a * b).sum::<f64>()
    }

    /// `f` at coordinates `x`.
    pub fn value_at(&self, x: &[f64]) -> f64 {
        let total: f64 = self
            .cells()
            .map(|(slot, pat, e, w)| {
                let eta = self.eta(x, slot, pat);
                e * eta - w * softplus(eta)
            })
            .sum();
        total / self.samples as f64
    }

    /// Gradient of `f` at `x`.
    pub fn gradient_at(&self, x: &[f64]) -> Vec<f64> {
        let off = self.k * (self.k + 1) / 2;
        let mut g = vec![0.0; self.dim()];
        for (slot, pat, e, w) in self.cells() {
            let r = e - w * logistic(self.eta(x, slot, pat));
            g[slot] += r;
            for (gl, xl) in g[off..].iter_mut().zip(pat) {
                *gl += r * xl;
            }
        }
        let m = self.samples as f64;
        g.iter_mut().for_each(|v| *v /= m);
        g
    }

    /// Negative Hessian of `f` at `x`.
    fn neg_hessian_at(&self, x: &[f64]) -> DMatrix<f64> {
        let off = self.k * (self.k + 1) / 2;
        let d = self.dim();
        let mut h = DMatrix::zeros(d, d);
        let mut v = vec![0.0; d];
        for (slot, pat, _, w) in self.cells() {
            let s = logistic(self.eta(x, slot, pat));
            let c = w * s * (1.0 - s);
            v.iter_mut().for_each(|t| *t = 0.0);
            v[slot] = 1.0;
            v[off..].copy_from_slice(pat);
            for r in 0..d {
                if v[r] == 0.0 {
                    continue;
                }
                for q in 0..d {
                    h[(r, q)] += c * v[r] * v[q];
                }
            }
        }
        h / self.samples as f64
    }

    /// `f` at `params`.
    pub fn value(&self, params: &Params) -> f64 {
        self.value_at(&self.coords(params))
    }

    /// Full Q-function value: `f + (1/M) sum_k count_k log pi_k`.
    pub fn total(&self, params: &Params) -> f64 {
        let prior: f64 = self
            .class_counts
            .iter()
            .zip(params.pi())
            .filter(|(&c, _)| c > 0.0)
            .map(|(&c, &p)| c * p.ln())
            .sum();
        self.value(params) + prior / self.samples as f64
    }

    /// Which coordinates move: theta pairs whose classes both occur in the
    /// samples and carry weight, and every beta.
    fn free_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.dim()];
        let off = self.k * (self.k + 1) / 2;
        for (slot, _, _, _) in self.cells() {
            mask[slot] = true;
        }
        for a in 0..self.k {
            for b in a..self.k {
                if self.class_counts[a] == 0.0 || self.class_counts[b] == 0.0 {
                    mask[self.pair_slot(a, b)] = false;
                }
            }
        }
        mask[off..].iter_mut().for_each(|m| *m = true);
        mask
    }
}

/// Closed-form maximizer of the `pi` part: class frequencies over all
/// samples.
pub fn update_pi(samples: &[Labels]) -> Result<Vec<f64>> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidArgument("no samples".into()))?;
    let mut counts = vec![0.0; first.k()];
    for z in samples {
        for (g, c) in z.counts().into_iter().enumerate() {
            counts[g] += c as f64;
        }
    }
    let total = (first.len() * samples.len()) as f64;
    Ok(counts.into_iter().map(|c| c / total).collect())
}

/// Outcome of the Newton ascent.
#[derive(Clone, Debug)]
pub struct NewtonReport {
    pub params: Params,
    pub iterations: usize,
    /// Sup norm of the gradient over the free coordinates at exit.
    pub grad_norm: f64,
    /// False when the iteration cap stopped the ascent.
    pub converged: bool,
    pub start_value: f64,
    pub value: f64,
}

/// Damped Newton ascent of `f` from `start`. `pi` is carried over
/// unchanged.
pub fn update_theta_beta(q: &QFunction, start: &Params) -> Result<NewtonReport> {
    if start.k() != q.k() || start.p() != q.p() {
        return Err(Error::DimensionMismatch {
            what: "start parameters",
            expected: q.dim(),
            found: start.k() * (start.k() + 1) / 2 + start.p(),
        });
    }
    let mask = q.free_mask();
    let free: Vec<usize> = (0..q.dim()).filter(|&t| mask[t]).collect();
    let mut x = q.coords(start);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("start parameters are not finite".into()));
    }
    let start_value = q.value_at(&x);
    let mut value = start_value;
    let sup = |g: &[f64]| free.iter().map(|&t| g[t].abs()).fold(0.0, f64::max);
    let mut grad = q.gradient_at(&x);
    let mut iterations = 0;
    let mut converged = sup(&grad) <= GRAD_TOL;
    while !converged && iterations < MAX_NEWTON {
        iterations += 1;
        let full_h = q.neg_hessian_at(&x);
        let d = free.len();
        let h = DMatrix::from_fn(d, d, |r, c| full_h[(free[r], free[c])]);
        let g = DVector::from_iterator(d, free.iter().map(|&t| grad[t]));
        let step = solve_spd(h, &g);

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let mut trial = x.clone();
            for (s, &idx) in step.iter().zip(&free) {
                trial[idx] += t * s;
            }
            let v = q.value_at(&trial);
            if v.is_finite() && v >= value {
                accepted = Some((trial, v));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((trial, v)) => {
                let gain = v - value;
                x = trial;
                value = v;
                grad = q.gradient_at(&x);
                converged = sup(&grad) <= GRAD_TOL;
                if !converged && gain == 0.0 && t < 1.0 {
                    // No representable ascent left along the Newton path.
                    converged = true;
                }
            }
            None => {
                if !value.is_finite() {
                    return Err(Error::NonFiniteObjective {
                        iteration: iterations,
                        halvings: MAX_HALVINGS,
                    });
                }
                log::debug!(
                    "line search found no ascent after {MAX_HALVINGS} halvings; gradient {}",
                    sup(&grad)
                );
                break;
            }
        }
    }
    if !converged {
        log::debug!("Newton stopped at the {MAX_NEWTON}-iteration cap");
    }
    let mut params = start.clone();
    q.set_coords(&mut params, &x);
    Ok(NewtonReport {
        params,
        iterations,
        grad_norm: sup(&grad),
        converged,
        start_value,
        value,
    })
}

/// Solves `h d = g` for symmetric positive semi-definite `h`, adding a ridge
/// when the Cholesky factorization fails.
fn solve_spd(h: DMatrix<f64>, g: &DVector<f64>) -> DVector<f64> {
    if let Some(ch) = h.clone().cholesky() {
        return ch.solve(g);
    }
    let scale = 1.0 + h.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut ridge = 1e-10 * scale;
    loop {
        let mut hr = h.clone();
        for i in 0..hr.nrows() {
            hr[(i, i)] += ridge;
        }
        if let Some(ch) = hr.cholesky() {
            return ch.solve(g);
        }
        ridge *= 10.0;
    }
}
