//! Maximum-likelihood estimation for both models, standard errors and
//! synthetic observations.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::network::{AugmentedNetwork, Network, NodeId};
use crate::path_logit::{pl_probabilities, ChoiceSet, PlLikelihood};
use crate::rl_model::{choice_matrix, sample_observation, Observation, RlLikelihood, SampleOptions};
use crate::value_function::{UtilitySpec, ValueSystem};

/// A log-likelihood in `beta` with analytic gradient.
pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn evaluate(&self, beta: &[f64]) -> Result<(f64, Vec<f64>)>;
    /// Per-observation gradients.
    fn scores(&self, beta: &[f64]) -> Result<Vec<Vec<f64>>>;
    /// The likelihood is constant in `beta`.
    fn is_flat(&self) -> bool;
}

pub struct RlObjective<'a, 'n> {
    pub likelihood: &'a RlLikelihood<'n>,
    pub mu: f64,
}

impl Objective for RlObjective<'_, '_> {
    fn dim(&self) -> usize {
        self.likelihood.network().attribute_count()
    }

    fn evaluate(&self, beta: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.likelihood
            .evaluate(&UtilitySpec::new(beta.to_vec(), self.mu)?, true)
    }

    fn scores(&self, beta: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.likelihood.scores(&UtilitySpec::new(beta.to_vec(), self.mu)?)
    }

    fn is_flat(&self) -> bool {
        self.likelihood.informative_choices() == 0
    }
}

pub struct PlObjective<'a> {
    pub likelihood: &'a PlLikelihood,
    pub mu: f64,
    pub dim: usize,
}

impl Objective for PlObjective<'_> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, beta: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.likelihood
            .evaluate(&UtilitySpec::new(beta.to_vec(), self.mu)?, true)
    }

    fn scores(&self, beta: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.likelihood.scores(&UtilitySpec::new(beta.to_vec(), self.mu)?)
    }

    fn is_flat(&self) -> bool {
        self.likelihood.is_flat()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StdErrorMethod {
    None,
    /// Inverse of the negative numerical Hessian.
    Hessian,
    /// `H^-1 (sum s s') H^-1`.
    Sandwich,
}

#[derive(Clone, Debug)]
pub struct EstimationOptions {
    /// Stop when the gradient sup-norm falls below this.
    pub gradient_tol: f64,
    pub max_iterations: usize,
    pub std_errors: StdErrorMethod,
}

impl Default for EstimationOptions {
    fn default() -> Self {
        Self {
            gradient_tol: 1e-6,
            max_iterations: 200,
            std_errors: StdErrorMethod::Hessian,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceEntry {
    pub beta: Vec<f64>,
    pub ll: f64,
    pub gradient_norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimationResult {
    pub beta_hat: Vec<f64>,
    pub std_errors: Option<Vec<f64>>,
    /// Why `std_errors` is missing, when it is.
    pub std_error_failure: Option<String>,
    pub final_ll: f64,
    pub gradient: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub trace: Vec<TraceEntry>,
    pub flat_likelihood: bool,
}

impl EstimationResult {
    pub fn gradient_norm(&self) -> f64 {
        sup_norm(&self.gradient)
    }

    /// `|beta_hat - truth| / se` per coordinate.
    pub fn z_scores(&self, truth: &[f64]) -> Option<Vec<f64>> {
        let se = self.std_errors.as_ref()?;
        Some(
            self.beta_hat
                .iter()
                .zip(truth)
                .zip(se)
                .map(|((b, t), s)| (b - t).abs() / s)
                .collect(),
        )
    }
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(beta: &[f64], alpha: f64, d: &[f64]) -> Vec<f64> {
    beta.iter().zip(d).map(|(b, x)| b + alpha * x).collect()
}

/// `Ok(None)` when `beta` lies outside the feasible region.
fn try_evaluate(obj: &dyn Objective, beta: &[f64]) -> Result<Option<(f64, Vec<f64>)>> {
    match obj.evaluate(beta) {
        Ok((f, g)) if f.is_finite() && g.iter().all(|x| x.is_finite()) => Ok(Some((f, g))),
        Ok(_) | Err(Error::InfeasibleValueFunction { .. }) | Err(Error::SingularSystem { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

struct Step {
    alpha: f64,
    f: f64,
    g: Vec<f64>,
}

enum LineSearch {
    Found(Step),
    Failed,
    AllInfeasible,
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;
const DELTA: f64 = 0.1;
const MAX_BRACKET: usize = 40;
const MAX_ZOOM: usize = 60;

/// Strong Wolfe line search for ascent along `d`. Infeasible trial points
/// count as `-inf` and shrink the bracket.
fn line_search(obj: &dyn Objective, beta: &[f64], f0: f64, g0: &[f64], d: &[f64]) -> Result<LineSearch> {
    let slope0 = dot(g0, d);
    debug_assert!(slope0 > 0.0);
    // Close to the optimum the increase drops below the resolution of the
    // log-likelihood; accept on the directional derivative alone there.
    let noise = 1e-12 * f0.abs().max(1.0);
    let approximate_wolfe =
        |f: f64, slope: f64| f >= f0 - noise && slope <= C2 * slope0 && slope >= -(1.0 - 2.0 * DELTA) * slope0;
    let mut any_feasible = false;
    let mut prev = (0.0, f0, slope0);
    let mut alpha = 1.0;
    let mut bracket = None;
    for i in 0..MAX_BRACKET {
        match try_evaluate(obj, &axpy(beta, alpha, d))? {
            None => {
                bracket = Some((prev, (alpha, f64::NEG_INFINITY, 0.0)));
                break;
            }
            Some((f, g)) => {
                any_feasible = true;
                let slope = dot(&g, d);
                if f < f0 + C1 * alpha * slope0 && approximate_wolfe(f, slope) {
                    return Ok(LineSearch::Found(Step { alpha, f, g }));
                }
                if f < f0 + C1 * alpha * slope0 || (i > 0 && f <= prev.1) {
                    bracket = Some((prev, (alpha, f, slope)));
                    break;
                }
                if slope.abs() <= C2 * slope0 {
                    return Ok(LineSearch::Found(Step { alpha, f, g }));
                }
                if slope <= 0.0 {
                    bracket = Some(((alpha, f, slope), prev));
                    break;
                }
                prev = (alpha, f, slope);
                alpha *= 2.0;
            }
        }
    }
    let Some((mut lo, mut hi)) = bracket else {
        return Ok(LineSearch::Failed);
    };
    let mut best: Option<Step> = None;
    for _ in 0..MAX_ZOOM {
        let trial = if hi.1.is_finite() {
            // safeguarded quadratic interpolation on (lo, hi)
            let (a0, f0_, s0) = lo;
            let (a1, f1, _) = hi;
            let h = a1 - a0;
            let denom = 2.0 * (f1 - f0_ - s0 * h);
            let t = if denom != 0.0 { a0 - s0 * h * h / denom } else { f64::NAN };
            let (left, right) = if a0 < a1 { (a0, a1) } else { (a1, a0) };
            let margin = 0.1 * (right - left);
            if t.is_finite() && t > left + margin && t < right - margin {
                t
            } else {
                0.5 * (a0 + a1)
            }
        } else {
            0.5 * (lo.0 + hi.0)
        };
        if (hi.0 - lo.0).abs() < 1e-16 * lo.0.abs().max(1e-30) {
            break;
        }
        match try_evaluate(obj, &axpy(beta, trial, d))? {
            None => hi = (trial, f64::NEG_INFINITY, 0.0),
            Some((f, g)) => {
                any_feasible = true;
                let slope = dot(&g, d);
                if f < f0 + C1 * trial * slope0 && approximate_wolfe(f, slope) {
                    return Ok(LineSearch::Found(Step { alpha: trial, f, g }));
                }
                if f < f0 + C1 * trial * slope0 || f <= lo.1 {
                    hi = (trial, f, slope);
                } else {
                    if slope.abs() <= C2 * slope0 {
                        return Ok(LineSearch::Found(Step { alpha: trial, f, g }));
                    }
                    if slope * (hi.0 - lo.0) <= 0.0 {
                        hi = lo;
                    }
                    lo = (trial, f, slope);
                    best = Some(Step { alpha: trial, f, g });
                }
            }
        }
    }
    // Sufficient increase without the curvature condition.
    if let Some(step) = best {
        if step.f > f0 {
            return Ok(LineSearch::Found(step));
        }
    }
    Ok(if any_feasible {
        LineSearch::Failed
    } else {
        LineSearch::AllInfeasible
    })
}

/// BFGS ascent from `init`.
pub fn maximize(obj: &dyn Objective, init: &[f64], options: &EstimationOptions) -> Result<EstimationResult> {
    let p = obj.dim();
    if init.len() != p {
        return Err(Error::Validation(format!(
            "{} starting values for {} coefficients",
            init.len(),
            p
        )));
    }
    if init.iter().any(|b| !b.is_finite()) {
        return Err(Error::Validation("starting values must be finite".into()));
    }
    let (mut f, mut g) = obj.evaluate(init)?;
    if !f.is_finite() {
        return Err(Error::infeasible(init, "log-likelihood is not finite at the starting point"));
    }
    let mut beta = init.to_vec();
    let mut trace = vec![TraceEntry {
        beta: beta.clone(),
        ll: f,
        gradient_norm: sup_norm(&g),
    }];
    let flat = obj.is_flat();
    let mut h = DMatrix::<f64>::identity(p, p);
    let mut fresh = true;
    let mut converged = sup_norm(&g) < options.gradient_tol;
    let mut iterations = 0;
    while !converged && iterations < options.max_iterations {
        let gv = DVector::from_column_slice(&g);
        let mut d: Vec<f64> = (&h * &gv).iter().copied().collect();
        if !(dot(&d, &g) > 0.0) {
            h = DMatrix::identity(p, p);
            fresh = true;
            d = g.clone();
        }
        let step = match line_search(obj, &beta, f, &g, &d)? {
            LineSearch::Found(step) => step,
            LineSearch::AllInfeasible if iterations == 0 || fresh => return Err(Error::AllStepsInfeasible),
            LineSearch::Failed | LineSearch::AllInfeasible => {
                if fresh {
                    break;
                }
                h = DMatrix::identity(p, p);
                fresh = true;
                continue;
            }
        };
        iterations += 1;
        let new_beta = axpy(&beta, step.alpha, &d);
        let s = DVector::from_iterator(p, new_beta.iter().zip(&beta).map(|(a, b)| a - b));
        // gradient of the minimised objective -f
        let y = DVector::from_iterator(p, g.iter().zip(&step.g).map(|(a, b)| a - b));
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if fresh {
                h *= sy / y.dot(&y);
            }
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(p, p);
            let left = &eye - rho * &s * y.transpose();
            let right = &eye - rho * &y * s.transpose();
            h = left * &h * right + rho * &s * s.transpose();
            fresh = false;
        }
        beta = new_beta;
        f = step.f;
        g = step.g;
        trace.push(TraceEntry {
            beta: beta.clone(),
            ll: f,
            gradient_norm: sup_norm(&g),
        });
        converged = sup_norm(&g) < options.gradient_tol;
    }
    let (std_errors, std_error_failure) = if !converged || flat || options.std_errors == StdErrorMethod::None {
        (None, None)
    } else {
        match standard_errors(obj, &beta, options.std_errors) {
            Ok(se) => (Some(se), None),
            Err(e @ (Error::NonInvertibleHessian | Error::InfeasibleValueFunction { .. })) => {
                (None, Some(e.to_string()))
            }
            Err(e) => return Err(e),
        }
    };
    Ok(EstimationResult {
        beta_hat: beta,
        std_errors,
        std_error_failure,
        final_ll: f,
        gradient: g,
        converged,
        iterations,
        trace,
        flat_likelihood: flat,
    })
}

/// Hessian of the log-likelihood by central differences of the gradient.
pub fn numerical_hessian(obj: &dyn Objective, beta: &[f64]) -> Result<DMatrix<f64>> {
    let p = beta.len();
    let mut hess = DMatrix::zeros(p, p);
    for j in 0..p {
        let h = 1e-4 * beta[j].abs().max(1.0);
        let mut up = beta.to_vec();
        let mut down = beta.to_vec();
        up[j] += h;
        down[j] -= h;
        let (_, gu) = obj.evaluate(&up)?;
        let (_, gd) = obj.evaluate(&down)?;
        for i in 0..p {
            hess[(i, j)] = (gu[i] - gd[i]) / (2.0 * h);
        }
    }
    Ok((&hess + hess.transpose()) * 0.5)
}

/// Relative eigenvalue floor below which the information matrix is treated
/// as singular.
const INFORMATION_FLOOR: f64 = 1e-8;

fn invert_information(info: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(info.clone());
    let max = eig.eigenvalues.iter().fold(0.0_f64, |m, &x| m.max(x.abs()));
    if !(max > 0.0) || eig.eigenvalues.iter().any(|&x| x <= INFORMATION_FLOOR * max) {
        return Err(Error::NonInvertibleHessian);
    }
    let inv_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|x| 1.0 / x));
    Ok(&eig.eigenvectors * inv_diag * eig.eigenvectors.transpose())
}

/// Covariance matrix of the estimator at `beta`.
pub fn covariance(obj: &dyn Objective, beta: &[f64], method: StdErrorMethod) -> Result<DMatrix<f64>> {
    let info = -numerical_hessian(obj, beta)?;
    let inv = invert_information(&info)?;
    match method {
        StdErrorMethod::Hessian | StdErrorMethod::None => Ok(inv),
        StdErrorMethod::Sandwich => {
            let p = beta.len();
            let mut meat = DMatrix::zeros(p, p);
            for s in obj.scores(beta)? {
                let s = DVector::from_vec(s);
                meat += &s * s.transpose();
            }
            Ok(&inv * meat * &inv)
        }
    }
}

pub fn standard_errors(obj: &dyn Objective, beta: &[f64], method: StdErrorMethod) -> Result<Vec<f64>> {
    let cov = covariance(obj, beta, method)?;
    Ok((0..beta.len()).map(|i| cov[(i, i)].max(0.0).sqrt()).collect())
}

/// Nested fixed point estimation of the recursive logit model. A run that
/// exhausts its iteration budget is an error carrying the partial result.
pub fn estimate_rl(
    observations: &[Observation],
    net: &Network,
    init_beta: &[f64],
    mu: f64,
    options: &EstimationOptions,
) -> Result<EstimationResult> {
    let likelihood = RlLikelihood::new(net, observations)?;
    let obj = RlObjective {
        likelihood: &likelihood,
        mu,
    };
    let result = maximize(&obj, init_beta, options)?;
    if result.converged {
        Ok(result)
    } else {
        Err(Error::EstimationDidNotConverge(Box::new(result)))
    }
}

/// Path logit estimation; non-convergence is reported in the result.
pub fn estimate_pl(
    observations: &[Observation],
    choice_sets: &[ChoiceSet],
    net: &Network,
    init_beta: &[f64],
    mu: f64,
    options: &EstimationOptions,
) -> Result<EstimationResult> {
    let likelihood = PlLikelihood::new(net, observations, choice_sets)?;
    let obj = PlObjective {
        likelihood: &likelihood,
        mu,
        dim: net.attribute_count(),
    };
    maximize(&obj, init_beta, options)
}

/// Ground truth and demand for synthetic observations.
#[derive(Clone, Debug)]
pub struct SyntheticConfig {
    pub true_beta: Vec<f64>,
    pub mu: f64,
    /// `(origin, destination, count)`
    pub od_demand: Vec<(NodeId, NodeId, usize)>,
    /// When set, observations for an OD pair are drawn from the path logit
    /// distribution over the matching set instead of the recursive model.
    pub restriction: Option<Vec<ChoiceSet>>,
    pub seed: u64,
    pub sampling: SampleOptions,
}

impl SyntheticConfig {
    pub fn n_obs(&self) -> usize {
        self.od_demand.iter().map(|d| d.2).sum()
    }
}

/// Generator for observation `index` under `seed`; independent of thread
/// scheduling.
pub fn observation_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn draw_index<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        cumulative += p;
        if p > 0.0 {
            last = i;
            if u < cumulative {
                return i;
            }
        }
    }
    last
}

/// Observations in `od_demand` order, reproducible given the seed.
pub fn simulate_observations(cfg: &SyntheticConfig, net: &Network) -> Result<Vec<Observation>> {
    if cfg.n_obs() == 0 {
        return Err(Error::Validation("at least one observation is required".into()));
    }
    let spec = UtilitySpec::new(cfg.true_beta.clone(), cfg.mu)?;
    spec.check(net)?;
    let jobs: Vec<(NodeId, NodeId)> = cfg
        .od_demand
        .iter()
        .flat_map(|&(o, d, n)| std::iter::repeat_n((o, d), n))
        .collect();

    if let Some(sets) = &cfg.restriction {
        let mut tables: Vec<(&ChoiceSet, Vec<f64>)> = Vec::new();
        for &(o, d, _) in &cfg.od_demand {
            let set = sets
                .iter()
                .find(|s| s.origin == o && s.destination == d)
                .ok_or_else(|| {
                    Error::Validation(format!(
                        "no restriction set for OD pair {},{}",
                        net.node_name(o),
                        net.node_name(d)
                    ))
                })?;
            tables.push((set, pl_probabilities(set, net, &spec)?));
        }
        return Ok(jobs
            .par_iter()
            .enumerate()
            .map(|(i, &(o, d))| {
                let (set, probs) = tables
                    .iter()
                    .find(|(s, _)| s.origin == o && s.destination == d)
                    .expect("table built for every OD pair");
                let mut rng = observation_rng(cfg.seed, i);
                Observation::from_path(net, &set.paths[draw_index(&mut rng, probs)])
            })
            .collect());
    }

    let mut destinations: Vec<NodeId> = jobs.iter().map(|j| j.1).collect();
    destinations.sort();
    destinations.dedup();
    let system = ValueSystem::new(net, &spec).ok();
    let mut models = Vec::with_capacity(destinations.len());
    for &d in &destinations {
        let mut origins: Vec<NodeId> = jobs.iter().filter(|j| j.1 == d).map(|j| j.0).collect();
        origins.sort();
        origins.dedup();
        let anet = AugmentedNetwork::new(net, d, &origins)?;
        let vf = match &system {
            Some(s) => s.solve(&anet)?,
            None => ValueSystem::restricted(&anet, &spec)?.solve(&anet)?,
        };
        let cm = choice_matrix(&vf, &anet, &spec)?;
        models.push((anet, cm));
    }
    jobs.par_iter()
        .enumerate()
        .map(|(i, &(o, d))| {
            let (anet, cm) = &models[destinations.binary_search(&d).expect("destination listed")];
            let mut rng = observation_rng(cfg.seed, i);
            let start = anet.origin_state(o).expect("origin registered");
            sample_observation(cm, anet, start, &mut rng, &cfg.sampling)
        })
        .collect()
}

/// One row per model: coefficient, standard error (in parentheses when
/// `rounded`), log-likelihood and convergence flag.
pub fn format_estimation_report(
    attribute_names: &[String],
    rows: &[(String, EstimationResult)],
    rounded: bool,
) -> String {
    let mut out = String::from("model");
    for name in attribute_names {
        let _ = write!(out, ",beta_{name},se_{name}");
    }
    out.push_str(",final_ll,converged,iterations\n");
    for (label, r) in rows {
        out.push_str(label);
        for (i, b) in r.beta_hat.iter().enumerate() {
            let se = r.std_errors.as_ref().map(|s| s[i]);
            if rounded {
                let se = se.map_or("(-)".to_string(), |s| format!("({s:.2})"));
                let _ = write!(out, ",{b:.2},{se}");
            } else {
                let se = se.map_or(String::new(), |s| format!("{s:e}"));
                let _ = write!(out, ",{b:e},{se}");
            }
        }
        if rounded {
            let _ = write!(out, ",{:.2}", r.final_ll);
        } else {
            let _ = write!(out, ",{:e}", r.final_ll);
        }
        let _ = writeln!(out, ",{},{}", r.converged, r.iterations);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::shortest_path::Path;
    use approx::assert_abs_diff_eq;

    fn toy_config(n: usize, seed: u64) -> (Network, SyntheticConfig) {
        let net = fixtures::toy_network();
        let (o, d) = fixtures::default_od(&net);
        let cfg = SyntheticConfig {
            true_beta: fixtures::TOY_BETA_STATED.to_vec(),
            mu: 1.0,
            od_demand: vec![(o, d, n)],
            restriction: None,
            seed,
            sampling: SampleOptions::default(),
        };
        (net, cfg)
    }

    struct Quadratic;

    impl Objective for Quadratic {
        fn dim(&self) -> usize {
            2
        }
        fn evaluate(&self, b: &[f64]) -> Result<(f64, Vec<f64>)> {
            // Rosenbrock, negated; infeasible for b[0] > 2.
            if b[0] > 2.0 {
                return Err(Error::infeasible(b, "outside"));
            }
            let f = -(100.0 * (b[1] - b[0] * b[0]).powi(2) + (1.0 - b[0]).powi(2));
            let g = vec![
                400.0 * b[0] * (b[1] - b[0] * b[0]) + 2.0 * (1.0 - b[0]),
                -200.0 * (b[1] - b[0] * b[0]),
            ];
            Ok((f, g))
        }
        fn scores(&self, b: &[f64]) -> Result<Vec<Vec<f64>>> {
            Ok(vec![self.evaluate(b)?.1])
        }
        fn is_flat(&self) -> bool {
            false
        }
    }

    #[test]
    fn bfgs_on_rosenbrock_with_infeasible_region() {
        let r = maximize(&Quadratic, &[-1.2, 1.0], &EstimationOptions::default()).unwrap();
        assert!(r.converged, "{r:?}");
        assert_abs_diff_eq!(r.beta_hat[0], 1.0, epsilon = 1e-5);
        assert_abs_diff_eq!(r.beta_hat[1], 1.0, epsilon = 1e-5);
        for w in r.trace.windows(2) {
            assert!(w[1].ll >= w[0].ll - 1e-12 * w[0].ll.abs());
        }
        assert!(matches!(
            maximize(&Quadratic, &[3.0, 0.0], &EstimationOptions::default()),
            Err(Error::InfeasibleValueFunction { .. })
        ));
    }

    #[test]
    fn simulation_is_reproducible() {
        let (net, cfg) = toy_config(50, 7);
        let a = simulate_observations(&cfg, &net).unwrap();
        let b = simulate_observations(&cfg, &net).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 50);
        let (_, other) = toy_config(50, 8);
        assert_ne!(a, simulate_observations(&other, &net).unwrap());
        let (_, one) = toy_config(1, 3);
        let single = simulate_observations(&one, &net).unwrap();
        assert_eq!(single.len(), 1);
        assert!(single[0].path(&net).is_ok());
        let (_, none) = toy_config(0, 3);
        assert!(simulate_observations(&none, &net).is_err());
    }

    #[test]
    fn restricted_simulation_stays_in_the_set() {
        let (net, mut cfg) = toy_config(400, 11);
        let c3 = fixtures::toy_choice_set(&net, 3);
        cfg.restriction = Some(vec![c3.clone()]);
        let obs = simulate_observations(&cfg, &net).unwrap();
        let excluded: Vec<Path> = fixtures::toy_paths(&net)[12..].to_vec();
        for o in &obs {
            let p = o.path(&net).unwrap();
            assert!(c3.position(&p).is_some());
            assert!(!excluded.contains(&p));
        }
    }

    #[test]
    fn rl_and_full_set_pl_agree() {
        let (net, cfg) = toy_config(300, 5);
        let obs = simulate_observations(&cfg, &net).unwrap();
        let init = [-1.0, 0.0];
        let rl = estimate_rl(&obs, &net, &init, 1.0, &EstimationOptions::default()).unwrap();
        let c4 = fixtures::toy_choice_set(&net, 4);
        let sets = crate::path_logit::build_choice_sets(
            &net,
            &obs,
            &crate::path_logit::ChoiceSetGenerator::Explicit(vec![c4]),
        )
        .unwrap();
        let pl = estimate_pl(&obs, &sets, &net, &init, 1.0, &EstimationOptions::default()).unwrap();
        assert!(rl.converged && pl.converged, "{rl:?}\n{pl:?}");
        assert_abs_diff_eq!(rl.final_ll, pl.final_ll, epsilon = 1e-6);
        for (a, b) in rl.beta_hat.iter().zip(&pl.beta_hat) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-4);
        }
        for w in rl.trace.windows(2) {
            assert!(w[1].ll >= w[0].ll - 1e-12 * w[0].ll.abs());
        }
        let se = rl.std_errors.clone().unwrap();
        assert!(se.iter().all(|s| *s > 0.0));
        // Sandwich and Hessian estimates are the same order of magnitude.
        let lik = RlLikelihood::new(&net, &obs).unwrap();
        let obj = RlObjective { likelihood: &lik, mu: 1.0 };
        let sandwich = standard_errors(&obj, &rl.beta_hat, StdErrorMethod::Sandwich).unwrap();
        for (a, b) in se.iter().zip(&sandwich) {
            assert!(a / b > 0.5 && a / b < 2.0);
        }
        let report = format_estimation_report(
            net.attribute_names(),
            &[("RL".into(), rl), ("PL(C4)".into(), pl)],
            true,
        );
        assert!(report.starts_with("model,beta_travel_time,se_travel_time,"));
        assert_eq!(report.lines().count(), 3);
    }

    #[test]
    fn collinear_attribute_has_no_standard_errors() {
        let text = "id,from,to,x,y\n0,o,a,1,2\n1,a,d,1,2\n2,o,d,3,6\n3,o,b,0.5,1\n4,b,d,1,2\n";
        let net = Network::parse(text).unwrap();
        let (o, d) = (net.node("o").unwrap(), net.node("d").unwrap());
        let cfg = SyntheticConfig {
            true_beta: vec![-0.5, -0.25],
            mu: 1.0,
            od_demand: vec![(o, d, 200)],
            restriction: None,
            seed: 1,
            sampling: SampleOptions::default(),
        };
        let obs = simulate_observations(&cfg, &net).unwrap();
        let lik = RlLikelihood::new(&net, &obs).unwrap();
        let obj = RlObjective { likelihood: &lik, mu: 1.0 };
        assert!(matches!(
            standard_errors(&obj, &[-0.5, -0.25], StdErrorMethod::Hessian),
            Err(Error::NonInvertibleHessian)
        ));
        let r = estimate_rl(&obs, &net, &[0.0, 0.0], 1.0, &EstimationOptions::default()).unwrap();
        assert!(r.std_errors.is_none());
        assert!(r.std_error_failure.is_some());
    }

    #[test]
    fn singleton_sets_give_a_flat_likelihood() {
        let net = fixtures::toy_network();
        let paths = fixtures::toy_paths(&net);
        let (o, d) = fixtures::default_od(&net);
        let obs: Vec<Observation> = paths[..3].iter().map(|p| Observation::from_path(&net, p)).collect();
        let sets: Vec<ChoiceSet> = paths[..3]
            .iter()
            .map(|p| ChoiceSet::new(&net, o, d, vec![p.clone()], crate::path_logit::Provenance::Explicit).unwrap())
            .collect();
        let r = estimate_pl(&obs, &sets, &net, &[-1.0, 0.5], 1.0, &EstimationOptions::default()).unwrap();
        assert!(r.flat_likelihood);
        assert_eq!(r.iterations, 0);
        assert_eq!(r.final_ll, 0.0);
        assert_eq!(r.beta_hat, vec![-1.0, 0.5]);
    }

    #[test]
    fn budget_exhaustion_is_an_error_with_the_partial_result() {
        let (net, cfg) = toy_config(200, 2);
        let obs = simulate_observations(&cfg, &net).unwrap();
        let options = EstimationOptions {
            max_iterations: 1,
            ..EstimationOptions::default()
        };
        match estimate_rl(&obs, &net, &[0.0, 0.0], 1.0, &options) {
            Err(Error::EstimationDidNotConverge(r)) => {
                assert_eq!(r.iterations, 1);
                assert!(!r.converged);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_coefficients_on_a_symmetric_network() {
        // Two mirrored routes and a longer direct arc; at beta = 0 all three
        // are equally likely.
        let text = "id,from,to,x\n0,o,a,1\n1,a,d,1\n2,o,b,1\n3,b,d,1\n4,o,d,3\n";
        let net = Network::parse(text).unwrap();
        let (o, d) = (net.node("o").unwrap(), net.node("d").unwrap());
        let cfg = SyntheticConfig {
            true_beta: vec![0.0],
            mu: 1.0,
            od_demand: vec![(o, d, 3000)],
            restriction: None,
            seed: 9,
            sampling: SampleOptions::default(),
        };
        let obs = simulate_observations(&cfg, &net).unwrap();
        let r = estimate_rl(&obs, &net, &[-1.0], 1.0, &EstimationOptions::default()).unwrap();
        let se = r.std_errors.unwrap()[0];
        assert!(r.beta_hat[0].abs() < 3.0 * se, "{:?} se {se}", r.beta_hat);
    }
}
