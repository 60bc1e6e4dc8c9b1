//! Adaptive radius selection: a stage-0 run under the RKHS-norm set only,
//! an estimate of the Lebesgue decomposition of the policy's visitation
//! with respect to the data, and a second run under one combined constraint.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::TransitionDataset;
use crate::error::{Error, Result};
use crate::funcapprox::{ParamPolicy, ParamQ, Policy};
use crate::kernel::{self, KernelSpec};
use crate::par::{self, Execution};
use crate::residual;
use crate::rng;
use crate::steel::{Constraint, SteelConfig, SteelProblem, SteelResult};

/// Cap on the number of points in a rollout-based target sample.
pub const TARGET_SAMPLE_CAP: usize = 4000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptiveConfig {
    pub steel: SteelConfig,
    /// Radius of the stage-0 RKHS-norm set; `None` means ten times the norm
    /// of the reward regression.
    pub large_eps2: Option<f64>,
    /// Truncation of the density ratio.
    pub w_max: f64,
    pub grid_points: usize,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self { steel: SteelConfig::default(), large_eps2: None, w_max: 20.0, grid_points: 4096 }
    }
}

/// Weighted point set over state-action space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedSample {
    pub points: Vec<Vec<f64>>,
    /// Nonnegative, summing to one (empty sample has no weights).
    pub weights: Vec<f64>,
}

impl WeightedSample {
    pub fn uniform(points: Vec<Vec<f64>>) -> Self {
        let w = 1.0 / points.len().max(1) as f64;
        let weights = vec![w; points.len()];
        Self { points, weights }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Ridge linear-Gaussian transition model `s' = W [s; a; 1] + sigma * eta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedDynamics {
    /// One row per next-state coordinate.
    pub coef: Vec<Vec<f64>>,
    pub noise_std: Vec<f64>,
    pub state_lo: Vec<f64>,
    pub state_hi: Vec<f64>,
}

impl FittedDynamics {
    pub fn fit(dataset: &TransitionDataset, ridge: f64) -> Result<Self> {
        let ds = dataset.state_dim();
        let p = ds + dataset.action_dim() + 1;
        let n = dataset.len();
        if n == 0 {
            return Err(Error::Empty("transition dataset".into()));
        }
        let mut x = DMatrix::zeros(n, p);
        let mut y = DMatrix::zeros(n, ds);
        let mut lo = vec![f64::INFINITY; ds];
        let mut hi = vec![f64::NEG_INFINITY; ds];
        for (i, t) in dataset.transitions().enumerate() {
            for (j, v) in t.state.iter().chain(&t.action).chain(std::iter::once(&1.0)).enumerate() {
                x[(i, j)] = *v;
            }
            for (j, v) in t.next_state.iter().enumerate() {
                y[(i, j)] = *v;
            }
            for s in [&t.state, &t.next_state] {
                for j in 0..ds {
                    lo[j] = lo[j].min(s[j]);
                    hi[j] = hi[j].max(s[j]);
                }
            }
        }
        let mut gram = x.tr_mul(&x);
        for j in 0..p {
            gram[(j, j)] += ridge * n as f64;
        }
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::SolveFailed("transition model normal equations".into()))?;
        let w = chol.solve(&x.tr_mul(&y));
        let resid = &y - &x * &w;
        let noise_std = (0..ds)
            .map(|j| (resid.column(j).norm_squared() / n as f64).sqrt())
            .collect();
        let coef = (0..ds).map(|j| w.column(j).iter().copied().collect()).collect();
        Ok(Self { coef, noise_std, state_lo: lo, state_hi: hi })
    }

    /// Mean next state.
    pub fn mean(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        self.coef
            .iter()
            .map(|row| {
                let lin: f64 = s.iter().chain(a).zip(row).map(|(x, w)| x * w).sum();
                lin + row[row.len() - 1]
            })
            .collect()
    }

    /// Sampled next state, clipped to the observed state range.
    pub fn sample<R: rand::Rng>(&self, s: &[f64], a: &[f64], rng: &mut R) -> Vec<f64> {
        let mut next = self.mean(s, a);
        for (j, v) in next.iter_mut().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            *v = (*v + self.noise_std[j] * z).clamp(self.state_lo[j], self.state_hi[j]);
        }
        next
    }
}

/// Rollout length covering 99% of the discount mass.
pub fn visitation_horizon(gamma: f64) -> usize {
    if gamma <= 0.0 {
        1
    } else {
        ((0.01f64).ln() / gamma.ln()).ceil().max(1.0) as usize
    }
}

/// Sample from the estimated discounted visitation of `policy`. With zero
/// discount this is `(s0, pi(s0))` over the initial states; otherwise
/// rollouts of a fitted transition model, weighted geometrically in time.
pub fn target_sample(
    dataset: &TransitionDataset,
    policy: &ParamPolicy,
    gamma: f64,
    init_states: &[Vec<f64>],
    seed: u64,
) -> Result<WeightedSample> {
    residual::check_discount(gamma)?;
    if init_states.is_empty() {
        return Err(Error::Empty("initial state sample".into()));
    }
    let pair = |s: &[f64]| -> Vec<f64> {
        let mut z = s.to_vec();
        z.extend(policy.act(s));
        z
    };
    if gamma == 0.0 {
        return Ok(WeightedSample::uniform(init_states.iter().map(|s| pair(s)).collect()));
    }
    let model = FittedDynamics::fit(dataset, 1e-6)?;
    let horizon = visitation_horizon(gamma);
    let rollouts = init_states.len().min(TARGET_SAMPLE_CAP.div_ceil(horizon)).max(1);
    let mut starts: Vec<usize> = (0..init_states.len()).collect();
    if rollouts < starts.len() {
        starts.shuffle(&mut rng::seeded(rng::derive(seed, 0x7a49)));
        starts.truncate(rollouts);
        starts.sort_unstable();
    }
    let stream_seed = rng::derive(seed, 0x7011);
    let paths = par::map_indexed(Execution::default(), starts.len(), |r| {
        let mut rng = rng::stream(stream_seed, r as u64);
        let mut s = init_states[starts[r]].clone();
        let mut out = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let a = policy.act(&s);
            let mut z = s.clone();
            z.extend_from_slice(&a);
            out.push(z);
            s = model.sample(&s, &a, &mut rng);
        }
        out
    });
    let mut points = Vec::with_capacity(starts.len() * horizon);
    let mut weights = Vec::with_capacity(starts.len() * horizon);
    for path in paths {
        let mut w = 1.0;
        for z in path {
            points.push(z);
            weights.push(w);
            w *= gamma;
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(WeightedSample { points, weights })
}

/// Weighted product-Gaussian density estimate with per-coordinate bandwidths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kde {
    pub sample: WeightedSample,
    /// Zero marks a coordinate that is ignored.
    pub bandwidths: Vec<f64>,
}

impl Kde {
    /// Height of one unit-weight kernel at its center.
    pub fn peak(&self) -> f64 {
        1.0 / self.norm()
    }

    fn norm(&self) -> f64 {
        let mut norm = 1.0;
        for h in self.bandwidths.iter().filter(|h| **h > 0.0) {
            norm *= h * (2.0 * std::f64::consts::PI).sqrt();
        }
        norm
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        let norm = self.norm();
        let mut total = 0.0;
        for (x, w) in self.sample.points.iter().zip(&self.sample.weights) {
            let mut e = 0.0;
            for ((xi, zi), h) in x.iter().zip(z).zip(&self.bandwidths) {
                if *h > 0.0 {
                    let u = (zi - xi) / h;
                    e += u * u;
                }
            }
            total += w * (-0.5 * e).exp();
        }
        total / norm
    }
}

/// Truncated density ratio `min(d_target / d_behavior, w_max)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityRatio {
    pub behavior: Kde,
    pub target: Kde,
    pub w_max: f64,
}

impl DensityRatio {
    pub fn eval(&self, z: &[f64]) -> f64 {
        ratio(self.target.eval(z), self.behavior.eval(z), self.w_max)
    }
}

fn ratio(target: f64, behavior: f64, w_max: f64) -> f64 {
    if behavior > 0.0 {
        (target / behavior).min(w_max)
    } else if target > 0.0 {
        w_max
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionEstimate {
    pub lambda1_mass: f64,
    pub lambda2_mass: f64,
    pub omega_hat: DensityRatio,
    /// Batch points weighted by the density ratio.
    pub lambda1_sample: WeightedSample,
    /// Target points weighted by the share not explained by the batch.
    pub lambda2_sample: WeightedSample,
    pub delta_hat: f64,
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

const PRIMES: [u64; 24] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89];

/// Halton points in `[0,1)^d` under a random toroidal shift.
pub fn shifted_halton(n: usize, d: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if d > PRIMES.len() {
        return Err(Error::InvalidParameter(format!("halton grid supports at most {} dimensions", PRIMES.len())));
    }
    let mut r = rng::seeded(seed);
    let shift: Vec<f64> = (0..d).map(|_| r.random::<f64>()).collect();
    Ok((1..=n as u64)
        .map(|i| (0..d).map(|j| (radical_inverse(i, PRIMES[j]) + shift[j]).fract()).collect())
        .collect())
}

fn weighted_std(sample: &[&WeightedSample], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    let n: usize = sample.iter().map(|s| s.len()).sum();
    for j in 0..dim {
        let mean = sample.iter().flat_map(|s| s.points.iter()).map(|p| p[j]).sum::<f64>() / n as f64;
        let var = sample.iter().flat_map(|s| s.points.iter()).map(|p| (p[j] - mean).powi(2)).sum::<f64>() / n as f64;
        out[j] = var.sqrt();
    }
    out
}

/// Decomposition estimate from a batch sample and a target sample.
pub fn decompose(
    batch: &[Vec<f64>],
    target: &WeightedSample,
    spec: &KernelSpec,
    w_max: f64,
    grid_points: usize,
    seed: u64,
) -> Result<DecompositionEstimate> {
    if batch.is_empty() || target.is_empty() {
        return Err(Error::Empty("decomposition sample".into()));
    }
    if !(w_max > 0.0) || grid_points == 0 {
        return Err(Error::InvalidParameter("w_max and grid size must be positive".into()));
    }
    let dim = batch[0].len();
    crate::error::check_dim(dim, target.points[0].len())?;
    let batch_sample = WeightedSample::uniform(batch.to_vec());
    let scale = weighted_std(&[&batch_sample, target], dim);
    if scale.iter().all(|s| *s == 0.0) {
        return Err(Error::Degenerate("all decomposition points coincide".into()));
    }
    let active = scale.iter().filter(|s| **s > 0.0).count() as f64;
    let scott = |n: usize| -> Vec<f64> {
        let f = (n as f64).powf(-1.0 / (active + 4.0));
        scale.iter().map(|s| s * f).collect()
    };
    let behavior = Kde { sample: batch_sample.clone(), bandwidths: scott(batch.len()) };
    let target_kde = Kde { sample: target.clone(), bandwidths: scott(target.len()) };

    // grid over the enlarged bounding box of the union, constant coordinates dropped
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for p in batch.iter().chain(&target.points) {
        for j in 0..dim {
            lo[j] = lo[j].min(p[j]);
            hi[j] = hi[j].max(p[j]);
        }
    }
    let free: Vec<usize> = (0..dim).filter(|j| scale[*j] > 0.0).collect();
    let unit = shifted_halton(grid_points, free.len(), rng::derive(seed, 0x6a1d))?;
    let grid = par::map_slice(Execution::default(), &unit, |u| {
        let mut z = lo.clone();
        for (k, j) in free.iter().enumerate() {
            let pad = 0.05 * (hi[*j] - lo[*j]);
            z[*j] = lo[*j] - pad + u[k] * (hi[*j] - lo[*j] + 2.0 * pad);
        }
        let db = behavior.eval(&z);
        let dt = target_kde.eval(&z);
        (ratio(dt, db, w_max) * db, dt)
    });
    let ac: f64 = grid.iter().map(|g| g.0).sum();
    let tot: f64 = grid.iter().map(|g| g.1).sum();
    let lambda1_mass = if tot > 0.0 { (ac / tot).clamp(0.0, 1.0) } else { 0.0 };
    let lambda2_mass = 1.0 - lambda1_mass;

    let omega_hat = DensityRatio { behavior, target: target_kde, w_max };
    let omega_batch = par::map_slice(Execution::default(), batch, |z| omega_hat.eval(z));
    let wsum: f64 = omega_batch.iter().sum();
    let lambda1_sample = if wsum > 0.0 {
        WeightedSample { points: batch.to_vec(), weights: omega_batch.iter().map(|w| w / wsum).collect() }
    } else {
        WeightedSample { points: Vec::new(), weights: Vec::new() }
    };

    // target density at its own points leaves the point out
    let keep = par::map_indexed(Execution::default(), target.len(), |i| {
        let z = &target.points[i];
        let w = target.weights[i];
        let dt = if w < 1.0 { (omega_hat.target.eval(z) - w * omega_hat.target.peak()) / (1.0 - w) } else { 0.0 };
        let db = omega_hat.behavior.eval(z);
        if dt > 0.0 {
            let k = 1.0 - ratio(dt, db, w_max) * db / dt;
            if k > 1e-12 { k } else { 0.0 }
        } else {
            0.0
        }
    });
    let raw: Vec<f64> = keep.iter().zip(&target.weights).map(|(k, w)| k * w).collect();
    let rsum: f64 = raw.iter().sum();
    // a singular part below the KDE resolution is treated as absent
    let resolution = (target.len() as f64).sqrt().recip();
    let (lambda2_sample, delta_hat) = if lambda2_mass < resolution.max(1e-12) || !(rsum > 0.0) {
        (WeightedSample { points: Vec::new(), weights: Vec::new() }, 0.0)
    } else {
        let sample = WeightedSample { points: target.points.clone(), weights: raw.iter().map(|w| w / rsum).collect() };
        let uniform = vec![1.0; batch.len()];
        let mmd = kernel::mmd2_weighted(&sample.points, &sample.weights, batch, &uniform, spec)?;
        (sample, mmd.sqrt())
    };
    Ok(DecompositionEstimate { lambda1_mass, lambda2_mass, omega_hat, lambda1_sample, lambda2_sample, delta_hat })
}

/// Default stage-0 radius: ten times the RKHS norm of the reward regression.
pub fn default_large_eps2(problem: &SteelProblem) -> f64 {
    let r = DVector::from_iterator(problem.n_used(), problem.transitions().iter().map(|t| t.reward));
    (10.0 * problem.context().rkhs_norm_sq(&r).sqrt()).max(1e-8)
}

fn stage0_config(problem: &SteelProblem, cfg: &AdaptiveConfig) -> SteelConfig {
    let mut c = cfg.steel.clone();
    c.lr_rho1 = 0.0;
    c.eps2 = Some(cfg.large_eps2.unwrap_or_else(|| default_large_eps2(problem)));
    c.calibrate_c = false;
    c
}

/// Stage 0: optimize under the RKHS-norm set alone with a large radius.
pub fn stage0(dataset: &TransitionDataset, cfg: &AdaptiveConfig) -> Result<SteelResult> {
    let mut problem = SteelProblem::new(dataset, &cfg.steel)?;
    run_stage0(&mut problem, cfg)
}

fn run_stage0(problem: &mut SteelProblem, cfg: &AdaptiveConfig) -> Result<SteelResult> {
    let c = stage0_config(problem, cfg);
    problem.set_radii(c.radii(problem.n_used()));
    problem.optimize(&c, &[])
}

/// Decomposition of the stage-0 policy's visitation against the batch used
/// by `problem`.
pub fn estimate_decomposition(
    problem: &SteelProblem,
    dataset: &TransitionDataset,
    policy: &ParamPolicy,
    cfg: &AdaptiveConfig,
) -> Result<DecompositionEstimate> {
    let seed = cfg.steel.seed;
    let target = target_sample(dataset, policy, problem.gamma(), problem.init_states(), seed)?;
    decompose(&problem.batch_points(), &target, problem.context().spec(), cfg.w_max, cfg.grid_points, seed)
}

/// Raw value of the combined constraint at `(policy, q)` before flooring.
fn combined_stat(problem: &SteelProblem, policy: &ParamPolicy, q: &ParamQ, d: &DecompositionEstimate) -> Result<f64> {
    let y = residual::residual_vector(problem.transitions(), policy, q, problem.gamma())?.as_dvector();
    let ymy = y.dot(&(problem.context().shrinkage() * &y)).max(0.0);
    Ok(combined_constraint(problem, d, 0.0).stat(&y, 0.0, ymy))
}

fn combined_constraint(problem: &SteelProblem, d: &DecompositionEstimate, eps0: f64) -> Constraint {
    let n = problem.n_used();
    let weights = if d.lambda1_sample.is_empty() {
        DVector::zeros(n)
    } else {
        DVector::from_column_slice(&d.lambda1_sample.weights)
    };
    Constraint::Combined { lambda1: d.lambda1_mass, weights, lambda2: d.lambda2_mass, delta: d.delta_hat, eps0 }
}

/// Floor applied to the adaptive radius.
pub fn epsilon0_floor(reward_bound: f64, gamma: f64) -> f64 {
    (1e-6 * reward_bound / (1.0 - gamma)).max(1e-12)
}

/// Adaptive radius: the combined constraint evaluated at the stage-0
/// solution, floored.
pub fn epsilon0(
    problem: &SteelProblem,
    policy: &ParamPolicy,
    q: &ParamQ,
    decomposition: &DecompositionEstimate,
    reward_bound: f64,
) -> Result<f64> {
    let raw = combined_stat(problem, policy, q, decomposition)?;
    Ok(raw.max(epsilon0_floor(reward_bound, problem.gamma())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveResult {
    pub stage0: SteelResult,
    pub decomposition: DecompositionEstimate,
    pub eps0: f64,
    /// The second-stage policy and its certificate.
    pub result: SteelResult,
}

/// Stage 0, decomposition, adaptive radius, and the single-constraint run.
pub fn adaptive_steel(dataset: &TransitionDataset, cfg: &AdaptiveConfig) -> Result<AdaptiveResult> {
    let mut problem = SteelProblem::new(dataset, &cfg.steel)?;
    let stage0 = run_stage0(&mut problem, cfg)?;
    let decomposition = estimate_decomposition(&problem, dataset, &stage0.policy, cfg)?;
    let eps0 = epsilon0(&problem, &stage0.policy, &stage0.q, &decomposition, dataset.reward_bound())?;
    problem.set_constraints(vec![combined_constraint(&problem, &decomposition, eps0)]);
    let result = problem.optimize(&cfg.steel, &[])?;
    Ok(AdaptiveResult { stage0, decomposition, eps0, result })
}
