//! Synthetic environments with known ground truth, Monte Carlo policy values,
//! a grid value-iteration oracle and regret against an in-class reference.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{compute_loan_price, BanditDataset, BanditRow, LoanRecord, Transition, TransitionDataset};
use crate::error::{check_dim, Error, Result};
use crate::funcapprox::{ActionBox, ParamPolicy, Policy, QFunction};
use crate::par::{self, Execution};
use crate::residual::check_discount;
use crate::rng;

/// States of the MDP family are clipped to `[-STATE_BOUND, STATE_BOUND]`.
pub const STATE_BOUND: f64 = 4.0;

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn affine(offset: &[f64], slope: &[Vec<f64>], s: &[f64]) -> Vec<f64> {
    offset
        .iter()
        .zip(slope)
        .map(|(o, row)| o + row.iter().zip(s).map(|(w, x)| w * x).sum::<f64>())
        .collect()
}

fn check_matrix(m: &[Vec<f64>], rows: usize, cols: usize, what: &str) -> Result<()> {
    if m.len() != rows || m.iter().any(|r| r.len() != cols) {
        return Err(Error::InvalidParameter(format!("{what} must be {rows}x{cols}")));
    }
    Ok(())
}

/// Gaussian policy `a ~ N(offset + slope s, std^2 I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianLinearPolicy {
    pub offset: Vec<f64>,
    /// One row per action coordinate.
    pub slope: Vec<Vec<f64>>,
    pub std: f64,
}

impl GaussianLinearPolicy {
    pub fn validate(&self, state_dim: usize, action_dim: usize) -> Result<()> {
        check_dim(action_dim, self.offset.len())?;
        check_matrix(&self.slope, action_dim, state_dim, "behavior slope")?;
        if !(self.std > 0.0 && self.std.is_finite()) {
            return Err(Error::InvalidParameter(format!("behavior std must be positive, got {}", self.std)));
        }
        Ok(())
    }

    pub fn mean(&self, s: &[f64]) -> Vec<f64> {
        affine(&self.offset, &self.slope, s)
    }

    pub fn density(&self, s: &[f64], a: &[f64]) -> f64 {
        self.mean(s).iter().zip(a).map(|(m, x)| normal_pdf((x - m) / self.std) / self.std).product()
    }

    pub fn sample<R: rand::Rng>(&self, s: &[f64], rng: &mut R) -> Vec<f64> {
        self.mean(s)
            .into_iter()
            .map(|m| {
                let z: f64 = rng.sample(StandardNormal);
                m + self.std * z
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SingularityMode {
    #[default]
    None,
    /// Deterministic policy class against a continuous behavior density.
    DeterministicTarget,
    /// Behavior actions never fall inside the target policies' action box.
    DisjointSupport,
}

/// Contextual bandit with reward `clip(1 - |a - mu(s)|^2, -1, 1)`, plus 0.5
/// when `s_1 > 1` if `jump` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BanditEnvSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    /// Initial states are `N(0, state_std^2 I)`.
    pub state_std: f64,
    pub peak_offset: Vec<f64>,
    pub peak_slope: Vec<Vec<f64>>,
    pub jump: bool,
    pub behavior: GaussianLinearPolicy,
    /// Reward noise, truncated at three standard deviations.
    pub noise_std: f64,
    pub action_box: ActionBox,
    pub mode: SingularityMode,
    /// Action box of the policy class in `DisjointSupport` mode.
    pub target_box: Option<ActionBox>,
}

impl Default for BanditEnvSpec {
    fn default() -> Self {
        Self {
            state_dim: 2,
            action_dim: 1,
            state_std: 1.0,
            peak_offset: vec![0.2],
            peak_slope: vec![vec![0.5, -0.3]],
            jump: false,
            behavior: GaussianLinearPolicy { offset: vec![0.1], slope: vec![vec![0.25, -0.15]], std: 0.4 },
            noise_std: 1.0,
            action_box: ActionBox { lo: vec![-2.0], hi: vec![2.0] },
            mode: SingularityMode::DeterministicTarget,
            target_box: None,
        }
    }
}

impl BanditEnvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.action_dim == 0 {
            return Err(Error::InvalidParameter("bandit dimensions must be positive".into()));
        }
        check_dim(self.action_dim, self.peak_offset.len())?;
        check_matrix(&self.peak_slope, self.action_dim, self.state_dim, "peak slope")?;
        self.behavior.validate(self.state_dim, self.action_dim)?;
        check_dim(self.action_dim, self.action_box.dim())?;
        if !(self.state_std > 0.0) || !(self.noise_std >= 0.0) {
            return Err(Error::InvalidParameter("state and noise scales must be positive".into()));
        }
        if self.jump && self.state_dim < 1 {
            return Err(Error::InvalidParameter("jump needs a state coordinate".into()));
        }
        if self.mode == SingularityMode::DisjointSupport {
            let tb = self
                .target_box
                .as_ref()
                .ok_or_else(|| Error::InvalidParameter("disjoint support needs a target box".into()))?;
            check_dim(self.action_dim, tb.dim())?;
        }
        Ok(())
    }

    /// Action box of the policy class.
    pub fn policy_box(&self) -> ActionBox {
        match (&self.mode, &self.target_box) {
            (SingularityMode::DisjointSupport, Some(b)) => b.clone(),
            _ => self.action_box.clone(),
        }
    }

    pub fn peak(&self, s: &[f64]) -> Vec<f64> {
        affine(&self.peak_offset, &self.peak_slope, s)
    }

    /// Expected reward.
    pub fn mean_reward(&self, s: &[f64], a: &[f64]) -> f64 {
        let d2: f64 = self.peak(s).iter().zip(a).map(|(m, x)| (x - m).powi(2)).sum();
        let base = (1.0 - d2).clamp(-1.0, 1.0);
        if self.jump && s[0] > 1.0 {
            base + 0.5
        } else {
            base
        }
    }

    /// `d mean_reward / d a`.
    pub fn mean_reward_action_grad(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let peak = self.peak(s);
        let d2: f64 = peak.iter().zip(a).map(|(m, x)| (x - m).powi(2)).sum();
        if d2 >= 2.0 {
            return vec![0.0; a.len()];
        }
        peak.iter().zip(a).map(|(m, x)| -2.0 * (x - m)).collect()
    }

    pub fn reward_bound(&self) -> f64 {
        let base = if self.jump { 1.5 } else { 1.0 };
        base + 3.0 * self.noise_std
    }

    pub fn sample_state<R: rand::Rng>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.state_dim)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                self.state_std * z
            })
            .collect()
    }

    fn in_target_box(&self, a: &[f64]) -> bool {
        match (&self.mode, &self.target_box) {
            (SingularityMode::DisjointSupport, Some(b)) => b.contains(a),
            _ => false,
        }
    }

    /// Behavior action; in disjoint-support mode draws are rejected while
    /// they land inside the target box.
    pub fn sample_action<R: rand::Rng>(&self, s: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        for _ in 0..10_000 {
            let a = self.behavior.sample(s, rng);
            if !self.in_target_box(&a) {
                return Ok(a);
            }
        }
        Err(Error::Degenerate("behavior policy keeps landing in the target box".into()))
    }

    /// Behavior density of `a` given `s`, including the truncation in
    /// disjoint-support mode.
    pub fn behavior_density(&self, s: &[f64], a: &[f64]) -> f64 {
        let raw = self.behavior.density(s, a);
        match (&self.mode, &self.target_box) {
            (SingularityMode::DisjointSupport, Some(b)) => {
                if b.contains(a) {
                    return 0.0;
                }
                let mean = self.behavior.mean(s);
                let inside: f64 = (0..self.action_dim)
                    .map(|j| {
                        normal_cdf((b.hi[j] - mean[j]) / self.behavior.std)
                            - normal_cdf((b.lo[j] - mean[j]) / self.behavior.std)
                    })
                    .product();
                raw / (1.0 - inside).max(1e-300)
            }
            _ => raw,
        }
    }

    pub fn generate(&self, n: usize, seed: u64) -> Result<BanditDataset> {
        self.validate()?;
        if n == 0 {
            return Err(Error::InvalidParameter("sample size must be at least one".into()));
        }
        let rows = par::map_indexed(Execution::default(), n, |i| -> Result<BanditRow> {
            let mut r = rng::stream(seed, i as u64);
            let s = self.sample_state(&mut r);
            let a = self.sample_action(&s, &mut r)?;
            let z: f64 = r.sample(StandardNormal);
            let reward = self.mean_reward(&s, &a) + self.noise_std * z.clamp(-3.0, 3.0);
            Ok(BanditRow { state: s, action: a, reward })
        });
        BanditDataset::new(rows.into_iter().collect::<Result<_>>()?, self.state_dim, self.action_dim)
    }
}

/// Reward `clip(base - w_s |s - target|^2 - w_a |a|^2, -r_max, r_max)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticReward {
    pub base: f64,
    pub target: Vec<f64>,
    pub state_weight: f64,
    pub action_weight: f64,
}

/// Linear-Gaussian MDP `s' = clip(A s + B a + eta, -4, 4)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MdpEnvSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub noise_std: f64,
    pub reward: QuadraticReward,
    pub r_max: f64,
    pub gamma: f64,
    /// Initial states are `N(0, init_std^2 I)`, clipped to the state bound.
    pub init_std: f64,
    pub behavior: GaussianLinearPolicy,
    pub action_box: ActionBox,
}

impl Default for MdpEnvSpec {
    fn default() -> Self {
        Self {
            state_dim: 1,
            action_dim: 1,
            a: vec![vec![0.6]],
            b: vec![vec![0.5]],
            noise_std: 0.5,
            reward: QuadraticReward { base: 1.0, target: vec![0.5], state_weight: 0.5, action_weight: 0.1 },
            r_max: 1.0,
            gamma: 0.8,
            init_std: 1.0,
            behavior: GaussianLinearPolicy { offset: vec![0.0], slope: vec![vec![-0.3]], std: 0.8 },
            action_box: ActionBox { lo: vec![-2.0], hi: vec![2.0] },
        }
    }
}

fn spectral_radius_bound(a: &[Vec<f64>]) -> f64 {
    // power iteration on A^T A gives the spectral norm, an upper bound
    let n = a.len();
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut norm = 0.0;
    for _ in 0..200 {
        let av: Vec<f64> = a.iter().map(|r| r.iter().zip(&v).map(|(x, y)| x * y).sum()).collect();
        let mut atav = vec![0.0; n];
        for (i, row) in a.iter().enumerate() {
            for (j, x) in row.iter().enumerate() {
                atav[j] += x * av[i];
            }
        }
        let len = atav.iter().map(|x| x * x).sum::<f64>().sqrt();
        if len == 0.0 {
            return 0.0;
        }
        norm = len.sqrt();
        v = atav.iter().map(|x| x / len).collect();
    }
    norm
}

impl MdpEnvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.action_dim == 0 {
            return Err(Error::InvalidParameter("MDP dimensions must be positive".into()));
        }
        check_matrix(&self.a, self.state_dim, self.state_dim, "A")?;
        check_matrix(&self.b, self.state_dim, self.action_dim, "B")?;
        check_dim(self.state_dim, self.reward.target.len())?;
        self.behavior.validate(self.state_dim, self.action_dim)?;
        check_dim(self.action_dim, self.action_box.dim())?;
        check_discount(self.gamma)?;
        if !(self.r_max > 0.0) || !(self.noise_std > 0.0) || !(self.init_std >= 0.0) {
            return Err(Error::InvalidParameter("r_max, noise_std and init_std must be positive".into()));
        }
        if spectral_radius_bound(&self.a) >= 1.0 {
            return Err(Error::InvalidParameter("transition matrix must be stable".into()));
        }
        Ok(())
    }

    pub fn reward(&self, s: &[f64], a: &[f64]) -> f64 {
        let ds: f64 = s.iter().zip(&self.reward.target).map(|(x, t)| (x - t).powi(2)).sum();
        let da: f64 = a.iter().map(|x| x * x).sum();
        (self.reward.base - self.reward.state_weight * ds - self.reward.action_weight * da).clamp(-self.r_max, self.r_max)
    }

    pub fn next_mean(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        (0..self.state_dim)
            .map(|i| {
                self.a[i].iter().zip(s).map(|(w, x)| w * x).sum::<f64>()
                    + self.b[i].iter().zip(a).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect()
    }

    pub fn step<R: rand::Rng>(&self, s: &[f64], a: &[f64], rng: &mut R) -> Vec<f64> {
        self.next_mean(s, a)
            .into_iter()
            .map(|m| {
                let z: f64 = rng.sample(StandardNormal);
                (m + self.noise_std * z).clamp(-STATE_BOUND, STATE_BOUND)
            })
            .collect()
    }

    pub fn sample_init<R: rand::Rng>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.state_dim)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                (self.init_std * z).clamp(-STATE_BOUND, STATE_BOUND)
            })
            .collect()
    }

    /// `n_traj` behavior trajectories of `horizon` transitions each.
    pub fn generate(&self, n_traj: usize, horizon: usize, seed: u64) -> Result<TransitionDataset> {
        self.validate()?;
        if n_traj == 0 || horizon == 0 {
            return Err(Error::InvalidParameter("trajectory count and horizon must be at least one".into()));
        }
        let trajectories = par::map_indexed(Execution::default(), n_traj, |i| {
            let mut r = rng::stream(seed, i as u64);
            let mut s = self.sample_init(&mut r);
            let mut out = Vec::with_capacity(horizon);
            for _ in 0..horizon {
                let a = self.behavior.sample(&s, &mut r);
                let reward = self.reward(&s, &a);
                let next = self.step(&s, &a, &mut r);
                out.push(Transition { state: s, action: a, reward, next_state: next.clone() });
                s = next;
            }
            out
        });
        TransitionDataset::new(trajectories, self.state_dim, self.action_dim, Some(self.r_max))
    }
}

/// Either environment family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvSpec {
    Bandit(BanditEnvSpec),
    Mdp(MdpEnvSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Generated {
    Bandit(BanditDataset),
    Mdp(TransitionDataset),
}

impl Generated {
    pub fn transitions(&self) -> TransitionDataset {
        match self {
            Generated::Bandit(b) => b.to_transitions(),
            Generated::Mdp(d) => d.clone(),
        }
    }
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            EnvSpec::Bandit(b) => b.validate(),
            EnvSpec::Mdp(m) => m.validate(),
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            EnvSpec::Bandit(b) => b.state_dim,
            EnvSpec::Mdp(m) => m.state_dim,
        }
    }

    pub fn action_dim(&self) -> usize {
        match self {
            EnvSpec::Bandit(b) => b.action_dim,
            EnvSpec::Mdp(m) => m.action_dim,
        }
    }

    pub fn gamma(&self) -> f64 {
        match self {
            EnvSpec::Bandit(_) => 0.0,
            EnvSpec::Mdp(m) => m.gamma,
        }
    }

    pub fn policy_box(&self) -> ActionBox {
        match self {
            EnvSpec::Bandit(b) => b.policy_box(),
            EnvSpec::Mdp(m) => m.action_box.clone(),
        }
    }

    /// `n` samples (bandit) or `n` trajectories of length `horizon` (MDP).
    pub fn generate(&self, n: usize, horizon: usize, seed: u64) -> Result<Generated> {
        match self {
            EnvSpec::Bandit(b) => Ok(Generated::Bandit(b.generate(n, seed)?)),
            EnvSpec::Mdp(m) => Ok(Generated::Mdp(m.generate(n, horizon, seed)?)),
        }
    }

    /// `n` draws from the initial-state distribution.
    pub fn init_states(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        par::map_indexed(Execution::default(), n, |i| {
            let mut r = rng::stream(seed, i as u64);
            match self {
                EnvSpec::Bandit(b) => b.sample_state(&mut r),
                EnvSpec::Mdp(m) => m.sample_init(&mut r),
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McValue {
    pub value: f64,
    pub stderr: f64,
}

fn mean_and_se(xs: &[f64]) -> McValue {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return McValue { value: mean, stderr: 0.0 };
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    McValue { value: mean, stderr: (var / n).sqrt() }
}

/// Smallest horizon whose discount tail is below 1e-3.
pub fn min_horizon(gamma: f64) -> usize {
    if gamma <= 0.0 {
        0
    } else {
        ((1e-3f64).ln() / gamma.ln()).ceil() as usize
    }
}

/// Monte Carlo value `(1 - gamma) E[sum_{t <= horizon} gamma^t r_t]`. Each
/// rollout draws from its own stream, so the result does not depend on the
/// execution mode. Bandit rollouts use the expected reward (the reward noise
/// has mean zero and only inflates the error).
pub fn mc_policy_value<P: Policy>(
    env: &EnvSpec,
    policy: &P,
    gamma: f64,
    horizon: usize,
    rollouts: usize,
    seed: u64,
) -> Result<McValue> {
    mc_policy_value_with(env, policy, gamma, horizon, rollouts, seed, Execution::default())
}

pub fn mc_policy_value_with<P: Policy>(
    env: &EnvSpec,
    policy: &P,
    gamma: f64,
    horizon: usize,
    rollouts: usize,
    seed: u64,
    exec: Execution,
) -> Result<McValue> {
    env.validate()?;
    check_discount(gamma)?;
    check_dim(env.state_dim(), policy.state_dim())?;
    check_dim(env.action_dim(), policy.action_dim())?;
    if rollouts == 0 {
        return Err(Error::InvalidParameter("need at least one rollout".into()));
    }
    if horizon < min_horizon(gamma) {
        return Err(Error::InvalidParameter(format!(
            "horizon {horizon} is below the minimum {} for discount {gamma}",
            min_horizon(gamma)
        )));
    }
    let returns = match env {
        EnvSpec::Bandit(b) => {
            if gamma != 0.0 {
                return Err(Error::InvalidParameter("bandit values use a zero discount".into()));
            }
            par::map_indexed(exec, rollouts, |i| {
                let mut r = rng::stream(seed, i as u64);
                let s = b.sample_state(&mut r);
                b.mean_reward(&s, &policy.act(&s))
            })
        }
        EnvSpec::Mdp(m) => par::map_indexed(exec, rollouts, |i| {
            let mut r = rng::stream(seed, i as u64);
            let mut s = m.sample_init(&mut r);
            let mut total = 0.0;
            let mut disc = 1.0;
            for _ in 0..=horizon {
                let a = policy.act(&s);
                total += disc * m.reward(&s, &a);
                disc *= gamma;
                s = m.step(&s, &a, &mut r);
            }
            (1.0 - gamma) * total
        }),
    };
    Ok(mean_and_se(&returns))
}

/// Grid value-iteration solution for a fixed policy. Evaluating the struct as
/// a Q-function applies one exact Bellman step on top of the grid values.
#[derive(Debug, Clone)]
pub struct TabularQ {
    env: MdpEnvSpec,
    /// Grid coordinates per state dimension.
    axis: Vec<f64>,
    /// Value of the policy at each grid node, row-major.
    pub values: Vec<f64>,
    /// Sup-norm change of every sweep.
    pub sweeps: Vec<f64>,
}

impl TabularQ {
    fn cell_masses(&self, mean: f64) -> Vec<f64> {
        cell_masses(&self.axis, mean, self.env.noise_std)
    }

    /// Expected grid value after one transition from `(s, a)`.
    fn expected_next(&self, s: &[f64], a: &[f64]) -> f64 {
        let mean = self.env.next_mean(s, a);
        let masses: Vec<Vec<f64>> = mean.iter().map(|m| self.cell_masses(*m)).collect();
        expect(&masses, &self.values)
    }

    pub fn grid_points(&self) -> Vec<Vec<f64>> {
        grid_nodes(&self.axis, self.env.state_dim)
    }

    /// Value of the policy at state `s` under the grid solution.
    pub fn state_value<P: Policy>(&self, policy: &P, s: &[f64]) -> f64 {
        self.value(s, &policy.act(s))
    }
}

impl QFunction for TabularQ {
    fn state_dim(&self) -> usize {
        self.env.state_dim
    }
    fn action_dim(&self) -> usize {
        self.env.action_dim
    }
    fn value(&self, s: &[f64], a: &[f64]) -> f64 {
        let r = self.env.reward(s, a);
        if self.env.gamma == 0.0 {
            return r;
        }
        r + self.env.gamma * self.expected_next(s, a)
    }
}

fn cell_masses(axis: &[f64], mean: f64, std: f64) -> Vec<f64> {
    let k = axis.len();
    let mut out = Vec::with_capacity(k);
    let mut prev = 0.0;
    for j in 0..k {
        let upper = if j + 1 == k { 1.0 } else { normal_cdf((0.5 * (axis[j] + axis[j + 1]) - mean) / std) };
        out.push(upper - prev);
        prev = upper;
    }
    out
}

fn expect(masses: &[Vec<f64>], values: &[f64]) -> f64 {
    match masses.len() {
        1 => masses[0].iter().zip(values).map(|(p, v)| p * v).sum(),
        _ => {
            let k = masses[0].len();
            let stride = values.len() / k;
            masses[0]
                .iter()
                .enumerate()
                .filter(|(_, p)| **p > 0.0)
                .map(|(i, p)| p * expect(&masses[1..], &values[i * stride..(i + 1) * stride]))
                .sum()
        }
    }
}

fn grid_nodes(axis: &[f64], dim: usize) -> Vec<Vec<f64>> {
    let k = axis.len();
    let total = k.pow(dim as u32);
    (0..total)
        .map(|mut idx| {
            let mut p = vec![0.0; dim];
            for d in (0..dim).rev() {
                p[d] = axis[idx % k];
                idx /= k;
            }
            p
        })
        .collect()
}

pub const ORACLE_MAX_SWEEPS: usize = 100_000;

/// Policy evaluation on a uniform grid of `resolution` points per state
/// coordinate over `[-4, 4]`. Transition probabilities are the Gaussian
/// masses of the grid cells, the outer cells absorbing the clipped tails.
pub fn tabular_q_oracle<P: Policy>(env: &MdpEnvSpec, policy: &P, resolution: usize, tol: f64) -> Result<TabularQ> {
    env.validate()?;
    if env.state_dim > 2 || env.action_dim > 2 {
        return Err(Error::InvalidParameter("grid oracle supports at most two state and action dimensions".into()));
    }
    if resolution < 2 || !(tol > 0.0) {
        return Err(Error::InvalidParameter("resolution must be at least 2 and tol positive".into()));
    }
    check_dim(env.state_dim, policy.state_dim())?;
    let axis: Vec<f64> = (0..resolution)
        .map(|i| -STATE_BOUND + 2.0 * STATE_BOUND * i as f64 / (resolution - 1) as f64)
        .collect();
    let nodes = grid_nodes(&axis, env.state_dim);
    let g = nodes.len();
    let rewards: Vec<f64> = nodes.iter().map(|s| env.reward(s, &policy.act(s))).collect();
    let mut q = TabularQ { env: env.clone(), axis, values: rewards.clone(), sweeps: Vec::new() };
    if env.gamma == 0.0 {
        return Ok(q);
    }
    // dense transition rows under the policy
    let rows: Vec<Vec<f64>> = par::map_slice(Execution::default(), &nodes, |s| {
        let mean = env.next_mean(s, &policy.act(s));
        let masses: Vec<Vec<f64>> = mean.iter().map(|m| cell_masses(&q.axis, *m, env.noise_std)).collect();
        let mut row = vec![0.0; g];
        for (j, node_row) in row.iter_mut().enumerate() {
            let mut idx = j;
            let mut p = 1.0;
            for d in (0..env.state_dim).rev() {
                p *= masses[d][idx % resolution];
                idx /= resolution;
            }
            *node_row = p;
        }
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= total);
        row
    });
    let mut v = rewards.clone();
    for _ in 0..ORACLE_MAX_SWEEPS {
        let next: Vec<f64> = rows
            .iter()
            .zip(&rewards)
            .map(|(row, r)| r + env.gamma * row.iter().zip(&v).map(|(p, x)| p * x).sum::<f64>())
            .collect();
        let change = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        q.sweeps.push(change);
        v = next;
        if change < tol {
            q.values = v;
            return Ok(q);
        }
    }
    Err(Error::NotConverged(ORACLE_MAX_SWEEPS))
}

/// Settings of the in-class reference search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceConfig {
    pub restarts: usize,
    /// Standard deviation of the random restart weights.
    pub scale: f64,
    pub polish_top: usize,
    pub polish_steps: usize,
    /// Evaluation states (bandit) or rollouts (MDP).
    pub eval_size: usize,
    pub horizon: usize,
    pub seed: u64,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self { restarts: 512, scale: 2.0, polish_top: 8, polish_steps: 200, eval_size: 10_000, horizon: 0, seed: 7 }
    }
}

impl ReferenceConfig {
    fn horizon_for(&self, gamma: f64) -> usize {
        self.horizon.max(min_horizon(gamma))
    }
}

/// True value of `policy` on the evaluation draws of `cfg`: the expected
/// reward averaged over fixed states (bandit) or a Monte Carlo value (MDP).
pub fn true_value<P: Policy>(env: &EnvSpec, policy: &P, cfg: &ReferenceConfig) -> Result<McValue> {
    let gamma = env.gamma();
    mc_policy_value(env, policy, gamma, cfg.horizon_for(gamma), cfg.eval_size, cfg.seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub value: f64,
    pub weights: Vec<f64>,
}

fn reference_cache() -> &'static Mutex<HashMap<String, Reference>> {
    static CACHE: OnceLock<Mutex<HashMap<String, Reference>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

fn bandit_objective(b: &BanditEnvSpec, policy: &ParamPolicy, states: &[Vec<f64>], grad: bool) -> (f64, Vec<f64>) {
    let n = states.len() as f64;
    let mut value = 0.0;
    let mut g = vec![0.0; policy.n_params()];
    for s in states {
        let a = policy.act(s);
        value += b.mean_reward(s, &a);
        if grad {
            let up: Vec<f64> = b.mean_reward_action_grad(s, &a).iter().map(|x| x / n).collect();
            policy.vjp(s, &up, &mut g);
        }
    }
    (value / n, g)
}

/// Best value over the policy class: random restarts followed by gradient
/// ascent (bandit) or finite-difference ascent with common random numbers
/// (MDP) from the best few. Results are cached per environment, class and
/// settings.
pub fn reference_value(env: &EnvSpec, template: &ParamPolicy, cfg: &ReferenceConfig) -> Result<Reference> {
    env.validate()?;
    let key = serde_json::to_string(&(env, template.feature_map(), template.action_box(), cfg))?;
    if let Some(hit) = reference_cache().lock().expect("reference cache").get(&key) {
        return Ok(hit.clone());
    }
    let p = template.n_params();
    let mut r = rng::seeded(rng::derive(cfg.seed, 0x4ef));
    let mut starts: Vec<Vec<f64>> = vec![vec![0.0; p]];
    for _ in 1..cfg.restarts.max(1) {
        starts.push(
            (0..p)
                .map(|_| {
                    let z: f64 = r.sample(StandardNormal);
                    cfg.scale * z
                })
                .collect(),
        );
    }
    let gamma = env.gamma();
    let horizon = cfg.horizon_for(gamma);
    let states = match env {
        EnvSpec::Bandit(_) => env.init_states(cfg.eval_size, cfg.seed),
        EnvSpec::Mdp(_) => Vec::new(),
    };
    // the random search uses fewer rollouts in the MDP case
    let search_rollouts = (cfg.eval_size / 8).max(64);
    let objective = |w: &[f64], rollouts: usize| -> Result<f64> {
        let pol = template.clone().with_weights(w.to_vec())?;
        match env {
            EnvSpec::Bandit(b) => Ok(bandit_objective(b, &pol, &states, false).0),
            EnvSpec::Mdp(_) => {
                Ok(mc_policy_value_with(env, &pol, gamma, horizon, rollouts, cfg.seed, Execution::Sequential)?.value)
            }
        }
    };
    let scores = par::map_slice(Execution::default(), &starts, |w| objective(w, search_rollouts));
    let mut ranked: Vec<(f64, usize)> = Vec::with_capacity(starts.len());
    for (i, s) in scores.into_iter().enumerate() {
        ranked.push((s?, i));
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    ranked.truncate(cfg.polish_top.max(1));

    let polished = par::map_slice(Execution::default(), &ranked, |(_, idx)| -> Result<(f64, Vec<f64>)> {
        let mut w = starts[*idx].clone();
        let mut step = 1.0;
        match env {
            EnvSpec::Bandit(b) => {
                let mut pol = template.clone().with_weights(w.clone())?;
                let (mut val, mut g) = bandit_objective(b, &pol, &states, true);
                for _ in 0..cfg.polish_steps {
                    let gg: f64 = g.iter().map(|x| x * x).sum();
                    if gg < 1e-20 {
                        break;
                    }
                    let mut accepted = false;
                    let mut t = step * 2.0;
                    for _ in 0..30 {
                        let trial: Vec<f64> = w.iter().zip(&g).map(|(x, d)| x + t * d).collect();
                        let tp = template.clone().with_weights(trial.clone())?;
                        let (tv, tg) = bandit_objective(b, &tp, &states, true);
                        if tv >= val + 1e-4 * t * gg {
                            w = trial;
                            pol = tp;
                            val = tv;
                            g = tg;
                            step = t;
                            accepted = true;
                            break;
                        }
                        t *= 0.5;
                    }
                    if !accepted {
                        break;
                    }
                }
                let _ = pol;
                Ok((val, w))
            }
            EnvSpec::Mdp(_) => {
                let rollouts = cfg.eval_size;
                let mut val = objective(&w, rollouts)?;
                let h = 1e-3;
                for _ in 0..cfg.polish_steps.min(50) {
                    let mut g = vec![0.0; p];
                    for j in 0..p {
                        let mut up = w.clone();
                        up[j] += h;
                        let mut dn = w.clone();
                        dn[j] -= h;
                        g[j] = (objective(&up, rollouts)? - objective(&dn, rollouts)?) / (2.0 * h);
                    }
                    let gg: f64 = g.iter().map(|x| x * x).sum();
                    if gg < 1e-16 {
                        break;
                    }
                    let mut t = step * 2.0;
                    let mut accepted = false;
                    for _ in 0..20 {
                        let trial: Vec<f64> = w.iter().zip(&g).map(|(x, d)| x + t * d).collect();
                        let tv = objective(&trial, rollouts)?;
                        if tv > val {
                            w = trial;
                            val = tv;
                            step = t;
                            accepted = true;
                            break;
                        }
                        t *= 0.5;
                    }
                    if !accepted {
                        break;
                    }
                }
                Ok((val, w))
            }
        }
    });
    let mut best: Option<(f64, Vec<f64>)> = None;
    for res in polished {
        let (v, w) = res?;
        if best.as_ref().is_none_or(|b| v > b.0) {
            best = Some((v, w));
        }
    }
    let (_, weights) = best.expect("at least one restart");
    // report the value on the same draws used by `true_value`
    let pol = template.clone().with_weights(weights.clone())?;
    let value = true_value(env, &pol, cfg)?.value;
    let reference = Reference { value, weights };
    reference_cache().lock().expect("reference cache").insert(key, reference.clone());
    Ok(reference)
}

/// `reference - value(policy)`, clamped at zero.
pub fn regret<P: Policy>(env: &EnvSpec, policy: &P, reference: f64, cfg: &ReferenceConfig) -> Result<f64> {
    let v = true_value(env, policy, cfg)?;
    let raw = reference - v.value;
    if raw < 0.0 {
        log::debug!("negative raw regret {raw:.3e} (stderr {:.3e}) clamped to zero", v.stderr);
    }
    Ok(raw.max(0.0))
}

/// Acceptance model of the synthetic loan data: the probability of
/// acceptance is `base + fico_coef z_fico + term_coef z_term - price_coef p`
/// clipped to `[0, 1]`, with `z` the population z-scores and `p` the price in
/// thousands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoanDemandSpec {
    pub base: f64,
    pub fico_coef: f64,
    pub term_coef: f64,
    pub price_coef: f64,
    /// Logged prices in thousands are `N(mean, std^2)` floored at 0.05.
    pub price_mean: f64,
    pub price_std: f64,
    /// Share of records given an out-of-range price.
    pub outlier_rate: f64,
}

impl Default for LoanDemandSpec {
    fn default() -> Self {
        Self {
            base: 0.7,
            fico_coef: -0.15,
            term_coef: 0.2,
            price_coef: 0.25,
            price_mean: 1.5,
            price_std: 0.6,
            outlier_rate: 0.005,
        }
    }
}

const TERMS: [u32; 4] = [36, 48, 60, 72];

/// Synthetic loan applications with the given acceptance model.
pub fn generate_loan_records(n: usize, seed: u64, spec: &LoanDemandSpec) -> Result<Vec<LoanRecord>> {
    let fico_mean = 725.0;
    let fico_sd = 250.0 / 12f64.sqrt();
    let term_mean = 54.0;
    let term_sd = (TERMS.iter().map(|t| (*t as f64 - term_mean).powi(2)).sum::<f64>() / 4.0).sqrt();
    let records = par::map_indexed(Execution::default(), n, |i| -> Result<LoanRecord> {
        let mut r = rng::stream(seed, i as u64);
        let fico = r.random_range(600.0..850.0);
        let amount = r.random_range(5_000.0..50_000.0);
        let prime = r.random_range(0.002..0.004);
        let competitor = r.random_range(0.003..0.008);
        let term = TERMS[r.random_range(0..TERMS.len())];
        let outlier = r.random::<f64>() < spec.outlier_rate;
        let z: f64 = r.sample(StandardNormal);
        let price_k = if outlier {
            r.random_range(15.0..30.0)
        } else {
            (spec.price_mean + spec.price_std * z).max(0.05)
        };
        let price = 1000.0 * price_k;
        let annuity = compute_loan_price(1.0, term, prime, 0.0)?;
        let payment = (amount + price) / annuity;
        let zf = (fico - fico_mean) / fico_sd;
        let zt = (term as f64 - term_mean) / term_sd;
        let prob = (spec.base + spec.fico_coef * zf + spec.term_coef * zt - spec.price_coef * price_k).clamp(0.0, 1.0);
        let accepted = r.random::<f64>() < prob;
        Ok(LoanRecord {
            fico,
            loan_amount_approved: amount,
            prime_rate: prime,
            competitor_rate: competitor,
            term,
            monthly_payment: payment,
            accepted,
        })
    });
    records.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funcapprox::{ConstantPolicy, FeatureKind};

    fn linear_policy(weights: Vec<f64>, lo: f64, hi: f64, state_dim: usize) -> ParamPolicy {
        ParamPolicy::new(FeatureKind::Polynomial { degree: 1 }, state_dim, ActionBox::new(vec![lo], vec![hi]).unwrap())
            .unwrap()
            .with_weights(weights)
            .unwrap()
    }

    fn constant_reward_mdp(c: f64) -> MdpEnvSpec {
        MdpEnvSpec {
            reward: QuadraticReward { base: c, target: vec![0.0], state_weight: 0.0, action_weight: 0.0 },
            r_max: c.abs().max(1.0),
            ..Default::default()
        }
    }

    #[test]
    fn generation_is_reproducible() {
        let b = BanditEnvSpec::default();
        assert_eq!(b.generate(300, 4).unwrap(), b.generate(300, 4).unwrap());
        assert_ne!(b.generate(300, 4).unwrap(), b.generate(300, 5).unwrap());
        let m = MdpEnvSpec::default();
        assert_eq!(m.generate(5, 7, 1).unwrap(), m.generate(5, 7, 1).unwrap());
        let d = m.generate(5, 7, 1).unwrap();
        assert_eq!((d.n_trajectories(), d.horizon(), d.len()), (5, Some(7), 35));
        assert!(d.is_contiguous());
        assert!(b.generate(0, 1).is_err());
        assert!(m.generate(1, 0, 1).is_err());
    }

    #[test]
    fn noiseless_bandit_rewards_are_exact() {
        let b = BanditEnvSpec { noise_std: 0.0, jump: true, ..Default::default() };
        for row in b.generate(500, 2).unwrap().rows() {
            assert_eq!(row.reward, b.mean_reward(&row.state, &row.action));
        }
        assert_eq!(b.reward_bound(), 1.5);
    }

    #[test]
    fn bandit_mean_reward_matches_quadrature() {
        let b = BanditEnvSpec::default();
        let data = b.generate(20_000, 11).unwrap();
        let rs: Vec<f64> = data.rows().iter().map(|r| r.reward).collect();
        let emp = mean_and_se(&rs);
        // midpoint rule over two state coordinates and the action
        let k = 60;
        let nodes: Vec<(f64, f64)> = (0..k)
            .map(|i| {
                let z = -6.0 + 12.0 * (i as f64 + 0.5) / k as f64;
                (z, normal_pdf(z) * 12.0 / k as f64)
            })
            .collect();
        let mut analytic = 0.0;
        for (z1, w1) in &nodes {
            for (z2, w2) in &nodes {
                let s = [z1 * b.state_std, z2 * b.state_std];
                let m = b.behavior.mean(&s)[0];
                for (za, wa) in &nodes {
                    analytic += w1 * w2 * wa * b.mean_reward(&s, &[m + b.behavior.std * za]);
                }
            }
        }
        assert!((emp.value - analytic).abs() <= 3.0 * emp.stderr, "{} vs {analytic}", emp.value);
    }

    #[test]
    fn disjoint_support_keeps_behavior_out_of_the_target_box() {
        let b = BanditEnvSpec {
            mode: SingularityMode::DisjointSupport,
            target_box: Some(ActionBox::new(vec![0.0], vec![0.5]).unwrap()),
            ..Default::default()
        };
        let data = b.generate(2000, 3).unwrap();
        assert!(data.rows().iter().all(|r| !(0.0..=0.5).contains(&r.action[0])));
        assert_eq!(b.behavior_density(&[0.0, 0.0], &[0.2]), 0.0);
        assert!(b.behavior_density(&[0.0, 0.0], &[-0.2]) > b.behavior.density(&[0.0, 0.0], &[-0.2]));
        let no_box = BanditEnvSpec { target_box: None, ..b };
        assert!(no_box.validate().is_err());
    }

    #[test]
    fn behavior_density_is_positive_on_the_box() {
        let b = BanditEnvSpec { mode: SingularityMode::None, ..Default::default() };
        for a in [-2.0, -1.0, 0.0, 1.0, 2.0] {
            assert!(b.behavior_density(&[3.0, -3.0], &[a]) > 0.0);
        }
    }

    #[test]
    fn unstable_dynamics_are_rejected() {
        let m = MdpEnvSpec { a: vec![vec![1.05]], ..Default::default() };
        assert!(m.validate().is_err());
        let m = MdpEnvSpec { state_dim: 2, a: vec![vec![0.5, 0.9], vec![0.0, 0.5]], ..Default::default() };
        assert!(m.validate().is_err());
    }

    #[test]
    fn constant_reward_value_is_the_truncated_geometric_sum() {
        let m = constant_reward_mdp(0.7);
        let env = EnvSpec::Mdp(m.clone());
        let pol = ConstantPolicy { action: vec![0.3], state_dim: 1 };
        let h = 40;
        let v = mc_policy_value(&env, &pol, m.gamma, h, 50, 1).unwrap();
        let expect = 0.7 * (1.0 - m.gamma.powi(h as i32 + 1));
        assert!((v.value - expect).abs() < 1e-12);
        assert!(v.stderr < 1e-12);
        assert!(mc_policy_value(&env, &pol, m.gamma, 5, 50, 1).is_err());
    }

    #[test]
    fn zero_discount_value_is_the_mean_immediate_reward() {
        let m = MdpEnvSpec::default();
        let pol = linear_policy(vec![0.2, -0.4], -2.0, 2.0, 1);
        let v = mc_policy_value(&EnvSpec::Mdp(m.clone()), &pol, 0.0, 0, 400, 9).unwrap();
        let direct: f64 = (0..400)
            .map(|i| {
                let s = m.sample_init(&mut rng::stream(9, i));
                m.reward(&s, &pol.act(&s))
            })
            .sum::<f64>()
            / 400.0;
        assert!((v.value - direct).abs() < 1e-14);
    }

    #[test]
    fn parallel_and_serial_rollouts_agree() {
        let env = EnvSpec::Mdp(MdpEnvSpec::default());
        let pol = linear_policy(vec![0.1, 0.3], -2.0, 2.0, 1);
        let a = mc_policy_value_with(&env, &pol, 0.8, 40, 300, 2, Execution::Sequential).unwrap();
        let b = mc_policy_value_with(&env, &pol, 0.8, 40, 300, 2, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn oracle_trivial_cases() {
        let pol = linear_policy(vec![0.2, -0.4], -2.0, 2.0, 1);
        let m0 = MdpEnvSpec { gamma: 0.0, ..Default::default() };
        let q = tabular_q_oracle(&m0, &pol, 41, 1e-10).unwrap();
        for (s, v) in q.grid_points().iter().zip(&q.values) {
            assert_eq!(*v, m0.reward(s, &pol.act(s)));
        }
        assert_eq!(q.value(&[0.37], &[1.1]), m0.reward(&[0.37], &[1.1]));

        let mc = constant_reward_mdp(0.6);
        let q = tabular_q_oracle(&mc, &pol, 41, 1e-10).unwrap();
        let target = 0.6 / (1.0 - mc.gamma);
        assert!(q.values.iter().all(|v| (v - target).abs() < 1e-8));
    }

    #[test]
    fn oracle_sweeps_contract() {
        let m = MdpEnvSpec::default();
        let pol = linear_policy(vec![0.1, -0.6], -2.0, 2.0, 1);
        let q = tabular_q_oracle(&m, &pol, 81, 1e-10).unwrap();
        assert!(q.sweeps.len() > 2);
        for (i, w) in q.sweeps.windows(2).enumerate() {
            assert!(w[1] <= m.gamma * w[0] + 1e-12, "sweep {i}");
        }
        let two_d = MdpEnvSpec { state_dim: 3, ..Default::default() };
        assert!(tabular_q_oracle(&two_d, &linear_policy(vec![0.0; 4], -1.0, 1.0, 3), 5, 1e-6).is_err());
    }

    #[test]
    fn oracle_value_matches_rollouts() {
        let m = MdpEnvSpec::default();
        let pol = linear_policy(vec![0.3, -0.5], -2.0, 2.0, 1);
        let q = tabular_q_oracle(&m, &pol, 161, 1e-10).unwrap();
        // initial states are N(0, 1) clipped at the state bound
        let k = 4000;
        let width = 2.0 * STATE_BOUND / k as f64;
        let mut oracle = 0.0;
        for i in 0..k {
            let s = -STATE_BOUND + width * (i as f64 + 0.5);
            oracle += normal_pdf(s / m.init_std) / m.init_std * width * q.state_value(&pol, &[s]);
        }
        let tail = normal_cdf(-STATE_BOUND / m.init_std);
        oracle += tail * (q.state_value(&pol, &[-STATE_BOUND]) + q.state_value(&pol, &[STATE_BOUND]));
        oracle *= 1.0 - m.gamma;
        let mc = mc_policy_value(&EnvSpec::Mdp(m.clone()), &pol, m.gamma, 120, 20_000, 3).unwrap();
        assert!((mc.value - oracle).abs() <= 3.0 * mc.stderr, "{} +- {} vs {oracle}", mc.value, mc.stderr);
    }

    #[test]
    fn constant_policies_have_the_analytic_value() {
        let b = BanditEnvSpec { peak_slope: vec![vec![0.1, 0.0]], ..Default::default() };
        let env = EnvSpec::Bandit(b);
        let cfg = ReferenceConfig { eval_size: 4000, ..Default::default() };
        for a in [-0.5, 0.2, 0.9] {
            let v = true_value(&env, &ConstantPolicy { action: vec![a], state_dim: 2 }, &cfg).unwrap();
            // E[1 - (a - 0.2 - 0.1 s1)^2] with s1 ~ N(0, 1)
            let analytic = 1.0 - (a - 0.2f64).powi(2) - 0.01;
            assert!((v.value - analytic).abs() <= 3.0 * v.stderr + 1e-12, "a={a}: {} vs {analytic}", v.value);
        }
    }

    #[test]
    fn reference_maximizer_has_zero_regret() {
        let b = BanditEnvSpec { peak_slope: vec![vec![0.1, 0.0]], ..Default::default() };
        let env = EnvSpec::Bandit(b);
        let cfg = ReferenceConfig { restarts: 32, eval_size: 2000, ..Default::default() };
        let template = linear_policy(vec![0.0; 3], -2.0, 2.0, 2);
        let reference = reference_value(&env, &template, &cfg).unwrap();
        assert!(reference.value > 0.98 && reference.value <= 1.0);
        let best = template.clone().with_weights(reference.weights.clone()).unwrap();
        assert!(regret(&env, &best, reference.value, &cfg).unwrap() < 1e-12);
        let worst = ConstantPolicy { action: vec![-2.0], state_dim: 2 };
        let r = regret(&env, &worst, reference.value, &cfg).unwrap();
        let v = true_value(&env, &worst, &cfg).unwrap();
        assert!((r - (reference.value - v.value)).abs() < 1e-12);
        assert!(r > 1.9);
        // cached on the second call
        assert_eq!(reference_value(&env, &template, &cfg).unwrap(), reference);
    }

    #[test]
    fn loan_records_are_reproducible_and_mostly_usable() {
        let spec = LoanDemandSpec::default();
        let a = generate_loan_records(3000, 5, &spec).unwrap();
        assert_eq!(a, generate_loan_records(3000, 5, &spec).unwrap());
        let built = crate::data::build_pricing_dataset(&a).unwrap();
        assert!(built.retained_fraction() > 0.98 && built.retained_fraction() < 1.0);
        let accept = a.iter().filter(|r| r.accepted).count() as f64 / a.len() as f64;
        assert!(accept > 0.1 && accept < 0.9);
        for r in a.iter().take(50) {
            r.validate().unwrap();
        }
    }
}
