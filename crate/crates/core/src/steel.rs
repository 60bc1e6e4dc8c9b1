//! Uncertainty sets, the Lagrangian, and the primal-dual policy optimizer.
//!
//! The inner problem is a minimization over Q-function weights; the outer
//! problem maximizes over policy weights and nonnegative dual variables. Both
//! constraints are functions of the residual vector `Y` alone, so every
//! gradient goes through `dL/dY` and then the chain rule into the Q and
//! policy parameters.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Transition, TransitionDataset};
use crate::error::{Error, Result};
use crate::funcapprox::{ActionBox, FeatureKind, ParamPolicy, ParamQ, Policy, QForm, QFunction};
use crate::kernel::{self, KernelSpec};
use crate::residual::{self, check_discount, KernelContext};
use crate::rng;

/// Window for the relative-change stopping rule.
pub const CONVERGENCE_WINDOW: usize = 10;

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;
const PSI_BACKTRACKS: usize = 20;

/// Default radii `kappa1 log(n)/sqrt(n)` and `kappa2 (log(n)/sqrt(n))^(1/3)`.
pub fn default_radii(n: usize, kappa1: f64, kappa2: f64) -> (f64, f64) {
    let n = n.max(2) as f64;
    let base = n.ln() / n.sqrt();
    (kappa1 * base, kappa2 * base.cbrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SteelConfig {
    pub gamma: f64,
    /// Ridge parameter of the residual regression (per-sample scaling).
    pub zeta: f64,
    /// Radius of the weighted-residual set; `None` uses [`default_radii`].
    pub eps1: Option<f64>,
    /// Radius of the RKHS-norm set; `None` uses [`default_radii`].
    pub eps2: Option<f64>,
    pub kappa1: f64,
    pub kappa2: f64,
    /// Radius of the RKHS ball of weight functions.
    pub c: f64,
    pub lr_q: f64,
    pub lr_pi: f64,
    pub lr_rho1: f64,
    pub lr_rho2: f64,
    pub inner_q_steps: usize,
    pub max_outer_iters: usize,
    pub tol: f64,
    pub rho_max: f64,
    pub nystrom_cap: usize,
    pub seed: u64,
    /// Draws from the reference distribution of initial states. Empty means
    /// the first state of every trajectory.
    pub init_states: Vec<Vec<f64>>,
    pub q_features: FeatureKind,
    pub q_form: QForm,
    /// Bound on `|Q|`; `None` uses `R_max / (1 - gamma)`.
    pub q_clip: Option<f64>,
    pub policy_features: FeatureKind,
    pub action_box: ActionBox,
    /// Kernel bandwidth; `None` uses the median heuristic.
    pub bandwidth: Option<f64>,
    /// Run a pre-phase with the first dual pinned at zero and set `c` from
    /// the MMD between the data and the resulting policy's visitation.
    pub calibrate_c: bool,
}

impl Default for SteelConfig {
    fn default() -> Self {
        Self {
            gamma: 0.0,
            zeta: 1e-3,
            eps1: None,
            eps2: None,
            kappa1: 1.0,
            kappa2: 1.0,
            c: 1.0,
            lr_q: 1.0,
            lr_pi: 0.5,
            lr_rho1: 1.0,
            lr_rho2: 1.0,
            inner_q_steps: 5,
            max_outer_iters: 300,
            tol: 1e-5,
            rho_max: 1e4,
            nystrom_cap: 2000,
            seed: 0,
            init_states: Vec::new(),
            q_features: FeatureKind::Polynomial { degree: 2 },
            q_form: QForm::Linear,
            q_clip: None,
            policy_features: FeatureKind::Polynomial { degree: 1 },
            action_box: ActionBox { lo: vec![-1.0], hi: vec![1.0] },
            bandwidth: None,
            calibrate_c: false,
        }
    }
}

impl SteelConfig {
    pub fn validate(&self) -> Result<()> {
        check_discount(self.gamma)?;
        let positive = [
            ("zeta", self.zeta),
            ("c", self.c),
            ("lr_q", self.lr_q),
            ("rho_max", self.rho_max),
            ("kappa1", self.kappa1),
            ("kappa2", self.kappa2),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        let nonneg = [("lr_pi", self.lr_pi), ("lr_rho1", self.lr_rho1), ("lr_rho2", self.lr_rho2), ("tol", self.tol)];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be nonnegative, got {v}")));
            }
        }
        for (name, eps) in [("eps1", self.eps1), ("eps2", self.eps2)] {
            if let Some(e) = eps {
                if !(e > 0.0) {
                    return Err(Error::InvalidParameter(format!("{name} must be positive, got {e}")));
                }
            }
        }
        if self.max_outer_iters == 0 || self.nystrom_cap == 0 {
            return Err(Error::InvalidParameter("iteration budget and cap must be positive".into()));
        }
        ActionBox::new(self.action_box.lo.clone(), self.action_box.hi.clone())?;
        Ok(())
    }

    /// Radii used for a statistic computed on `n` transitions.
    pub fn radii(&self, n: usize) -> (f64, f64) {
        let (d1, d2) = default_radii(n, self.kappa1, self.kappa2);
        (self.eps1.unwrap_or(d1), self.eps2.unwrap_or(d2))
    }
}

/// Nonnegative Lagrange multipliers, one per constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualVars {
    pub values: Vec<f64>,
}

impl DualVars {
    pub fn zeros(k: usize) -> Self {
        Self { values: vec![0.0; k] }
    }

    pub fn rho1(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn rho2(&self) -> f64 {
        self.values.get(1).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub lagrangian: f64,
    pub objective: f64,
    /// Constraint statistics before subtracting their radii.
    pub constraints: Vec<f64>,
    pub duals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteelResult {
    pub policy: ParamPolicy,
    pub q: ParamQ,
    pub duals: DualVars,
    pub trace: Vec<TraceEntry>,
    /// Lagrangian value at the returned iterate.
    pub pessimistic_value: f64,
    /// Outer iteration the returned iterate comes from.
    pub best_iteration: usize,
    pub converged: bool,
    /// Radii of the constraints as used by the optimizer (unsquared).
    pub radii: Vec<f64>,
    pub c: f64,
    pub bandwidth: f64,
    /// Transitions entering the kernel computations.
    pub n_used: usize,
}

impl SteelResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Coefficients of `dc/dY = k KY + m MY + w w + one 1`.
#[derive(Debug, Clone, Copy, Default)]
struct YCoef {
    k: f64,
    m: f64,
    w: f64,
    one: f64,
}

/// A constraint `stat(Y) - radius <= 0` on the residual vector.
#[derive(Debug, Clone)]
pub(crate) enum Constraint {
    /// `(c/n)^2 Y^T K Y <= eps^2`.
    WBallSq { c: f64, eps: f64 },
    /// `Y^T M Y <= eps^2`.
    RkhsSq { eps: f64 },
    /// `l1 sum_i w_i Y_i + l2 mean(Y) + l2 delta sqrt(Y^T M Y) <= eps0`.
    Combined { lambda1: f64, weights: DVector<f64>, lambda2: f64, delta: f64, eps0: f64 },
}

impl Constraint {
    fn radius_term(&self) -> f64 {
        match self {
            Constraint::WBallSq { eps, .. } | Constraint::RkhsSq { eps } => eps * eps,
            Constraint::Combined { eps0, .. } => *eps0,
        }
    }

    fn radius(&self) -> f64 {
        match self {
            Constraint::WBallSq { eps, .. } | Constraint::RkhsSq { eps } => *eps,
            Constraint::Combined { eps0, .. } => *eps0,
        }
    }

    pub(crate) fn stat(&self, y: &DVector<f64>, yky: f64, ymy: f64) -> f64 {
        let n = y.len() as f64;
        match self {
            Constraint::WBallSq { c, .. } => c * c / (n * n) * yky,
            Constraint::RkhsSq { .. } => ymy,
            Constraint::Combined { lambda1, weights, lambda2, delta, .. } => {
                lambda1 * weights.dot(y) + lambda2 * y.mean() + lambda2 * delta * ymy.sqrt()
            }
        }
    }

    fn coef(&self, n: usize, ymy: f64) -> YCoef {
        let n = n as f64;
        match self {
            Constraint::WBallSq { c, .. } => YCoef { k: 2.0 * c * c / (n * n), ..Default::default() },
            Constraint::RkhsSq { .. } => YCoef { m: 2.0, ..Default::default() },
            Constraint::Combined { lambda1, lambda2, delta, .. } => YCoef {
                k: 0.0,
                m: if ymy > 0.0 { lambda2 * delta / ymy.sqrt() } else { 0.0 },
                w: *lambda1,
                one: lambda2 / n,
            },
        }
    }

    fn weights(&self) -> Option<&DVector<f64>> {
        match self {
            Constraint::Combined { weights, .. } => Some(weights),
            _ => None,
        }
    }
}

/// Exact quadratic forms for `Y = r - X theta` (zero discount, no clipping
/// at data points).
#[derive(Debug)]
struct QuadForms {
    xkx: DMatrix<f64>,
    xkr: DVector<f64>,
    rkr: f64,
    xmx: DMatrix<f64>,
    xmr: DVector<f64>,
    rmr: f64,
    x_ones: DVector<f64>,
}

/// Policy-dependent quantities, recomputed after every policy step.
struct PolicyCache {
    init_actions: Vec<Vec<f64>>,
    x0: DMatrix<f64>,
    next_actions: Vec<Vec<f64>>,
    x_next: DMatrix<f64>,
}

/// Everything evaluated at one `theta`.
struct Point {
    score0: DVector<f64>,
    score_cur: DVector<f64>,
    score_next: DVector<f64>,
    y: DVector<f64>,
    dense: Option<(DVector<f64>, DVector<f64>)>,
    ymy: f64,
    objective: f64,
    stats: Vec<f64>,
}

/// Value and gradients of the Lagrangian.
#[derive(Debug, Clone)]
pub struct LagrangianEval {
    pub value: f64,
    pub objective: f64,
    /// Constraint statistics before subtracting their radii.
    pub constraints: Vec<f64>,
    pub grad_theta: Vec<f64>,
    pub grad_psi: Vec<f64>,
    pub grad_rho: Vec<f64>,
}

/// Data, kernel context and function-class templates for one optimization.
pub struct SteelProblem {
    transitions: Vec<Transition>,
    n_total: usize,
    ctx: KernelContext,
    rewards: DVector<f64>,
    gamma: f64,
    init_states: Vec<Vec<f64>>,
    q_template: ParamQ,
    policy_template: ParamPolicy,
    x_cur: DMatrix<f64>,
    /// Inverse of the regularized feature second-moment matrix; scales the
    /// descent direction of the Q weights.
    precond: DMatrix<f64>,
    quad: Option<QuadForms>,
    constraints: Vec<Constraint>,
    c: f64,
}

/// Whether a score lies in the unclipped region. The boundary counts as
/// inside; iterates are retracted onto it, and the derivative from inside is
/// the one the optimizer needs.
fn inside(score: f64, clip: f64) -> bool {
    score.abs() <= clip * (1.0 + 1e-12)
}

fn design_matrix(q: &ParamQ, pairs: impl Iterator<Item = (Vec<f64>, Vec<f64>)>, rows: usize) -> DMatrix<f64> {
    let p = q.n_params();
    let mut x = DMatrix::zeros(rows, p);
    for (i, (s, a)) in pairs.enumerate() {
        let row = q.design_row(&s, &a);
        for (j, v) in row.into_iter().enumerate() {
            x[(i, j)] = v;
        }
    }
    x
}

fn feature_preconditioner(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = x.nrows().max(1) as f64;
    let mut cov = x.tr_mul(x) / n;
    let p = cov.nrows();
    let scale = (cov.trace() / p as f64).max(f64::MIN_POSITIVE);
    for j in 0..p {
        cov[(j, j)] += 1e-8 * scale;
    }
    Ok(crate::linalg::SpdFactor::new(&cov)?.inverse())
}

/// Seeded uniform subsample of at most `cap` transitions, kept in dataset
/// order.
pub fn capped_transitions(dataset: &TransitionDataset, cap: usize, seed: u64) -> Vec<Transition> {
    let all: Vec<&Transition> = dataset.transitions().collect();
    if all.len() <= cap {
        return all.into_iter().cloned().collect();
    }
    let mut idx: Vec<usize> = (0..all.len()).collect();
    idx.shuffle(&mut rng::seeded(rng::derive(seed, 0x5eed_cafe)));
    idx.truncate(cap);
    idx.sort_unstable();
    idx.into_iter().map(|i| all[i].clone()).collect()
}

impl SteelProblem {
    pub fn new(dataset: &TransitionDataset, cfg: &SteelConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.action_box.dim() != dataset.action_dim() {
            return Err(Error::DimensionMismatch { expected: dataset.action_dim(), got: cfg.action_box.dim() });
        }
        let transitions = capped_transitions(dataset, cfg.nystrom_cap, cfg.seed);
        let n = transitions.len();
        let points = residual::state_action_points(&transitions);
        let bandwidth = match cfg.bandwidth {
            Some(b) => b,
            None => kernel::median_heuristic(&points, cfg.seed).or_else(|e| match e {
                // a single distinct point: any bandwidth gives the same Gram matrix
                Error::Degenerate(_) => Ok(1.0),
                other => Err(other),
            })?,
        };
        let ctx = KernelContext::new(&points, KernelSpec::gaussian(bandwidth)?, cfg.zeta)?;
        let rewards = DVector::from_iterator(n, transitions.iter().map(|t| t.reward));
        let clip = cfg.q_clip.unwrap_or(dataset.reward_bound() / (1.0 - cfg.gamma));
        let q_template = ParamQ::new(
            cfg.q_features.clone(),
            dataset.state_dim(),
            dataset.action_dim(),
            clip,
            cfg.q_form,
        )?;
        let policy_template =
            ParamPolicy::new(cfg.policy_features.clone(), dataset.state_dim(), cfg.action_box.clone())?;
        let init_states = if cfg.init_states.is_empty() {
            dataset.trajectories().iter().map(|t| t[0].state.clone()).collect()
        } else {
            cfg.init_states.clone()
        };
        if init_states.is_empty() {
            return Err(Error::Empty("initial state sample".into()));
        }
        for s in &init_states {
            crate::error::check_dim(dataset.state_dim(), s.len())?;
        }
        let x_cur = design_matrix(
            &q_template,
            transitions.iter().map(|t| (t.state.clone(), t.action.clone())),
            n,
        );
        let (eps1, eps2) = cfg.radii(n);
        let constraints = vec![Constraint::WBallSq { c: cfg.c, eps: eps1 }, Constraint::RkhsSq { eps: eps2 }];
        let mut problem = Self {
            transitions,
            n_total: dataset.len(),
            ctx,
            rewards,
            gamma: cfg.gamma,
            init_states,
            q_template,
            policy_template,
            precond: feature_preconditioner(&x_cur)?,
            x_cur,
            quad: None,
            constraints,
            c: cfg.c,
        };
        if cfg.gamma == 0.0 {
            problem.quad = Some(problem.quad_forms());
        }
        Ok(problem)
    }

    fn quad_forms(&self) -> QuadForms {
        let k = &self.ctx.gram().entries;
        let m = self.ctx.shrinkage();
        let x = &self.x_cur;
        let r = &self.rewards;
        let kx = k * x;
        let mx = m * x;
        QuadForms {
            xkx: x.tr_mul(&kx),
            xkr: kx.tr_mul(r),
            rkr: r.dot(&(k * r)),
            xmx: x.tr_mul(&mx),
            xmr: mx.tr_mul(r),
            rmr: r.dot(&(m * r)),
            x_ones: x.row_sum().transpose(),
        }
    }

    pub fn n_used(&self) -> usize {
        self.transitions.len()
    }

    pub fn n_total(&self) -> usize {
        self.n_total
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn context(&self) -> &KernelContext {
        &self.ctx
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn init_states(&self) -> &[Vec<f64>] {
        &self.init_states
    }

    pub fn q_template(&self) -> &ParamQ {
        &self.q_template
    }

    pub fn policy_template(&self) -> &ParamPolicy {
        &self.policy_template
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn radii(&self) -> Vec<f64> {
        self.constraints.iter().map(Constraint::radius).collect()
    }

    pub(crate) fn set_constraints(&mut self, constraints: Vec<Constraint>) {
        self.constraints = constraints;
    }

    /// Reset the radii of the two default constraints.
    pub(crate) fn set_radii(&mut self, (eps1, eps2): (f64, f64)) {
        self.constraints = vec![Constraint::WBallSq { c: self.c, eps: eps1 }, Constraint::RkhsSq { eps: eps2 }];
    }

    /// Replace the W-ball radius `C` of the first constraint.
    pub fn set_c(&mut self, c: f64) {
        self.c = c;
        for con in &mut self.constraints {
            if let Constraint::WBallSq { c: cc, .. } = con {
                *cc = c;
            }
        }
    }

    pub fn n_constraints(&self) -> usize {
        self.constraints.len()
    }

    fn policy_cache(&self, policy: &ParamPolicy) -> PolicyCache {
        let init_actions: Vec<Vec<f64>> = self.init_states.iter().map(|s| policy.act(s)).collect();
        let x0 = design_matrix(
            &self.q_template,
            self.init_states.iter().cloned().zip(init_actions.iter().cloned()),
            self.init_states.len(),
        );
        let (next_actions, x_next) = if self.gamma > 0.0 {
            let acts: Vec<Vec<f64>> = self.transitions.iter().map(|t| policy.act(&t.next_state)).collect();
            let x = design_matrix(
                &self.q_template,
                self.transitions.iter().map(|t| t.next_state.clone()).zip(acts.iter().cloned()),
                self.transitions.len(),
            );
            (acts, x)
        } else {
            (Vec::new(), DMatrix::zeros(0, self.q_template.n_params()))
        };
        PolicyCache { init_actions, x0, next_actions, x_next }
    }

    fn clip(&self) -> f64 {
        self.q_template.clip_bound()
    }

    fn evaluate(&self, theta: &DVector<f64>, cache: &PolicyCache) -> Point {
        let c = self.clip();
        let clip = |v: f64| v.clamp(-c, c);
        let score0 = &cache.x0 * theta;
        let score_cur = &self.x_cur * theta;
        let objective = (1.0 - self.gamma) * score0.iter().map(|v| clip(*v)).sum::<f64>() / score0.len() as f64;
        let (score_next, y) = if self.gamma > 0.0 {
            let sn = &cache.x_next * theta;
            let y = DVector::from_fn(self.rewards.len(), |i, _| {
                self.rewards[i] + self.gamma * clip(sn[i]) - clip(score_cur[i])
            });
            (sn, y)
        } else {
            let y = DVector::from_fn(self.rewards.len(), |i, _| self.rewards[i] - clip(score_cur[i]));
            (DVector::zeros(0), y)
        };
        let unclipped = score_cur.iter().all(|v| inside(*v, c));
        let (dense, yky, ymy) = match (&self.quad, unclipped) {
            (Some(qf), true) => {
                let yky = qf.rkr - 2.0 * theta.dot(&qf.xkr) + theta.dot(&(&qf.xkx * theta));
                let ymy = qf.rmr - 2.0 * theta.dot(&qf.xmr) + theta.dot(&(&qf.xmx * theta));
                (None, yky.max(0.0), ymy.max(0.0))
            }
            _ => {
                let ky = self.ctx.k_apply(&y);
                let my = self.ctx.shrinkage() * &y;
                let yky = y.dot(&ky).max(0.0);
                let ymy = y.dot(&my).max(0.0);
                (Some((ky, my)), yky, ymy)
            }
        };
        let stats = self.constraints.iter().map(|con| con.stat(&y, yky, ymy)).collect();
        Point { score0, score_cur, score_next, y, dense, ymy, objective, stats }
    }

    fn lagrangian_value(&self, pt: &Point, rho: &[f64]) -> f64 {
        let mut v = pt.objective;
        for ((con, stat), r) in self.constraints.iter().zip(&pt.stats).zip(rho) {
            if *r > 0.0 {
                v += r * (stat - con.radius_term());
            }
        }
        v
    }

    /// `dL/dY` as a dense vector (always available on the dense path).
    fn dense_y_grad(&self, pt: &Point, rho: &[f64]) -> Option<DVector<f64>> {
        let (ky, my) = pt.dense.as_ref()?;
        let n = pt.y.len();
        let mut g = DVector::zeros(n);
        for (con, r) in self.constraints.iter().zip(rho) {
            if *r == 0.0 {
                continue;
            }
            let cf = con.coef(n, pt.ymy);
            if cf.k != 0.0 {
                g.axpy(r * cf.k, ky, 1.0);
            }
            if cf.m != 0.0 {
                g.axpy(r * cf.m, my, 1.0);
            }
            if cf.w != 0.0 {
                if let Some(w) = con.weights() {
                    g.axpy(r * cf.w, w, 1.0);
                }
            }
            if cf.one != 0.0 {
                g.add_scalar_mut(r * cf.one);
            }
        }
        Some(g)
    }

    fn grad_theta(&self, theta: &DVector<f64>, pt: &Point, cache: &PolicyCache, rho: &[f64]) -> DVector<f64> {
        let c = self.clip();
        let m = pt.score0.len() as f64;
        let mask0 = pt.score0.map(|v| if inside(v, c) { (1.0 - self.gamma) / m } else { 0.0 });
        let mut g = cache.x0.tr_mul(&mask0);
        if let Some(gy) = self.dense_y_grad(pt, rho) {
            let cur = DVector::from_fn(gy.len(), |i, _| if inside(pt.score_cur[i], c) { gy[i] } else { 0.0 });
            g -= self.x_cur.tr_mul(&cur);
            if self.gamma > 0.0 {
                let nxt = DVector::from_fn(gy.len(), |i, _| {
                    if inside(pt.score_next[i], c) {
                        self.gamma * gy[i]
                    } else {
                        0.0
                    }
                });
                g += cache.x_next.tr_mul(&nxt);
            }
            return g;
        }
        // Y = r - X theta, so X^T K Y = xkr - xkx theta
        let qf = self.quad.as_ref().expect("fast path requires quadratic forms");
        let n = pt.y.len();
        for (con, r) in self.constraints.iter().zip(rho) {
            if *r == 0.0 {
                continue;
            }
            let cf = con.coef(n, pt.ymy);
            if cf.k != 0.0 {
                g -= (r * cf.k) * (&qf.xkr - &qf.xkx * theta);
            }
            if cf.m != 0.0 {
                g -= (r * cf.m) * (&qf.xmr - &qf.xmx * theta);
            }
            if cf.w != 0.0 {
                if let Some(w) = con.weights() {
                    g -= (r * cf.w) * self.x_cur.tr_mul(w);
                }
            }
            if cf.one != 0.0 {
                g -= (r * cf.one) * &qf.x_ones;
            }
        }
        g
    }

    fn grad_psi(&self, q: &ParamQ, policy: &ParamPolicy, pt: &Point, cache: &PolicyCache, rho: &[f64]) -> Vec<f64> {
        let c = self.clip();
        let mut out = vec![0.0; policy.n_params()];
        let m = self.init_states.len() as f64;
        for (j, s0) in self.init_states.iter().enumerate() {
            if !inside(pt.score0[j], c) {
                continue;
            }
            let da = q.score_action_grad(s0, &cache.init_actions[j]);
            let up: Vec<f64> = da.iter().map(|v| v * (1.0 - self.gamma) / m).collect();
            policy.vjp(s0, &up, &mut out);
        }
        if self.gamma > 0.0 {
            if let Some(gy) = self.dense_y_grad(pt, rho) {
                for (i, tr) in self.transitions.iter().enumerate() {
                    if gy[i] == 0.0 || !inside(pt.score_next[i], c) {
                        continue;
                    }
                    let da = q.score_action_grad(&tr.next_state, &cache.next_actions[i]);
                    let up: Vec<f64> = da.iter().map(|v| v * self.gamma * gy[i]).collect();
                    policy.vjp(&tr.next_state, &up, &mut out);
                }
            }
        }
        out
    }

    /// Lagrangian value and gradients with respect to the Q weights, the
    /// policy weights and the duals.
    pub fn lagrangian(&self, q: &ParamQ, duals: &DualVars, policy: &ParamPolicy) -> Result<LagrangianEval> {
        if duals.values.len() != self.constraints.len() {
            return Err(Error::DimensionMismatch { expected: self.constraints.len(), got: duals.values.len() });
        }
        if duals.values.iter().any(|r| !(*r >= 0.0)) {
            return Err(Error::InvalidParameter("dual variables must be nonnegative".into()));
        }
        let theta = DVector::from_column_slice(&q.weights);
        let cache = self.policy_cache(policy);
        let pt = self.evaluate(&theta, &cache);
        let gt = self.grad_theta(&theta, &pt, &cache, &duals.values);
        let gp = self.grad_psi(q, policy, &pt, &cache, &duals.values);
        let grad_rho = self.constraints.iter().zip(&pt.stats).map(|(con, s)| s - con.radius_term()).collect();
        Ok(LagrangianEval {
            value: self.lagrangian_value(&pt, &duals.values),
            objective: pt.objective,
            constraints: pt.stats.clone(),
            grad_theta: gt.as_slice().to_vec(),
            grad_psi: gp,
            grad_rho,
        })
    }
}

/// `(1 - gamma)` times the mean of `Q(s0, pi(s0))` over the initial states.
pub fn policy_value_estimate<Q: QFunction, P: Policy>(
    q: &Q,
    policy: &P,
    init_states: &[Vec<f64>],
    gamma: f64,
) -> Result<f64> {
    check_discount(gamma)?;
    if init_states.is_empty() {
        return Err(Error::Empty("initial state sample".into()));
    }
    let mut total = 0.0;
    for s in init_states {
        crate::error::check_dim(policy.state_dim(), s.len())?;
        total += q.value(s, &policy.act(s));
    }
    Ok((1.0 - gamma) * total / init_states.len() as f64)
}

/// Supremum of the weighted empirical residual over the RKHS ball of radius `c`.
pub fn omega1_value<'a, P: Policy, Q: QFunction>(
    transitions: impl IntoIterator<Item = &'a Transition>,
    ctx: &KernelContext,
    policy: &P,
    q: &Q,
    gamma: f64,
    c: f64,
) -> Result<f64> {
    let y = residual::residual_vector(transitions, policy, q, gamma)?;
    crate::error::check_dim(ctx.dim(), y.len())?;
    Ok(ctx.wball_sup(&y.as_dvector(), c))
}

/// RKHS norm of the kernel ridge estimate of the Bellman residual.
pub fn omega2_value<'a, P: Policy, Q: QFunction>(
    transitions: impl IntoIterator<Item = &'a Transition>,
    ctx: &KernelContext,
    policy: &P,
    q: &Q,
    gamma: f64,
) -> Result<f64> {
    let y = residual::residual_vector(transitions, policy, q, gamma)?;
    crate::error::check_dim(ctx.dim(), y.len())?;
    Ok(ctx.rkhs_norm_sq(&y.as_dvector()).sqrt())
}

#[derive(Clone)]
struct Iterate {
    iteration: usize,
    theta: DVector<f64>,
    psi: Vec<f64>,
    rho: Vec<f64>,
    value: f64,
}

const POLISH_STEPS: usize = 500;

impl SteelProblem {
    /// Up to `steps` Armijo gradient steps on `theta`. `step` carries the
    /// accepted step length between calls.
    fn descend(
        &self,
        theta: &mut DVector<f64>,
        cache: &PolicyCache,
        rho: &[f64],
        steps: usize,
        step: &mut f64,
        max_step: f64,
        stop_rel: Option<f64>,
    ) -> Point {
        let mut pt = self.evaluate(theta, cache);
        let mut value = self.lagrangian_value(&pt, rho);
        for _ in 0..steps {
            let g = self.grad_theta(theta, &pt, cache, rho);
            let d = &self.precond * &g;
            let gg = g.dot(&d);
            if !(gg > 0.0) || !gg.is_finite() {
                break;
            }
            let nominal = (*step * 2.0).min(max_step);
            let mut t = nominal;
            let mut shrink = 1.0;
            let mut accepted = None;
            for _ in 0..MAX_BACKTRACKS {
                let mut trial = &*theta - t * &d;
                self.retract(&mut trial, cache);
                let tp = self.evaluate(&trial, cache);
                let tv = self.lagrangian_value(&tp, rho);
                if tv <= value - ARMIJO * t * gg {
                    accepted = Some((trial, tp, tv));
                    break;
                }
                t *= 0.5;
                shrink *= 0.5;
            }
            let Some((trial, tp, tv)) = accepted else { break };
            *step = nominal * shrink;
            let decrease = value - tv;
            *theta = trial;
            pt = tp;
            value = tv;
            if let Some(rel) = stop_rel {
                if decrease <= rel * (1.0 + value.abs()) {
                    break;
                }
            }
        }
        pt
    }

    /// Scale `theta` toward zero until every score entering the residual is
    /// within the clip bound. The admissible set is a symmetric polytope
    /// containing the origin, so the scaled point always lies in it.
    fn retract(&self, theta: &mut DVector<f64>, cache: &PolicyCache) {
        let c = self.clip();
        let mut worst = (&self.x_cur * &*theta).amax();
        if self.gamma > 0.0 && cache.x_next.nrows() > 0 {
            worst = worst.max((&cache.x_next * &*theta).amax());
        }
        if worst > c {
            *theta *= c / worst;
        }
    }

    /// Algorithm 1 on this problem. `pinned[i]` keeps dual `i` at zero.
    pub(crate) fn optimize(&self, cfg: &SteelConfig, pinned: &[bool]) -> Result<SteelResult> {
        let k = self.constraints.len();
        let rates: Vec<f64> = (0..k)
            .map(|i| {
                if pinned.get(i).copied().unwrap_or(false) {
                    0.0
                } else if i == 0 {
                    cfg.lr_rho1
                } else {
                    cfg.lr_rho2
                }
            })
            .collect();
        let mut theta = DVector::zeros(self.q_template.n_params());
        let mut policy = self.policy_template.clone();
        let mut rho = vec![0.0; k];
        let mut step = cfg.lr_q;
        let mut cache = self.policy_cache(&policy);
        let mut trace: Vec<TraceEntry> = Vec::with_capacity(cfg.max_outer_iters.min(4096));
        let mut iterates: Vec<Iterate> = Vec::new();
        let mut converged = false;

        for it in 0..cfg.max_outer_iters {
            let pt = self.descend(&mut theta, &cache, &rho, cfg.inner_q_steps, &mut step, cfg.lr_q, None);
            let value = self.lagrangian_value(&pt, &rho);
            if !value.is_finite() || theta.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged { iteration: it, reason: format!("lagrangian value {value}") });
            }
            trace.push(TraceEntry {
                iteration: it,
                lagrangian: value,
                objective: pt.objective,
                constraints: pt.stats.clone(),
                duals: rho.clone(),
            });
            iterates.push(Iterate { iteration: it, theta: theta.clone(), psi: policy.weights.clone(), rho: rho.clone(), value });

            if it >= CONVERGENCE_WINDOW {
                let old = trace[it - CONVERGENCE_WINDOW].lagrangian;
                if (value - old).abs() <= cfg.tol * old.abs().max(1e-12) {
                    converged = true;
                    break;
                }
            }

            // dual ascent on the squared constraint forms
            for (i, con) in self.constraints.iter().enumerate() {
                if rates[i] == 0.0 {
                    continue;
                }
                let next = rho[i] + rates[i] * (pt.stats[i] - con.radius_term());
                rho[i] = if next.is_nan() { 0.0 } else { next.clamp(0.0, cfg.rho_max) };
            }

            // policy ascent
            if cfg.lr_pi > 0.0 {
                let q = self.q_template.clone().with_weights(theta.as_slice().to_vec())?;
                let pt = self.evaluate(&theta, &cache);
                let g = self.grad_psi(&q, &policy, &pt, &cache, &rho);
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Diverged { iteration: it, reason: "non-finite policy gradient".into() });
                }
                // backtracking on L at fixed theta and rho
                let base = self.lagrangian_value(&pt, &rho);
                let g2: f64 = g.iter().map(|v| v * v).sum();
                let mut lr = cfg.lr_pi;
                for _ in 0..PSI_BACKTRACKS {
                    let mut trial = policy.clone();
                    for (w, gi) in trial.weights.iter_mut().zip(&g) {
                        *w += lr * gi;
                    }
                    let trial_cache = self.policy_cache(&trial);
                    let tv = self.lagrangian_value(&self.evaluate(&theta, &trial_cache), &rho);
                    if tv >= base + ARMIJO * lr * g2 {
                        policy = trial;
                        cache = trial_cache;
                        break;
                    }
                    lr *= 0.5;
                }
            }
        }

        // An iterate's value is an upper bound on its polished value, so candidates
        // are polished in decreasing order until no remaining bound can win.
        let start = iterates.len() / 2;
        let mut order: Vec<&Iterate> = iterates[start..].iter().collect();
        order.sort_by(|a, b| b.value.total_cmp(&a.value).then(a.iteration.cmp(&b.iteration)));
        let mut chosen: Option<(&Iterate, DVector<f64>, f64)> = None;
        for cand in order {
            if let Some((_, _, v)) = &chosen {
                if cand.value <= *v {
                    break;
                }
            }
            let policy = self.policy_template.clone().with_weights(cand.psi.clone())?;
            let cache = self.policy_cache(&policy);
            let mut theta = cand.theta.clone();
            let mut step = cfg.lr_q;
            let pt = self.descend(&mut theta, &cache, &cand.rho, POLISH_STEPS, &mut step, cfg.lr_q, Some(1e-13));
            let value = self.lagrangian_value(&pt, &cand.rho);
            if !value.is_finite() {
                return Err(Error::Diverged { iteration: cand.iteration, reason: "non-finite final value".into() });
            }
            if chosen.as_ref().is_none_or(|(_, _, v)| value > *v) {
                chosen = Some((cand, theta, value));
            }
        }
        let (best, theta, value) = chosen.expect("at least one iterate");
        let best = best.clone();
        let policy = self.policy_template.clone().with_weights(best.psi.clone())?;
        let q = self.q_template.clone().with_weights(theta.as_slice().to_vec())?;
        Ok(SteelResult {
            policy,
            q,
            duals: DualVars { values: best.rho },
            trace,
            pessimistic_value: value,
            best_iteration: best.iteration,
            converged,
            radii: self.radii(),
            c: self.c,
            bandwidth: self.ctx.spec().bandwidth,
            n_used: self.n_used(),
        })
    }

    /// Points of the batch used for the kernel computations.
    pub fn batch_points(&self) -> Vec<Vec<f64>> {
        residual::state_action_points(&self.transitions)
    }
}

/// Free-standing Lagrangian for a dataset small enough to need no
/// subsampling.
pub fn lagrangian(
    dataset: &TransitionDataset,
    q: &ParamQ,
    duals: &DualVars,
    policy: &ParamPolicy,
    cfg: &SteelConfig,
) -> Result<LagrangianEval> {
    SteelProblem::new(dataset, cfg)?.lagrangian(q, duals, policy)
}

/// Algorithm 1: primal-dual optimization over the policy class.
pub fn steel_optimize(dataset: &TransitionDataset, cfg: &SteelConfig) -> Result<SteelResult> {
    let mut problem = SteelProblem::new(dataset, cfg)?;
    if cfg.calibrate_c {
        let c = calibrate_c(&problem, dataset, cfg)?;
        problem.set_c(c);
    }
    problem.optimize(cfg, &[])
}

/// Two-phase heuristic for `c`: optimize with the first dual pinned at zero,
/// then take the MMD between the batch and the resulting policy's
/// (estimated) visitation.
pub fn calibrate_c(problem: &SteelProblem, dataset: &TransitionDataset, cfg: &SteelConfig) -> Result<f64> {
    let pre = problem.optimize(cfg, &[true, false])?;
    let target = crate::adaptive::target_sample(dataset, &pre.policy, cfg.gamma, problem.init_states(), cfg.seed)?;
    let batch = problem.batch_points();
    let uniform = vec![1.0; batch.len()];
    let mmd = kernel::mmd2_weighted(&batch, &uniform, &target.points, &target.weights, problem.context().spec())?;
    Ok(mmd.sqrt().max(1e-6))
}
