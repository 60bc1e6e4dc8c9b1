//! Contextual bandits: the pessimistic learner with zero discount, a
//! regression plug-in baseline and a kernel-smoothed inverse-propensity
//! baseline.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::BanditDataset;
use crate::error::{Error, Result};
use crate::funcapprox::{ActionBox, FeatureKind, ParamPolicy, ParamQ, Policy, QForm, QFunction};
use crate::kernel;
use crate::linalg::SpdFactor;
use crate::sim::BanditEnvSpec;
use crate::steel::{self, SteelConfig, SteelResult};

/// Settings of the pessimistic bandit learner; the discount is fixed at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BanditSteelConfig {
    pub zeta: f64,
    pub eps1: Option<f64>,
    pub eps2: Option<f64>,
    pub kappa1: f64,
    pub kappa2: f64,
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
    /// Evaluation states; empty means the logged states.
    pub eval_states: Vec<Vec<f64>>,
    pub reward_features: FeatureKind,
    /// `DemandStructured` models the reward as price times demand.
    pub reward_form: QForm,
    pub reward_clip: Option<f64>,
    pub policy_features: FeatureKind,
    pub action_box: ActionBox,
    pub bandwidth: Option<f64>,
    pub calibrate_c: bool,
}

impl Default for BanditSteelConfig {
    fn default() -> Self {
        Self::from_steel(&SteelConfig::default())
    }
}

impl BanditSteelConfig {
    pub fn from_steel(s: &SteelConfig) -> Self {
        Self {
            zeta: s.zeta,
            eps1: s.eps1,
            eps2: s.eps2,
            kappa1: s.kappa1,
            kappa2: s.kappa2,
            c: s.c,
            lr_q: s.lr_q,
            lr_pi: s.lr_pi,
            lr_rho1: s.lr_rho1,
            lr_rho2: s.lr_rho2,
            inner_q_steps: s.inner_q_steps,
            max_outer_iters: s.max_outer_iters,
            tol: s.tol,
            rho_max: s.rho_max,
            nystrom_cap: s.nystrom_cap,
            seed: s.seed,
            eval_states: s.init_states.clone(),
            reward_features: s.q_features.clone(),
            reward_form: s.q_form,
            reward_clip: s.q_clip,
            policy_features: s.policy_features.clone(),
            action_box: s.action_box.clone(),
            bandwidth: s.bandwidth,
            calibrate_c: s.calibrate_c,
        }
    }

    pub fn to_steel(&self) -> SteelConfig {
        SteelConfig {
            gamma: 0.0,
            zeta: self.zeta,
            eps1: self.eps1,
            eps2: self.eps2,
            kappa1: self.kappa1,
            kappa2: self.kappa2,
            c: self.c,
            lr_q: self.lr_q,
            lr_pi: self.lr_pi,
            lr_rho1: self.lr_rho1,
            lr_rho2: self.lr_rho2,
            inner_q_steps: self.inner_q_steps,
            max_outer_iters: self.max_outer_iters,
            tol: self.tol,
            rho_max: self.rho_max,
            nystrom_cap: self.nystrom_cap,
            seed: self.seed,
            init_states: self.eval_states.clone(),
            q_features: self.reward_features.clone(),
            q_form: self.reward_form,
            q_clip: self.reward_clip,
            policy_features: self.policy_features.clone(),
            action_box: self.action_box.clone(),
            bandwidth: self.bandwidth,
            calibrate_c: self.calibrate_c,
        }
    }
}

/// Pessimistic maximin learner: [`steel::steel_optimize`] with zero discount.
pub fn bandit_steel(dataset: &BanditDataset, cfg: &BanditSteelConfig) -> Result<SteelResult> {
    steel::steel_optimize(&dataset.to_transitions(), &cfg.to_steel())
}

/// Armijo gradient ascent on the policy weights from zero.
fn ascend<F>(template: &ParamPolicy, steps: usize, max_step: f64, mut f: F) -> Result<ParamPolicy>
where
    F: FnMut(&ParamPolicy) -> (f64, Vec<f64>),
{
    let mut pol = template.clone();
    let (mut val, mut g) = f(&pol);
    let mut step = max_step;
    for _ in 0..steps {
        let gg: f64 = g.iter().map(|x| x * x).sum();
        if !(gg > 1e-24) {
            break;
        }
        let mut t = (2.0 * step).min(max_step);
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = pol.weights.iter().zip(&g).map(|(w, d)| w + t * d).collect();
            let tp = template.clone().with_weights(trial)?;
            let (tv, tg) = f(&tp);
            if tv.is_finite() && tv >= val + 1e-4 * t * gg {
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
    Ok(pol)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressionConfig {
    /// Ridge per observation: the normal equations are `X'X + n ridge I`.
    pub ridge: f64,
    pub reward_features: FeatureKind,
    pub reward_form: QForm,
    pub policy_features: FeatureKind,
    pub action_box: ActionBox,
    pub ascent_steps: usize,
    pub max_step: f64,
    pub eval_states: Vec<Vec<f64>>,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        Self {
            ridge: 1e-6,
            reward_features: FeatureKind::Polynomial { degree: 2 },
            reward_form: QForm::Linear,
            policy_features: FeatureKind::Polynomial { degree: 1 },
            action_box: ActionBox { lo: vec![-1.0], hi: vec![1.0] },
            ascent_steps: 300,
            max_step: 10.0,
            eval_states: Vec::new(),
        }
    }
}

/// Ridge least-squares fit of the rewards on the reward features.
pub fn fit_reward(dataset: &BanditDataset, features: FeatureKind, form: QForm, ridge: f64) -> Result<ParamQ> {
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::InvalidParameter(format!("ridge must be nonnegative, got {ridge}")));
    }
    // no clipping for a plug-in fit
    let template = ParamQ::new(features, dataset.state_dim(), dataset.action_dim(), f64::MAX, form)?;
    let n = dataset.len();
    let p = template.n_params();
    let mut x = DMatrix::zeros(n, p);
    let mut y = DVector::zeros(n);
    for (i, row) in dataset.rows().iter().enumerate() {
        for (j, v) in template.design_row(&row.state, &row.action).into_iter().enumerate() {
            x[(i, j)] = v;
        }
        y[i] = row.reward;
    }
    let mut normal = x.tr_mul(&x);
    for j in 0..p {
        normal[(j, j)] += n as f64 * ridge;
    }
    let factor = SpdFactor::new(&normal)?;
    let theta = factor.solve(&x.tr_mul(&y));
    template.with_weights(theta.iter().copied().collect())
}

fn eval_states(configured: &[Vec<f64>], dataset: &BanditDataset) -> Vec<Vec<f64>> {
    if configured.is_empty() {
        dataset.rows().iter().map(|r| r.state.clone()).collect()
    } else {
        configured.to_vec()
    }
}

/// Plug-in policy maximizing the fitted reward over the evaluation states.
pub fn regression_baseline(dataset: &BanditDataset, cfg: &RegressionConfig) -> Result<(ParamPolicy, ParamQ)> {
    let q = fit_reward(dataset, cfg.reward_features.clone(), cfg.reward_form, cfg.ridge)?;
    let template = ParamPolicy::new(cfg.policy_features.clone(), dataset.state_dim(), cfg.action_box.clone())?;
    let states = eval_states(&cfg.eval_states, dataset);
    let m = states.len() as f64;
    let policy = ascend(&template, cfg.ascent_steps, cfg.max_step, |pol| {
        let mut v = 0.0;
        let mut g = vec![0.0; pol.n_params()];
        for s in &states {
            let a = pol.act(s);
            v += q.value(s, &a);
            let up: Vec<f64> = q.score_action_grad(s, &a).iter().map(|x| x / m).collect();
            pol.vjp(s, &up, &mut g);
        }
        (v / m, g)
    })?;
    Ok((policy, q))
}

/// Conditional action density of the logging policy.
pub trait Propensity: Sync {
    fn density(&self, s: &[f64], a: &[f64]) -> f64;
}

impl Propensity for BanditEnvSpec {
    fn density(&self, s: &[f64], a: &[f64]) -> f64 {
        self.behavior_density(s, a)
    }
}

/// Gaussian with a state-linear mean fitted by least squares and a pooled
/// residual standard deviation per action coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatedPropensity {
    /// One row per action coordinate: state coefficients then intercept.
    pub coef: Vec<Vec<f64>>,
    pub std: Vec<f64>,
}

impl EstimatedPropensity {
    pub fn fit(dataset: &BanditDataset) -> Result<Self> {
        let n = dataset.len();
        let ds = dataset.state_dim();
        let da = dataset.action_dim();
        let mut x = DMatrix::zeros(n, ds + 1);
        let mut y = DMatrix::zeros(n, da);
        for (i, r) in dataset.rows().iter().enumerate() {
            for j in 0..ds {
                x[(i, j)] = r.state[j];
            }
            x[(i, ds)] = 1.0;
            for k in 0..da {
                y[(i, k)] = r.action[k];
            }
        }
        let factor = SpdFactor::new(&x.tr_mul(&x))?;
        let xty = x.tr_mul(&y);
        let mut coef = Vec::with_capacity(da);
        let mut std = Vec::with_capacity(da);
        for k in 0..da {
            let w = factor.solve(&xty.column(k).into_owned());
            let resid = y.column(k) - &x * &w;
            let sd = (resid.norm_squared() / n as f64).sqrt();
            if !(sd > 0.0) {
                return Err(Error::Degenerate("logged actions are a deterministic function of the state".into()));
            }
            coef.push(w.iter().copied().collect());
            std.push(sd);
        }
        Ok(Self { coef, std })
    }
}

impl Propensity for EstimatedPropensity {
    fn density(&self, s: &[f64], a: &[f64]) -> f64 {
        self.coef
            .iter()
            .zip(&self.std)
            .zip(a)
            .map(|((w, sd), ak)| {
                let mean: f64 = w.iter().zip(s).map(|(c, x)| c * x).sum::<f64>() + w[w.len() - 1];
                let z = (ak - mean) / sd;
                (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
            })
            .product()
    }
}

/// Propensities at or below this value are clipped to it.
pub const PROPENSITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelSmoothingConfig {
    /// `None` uses the median action distance times `n^(-1/(4 + d_A))`.
    pub bandwidth: Option<f64>,
    pub policy_features: FeatureKind,
    pub action_box: ActionBox,
    pub ascent_steps: usize,
    pub max_step: f64,
    pub seed: u64,
}

impl Default for KernelSmoothingConfig {
    fn default() -> Self {
        Self {
            bandwidth: None,
            policy_features: FeatureKind::Polynomial { degree: 1 },
            action_box: ActionBox { lo: vec![-1.0], hi: vec![1.0] },
            ascent_steps: 300,
            max_step: 10.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSmoothingResult {
    pub policy: ParamPolicy,
    pub bandwidth: f64,
    /// Observations whose propensity had to be clipped.
    pub clipped: usize,
}

/// Default kernel-smoothing bandwidth.
pub fn default_smoothing_bandwidth(dataset: &BanditDataset, seed: u64) -> Result<f64> {
    let actions: Vec<Vec<f64>> = dataset.rows().iter().map(|r| r.action.clone()).collect();
    let med = kernel::median_heuristic(&actions, seed)?;
    Ok(med * (dataset.len() as f64).powf(-1.0 / (4.0 + dataset.action_dim() as f64)))
}

/// Kernel-smoothed inverse-propensity value estimate and its policy
/// gradient. Returns `(value, gradient)`.
pub fn smoothed_value(
    dataset: &BanditDataset,
    inv_prop: &[f64],
    policy: &ParamPolicy,
    h: f64,
) -> (f64, Vec<f64>) {
    let n = dataset.len() as f64;
    let norm = (h * (2.0 * std::f64::consts::PI).sqrt()).powi(dataset.action_dim() as i32);
    let mut v = 0.0;
    let mut g = vec![0.0; policy.n_params()];
    for (row, ip) in dataset.rows().iter().zip(inv_prop) {
        let pa = policy.act(&row.state);
        let d2: f64 = row.action.iter().zip(&pa).map(|(a, p)| ((a - p) / h).powi(2)).sum();
        let k = (-0.5 * d2).exp() / norm;
        let term = k * row.reward * ip / n;
        v += term;
        if term != 0.0 {
            let up: Vec<f64> = row.action.iter().zip(&pa).map(|(a, p)| term * (a - p) / (h * h)).collect();
            policy.vjp(&row.state, &up, &mut g);
        }
    }
    (v, g)
}

/// Policy maximizing the kernel-smoothed inverse-propensity value.
pub fn kernel_smoothing_baseline<P: Propensity + ?Sized>(
    dataset: &BanditDataset,
    propensity: &P,
    cfg: &KernelSmoothingConfig,
) -> Result<KernelSmoothingResult> {
    let h = match cfg.bandwidth {
        Some(h) => h,
        None => default_smoothing_bandwidth(dataset, cfg.seed)?,
    };
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidParameter(format!("bandwidth must be positive, got {h}")));
    }
    let mut clipped = 0;
    let inv_prop: Vec<f64> = dataset
        .rows()
        .iter()
        .map(|r| {
            let p = propensity.density(&r.state, &r.action);
            if !(p > PROPENSITY_FLOOR) {
                clipped += 1;
                1.0 / PROPENSITY_FLOOR
            } else {
                1.0 / p
            }
        })
        .collect();
    if clipped > 0 {
        log::warn!("{clipped} propensities clipped to {PROPENSITY_FLOOR:e}");
    }
    let template = ParamPolicy::new(cfg.policy_features.clone(), dataset.state_dim(), cfg.action_box.clone())?;
    let policy = ascend(&template, cfg.ascent_steps, cfg.max_step, |pol| smoothed_value(dataset, &inv_prop, pol, h))?;
    Ok(KernelSmoothingResult { policy, bandwidth: h, clipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::BanditRow;
    use crate::rng;
    use crate::sim::{BanditEnvSpec, GaussianLinearPolicy, SingularityMode};
    use nalgebra::SVD;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn rows_from(states: &[Vec<f64>], actions: &[f64], f: impl Fn(&[f64], f64) -> f64) -> BanditDataset {
        let rows = states
            .iter()
            .zip(actions)
            .map(|(s, a)| BanditRow { state: s.clone(), action: vec![*a], reward: f(s, *a) })
            .collect();
        BanditDataset::new(rows, states[0].len(), 1).unwrap()
    }

    fn random_design(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut r = rng::seeded(seed);
        let states = (0..n).map(|_| vec![r.sample(StandardNormal), r.sample(StandardNormal)]).collect();
        let actions = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        (states, actions)
    }

    #[test]
    fn noiseless_linear_rewards_are_refit_exactly() {
        let (states, actions) = random_design(1000, 1);
        let truth = |s: &[f64], a: f64| 0.3 - 0.7 * s[0] + 0.2 * s[1] * a + 0.9 * a * a;
        let ds = rows_from(&states, &actions, truth);
        let q = fit_reward(&ds, FeatureKind::Polynomial { degree: 2 }, QForm::Linear, 0.0).unwrap();
        let rmse = (ds.rows().iter().map(|r| (q.value(&r.state, &r.action) - r.reward).powi(2)).sum::<f64>()
            / ds.len() as f64)
            .sqrt();
        assert!(rmse < 1e-6, "{rmse}");
    }

    #[test]
    fn zero_rewards_fit_zero() {
        let (states, actions) = random_design(200, 2);
        let ds = rows_from(&states, &actions, |_, _| 0.0);
        let (_, q) = regression_baseline(&ds, &RegressionConfig::default()).unwrap();
        assert!(q.weights.iter().all(|w| *w == 0.0));
    }

    #[test]
    fn vanishing_ridge_recovers_least_squares() {
        let (states, actions) = random_design(400, 3);
        let mut r = rng::seeded(4);
        let noise: Vec<f64> = (0..400).map(|_| r.sample(StandardNormal)).collect();
        let rows: Vec<BanditRow> = states
            .iter()
            .zip(&actions)
            .zip(&noise)
            .map(|((s, a), e)| BanditRow { state: s.clone(), action: vec![*a], reward: s[0] - a + 0.5 * e })
            .collect();
        let ds = BanditDataset::new(rows, 2, 1).unwrap();
        let q = fit_reward(&ds, FeatureKind::Polynomial { degree: 1 }, QForm::Linear, 1e-14).unwrap();
        let x = DMatrix::from_fn(400, 4, |i, j| match j {
            0 => 1.0,
            1 => states[i][0],
            2 => states[i][1],
            _ => actions[i],
        });
        let y = DVector::from_iterator(400, ds.rows().iter().map(|r| r.reward));
        let ols = SVD::new(x, true, true).solve(&y, 1e-14).unwrap();
        for (a, b) in q.weights.iter().zip(ols.iter()) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        assert!(fit_reward(&ds, FeatureKind::Polynomial { degree: 1 }, QForm::Linear, -1.0).is_err());
    }

    #[test]
    fn regression_policy_tracks_a_well_specified_peak() {
        let env = BanditEnvSpec { noise_std: 0.1, ..Default::default() };
        let ds = env.generate(2000, 5).unwrap();
        let cfg = RegressionConfig { action_box: env.policy_box(), ..Default::default() };
        let (policy, _) = regression_baseline(&ds, &cfg).unwrap();
        for s in [[0.0, 0.0], [0.5, -0.5], [-0.5, 0.3]] {
            let peak = env.peak(&s)[0];
            assert!((policy.act(&s)[0] - peak).abs() < 0.1);
        }
    }

    #[test]
    fn wide_kernels_make_the_estimate_policy_free() {
        let env = BanditEnvSpec::default();
        let ds = env.generate(500, 6).unwrap();
        let inv: Vec<f64> = ds.rows().iter().map(|r| 1.0 / env.density(&r.state, &r.action)).collect();
        let bx = ActionBox::new(vec![-2.0], vec![2.0]).unwrap();
        let p1 = ParamPolicy::new(FeatureKind::Polynomial { degree: 1 }, 2, bx.clone()).unwrap();
        let p2 = p1.clone().with_weights(vec![1.5, -2.0, 0.7]).unwrap();
        let (v1, _) = smoothed_value(&ds, &inv, &p1, 1e6);
        let (v2, _) = smoothed_value(&ds, &inv, &p2, 1e6);
        assert!((v1 / v2 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn smoothed_value_is_unbiased_for_the_smoothed_policy() {
        // constant behavior and a constant target: the estimand is the value
        // of drawing a ~ N(pi(s), h^2)
        let env = BanditEnvSpec {
            behavior: GaussianLinearPolicy { offset: vec![0.1], slope: vec![vec![0.0, 0.0]], std: 0.6 },
            mode: SingularityMode::None,
            ..Default::default()
        };
        let ds = env.generate(5000, 7).unwrap();
        let inv: Vec<f64> = ds.rows().iter().map(|r| 1.0 / env.density(&r.state, &r.action)).collect();
        let bx = ActionBox::new(vec![-2.0], vec![2.0]).unwrap();
        let logit = ((0.1f64 + 2.0) / (2.0 - 0.1)).ln();
        let pol = ParamPolicy::new(FeatureKind::Polynomial { degree: 1 }, 2, bx).unwrap().with_weights(vec![logit, 0.0, 0.0]).unwrap();
        let h = default_smoothing_bandwidth(&ds, 0).unwrap();
        let (est, _) = smoothed_value(&ds, &inv, &pol, h);
        let n = ds.len() as f64;
        let terms: Vec<f64> = ds
            .rows()
            .iter()
            .zip(&inv)
            .map(|(r, ip)| {
                let z = (r.action[0] - pol.act(&r.state)[0]) / h;
                (-0.5 * z * z).exp() / (h * (2.0 * std::f64::consts::PI).sqrt()) * r.reward * ip
            })
            .collect();
        let var = terms.iter().map(|t| (t - est).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        let mut r = rng::seeded(8);
        let m = 200_000;
        let truth = (0..m)
            .map(|_| {
                let s = env.sample_state(&mut r);
                let z: f64 = r.sample(StandardNormal);
                env.mean_reward(&s, &[pol.act(&s)[0] + h * z])
            })
            .sum::<f64>()
            / m as f64;
        assert!((est - truth).abs() <= 3.0 * se, "{est} vs {truth} (se {se})");
    }

    struct Zero;
    impl Propensity for Zero {
        fn density(&self, _: &[f64], _: &[f64]) -> f64 {
            0.0
        }
    }

    #[test]
    fn vanishing_propensities_are_clipped_and_counted() {
        let env = BanditEnvSpec::default();
        let ds = env.generate(100, 9).unwrap();
        let cfg = KernelSmoothingConfig { action_box: env.policy_box(), ascent_steps: 3, ..Default::default() };
        let res = kernel_smoothing_baseline(&ds, &Zero, &cfg).unwrap();
        assert_eq!(res.clipped, 100);
        let res = kernel_smoothing_baseline(&ds, &env, &cfg).unwrap();
        assert_eq!(res.clipped, 0);
        let bad = KernelSmoothingConfig { bandwidth: Some(0.0), ..cfg };
        assert!(kernel_smoothing_baseline(&ds, &env, &bad).is_err());
    }

    #[test]
    fn estimated_propensity_recovers_the_behavior() {
        let env = BanditEnvSpec::default();
        let ds = env.generate(20_000, 10).unwrap();
        let est = EstimatedPropensity::fit(&ds).unwrap();
        let b = &env.behavior;
        assert!((est.coef[0][0] - b.slope[0][0]).abs() < 0.02);
        assert!((est.coef[0][1] - b.slope[0][1]).abs() < 0.02);
        assert!((est.coef[0][2] - b.offset[0]).abs() < 0.02);
        assert!((est.std[0] - b.std).abs() < 0.02);
    }

    #[test]
    fn bandit_steel_is_steel_with_zero_discount() {
        let env = BanditEnvSpec::default();
        let ds = env.generate(150, 11).unwrap();
        let cfg = BanditSteelConfig { action_box: env.policy_box(), zeta: 0.01, max_outer_iters: 40, ..Default::default() };
        let a = bandit_steel(&ds, &cfg).unwrap();
        let b = steel::steel_optimize(&ds.to_transitions(), &cfg.to_steel()).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(BanditSteelConfig::from_steel(&cfg.to_steel()), cfg);
    }

    #[test]
    fn constant_rewards_stay_inside_the_radius_envelope() {
        let (states, actions) = random_design(200, 12);
        let ds = rows_from(&states, &actions, |_, _| 1.0);
        let cfg = BanditSteelConfig { zeta: 0.01, max_outer_iters: 150, ..Default::default() };
        let res = bandit_steel(&ds, &cfg).unwrap();
        let (e1, e2) = cfg.to_steel().radii(200);
        assert!(res.pessimistic_value >= 1.0 - e1 - e2, "{}", res.pessimistic_value);
        assert!(res.pessimistic_value <= 1.0 + 1e-6);
    }

    #[test]
    fn learned_policies_stay_in_the_box() {
        let env = BanditEnvSpec::default();
        let ds = env.generate(200, 13).unwrap();
        let bx = env.policy_box();
        let (reg, _) = regression_baseline(&ds, &RegressionConfig { action_box: bx.clone(), ..Default::default() }).unwrap();
        let ks = kernel_smoothing_baseline(&ds, &env, &KernelSmoothingConfig { action_box: bx.clone(), ..Default::default() })
            .unwrap()
            .policy;
        let st = bandit_steel(&ds, &BanditSteelConfig { action_box: bx.clone(), max_outer_iters: 30, ..Default::default() })
            .unwrap()
            .policy;
        let mut r = rng::seeded(14);
        for _ in 0..500 {
            let s = vec![4.0 * r.sample::<f64, _>(StandardNormal), 4.0 * r.sample::<f64, _>(StandardNormal)];
            for p in [&reg, &ks, &st] {
                assert!(bx.contains(&p.act(&s)));
            }
        }
    }
}
