//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL line
//! per criterion and exits nonzero when any criterion fails.
//!
//! `cargo test -p steel-core --test acceptance -- 3 7` runs a subset.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use steel_core::adaptive::{adaptive_steel, AdaptiveConfig};
use steel_core::bandit::{
    bandit_steel, kernel_smoothing_baseline, regression_baseline, BanditSteelConfig, EstimatedPropensity,
    KernelSmoothingConfig, RegressionConfig,
};
use steel_core::data::{build_pricing_dataset, load_loan_records, write_loan_records, BanditDataset};
use steel_core::funcapprox::{
    finite_diff_check, ActionBox, ConstantPolicy, ConstantQ, FeatureKind, ParamPolicy, QForm,
};
use steel_core::kernel::{self, mmd2, KernelSpec, MmdEstimator};
use steel_core::residual::{self, krr_eval, krr_fit, residual_vector, KernelContext};
use steel_core::rng;
use steel_core::sim::{
    generate_loan_records, reference_value, tabular_q_oracle, true_value, BanditEnvSpec, EnvSpec, LoanDemandSpec,
    MdpEnvSpec, ReferenceConfig,
};
use steel_core::steel::{omega1_value, omega2_value, steel_optimize, DualVars, SteelConfig, SteelProblem};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Self { pass, detail }
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

fn gaussian_points(n: usize, d: usize, r: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| r.sample(StandardNormal)).collect()).collect()
}

fn gauss(x: &[f64], y: &[f64], h: f64) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (-d2 / (2.0 * h * h)).exp()
}

fn bandit_pairs(data: &BanditDataset) -> (Vec<Vec<f64>>, Vec<f64>) {
    data.rows()
        .iter()
        .map(|r| {
            let mut z = r.state.clone();
            z.extend_from_slice(&r.action);
            (z, r.reward)
        })
        .unzip()
}

fn representer_identity() -> Outcome {
    let mut worst: f64 = 0.0;
    for inst in 0..100u64 {
        let mut r = rng::seeded(1000 + inst);
        let n = r.random_range(2..=200);
        let d = r.random_range(1..=4);
        let zeta = 10f64.powf(r.random_range(-4.0..0.0));
        let h = r.random_range(0.3..3.0);
        let pts = gaussian_points(n, d, &mut r);
        let y: Vec<f64> = (0..n).map(|_| r.sample(StandardNormal)).collect();
        let g = kernel::gram(&KernelSpec::gaussian(h).unwrap(), &pts).unwrap();
        let yv = residual::ResidualVector::new(y);
        let fit = krr_fit(&g, &yv, zeta).unwrap();
        let quad = fit.alpha.dot(&(&g.entries * &fit.alpha));
        let norm = residual::rkhs_norm_sq(&g, &yv, zeta).unwrap();
        worst = worst.max(rel_err(norm, quad));
    }
    Outcome::new(worst <= 1e-10, format!("max rel err {worst:.2e} over 100 instances"))
}

fn krr_oracle() -> Outcome {
    let env = BanditEnvSpec::default();
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let data = env.generate(150, seed).unwrap();
        let trs = data.to_transitions();
        let (pts, rewards) = bandit_pairs(&data);
        let h = kernel::median_heuristic(&pts, seed).unwrap();
        let zeta = 1e-2;
        let g = kernel::gram(&KernelSpec::gaussian(h).unwrap(), &pts).unwrap();
        let pol = ConstantPolicy { action: vec![0.0], state_dim: 2 };
        let q0 = ConstantQ { value: 0.0, state_dim: 2, action_dim: 1 };
        let y = residual_vector(trs.transitions(), &pol, &q0, 0.0).unwrap();
        let fit = krr_fit(&g, &y, zeta).unwrap();

        let n = pts.len();
        let k = DMatrix::from_fn(n, n, |i, j| gauss(&pts[i], &pts[j], h));
        let lhs = k + DMatrix::identity(n, n) * (n as f64 * zeta);
        let alpha = lhs.lu().solve(&DVector::from_vec(rewards)).unwrap();
        let mut r = rng::seeded(500 + seed);
        for z in gaussian_points(50, 3, &mut r) {
            let direct: f64 = (0..n).map(|i| alpha[i] * gauss(&pts[i], &z, h)).sum();
            let got = krr_eval(&fit, &z).unwrap();
            worst = worst.max((got - direct).abs() / direct.abs().max(1e-3));
        }
    }
    Outcome::new(worst <= 1e-8, format!("max rel err {worst:.2e} at 50 points x 20 seeds"))
}

fn quadruple_mmd(a: &[Vec<f64>], b: &[Vec<f64>], h: f64, unbiased: bool) -> f64 {
    let (mut total, mut count) = (0.0, 0.0);
    for i in 0..a.len() {
        for j in 0..a.len() {
            for k in 0..b.len() {
                for l in 0..b.len() {
                    if unbiased && (i == j || k == l) {
                        continue;
                    }
                    total += gauss(&a[i], &a[j], h) + gauss(&b[k], &b[l], h) - gauss(&a[i], &b[l], h)
                        - gauss(&a[j], &b[k], h);
                    count += 1.0;
                }
            }
        }
    }
    total / count
}

fn mmd_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut zero_ok = true;
    for seed in 0..5u64 {
        let mut r = rng::seeded(seed);
        let a = gaussian_points(20, 2, &mut r);
        let b: Vec<Vec<f64>> = gaussian_points(20, 2, &mut r).into_iter().map(|p| vec![p[0] + 0.7, p[1]]).collect();
        let h = 0.5 + seed as f64 * 0.4;
        let spec = KernelSpec::gaussian(h).unwrap();
        for (est, unbiased) in [(MmdEstimator::Biased, false), (MmdEstimator::Unbiased, true)] {
            let got = mmd2(&a, &b, &spec, est).unwrap();
            worst = worst.max(rel_err(got, quadruple_mmd(&a, &b, h, unbiased)));
        }
        zero_ok &= mmd2(&a, &a, &spec, MmdEstimator::Biased).unwrap() == 0.0;
    }
    Outcome::new(
        worst <= 1e-12 && zero_ok,
        format!("max rel err {worst:.2e}; biased mmd2(A, A) == 0: {zero_ok}"),
    )
}

fn gradient_check() -> Outcome {
    let env = MdpEnvSpec::default();
    let data = env.generate(5, 10, 11).unwrap();
    let cfg = SteelConfig { gamma: env.gamma, zeta: 0.01, action_box: env.action_box.clone(), ..Default::default() };
    let problem = SteelProblem::new(&data, &cfg).unwrap();
    let mut worst: f64 = 0.0;
    let mut r = rng::seeded(4);
    for _ in 0..10 {
        let tq = problem.q_template().n_params();
        let tp = problem.policy_template().n_params();
        let q = problem.q_template().clone().with_weights((0..tq).map(|_| r.random_range(-0.1..0.1)).collect()).unwrap();
        let p = problem.policy_template().clone().with_weights((0..tp).map(|_| r.random_range(-0.8..0.8)).collect()).unwrap();
        let d = DualVars { values: (0..2).map(|_| r.random_range(0.1..2.0)).collect() };
        let ev = problem.lagrangian(&q, &d, &p).unwrap();
        let scale = |g: &[f64]| 1.0 + g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let e = finite_diff_check(
            |w| problem.lagrangian(&q.clone().with_weights(w.to_vec()).unwrap(), &d, &p).unwrap().value,
            |_| ev.grad_theta.clone(),
            &q.weights,
            1e-6,
        )
        .unwrap();
        worst = worst.max(e / scale(&ev.grad_theta));
        let e = finite_diff_check(
            |w| problem.lagrangian(&q, &d, &p.clone().with_weights(w.to_vec()).unwrap()).unwrap().value,
            |_| ev.grad_psi.clone(),
            &p.weights,
            1e-6,
        )
        .unwrap();
        worst = worst.max(e / scale(&ev.grad_psi));
        let e = finite_diff_check(
            |w| problem.lagrangian(&q, &DualVars { values: w.to_vec() }, &p).unwrap().value,
            |_| ev.grad_rho.clone(),
            &d.values,
            1e-4,
        )
        .unwrap();
        worst = worst.max(e / scale(&ev.grad_rho));
    }
    Outcome::new(
        worst <= 1e-5,
        format!("max scaled err {worst:.2e} over theta, psi, rho at 10 points ({} transitions)", data.len()),
    )
}

fn feasibility_decay() -> Outcome {
    let env = MdpEnvSpec::default();
    let box_ = env.action_box.clone();
    let policy = ParamPolicy::new(FeatureKind::Polynomial { degree: 1 }, 1, box_)
        .unwrap()
        .with_weights(vec![0.2, -0.5])
        .unwrap();
    let oracle = tabular_q_oracle(&env, &policy, 161, 1e-10).unwrap();
    let horizon = 20;
    let mut means = Vec::new();
    for nt in [200usize, 800, 3200] {
        let vals: Vec<(f64, f64)> = (0..10u64)
            .map(|seed| {
                let data = env.generate(nt / horizon, horizon, seed).unwrap();
                let trs: Vec<_> = data.transitions().cloned().collect();
                let pts = residual::state_action_points(&trs);
                let h = kernel::median_heuristic(&pts, seed).unwrap();
                let ctx = KernelContext::new(&pts, KernelSpec::gaussian(h).unwrap(), 1e-3).unwrap();
                let o1 = omega1_value(&trs, &ctx, &policy, &oracle, env.gamma, 1.0).unwrap();
                let o2 = omega2_value(&trs, &ctx, &policy, &oracle, env.gamma).unwrap();
                (o1, o2)
            })
            .collect();
        let m1 = vals.iter().map(|v| v.0).sum::<f64>() / 10.0;
        let m2 = vals.iter().map(|v| v.1).sum::<f64>() / 10.0;
        means.push((nt, m1, m2));
    }
    let pass = means.windows(2).all(|w| w[1].1 < w[0].1 && w[1].2 < w[0].2);
    let detail = means.iter().map(|(n, a, b)| format!("NT={n}: omega1 {a:.4} omega2 {b:.4}")).collect::<Vec<_>>().join("; ");
    Outcome::new(pass, detail)
}

fn weak_duality() -> Outcome {
    let env = BanditEnvSpec::default();
    let data = env.generate(200, 3).unwrap().to_transitions();
    let mut cfg = SteelConfig {
        gamma: 0.0,
        zeta: 0.01,
        action_box: env.policy_box(),
        q_features: FeatureKind::RandomFourier { features: 2, bandwidth: 1.0, seed: 1 },
        seed: 3,
        ..Default::default()
    };
    let grid_min = |problem: &SteelProblem, policy: &ParamPolicy, radii: &[f64]| -> (f64, usize) {
        let clip = problem.q_template().clip_bound();
        let side = 50;
        let bound = 2.0 * clip;
        let mut best = f64::INFINITY;
        let mut feasible = 0;
        for i in 0..side {
            for j in 0..side {
                let t = |k: usize| -bound + 2.0 * bound * k as f64 / (side - 1) as f64;
                let w = vec![t(i), t(j)];
                let q = problem.q_template().clone().with_weights(w).unwrap();
                // stay inside the class the optimizer searches: no clipped score on the data
                if problem.transitions().iter().any(|tr| q.score(&tr.state, &tr.action).abs() > clip) {
                    continue;
                }
                let ev = problem.lagrangian(&q, &DualVars::zeros(2), policy).unwrap();
                if ev.constraints.iter().zip(radii).all(|(s, e)| *s <= e * e) {
                    feasible += 1;
                    best = best.min(ev.objective);
                }
            }
        }
        (best, feasible)
    };
    // radii at the median of the statistics over the initial policy's grid,
    // so both constraints bind
    let problem = SteelProblem::new(&data, &cfg).unwrap();
    let mut stats = (Vec::new(), Vec::new());
    let clip = problem.q_template().clip_bound();
    for i in 0..50 {
        for j in 0..50 {
            let t = |k: usize| -clip + 2.0 * clip * k as f64 / 49.0;
            let q = problem.q_template().clone().with_weights(vec![t(i), t(j)]).unwrap();
            let ev = problem.lagrangian(&q, &DualVars::zeros(2), problem.policy_template()).unwrap();
            stats.0.push(ev.constraints[0]);
            stats.1.push(ev.constraints[1]);
        }
    }
    let median = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    cfg.eps1 = Some(median(stats.0).sqrt());
    cfg.eps2 = Some(median(stats.1).sqrt());
    let res = steel_optimize(&data, &cfg).unwrap();
    let problem = SteelProblem::new(&data, &cfg).unwrap();
    let (primal, feasible) = grid_min(&problem, &res.policy, &res.radii);
    Outcome::new(
        feasible > 0 && res.pessimistic_value <= primal + 1e-3,
        format!(
            "dual {:.5} vs grid primal {:.5} ({feasible}/2500 grid points feasible, duals {:?})",
            res.pessimistic_value, primal, res.duals.values
        ),
    )
}

fn bandit_reference(env: &BanditEnvSpec, rc: &ReferenceConfig) -> f64 {
    let template = ParamPolicy::new(FeatureKind::Polynomial { degree: 1 }, env.state_dim, env.policy_box()).unwrap();
    reference_value(&EnvSpec::Bandit(env.clone()), &template, rc).unwrap().value
}

fn regret_decay() -> Outcome {
    let env = BanditEnvSpec::default();
    let espec = EnvSpec::Bandit(env.clone());
    let rc = ReferenceConfig::default();
    let reference = bandit_reference(&env, &rc);
    let run = |n: usize, seed: u64, smoothing: bool| -> f64 {
        let data = env.generate(n, seed).unwrap();
        let policy = if smoothing {
            let kc = KernelSmoothingConfig { action_box: env.policy_box(), seed, ..Default::default() };
            kernel_smoothing_baseline(&data, &env, &kc).unwrap().policy
        } else {
            let cfg = BanditSteelConfig { zeta: 0.05, action_box: env.policy_box(), seed, ..Default::default() };
            bandit_steel(&data, &cfg).unwrap().policy
        };
        (reference - true_value(&espec, &policy, &rc).unwrap().value).max(0.0)
    };
    let regrets = |n: usize, smoothing: bool| -> Vec<f64> {
        (0..20u64).into_par_iter().map(|s| run(n, s, smoothing)).collect()
    };
    let (s200, se200) = mean_se(&regrets(200, false));
    let (s3200, se3200) = mean_se(&regrets(3200, false));
    let (k3200, _) = mean_se(&regrets(3200, true));
    let pooled = (se200 * se200 + se3200 * se3200).sqrt();
    let pass = s200 - s3200 >= 2.0 * pooled && s3200 <= k3200;
    Outcome::new(
        pass,
        format!(
            "steel N=200 {s200:.4}±{se200:.4}, N=3200 {s3200:.4}±{se3200:.4} (gap {:.2} pooled SE); kernel smoothing N=3200 {k3200:.4}",
            (s200 - s3200) / pooled
        ),
    )
}

fn propensity() -> Outcome {
    let env = BanditEnvSpec::default();
    let espec = EnvSpec::Bandit(env.clone());
    let rc = ReferenceConfig::default();
    let reference = bandit_reference(&env, &rc);
    let pairs: Vec<(f64, f64)> = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let data = env.generate(800, seed).unwrap();
            let kc = KernelSmoothingConfig { action_box: env.policy_box(), seed, ..Default::default() };
            let truth = kernel_smoothing_baseline(&data, &env, &kc).unwrap();
            let fitted = EstimatedPropensity::fit(&data).unwrap();
            let est = kernel_smoothing_baseline(&data, &fitted, &kc).unwrap();
            let r = |p: &ParamPolicy| (reference - true_value(&espec, p, &rc).unwrap().value).max(0.0);
            (r(&truth.policy), r(&est.policy))
        })
        .collect();
    let (t, tse) = mean_se(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
    let (e, ese) = mean_se(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
    Outcome::new(e >= t, format!("estimated propensity {e:.4}±{ese:.4} vs true {t:.4}±{tse:.4}"))
}

fn adaptive_no_regression() -> Outcome {
    let env = BanditEnvSpec::default();
    let espec = EnvSpec::Bandit(env.clone());
    let rc = ReferenceConfig::default();
    let best = bandit_reference(&env, &rc);
    // class envelope: the in-class optimum and the worst of a random sweep
    let template = ParamPolicy::new(FeatureKind::Polynomial { degree: 1 }, env.state_dim, env.policy_box()).unwrap();
    let mut r = rng::seeded(99);
    let mut worst = f64::INFINITY;
    for i in 0..256 {
        let w: Vec<f64> = match i {
            0 => vec![-30.0, 0.0, 0.0],
            1 => vec![30.0, 0.0, 0.0],
            _ => (0..3).map(|_| 3.0 * r.sample::<f64, _>(StandardNormal)).collect(),
        };
        let p = template.clone().with_weights(w).unwrap();
        worst = worst.min(true_value(&espec, &p, &rc).unwrap().value);
    }
    let range = best - worst;
    let pairs: Vec<(f64, f64)> = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let data = env.generate(800, seed).unwrap().to_transitions();
            let mut cfg = AdaptiveConfig::default();
            cfg.steel.zeta = 0.05;
            cfg.steel.action_box = env.policy_box();
            cfg.steel.seed = seed;
            let res = adaptive_steel(&data, &cfg).unwrap();
            (
                true_value(&espec, &res.stage0.policy, &rc).unwrap().value,
                true_value(&espec, &res.result.policy, &rc).unwrap().value,
            )
        })
        .collect();
    let v0 = pairs.iter().map(|p| p.0).sum::<f64>() / 20.0;
    let v1 = pairs.iter().map(|p| p.1).sum::<f64>() / 20.0;
    Outcome::new(
        v1 >= v0 - 0.02 * range,
        format!("adaptive {v1:.4} vs stage-0 {v0:.4} (class range {range:.4}, N=800)"),
    )
}

fn pricing() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let scale = 1000.0;
    let results: Vec<(f64, f64)> = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let path = dir.path().join(format!("loans_{seed}.csv"));
            let records = generate_loan_records(2000, seed, &LoanDemandSpec::default()).unwrap();
            write_loan_records(&records, &path).unwrap();
            let loaded = load_loan_records(&path).unwrap();
            let ds = build_pricing_dataset(&loaded).unwrap().dataset.rescaled(1.0 / scale, 1.0 / scale).unwrap();
            let lo = ds.rows().iter().map(|r| r.action[0]).fold(0.0, f64::min);
            let hi = ds.rows().iter().map(|r| r.action[0]).fold(f64::NEG_INFINITY, f64::max);
            let cfg = BanditSteelConfig {
                zeta: 1e-3,
                eps1: Some(13f64.sqrt()),
                eps2: Some(4.0),
                reward_form: QForm::DemandStructured,
                reward_features: FeatureKind::Polynomial { degree: 1 },
                policy_features: FeatureKind::Polynomial { degree: 1 },
                action_box: ActionBox::new(vec![lo], vec![hi]).unwrap(),
                seed,
                ..Default::default()
            };
            let res = bandit_steel(&ds, &cfg).unwrap();
            // features: constant, then fico, amount, prime, competitor, term
            (res.policy.coefficient(1, 0), res.policy.coefficient(5, 0))
        })
        .collect();
    let good = results.iter().filter(|(f, t)| *f < 0.0 && *t > 0.0).count();
    Outcome::new(good >= 15, format!("{good}/20 seeds with fico < 0 and term > 0"))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let same = |name: &str, run: &dyn Fn() -> String| -> bool {
        let a = dir.path().join(format!("{name}_a.json"));
        let b = dir.path().join(format!("{name}_b.json"));
        std::fs::write(&a, run()).unwrap();
        std::fs::write(&b, run()).unwrap();
        std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap()
    };
    let menv = MdpEnvSpec::default();
    let mdata = menv.generate(10, 20, 2).unwrap();
    let scfg = SteelConfig {
        gamma: menv.gamma,
        zeta: 0.01,
        action_box: menv.action_box.clone(),
        max_outer_iters: 80,
        seed: 5,
        ..Default::default()
    };
    let benv = BanditEnvSpec::default();
    let bdata = benv.generate(300, 2).unwrap();
    let bcfg = BanditSteelConfig { zeta: 0.05, action_box: benv.policy_box(), seed: 5, ..Default::default() };
    let kc = KernelSmoothingConfig { action_box: benv.policy_box(), seed: 5, ..Default::default() };
    let rcfg = RegressionConfig { action_box: benv.policy_box(), ..Default::default() };
    let acfg = AdaptiveConfig { steel: scfg.clone(), ..Default::default() };
    let checks: Vec<(&str, bool)> = vec![
        ("steel", same("steel", &|| steel_optimize(&mdata, &scfg).unwrap().to_json().unwrap())),
        ("adaptive", same("adaptive", &|| serde_json::to_string(&adaptive_steel(&mdata, &acfg).unwrap()).unwrap())),
        ("bandit_steel", same("bandit", &|| bandit_steel(&bdata, &bcfg).unwrap().to_json().unwrap())),
        ("regression", same("regression", &|| serde_json::to_string(&regression_baseline(&bdata, &rcfg).unwrap()).unwrap())),
        ("kernel_smoothing", same("ks", &|| serde_json::to_string(&kernel_smoothing_baseline(&bdata, &benv, &kc).unwrap().policy).unwrap())),
        (
            "kernel_smoothing_estimated",
            same("kse", &|| {
                let p = EstimatedPropensity::fit(&bdata).unwrap();
                serde_json::to_string(&kernel_smoothing_baseline(&bdata, &p, &kc).unwrap().policy).unwrap()
            }),
        ),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    Outcome::new(
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} optimizers reproduce their result files byte for byte", checks.len())
        } else {
            format!("differing: {failed:?}")
        },
    )
}

type Criterion = (u32, &'static str, Option<Duration>, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        (1, "representer identity", Some(Duration::from_secs(10)), representer_identity),
        (2, "KRR oracle", Some(Duration::from_secs(10)), krr_oracle),
        (3, "MMD oracle", Some(Duration::from_secs(5)), mmd_oracle),
        (4, "gradient correctness", Some(Duration::from_secs(30)), gradient_check),
        (5, "feasibility decay", Some(Duration::from_secs(300)), feasibility_decay),
        (6, "weak duality", Some(Duration::from_secs(120)), weak_duality),
        (7, "regret decay under singularity", Some(Duration::from_secs(900)), regret_decay),
        (8, "estimated vs true propensity", Some(Duration::from_secs(300)), propensity),
        (9, "adaptive no-regression", Some(Duration::from_secs(900)), adaptive_no_regression),
        (10, "pricing stand-in", Some(Duration::from_secs(600)), pricing),
        (11, "determinism", None, determinism),
    ];
    // libtest flags such as --nocapture are ignored; bare numbers select criteria
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failures = 0;
    for (id, name, budget, check) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let in_budget = budget.is_none_or(|b| elapsed <= b);
        let pass = outcome.pass && in_budget;
        if !pass {
            failures += 1;
        }
        let budget_note = match budget {
            Some(b) if !in_budget => format!(", over budget {}s", b.as_secs()),
            _ => String::new(),
        };
        println!(
            "criterion {id:>2} {:<4} {name}: {} [{:.1}s{budget_note}]",
            if pass { "PASS" } else { "FAIL" },
            outcome.detail,
            elapsed.as_secs_f64()
        );
    }
    if failures > 0 {
        println!("{failures} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
