use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng;
use rand_distr::StandardNormal;

use steel_core::funcapprox::{FeatureKind, ParamPolicy};
use steel_core::kernel::{gram_with, KernelSpec};
use steel_core::par::Execution;
use steel_core::rng;
use steel_core::sim::{mc_policy_value_with, EnvSpec, MdpEnvSpec};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn gram(c: &mut Criterion) {
    let mut group = c.benchmark_group("gram");
    let spec = KernelSpec::gaussian(1.0).unwrap();
    let mut r = rng::seeded(0);
    for n in [250usize, 1000] {
        let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| r.sample(StandardNormal)).collect()).collect();
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, n), &pts, |b, pts| {
                b.iter(|| gram_with(&spec, pts, exec).unwrap())
            });
        }
    }
    group.finish();
}

fn rollouts(c: &mut Criterion) {
    let mut group = c.benchmark_group("mc_rollouts");
    let mdp = MdpEnvSpec::default();
    let policy = ParamPolicy::new(FeatureKind::Polynomial { degree: 1 }, 1, mdp.action_box.clone())
        .unwrap()
        .with_weights(vec![0.2, -0.5])
        .unwrap();
    let env = EnvSpec::Mdp(mdp.clone());
    for (name, exec) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| mc_policy_value_with(&env, &policy, mdp.gamma, 60, 4000, 1, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = gram, rollouts
}
criterion_main!(benches);
