use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use mce_core::baselines::em_search;
use mce_core::synth::{generate, GeneratorKind, GeneratorSpec};
use mce_core::{message_length, Assignment, Budget, Ensemble, EnsembleConfig, Execution};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn message_length_large(c: &mut Criterion) {
    let g = generate(&GeneratorSpec::new(GeneratorKind::SixGauss, 0.5, 5000, 1)).unwrap();
    let a = Assignment::new(g.labels.clone(), 6).unwrap();
    let model = &g.truth;
    let row_loglik = |i: usize| {
        let x = black_box(g.data.row(i));
        let mix: f64 = (0..model.k())
            .map(|j| model.weights()[j] * model.class(j).iter().zip(x).map(|(p, &v)| p.density(v)).product::<f64>())
            .sum();
        mix.ln()
    };
    let mut group = c.benchmark_group("rows_30k");
    for (name, mode) in MODES {
        group.bench_function(format!("loglik_{name}"), |b| b.iter(|| mode.sum_rows(g.data.n_obs(), row_loglik)));
    }
    group.bench_function("message_length", |b| b.iter(|| message_length(&g.data, &a, &g.truth, 6).unwrap()));
    group.finish();
}

fn ensemble_estimate(c: &mut Criterion) {
    let g = generate(&GeneratorSpec::new(GeneratorKind::TwoGauss2d, 0.5, 200, 2)).unwrap();
    let mut group = c.benchmark_group("ensemble_estimate_all");
    group.sample_size(10);
    for (name, execution) in MODES {
        let config = EnsembleConfig { burn_in: 50, samples: 100, segment: 20, seed: 1, temperature: 1.0, execution };
        group.bench_with_input(BenchmarkId::from_parameter(name), &config, |b, &config| {
            b.iter(|| {
                let mut ens = Ensemble::new(&g.data, 1, 6, config).unwrap();
                ens.estimate_all(&g.data).unwrap()
            })
        });
    }
    group.finish();
}

fn em_restarts(c: &mut Criterion) {
    let g = generate(&GeneratorSpec::new(GeneratorKind::SixGauss, 0.5, 100, 3)).unwrap();
    let mut group = c.benchmark_group("em_search_12_runs");
    group.sample_size(10);
    for (name, mode) in MODES {
        group.bench_function(name, |b| b.iter(|| em_search(&g.data, 1, 6, Budget::Runs(12), 4, mode).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, message_length_large, ensemble_estimate, em_restarts);
criterion_main!(benches);
