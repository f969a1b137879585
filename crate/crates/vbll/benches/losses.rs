//! Loss and prediction benchmarks.
//!
//! Two questions worth tracking over time:
//! 1. How does one objective gradient step scale with the feature width for
//!    each head? Dense-factor heads should stay roughly quadratic in the
//!    width, the diagonal generative head roughly linear.
//! 2. What does the `parallel` feature buy on the per-row prediction and
//!    density loops? `map_indices` (rayon when enabled) is benchmarked
//!    against the always-sequential baseline on identical workloads.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use vbll::heads::{
    DiscriminativeConfig, DiscriminativeHead, GenerativeConfig, GenerativeHead, Head, RawHyper,
    RegressionConfig, RegressionHead, Targets,
};
use vbll::mathcore::Tape;
use vbll::psdparam::FactorLayout;
use vbll::util::{map_indices, map_indices_sequential};

const BATCH: usize = 64;
const N_CLASSES: usize = 10;

fn random_features(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

fn regression_head(n_features: usize, train_size: usize) -> Head {
    Head::Regression(
        RegressionHead::new(RegressionConfig {
            n_features,
            n_outputs: 2,
            posterior_layout: FactorLayout::Dense,
            noise_layout: FactorLayout::Dense,
            hyper: RawHyper::default(),
            train_size,
        })
        .unwrap(),
    )
}

fn discriminative_head(n_features: usize, train_size: usize) -> Head {
    Head::Discriminative(
        DiscriminativeHead::new(DiscriminativeConfig {
            n_features,
            n_classes: N_CLASSES,
            posterior_layout: FactorLayout::Dense,
            train_noise: true,
            hyper: RawHyper::default(),
            train_size,
        })
        .unwrap(),
    )
}

fn generative_head(n_features: usize, train_size: usize, labels: &[usize]) -> Head {
    let mut head = GenerativeHead::new(GenerativeConfig {
        n_features,
        n_classes: N_CLASSES,
        prior_concentration: 1.0,
        hyper: RawHyper::default(),
        train_size,
    })
    .unwrap();
    head.fit_class_posterior(labels).unwrap();
    Head::Generative(head)
}

/// One full objective evaluation with gradients: tape build, forward terms,
/// reverse sweep — the inner cost of a training step minus the optimizer.
fn objective_gradient(head: &Head, phi: &Array2<f64>, targets: &Targets) -> f64 {
    let mut tape = Tape::new();
    let phi_node = tape.constant2(phi);
    let vars: Vec<_> = head
        .params()
        .iter()
        .enumerate()
        .map(|(i, p)| tape.leaf(i, p.value.clone()))
        .collect();
    let terms = head.objective_terms(&mut tape, phi_node, targets, &vars).unwrap();
    let objective = terms.objective(&mut tape, head.kl_weight(), head.train_size());
    let loss = tape.neg(objective);
    let grads = tape.backward(loss).unwrap();
    let _ = grads;
    tape.scalar_value(loss)
}

fn bench_loss_gradients(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let labels: Vec<usize> = (0..BATCH).map(|i| i % N_CLASSES).collect();

    let mut group = c.benchmark_group("loss_gradient");
    group.sample_size(20);
    for &n_features in &[64usize, 128, 256] {
        let phi = random_features(BATCH, n_features, &mut rng);
        let y_real = random_features(BATCH, 2, &mut rng);
        let real_targets = Targets::Real(y_real);
        let class_targets = Targets::Class(labels.clone());

        let head = regression_head(n_features, 1000);
        group.bench_with_input(
            BenchmarkId::new("regression_dense", n_features),
            &n_features,
            |b, _| b.iter(|| objective_gradient(&head, &phi, &real_targets)),
        );

        let head = discriminative_head(n_features, 1000);
        group.bench_with_input(
            BenchmarkId::new("discriminative_dense", n_features),
            &n_features,
            |b, _| b.iter(|| objective_gradient(&head, &phi, &class_targets)),
        );

        let head = generative_head(n_features, 1000, &labels);
        group.bench_with_input(
            BenchmarkId::new("generative_diagonal", n_features),
            &n_features,
            |b, _| b.iter(|| objective_gradient(&head, &phi, &class_targets)),
        );
    }
    group.finish();
}

fn bench_parallel_maps(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n_features = 128;
    let rows = 2048;
    let phi = random_features(rows, n_features, &mut rng);
    let labels: Vec<usize> = (0..rows).map(|i| i % N_CLASSES).collect();

    let reg = match regression_head(n_features, 1000) {
        Head::Regression(h) => h,
        _ => unreachable!(),
    };
    let gen = match generative_head(n_features, 1000, &labels) {
        Head::Generative(h) => h,
        _ => unreachable!(),
    };

    let mut group = c.benchmark_group("row_map");
    group.sample_size(30);
    group.throughput(Throughput::Elements(rows as u64));

    group.bench_function("predict/parallel", |b| {
        b.iter(|| -> Vec<(Array1<f64>, f64)> {
            map_indices(rows, |i| reg.predict(phi.row(i)))
        })
    });
    group.bench_function("predict/sequential", |b| {
        b.iter(|| -> Vec<(Array1<f64>, f64)> {
            map_indices_sequential(rows, |i| reg.predict(phi.row(i)))
        })
    });

    group.bench_function("feature_density/parallel", |b| {
        b.iter(|| -> Vec<f64> {
            map_indices(rows, |i| gen.feature_log_density(phi.row(i), true))
        })
    });
    group.bench_function("feature_density/sequential", |b| {
        b.iter(|| -> Vec<f64> {
            map_indices_sequential(rows, |i| gen.feature_log_density(phi.row(i), true))
        })
    });

    group.finish();
}

criterion_group!(benches, bench_loss_gradients, bench_parallel_maps);
criterion_main!(benches);
