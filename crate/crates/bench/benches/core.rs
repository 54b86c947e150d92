use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use ratnet_core::datagen::{features_of, labels_of, TaskDataset};
use ratnet_core::diffcore::Tape;
use ratnet_core::federated::{aggregate, aggregation_weights, Site, Weighting};
use ratnet_core::metrics::{auc, ScoredLabels};
use ratnet_core::model::{forward_graph, BoundModel, ModelConfig, ModelState};
use ratnet_core::training::{composite_graph, pretrain, registry_of, LossWeights, TrainConfig};

fn forward_backward(c: &mut Criterion) {
    let bench = ratnet_bench::three_task();
    let tasks: Vec<&TaskDataset> = bench.pretrain.iter().collect();
    let state = ModelState::new(ModelConfig::default(), &registry_of(&tasks), 7).unwrap();
    let ds = tasks[0];
    let batch = &ds.train[..32];
    let x = features_of(batch);
    let y = labels_of(batch);
    c.bench_function("forward_backward_batch32", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let m = BoundModel::bind(&state, &mut tape, true);
            let xv = tape.leaf(&x);
            let f = forward_graph(&mut tape, &m, xv, Some(0)).unwrap();
            let loss = composite_graph(&mut tape, m.kb, &f, &y, 0, None, &LossWeights::default()).unwrap();
            tape.backward(loss.total).unwrap();
            black_box(tape.grad(m.kb).map(|g| g[0]))
        })
    });
}

fn pretrain_epoch(c: &mut Criterion) {
    let bench = ratnet_bench::three_task();
    let tasks: Vec<&TaskDataset> = bench.pretrain.iter().collect();
    let cfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let mut g = c.benchmark_group("pretrain");
    g.sample_size(10);
    g.bench_function("one_cyclic_epoch_three_tasks", |b| {
        b.iter(|| black_box(pretrain(&tasks, ModelConfig::default(), &cfg).unwrap()))
    });
    g.finish();
}

fn auc_10k(c: &mut Criterion) {
    let n = 10_000;
    let scores: Vec<f64> = (0..n).map(|i| ((i * 7919) % 1000) as f64 / 1000.0).collect();
    let labels: Vec<bool> = (0..n).map(|i| (i * 31) % 3 == 0).collect();
    let sl = ScoredLabels::new(scores, labels).unwrap();
    c.bench_function("auc_10k", |b| b.iter(|| black_box(auc(&sl).unwrap())));
}

fn federated_aggregate(c: &mut Criterion) {
    let bench = ratnet_bench::three_task();
    let sites: Vec<Site> = bench
        .pretrain
        .iter()
        .enumerate()
        .map(|(i, t)| Site::new(format!("s{i}"), vec![t.clone()]).unwrap())
        .collect();
    let tasks: Vec<&TaskDataset> = bench.pretrain.iter().collect();
    let registry = registry_of(&tasks);
    let global = ModelState::new(ModelConfig::default(), &registry, 1).unwrap();
    let students: Vec<ModelState> = (0..3)
        .map(|s| ModelState::new(ModelConfig::default(), &registry, 10 + s).unwrap())
        .collect();
    let counts: Vec<usize> = sites.iter().map(Site::sample_count).collect();
    let w = aggregation_weights(&counts, Weighting::BySampleCount).unwrap();
    c.bench_function("aggregate_three_sites", |b| {
        b.iter_batched(
            || students.clone(),
            |st| black_box(aggregate(&global, &st, &sites, &w).unwrap()),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, forward_backward, pretrain_epoch, auc_10k, federated_aggregate);
criterion_main!(benches);
