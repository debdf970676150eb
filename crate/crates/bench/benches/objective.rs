use atkd_core::{batch_decompose, loss_grad, LogitBatch, ObjectiveConfig, ObjectiveMode};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_batch(tokens: usize, classes: usize) -> LogitBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut logits = |n| (0..n).map(|_| rng.random_range(-4.0..4.0)).collect::<Vec<f64>>();
    let teacher = logits(tokens * classes);
    let student = logits(tokens * classes);
    let targets = (0..tokens).map(|t| (t * 31) % classes).collect();
    LogitBatch::unmasked(tokens, classes, teacher, student, targets).unwrap()
}

fn decomposition(c: &mut Criterion) {
    let mut group = c.benchmark_group("decompose");
    for classes in [17, 256, 4096] {
        let batch = random_batch(512, classes);
        group.throughput(Throughput::Elements(512));
        group.bench_with_input(BenchmarkId::from_parameter(classes), &batch, |b, batch| {
            b.iter(|| batch_decompose(batch))
        });
    }
    group.finish();
}

fn objective_grad(c: &mut Criterion) {
    let batch = random_batch(512, 256);
    let mut group = c.benchmark_group("loss_grad");
    group.throughput(Throughput::Elements(512));
    for mode in [ObjectiveMode::ForwardKl, ObjectiveMode::TkdPlusDkd, ObjectiveMode::Atkd] {
        let cfg = ObjectiveConfig::new(mode);
        group.bench_with_input(BenchmarkId::from_parameter(mode.name()), &cfg, |b, cfg| {
            b.iter(|| loss_grad(&batch, cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, decomposition, objective_grad);
criterion_main!(benches);
