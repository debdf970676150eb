use atkd_core::{ModelConfig, TinyLM};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

const BATCH: usize = 8;
const SEQ: usize = 64;

fn configs() -> Vec<(&'static str, ModelConfig)> {
    let base = ModelConfig::student_default();
    vec![
        ("d32_l2", ModelConfig { context_len: SEQ, ..base }),
        (
            "d128_l4",
            ModelConfig {
                context_len: SEQ,
                ..ModelConfig::teacher_default()
            },
        ),
    ]
}

fn forward_backward(c: &mut Criterion) {
    let tokens: Vec<usize> = (0..BATCH * SEQ).map(|i| (i * 37 + 11) % 256).collect();
    let mut group = c.benchmark_group("tiny_lm");
    group.sample_size(10);
    group.throughput(Throughput::Elements(tokens.len() as u64));
    for (name, config) in configs() {
        let model = TinyLM::init(config).unwrap();
        group.bench_function(BenchmarkId::new("forward", name), |b| {
            b.iter(|| model.forward_batch(&tokens, BATCH).unwrap())
        });
        let upstream = vec![1e-3; tokens.len() * config.vocab_size];
        group.bench_function(BenchmarkId::new("forward_backward", name), |b| {
            b.iter(|| {
                let cache = model.forward_batch(&tokens, BATCH).unwrap();
                model.backward_cached(&cache, &upstream).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, forward_backward);
criterion_main!(benches);
