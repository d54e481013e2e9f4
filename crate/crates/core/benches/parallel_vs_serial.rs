use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use lngeom::attnet::{batch_backward, AttnModel, ModelShape};
use lngeom::experiments::{gen_majority_dataset, MajorityConfig};
use lngeom::rng::stream;
use lngeom::selectability::monte_carlo_sweep_with;
use lngeom::{Exec, LayerNormVariant};

const EXECS: [(&str, Exec); 2] = [("serial", Exec::Serial), ("parallel", Exec::Parallel)];

fn sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("sweep");
    group.sample_size(10);
    let n_values: Vec<usize> = (2..=64).step_by(6).collect();
    let d_values = [2, 4, 8];
    for (name, exec) in EXECS {
        for ln in [false, true] {
            let id = BenchmarkId::new(name, if ln { "layernorm" } else { "raw" });
            group.bench_with_input(id, &ln, |b, &ln| {
                b.iter(|| monte_carlo_sweep_with(&n_values, &d_values, 10, 0, ln, exec).unwrap())
            });
        }
    }
    group.finish();
}

fn backward(c: &mut Criterion) {
    let cfg = MajorityConfig {
        train_size: 256,
        test_size: 1,
        ..Default::default()
    };
    let data = gen_majority_dataset(&cfg, 0).unwrap();
    let shape = ModelShape {
        vocab: cfg.n_classes,
        d: cfg.d,
        k_out: cfg.n_classes,
        max_len: None,
    };
    let model = AttnModel::init(shape, LayerNormVariant::FULL, false, 0.1, &mut stream(0, &[])).unwrap();
    let batch: Vec<(&[usize], &[usize])> = data
        .train
        .iter()
        .map(|e| (e.tokens.as_slice(), e.labels.as_slice()))
        .collect();
    let mut group = c.benchmark_group("batch_backward");
    for (name, exec) in EXECS {
        group.bench_function(name, |b| b.iter(|| batch_backward(&model, &batch, exec).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, sweep, backward);
criterion_main!(benches);
