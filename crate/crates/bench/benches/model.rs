use std::hint::black_box;
use std::sync::Arc;

use codano_core::codano::{Codano, Head, ModelConfig};
use codano_core::diff::OptimizerState;
use codano_core::field::{GridFunction, Mesh};
use codano_core::simdata::{simulate, SimConfig, System};
use codano_core::train::{pretrain, TrainPlan};
use criterion::{criterion_group, criterion_main, Criterion};

fn config() -> ModelConfig {
    ModelConfig {
        variables: vec!["u_x".into(), "u_y".into()],
        d_en: 4,
        width: 16,
        heads: 2,
        d_k: 8,
        d_v: 16,
        modes: vec![8, 8],
        encoder_layers: 2,
        reconstructor_layers: 1,
        latent_grid: vec![16, 16],
        gno_hidden: vec![16],
        ..ModelConfig::default()
    }
}

fn samples(n: usize, count: usize) -> Vec<GridFunction> {
    let mesh = Arc::new(Mesh::periodic_box(vec![n, n]).unwrap());
    (0..count)
        .map(|s| {
            let t = s as f64 * 0.1;
            let f = GridFunction::from_fn(Arc::clone(&mesh), 2, |x| vec![(x[1] + t).sin(), (x[0] - t).cos()]).unwrap();
            GridFunction::with_variables(Arc::clone(&mesh), f.into_values(), vec!["u_x".into(), "u_y".into()]).unwrap()
        })
        .collect()
}

fn forward(c: &mut Criterion) {
    let model = Codano::new(config()).unwrap();
    let params = model.init_params().unwrap();
    let input = samples(32, 1);
    let refs: Vec<&GridFunction> = input.iter().collect();
    let query = Arc::clone(input[0].mesh());
    c.bench_function("codano_predict/32", |b| {
        b.iter(|| {
            model
                .predict(&params, black_box(&refs), &query, Head::Reconstructor)
                .unwrap()
        })
    });
}

fn train_epoch(c: &mut Criterion) {
    let model = Codano::new(config()).unwrap();
    let data = samples(32, 8);
    let plan = TrainPlan {
        epochs: 1,
        ..TrainPlan::default()
    };
    c.bench_function("pretrain_epoch/8x32", |b| {
        b.iter(|| {
            let mut params = model.init_params().unwrap();
            let mut opt = OptimizerState::new(plan.optimizer);
            pretrain(&model, &mut params, &mut opt, &data, &[], &plan, 0, &mut |_, _, _| {
                Ok(())
            })
            .unwrap()
        })
    });
}

fn simulators(c: &mut Criterion) {
    let mut g = c.benchmark_group("simulate");
    g.sample_size(10);
    for system in [System::Kolmogorov, System::RayleighBenard] {
        let cfg = SimConfig {
            system,
            resolution: 32,
            snapshots: 4,
            burn_in: Some(0.0),
            ..SimConfig::default()
        };
        g.bench_function(format!("{system:?}/32"), |b| {
            b.iter(|| simulate(black_box(&cfg)).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, forward, train_epoch, simulators);
criterion_main!(benches);
