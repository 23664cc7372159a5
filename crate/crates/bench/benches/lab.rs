use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use ndarray::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

use factorlab::analysis::{default_rcond_grid, fit_linear_readout, pca_spectrum};
use factorlab::config::presets;
use factorlab::datagen::{ground_truth_targets, sample_sequences, SampleSpec};
use factorlab::seqmodel::{
    next_token_targets, Adam, Arch, ModelConfig, SequenceModel, TrainConfig,
};

fn bench_compose(c: &mut Criterion) {
    let five = presets::five_factor_independent().build().unwrap();
    five.set_operator_cache_cap(1); // force rebuilds so the kron cost shows
    c.bench_function("joint_operator_5factor_kron", |b| {
        let mut token = 0usize;
        b.iter(|| {
            token = (token + 1) % 432;
            black_box(five.joint_operator(token).unwrap());
        })
    });

    let two = presets::two_mess3().build().unwrap();
    c.bench_function("joint_update_2mess3", |b| {
        let s = two.joint_initial();
        b.iter(|| black_box(two.joint_update(&s, 4).unwrap()))
    });
    c.bench_function("factored_update_2mess3", |b| {
        let s = two.factored_initial();
        b.iter(|| black_box(two.factored_update(&s, 4).unwrap()))
    });

    let joint5 = five.joint_initial();
    c.bench_function("joint_to_factored_5factor", |b| {
        b.iter(|| black_box(five.joint_to_factored(&joint5)))
    });
}

fn bench_datagen(c: &mut Criterion) {
    let five = presets::five_factor_independent().build().unwrap();
    c.bench_function("sample_1024x8_5factor", |b| {
        let mut seed = 0u64;
        b.iter(|| {
            seed += 1;
            black_box(sample_sequences(
                &five,
                &SampleSpec::new(1024, 8, seed, true),
            ))
        })
    });

    let batch = sample_sequences(&five, &SampleSpec::new(256, 8, 7, true));
    c.bench_function("targets_factored_256x8_5factor", |b| {
        b.iter(|| black_box(ground_truth_targets(&five, &batch, false).unwrap()))
    });
}

fn bench_analysis(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let acts = Array2::from_shape_fn((4096, 120), |_| rng.random::<f64>() - 0.5);
    c.bench_function("pca_spectrum_4096x120", |b| {
        b.iter(|| black_box(pca_spectrum(acts.view(), true).unwrap()))
    });

    let w = Array2::from_shape_fn((120, 6), |_| rng.random::<f64>() - 0.5);
    let y = acts.dot(&w);
    c.bench_function("fit_linear_readout_4096x120_to_6", |b| {
        b.iter(|| {
            black_box(
                fit_linear_readout(acts.view(), y.view(), &default_rcond_grid(), 10, None)
                    .unwrap(),
            )
        })
    });
}

fn bench_training(c: &mut Criterion) {
    let process = presets::two_mess3().build().unwrap();
    let cfg = ModelConfig {
        arch: Arch::Transformer,
        n_layers: 2,
        n_heads: 3,
        d_model: 48,
        vocab: 10,
        n_ctx: 9,
        init_seed: 0,
    };
    let batch = sample_sequences(&process, &SampleSpec::new(256, 8, 3, true));
    let targets = next_token_targets(batch.tokens.view());
    c.bench_function("transformer_train_step_256x9_d48", |b| {
        b.iter_batched(
            || {
                let model = SequenceModel::<f32>::build(cfg).unwrap();
                let adam = Adam::new(&TrainConfig::new(1, 256, 5e-4, 0), model.num_params());
                (model, adam)
            },
            |(mut model, mut adam)| {
                let (loss, grads) = model
                    .loss_and_grad(batch.tokens.view(), targets.view())
                    .unwrap();
                adam.step(model.params_mut(), &grads);
                black_box(loss);
            },
            BatchSize::LargeInput,
        )
    });
}

criterion_group!(
    benches,
    bench_compose,
    bench_datagen,
    bench_analysis,
    bench_training
);
criterion_main!(benches);
