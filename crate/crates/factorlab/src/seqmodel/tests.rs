use ndarray::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::compose::ComposedProcess;
use crate::ghmm::{make_mess3, Mess3Params};
use crate::seqmodel::train::{next_token_targets, train};

fn tiny_cfg(arch: Arch) -> ModelConfig {
    ModelConfig {
        arch,
        n_layers: 2,
        n_heads: 2,
        d_model: 8,
        vocab: 5,
        n_ctx: 6,
        init_seed: 7,
    }
}

fn random_tokens(b: usize, p: usize, vocab: u32, seed: u64) -> Array2<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((b, p), |_| rng.random_range(0..vocab))
}

fn mess3_process() -> ComposedProcess {
    ComposedProcess::single(make_mess3(Mess3Params { alpha: 0.6, x: 0.15 }).unwrap()).unwrap()
}

// Sharper parameters leave ~0.24 nats between the unigram baseline and the
// entropy rate; the default (0.6, 0.15) gap is only ~0.009 nats, too small
// for a trainability check.
fn sharp_mess3_params() -> Mess3Params {
    Mess3Params { alpha: 0.85, x: 0.05 }
}

fn sharp_mess3_process() -> ComposedProcess {
    ComposedProcess::single(make_mess3(sharp_mess3_params()).unwrap()).unwrap()
}

#[test]
fn reference_presets_have_expected_shapes() {
    let small = ModelConfig::reference_small(0);
    assert_eq!(small.n_layers, 4);
    assert_eq!(small.n_heads, 3);
    assert_eq!(small.d_model, 120);
    assert_eq!(small.d_ff(), 480);
    assert_eq!(small.d_head(), 40);
    assert_eq!(small.vocab, 433);
    let large = ModelConfig::reference_large(0);
    assert_eq!(large.d_model, 480);
    assert_eq!(large.d_ff(), 1920);

    let protocol = TrainConfig::full_scale(500_000, 0);
    assert_eq!(protocol.batch_size, 25_000);
    assert_eq!(protocol.lr, 5e-4);
    assert_eq!(protocol.weight_decay, 0.0);
}

#[test]
fn build_rejects_indivisible_heads() {
    let mut cfg = tiny_cfg(Arch::Transformer);
    cfg.n_heads = 3; // 8 % 3 != 0
    assert!(SequenceModel::<f32>::build(cfg).is_err());
}

#[test]
fn same_seed_builds_identical_models() {
    let cfg = tiny_cfg(Arch::Transformer);
    let a = SequenceModel::<f32>::build(cfg).unwrap();
    let b = SequenceModel::<f32>::build(cfg).unwrap();
    assert_eq!(a.params().data(), b.params().data());
    let mut cfg2 = cfg;
    cfg2.init_seed = 8;
    let c = SequenceModel::<f32>::build(cfg2).unwrap();
    assert_ne!(a.params().data(), c.params().data());
}

#[test]
fn grad_check_transformer() {
    let mut m = SequenceModel::<f64>::build(tiny_cfg(Arch::Transformer)).unwrap();
    assert!(m.num_params() <= 5000, "gradcheck model too big: {}", m.num_params());
    let tokens = random_tokens(3, 5, 5, 1);
    let targets = next_token_targets(tokens.view());
    let err = grad_check(&mut m, tokens.view(), targets.view(), &GradCheckConfig::default())
        .unwrap();
    assert!(err < 1e-5, "transformer gradient error {err}");
}

#[test]
fn grad_check_rnn() {
    let mut m = SequenceModel::<f64>::build(tiny_cfg(Arch::Rnn)).unwrap();
    let tokens = random_tokens(3, 5, 5, 2);
    let targets = next_token_targets(tokens.view());
    let err = grad_check(&mut m, tokens.view(), targets.view(), &GradCheckConfig::default())
        .unwrap();
    assert!(err < 1e-5, "rnn gradient error {err}");
}

#[test]
fn grad_check_rnn_single_step() {
    let mut m = SequenceModel::<f64>::build(ModelConfig {
        n_layers: 1,
        n_ctx: 1,
        ..tiny_cfg(Arch::Rnn)
    })
    .unwrap();
    // one position, loss on it via a two-column trick is impossible; use
    // a single position with itself as "target" of position 0
    let tokens = random_tokens(4, 1, 5, 3);
    let mut targets = Array2::from_elem((4, 1), NO_TARGET);
    for i in 0..4 {
        targets[[i, 0]] = (tokens[[i, 0]] + 1) % 5;
    }
    let err = grad_check(&mut m, tokens.view(), targets.view(), &GradCheckConfig::default())
        .unwrap();
    assert!(err < 1e-5, "single-step rnn gradient error {err}");
}

#[test]
fn grad_check_lstm() {
    let mut m = SequenceModel::<f64>::build(tiny_cfg(Arch::Lstm)).unwrap();
    let tokens = random_tokens(3, 5, 5, 4);
    let targets = next_token_targets(tokens.view());
    let err = grad_check(&mut m, tokens.view(), targets.view(), &GradCheckConfig::default())
        .unwrap();
    assert!(err < 1e-5, "lstm gradient error {err}");
}

#[test]
fn transformer_is_causal() {
    let m = SequenceModel::<f64>::build(tiny_cfg(Arch::Transformer)).unwrap();
    let tokens = random_tokens(2, 6, 5, 5);
    let mut permuted = tokens.clone();
    // permute the suffix after position 2
    permuted[[0, 3]] = tokens[[0, 5]];
    permuted[[0, 5]] = tokens[[0, 3]];
    permuted[[1, 4]] = tokens[[1, 5]];
    permuted[[1, 5]] = tokens[[1, 4]];
    let a = m.forward_with_capture(tokens.view(), &[]).unwrap().logits;
    let b = m.forward_with_capture(permuted.view(), &[]).unwrap().logits;
    for i in 0..2 {
        for j in 0..=2 {
            for v in 0..5 {
                assert_eq!(a[[i, j, v]], b[[i, j, v]], "logit changed at {i},{j},{v}");
            }
        }
    }
}

#[test]
fn recurrent_is_causal() {
    for arch in [Arch::Rnn, Arch::Lstm] {
        let m = SequenceModel::<f64>::build(tiny_cfg(arch)).unwrap();
        let tokens = random_tokens(2, 6, 5, 6);
        let mut permuted = tokens.clone();
        permuted[[0, 4]] = tokens[[0, 5]];
        permuted[[0, 5]] = tokens[[0, 4]];
        let a = m.forward_with_capture(tokens.view(), &[]).unwrap().logits;
        let b = m.forward_with_capture(permuted.view(), &[]).unwrap().logits;
        for j in 0..=3 {
            for v in 0..5 {
                assert_eq!(a[[0, j, v]], b[[0, j, v]]);
            }
        }
    }
}

#[test]
fn captures_do_not_perturb_logits() {
    let m = SequenceModel::<f32>::build(tiny_cfg(Arch::Transformer)).unwrap();
    let tokens = random_tokens(3, 6, 5, 7);
    let plain = m.forward_with_capture(tokens.view(), &[]).unwrap();
    let wanted = [
        CapturePoint::Embed,
        CapturePoint::ResidPost(0),
        CapturePoint::ResidPost(1),
        CapturePoint::FinalPrenorm,
        CapturePoint::Logits,
    ];
    let traced = m.forward_with_capture(tokens.view(), &wanted).unwrap();
    assert_eq!(plain.logits, traced.logits);
    assert_eq!(traced.captures.len(), 5);
    for (point, arr) in &traced.captures {
        match point {
            CapturePoint::Logits => assert_eq!(arr.dim(), (3, 6, 5)),
            _ => assert_eq!(arr.dim(), (3, 6, 8)),
        }
    }
    // final_prenorm aliases the last block's residual stream
    let rp1 = &traced.captures[2].1;
    let fpn = &traced.captures[3].1;
    assert_eq!(rp1, fpn);
}

#[test]
fn unknown_capture_point_is_rejected() {
    let m = SequenceModel::<f32>::build(tiny_cfg(Arch::Transformer)).unwrap();
    let tokens = random_tokens(1, 3, 5, 8);
    let res = m.forward_with_capture(tokens.view(), &[CapturePoint::ResidPost(9)]);
    assert!(matches!(res, Err(crate::Error::UnknownCapturePoint(_))));
    assert!("resid_post.1".parse::<CapturePoint>().is_ok());
    assert!("blocks.1.weird".parse::<CapturePoint>().is_err());
}

#[test]
fn zero_readout_bias_gradient_matches_softmax_formula() {
    // With a zeroed unembedding the logits vanish, the softmax is uniform,
    // and d loss / d unembed.b[t] = (count/V - n_t) / count.
    let mut m = SequenceModel::<f64>::build(tiny_cfg(Arch::Transformer)).unwrap();
    for name in ["unembed.w", "unembed.b"] {
        m.params_mut()
            .slice_of_mut(name)
            .unwrap()
            .iter_mut()
            .for_each(|v| *v = 0.0);
    }
    let tokens = random_tokens(4, 6, 5, 9);
    let targets = next_token_targets(tokens.view());
    let (_, grads) = m.loss_and_grad(tokens.view(), targets.view()).unwrap();
    let gb = grads.view1("unembed.b").unwrap();
    let mut n_t = [0usize; 5];
    let mut count = 0usize;
    for &t in targets.iter() {
        if t != NO_TARGET {
            n_t[t as usize] += 1;
            count += 1;
        }
    }
    for t in 0..5 {
        let expected = (count as f64 / 5.0 - n_t[t] as f64) / count as f64;
        assert!(
            (gb[t] - expected).abs() < 1e-12,
            "bias grad {} vs {expected}",
            gb[t]
        );
    }
}

#[test]
fn embedding_matrix_shape_and_flat_initial_spectrum() {
    use ndarray_linalg::{JobSvd, SVDDC};
    let m = SequenceModel::<f32>::build(ModelConfig {
        vocab: 433,
        d_model: 48,
        n_heads: 2,
        ..tiny_cfg(Arch::Transformer)
    })
    .unwrap();
    let e = m.embedding_matrix().mapv(|v| v as f64);
    assert_eq!(e.dim(), (433, 48));
    let (_, s, _) = e.svddc(JobSvd::None).unwrap();
    let smax = s[0];
    let smin = s[s.len() - 1];
    assert!(
        smax / smin < 4.0,
        "initial spectrum not flat: {smax} / {smin}"
    );
}

#[test]
fn zero_learning_rate_freezes_parameters() {
    let process = mess3_process();
    let cfg = ModelConfig {
        vocab: 4,
        ..tiny_cfg(Arch::Transformer)
    };
    let mut m = SequenceModel::<f32>::build(cfg).unwrap();
    let before = m.params().data().to_vec();
    let tc = TrainConfig::new(5, 16, 0.0, 3);
    train(&mut m, &process, &tc, 4, None).unwrap();
    assert_eq!(m.params().data(), &before[..]);
}

#[test]
fn deterministic_and_threaded_training_agree() {
    let process = mess3_process();
    let cfg = ModelConfig {
        vocab: 4,
        ..tiny_cfg(Arch::Transformer)
    };
    let mut tc = TrainConfig::new(8, 32, 5e-4, 11);
    tc.deterministic = true;
    let mut a = SequenceModel::<f32>::build(cfg).unwrap();
    train(&mut a, &process, &tc, 4, None).unwrap();
    tc.deterministic = false;
    let mut b = SequenceModel::<f32>::build(cfg).unwrap();
    train(&mut b, &process, &tc, 4, None).unwrap();
    assert_eq!(a.params().data(), b.params().data());
}

#[test]
fn training_beats_unigram_entropy_on_mess3() {
    // Mess3 has temporal structure, so a trained model must do better than
    // the ln 3 unigram baseline (the stationary distribution is uniform, so
    // the unigram entropy is exactly ln 3 for any parameters).
    let process = sharp_mess3_process();
    let cfg = ModelConfig {
        arch: Arch::Transformer,
        n_layers: 1,
        n_heads: 2,
        d_model: 16,
        vocab: 4,
        n_ctx: 9,
        init_seed: 5,
    };
    let mut m = SequenceModel::<f32>::build(cfg).unwrap();
    let tc = TrainConfig::new(2000, 256, 5e-4, 21);
    train(&mut m, &process, &tc, 8, None).unwrap();

    // evaluate on a large fresh batch
    let spec = crate::datagen::SampleSpec {
        m: 8192,
        l: 8,
        seed: 999,
        stream_offset: 0,
        bos: true,
    };
    let batch = crate::datagen::sample_sequences(&process, &spec);
    let targets = next_token_targets(batch.tokens.view());
    let loss = m.loss(batch.tokens.view(), targets.view()).unwrap();
    let ln3 = 3.0f64.ln();
    assert!(loss < ln3, "loss {loss} did not beat unigram {ln3}");

    // ... and cannot beat the exact conditional entropy of the process.
    let g = make_mess3(sharp_mess3_params()).unwrap();
    let mut bound = 0.0;
    for l in 0..8usize {
        let states = g.enumerate_states(l, 1 << 22).unwrap();
        let mut h_l = 0.0;
        for (ctx, state) in &states {
            if ctx.len() != l {
                continue;
            }
            let pw = g.sequence_probability(ctx).unwrap();
            let dist = g.next_token_distribution(state);
            let h: f64 = dist
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| -p * p.ln())
                .sum();
            h_l += pw * h;
        }
        bound += h_l;
    }
    bound /= 8.0;
    // 3 sigma of the eval estimate
    assert!(
        loss >= bound - 0.01,
        "loss {loss} beneath entropy bound {bound}"
    );
}

#[test]
fn rnn_and_lstm_training_smoke() {
    let process = sharp_mess3_process();
    for arch in [Arch::Rnn, Arch::Lstm] {
        let cfg = ModelConfig {
            arch,
            n_layers: 2,
            n_heads: 1,
            d_model: 16,
            vocab: 3, // no BOS for recurrent models
            n_ctx: 8,
            init_seed: 1,
        };
        let mut m = SequenceModel::<f32>::build(cfg).unwrap();
        let spec = crate::datagen::SampleSpec {
            m: 2048,
            l: 8,
            seed: 777,
            stream_offset: 0,
            bos: false,
        };
        let eval = crate::datagen::sample_sequences(&process, &spec);
        let targets = next_token_targets(eval.tokens.view());
        let before = m.loss(eval.tokens.view(), targets.view()).unwrap();
        let mut tc = TrainConfig::new(800, 128, 5e-4, 13);
        tc.lr = 2e-3;
        train(&mut m, &process, &tc, 8, None).unwrap();
        let after = m.loss(eval.tokens.view(), targets.view()).unwrap();
        assert!(
            after < before - 0.01,
            "{arch:?}: loss did not improve ({before} -> {after})"
        );
    }
}

#[test]
fn checkpoints_round_trip_through_disk() {
    let dir = std::env::temp_dir().join(format!("factorlab-ckpt-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let process = mess3_process();
    let cfg = ModelConfig {
        vocab: 4,
        ..tiny_cfg(Arch::Transformer)
    };
    let mut m = SequenceModel::<f32>::build(cfg).unwrap();
    let mut tc = TrainConfig::new(6, 32, 5e-4, 17);
    tc.checkpoint_stride = Some(3);
    let outcome = train(&mut m, &process, &tc, 4, Some(&dir)).unwrap();
    assert_eq!(outcome.checkpoint_steps, vec![0, 3, 6]);
    assert!(dir.join("training.csv").exists());
    // metrics rows at 0, 3, 6 with increasing steps
    assert_eq!(outcome.metrics.rows.len(), 3);

    let mut reloaded = SequenceModel::<f32>::build(cfg).unwrap();
    crate::io::load_params(
        &dir.join("checkpoints").join("step-0000006.ckpt"),
        reloaded.params_mut(),
    )
    .unwrap();
    assert_eq!(reloaded.params().data(), m.params().data());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn poisoned_parameters_abort_with_nonfinite_loss() {
    let process = mess3_process();
    let cfg = ModelConfig {
        vocab: 4,
        ..tiny_cfg(Arch::Transformer)
    };
    let mut m = SequenceModel::<f32>::build(cfg).unwrap();
    m.params_mut().data_mut()[0] = f32::NAN;
    let tc = TrainConfig::new(3, 8, 5e-4, 1);
    let res = train(&mut m, &process, &tc, 4, None);
    assert!(matches!(res, Err(crate::Error::NonFiniteLoss { step: 0, .. })));
}

#[test]
fn vocab_mismatch_is_rejected() {
    let process = mess3_process();
    let cfg = tiny_cfg(Arch::Transformer); // vocab 5, process wants 4
    let mut m = SequenceModel::<f32>::build(cfg).unwrap();
    let tc = TrainConfig::new(1, 8, 5e-4, 1);
    assert!(train(&mut m, &process, &tc, 4, None).is_err());
}
