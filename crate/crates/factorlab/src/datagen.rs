//! Sequence sampling with exact ground-truth targets.
//!
//! Sampling is reproducible and order-independent: every sequence draws from
//! its own counter-indexed ChaCha stream (`seed` picks the key, the sequence
//! index picks the stream), so a batch is bit-identical however the work is
//! scheduled across threads.
//!
//! In the noisy regime the generator's latent factors evolve by the *clean*
//! emitted sub-tokens while the recorded token is the channel output; the
//! matching ground-truth beliefs are therefore computed with the mixture
//! operators on the *observed* tokens, which is the observer's correct
//! Bayesian update.

use ndarray::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::compose::{ComposedProcess, Regime};
use crate::ghmm::Ghmm;
use crate::{Error, Result};

/// What to sample: `m` sequences of `l` tokens, optionally BOS-prefixed.
///
/// `stream_offset` shifts the per-sequence stream indices; the training loop
/// uses `step * batch_size` so every step sees fresh, reproducible data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleSpec {
    pub m: usize,
    pub l: usize,
    pub seed: u64,
    pub stream_offset: u64,
    pub bos: bool,
}

impl SampleSpec {
    pub fn new(m: usize, l: usize, seed: u64, bos: bool) -> Self {
        Self {
            m,
            l,
            seed,
            stream_offset: 0,
            bos,
        }
    }
}

/// Sampled token sequences: `m x (l + 1)` with BOS in column 0 when enabled,
/// otherwise `m x l`.
#[derive(Debug, Clone)]
pub struct SequenceBatch {
    pub tokens: Array2<u32>,
    pub l: usize,
    pub bos: bool,
    pub seed: u64,
    pub fingerprint: String,
}

impl SequenceBatch {
    /// Number of sequences.
    pub fn m(&self) -> usize {
        self.tokens.nrows()
    }

    /// The non-BOS token columns.
    pub fn payload(&self) -> ArrayView2<'_, u32> {
        let start = usize::from(self.bos);
        self.tokens.slice(s![.., start..])
    }
}

/// Exact per-position belief-state targets aligned to tokens `1..=l`
/// (the BOS position is excluded).
#[derive(Debug, Clone)]
pub struct TargetBatch {
    /// `m x l x sum(d_n)` concatenated per-factor predictive vectors.
    pub factored: Array3<f64>,
    /// `m x l x prod(d_n)` joint predictive vectors, when requested.
    pub joint: Option<Array3<f64>>,
    pub factor_dims: Vec<usize>,
}

/// Sample i.i.d. sequences from the composition.
///
/// Sub-tokens are drawn factor by factor in chain order from each factor's
/// current belief, the factor states advance through the emitted (clean)
/// operators, and in the noisy regime the recorded token is then corrupted by
/// the uniform replacement channel.
pub fn sample_sequences(process: &ComposedProcess, spec: &SampleSpec) -> SequenceBatch {
    let cols = spec.l + usize::from(spec.bos);
    let bos_id = process.codec().bos_id() as u32;
    let rows: Vec<Vec<u32>> = (0..spec.m)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(spec.stream_offset + i as u64);
            sample_one(process, spec.l, &mut rng)
        })
        .collect();
    let mut tokens = Array2::zeros((spec.m, cols));
    for (i, row) in rows.iter().enumerate() {
        let mut j = 0;
        if spec.bos {
            tokens[[i, 0]] = bos_id;
            j = 1;
        }
        for &t in row {
            tokens[[i, j]] = t;
            j += 1;
        }
    }
    SequenceBatch {
        tokens,
        l: spec.l,
        bos: spec.bos,
        seed: spec.seed,
        fingerprint: process.fingerprint(),
    }
}

/// One sequence of observed tokens (length `l`).
pub(crate) fn sample_one(process: &ComposedProcess, l: usize, rng: &mut ChaCha8Rng) -> Vec<u32> {
    let n_factors = process.n_factors();
    let k = process.codec().n_tokens();
    let mut locals: Vec<Array1<f64>> = (0..n_factors)
        .map(|n| process.factor(n).initial().clone())
        .collect();
    let mut subs = vec![0usize; n_factors];
    let mut out = Vec::with_capacity(l);
    for _ in 0..l {
        for n in 0..n_factors {
            let control = if n == 0 { 0 } else { subs[n - 1] };
            let g = match process.regime() {
                Regime::Chain => process.factor(n).variant(control),
                _ => process.factor(n).variant(0),
            };
            let z = sample_sub_token(g, &locals[n], rng);
            let pushed = locals[n].dot(&g.operators()[z]);
            let prob = pushed.dot(g.right_one());
            locals[n] = pushed / prob;
            subs[n] = z;
        }
        let clean = process
            .codec()
            .encode(&subs)
            .expect("sampled sub-tokens are in range");
        let observed = match process.regime() {
            Regime::Noisy { epsilon } if epsilon > 0.0 => {
                if rng.random::<f64>() < epsilon {
                    // uniform over the K-1 other tokens
                    let mut r = rng.random_range(0..k - 1);
                    if r >= clean {
                        r += 1;
                    }
                    r
                } else {
                    clean
                }
            }
            _ => clean,
        };
        out.push(observed as u32);
    }
    out
}

fn sample_sub_token(g: &Ghmm, state: &Array1<f64>, rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let last = g.alphabet_size() - 1;
    for z in 0..last {
        let p = state.dot(&g.operators()[z]).dot(g.right_one());
        acc += p.max(0.0);
        if u < acc {
            return z;
        }
    }
    last
}

/// Exact belief-state targets for every position of a sampled batch.
///
/// Product-preserving regimes track per-factor beliefs directly (the joint
/// target, when requested, is their Kronecker product, which equals the joint
/// Bayesian update by product-state preservation).  The noisy regime tracks
/// the joint belief through the mixture operators and reads factored targets
/// off its partial traces.
pub fn ground_truth_targets(
    process: &ComposedProcess,
    batch: &SequenceBatch,
    include_joint: bool,
) -> Result<TargetBatch> {
    let m = batch.m();
    let l = batch.l;
    let factor_dims = process.factor_dims();
    let sum_d: usize = factor_dims.iter().sum();
    let joint_d = process.joint_dim();
    let payload = batch.payload();

    let per_row: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut fac = Vec::with_capacity(l * sum_d);
            let mut joint = Vec::with_capacity(if include_joint { l * joint_d } else { 0 });
            match process.regime() {
                Regime::Independent | Regime::Chain => {
                    let mut s = process.factored_initial();
                    for j in 0..l {
                        s = process.factored_update(&s, payload[[i, j]] as usize)?;
                        for local in &s.locals {
                            fac.extend(local.vector.iter().copied());
                        }
                        if include_joint {
                            joint.extend(process.product_reconstruct(&s).vector.iter().copied());
                        }
                    }
                }
                Regime::Noisy { .. } => {
                    let mut s = process.joint_initial();
                    for j in 0..l {
                        s = process.joint_update(&s, payload[[i, j]] as usize)?;
                        for n in 0..process.n_factors() {
                            fac.extend(process.reduced_state(&s, n).vector.iter().copied());
                        }
                        if include_joint {
                            joint.extend(s.vector.iter().copied());
                        }
                    }
                }
            }
            Ok((fac, joint))
        })
        .collect();

    let mut factored = Array3::zeros((m, l, sum_d));
    let mut joint = if include_joint {
        Some(Array3::zeros((m, l, joint_d)))
    } else {
        None
    };
    for (i, row) in per_row.into_iter().enumerate() {
        let (fac, jnt) = row?;
        factored
            .slice_mut(s![i, .., ..])
            .assign(&ArrayView2::from_shape((l, sum_d), &fac).unwrap());
        if let Some(j3) = joint.as_mut() {
            j3.slice_mut(s![i, .., ..])
                .assign(&ArrayView2::from_shape((l, joint_d), &jnt).unwrap());
        }
    }
    Ok(TargetBatch {
        factored,
        joint,
        factor_dims,
    })
}

/// Sequences in which exactly one factor's sub-token stream varies.
///
/// Each group freezes one draw of every other factor's stream and pairs it
/// with `n_variants` independent draws of factor `factor`'s stream; group
/// token matrices are `n_variants x (l + 1)` with BOS in column 0 when
/// enabled.
#[derive(Debug, Clone)]
pub struct VaryOneDataset {
    pub factor: usize,
    pub l: usize,
    pub bos: bool,
    pub groups: Vec<Array2<u32>>,
}

/// Build a vary-one dataset for `factor`.  Requires the independent regime:
/// with coupled factors a single stream cannot be varied in isolation.
pub fn vary_one_dataset(
    process: &ComposedProcess,
    factor: usize,
    n_groups: usize,
    n_variants: usize,
    l: usize,
    seed: u64,
    bos: bool,
) -> Result<VaryOneDataset> {
    if process.regime() != Regime::Independent {
        return Err(Error::InvalidParameter(
            "vary-one datasets require the independent regime".into(),
        ));
    }
    let n_factors = process.n_factors();
    if factor >= n_factors {
        return Err(Error::InvalidParameter(format!(
            "factor {factor} out of range ({n_factors} factors)"
        )));
    }
    if n_groups == 0 || n_variants == 0 {
        return Err(Error::InvalidParameter(
            "need at least one group and one variant".into(),
        ));
    }
    let per_group = (n_variants + 1) as u64;
    let base = (factor as u64) << 40;
    let bos_id = process.codec().bos_id() as u32;

    let groups: Vec<Array2<u32>> = (0..n_groups)
        .into_par_iter()
        .map(|g| {
            // One stream for the frozen draw of all other factors, then one
            // per variant of the varied factor.
            let mut frozen_rng = ChaCha8Rng::seed_from_u64(seed);
            frozen_rng.set_stream(base + g as u64 * per_group);
            let mut frozen: Vec<Vec<usize>> = Vec::with_capacity(n_factors);
            for m in 0..n_factors {
                if m == factor {
                    frozen.push(Vec::new());
                } else {
                    frozen.push(sample_factor_stream(
                        process.factor(m).variant(0),
                        l,
                        &mut frozen_rng,
                    ));
                }
            }
            let cols = l + usize::from(bos);
            let mut tokens = Array2::zeros((n_variants, cols));
            for v in 0..n_variants {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(base + g as u64 * per_group + 1 + v as u64);
                let varied =
                    sample_factor_stream(process.factor(factor).variant(0), l, &mut rng);
                let mut j = 0;
                if bos {
                    tokens[[v, 0]] = bos_id;
                    j = 1;
                }
                let mut subs = vec![0usize; n_factors];
                for t in 0..l {
                    for m in 0..n_factors {
                        subs[m] = if m == factor {
                            varied[t]
                        } else {
                            frozen[m][t]
                        };
                    }
                    tokens[[v, j]] = process.codec().encode(&subs).unwrap() as u32;
                    j += 1;
                }
            }
            tokens
        })
        .collect();

    Ok(VaryOneDataset {
        factor,
        l,
        bos,
        groups,
    })
}

fn sample_factor_stream(g: &Ghmm, l: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut state = g.initial().clone();
    let mut out = Vec::with_capacity(l);
    for _ in 0..l {
        let z = sample_sub_token(g, &state, rng);
        let pushed = state.dot(&g.operators()[z]);
        let prob = pushed.dot(g.right_one());
        state = pushed / prob;
        out.push(z);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compose::JointState;
    use crate::ghmm::{make_mess3, make_sns, Mess3Params, SnsParams};
    use approx::assert_abs_diff_eq;

    fn mess3() -> Ghmm {
        make_mess3(Mess3Params { alpha: 0.6, x: 0.15 }).unwrap()
    }

    fn two_mess3() -> ComposedProcess {
        ComposedProcess::independent_product(vec![mess3(), mess3()]).unwrap()
    }

    fn two_sns() -> ComposedProcess {
        let g = || make_sns(SnsParams { p: 0.5, q: 0.5 }).unwrap();
        ComposedProcess::independent_product(vec![g(), g()]).unwrap()
    }

    #[test]
    fn batch_shape_and_bos_column() {
        let p = two_mess3();
        let batch = sample_sequences(&p, &SampleSpec::new(7, 5, 1, true));
        assert_eq!(batch.tokens.dim(), (7, 6));
        let bos = p.codec().bos_id() as u32;
        for i in 0..7 {
            assert_eq!(batch.tokens[[i, 0]], bos);
            for j in 1..6 {
                assert!(batch.tokens[[i, j]] < bos);
            }
        }
        let no_bos = sample_sequences(&p, &SampleSpec::new(7, 5, 1, false));
        assert_eq!(no_bos.tokens.dim(), (7, 5));
    }

    #[test]
    fn same_seed_is_bit_identical_and_order_independent() {
        let p = two_mess3();
        let a = sample_sequences(&p, &SampleSpec::new(64, 8, 42, true));
        let b = sample_sequences(&p, &SampleSpec::new(64, 8, 42, true));
        assert_eq!(a.tokens, b.tokens);
        // Row i only depends on its stream index: sampling rows one by one
        // (a different scheduling) reproduces the batch.
        for i in [0usize, 13, 63] {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            rng.set_stream(i as u64);
            let row = sample_one(&p, 8, &mut rng);
            for (j, &t) in row.iter().enumerate() {
                assert_eq!(a.tokens[[i, j + 1]], t);
            }
        }
        let c = sample_sequences(&p, &SampleSpec::new(64, 8, 43, true));
        assert_ne!(a.tokens, c.tokens);
    }

    #[test]
    fn stream_offset_shifts_sequences() {
        let p = two_mess3();
        let mut spec = SampleSpec::new(8, 4, 5, false);
        let a = sample_sequences(&p, &spec);
        spec.stream_offset = 4;
        let b = sample_sequences(&p, &spec);
        // Row i of the shifted batch equals row i+4 of the original.
        for i in 0..4 {
            assert_eq!(
                a.tokens.slice(s![i + 4, ..]),
                b.tokens.slice(s![i, ..])
            );
        }
    }

    #[test]
    fn mess3_token_frequencies_match_exact_probabilities() {
        // Single factor, L=1: each token has probability 1/3; a million draws
        // stay within 3 binomial standard deviations.
        let p = ComposedProcess::single(mess3()).unwrap();
        let m = 1_000_000usize;
        let batch = sample_sequences(&p, &SampleSpec::new(m, 1, 7, false));
        let mut counts = [0usize; 3];
        for i in 0..m {
            counts[batch.tokens[[i, 0]] as usize] += 1;
        }
        let exact = 1.0 / 3.0;
        let sigma = (exact * (1.0 - exact) / m as f64).sqrt();
        for &c in &counts {
            let freq = c as f64 / m as f64;
            assert!(
                (freq - exact).abs() < 3.0 * sigma,
                "freq {freq} vs {exact} (sigma {sigma})"
            );
        }
    }

    #[test]
    fn factored_targets_are_normalized_and_match_single_factor_oracle() {
        let p = two_mess3();
        let batch = sample_sequences(&p, &SampleSpec::new(16, 6, 3, true));
        let targets = ground_truth_targets(&p, &batch, false).unwrap();
        assert_eq!(targets.factored.dim(), (16, 6, 6));
        let g = mess3();
        for i in 0..16 {
            let mut lone = [g.initial_state(), g.initial_state()];
            for j in 0..6 {
                let tok = batch.tokens[[i, j + 1]] as usize;
                let sub = p.codec().decode(tok).unwrap();
                for n in 0..2 {
                    lone[n] = g.update_predictive(&lone[n], sub[n]).unwrap();
                    for (k, &v) in lone[n].vector.iter().enumerate() {
                        assert_abs_diff_eq!(
                            targets.factored[[i, j, 3 * n + k]],
                            v,
                            epsilon = 1e-12
                        );
                    }
                }
                let block0: f64 = (0..3).map(|k| targets.factored[[i, j, k]]).sum();
                assert_abs_diff_eq!(block0, 1.0, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn first_position_target_is_single_update_of_initial() {
        let p = two_sns();
        let batch = sample_sequences(&p, &SampleSpec::new(8, 3, 11, true));
        let targets = ground_truth_targets(&p, &batch, false).unwrap();
        for i in 0..8 {
            let s = p
                .factored_update(&p.factored_initial(), batch.tokens[[i, 1]] as usize)
                .unwrap();
            let mut col = 0;
            for local in &s.locals {
                for &v in local.vector.iter() {
                    assert_abs_diff_eq!(targets.factored[[i, 0, col]], v, epsilon = 1e-12);
                    col += 1;
                }
            }
        }
    }

    #[test]
    fn noisy_epsilon_zero_joint_targets_equal_product_of_factored() {
        let base = two_mess3();
        let noisy = ComposedProcess::noisy_channel(base, 0.0).unwrap();
        let batch = sample_sequences(&noisy, &SampleSpec::new(12, 5, 9, true));
        let targets = ground_truth_targets(&noisy, &batch, true).unwrap();
        let joint = targets.joint.as_ref().unwrap();
        for i in 0..12 {
            for j in 0..5 {
                // reconstruct product of the two factored blocks
                let a: Vec<f64> = (0..3).map(|k| targets.factored[[i, j, k]]).collect();
                let b: Vec<f64> = (0..3).map(|k| targets.factored[[i, j, 3 + k]]).collect();
                for x in 0..3 {
                    for y in 0..3 {
                        assert_abs_diff_eq!(
                            joint[[i, j, 3 * x + y]],
                            a[x] * b[y],
                            epsilon = 1e-10
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn noisy_targets_follow_mixture_updates_on_observed_tokens() {
        let noisy = ComposedProcess::noisy_channel(two_mess3(), 0.3).unwrap();
        let batch = sample_sequences(&noisy, &SampleSpec::new(6, 4, 21, true));
        let targets = ground_truth_targets(&noisy, &batch, true).unwrap();
        let joint = targets.joint.as_ref().unwrap();
        for i in 0..6 {
            let mut s = noisy.joint_initial();
            for j in 0..4 {
                s = noisy.joint_update(&s, batch.tokens[[i, j + 1]] as usize).unwrap();
                for (k, &v) in s.vector.iter().enumerate() {
                    assert_abs_diff_eq!(joint[[i, j, k]], v, epsilon = 1e-12);
                }
                // factored blocks are the partial traces
                let mut col = 0;
                for n in 0..2 {
                    let r = noisy.reduced_state(&JointState { vector: s.vector.clone() }, n);
                    for &v in r.vector.iter() {
                        assert_abs_diff_eq!(targets.factored[[i, j, col]], v, epsilon = 1e-12);
                        col += 1;
                    }
                }
            }
        }
    }

    #[test]
    fn targets_deterministic_for_same_batch() {
        let p = two_mess3();
        let batch = sample_sequences(&p, &SampleSpec::new(10, 4, 17, true));
        let t1 = ground_truth_targets(&p, &batch, true).unwrap();
        let t2 = ground_truth_targets(&p, &batch, true).unwrap();
        assert_eq!(t1.factored, t2.factored);
        assert_eq!(t1.joint, t2.joint);
    }

    #[test]
    fn vary_one_freezes_other_factors() {
        let p = two_mess3();
        for factor in 0..2 {
            let ds = vary_one_dataset(&p, factor, 5, 4, 6, 31, true).unwrap();
            assert_eq!(ds.groups.len(), 5);
            for group in &ds.groups {
                assert_eq!(group.dim(), (4, 7));
                for v in 1..4 {
                    for t in 1..7 {
                        let a = p.codec().decode(group[[0, t]] as usize).unwrap();
                        let b = p.codec().decode(group[[v, t]] as usize).unwrap();
                        for m in 0..2 {
                            if m != factor {
                                assert_eq!(a[m], b[m], "frozen factor {m} varied");
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn vary_one_variants_actually_vary() {
        let p = two_mess3();
        let ds = vary_one_dataset(&p, 0, 4, 8, 8, 5, true).unwrap();
        let mut any_diff = false;
        for group in &ds.groups {
            for v in 1..8 {
                if group.slice(s![v, ..]) != group.slice(s![0, ..]) {
                    any_diff = true;
                }
            }
        }
        assert!(any_diff);
    }

    #[test]
    fn vary_one_rejects_bad_inputs() {
        let p = two_mess3();
        assert!(vary_one_dataset(&p, 2, 4, 4, 8, 0, true).is_err());
        assert!(vary_one_dataset(&p, 0, 0, 4, 8, 0, true).is_err());
        let noisy = ComposedProcess::noisy_channel(two_mess3(), 0.1).unwrap();
        assert!(vary_one_dataset(&noisy, 0, 4, 4, 8, 0, true).is_err());
    }

    #[test]
    fn single_variant_groups_build_but_center_to_nothing() {
        // One variant per group is constructible; the per-cell centering
        // downstream then has nothing left, which the subspace extraction
        // reports as an error.
        let p = two_mess3();
        let ds = vary_one_dataset(&p, 0, 3, 1, 4, 13, true).unwrap();
        assert!(ds.groups.iter().all(|g| g.nrows() == 1));
        let fake_acts: Vec<ndarray::Array3<f64>> = ds
            .groups
            .iter()
            .map(|_| ndarray::Array3::from_elem((1, 4, 6), 0.5))
            .collect();
        assert!(crate::analysis::vary_one_subspaces(
            &fake_acts,
            crate::analysis::SubspaceRank::TopK(2),
            0
        )
        .is_err());
    }

    #[test]
    fn two_sns_empirical_matches_exact_smoke() {
        // Smaller-scale version of the sampling-fidelity acceptance check.
        let p = two_sns();
        let m = 100_000usize;
        let batch = sample_sequences(&p, &SampleSpec::new(m, 2, 97, false));
        let mut counts = std::collections::HashMap::new();
        for i in 0..m {
            *counts
                .entry((batch.tokens[[i, 0]], batch.tokens[[i, 1]]))
                .or_insert(0usize) += 1;
        }
        for a in 0..4u32 {
            for b in 0..4u32 {
                let exact = p
                    .sequence_probability(&[a as usize, b as usize])
                    .unwrap();
                let freq = *counts.get(&(a, b)).unwrap_or(&0) as f64 / m as f64;
                let sigma = (exact * (1.0 - exact) / m as f64).sqrt();
                assert!(
                    (freq - exact).abs() <= 3.0 * sigma.max(1e-9),
                    "cell ({a},{b}): freq {freq} exact {exact}"
                );
            }
        }
    }
}
