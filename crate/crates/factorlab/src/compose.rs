//! Multipartite generators and joint/factored representation machinery.
//!
//! A [`ComposedProcess`] runs N single-factor generators side by side.  Each
//! emitted token encodes one sub-token per factor through a mixed-radix
//! [`Codec`].  Three regimes are supported:
//!
//! - **independent**: the token operator is the Kronecker product of
//!   per-factor operators chosen by the decoded sub-tokens;
//! - **chain**: each factor's operator additionally depends on the sub-token
//!   of the immediately preceding factor at the same timestep, preserving the
//!   tensor-product form;
//! - **noisy**: an independent composition observed through a memoryless
//!   channel that replaces the token with a uniformly random other token with
//!   probability epsilon, which mixes the operators and breaks the product
//!   form.
//!
//! For product-preserving regimes the joint belief state stays a Kronecker
//! product of per-factor beliefs, so it can be tracked factor-locally and
//! embedded losslessly into a direct sum of per-factor coordinate blocks of
//! total dimension `sum_n (d_n - 1)`.  The module also provides the reverse
//! direction: partial traces of a joint state onto each factor, the total
//! correlation that measures how far a joint state is from the product of its
//! marginals, and the linear joint-to-factored map built from both.

use std::collections::HashMap;
use std::collections::VecDeque;
use std::sync::{Arc, Mutex, OnceLock};

use ndarray::prelude::*;
use sha2::{Digest, Sha256};

use crate::ghmm::{Ghmm, PredictiveState, ProcessKind, ZERO_PROB_TOL};
use crate::{Error, Result};

/// Default number of materialized joint operators kept in the LRU cache.
/// A 5-factor joint operator is `243 x 243` doubles, so the default bounds
/// cache memory at a few tens of megabytes.
pub const DEFAULT_OPERATOR_CACHE_CAP: usize = 64;

// ---------------------------------------------------------------------------
// Sub-token codec
// ---------------------------------------------------------------------------

/// Mixed-radix codec between per-factor sub-tokens and observed token ids.
///
/// Factor 0 is the least-significant digit.  The beginning-of-sequence token
/// takes the id just past the product alphabet so sub-token codes stay
/// contiguous at 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Codec {
    sizes: Vec<usize>,
}

impl Codec {
    pub fn new(sizes: Vec<usize>) -> Self {
        assert!(!sizes.is_empty() && sizes.iter().all(|&s| s > 0));
        Self { sizes }
    }

    pub fn n_factors(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Number of non-BOS tokens: the product of the sub-token alphabets.
    pub fn n_tokens(&self) -> usize {
        self.sizes.iter().product()
    }

    pub fn bos_id(&self) -> usize {
        self.n_tokens()
    }

    /// Vocabulary size including BOS.
    pub fn vocab_with_bos(&self) -> usize {
        self.n_tokens() + 1
    }

    pub fn encode(&self, sub_tokens: &[usize]) -> Result<usize> {
        if sub_tokens.len() != self.sizes.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} sub-tokens, got {}",
                self.sizes.len(),
                sub_tokens.len()
            )));
        }
        let mut id = 0;
        let mut radix = 1;
        for (n, (&z, &size)) in sub_tokens.iter().zip(&self.sizes).enumerate() {
            if z >= size {
                return Err(Error::InvalidParameter(format!(
                    "sub-token {z} out of range for factor {n} (alphabet {size})"
                )));
            }
            id += z * radix;
            radix *= size;
        }
        Ok(id)
    }

    pub fn decode(&self, token: usize) -> Result<Vec<usize>> {
        let mut out = vec![0; self.sizes.len()];
        self.decode_into(token, &mut out)?;
        Ok(out)
    }

    pub fn decode_into(&self, token: usize, out: &mut [usize]) -> Result<()> {
        if token >= self.n_tokens() {
            return Err(Error::InvalidParameter(format!(
                "token {token} is BOS or out of range (alphabet {})",
                self.n_tokens()
            )));
        }
        let mut rest = token;
        for (slot, &size) in out.iter_mut().zip(&self.sizes) {
            *slot = rest % size;
            rest /= size;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// States
// ---------------------------------------------------------------------------

/// Per-factor belief vectors, each normalized against its own right vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoredState {
    pub locals: Vec<PredictiveState>,
}

/// A belief vector in the full tensor-product space, normalized against the
/// Kronecker product of the factor right vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub vector: Array1<f64>,
}

/// The direct-sum embedding of a factored state: for each factor, the
/// coefficients of its belief vector on the orthonormal basis elements beyond
/// the one aligned with the factor's right vector.  Factor blocks occupy
/// disjoint coordinate ranges; total length `sum_n (d_n - 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoredEmbedding {
    pub vector: Array1<f64>,
}

/// Orthonormal basis for one factor's latent space with row 0 proportional to
/// the factor's right vector.  Rows 1.. carry the factor's predictive degrees
/// of freedom.
#[derive(Debug, Clone)]
pub struct FactorBasis {
    /// `d x d`, rows are basis vectors.
    pub rows: Array2<f64>,
    /// Euclidean norm of the factor's right vector (fixes the coefficient of
    /// row 0 for any normalized state).
    pub right_norm: f64,
}

impl FactorBasis {
    /// Gram-Schmidt seeded from the right vector, then standard unit vectors
    /// in index order.
    fn build(right_one: &Array1<f64>) -> Self {
        let d = right_one.len();
        let right_norm = right_one.dot(right_one).sqrt();
        let mut rows: Vec<Array1<f64>> = vec![right_one / right_norm];
        for i in 0..d {
            if rows.len() == d {
                break;
            }
            let mut v = Array1::<f64>::zeros(d);
            v[i] = 1.0;
            for b in &rows {
                let c = v.dot(b);
                v = v - b * c;
            }
            let norm = v.dot(&v).sqrt();
            if norm > 1e-10 {
                rows.push(v / norm);
            }
        }
        assert_eq!(rows.len(), d, "Gram-Schmidt failed to complete a basis");
        let mut mat = Array2::zeros((d, d));
        for (i, r) in rows.iter().enumerate() {
            mat.row_mut(i).assign(r);
        }
        Self {
            rows: mat,
            right_norm,
        }
    }
}

// ---------------------------------------------------------------------------
// Composition
// ---------------------------------------------------------------------------

/// How the factors are coupled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regime {
    Independent,
    Chain,
    Noisy { epsilon: f64 },
}

/// One factor position: a set of operator variants indexed by the control
/// sub-token of the immediately preceding factor.  Unconditioned factors have
/// a single variant.
#[derive(Debug, Clone)]
pub struct FactorSlot {
    variants: Vec<Ghmm>,
}

impl FactorSlot {
    pub fn variants(&self) -> &[Ghmm] {
        &self.variants
    }

    pub fn variant(&self, control: usize) -> &Ghmm {
        if self.variants.len() == 1 {
            &self.variants[0]
        } else {
            &self.variants[control]
        }
    }

    pub fn alphabet_size(&self) -> usize {
        self.variants[0].alphabet_size()
    }

    pub fn dim(&self) -> usize {
        self.variants[0].dim()
    }

    pub fn kind(&self) -> ProcessKind {
        self.variants[0].kind()
    }

    pub fn right_one(&self) -> &Array1<f64> {
        self.variants[0].right_one()
    }

    pub fn initial(&self) -> &Array1<f64> {
        self.variants[0].initial()
    }
}

struct OpCache {
    map: HashMap<usize, Arc<Array2<f64>>>,
    order: VecDeque<usize>,
    cap: usize,
}

impl OpCache {
    fn new(cap: usize) -> Self {
        Self {
            map: HashMap::new(),
            order: VecDeque::new(),
            cap,
        }
    }

    fn get(&mut self, token: usize) -> Option<Arc<Array2<f64>>> {
        let hit = self.map.get(&token).cloned();
        if hit.is_some() {
            if let Some(pos) = self.order.iter().position(|&t| t == token) {
                self.order.remove(pos);
                self.order.push_back(token);
            }
        }
        hit
    }

    fn insert(&mut self, token: usize, op: Arc<Array2<f64>>) {
        self.map.insert(token, op);
        self.order.push_back(token);
        while self.map.len() > self.cap {
            if let Some(evict) = self.order.pop_front() {
                self.map.remove(&evict);
            }
        }
    }
}

/// A multipartite generator plus its codec and embedding bases.
///
/// All functions are pure with respect to the process; the only interior
/// mutability is the joint-operator cache, which is protected by a mutex so
/// the process can be shared across threads.
pub struct ComposedProcess {
    slots: Vec<FactorSlot>,
    regime: Regime,
    codec: Codec,
    bases: Vec<FactorBasis>,
    joint_right_one: Array1<f64>,
    joint_initial: Array1<f64>,
    clean_net_factors: Vec<Array2<f64>>,
    clean_net_joint: OnceLock<Arc<Array2<f64>>>,
    op_cache: Mutex<OpCache>,
}

impl ComposedProcess {
    fn build(slots: Vec<FactorSlot>, regime: Regime) -> Result<Self> {
        if slots.is_empty() {
            return Err(Error::InvalidParameter("no factors".into()));
        }
        for (n, slot) in slots.iter().enumerate() {
            if slot.variants.is_empty() {
                return Err(Error::InvalidParameter(format!("factor {n} has no variants")));
            }
            let a = slot.variants[0].alphabet_size();
            let d = slot.variants[0].dim();
            for (v, g) in slot.variants.iter().enumerate() {
                if g.alphabet_size() != a || g.dim() != d {
                    return Err(Error::InvalidParameter(format!(
                        "factor {n} variant {v} does not share alphabet/dimension"
                    )));
                }
                let dr = g
                    .right_one()
                    .iter()
                    .zip(slot.variants[0].right_one())
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max);
                let di = g
                    .initial()
                    .iter()
                    .zip(slot.variants[0].initial())
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max);
                if dr > 1e-12 || di > 1e-12 {
                    return Err(Error::InvalidParameter(format!(
                        "factor {n} variant {v} does not share right/initial vectors"
                    )));
                }
            }
        }
        match regime {
            Regime::Chain => {
                if slots[0].variants.len() != 1 {
                    return Err(Error::InvalidParameter(
                        "chain root factor must be unconditioned".into(),
                    ));
                }
                for n in 1..slots.len() {
                    let need = slots[n - 1].alphabet_size();
                    let have = slots[n].variants.len();
                    if have != need {
                        return Err(Error::InvalidParameter(format!(
                            "factor {n} variant table incomplete: {have} variants for {need} control values"
                        )));
                    }
                }
            }
            Regime::Independent | Regime::Noisy { .. } => {
                for (n, slot) in slots.iter().enumerate() {
                    if slot.variants.len() != 1 {
                        return Err(Error::InvalidParameter(format!(
                            "factor {n} is conditioned but the regime is not a chain"
                        )));
                    }
                }
                if let Regime::Noisy { epsilon } = regime {
                    if !(0.0..=1.0).contains(&epsilon) {
                        return Err(Error::InvalidParameter(format!(
                            "epsilon must be in [0,1], got {epsilon}"
                        )));
                    }
                }
            }
        }

        let codec = Codec::new(slots.iter().map(|s| s.alphabet_size()).collect());
        let bases = slots
            .iter()
            .map(|s| FactorBasis::build(s.right_one()))
            .collect();
        let joint_right_one = kron_vec_all(slots.iter().map(|s| s.right_one()));
        let joint_initial = kron_vec_all(slots.iter().map(|s| s.initial()));
        // Net operators of the unconditioned variants; only used in the noisy
        // regime, which requires an independent base.
        let clean_net_factors = slots.iter().map(|s| s.variants[0].net_operator()).collect();
        Ok(Self {
            slots,
            regime,
            codec,
            bases,
            joint_right_one,
            joint_initial,
            clean_net_factors,
            clean_net_joint: OnceLock::new(),
            op_cache: Mutex::new(OpCache::new(DEFAULT_OPERATOR_CACHE_CAP)),
        })
    }

    /// Parallel composition of two or more independent factors.
    pub fn independent_product(factors: Vec<Ghmm>) -> Result<Self> {
        if factors.len() < 2 {
            return Err(Error::InvalidParameter(
                "independent product needs at least 2 factors".into(),
            ));
        }
        Self::build(
            factors
                .into_iter()
                .map(|g| FactorSlot { variants: vec![g] })
                .collect(),
            Regime::Independent,
        )
    }

    /// Trivial one-factor composition; useful for driving single-process
    /// training through the same token/BOS pipeline.
    pub fn single(factor: Ghmm) -> Result<Self> {
        Self::build(
            vec![FactorSlot {
                variants: vec![factor],
            }],
            Regime::Independent,
        )
    }

    /// Conditionally independent chain: factor `n > 0` selects its operator
    /// set by the sub-token of factor `n - 1` at the same timestep.  The root
    /// factor must have exactly one variant; every other factor must provide
    /// one variant per control value of its predecessor.
    pub fn conditional_chain(variant_tables: Vec<Vec<Ghmm>>) -> Result<Self> {
        Self::build(
            variant_tables
                .into_iter()
                .map(|variants| FactorSlot { variants })
                .collect(),
            Regime::Chain,
        )
    }

    /// Pass an independent composition through a memoryless uniform
    /// replacement channel with error probability `epsilon`.
    pub fn noisy_channel(base: ComposedProcess, epsilon: f64) -> Result<Self> {
        if base.regime != Regime::Independent {
            return Err(Error::InvalidParameter(
                "noisy channel applies to an independent composition".into(),
            ));
        }
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be in [0,1], got {epsilon}"
            )));
        }
        Self::build(base.slots, Regime::Noisy { epsilon })
    }

    pub fn n_factors(&self) -> usize {
        self.slots.len()
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn codec(&self) -> &Codec {
        &self.codec
    }

    pub fn factor(&self, n: usize) -> &FactorSlot {
        &self.slots[n]
    }

    pub fn factor_dims(&self) -> Vec<usize> {
        self.slots.iter().map(|s| s.dim()).collect()
    }

    pub fn joint_dim(&self) -> usize {
        self.slots.iter().map(|s| s.dim()).product()
    }

    /// Length of the direct-sum embedding: `sum_n (d_n - 1)`.
    pub fn embedding_dim(&self) -> usize {
        self.slots.iter().map(|s| s.dim() - 1).sum()
    }

    pub fn factor_bases(&self) -> &[FactorBasis] {
        &self.bases
    }

    pub fn all_hmm_kind(&self) -> bool {
        self.slots.iter().all(|s| s.kind() == ProcessKind::Hmm)
    }

    pub fn joint_right_one(&self) -> &Array1<f64> {
        &self.joint_right_one
    }

    pub fn set_operator_cache_cap(&self, cap: usize) {
        let mut cache = self.op_cache.lock().unwrap();
        cache.cap = cap.max(1);
        while cache.map.len() > cache.cap {
            if let Some(evict) = cache.order.pop_front() {
                cache.map.remove(&evict);
            }
        }
    }

    /// Content hash of the composition: regime, coupling, and every factor's
    /// numeric definition, independent of how the process was constructed.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        match self.regime {
            Regime::Independent => h.update([0u8]),
            Regime::Chain => h.update([1u8]),
            Regime::Noisy { epsilon } => {
                h.update([2u8]);
                h.update(epsilon.to_le_bytes());
            }
        }
        h.update((self.slots.len() as u64).to_le_bytes());
        for slot in &self.slots {
            h.update((slot.variants.len() as u64).to_le_bytes());
            for g in &slot.variants {
                h.update((g.alphabet_size() as u64).to_le_bytes());
                h.update((g.dim() as u64).to_le_bytes());
                for op in g.operators() {
                    for &v in op.iter() {
                        h.update(v.to_le_bytes());
                    }
                }
                for &v in g.initial() {
                    h.update(v.to_le_bytes());
                }
                for &v in g.right_one() {
                    h.update(v.to_le_bytes());
                }
            }
        }
        hex::encode(h.finalize())
    }

    // -- states ------------------------------------------------------------

    pub fn factored_initial(&self) -> FactoredState {
        FactoredState {
            locals: self
                .slots
                .iter()
                .map(|s| PredictiveState::new(s.initial().clone()))
                .collect(),
        }
    }

    pub fn joint_initial(&self) -> JointState {
        JointState {
            vector: self.joint_initial.clone(),
        }
    }

    /// The conditioned per-factor operator for a decoded token.
    pub(crate) fn factor_operator(&self, n: usize, sub_tokens: &[usize]) -> &Array2<f64> {
        let control = if n == 0 { 0 } else { sub_tokens[n - 1] };
        let g = match self.regime {
            Regime::Chain => self.slots[n].variant(control),
            _ => self.slots[n].variant(0),
        };
        &g.operators()[sub_tokens[n]]
    }

    /// Materialize the joint operator for a token as a dense
    /// `joint_dim x joint_dim` matrix (LRU-cached).
    pub fn joint_operator(&self, token: usize) -> Result<Arc<Array2<f64>>> {
        if token >= self.codec.n_tokens() {
            return Err(Error::InvalidParameter(format!(
                "token {token} is BOS or out of range"
            )));
        }
        if let Some(hit) = self.op_cache.lock().unwrap().get(token) {
            return Ok(hit);
        }
        let op = Arc::new(self.build_joint_operator(token)?);
        self.op_cache.lock().unwrap().insert(token, Arc::clone(&op));
        Ok(op)
    }

    fn build_joint_operator(&self, token: usize) -> Result<Array2<f64>> {
        let sub = self.codec.decode(token)?;
        let clean = kron_all((0..self.n_factors()).map(|n| self.factor_operator(n, &sub)));
        Ok(match self.regime {
            Regime::Independent | Regime::Chain => clean,
            Regime::Noisy { epsilon } => {
                // (1-e) T_x + e/(K-1) sum_{x' != x} T_x'
                //   = (1 - e - e/(K-1)) T_x + e/(K-1) T_net
                let k = self.codec.n_tokens() as f64;
                let leak = epsilon / (k - 1.0);
                let net = self.clean_net_joint();
                clean * (1.0 - epsilon - leak) + &*net * leak
            }
        })
    }

    fn clean_net_joint(&self) -> Arc<Array2<f64>> {
        Arc::clone(
            self.clean_net_joint
                .get_or_init(|| Arc::new(kron_all(self.clean_net_factors.iter()))),
        )
    }

    /// Apply the token's operator to a joint row vector without materializing
    /// the Kronecker product (sequential mode-n contraction).
    fn apply_token_operator(&self, v: &Array1<f64>, token: usize) -> Result<Array1<f64>> {
        let sub = self.codec.decode(token)?;
        let dims = self.factor_dims();
        let mut clean = v.clone();
        for n in 0..self.n_factors() {
            clean = apply_factor_right(&clean, &dims, n, self.factor_operator(n, &sub));
        }
        Ok(match self.regime {
            Regime::Independent | Regime::Chain => clean,
            Regime::Noisy { epsilon } => {
                let k = self.codec.n_tokens() as f64;
                let leak = epsilon / (k - 1.0);
                let mut net = v.clone();
                for n in 0..self.n_factors() {
                    net = apply_factor_right(&net, &dims, n, &self.clean_net_factors[n]);
                }
                clean * (1.0 - epsilon - leak) + net * leak
            }
        })
    }

    /// Update every local belief in parallel through its own (possibly
    /// conditioned) operator.  Only valid in product-preserving regimes.
    pub fn factored_update(&self, s: &FactoredState, token: usize) -> Result<FactoredState> {
        if matches!(self.regime, Regime::Noisy { .. }) {
            return Err(Error::InvalidParameter(
                "factored update is undefined in the noisy regime".into(),
            ));
        }
        let sub = self.codec.decode(token)?;
        let mut locals = Vec::with_capacity(self.n_factors());
        for (n, (slot, local)) in self.slots.iter().zip(&s.locals).enumerate() {
            let op = self.factor_operator(n, &sub);
            let pushed = local.vector.dot(op);
            let prob = pushed.dot(slot.right_one());
            if prob <= ZERO_PROB_TOL {
                return Err(Error::ZeroProbabilityToken {
                    token,
                    prob,
                    tol: ZERO_PROB_TOL,
                });
            }
            locals.push(PredictiveState::new(pushed / prob));
        }
        Ok(FactoredState { locals })
    }

    /// Bayesian update of the joint belief vector on one observed token.
    pub fn joint_update(&self, s: &JointState, token: usize) -> Result<JointState> {
        let pushed = self.apply_token_operator(&s.vector, token)?;
        let prob = pushed.dot(&self.joint_right_one);
        if prob <= ZERO_PROB_TOL {
            return Err(Error::ZeroProbabilityToken {
                token,
                prob,
                tol: ZERO_PROB_TOL,
            });
        }
        Ok(JointState {
            vector: pushed / prob,
        })
    }

    /// One-step token distribution induced by a joint state.
    pub fn joint_token_distribution(&self, s: &JointState) -> Result<Array1<f64>> {
        let k = self.codec.n_tokens();
        let mut dist = Array1::zeros(k);
        for x in 0..k {
            let pushed = self.apply_token_operator(&s.vector, x)?;
            dist[x] = pushed.dot(&self.joint_right_one);
        }
        Ok(dist)
    }

    /// Exact probability of a token sequence under the composition.
    pub fn sequence_probability(&self, seq: &[usize]) -> Result<f64> {
        let mut v = self.joint_initial.clone();
        for &x in seq {
            v = self.apply_token_operator(&v, x)?;
        }
        Ok(v.dot(&self.joint_right_one))
    }

    /// Partial trace: contract every slot except `n` against its right
    /// vector, leaving the factor-`n` marginal belief.
    pub fn reduced_state(&self, s: &JointState, n: usize) -> PredictiveState {
        let dims = self.factor_dims();
        let d = dims[n];
        let pre_w = kron_vec_all(self.slots[..n].iter().map(|s| s.right_one()));
        let suf_w = kron_vec_all(self.slots[n + 1..].iter().map(|s| s.right_one()));
        let (pre, suf) = (pre_w.len(), suf_w.len());
        let mut out = Array1::<f64>::zeros(d);
        let v = &s.vector;
        for p in 0..pre {
            for j in 0..d {
                let base = (p * d + j) * suf;
                let mut acc = 0.0;
                for q in 0..suf {
                    acc += v[base + q] * suf_w[q];
                }
                out[j] += acc * pre_w[p];
            }
        }
        PredictiveState::new(out)
    }

    /// Total correlation among the parts: the KL divergence from the joint
    /// state to the product of its reduced states, in nats.  Defined only for
    /// compositions in which every factor is HMM-kind, so both states are
    /// probability vectors.
    pub fn total_correlation(&self, s: &JointState) -> Result<f64> {
        for (n, slot) in self.slots.iter().enumerate() {
            if slot.kind() != ProcessKind::Hmm {
                return Err(Error::NonClassicalState { factor: n });
            }
        }
        let marginals: Vec<Array1<f64>> = (0..self.n_factors())
            .map(|n| self.reduced_state(s, n).vector)
            .collect();
        let q = kron_vec_all(marginals.iter());
        let mut kl = 0.0;
        for (&p, &qv) in s.vector.iter().zip(q.iter()) {
            if p > 1e-15 {
                kl += p * (p / qv.max(1e-300)).ln();
            }
        }
        Ok(kl.max(0.0))
    }

    /// Euclidean distance from a joint state to the product of its reduced
    /// states.  This is the off-manifold diagnostic that remains defined for
    /// compositions with signed (non-HMM) factors.
    pub fn product_manifold_distance(&self, s: &JointState) -> f64 {
        let marginals = FactoredState {
            locals: (0..self.n_factors())
                .map(|n| self.reduced_state(s, n))
                .collect(),
        };
        let proj = self.product_reconstruct(&marginals);
        s.vector
            .iter()
            .zip(proj.vector.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Embed a factored state into the direct-sum representation: per factor,
    /// the coefficients on basis rows `1..d_n`, concatenated.
    pub fn factored_embed(&self, s: &FactoredState) -> FactoredEmbedding {
        let mut out = Vec::with_capacity(self.embedding_dim());
        for (basis, local) in self.bases.iter().zip(&s.locals) {
            for m in 1..basis.rows.nrows() {
                out.push(local.vector.dot(&basis.rows.row(m)));
            }
        }
        FactoredEmbedding {
            vector: Array1::from_vec(out),
        }
    }

    /// The linear joint-to-factored map: partial traces followed by the
    /// per-factor embeddings.  Invertible exactly on product states.
    pub fn joint_to_factored(&self, s: &JointState) -> FactoredEmbedding {
        let locals = (0..self.n_factors())
            .map(|n| self.reduced_state(s, n))
            .collect();
        self.factored_embed(&FactoredState { locals })
    }

    /// Decode an embedding back to per-factor states (the coefficient on
    /// basis row 0 is fixed by normalization) and take their Kronecker
    /// product.
    pub fn reconstruct_from_embedding(&self, e: &FactoredEmbedding) -> Result<JointState> {
        if e.vector.len() != self.embedding_dim() {
            return Err(Error::ShapeMismatch(format!(
                "embedding length {} != {}",
                e.vector.len(),
                self.embedding_dim()
            )));
        }
        let mut locals = Vec::with_capacity(self.n_factors());
        let mut offset = 0;
        for basis in &self.bases {
            let d = basis.rows.nrows();
            let mut v = basis.rows.row(0).to_owned() / basis.right_norm;
            for m in 1..d {
                let c = e.vector[offset + m - 1];
                v = v + &basis.rows.row(m) * c;
            }
            offset += d - 1;
            locals.push(PredictiveState::new(v));
        }
        Ok(self.product_reconstruct(&FactoredState { locals }))
    }

    /// Kronecker product of the per-factor beliefs.
    pub fn product_reconstruct(&self, s: &FactoredState) -> JointState {
        JointState {
            vector: kron_vec_all(s.locals.iter().map(|l| &l.vector)),
        }
    }

    /// Materialize the composition as a flat single-factor GHMM over the
    /// product alphabet.  Only sensible for small joint dimensions; the
    /// 5-factor configuration would allocate hundreds of megabytes.
    pub fn as_joint_ghmm(&self) -> Result<Ghmm> {
        let ops = (0..self.codec.n_tokens())
            .map(|x| self.build_joint_operator(x))
            .collect::<Result<Vec<_>>>()?;
        let kind = if self.all_hmm_kind() {
            ProcessKind::Hmm
        } else {
            ProcessKind::Generalized
        };
        Ghmm::new(
            ops,
            self.joint_initial.clone(),
            self.joint_right_one.clone(),
            kind,
        )
    }
}

// ---------------------------------------------------------------------------
// Kronecker helpers
// ---------------------------------------------------------------------------

/// Dense Kronecker product of two matrices.
pub fn kron(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let (ra, ca) = a.dim();
    let (rb, cb) = b.dim();
    let mut out = Array2::zeros((ra * rb, ca * cb));
    for i1 in 0..ra {
        for j1 in 0..ca {
            let av = a[[i1, j1]];
            if av == 0.0 {
                continue;
            }
            for i2 in 0..rb {
                for j2 in 0..cb {
                    out[[i1 * rb + i2, j1 * cb + j2]] = av * b[[i2, j2]];
                }
            }
        }
    }
    out
}

fn kron_all<'a>(mats: impl Iterator<Item = &'a Array2<f64>>) -> Array2<f64> {
    let mut acc: Option<Array2<f64>> = None;
    for m in mats {
        acc = Some(match acc {
            None => m.clone(),
            Some(a) => kron(&a, m),
        });
    }
    acc.expect("kron_all of empty iterator")
}

/// Kronecker product of vectors; the empty product is the scalar `[1]`.
pub fn kron_vec_all<'a>(vecs: impl Iterator<Item = &'a Array1<f64>>) -> Array1<f64> {
    let mut acc = Array1::from_vec(vec![1.0]);
    for v in vecs {
        let mut out = Array1::zeros(acc.len() * v.len());
        for (i, &a) in acc.iter().enumerate() {
            for (j, &b) in v.iter().enumerate() {
                out[i * v.len() + j] = a * b;
            }
        }
        acc = out;
    }
    acc
}

/// Right-action of a single factor's operator on a joint row vector:
/// `out[.., j', ..] = sum_j v[.., j, ..] op[j, j']` at tensor slot `n`.
fn apply_factor_right(v: &Array1<f64>, dims: &[usize], n: usize, op: &Array2<f64>) -> Array1<f64> {
    let d = dims[n];
    let suf: usize = dims[n + 1..].iter().product();
    let pre: usize = dims[..n].iter().product();
    let mut out = Array1::zeros(v.len());
    for p in 0..pre {
        for j in 0..d {
            let base_in = (p * d + j) * suf;
            for jp in 0..d {
                let w = op[[j, jp]];
                if w == 0.0 {
                    continue;
                }
                let base_out = (p * d + jp) * suf;
                for q in 0..suf {
                    out[base_out + q] += v[base_in + q] * w;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ghmm::{
        make_bloch_walk, make_mess3, make_sns, BlochWalkParams, Mess3Params, SnsParams,
    };
    use approx::assert_abs_diff_eq;

    fn mess3() -> Ghmm {
        make_mess3(Mess3Params { alpha: 0.6, x: 0.15 }).unwrap()
    }

    fn bloch() -> Ghmm {
        make_bloch_walk(BlochWalkParams { alpha: 1.0, beta: 3.0 }).unwrap()
    }

    fn sns() -> Ghmm {
        make_sns(SnsParams { p: 0.5, q: 0.5 }).unwrap()
    }

    fn two_sns() -> ComposedProcess {
        ComposedProcess::independent_product(vec![sns(), sns()]).unwrap()
    }

    fn two_mess3() -> ComposedProcess {
        ComposedProcess::independent_product(vec![mess3(), mess3()]).unwrap()
    }

    fn five_factor() -> ComposedProcess {
        ComposedProcess::independent_product(vec![mess3(), mess3(), mess3(), bloch(), bloch()])
            .unwrap()
    }

    fn table_two_chain() -> ComposedProcess {
        let m1 = make_mess3(Mess3Params { alpha: 0.60, x: 0.15 }).unwrap();
        let m2 = make_mess3(Mess3Params { alpha: 0.79, x: 0.11 }).unwrap();
        let m3 = make_mess3(Mess3Params { alpha: 0.60, x: 0.50 }).unwrap();
        let b1 = make_bloch_walk(BlochWalkParams { alpha: 1.0, beta: 2.0 }).unwrap();
        let b2 = make_bloch_walk(BlochWalkParams { alpha: 1.0, beta: 2.5 }).unwrap();
        let b3 = make_bloch_walk(BlochWalkParams { alpha: 1.0, beta: 3.0 }).unwrap();
        let b4 = make_bloch_walk(BlochWalkParams { alpha: 1.0, beta: 3.5 }).unwrap();
        ComposedProcess::conditional_chain(vec![
            vec![m1.clone()],
            vec![m1.clone(), m2.clone(), m3.clone()],
            vec![m1, m2, m3],
            vec![b1.clone(), b2.clone(), b3.clone()],
            vec![b1, b2, b3, b4],
        ])
        .unwrap()
    }

    #[test]
    fn codec_matches_mixed_radix_formula() {
        let c = Codec::new(vec![3, 3, 3, 4, 4]);
        assert_eq!(c.encode(&[0, 0, 0, 0, 0]).unwrap(), 0);
        assert_eq!(c.encode(&[1, 0, 0, 0, 0]).unwrap(), 1);
        assert_eq!(c.encode(&[2, 2, 2, 3, 3]).unwrap(), 431);
        assert_eq!(c.n_tokens(), 432);
        assert_eq!(c.bos_id(), 432);
        assert_eq!(c.vocab_with_bos(), 433);
    }

    #[test]
    fn codec_round_trips_every_token() {
        let c = Codec::new(vec![3, 3, 3, 4, 4]);
        for t in 0..c.n_tokens() {
            assert_eq!(c.encode(&c.decode(t).unwrap()).unwrap(), t);
        }
        assert_eq!(c.decode(431).unwrap(), vec![2, 2, 2, 3, 3]);
    }

    #[test]
    fn codec_rejects_bos_and_out_of_range() {
        let c = Codec::new(vec![2, 2]);
        assert!(c.decode(4).is_err());
        assert!(c.decode(5).is_err());
        assert!(c.encode(&[2, 0]).is_err());
    }

    #[test]
    fn five_factor_dimensions() {
        let p = five_factor();
        assert_eq!(p.joint_dim(), 243);
        assert_eq!(p.embedding_dim(), 10);
        assert_eq!(p.codec().vocab_with_bos(), 433);
        assert_eq!(p.joint_dim() - 1, 242);
    }

    #[test]
    fn two_sns_vocabulary() {
        let p = two_sns();
        assert_eq!(p.codec().n_tokens(), 4);
        assert_eq!(p.joint_dim(), 4);
        assert_eq!(p.embedding_dim(), 2);
    }

    #[test]
    fn independent_product_requires_two_factors() {
        assert!(ComposedProcess::independent_product(vec![sns()]).is_err());
    }

    #[test]
    fn joint_operator_token_a_single_entry() {
        // T1^(0) x T2^(0) has its only nonzero, q1*q2 = 0.25, at row (1,1),
        // column (0,0).
        let p = two_sns();
        let op = p.joint_operator(0).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == 3 && j == 0 { 0.25 } else { 0.0 };
                assert_abs_diff_eq!(op[[i, j]], expect, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn joint_operator_matches_mode_product_application() {
        // Dense Kronecker materialization and the sequential per-factor
        // contraction are independent routes to the same linear map.
        let p = five_factor();
        let dims = p.factor_dims();
        let mut v = Array1::zeros(p.joint_dim());
        for (i, x) in v.iter_mut().enumerate() {
            *x = ((i * 37 + 11) % 101) as f64 / 101.0;
        }
        for &token in &[0usize, 1, 57, 431] {
            let dense = p.joint_operator(token).unwrap();
            let via_dense = v.dot(&**dense);
            let sub = p.codec().decode(token).unwrap();
            let mut via_modes = v.clone();
            for n in 0..p.n_factors() {
                via_modes = apply_factor_right(&via_modes, &dims, n, p.factor_operator(n, &sub));
            }
            for (a, b) in via_dense.iter().zip(via_modes.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn operator_cache_caps_and_serves_hits() {
        let p = two_mess3();
        p.set_operator_cache_cap(2);
        let a = p.joint_operator(0).unwrap();
        let a_again = p.joint_operator(0).unwrap();
        assert!(Arc::ptr_eq(&a, &a_again));
        let _ = p.joint_operator(1).unwrap();
        let _ = p.joint_operator(2).unwrap();
        // token 0 has been evicted; a fresh allocation is fine, values equal
        let b = p.joint_operator(0).unwrap();
        assert_eq!(&*a, &*b);
    }

    #[test]
    fn composed_sequence_probability_factorizes_when_independent() {
        let p = two_mess3();
        let g = mess3();
        for seq in [vec![0usize, 4, 8], vec![1, 3], vec![7]] {
            let joint = p.sequence_probability(&seq).unwrap();
            let mut product = 1.0;
            for n in 0..2 {
                let sub_seq: Vec<usize> = seq
                    .iter()
                    .map(|&t| p.codec().decode(t).unwrap()[n])
                    .collect();
                product *= g.sequence_probability(&sub_seq).unwrap();
            }
            assert_abs_diff_eq!(joint, product, epsilon = 1e-12);
        }
    }

    #[test]
    fn factored_update_matches_per_factor_tracking() {
        let p = two_mess3();
        let g = mess3();
        let mut s = p.factored_initial();
        let mut lone = [g.initial_state(), g.initial_state()];
        for &tok in &[5usize, 2, 8, 0, 4] {
            s = p.factored_update(&s, tok).unwrap();
            let sub = p.codec().decode(tok).unwrap();
            for n in 0..2 {
                lone[n] = g.update_predictive(&lone[n], sub[n]).unwrap();
                for (a, b) in s.locals[n].vector.iter().zip(lone[n].vector.iter()) {
                    assert_abs_diff_eq!(a, b, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn joint_update_stays_on_product_manifold_when_independent() {
        let p = two_sns();
        let mut joint = p.joint_initial();
        let mut factored = p.factored_initial();
        for &tok in &[3usize, 1, 0, 3, 2] {
            let dist = p.joint_token_distribution(&joint).unwrap();
            if dist[tok] <= ZERO_PROB_TOL {
                continue;
            }
            joint = p.joint_update(&joint, tok).unwrap();
            factored = p.factored_update(&factored, tok).unwrap();
            let rebuilt = p.product_reconstruct(&factored);
            for (a, b) in joint.vector.iter().zip(rebuilt.vector.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-10);
            }
            assert!(p.total_correlation(&joint).unwrap() < 1e-10);
        }
    }

    #[test]
    fn chain_with_identical_variants_degenerates_to_independent() {
        let chain = ComposedProcess::conditional_chain(vec![
            vec![mess3()],
            vec![mess3(), mess3(), mess3()],
        ])
        .unwrap();
        let indep = two_mess3();
        for t in 0..9 {
            let a = chain.joint_operator(t).unwrap();
            let b = indep.joint_operator(t).unwrap();
            for (x, y) in a.iter().zip(b.iter()) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn chain_root_update_ignores_downstream_factors() {
        let p = table_two_chain();
        let g = make_mess3(Mess3Params { alpha: 0.60, x: 0.15 }).unwrap();
        let mut s = p.factored_initial();
        let mut root = g.initial_state();
        for &tok in &[17usize, 350, 101, 64] {
            s = p.factored_update(&s, tok).unwrap();
            let sub = p.codec().decode(tok).unwrap();
            root = g.update_predictive(&root, sub[0]).unwrap();
            for (a, b) in s.locals[0].vector.iter().zip(root.vector.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn chain_table_two_config_preserves_stochasticity() {
        let p = table_two_chain();
        assert_eq!(p.codec().n_tokens(), 432);
        // (sum_x T^(x)) (x 1_n) = (x 1_n); accumulate T^(x) 1 per token by
        // applying per-factor transposes through the row-action helper.
        let dims = p.factor_dims();
        let one = p.joint_right_one().clone();
        let mut acc = Array1::<f64>::zeros(one.len());
        for x in 0..p.codec().n_tokens() {
            let sub = p.codec().decode(x).unwrap();
            let mut v = one.clone();
            for n in 0..p.n_factors() {
                let op_t = p.factor_operator(n, &sub).t().to_owned();
                v = apply_factor_right(&v, &dims, n, &op_t);
            }
            acc += &v;
        }
        for (a, b) in acc.iter().zip(one.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn chain_joint_matches_factored_through_context() {
        let p = table_two_chain();
        let mut joint = p.joint_initial();
        let mut factored = p.factored_initial();
        for &tok in &[0usize, 431, 88, 217] {
            joint = p.joint_update(&joint, tok).unwrap();
            factored = p.factored_update(&factored, tok).unwrap();
            let rebuilt = p.product_reconstruct(&factored);
            for (a, b) in joint.vector.iter().zip(rebuilt.vector.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn chain_rejects_incomplete_variant_table() {
        let res = ComposedProcess::conditional_chain(vec![
            vec![mess3()],
            vec![mess3(), mess3()], // needs 3 variants
        ]);
        assert!(res.is_err());
    }

    #[test]
    fn noisy_epsilon_zero_equals_clean() {
        let base = two_mess3();
        let clean_ops: Vec<_> = (0..9).map(|t| base.joint_operator(t).unwrap()).collect();
        let noisy = ComposedProcess::noisy_channel(two_mess3(), 0.0).unwrap();
        for (t, clean) in clean_ops.iter().enumerate() {
            let op = noisy.joint_operator(t).unwrap();
            for (a, b) in op.iter().zip(clean.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn noisy_operators_sum_to_clean_net() {
        let clean = two_mess3();
        let mut net_clean = Array2::<f64>::zeros((9, 9));
        for t in 0..9 {
            net_clean += &**clean.joint_operator(t).as_ref().unwrap();
        }
        for &eps in &[0.1, 0.5, 1.0] {
            let noisy = ComposedProcess::noisy_channel(two_mess3(), eps).unwrap();
            let mut net = Array2::<f64>::zeros((9, 9));
            for t in 0..9 {
                net += &**noisy.joint_operator(t).as_ref().unwrap();
            }
            for (a, b) in net.iter().zip(net_clean.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn noisy_updates_leave_product_manifold() {
        let noisy = ComposedProcess::noisy_channel(two_mess3(), 0.5).unwrap();
        let s = noisy.joint_update(&noisy.joint_initial(), 0).unwrap();
        assert!(noisy.total_correlation(&s).unwrap() > 1e-6);
    }

    #[test]
    fn noisy_rejects_bad_epsilon_and_regime() {
        assert!(ComposedProcess::noisy_channel(two_mess3(), 1.5).is_err());
        let noisy = ComposedProcess::noisy_channel(two_mess3(), 0.1).unwrap();
        assert!(ComposedProcess::noisy_channel(noisy, 0.1).is_err());
        let chain = ComposedProcess::conditional_chain(vec![
            vec![mess3()],
            vec![mess3(), mess3(), mess3()],
        ])
        .unwrap();
        assert!(ComposedProcess::noisy_channel(chain, 0.1).is_err());
    }

    #[test]
    fn factored_update_rejects_noisy_regime() {
        let noisy = ComposedProcess::noisy_channel(two_mess3(), 0.1).unwrap();
        let s = noisy.factored_initial();
        assert!(noisy.factored_update(&s, 0).is_err());
    }

    #[test]
    fn reduced_state_of_product_returns_exact_slot() {
        let p = two_sns();
        let a = PredictiveState::new(arr1(&[0.3, 0.7]));
        let b = PredictiveState::new(arr1(&[0.9, 0.1]));
        let joint = p.product_reconstruct(&FactoredState {
            locals: vec![a.clone(), b.clone()],
        });
        let ra = p.reduced_state(&joint, 0);
        let rb = p.reduced_state(&joint, 1);
        for (x, y) in ra.vector.iter().zip(a.vector.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-14);
        }
        for (x, y) in rb.vector.iter().zip(b.vector.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-14);
        }
    }

    #[test]
    fn reduced_state_of_correlated_pair() {
        let p = two_sns();
        let joint = JointState {
            vector: arr1(&[0.5, 0.0, 0.0, 0.5]),
        };
        for n in 0..2 {
            let r = p.reduced_state(&joint, n);
            assert_abs_diff_eq!(r.vector[0], 0.5, epsilon = 1e-15);
            assert_abs_diff_eq!(r.vector[1], 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn total_correlation_values() {
        let p = two_sns();
        let prod = p.product_reconstruct(&FactoredState {
            locals: vec![
                PredictiveState::new(arr1(&[0.3, 0.7])),
                PredictiveState::new(arr1(&[0.6, 0.4])),
            ],
        });
        assert!(p.total_correlation(&prod).unwrap() < 1e-12);
        let corr = JointState {
            vector: arr1(&[0.5, 0.0, 0.0, 0.5]),
        };
        assert_abs_diff_eq!(
            p.total_correlation(&corr).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-12
        );
    }

    #[test]
    fn total_correlation_invariant_under_within_factor_relabeling() {
        let p = two_sns();
        let joint = JointState {
            vector: arr1(&[0.4, 0.1, 0.2, 0.3]),
        };
        // Swap factor 0's two latent basis states: (i1, i2) -> (1-i1, i2).
        let swapped = JointState {
            vector: arr1(&[0.2, 0.3, 0.4, 0.1]),
        };
        assert_abs_diff_eq!(
            p.total_correlation(&joint).unwrap(),
            p.total_correlation(&swapped).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn total_correlation_rejects_bloch_factors() {
        let p = five_factor();
        let s = p.joint_initial();
        assert!(matches!(
            p.total_correlation(&s),
            Err(Error::NonClassicalState { .. })
        ));
        // The Euclidean diagnostic still works there.
        assert!(p.product_manifold_distance(&s) < 1e-12);
    }

    #[test]
    fn embedding_lengths() {
        assert_eq!(five_factor().embedding_dim(), 10);
        assert_eq!(two_sns().embedding_dim(), 2);
    }

    #[test]
    fn embedding_of_two_sns_fills_a_square() {
        // Extreme per-factor beliefs land on the four corners of a square of
        // side sqrt(2) (the isometric image of the shifted product of
        // 1-simplices); interior beliefs stay inside it.
        let p = two_sns();
        let corner = 1.0 / std::f64::consts::SQRT_2;
        for (a, b) in [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)] {
            let s = FactoredState {
                locals: vec![
                    PredictiveState::new(arr1(&[a, 1.0 - a])),
                    PredictiveState::new(arr1(&[b, 1.0 - b])),
                ],
            };
            let e = p.factored_embed(&s);
            assert_abs_diff_eq!(e.vector[0].abs(), corner, epsilon = 1e-12);
            assert_abs_diff_eq!(e.vector[1].abs(), corner, epsilon = 1e-12);
        }
        let mid = p.factored_embed(&FactoredState {
            locals: vec![
                PredictiveState::new(arr1(&[0.25, 0.75])),
                PredictiveState::new(arr1(&[0.5, 0.5])),
            ],
        });
        assert!(mid.vector[0].abs() < corner && mid.vector[1].abs() < corner);
    }

    #[test]
    fn identical_locals_give_identical_embeddings() {
        let p = two_mess3();
        let s = p.factored_initial();
        let e1 = p.factored_embed(&s);
        let e2 = p.factored_embed(&s.clone());
        assert_eq!(e1, e2);
    }

    #[test]
    fn bases_are_orthonormal_with_leading_right_vector() {
        let p = five_factor();
        for (slot, basis) in p.factor_bases().iter().enumerate() {
            let b = &basis.rows;
            let gram = b.dot(&b.t());
            for i in 0..b.nrows() {
                for j in 0..b.ncols() {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(gram[[i, j]], expect, epsilon = 1e-10);
                }
            }
            let right = p.factor(slot).right_one();
            let aligned = b.row(0).dot(right) / basis.right_norm;
            assert_abs_diff_eq!(aligned, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn joint_to_factored_round_trips_product_states() {
        let p = five_factor();
        let locals = vec![
            PredictiveState::new(arr1(&[0.5, 0.3, 0.2])),
            PredictiveState::new(arr1(&[0.1, 0.1, 0.8])),
            PredictiveState::new(arr1(&[0.4, 0.4, 0.2])),
            PredictiveState::new(arr1(&[1.0, 0.3, -0.4])),
            PredictiveState::new(arr1(&[1.0, -0.2, 0.1])),
        ];
        let s = FactoredState { locals };
        let joint = p.product_reconstruct(&s);
        let emb = p.joint_to_factored(&joint);
        let back = p.reconstruct_from_embedding(&emb).unwrap();
        for (a, b) in joint.vector.iter().zip(back.vector.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
        assert_abs_diff_eq!(back.vector.dot(p.joint_right_one()), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn correlated_state_and_its_marginal_product_share_embedding() {
        let p = two_sns();
        let corr = JointState {
            vector: arr1(&[0.5, 0.0, 0.0, 0.5]),
        };
        let unif = JointState {
            vector: arr1(&[0.25, 0.25, 0.25, 0.25]),
        };
        let e1 = p.joint_to_factored(&corr);
        let e2 = p.joint_to_factored(&unif);
        for (a, b) in e1.vector.iter().zip(e2.vector.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn joint_to_factored_is_linear() {
        let p = two_mess3();
        let s1 = JointState {
            vector: Array1::from_shape_fn(9, |i| (i as f64 + 1.0) / 45.0),
        };
        let s2 = JointState {
            vector: Array1::from_shape_fn(9, |i| ((9 - i) as f64) / 45.0),
        };
        let a = 0.3;
        let mix = JointState {
            vector: &s1.vector * a + &s2.vector * (1.0 - a),
        };
        let lhs = p.joint_to_factored(&mix);
        let e1 = p.joint_to_factored(&s1);
        let e2 = p.joint_to_factored(&s2);
        for i in 0..lhs.vector.len() {
            assert_abs_diff_eq!(
                lhs.vector[i],
                a * e1.vector[i] + (1.0 - a) * e2.vector[i],
                epsilon = 1e-10
            );
        }
    }

    #[test]
    fn stationary_locals_reconstruct_joint_stationary() {
        let p = two_sns();
        let s = FactoredState {
            locals: vec![
                PredictiveState::new(sns().stationary().clone()),
                PredictiveState::new(sns().stationary().clone()),
            ],
        };
        let joint = p.product_reconstruct(&s);
        let flat = p.as_joint_ghmm().unwrap();
        for (a, b) in joint.vector.iter().zip(flat.stationary().iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn as_joint_ghmm_reproduces_sequence_probabilities() {
        let p = two_mess3();
        let flat = p.as_joint_ghmm().unwrap();
        for seq in [vec![], vec![0usize], vec![3, 8, 1], vec![2, 2, 2, 2]] {
            assert_abs_diff_eq!(
                p.sequence_probability(&seq).unwrap(),
                flat.sequence_probability(&seq).unwrap(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn correlated_starts_converge_toward_product_states() {
        // Product-preserving updates from an off-manifold start: the
        // projective renormalization is contractive, so the state should
        // approach the product manifold through a generic context.  Only the
        // qualitative trend is checked; no rate is asserted.
        let p = two_mess3();
        let mut s = JointState {
            vector: arr1(&[0.30, 0.02, 0.02, 0.02, 0.30, 0.02, 0.02, 0.02, 0.28]),
        };
        let start = p.product_manifold_distance(&s);
        assert!(start > 0.05, "start should be well off-manifold: {start}");
        let context = [0usize, 4, 8, 1, 5, 3, 0, 4, 8, 2, 6, 7];
        for &tok in &context {
            s = p.joint_update(&s, tok).unwrap();
        }
        let end = p.product_manifold_distance(&s);
        assert!(
            end < start / 10.0,
            "no contraction toward the product manifold: {start} -> {end}"
        );
    }

    #[test]
    fn fingerprint_distinguishes_processes() {
        assert_ne!(two_sns().fingerprint(), two_mess3().fingerprint());
        assert_eq!(two_sns().fingerprint(), two_sns().fingerprint());
        let noisy1 = ComposedProcess::noisy_channel(two_mess3(), 0.1).unwrap();
        let noisy2 = ComposedProcess::noisy_channel(two_mess3(), 0.2).unwrap();
        assert_ne!(noisy1.fingerprint(), noisy2.fingerprint());
    }
}
