//! Single-factor generalized hidden Markov models.
//!
//! A GHMM is a tuple of a token alphabet, a latent space `R^d`, an initial
//! row vector, and one `d x d` transition operator per token.  The net
//! operator `T = sum_x T^(x)` fixes a right vector `1` (`T 1 = 1`) that
//! integrates probability, and a stationary left vector `pi` (`pi T = pi`).
//! Sequence probabilities are operator products contracted between the
//! initial vector and `1`; conditioning on observed tokens updates a
//! normalized predictive vector.
//!
//! HMMs are the special case with nonnegative operators and `1` the all-ones
//! vector; the Bloch Walk generator below is a proper GHMM with signed
//! entries.

use std::collections::BTreeMap;

use ndarray::prelude::*;
use ndarray_linalg::{JobSvd, SVDDC};

use crate::{Error, Result};

/// Tolerance below which a token probability is treated as zero.
pub const ZERO_PROB_TOL: f64 = 1e-12;

/// Tolerance for structural invariants checked at construction time.
pub const VALIDATE_TOL: f64 = 1e-10;

/// Default cap on the number of contexts [`Ghmm::enumerate_states`] may visit.
pub const DEFAULT_ENUMERATION_CAP: u128 = 2_000_000;

/// Whether a generator is a classical HMM or a general signed GHMM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProcessKind {
    /// Nonnegative operators, all-ones right vector; states are probability
    /// distributions over hidden states.
    Hmm,
    /// Signed operators allowed; states live in an affine slice of `R^d`.
    Generalized,
}

/// A normalized predictive vector: everything a context implies about the
/// future, with `vector . right_one = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveState {
    pub vector: Array1<f64>,
}

impl PredictiveState {
    pub fn new(vector: Array1<f64>) -> Self {
        Self { vector }
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// A single-factor generalized hidden Markov model.
#[derive(Debug, Clone)]
pub struct Ghmm {
    alphabet_size: usize,
    dim: usize,
    initial: Array1<f64>,
    operators: Vec<Array2<f64>>,
    right_one: Array1<f64>,
    stationary: Array1<f64>,
    kind: ProcessKind,
}

impl Ghmm {
    /// Build a GHMM from its operators, validating the eigenstructure.
    ///
    /// The stationary vector is computed from the net operator: the left
    /// eigenvector at eigenvalue 1 is the null vector of `T' - I`, extracted
    /// from the smallest singular direction and normalized to `pi . 1 = 1`.
    pub fn new(
        operators: Vec<Array2<f64>>,
        initial: Array1<f64>,
        right_one: Array1<f64>,
        kind: ProcessKind,
    ) -> Result<Self> {
        if operators.is_empty() {
            return Err(Error::InvalidParameter("at least one token operator".into()));
        }
        let dim = initial.len();
        for (x, op) in operators.iter().enumerate() {
            if op.nrows() != dim || op.ncols() != dim {
                return Err(Error::ShapeMismatch(format!(
                    "operator {x} is {:?}, expected {dim}x{dim}",
                    op.dim()
                )));
            }
        }
        if right_one.len() != dim {
            return Err(Error::ShapeMismatch(format!(
                "right vector has length {}, expected {dim}",
                right_one.len()
            )));
        }

        let net = net_operator(&operators);
        let fixed = net.dot(&right_one);
        if max_abs_diff(&fixed, &right_one) > VALIDATE_TOL {
            return Err(Error::InvalidParameter(
                "net operator does not fix the right vector".into(),
            ));
        }
        let norm = initial.dot(&right_one);
        if (norm - 1.0).abs() > VALIDATE_TOL {
            return Err(Error::InvalidParameter(format!(
                "initial vector is not normalized: eta . 1 = {norm}"
            )));
        }

        let stationary = stationary_from_net(&net, &right_one)?;
        let replayed = stationary.dot(&net);
        if max_abs_diff(&replayed, &stationary) > VALIDATE_TOL {
            return Err(Error::InvalidParameter(
                "stationary vector is not fixed by the net operator".into(),
            ));
        }

        if kind == ProcessKind::Hmm {
            if right_one.iter().any(|&v| (v - 1.0).abs() > VALIDATE_TOL) {
                return Err(Error::InvalidParameter(
                    "HMM-kind requires the all-ones right vector".into(),
                ));
            }
            for (x, op) in operators.iter().enumerate() {
                if op.iter().any(|&v| v < -ZERO_PROB_TOL) {
                    return Err(Error::InvalidParameter(format!(
                        "HMM-kind requires nonnegative operators; operator {x} has a negative entry"
                    )));
                }
            }
        }

        Ok(Self {
            alphabet_size: operators.len(),
            dim,
            initial,
            operators,
            right_one,
            stationary,
            kind,
        })
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> ProcessKind {
        self.kind
    }

    pub fn initial(&self) -> &Array1<f64> {
        &self.initial
    }

    pub fn right_one(&self) -> &Array1<f64> {
        &self.right_one
    }

    pub fn stationary(&self) -> &Array1<f64> {
        &self.stationary
    }

    pub fn operator(&self, token: usize) -> Result<&Array2<f64>> {
        self.operators
            .get(token)
            .ok_or_else(|| Error::InvalidParameter(format!("token {token} out of range")))
    }

    pub fn operators(&self) -> &[Array2<f64>] {
        &self.operators
    }

    pub fn net_operator(&self) -> Array2<f64> {
        net_operator(&self.operators)
    }

    pub fn initial_state(&self) -> PredictiveState {
        PredictiveState::new(self.initial.clone())
    }

    pub fn stationary_state(&self) -> PredictiveState {
        PredictiveState::new(self.stationary.clone())
    }

    /// Exact probability of a token sequence: the operator product of the
    /// sequence contracted between the initial vector and the right vector.
    /// The empty sequence has probability 1.
    pub fn sequence_probability(&self, seq: &[usize]) -> Result<f64> {
        let mut v = self.initial.clone();
        for &x in seq {
            v = v.dot(self.operator(x)?);
        }
        Ok(v.dot(&self.right_one))
    }

    /// Bayesian update of a predictive state on one observed token:
    /// `s T^(x)` renormalized so the result contracts to 1.
    pub fn update_predictive(&self, s: &PredictiveState, x: usize) -> Result<PredictiveState> {
        let pushed = s.vector.dot(self.operator(x)?);
        let prob = pushed.dot(&self.right_one);
        if prob <= ZERO_PROB_TOL {
            return Err(Error::ZeroProbabilityToken {
                token: x,
                prob,
                tol: ZERO_PROB_TOL,
            });
        }
        Ok(PredictiveState::new(pushed / prob))
    }

    /// One-step conditional distribution: entry `x` is `s T^(x) 1`.
    pub fn next_token_distribution(&self, s: &PredictiveState) -> Array1<f64> {
        Array1::from_iter(
            self.operators
                .iter()
                .map(|op| s.vector.dot(op).dot(&self.right_one)),
        )
    }

    /// Breadth-first enumeration of all reachable predictive states for
    /// contexts up to `max_len`, skipping zero-probability branches.  The
    /// empty context maps to the initial state.
    pub fn enumerate_states(
        &self,
        max_len: usize,
        cap: u128,
    ) -> Result<BTreeMap<Vec<usize>, PredictiveState>> {
        let mut bound: u128 = 0;
        let mut level: u128 = 1;
        for _ in 0..=max_len {
            bound += level;
            level = level.saturating_mul(self.alphabet_size as u128);
            if bound > cap {
                return Err(Error::EnumerationTooLarge {
                    requested: bound,
                    cap,
                });
            }
        }

        let mut out = BTreeMap::new();
        let mut frontier = vec![(Vec::new(), self.initial_state())];
        out.insert(Vec::new(), self.initial_state());
        for _ in 0..max_len {
            let mut next = Vec::new();
            for (ctx, state) in &frontier {
                let dist = self.next_token_distribution(state);
                for x in 0..self.alphabet_size {
                    if dist[x] <= ZERO_PROB_TOL {
                        continue;
                    }
                    let updated = self.update_predictive(state, x)?;
                    let mut ctx2 = ctx.clone();
                    ctx2.push(x);
                    out.insert(ctx2.clone(), updated.clone());
                    next.push((ctx2, updated));
                }
            }
            frontier = next;
        }
        Ok(out)
    }
}

fn net_operator(operators: &[Array2<f64>]) -> Array2<f64> {
    let mut net = operators[0].clone();
    for op in &operators[1..] {
        net += op;
    }
    net
}

fn max_abs_diff(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Left eigenvector of `net` at eigenvalue 1, normalized to `pi . 1 = 1`.
///
/// Extracted as the null vector of `net' - I` via SVD; the smallest singular
/// direction is the eigenvector, and normalization fixes scale and sign.
fn stationary_from_net(net: &Array2<f64>, right_one: &Array1<f64>) -> Result<Array1<f64>> {
    let d = net.nrows();
    let mut m = net.t().to_owned();
    for i in 0..d {
        m[[i, i]] -= 1.0;
    }
    let (_, sigma, vt) = m.svddc(JobSvd::Some)?;
    let vt = vt.ok_or_else(|| Error::Linalg("SVD returned no right vectors".into()))?;
    let smallest = sigma.len() - 1;
    if sigma[smallest] > 1e-8 {
        return Err(Error::InvalidParameter(format!(
            "net operator has no eigenvalue-1 left eigenvector (residual {:.3e})",
            sigma[smallest]
        )));
    }
    let v = vt.row(smallest).to_owned();
    let scale = v.dot(right_one);
    if scale.abs() < 1e-12 {
        return Err(Error::InvalidParameter(
            "stationary eigenvector is orthogonal to the right vector".into(),
        ));
    }
    Ok(v / scale)
}

// ---------------------------------------------------------------------------
// Process zoo
// ---------------------------------------------------------------------------

/// Parameters of the Mess3 process: `alpha` in (0,1), `x` in (0, 0.5], with
/// dependent quantities `beta = (1-alpha)/2` and `y = 1-2x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mess3Params {
    pub alpha: f64,
    pub x: f64,
}

impl Mess3Params {
    pub fn beta(&self) -> f64 {
        (1.0 - self.alpha) / 2.0
    }

    pub fn y(&self) -> f64 {
        1.0 - 2.0 * self.x
    }
}

/// Parameters of the Bloch Walk process: `alpha > 0`, `beta` real, with
/// dependent `gamma = 1 / (2 sqrt(alpha^2 + beta^2))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlochWalkParams {
    pub alpha: f64,
    pub beta: f64,
}

impl BlochWalkParams {
    pub fn gamma(&self) -> f64 {
        1.0 / (2.0 * (self.alpha * self.alpha + self.beta * self.beta).sqrt())
    }
}

/// Parameters of the simple nonunifilar source: `p`, `q` in (0,1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnsParams {
    pub p: f64,
    pub q: f64,
}

/// Three-token, three-state HMM with a uniform stationary distribution.
pub fn make_mess3(params: Mess3Params) -> Result<Ghmm> {
    let Mess3Params { alpha, x } = params;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "mess3 alpha must be in (0,1), got {alpha}"
        )));
    }
    if !(x > 0.0 && x <= 0.5) {
        return Err(Error::InvalidParameter(format!(
            "mess3 x must be in (0, 0.5], got {x}"
        )));
    }
    let (a, b, y) = (alpha, params.beta(), params.y());
    let t0 = arr2(&[
        [a * y, b * x, b * x],
        [a * x, b * y, b * x],
        [a * x, b * x, b * y],
    ]);
    let t1 = arr2(&[
        [b * y, a * x, b * x],
        [b * x, a * y, b * x],
        [b * x, a * x, b * y],
    ]);
    let t2 = arr2(&[
        [b * y, b * x, a * x],
        [b * x, b * y, a * x],
        [b * x, b * x, a * y],
    ]);
    let third = 1.0 / 3.0;
    Ghmm::new(
        vec![t0, t1, t2],
        arr1(&[third, third, third]),
        Array1::ones(3),
        ProcessKind::Hmm,
    )
}

/// Four-token, three-dimensional GHMM acting on the `(1, b_x, b_z)` Bloch
/// coordinates of a qubit; the unused `y` component is projected out.
pub fn make_bloch_walk(params: BlochWalkParams) -> Result<Ghmm> {
    let BlochWalkParams { alpha, beta } = params;
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "bloch walk alpha must be > 0, got {alpha}"
        )));
    }
    let g2 = params.gamma() * params.gamma();
    let c = 2.0 * alpha * beta * g2;
    let d = (alpha * alpha - beta * beta) * g2;
    let q = 0.25;
    let t0 = arr2(&[[q, 0.0, c], [0.0, d, 0.0], [c, 0.0, q]]);
    let t1 = arr2(&[[q, 0.0, -c], [0.0, d, 0.0], [-c, 0.0, q]]);
    let t2 = arr2(&[[q, c, 0.0], [c, q, 0.0], [0.0, 0.0, d]]);
    let t3 = arr2(&[[q, -c, 0.0], [-c, q, 0.0], [0.0, 0.0, d]]);
    Ghmm::new(
        vec![t0, t1, t2, t3],
        arr1(&[1.0, 0.0, 0.0]),
        arr1(&[1.0, 0.0, 0.0]),
        ProcessKind::Generalized,
    )
}

/// Two-token, two-state nonunifilar HMM with stationary `[q, p] / (p + q)`.
pub fn make_sns(params: SnsParams) -> Result<Ghmm> {
    let SnsParams { p, q } = params;
    if !(p > 0.0 && p < 1.0 && q > 0.0 && q < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "sns p, q must be in (0,1), got p={p} q={q}"
        )));
    }
    let t0 = arr2(&[[0.0, 0.0], [q, 0.0]]);
    let t1 = arr2(&[[1.0 - p, p], [0.0, 1.0 - q]]);
    let s = p + q;
    Ghmm::new(
        vec![t0, t1],
        arr1(&[q / s, p / s]),
        Array1::ones(2),
        ProcessKind::Hmm,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn mess3_default() -> Ghmm {
        make_mess3(Mess3Params { alpha: 0.6, x: 0.15 }).unwrap()
    }

    fn bloch_default() -> Ghmm {
        make_bloch_walk(BlochWalkParams { alpha: 1.0, beta: 3.0 }).unwrap()
    }

    fn sns_default() -> Ghmm {
        make_sns(SnsParams { p: 0.5, q: 0.5 }).unwrap()
    }

    #[test]
    fn mess3_operator_entries() {
        let g = mess3_default();
        let t0 = g.operator(0).unwrap();
        assert_abs_diff_eq!(t0[[0, 0]], 0.42, epsilon = 1e-15);
        assert_abs_diff_eq!(t0[[0, 1]], 0.03, epsilon = 1e-15);
        assert_abs_diff_eq!(t0[[0, 2]], 0.03, epsilon = 1e-15);
    }

    #[test]
    fn mess3_stationary_uniform() {
        let g = mess3_default();
        for &v in g.stationary() {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-12);
        }
        let g2 = make_mess3(Mess3Params { alpha: 0.79, x: 0.11 }).unwrap();
        for &v in g2.stationary() {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn mess3_zero_diagonal_at_x_half() {
        // y = 1 - 2x vanishes at x = 0.5, so each operator's own-symbol
        // diagonal entry is zero.
        let g = make_mess3(Mess3Params { alpha: 0.6, x: 0.5 }).unwrap();
        for z in 0..3 {
            assert_abs_diff_eq!(g.operator(z).unwrap()[[z, z]], 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn mess3_rejects_bad_params() {
        assert!(make_mess3(Mess3Params { alpha: 0.0, x: 0.15 }).is_err());
        assert!(make_mess3(Mess3Params { alpha: 1.0, x: 0.15 }).is_err());
        assert!(make_mess3(Mess3Params { alpha: 0.6, x: 0.0 }).is_err());
        assert!(make_mess3(Mess3Params { alpha: 0.6, x: 0.6 }).is_err());
    }

    #[test]
    fn bloch_walk_operator_entries() {
        let g = bloch_default();
        // gamma^2 = 1/40 at alpha=1, beta=3.
        let t0 = g.operator(0).unwrap();
        assert_abs_diff_eq!(t0[[0, 2]], 0.15, epsilon = 1e-15);
        assert_abs_diff_eq!(t0[[1, 1]], -0.2, epsilon = 1e-15);
        assert_eq!(g.stationary().as_slice().unwrap(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn bloch_walk_uniform_from_initial() {
        let g = bloch_default();
        let dist = g.next_token_distribution(&g.initial_state());
        for &p in &dist {
            assert_abs_diff_eq!(p, 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn bloch_walk_rejects_nonpositive_alpha() {
        assert!(make_bloch_walk(BlochWalkParams { alpha: 0.0, beta: 1.0 }).is_err());
        assert!(make_bloch_walk(BlochWalkParams { alpha: -1.0, beta: 1.0 }).is_err());
    }

    #[test]
    fn sns_matrices_and_stationary() {
        let g = sns_default();
        assert_eq!(
            g.operator(0).unwrap(),
            &arr2(&[[0.0, 0.0], [0.5, 0.0]])
        );
        assert_eq!(
            g.operator(1).unwrap(),
            &arr2(&[[0.5, 0.5], [0.0, 0.5]])
        );
        assert_abs_diff_eq!(g.stationary()[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(g.stationary()[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn sns_token_zero_probability_quarter() {
        let g = sns_default();
        assert_abs_diff_eq!(g.sequence_probability(&[0]).unwrap(), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn sns_rejects_bad_params() {
        assert!(make_sns(SnsParams { p: 0.0, q: 0.5 }).is_err());
        assert!(make_sns(SnsParams { p: 0.5, q: 1.0 }).is_err());
    }

    #[test]
    fn sequence_probability_empty_and_single() {
        let g = mess3_default();
        assert_abs_diff_eq!(g.sequence_probability(&[]).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            g.sequence_probability(&[0]).unwrap(),
            1.0 / 3.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn sequence_probabilities_sum_to_one_length_two() {
        for g in [mess3_default(), bloch_default(), sns_default()] {
            let k = g.alphabet_size();
            let mut total = 0.0;
            for a in 0..k {
                for b in 0..k {
                    total += g.sequence_probability(&[a, b]).unwrap();
                }
            }
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn sequence_probability_rejects_out_of_range_token() {
        let g = sns_default();
        assert!(g.sequence_probability(&[2]).is_err());
    }

    #[test]
    fn update_mess3_from_uniform() {
        let g = mess3_default();
        let s = g.update_predictive(&g.stationary_state(), 0).unwrap();
        assert_abs_diff_eq!(s.vector[0], 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(s.vector[1], 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(s.vector[2], 0.2, epsilon = 1e-12);
    }

    #[test]
    fn update_sns_token_zero_reveals_state() {
        // s T^(0) = [0.25, 0] before normalization: token 0 is emitted only on
        // the transition into the first hidden state.
        let g = sns_default();
        let s = g
            .update_predictive(&PredictiveState::new(arr1(&[0.5, 0.5])), 0)
            .unwrap();
        assert_abs_diff_eq!(s.vector[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.vector[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn update_zero_probability_token_errors() {
        // From hidden state 0 the SNS cannot emit token 0.
        let g = sns_default();
        let res = g.update_predictive(&PredictiveState::new(arr1(&[1.0, 0.0])), 0);
        assert!(matches!(res, Err(Error::ZeroProbabilityToken { .. })));
    }

    #[test]
    fn update_deterministic_token_is_identity_when_prob_one() {
        // From SNS state [0, 1]: after token 0 the state is [1, 0], and from
        // there token 1 keeps probability mass normalized with no rescaling
        // drift.
        let g = sns_default();
        let s = g
            .update_predictive(&PredictiveState::new(arr1(&[0.0, 1.0])), 0)
            .unwrap();
        assert_abs_diff_eq!(s.vector.dot(g.right_one()), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn next_token_distribution_sums_to_one() {
        for g in [mess3_default(), bloch_default(), sns_default()] {
            let mut s = g.initial_state();
            for x in 0..g.alphabet_size() {
                let dist = g.next_token_distribution(&s);
                assert_abs_diff_eq!(dist.sum(), 1.0, epsilon = 1e-10);
                if dist[x] > ZERO_PROB_TOL {
                    s = g.update_predictive(&s, x).unwrap();
                }
            }
        }
    }

    #[test]
    fn mess3_next_token_distribution_uniform_at_stationary() {
        let g = mess3_default();
        let dist = g.next_token_distribution(&g.stationary_state());
        for &p in &dist {
            assert_abs_diff_eq!(p, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn chain_rule_matches_operator_product() {
        // P(wx) = P(w) * P(x | w) for every context w up to length 3.
        for g in [mess3_default(), bloch_default(), sns_default()] {
            let states = g.enumerate_states(3, DEFAULT_ENUMERATION_CAP).unwrap();
            for (ctx, state) in &states {
                let pw = g.sequence_probability(ctx).unwrap();
                let dist = g.next_token_distribution(state);
                for x in 0..g.alphabet_size() {
                    let mut wx = ctx.clone();
                    wx.push(x);
                    let pwx = g.sequence_probability(&wx).unwrap();
                    assert_abs_diff_eq!(pwx, pw * dist[x], epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn enumerate_depth_zero_is_initial_only() {
        let g = mess3_default();
        let states = g.enumerate_states(0, DEFAULT_ENUMERATION_CAP).unwrap();
        assert_eq!(states.len(), 1);
        assert_eq!(states[&Vec::new()].vector, *g.initial());
    }

    #[test]
    fn enumerate_sns_states_in_simplex() {
        let g = sns_default();
        let states = g.enumerate_states(2, DEFAULT_ENUMERATION_CAP).unwrap();
        for state in states.values() {
            assert_abs_diff_eq!(state.vector.sum(), 1.0, epsilon = 1e-10);
            for &v in &state.vector {
                assert!((-1e-12..=1.0 + 1e-12).contains(&v));
            }
        }
    }

    #[test]
    fn enumerate_mess3_depth_three_counts_and_distinct() {
        let g = mess3_default();
        let states = g.enumerate_states(3, DEFAULT_ENUMERATION_CAP).unwrap();
        assert_eq!(states.len(), 1 + 3 + 9 + 27);
        let vecs: Vec<_> = states.values().collect();
        for i in 0..vecs.len() {
            for j in (i + 1)..vecs.len() {
                let d: f64 = vecs[i]
                    .vector
                    .iter()
                    .zip(vecs[j].vector.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                assert!(d.sqrt() > 1e-12, "states {i} and {j} coincide");
            }
        }
    }

    #[test]
    fn enumerate_respects_cap() {
        let g = mess3_default();
        assert!(matches!(
            g.enumerate_states(10, 100),
            Err(Error::EnumerationTooLarge { .. })
        ));
    }

    #[test]
    fn update_preserves_normalization() {
        for g in [mess3_default(), bloch_default(), sns_default()] {
            let states = g.enumerate_states(4, DEFAULT_ENUMERATION_CAP).unwrap();
            for state in states.values() {
                assert_abs_diff_eq!(state.vector.dot(g.right_one()), 1.0, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn stationary_fixed_by_weighted_updates() {
        for g in [mess3_default(), bloch_default(), sns_default()] {
            let pi = g.stationary_state();
            let dist = g.next_token_distribution(&pi);
            let mut mixed = Array1::<f64>::zeros(g.dim());
            for x in 0..g.alphabet_size() {
                if dist[x] <= ZERO_PROB_TOL {
                    continue;
                }
                let s = g.update_predictive(&pi, x).unwrap();
                mixed += &(s.vector * dist[x]);
            }
            for (a, b) in mixed.iter().zip(g.stationary().iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-8);
            }
        }
    }
}
